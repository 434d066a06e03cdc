use asn_rtf::covariance::{classify, estimate, sample_covariance, spp};
use asn_rtf::estimators::rtf_cw;
use asn_rtf::metrics::{hermitian_angle, snr_db};
use asn_rtf::scene::{mix_at_snr, oracle_covariances, random_scene, sample_frames, SceneParams};
use asn_rtf::stft::StftParams;
use asn_rtf::{CMatrix, Complex64, NodeLayout};

fn scene_with(frames: usize, bins: usize, seed: u64) -> asn_rtf::scene::SceneSpec {
    let params = SceneParams {
        frames,
        ..Default::default()
    };
    random_scene(
        &NodeLayout::default_asn(),
        StftParams::for_bins(bins, 16_000),
        &params,
        seed,
    )
    .unwrap()
}

#[test]
fn speech_and_noise_are_uncorrelated() {
    let scene = scene_with(5000, 8, 21);
    let oracle = oracle_covariances(&scene);
    let s = sample_frames(&scene).unwrap();
    let m = scene.layout.num_mics();
    for k in 0..scene.bins() {
        let mut cross = CMatrix::zeros(m, m);
        let mut count = 0;
        for l in (0..scene.frames).filter(|&l| scene.speech_gating[l]) {
            let x = s.x.snapshot(k, l);
            let v = s.v.snapshot(k, l);
            cross = cross.add(&CMatrix::outer(&x, &v, 1.0));
            count += 1;
        }
        let norm = cross.scale(1.0 / count as f64).frobenius_norm();
        let bound = 0.05 * (oracle.rx[k].trace() * oracle.rv[k].trace()).sqrt();
        assert!(norm < bound, "bin {k}: {norm} vs {bound}");
    }
}

#[test]
fn noisy_covariance_error_shrinks_like_inverse_root_frames() {
    let mean_error = |frames: usize| {
        let scene = scene_with(frames, 16, 5);
        let oracle = oracle_covariances(&scene);
        let s = sample_frames(&scene).unwrap();
        let speech = &scene.speech_gating;
        (0..scene.bins())
            .map(|k| {
                let (ry, _) = sample_covariance(&s.y, k, |l| speech[l]);
                ry.sub(&oracle.ry[k]).frobenius_norm() / oracle.ry[k].frobenius_norm()
            })
            .sum::<f64>()
            / scene.bins() as f64
    };
    let coarse = mean_error(500);
    let fine = mean_error(5000);
    // a tenfold increase in frames should cut the error by about sqrt(10)
    assert!(
        fine < coarse / 2.0 && fine > coarse / 5.0,
        "{coarse} -> {fine}"
    );
}

#[test]
fn mixing_hits_the_requested_snr() {
    let scene = scene_with(400, 16, 8);
    let s = sample_frames(&scene).unwrap();
    let active = &scene.speech_gating;
    for target in [-5.0, 0.0, 5.0] {
        let mix = mix_at_snr(&s.x, &s.v, target, 0, Some(active)).unwrap();
        let sx = s.x.channel_power_masked(0, active);
        let sv = mix.v.channel_power_masked(0, active);
        let measured = 10.0 * (sx / sv).log10();
        assert!((measured - target).abs() < 1e-9, "{measured} vs {target}");
    }
    let mix = mix_at_snr(&s.x, &s.v, 3.0, 0, None).unwrap();
    assert!((snr_db(&s.x, &mix.v, 0).unwrap() - 3.0).abs() < 1e-9);
}

#[test]
fn spp_labels_follow_speech_gaps() {
    let scene = scene_with(1000, 64, 13);
    let s = sample_frames(&scene).unwrap();
    let mix = mix_at_snr(&s.x, &s.v, 20.0, 0, Some(&scene.speech_gating)).unwrap();
    let layout = &scene.layout;
    let p = spp(&mix.y, &layout.first_mics(), layout).unwrap();
    let labels = classify(&p, 0.5).unwrap();
    let agreement = labels.agreement(&s.labels);
    assert!(agreement >= 0.9, "agreement {agreement}");
}

#[test]
fn cw_angle_decreases_with_more_frames() {
    let mean_angle = |frames: usize| {
        (0..20u64)
            .map(|seed| {
                let scene = scene_with(frames, 4, 300 + seed);
                let s = sample_frames(&scene).unwrap();
                let cov = estimate(&s.y, &s.labels).unwrap();
                (0..scene.bins())
                    .map(|k| {
                        let est = rtf_cw(&cov.ry[k], &cov.rv[k], &scene.layout).unwrap();
                        hermitian_angle(&scene.h[k], &est.h_hat).unwrap()
                    })
                    .sum::<f64>()
                    / scene.bins() as f64
            })
            .sum::<f64>()
            / 20.0
    };
    let short = mean_angle(100);
    let long = mean_angle(1000);
    assert!(long < short, "{short} -> {long}");
}

#[test]
fn gating_all_off_gives_zero_speech() {
    let params = SceneParams {
        frames: 40,
        segment_frames: 40,
        ..Default::default()
    };
    let scene = random_scene(
        &NodeLayout::default_asn(),
        StftParams::for_bins(3, 16_000),
        &params,
        1,
    )
    .unwrap();
    assert!(scene.speech_gating.iter().all(|g| !g));
    let s = sample_frames(&scene).unwrap();
    for c in 0..s.x.channels() {
        for k in 0..3 {
            assert!(s
                .x
                .series(c, k)
                .iter()
                .all(|z| *z == Complex64::new(0.0, 0.0)));
        }
    }
}
