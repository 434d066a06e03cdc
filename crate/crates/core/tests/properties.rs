use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use asn_rtf::beamformer::{apply, mvdr, mvdr_weights, BeamformerWeights};
use asn_rtf::covariance::{block_diagonal_projection, estimate, FrameLabels};
use asn_rtf::estimators::{
    ods_gradient, ods_minimize, ods_starts, rtf_biased, rtf_cw, rtf_cw_d, rtf_ods, OdsOptions,
};
use asn_rtf::linalg::{eigh, inner, vec_norm};
use asn_rtf::metrics::{delta_snr, hermitian_angle, Weighting};
use asn_rtf::scene::{mix_at_snr, oracle_covariances, random_scene, sample_frames, SceneParams};
use asn_rtf::stft::{analyze, SpectrogramTensor, StftParams};
use asn_rtf::{seed, CMatrix, Complex64, HermitianMatrix, NodeLayout};

fn cgauss(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn random_vec(m: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = seed::rng(seed);
    (0..m).map(|_| cgauss(&mut rng)).collect()
}

fn random_pd(m: usize, seed: u64) -> HermitianMatrix {
    let mut rng = seed::rng(seed);
    let b = CMatrix::from_fn(m, m, |_, _| cgauss(&mut rng));
    HermitianMatrix::symmetrize(b.matmul(&b.adjoint())).add_diagonal(0.1)
}

fn layout_strategy(min_nodes: usize) -> impl Strategy<Value = NodeLayout> {
    prop::collection::vec(1usize..=3, min_nodes..=4)
        .prop_flat_map(|sizes| {
            let m: usize = sizes.iter().sum();
            (Just(sizes), 0..m)
        })
        .prop_map(|(sizes, r)| NodeLayout::new(sizes, r).unwrap())
}

fn noisy_ry(layout: &NodeLayout, seed: u64) -> (Vec<Complex64>, HermitianMatrix, HermitianMatrix) {
    let m = layout.num_mics();
    let h = random_vec(m, seed);
    let rv = random_pd(m, seed ^ 0x55);
    let ry = HermitianMatrix::outer(&h, 2.0).add(&rv);
    (h, ry, rv)
}

fn spectrum(channels: usize, bins: usize, frames: usize, seed: u64) -> SpectrogramTensor {
    let mut rng = seed::rng(seed);
    let mut t =
        SpectrogramTensor::zeros(channels, bins, frames, StftParams::for_bins(bins, 16_000));
    for c in 0..channels {
        for k in 0..bins {
            for z in t.series_mut(c, k) {
                *z = cgauss(&mut rng);
            }
        }
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn estimates_pin_the_reference_entry(layout in layout_strategy(3), s in any::<u64>()) {
        let (_, ry, rv) = noisy_ry(&layout, s);
        let r = layout.ref_index();
        let estimates = [
            rtf_biased(&ry, &layout).unwrap(),
            rtf_cw(&ry, &rv, &layout).unwrap(),
            rtf_cw_d(&ry, &rv, &layout).unwrap(),
            rtf_ods(&ry, &layout, &OdsOptions { starts: 2, ..Default::default() }).unwrap(),
        ];
        for e in estimates {
            prop_assert_eq!(e.h_hat[r], Complex64::new(1.0, 0.0));
            prop_assert!(e.h_hat.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        }
    }

    #[test]
    fn estimates_ignore_positive_scaling(layout in layout_strategy(3), s in any::<u64>(), beta in 0.01f64..100.0) {
        let (_, ry, rv) = noisy_ry(&layout, s);
        let (ry2, rv2) = (ry.scale(beta), rv.scale(beta));
        let opts = OdsOptions { starts: 1, ..Default::default() };
        let pairs = [
            (rtf_biased(&ry, &layout).unwrap(), rtf_biased(&ry2, &layout).unwrap()),
            (rtf_cw(&ry, &rv, &layout).unwrap(), rtf_cw(&ry2, &rv2, &layout).unwrap()),
            (rtf_cw_d(&ry, &rv, &layout).unwrap(), rtf_cw_d(&ry2, &rv2, &layout).unwrap()),
        ];
        // ODS only has an attained minimum when the inter-node part is rank one
        let rv_blocks = block_diagonal_projection(&rv, &layout).unwrap();
        let ry_model = ry.sub(&rv).add(&rv_blocks);
        let ods = (
            rtf_ods(&ry_model, &layout, &opts).unwrap(),
            rtf_ods(&ry_model.scale(beta), &layout, &opts).unwrap(),
        );
        let pairs = pairs.into_iter().chain([ods]);
        for (a, b) in pairs {
            prop_assert!(hermitian_angle(&a.h_hat, &b.h_hat).unwrap() < 1e-6);
        }
    }

    #[test]
    fn cw_with_identity_noise_is_biased(layout in layout_strategy(2), s in any::<u64>()) {
        let (_, ry, _) = noisy_ry(&layout, s);
        let eye = HermitianMatrix::identity(layout.num_mics());
        let a = rtf_cw(&ry, &eye, &layout).unwrap().h_hat;
        let b = rtf_biased(&ry, &layout).unwrap().h_hat;
        let diff: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        prop_assert!(vec_norm(&diff) <= 1e-12 * vec_norm(&b));
    }

    #[test]
    fn cw_d_is_cw_on_the_projection(layout in layout_strategy(2), s in any::<u64>()) {
        let (_, ry, rv) = noisy_ry(&layout, s);
        let a = rtf_cw_d(&ry, &rv, &layout).unwrap().h_hat;
        let projected = block_diagonal_projection(&rv, &layout).unwrap();
        let b = rtf_cw(&ry, &projected, &layout).unwrap().h_hat;
        let diff: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        prop_assert!(vec_norm(&diff) < 1e-10 * vec_norm(&b).max(1.0));
    }

    #[test]
    fn converged_ods_is_stationary(layout in layout_strategy(3), s in any::<u64>()) {
        let (_, ry, _) = noisy_ry(&layout, s);
        let mask = layout.selection_mask();
        let opts = OdsOptions { starts: 2, ..Default::default() };
        for start in ods_starts(&ry, &mask, &opts).unwrap() {
            let sol = ods_minimize(&ry, &mask, &start, &opts);
            if !sol.converged {
                continue;
            }
            // stationarity in the internally normalized units
            let scale: f64 = (0..ry.dim())
                .flat_map(|i| (0..ry.dim()).map(move |j| (i, j)))
                .filter(|&(i, j)| mask.get(i, j))
                .map(|(i, j)| ry[(i, j)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            let h: Vec<Complex64> = sol.h_prime.iter().map(|z| z / scale.sqrt()).collect();
            let g = ods_gradient(&h, &ry.scale(1.0 / scale), &mask);
            let residual = vec_norm(&g) / 2.0;
            prop_assert!(residual <= opts.tol * (1.0 + vec_norm(&h).powi(3)) * (1.0 + 1e-6));
        }
    }

    #[test]
    fn mvdr_passes_the_target_unchanged(m in 2usize..7, s in any::<u64>()) {
        let h = random_vec(m, s);
        let rv = random_pd(m, s ^ 1);
        let w = mvdr(std::slice::from_ref(&h), &[rv]).unwrap();
        let mut spec = SpectrogramTensor::zeros(m, 1, 8, StftParams::for_bins(1, 16_000));
        let src = random_vec(8, s ^ 2);
        for (c, hc) in h.iter().enumerate() {
            for (l, sl) in src.iter().enumerate() {
                spec.set(c, 0, l, hc * sl);
            }
        }
        let z = apply(&w, &spec).unwrap();
        for (l, sl) in src.iter().enumerate() {
            prop_assert!((z.get(0, 0, l) - sl).norm() <= 1e-10 * sl.norm().max(1.0));
        }
    }

    #[test]
    fn mvdr_beats_constrained_perturbations(m in 2usize..6, s in any::<u64>(), t in -1.0f64..1.0) {
        let h = random_vec(m, s);
        let rv = random_pd(m, s ^ 3);
        let w = mvdr_weights(&h, &rv).unwrap();
        // any u with u^H h = 0 keeps the constraint
        let mut u = random_vec(m, s ^ 4);
        let proj = inner(&h, &u) / inner(&h, &h);
        for (ui, hi) in u.iter_mut().zip(&h) {
            *ui -= proj * hi;
        }
        let other: Vec<Complex64> = w.iter().zip(&u).map(|(a, b)| a + b * t).collect();
        let power = |v: &[Complex64]| inner(v, &rv.mul_vec(v)).re;
        prop_assert!(power(&w) <= power(&other) * (1.0 + 1e-12));
    }

    #[test]
    fn hermitian_angle_ignores_complex_scaling(m in 2usize..8, s in any::<u64>(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        prop_assume!(re.abs() + im.abs() > 1e-3);
        let a = random_vec(m, s);
        let b = random_vec(m, s ^ 5);
        let c = Complex64::new(re, im);
        let scaled: Vec<Complex64> = b.iter().map(|z| z * c).collect();
        let x = hermitian_angle(&a, &b).unwrap();
        let y = hermitian_angle(&a, &scaled).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn delta_snr_ignores_filter_gain(s in any::<u64>(), gain in 0.01f64..100.0) {
        let x = spectrum(3, 33, 20, s);
        let v = spectrum(3, 33, 20, s ^ 6);
        let w = BeamformerWeights { w: (0..33).map(|k| random_vec(3, s ^ k as u64)).collect() };
        let scaled = BeamformerWeights {
            w: w.w.iter().map(|wk| wk.iter().map(|z| z * gain).collect()).collect(),
        };
        for weighting in [Weighting::Broadband, Weighting::Intelligibility] {
            let a = delta_snr(&apply(&w, &x).unwrap(), &apply(&w, &v).unwrap(), &x, &v, weighting).unwrap();
            let b = delta_snr(&apply(&scaled, &x).unwrap(), &apply(&scaled, &v).unwrap(), &x, &v, weighting).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_is_idempotent_and_shrinks(layout in layout_strategy(1), s in any::<u64>()) {
        let r = random_pd(layout.num_mics(), s);
        let p = block_diagonal_projection(&r, &layout).unwrap();
        let pp = block_diagonal_projection(&p, &layout).unwrap();
        prop_assert_eq!(&p, &pp);
        prop_assert!(p.frobenius_norm() <= r.frobenius_norm());
    }

    #[test]
    fn sample_covariances_are_psd(s in any::<u64>(), frames in 4usize..40) {
        let y = spectrum(4, 3, frames, s);
        let labels = FrameLabels::from_gating(3, &(0..frames).map(|l| l % 2 == 0).collect::<Vec<_>>());
        let cov = estimate(&y, &labels).unwrap();
        for r in cov.ry.iter().chain(&cov.rv) {
            let e = eigh(r).unwrap();
            let scale = r.trace().max(1.0);
            prop_assert!(e.values.iter().all(|&v| v >= -1e-10 * scale));
        }
    }

    #[test]
    fn analysis_is_linear(s in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let p = StftParams { sample_rate: 16_000, frame_len: 32, hop: 16 };
        let mut rng = seed::rng(s);
        let x: Vec<f64> = (0..160).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..160).map(|_| rng.sample(StandardNormal)).collect();
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let sx = analyze(&[x], p).unwrap();
        let sy = analyze(&[y], p).unwrap();
        let sm = analyze(&[mixed], p).unwrap();
        for k in 0..sx.bins() {
            for l in 0..sx.frames() {
                let expect = sx.get(0, k, l) * a + sy.get(0, k, l) * b;
                prop_assert!((sm.get(0, k, l) - expect).norm() < 1e-12 * (1.0 + expect.norm()));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oracle_speech_covariance_is_rank_one(layout in layout_strategy(2), s in any::<u64>()) {
        let scene = random_scene(&layout, StftParams::for_bins(4, 16_000), &SceneParams::default(), s).unwrap();
        let o = oracle_covariances(&scene);
        for k in 0..scene.bins() {
            let diff = o.ry[k].sub(&o.rv[k]).sub(&o.rx[k]);
            prop_assert!(diff.frobenius_norm() <= 1e-14 * o.ry[k].frobenius_norm());
            let e = eigh(&o.rx[k]).unwrap();
            let top = e.values.iter().copied().fold(f64::MIN, f64::max);
            let rest: f64 = e.values.iter().map(|v| v.abs()).sum::<f64>() - top;
            prop_assert!(rest <= 1e-10 * top);
        }
    }

    #[test]
    fn mixing_never_touches_speech(s in any::<u64>(), snr in -10.0f64..10.0) {
        let layout = NodeLayout::new(vec![2, 2], 0).unwrap();
        let params = SceneParams { frames: 40, segment_frames: 10, ..Default::default() };
        let scene = random_scene(&layout, StftParams::for_bins(3, 16_000), &params, s).unwrap();
        let sampled = sample_frames(&scene).unwrap();
        let mix = mix_at_snr(&sampled.x, &sampled.v, snr, 0, Some(&scene.speech_gating)).unwrap();
        let recovered = mix.y.try_sub(&mix.v).unwrap();
        for c in 0..4 {
            for k in 0..3 {
                for (a, b) in recovered.series(c, k).iter().zip(sampled.x.series(c, k)) {
                    prop_assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
                }
            }
        }
    }
}
