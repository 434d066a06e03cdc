//! Synthetic STFT-domain scenes: ground-truth RTFs, rank-1 speech
//! covariances, block-diagonal noise covariances and sampled frames.
//!
//! Sampling draws bin `k` from its own stream seeded by
//! `seed::derive(seed ^ SAMPLING_SALT, k)`, so bins can be generated in any
//! order or in parallel with identical results.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::FrameLabels;
use crate::error::{Error, Result};
use crate::estimators::{normalize_to_reference, Diagnostics, RtfEstimate};
use crate::exec::Exec;
use crate::layout::NodeLayout;
use crate::linalg::{cholesky, principal_eigenpair, CMatrix, HermitianMatrix};
use crate::seed;
use crate::stft::{SpectrogramTensor, StftParams};

const SAMPLING_SALT: u64 = 0x5CE7_E5A3_D1F0_0001;

/// Generator settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Range of `|h_i|` for non-reference entries.
    pub magnitude_range: (f64, f64),
    /// Phases are uniform in `[-phase_spread, phase_spread]`.
    pub phase_spread: f64,
    /// Speech PSD per bin, log-uniform in this range.
    pub phi_x_range: (f64, f64),
    /// Per-node noise power, log-uniform in this range.
    pub noise_power_range: (f64, f64),
    /// Weight of the random correlated part of each node's noise block,
    /// `0` gives spatially white noise within a node.
    pub block_coherence: f64,
    /// Diagonal term added to every noise block.
    pub epsilon: f64,
    /// Length of the alternating off/on speech segments; the first segment
    /// is speech-absent.
    pub segment_frames: usize,
    pub frames: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            magnitude_range: (0.25, 2.0),
            phase_spread: PI,
            phi_x_range: (0.1, 10.0),
            noise_power_range: (0.25, 4.0),
            block_coherence: 0.7,
            epsilon: 1e-3,
            segment_frames: 50,
            frames: 1000,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.magnitude_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Parameter(format!(
                "magnitude_range ({lo}, {hi}) is not a positive interval"
            )));
        }
        for (name, (a, b)) in [
            ("phi_x_range", self.phi_x_range),
            ("noise_power_range", self.noise_power_range),
        ] {
            if !(a > 0.0 && a <= b && b.is_finite()) {
                return Err(Error::Parameter(format!(
                    "{name} ({a}, {b}) is not a positive interval"
                )));
            }
        }
        if !(0.0..=PI).contains(&self.phase_spread) {
            return Err(Error::Parameter("phase_spread must lie in [0, pi]".into()));
        }
        if !(0.0..1.0).contains(&self.block_coherence) {
            return Err(Error::Parameter(
                "block_coherence must lie in [0, 1)".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter("epsilon must be positive".into()));
        }
        if self.segment_frames == 0 || self.frames == 0 {
            return Err(Error::Parameter(
                "frames and segment_frames must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Alternating off/on gating of length `frames`.
    pub fn gating(&self) -> Vec<bool> {
        (0..self.frames)
            .map(|l| (l / self.segment_frames) % 2 == 1)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub layout: NodeLayout,
    pub stft: StftParams,
    /// Ground-truth RTF per bin, reference entry exactly 1.
    pub h: Vec<Vec<Complex64>>,
    pub phi_x: Vec<f64>,
    /// Per bin, per node noise covariance blocks.
    pub rv_blocks: Vec<Vec<HermitianMatrix>>,
    pub speech_gating: Vec<bool>,
    pub frames: usize,
    pub seed: u64,
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        (rng.random_range(lo.ln()..hi.ln())).exp()
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn circular(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

fn noise_block(rng: &mut impl Rng, n: usize, params: &SceneParams) -> HermitianMatrix {
    let power = log_uniform(rng, params.noise_power_range);
    let draws: Vec<Complex64> = (0..n * n).map(|_| circular(rng, 1.0)).collect();
    let b = CMatrix::from_fn(n, n, |i, j| draws[i * n + j]);
    let g = b.matmul(&b.adjoint());
    let d: Vec<f64> = (0..n).map(|i| g[(i, i)].re.sqrt()).collect();
    let rho = params.block_coherence;
    let c = CMatrix::from_fn(n, n, |i, j| {
        let coherent = g[(i, j)] / (d[i] * d[j]) * rho;
        if i == j {
            Complex64::new(power * (coherent.re + 1.0 - rho) + params.epsilon, 0.0)
        } else {
            coherent * power
        }
    });
    HermitianMatrix::symmetrize(c)
}

/// Draws a scene with `stft.bins()` bins. Needs at least two nodes.
pub fn random_scene(
    layout: &NodeLayout,
    stft: StftParams,
    params: &SceneParams,
    seed: u64,
) -> Result<SceneSpec> {
    if layout.num_nodes() < 2 {
        return Err(Error::Layout(format!(
            "scene generation needs at least 2 nodes, layout has {}",
            layout.num_nodes()
        )));
    }
    if stft.bins() == 0 {
        return Err(Error::Parameter("scene needs at least one bin".into()));
    }
    params.validate()?;
    let mut rng = seed::rng(seed);
    let m = layout.num_mics();
    let r = layout.ref_index();
    let bins = stft.bins();
    let mut h = Vec::with_capacity(bins);
    let mut phi_x = Vec::with_capacity(bins);
    let mut rv_blocks = Vec::with_capacity(bins);
    for _ in 0..bins {
        let hk: Vec<Complex64> = (0..m)
            .map(|i| {
                let mag = uniform(&mut rng, params.magnitude_range);
                let phase = uniform(&mut rng, (-params.phase_spread, params.phase_spread));
                if i == r {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::from_polar(mag, phase)
                }
            })
            .collect();
        h.push(hk);
        phi_x.push(log_uniform(&mut rng, params.phi_x_range));
        rv_blocks.push(
            layout
                .node_sizes()
                .iter()
                .map(|&n| noise_block(&mut rng, n, params))
                .collect(),
        );
    }
    Ok(SceneSpec {
        layout: layout.clone(),
        stft,
        h,
        phi_x,
        rv_blocks,
        speech_gating: params.gating(),
        frames: params.frames,
        seed,
    })
}

/// Exact per-bin covariances of a scene.
#[derive(Clone, Debug)]
pub struct OracleCovariances {
    pub rx: Vec<HermitianMatrix>,
    pub rv: Vec<HermitianMatrix>,
    pub ry: Vec<HermitianMatrix>,
}

/// Assembles the block-diagonal noise covariance of one bin.
pub fn assemble_blocks(layout: &NodeLayout, blocks: &[HermitianMatrix]) -> HermitianMatrix {
    let m = layout.num_mics();
    let mut out = CMatrix::zeros(m, m);
    for ((start, len), b) in layout.block_spans().into_iter().zip(blocks) {
        for i in 0..len {
            for j in 0..len {
                out[(start + i, start + j)] = b[(i, j)];
            }
        }
    }
    HermitianMatrix::symmetrize(out)
}

pub fn oracle_covariances(scene: &SceneSpec) -> OracleCovariances {
    let mut out = OracleCovariances {
        rx: Vec::new(),
        rv: Vec::new(),
        ry: Vec::new(),
    };
    for k in 0..scene.h.len() {
        let rx = HermitianMatrix::outer(&scene.h[k], scene.phi_x[k]);
        let rv = assemble_blocks(&scene.layout, &scene.rv_blocks[k]);
        out.ry.push(rx.add(&rv));
        out.rx.push(rx);
        out.rv.push(rv);
    }
    out
}

/// Sampled speech, noise and noisy tensors with the oracle labels.
#[derive(Clone, Debug)]
pub struct SampledScene {
    pub x: SpectrogramTensor,
    pub v: SpectrogramTensor,
    pub y: SpectrogramTensor,
    pub labels: FrameLabels,
}

pub fn sample_frames(scene: &SceneSpec) -> Result<SampledScene> {
    sample_frames_with(scene, Exec::default())
}

pub fn sample_frames_with(scene: &SceneSpec, exec: Exec) -> Result<SampledScene> {
    let m = scene.layout.num_mics();
    let frames = scene.frames;
    if scene.speech_gating.len() != frames {
        return Err(Error::Shape(format!(
            "gating has {} entries for {} frames",
            scene.speech_gating.len(),
            frames
        )));
    }
    let spans = scene.layout.block_spans();
    let per_bin = exec.try_map(scene.h.len(), |k| {
        let colors = scene.rv_blocks[k]
            .iter()
            .map(cholesky)
            .collect::<Result<Vec<_>>>()?;
        let mut rng = seed::rng(seed::derive(scene.seed ^ SAMPLING_SALT, k as u64));
        let mut xs = vec![Complex64::new(0.0, 0.0); frames * m];
        let mut vs = vec![Complex64::new(0.0, 0.0); frames * m];
        let mut white = Vec::with_capacity(m);
        for l in 0..frames {
            let s = circular(&mut rng, scene.phi_x[k]);
            if scene.speech_gating[l] {
                for (i, hi) in scene.h[k].iter().enumerate() {
                    xs[l * m + i] = hi * s;
                }
            }
            for (&(start, len), lc) in spans.iter().zip(&colors) {
                white.clear();
                white.extend((0..len).map(|_| circular(&mut rng, 1.0)));
                for i in 0..len {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (j, w) in white.iter().enumerate().take(i + 1) {
                        acc += lc[(i, j)] * w;
                    }
                    vs[l * m + start + i] = acc;
                }
            }
        }
        Ok::<_, Error>((xs, vs))
    })?;
    let (xb, vb): (Vec<_>, Vec<_>) = per_bin.into_iter().unzip();
    let x = SpectrogramTensor::from_bin_major(m, frames, scene.stft, &xb);
    let v = SpectrogramTensor::from_bin_major(m, frames, scene.stft, &vb);
    let y = x.try_add(&v)?;
    Ok(SampledScene {
        labels: FrameLabels::from_gating(scene.h.len(), &scene.speech_gating),
        x,
        v,
        y,
    })
}

/// Output of [`mix_at_snr`].
#[derive(Clone, Debug)]
pub struct Mixture {
    pub y: SpectrogramTensor,
    /// The rescaled noise component.
    pub v: SpectrogramTensor,
    /// Amplitude factor applied to the noise.
    pub scale: f64,
}

/// Scales `v` so the reference-channel SNR equals `target_db`, then adds it
/// to `x`. With `active` set, the speech power is measured over those frames
/// only and the noise power over the same frames.
pub fn mix_at_snr(
    x: &SpectrogramTensor,
    v: &SpectrogramTensor,
    target_db: f64,
    ref_channel: usize,
    active: Option<&[bool]>,
) -> Result<Mixture> {
    if !x.same_shape(v) {
        return Err(Error::Shape(
            "speech and noise tensors differ in shape".into(),
        ));
    }
    if ref_channel >= x.channels() {
        return Err(Error::Shape(format!(
            "reference channel {ref_channel} out of range"
        )));
    }
    if !target_db.is_finite() {
        return Err(Error::Parameter(format!(
            "target SNR {target_db} is not finite"
        )));
    }
    let (px, pv) = match active {
        Some(mask) => {
            if mask.len() != x.frames() {
                return Err(Error::Shape(
                    "activity mask length differs from frame count".into(),
                ));
            }
            (
                x.channel_power_masked(ref_channel, mask),
                v.channel_power_masked(ref_channel, mask),
            )
        }
        None => (x.channel_power(ref_channel), v.channel_power(ref_channel)),
    };
    if px == 0.0 {
        return Err(Error::ZeroPower("speech at the reference channel"));
    }
    if pv == 0.0 {
        return Err(Error::ZeroPower("noise at the reference channel"));
    }
    let scale = (px / pv / 10f64.powf(target_db / 10.0)).sqrt();
    let v = v.scaled(scale);
    Ok(Mixture {
        y: x.try_add(&v)?,
        v,
        scale,
    })
}

/// Normalized principal eigenvector of the speech covariance.
pub fn ground_truth_rtf(rx: &HermitianMatrix, layout: &NodeLayout) -> Result<RtfEstimate> {
    if rx.dim() != layout.num_mics() {
        return Err(Error::Shape(format!(
            "Rx is {}x{}, layout has {} microphones",
            rx.dim(),
            rx.dim(),
            layout.num_mics()
        )));
    }
    let pair = principal_eigenpair(rx)?;
    if !(pair.value > 0.0) {
        return Err(Error::NoDominantDirection(pair.value));
    }
    Ok(RtfEstimate {
        h_hat: normalize_to_reference(&pair.vector, layout.ref_index())?,
        method: None,
        diagnostics: Diagnostics {
            eigenvalue: Some(pair.value),
            converged: true,
            ..Default::default()
        },
    })
}

impl SceneSpec {
    pub fn bins(&self) -> usize {
        self.h.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: SceneSpec = serde_json::from_str(s)?;
        scene.check()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        SceneSpec::from_json(&std::fs::read_to_string(path)?)
    }

    /// Structural checks for scenes read from disk.
    pub fn check(&self) -> Result<()> {
        let bins = self.stft.bins();
        let m = self.layout.num_mics();
        let r = self.layout.ref_index();
        if self.h.len() != bins || self.phi_x.len() != bins || self.rv_blocks.len() != bins {
            return Err(Error::Shape(format!("scene must carry {bins} bins")));
        }
        if self.speech_gating.len() != self.frames {
            return Err(Error::Shape(
                "gating length differs from frame count".into(),
            ));
        }
        for k in 0..bins {
            if self.h[k].len() != m || self.h[k][r] != Complex64::new(1.0, 0.0) {
                return Err(Error::Parameter(format!(
                    "bin {k}: RTF must have {m} entries and unit reference"
                )));
            }
            if !(self.phi_x[k] >= 0.0) {
                return Err(Error::Parameter(format!("bin {k}: negative speech PSD")));
            }
            if self.rv_blocks[k].len() != self.layout.num_nodes() {
                return Err(Error::Shape(format!(
                    "bin {k}: wrong number of noise blocks"
                )));
            }
            for (b, &n) in self.rv_blocks[k].iter().zip(self.layout.node_sizes()) {
                if b.dim() != n {
                    return Err(Error::Shape(format!("bin {k}: noise block size mismatch")));
                }
                cholesky(b)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigh;
    use crate::metrics::{hermitian_angle, snr_db};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small(sizes: &[usize], bins: usize, frames: usize) -> (NodeLayout, StftParams, SceneParams) {
        let layout = NodeLayout::new(sizes.to_vec(), 0).unwrap();
        let params = SceneParams {
            frames,
            segment_frames: 10,
            ..Default::default()
        };
        (layout, StftParams::for_bins(bins, 16_000), params)
    }

    #[test]
    fn deterministic_under_seed() {
        let (l, s, p) = small(&[2, 2, 1], 4, 40);
        let a = random_scene(&l, s, &p, 9).unwrap();
        let b = random_scene(&l, s, &p, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_scene(&l, s, &p, 10).unwrap());
        let sa = sample_frames_with(&a, Exec::Sequential).unwrap();
        let sb = sample_frames_with(&b, Exec::Parallel).unwrap();
        assert_eq!(sa.y, sb.y);
    }

    #[test]
    fn unit_reference_and_shapes() {
        let (l, s, p) = small(&[1, 1, 1], 1, 10);
        let scene = random_scene(&l, s, &p, 1).unwrap();
        assert_eq!(scene.h.len(), 1);
        assert_eq!(scene.h[0].len(), 3);
        assert_eq!(scene.h[0][0], c(1.0, 0.0));
        scene.check().unwrap();
    }

    #[test]
    fn degenerate_range_gives_all_ones() {
        let (l, s, mut p) = small(&[2, 2], 3, 10);
        p.magnitude_range = (1.0, 1.0);
        p.phase_spread = 0.0;
        let scene = random_scene(&l, s, &p, 3).unwrap();
        for hk in &scene.h {
            assert!(hk.iter().all(|&z| z == c(1.0, 0.0)));
        }
    }

    #[test]
    fn single_node_is_rejected() {
        let (l, s, p) = small(&[3], 2, 10);
        assert!(random_scene(&l, s, &p, 0).is_err());
    }

    #[test]
    fn oracle_arithmetic() {
        let layout = NodeLayout::new(vec![1, 1], 0).unwrap();
        let scene = SceneSpec {
            layout: layout.clone(),
            stft: StftParams::for_bins(1, 16_000),
            h: vec![vec![c(1.0, 0.0), c(2.0, 0.0)]],
            phi_x: vec![1.0],
            rv_blocks: vec![vec![
                HermitianMatrix::identity(1),
                HermitianMatrix::identity(1),
            ]],
            speech_gating: vec![true],
            frames: 1,
            seed: 0,
        };
        let o = oracle_covariances(&scene);
        let expect = [[2.0, 2.0], [2.0, 5.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(o.ry[0][(i, j)], c(expect[i][j], 0.0));
            }
        }
        let mut quiet = scene.clone();
        quiet.phi_x = vec![0.0];
        let o = oracle_covariances(&quiet);
        assert_eq!(o.ry[0], o.rv[0]);
    }

    #[test]
    fn oracle_rx_is_rank_one() {
        let (l, s, p) = small(&[4, 4, 4, 3], 8, 10);
        let scene = random_scene(&l, s, &p, 4).unwrap();
        let o = oracle_covariances(&scene);
        for k in 0..8 {
            let e = eigh(&o.rx[k]).unwrap();
            assert!(e.values[1].abs() < 1e-12 * e.values[0]);
            let diff = o.ry[k].sub(&o.rv[k]).sub(&o.rx[k]).frobenius_norm();
            assert!(diff <= 1e-14 * o.ry[k].frobenius_norm());
        }
    }

    #[test]
    fn gating_off_gives_zero_speech() {
        let (l, s, p) = small(&[2, 1], 3, 20);
        let mut scene = random_scene(&l, s, &p, 5).unwrap();
        scene.speech_gating = vec![false; 20];
        let out = sample_frames(&scene).unwrap();
        assert!((0..3).all(|c| out.x.channel_power(c) == 0.0));
        assert!((0..3).all(|k| (0..20).all(|l| !out.labels.is_speech(k, l))));
    }

    #[test]
    fn labels_follow_gating() {
        let (l, s, p) = small(&[2, 1], 2, 40);
        let scene = random_scene(&l, s, &p, 6).unwrap();
        let out = sample_frames(&scene).unwrap();
        for lf in 0..40 {
            assert_eq!(out.labels.is_speech(1, lf), scene.speech_gating[lf]);
            assert_eq!(scene.speech_gating[lf], (lf / 10) % 2 == 1);
        }
    }

    fn constant(channels: usize, value: f64) -> SpectrogramTensor {
        let p = StftParams::for_bins(3, 16_000);
        let mut t = SpectrogramTensor::zeros(channels, 3, 5, p);
        for ch in 0..channels {
            for k in 0..3 {
                for l in 0..5 {
                    t.set(ch, k, l, c(value, -value));
                }
            }
        }
        t
    }

    #[test]
    fn mix_examples() {
        let x = constant(2, 1.0);
        let v = constant(2, 1.0);
        assert!((mix_at_snr(&x, &v, 0.0, 0, None).unwrap().scale - 1.0).abs() < 1e-15);
        let m = mix_at_snr(&x, &v, 10.0, 0, None).unwrap();
        assert!((m.scale * m.scale - 0.1).abs() < 1e-15);
        let v2 = constant(2, 0.37);
        let m = mix_at_snr(&x, &v2, -5.0, 1, None).unwrap();
        assert!((snr_db(&x, &m.v, 1).unwrap() + 5.0).abs() < 1e-9);
        assert_eq!(m.y, x.try_add(&m.v).unwrap());
        assert!(mix_at_snr(&x, &constant(2, 0.0), 0.0, 0, None).is_err());
        assert!(mix_at_snr(&constant(2, 0.0), &v, 0.0, 0, None).is_err());
    }

    #[test]
    fn ground_truth_examples() {
        let l = NodeLayout::new(vec![2, 1], 0).unwrap();
        let h = vec![c(1.0, 0.0), c(0.5, -0.7), c(-1.2, 0.3)];
        let gt = ground_truth_rtf(&HermitianMatrix::outer(&h, 2.5), &l).unwrap();
        for (a, b) in gt.h_hat.iter().zip(&h) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(ground_truth_rtf(&HermitianMatrix::zeros(3), &l).is_err());
        let perturbed = HermitianMatrix::outer(&h, 2.5)
            .add(&HermitianMatrix::from_real_diag(&[1e-14, 0.0, 2e-14]));
        let gt = ground_truth_rtf(&perturbed, &l).unwrap();
        assert!(hermitian_angle(&gt.h_hat, &h).unwrap() < 1e-6);
    }

    #[test]
    fn json_round_trip() {
        let (l, s, p) = small(&[2, 1], 3, 12);
        let scene = random_scene(&l, s, &p, 11).unwrap();
        let back = SceneSpec::from_json(&scene.to_json().unwrap()).unwrap();
        assert_eq!(scene, back);
    }
}
