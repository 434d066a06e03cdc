//! Batch covariance estimation with speech-presence based frame labels.

use std::io::{BufRead, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::layout::NodeLayout;
use crate::linalg::{block_diagonal_part, CMatrix, HermitianMatrix};
use crate::stft::SpectrogramTensor;

/// Fixed a-priori SNR under speech presence, 15 dB.
pub const SPP_PRIOR_SNR: f64 = 31.622_776_601_683_793;
/// Smoothing constant of the noise PSD tracker.
pub const SPP_NOISE_SMOOTHING: f64 = 0.9;
/// Frames averaged to initialize the noise PSD tracker.
pub const SPP_INIT_FRAMES: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameLabel {
    SpeechPlusNoise,
    NoiseOnly,
}

impl FrameLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameLabel::SpeechPlusNoise => "speech_plus_noise",
            FrameLabel::NoiseOnly => "noise_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "speech_plus_noise" => Some(FrameLabel::SpeechPlusNoise),
            "noise_only" => Some(FrameLabel::NoiseOnly),
            _ => None,
        }
    }
}

/// Per-(bin, frame) speech presence probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SppMap {
    pub bins: usize,
    pub frames: usize,
    /// Indexed `k * frames + l`.
    pub values: Vec<f64>,
}

impl SppMap {
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.frames + l]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameLabels {
    bins: usize,
    frames: usize,
    speech: Vec<bool>,
}

impl FrameLabels {
    pub fn from_fn(bins: usize, frames: usize, f: impl Fn(usize, usize) -> FrameLabel) -> Self {
        let mut speech = Vec::with_capacity(bins * frames);
        for k in 0..bins {
            for l in 0..frames {
                speech.push(f(k, l) == FrameLabel::SpeechPlusNoise);
            }
        }
        FrameLabels {
            bins,
            frames,
            speech,
        }
    }

    /// Same frame-level gating for every bin.
    pub fn from_gating(bins: usize, gating: &[bool]) -> Self {
        FrameLabels::from_fn(bins, gating.len(), |_, l| {
            if gating[l] {
                FrameLabel::SpeechPlusNoise
            } else {
                FrameLabel::NoiseOnly
            }
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.speech.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speech.is_empty()
    }

    pub fn get(&self, k: usize, l: usize) -> FrameLabel {
        if self.is_speech(k, l) {
            FrameLabel::SpeechPlusNoise
        } else {
            FrameLabel::NoiseOnly
        }
    }

    #[inline]
    pub fn is_speech(&self, k: usize, l: usize) -> bool {
        self.speech[k * self.frames + l]
    }

    /// Fraction of cells on which two label sets agree.
    pub fn agreement(&self, other: &FrameLabels) -> f64 {
        assert_eq!((self.bins, self.frames), (other.bins, other.frames));
        let same = self
            .speech
            .iter()
            .zip(&other.speech)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.len().max(1) as f64
    }

    /// CSV with header `bin,frame,label`, one row per cell, bin-major.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin,frame,label")?;
        for k in 0..self.bins {
            for l in 0..self.frames {
                writeln!(w, "{k},{l},{}", self.get(k, l).as_str())?;
            }
        }
        Ok(())
    }

    /// Reads the format of [`write_csv`](Self::write_csv). Rows may come in
    /// any order but every cell of the `bins x frames` grid must appear once.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let err = |line: usize, message: String| Error::Config { line, message };
        let mut cells = Vec::new();
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == "bin,frame,label" => {}
            Some((_, Err(e))) => return Err(e.into()),
            _ => return Err(err(1, "expected header `bin,frame,label`".into())),
        }
        for (i, line) in lines {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(err(
                    line_no,
                    format!("expected 3 fields, got {}", parts.len()),
                ));
            }
            let k: usize = parts[0]
                .parse()
                .map_err(|_| err(line_no, format!("bad bin `{}`", parts[0])))?;
            let l: usize = parts[1]
                .parse()
                .map_err(|_| err(line_no, format!("bad frame `{}`", parts[1])))?;
            let label = FrameLabel::parse(parts[2])
                .ok_or_else(|| err(line_no, format!("bad label `{}`", parts[2])))?;
            cells.push((k, l, label));
        }
        let bins = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        let frames = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
        if cells.len() != bins * frames {
            return Err(err(
                0,
                format!("expected {} cells, found {}", bins * frames, cells.len()),
            ));
        }
        let mut speech = vec![None; bins * frames];
        for (k, l, label) in cells {
            let slot = &mut speech[k * frames + l];
            if slot.is_some() {
                return Err(err(0, format!("duplicate cell ({k}, {l})")));
            }
            *slot = Some(label == FrameLabel::SpeechPlusNoise);
        }
        Ok(FrameLabels {
            bins,
            frames,
            speech: speech.into_iter().map(|s| s.unwrap()).collect(),
        })
    }
}

/// Posterior speech presence probability for a fixed prior SNR `xi` given
/// the a-posteriori ratio `|Y|^2 / noise_psd`.
pub fn presence_probability(snr_post: f64, xi: f64) -> f64 {
    1.0 / (1.0 + (1.0 + xi) * (-snr_post * xi / (1.0 + xi)).exp())
}

/// Speech presence probability computed on one probe channel per node and
/// averaged across probes.
///
/// The noise PSD per bin starts from the mean power of the first
/// [`SPP_INIT_FRAMES`] frames and is tracked with
/// `psd = a * psd + (1 - a) * ((1 - p) |Y|^2 + p * psd)`.
pub fn spp(
    noisy: &SpectrogramTensor,
    probe_channels: &[usize],
    layout: &NodeLayout,
) -> Result<SppMap> {
    if probe_channels.len() != layout.num_nodes() {
        return Err(Error::Parameter(format!(
            "expected one probe channel per node ({}), got {}",
            layout.num_nodes(),
            probe_channels.len()
        )));
    }
    if noisy.channels() != layout.num_mics() {
        return Err(Error::Shape(format!(
            "tensor has {} channels, layout {} microphones",
            noisy.channels(),
            layout.num_mics()
        )));
    }
    for (node, &c) in probe_channels.iter().enumerate() {
        if c >= noisy.channels() || layout.node_of(c) != node {
            return Err(Error::Parameter(format!(
                "probe channel {c} is not on node {node}"
            )));
        }
    }
    let (bins, frames) = (noisy.bins(), noisy.frames());
    let mut values = vec![0.0; bins * frames];
    let xi = SPP_PRIOR_SNR;
    let alpha = SPP_NOISE_SMOOTHING;
    let weight = 1.0 / probe_channels.len() as f64;
    for &c in probe_channels {
        for k in 0..bins {
            let series = noisy.series(c, k);
            let init = series.len().min(SPP_INIT_FRAMES);
            let mut psd = if init == 0 {
                0.0
            } else {
                series[..init].iter().map(|z| z.norm_sqr()).sum::<f64>() / init as f64
            };
            for (l, z) in series.iter().enumerate() {
                let power = z.norm_sqr();
                let ratio = if power == 0.0 {
                    0.0
                } else if psd > 0.0 {
                    power / psd
                } else {
                    f64::INFINITY
                };
                let p = presence_probability(ratio, xi);
                values[k * frames + l] += weight * p;
                psd = alpha * psd + (1.0 - alpha) * ((1.0 - p) * power + p * psd);
            }
        }
    }
    Ok(SppMap {
        bins,
        frames,
        values,
    })
}

/// Speech-plus-noise iff `p >= threshold`.
pub fn classify(spp: &SppMap, threshold: f64) -> Result<FrameLabels> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    Ok(FrameLabels {
        bins: spp.bins,
        frames: spp.frames,
        speech: spp.values.iter().map(|&p| p >= threshold).collect(),
    })
}

/// Per-bin noisy (`ry`) and noise-only (`rv`) covariance estimates.
#[derive(Clone, Debug)]
pub struct CovarianceSet {
    pub ry: Vec<HermitianMatrix>,
    pub rv: Vec<HermitianMatrix>,
    pub n_speech_frames: Vec<usize>,
    pub n_noise_frames: Vec<usize>,
}

impl CovarianceSet {
    pub fn bins(&self) -> usize {
        self.ry.len()
    }
}

/// Mean of `y y^H` over the frames selected by `select`.
pub fn sample_covariance(
    spec: &SpectrogramTensor,
    k: usize,
    mut select: impl FnMut(usize) -> bool,
) -> (HermitianMatrix, usize) {
    let m = spec.channels();
    let mut acc = CMatrix::zeros(m, m);
    let mut count = 0;
    let mut y = vec![Complex64::new(0.0, 0.0); m];
    for l in 0..spec.frames() {
        if !select(l) {
            continue;
        }
        for (c, slot) in y.iter_mut().enumerate() {
            *slot = spec.get(c, k, l);
        }
        for i in 0..m {
            let yi = y[i];
            for j in i..m {
                acc[(i, j)] += yi * y[j].conj();
            }
        }
        count += 1;
    }
    for i in 0..m {
        for j in 0..i {
            acc[(i, j)] = acc[(j, i)].conj();
        }
    }
    let scale = if count > 0 { 1.0 / count as f64 } else { 0.0 };
    (HermitianMatrix::symmetrize(acc.scale(scale)), count)
}

/// Batch estimate: `ry[k]` averages over speech-plus-noise frames, `rv[k]`
/// over noise-only frames.
pub fn estimate(noisy: &SpectrogramTensor, labels: &FrameLabels) -> Result<CovarianceSet> {
    estimate_with(noisy, labels, Exec::default())
}

pub fn estimate_with(
    noisy: &SpectrogramTensor,
    labels: &FrameLabels,
    exec: Exec,
) -> Result<CovarianceSet> {
    if labels.bins() != noisy.bins() || labels.frames() != noisy.frames() {
        return Err(Error::Shape(format!(
            "labels are {}x{}, tensor {}x{}",
            labels.bins(),
            labels.frames(),
            noisy.bins(),
            noisy.frames()
        )));
    }
    let per_bin = exec.try_map(noisy.bins(), |k| {
        let (ry, ns) = sample_covariance(noisy, k, |l| labels.is_speech(k, l));
        if ns == 0 {
            return Err(Error::EmptyClass {
                bin: k,
                class: "speech-plus-noise",
            });
        }
        let (rv, nn) = sample_covariance(noisy, k, |l| !labels.is_speech(k, l));
        if nn == 0 {
            return Err(Error::EmptyClass {
                bin: k,
                class: "noise-only",
            });
        }
        Ok((ry, rv, ns, nn))
    })?;
    let mut set = CovarianceSet {
        ry: Vec::with_capacity(per_bin.len()),
        rv: Vec::with_capacity(per_bin.len()),
        n_speech_frames: Vec::with_capacity(per_bin.len()),
        n_noise_frames: Vec::with_capacity(per_bin.len()),
    };
    for (ry, rv, ns, nn) in per_bin {
        set.ry.push(ry);
        set.rv.push(rv);
        set.n_speech_frames.push(ns);
        set.n_noise_frames.push(nn);
    }
    Ok(set)
}

/// Keeps the node-wise diagonal blocks and zeroes the inter-node blocks.
pub fn block_diagonal_projection(
    rv: &HermitianMatrix,
    layout: &NodeLayout,
) -> Result<HermitianMatrix> {
    if rv.dim() != layout.num_mics() {
        return Err(Error::Shape(format!(
            "matrix dimension {} does not match layout with {} microphones",
            rv.dim(),
            layout.num_mics()
        )));
    }
    Ok(HermitianMatrix::symmetrize(block_diagonal_part(
        rv.as_matrix(),
        layout,
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftParams;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn params() -> StftParams {
        StftParams::for_bins(2, 16_000)
    }

    #[test]
    fn zero_input_gives_prior_only_probability() {
        let layout = NodeLayout::new(vec![1, 1], 0).unwrap();
        let t = SpectrogramTensor::zeros(2, 2, 10, params());
        let p = spp(&t, &[0, 1], &layout).unwrap();
        let expected = 1.0 / (2.0 + SPP_PRIOR_SNR);
        assert!(p.values.iter().all(|&v| (v - expected).abs() < 1e-15));
        assert!((expected - 0.0298).abs() < 1e-3);
    }

    #[test]
    fn loud_frame_gives_certain_presence() {
        let layout = NodeLayout::new(vec![1, 1], 0).unwrap();
        let mut t = SpectrogramTensor::zeros(2, 1, 8, params());
        for c_ in 0..2 {
            for l in 0..8 {
                t.set(c_, 0, l, c(if l == 7 { 1e3 } else { 1.0 }, 0.0));
            }
        }
        let p = spp(&t, &[0, 1], &layout).unwrap();
        assert!(p.get(0, 7) > 1.0 - 1e-12);
        assert!(p.get(0, 2) < 0.5);
    }

    #[test]
    fn spp_rejects_bad_probes() {
        let layout = NodeLayout::new(vec![2, 1], 0).unwrap();
        let t = SpectrogramTensor::zeros(3, 1, 4, params());
        assert!(spp(&t, &[0], &layout).is_err());
        assert!(spp(&t, &[0, 1], &layout).is_err());
        assert!(spp(&t, &[1, 2], &layout).is_ok());
    }

    #[test]
    fn classify_threshold_is_inclusive() {
        let map = SppMap {
            bins: 1,
            frames: 3,
            values: vec![0.9, 0.5, 0.1],
        };
        let labels = classify(&map, 0.5).unwrap();
        assert_eq!(labels.get(0, 0), FrameLabel::SpeechPlusNoise);
        assert_eq!(labels.get(0, 1), FrameLabel::SpeechPlusNoise);
        assert_eq!(labels.get(0, 2), FrameLabel::NoiseOnly);
        assert!(classify(&map, 1.0).is_err());
    }

    #[test]
    fn all_noise_labels_fail_downstream() {
        let map = SppMap {
            bins: 2,
            frames: 4,
            values: vec![0.0; 8],
        };
        let labels = classify(&map, 0.5).unwrap();
        let t = SpectrogramTensor::zeros(2, 2, 4, params());
        let err = estimate(&t, &labels).unwrap_err();
        assert!(matches!(err, Error::EmptyClass { bin: 0, .. }), "{err}");
    }

    #[test]
    fn single_speech_frame() {
        let mut t = SpectrogramTensor::zeros(2, 1, 2, params());
        t.set(0, 0, 0, c(1.0, 0.0));
        t.set(1, 0, 1, c(1.0, 0.0));
        let labels = FrameLabels::from_gating(1, &[true, false]);
        let set = estimate(&t, &labels).unwrap();
        assert_eq!(set.ry[0], HermitianMatrix::from_real_diag(&[1.0, 0.0]));
        assert_eq!(set.rv[0], HermitianMatrix::from_real_diag(&[0.0, 1.0]));
        assert_eq!((set.n_speech_frames[0], set.n_noise_frames[0]), (1, 1));
    }

    #[test]
    fn white_noise_converges_to_identity() {
        let (m, frames) = (3, 2000);
        let mut rng = crate::seed::rng(17);
        let mut t = SpectrogramTensor::zeros(m, 1, frames, params());
        let s = 0.5f64.sqrt();
        for ch in 0..m {
            for l in 0..frames {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                t.set(ch, 0, l, c(re * s, im * s));
            }
        }
        // first frame labeled speech so ry is defined
        let labels = FrameLabels::from_fn(1, frames, |_, l| {
            if l == 0 {
                FrameLabel::SpeechPlusNoise
            } else {
                FrameLabel::NoiseOnly
            }
        });
        let set = estimate(&t, &labels).unwrap();
        let err = set.rv[0]
            .as_matrix()
            .sub(&CMatrix::identity(m))
            .frobenius_norm();
        assert!(err < 0.1, "{err}");
    }

    #[test]
    fn projection_examples() {
        let layout = NodeLayout::new(vec![2, 1], 0).unwrap();
        let ones = HermitianMatrix::new(CMatrix::from_fn(3, 3, |_, _| c(1.0, 0.0))).unwrap();
        let p = block_diagonal_projection(&ones, &layout).unwrap();
        let expected = [[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p[(i, j)], c(expected[i][j], 0.0));
            }
        }
        assert_eq!(block_diagonal_projection(&p, &layout).unwrap(), p);
    }

    #[test]
    fn projection_is_mask_complement() {
        let layout = NodeLayout::new(vec![2, 2, 1], 0).unwrap();
        let mut rng = crate::seed::rng(2);
        let b = CMatrix::from_fn(5, 5, |_, _| c(rng.random(), rng.random()));
        let rv = HermitianMatrix::symmetrize(b.add(&b.adjoint()));
        let s = layout.selection_mask();
        let p = block_diagonal_projection(&rv, &layout).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if s.get(i, j) { c(0.0, 0.0) } else { rv[(i, j)] };
                assert_eq!(p[(i, j)], expected);
            }
        }
        assert!(p.frobenius_norm() <= rv.frobenius_norm());
    }

    #[test]
    fn labels_csv_round_trip() {
        let labels = FrameLabels::from_fn(3, 4, |k, l| {
            if (k + l) % 3 == 0 {
                FrameLabel::SpeechPlusNoise
            } else {
                FrameLabel::NoiseOnly
            }
        });
        let mut buf = Vec::new();
        labels.write_csv(&mut buf).unwrap();
        assert!(std::str::from_utf8(&buf)
            .unwrap()
            .starts_with("bin,frame,label\n0,0,speech_plus_noise\n"));
        let back = FrameLabels::read_csv(&buf[..]).unwrap();
        assert_eq!(back, labels);
        assert!(FrameLabels::read_csv(&b"bin,frame,label\n0,0,maybe\n"[..]).is_err());
    }
}
