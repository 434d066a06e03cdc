//! Hermitian angle and SNR improvement measures.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{inner, vec_norm};
use crate::stft::SpectrogramTensor;

/// One-third-octave band centers (Hz) and band-importance weights of the
/// ANSI S3.5-1997 speech intelligibility index, Table 3 (average speech).
/// The weights sum to one.
pub const BAND_IMPORTANCE: [(f64, f64); 18] = [
    (160.0, 0.0083),
    (200.0, 0.0095),
    (250.0, 0.0150),
    (315.0, 0.0289),
    (400.0, 0.0440),
    (500.0, 0.0578),
    (630.0, 0.0653),
    (800.0, 0.0711),
    (1000.0, 0.0818),
    (1250.0, 0.0844),
    (1600.0, 0.0882),
    (2000.0, 0.0898),
    (2500.0, 0.0868),
    (3150.0, 0.0844),
    (4000.0, 0.0771),
    (5000.0, 0.0527),
    (6300.0, 0.0364),
    (8000.0, 0.0185),
];

/// Per-band SNR clamp used by the intelligibility weighting.
pub const BAND_SNR_RANGE_DB: (f64, f64) = (-15.0, 30.0);

/// `arccos(|h^H g| / (||h|| ||g||))` in `[0, pi/2]`.
///
/// Evaluated as `atan2(sin, cos)` with `sin` taken from the residual of `g`
/// after projecting onto `h`; `acos` alone cannot resolve angles below about
/// `1.5e-8` because of rounding near 1.
pub fn hermitian_angle(h: &[Complex64], h_hat: &[Complex64]) -> Result<f64> {
    if h.len() != h_hat.len() {
        return Err(Error::Shape(format!(
            "{} vs {} entries",
            h.len(),
            h_hat.len()
        )));
    }
    let (a, b) = (vec_norm(h), vec_norm(h_hat));
    if a == 0.0 || b == 0.0 {
        return Err(Error::ZeroPower("Hermitian angle argument"));
    }
    let proj = inner(h, h_hat) / (a * b);
    let cos = proj.norm().clamp(0.0, 1.0);
    let sin = h
        .iter()
        .zip(h_hat)
        .map(|(x, y)| (y / b - x / a * proj).norm_sqr())
        .sum::<f64>()
        .sqrt()
        .clamp(0.0, 1.0);
    Ok(sin.atan2(cos))
}

/// `10 log10(sum |X|^2 / sum |V|^2)` over all bins and frames of `channel`.
pub fn snr_db(x: &SpectrogramTensor, v: &SpectrogramTensor, channel: usize) -> Result<f64> {
    let px = x.channel_power(channel);
    let pv = v.channel_power(channel);
    if pv == 0.0 {
        return Err(Error::ZeroPower("noise"));
    }
    if px == 0.0 {
        return Err(Error::ZeroPower("speech"));
    }
    Ok(10.0 * (px / pv).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    Broadband,
    Intelligibility,
}

/// Bands that receive at least one STFT bin, as `(weight, bins)` with the
/// weights renormalized to sum to one.
pub fn band_bins(bins: usize, sample_rate: f64, frame_len: usize) -> Vec<(f64, Vec<usize>)> {
    let edge = 2f64.powf(1.0 / 6.0);
    let mut bands: Vec<(f64, Vec<usize>)> = BAND_IMPORTANCE
        .iter()
        .map(|&(fc, w)| {
            let (lo, hi) = (fc / edge, fc * edge);
            let members = (0..bins)
                .filter(|&k| {
                    let f = k as f64 * sample_rate / frame_len as f64;
                    f >= lo && f < hi
                })
                .collect();
            (w, members)
        })
        .filter(|(_, m): &(f64, Vec<usize>)| !m.is_empty())
        .collect();
    let total: f64 = bands.iter().map(|b| b.0).sum();
    for b in &mut bands {
        b.0 /= total;
    }
    bands
}

fn band_power(t: &SpectrogramTensor, channel: usize, bins: &[usize]) -> f64 {
    bins.iter()
        .map(|&k| {
            t.series(channel, k)
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
        })
        .sum()
}

/// Band-importance weighted SNR of one channel (dB).
pub fn weighted_snr_db(
    x: &SpectrogramTensor,
    v: &SpectrogramTensor,
    channel: usize,
) -> Result<f64> {
    let p = x.params();
    let bands = band_bins(x.bins(), p.sample_rate as f64, p.frame_len);
    if bands.is_empty() {
        return Err(Error::Parameter(
            "no STFT bin falls in any intelligibility band".into(),
        ));
    }
    let (lo, hi) = BAND_SNR_RANGE_DB;
    let mut acc = 0.0;
    for (w, members) in &bands {
        let px = band_power(x, channel, members);
        let pv = band_power(v, channel, members);
        let snr = if pv == 0.0 {
            hi
        } else if px == 0.0 {
            lo
        } else {
            (10.0 * (px / pv).log10()).clamp(lo, hi)
        };
        acc += w * snr;
    }
    Ok(acc)
}

fn snr_with(
    w: Weighting,
    x: &SpectrogramTensor,
    v: &SpectrogramTensor,
    channel: usize,
) -> Result<f64> {
    match w {
        Weighting::Broadband => snr_db(x, v, channel),
        Weighting::Intelligibility => weighted_snr_db(x, v, channel),
    }
}

/// Highest input SNR over all channels.
pub fn max_input_snr_db(
    x: &SpectrogramTensor,
    v: &SpectrogramTensor,
    weighting: Weighting,
) -> Result<f64> {
    if !x.same_shape(v) {
        return Err(Error::Shape(
            "speech and noise tensors differ in shape".into(),
        ));
    }
    let mut best = f64::NEG_INFINITY;
    for c in 0..x.channels() {
        best = best.max(snr_with(weighting, x, v, c)?);
    }
    Ok(best)
}

/// `SNR_out - SNR_in,max`, where the output SNR comes from the filtered speech
/// and noise components `zx`, `zv`.
pub fn delta_snr(
    zx: &SpectrogramTensor,
    zv: &SpectrogramTensor,
    x: &SpectrogramTensor,
    v: &SpectrogramTensor,
    weighting: Weighting,
) -> Result<f64> {
    let out = snr_with(weighting, zx, zv, 0)?;
    Ok(out - max_input_snr_db(x, v, weighting)?)
}

/// Aggregated per-method, per-condition measures.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub angles: Vec<Option<f64>>,
    pub mean_angle: f64,
    /// Bins without a defined angle (failed estimate or missing ground truth).
    pub excluded_bins: usize,
    pub input_snr_db: Vec<f64>,
    pub input_snr_max_db: f64,
    pub output_snr_db: f64,
    pub delta_snr_broadband_db: f64,
    pub delta_snr_weighted_db: f64,
}

impl MetricReport {
    pub fn compute(
        angles: Vec<Option<f64>>,
        zx: &SpectrogramTensor,
        zv: &SpectrogramTensor,
        x: &SpectrogramTensor,
        v: &SpectrogramTensor,
    ) -> Result<Self> {
        let defined: Vec<f64> = angles.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::Parameter(
                "no bin has a defined Hermitian angle".into(),
            ));
        }
        let mean_angle = defined.iter().sum::<f64>() / defined.len() as f64;
        let input_snr_db = (0..x.channels())
            .map(|c| snr_db(x, v, c))
            .collect::<Result<Vec<_>>>()?;
        let input_snr_max_db = input_snr_db
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let output_snr_db = snr_db(zx, zv, 0)?;
        Ok(MetricReport {
            excluded_bins: angles.len() - defined.len(),
            angles,
            mean_angle,
            input_snr_db,
            input_snr_max_db,
            output_snr_db,
            delta_snr_broadband_db: output_snr_db - input_snr_max_db,
            delta_snr_weighted_db: delta_snr(zx, zv, x, v, Weighting::Intelligibility)?,
        })
    }
}
