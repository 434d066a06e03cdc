//! Square-root-Hann STFT analysis and overlap-add synthesis at 50% overlap.
//!
//! The periodic window `w[n] = sqrt(0.5 - 0.5 cos(2 pi n / N))` satisfies
//! `w[n]^2 + w[n + N/2]^2 = 1`, so analysis followed by synthesis is the
//! identity on every sample covered by two frames. Partial frames at either
//! end are dropped; the first and last `hop` samples are not reconstructed.

use std::f64::consts::PI;

use num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftParams {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            sample_rate: 16_000,
            frame_len: 512,
            hop: 256,
        }
    }
}

impl StftParams {
    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::Parameter("frame_len must be even".into()));
        }
        if self.hop != self.frame_len / 2 {
            return Err(Error::Parameter("hop must equal frame_len / 2".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Parameter("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// Parameters whose frame length yields `bins` one-sided bins.
    pub fn for_bins(bins: usize, sample_rate: u32) -> Self {
        let frame_len = 2 * bins.saturating_sub(1);
        StftParams {
            sample_rate,
            frame_len,
            hop: frame_len / 2,
        }
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.frame_len.max(1) as f64
    }
}

/// Periodic square-root-Hann window.
pub fn sqrt_hann(frame_len: usize) -> Vec<f64> {
    (0..frame_len)
        .map(|n| {
            (0.5 - 0.5 * (2.0 * PI * n as f64 / frame_len as f64).cos())
                .max(0.0)
                .sqrt()
        })
        .collect()
}

/// Complex STFT coefficients indexed `[channel, bin, frame]`; frames are the
/// fastest-varying axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramTensor {
    channels: usize,
    bins: usize,
    frames: usize,
    params: StftParams,
    data: Vec<Complex64>,
}

impl SpectrogramTensor {
    pub fn zeros(channels: usize, bins: usize, frames: usize, params: StftParams) -> Self {
        SpectrogramTensor {
            channels,
            bins,
            frames,
            params,
            data: vec![Complex64::new(0.0, 0.0); channels * bins * frames],
        }
    }

    /// Builds a tensor from per-bin blocks laid out `[bin][frame][channel]`,
    /// which is how the per-bin generators produce them.
    pub fn from_bin_major(
        channels: usize,
        frames: usize,
        params: StftParams,
        per_bin: &[Vec<Complex64>],
    ) -> Self {
        let bins = per_bin.len();
        let mut t = SpectrogramTensor::zeros(channels, bins, frames, params);
        for (k, block) in per_bin.iter().enumerate() {
            assert_eq!(block.len(), frames * channels);
            for l in 0..frames {
                for c in 0..channels {
                    t.data[(c * bins + k) * frames + l] = block[l * channels + c];
                }
            }
        }
        t
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn params(&self) -> StftParams {
        self.params
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.bins, self.frames)
    }

    #[inline]
    fn offset(&self, c: usize, k: usize) -> usize {
        (c * self.bins + k) * self.frames
    }

    #[inline]
    pub fn get(&self, c: usize, k: usize, l: usize) -> Complex64 {
        self.data[self.offset(c, k) + l]
    }

    #[inline]
    pub fn set(&mut self, c: usize, k: usize, l: usize, value: Complex64) {
        let o = self.offset(c, k);
        self.data[o + l] = value;
    }

    /// All frames of one channel and bin.
    pub fn series(&self, c: usize, k: usize) -> &[Complex64] {
        let o = self.offset(c, k);
        &self.data[o..o + self.frames]
    }

    pub fn series_mut(&mut self, c: usize, k: usize) -> &mut [Complex64] {
        let o = self.offset(c, k);
        &mut self.data[o..o + self.frames]
    }

    /// Multichannel snapshot `y(k, l)`.
    pub fn snapshot(&self, k: usize, l: usize) -> Vec<Complex64> {
        (0..self.channels).map(|c| self.get(c, k, l)).collect()
    }

    pub fn channel(&self, c: usize) -> SpectrogramTensor {
        let start = self.offset(c, 0);
        SpectrogramTensor {
            channels: 1,
            bins: self.bins,
            frames: self.frames,
            params: self.params,
            data: self.data[start..start + self.bins * self.frames].to_vec(),
        }
    }

    pub fn same_shape(&self, other: &SpectrogramTensor) -> bool {
        self.shape() == other.shape()
    }

    fn zip_with(
        &self,
        other: &SpectrogramTensor,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "tensor shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(SpectrogramTensor {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..self.clone()
        })
    }

    pub fn try_add(&self, other: &SpectrogramTensor) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn try_sub(&self, other: &SpectrogramTensor) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, s: f64) -> Self {
        SpectrogramTensor {
            data: self.data.iter().map(|z| z * s).collect(),
            ..self.clone()
        }
    }

    /// Sum of `|X|^2` over all bins and frames of one channel.
    pub fn channel_power(&self, c: usize) -> f64 {
        let start = self.offset(c, 0);
        self.data[start..start + self.bins * self.frames]
            .iter()
            .map(|z| z.norm_sqr())
            .sum()
    }

    /// Like [`channel_power`](Self::channel_power) but restricted to frames
    /// where `mask[l]` is set.
    pub fn channel_power_masked(&self, c: usize, mask: &[bool]) -> f64 {
        (0..self.bins)
            .map(|k| {
                self.series(c, k)
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(z, _)| z.norm_sqr())
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Number of full frames that fit in `len` samples.
pub fn frame_count(len: usize, params: &StftParams) -> usize {
    if len < params.frame_len {
        0
    } else {
        1 + (len - params.frame_len) / params.hop
    }
}

/// Analyzes every channel of `signal` (one `Vec` per channel).
pub fn analyze(signal: &[Vec<f64>], params: StftParams) -> Result<SpectrogramTensor> {
    params.validate()?;
    let channels = signal.len();
    if channels == 0 {
        return Err(Error::Shape("no channels".into()));
    }
    let len = signal[0].len();
    if signal.iter().any(|ch| ch.len() != len) {
        return Err(Error::Shape("channels differ in length".into()));
    }
    if len < params.frame_len {
        return Err(Error::Parameter(format!(
            "signal length {len} is shorter than frame_len {}",
            params.frame_len
        )));
    }
    let n = params.frame_len;
    let frames = frame_count(len, &params);
    let bins = params.bins();
    let window = sqrt_hann(n);
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
    let mut input = fft.make_input_vec();
    let mut output = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let mut out = SpectrogramTensor::zeros(channels, bins, frames, params);
    for (c, ch) in signal.iter().enumerate() {
        for l in 0..frames {
            let start = l * params.hop;
            for (i, x) in input.iter_mut().enumerate() {
                *x = ch[start + i] * window[i];
            }
            fft.process_with_scratch(&mut input, &mut output, &mut scratch)
                .map_err(|e| Error::Parameter(e.to_string()))?;
            for (k, z) in output.iter().enumerate() {
                out.set(c, k, l, *z);
            }
        }
    }
    Ok(out)
}

/// Overlap-add synthesis; output length is `(frames - 1) * hop + frame_len`.
pub fn synthesize(spec: &SpectrogramTensor) -> Result<Vec<Vec<f64>>> {
    let params = spec.params();
    params.validate()?;
    if spec.bins() != params.bins() {
        return Err(Error::Shape(format!(
            "{} bins do not match frame_len {}",
            spec.bins(),
            params.frame_len
        )));
    }
    let n = params.frame_len;
    let frames = spec.frames();
    if frames == 0 {
        return Ok(vec![Vec::new(); spec.channels()]);
    }
    let len = (frames - 1) * params.hop + n;
    let window = sqrt_hann(n);
    let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut input = ifft.make_input_vec();
    let mut output = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let norm = 1.0 / n as f64;
    let mut out = Vec::with_capacity(spec.channels());
    for c in 0..spec.channels() {
        let mut y = vec![0.0; len];
        for l in 0..frames {
            for (k, z) in input.iter_mut().enumerate() {
                *z = spec.get(c, k, l);
            }
            // the inverse real FFT needs purely real DC and Nyquist bins
            input[0].im = 0.0;
            input[n / 2].im = 0.0;
            ifft.process_with_scratch(&mut input, &mut output, &mut scratch)
                .map_err(|e| Error::Parameter(e.to_string()))?;
            let start = l * params.hop;
            for (i, v) in output.iter().enumerate() {
                y[start + i] += v * norm * window[i];
            }
        }
        out.push(y);
    }
    Ok(out)
}
