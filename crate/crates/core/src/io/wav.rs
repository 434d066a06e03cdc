//! Multichannel WAV I/O.
//!
//! Reading accepts 16-bit PCM, scaled by `1/32768` so `-32768` maps to
//! exactly `-1.0`, and 32-bit IEEE float, passed through. Writing always
//! produces 32-bit IEEE float without clipping.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct WavData {
    /// One vector per channel.
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl WavData {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn deinterleave(samples: Vec<f64>, channels: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(samples.len() / channels); channels];
    for (i, s) in samples.into_iter().enumerate() {
        out[i % channels].push(s);
    }
    out
}

pub fn read_wav(path: &Path) -> Result<WavData> {
    let reader = WavReader::open(path).map_err(|e| format_error(path, e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let samples: Vec<f64> =
        match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Int, 16) => reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| f64::from(v) / 32768.0))
                .collect::<std::result::Result<_, _>>()?,
            (SampleFormat::Float, 32) => reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()?,
            (fmt, bits) => return Err(format_error(
                path,
                format!(
                    "unsupported codec: {bits}-bit {fmt:?}, expected 16-bit PCM or 32-bit float"
                ),
            )),
        };
    if !samples.len().is_multiple_of(channels) {
        return Err(format_error(
            path,
            "sample count is not a multiple of the channel count",
        ));
    }
    Ok(WavData {
        channels: deinterleave(samples, channels),
        sample_rate: spec.sample_rate,
    })
}

/// Reads a file and checks that it has `expected` channels.
pub fn read_wav_channels(path: &Path, expected: usize) -> Result<WavData> {
    let data = read_wav(path)?;
    if data.num_channels() != expected {
        return Err(format_error(
            path,
            format!(
                "expected {expected} channels, file has {}",
                data.num_channels()
            ),
        ));
    }
    Ok(data)
}

/// Writes 32-bit float samples, one slice per channel.
pub fn write_wav(path: &Path, channels: &[Vec<f64>], sample_rate: u32) -> Result<()> {
    if channels.is_empty() || channels.len() > usize::from(u16::MAX) {
        return Err(format_error(path, "channel count out of range"));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(format_error(path, "channels differ in length"));
    }
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for n in 0..len {
        for c in channels {
            writer.write_sample(c[n] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Writes 16-bit PCM; samples are scaled by 32768 and must already be
/// integers in range after scaling.
pub fn write_wav_pcm16(path: &Path, channels: &[Vec<f64>], sample_rate: u32) -> Result<()> {
    let len = channels.first().map_or(0, Vec::len);
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for n in 0..len {
        for c in channels {
            let v = (c[n] * 32768.0).round();
            if !(-32768.0..=32767.0).contains(&v) {
                return Err(format_error(
                    path,
                    format!("sample {} out of 16-bit range", c[n]),
                ));
            }
            writer.write_sample(v as i16)?;
        }
    }
    writer.finalize()?;
    Ok(())
}
