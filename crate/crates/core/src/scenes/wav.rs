//! WAV ingestion and export. Samples are `T × channels`, interleaved on disk.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    #[default]
    Float32,
    Pcm16,
}

/// Reads a PCM16 or float32 file. Returns the samples and the sample rate.
pub fn wav_read(path: &Path) -> Result<(Array2<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let data: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "unsupported wav encoding {fmt:?} with {bits} bits"
            )))
        }
    };
    if channels == 0 || data.len() % channels != 0 {
        return Err(Error::Format("sample count is not a multiple of the channel count".into()));
    }
    let frames = data.len() / channels;
    let arr = Array2::from_shape_vec((frames, channels), data)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((arr, spec.sample_rate))
}

/// Reads a file and rejects a sample rate other than `expected`.
pub fn wav_read_at(path: &Path, expected: u32) -> Result<Array2<f64>> {
    let (x, rate) = wav_read(path)?;
    if rate != expected {
        return Err(Error::Config(format!(
            "{} has sample rate {rate} Hz, expected {expected} Hz",
            path.display()
        )));
    }
    Ok(x)
}

pub fn wav_write(path: &Path, x: &Array2<f64>, sample_rate: u32, format: SampleFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: x.ncols() as u16,
        sample_rate,
        bits_per_sample: match format {
            SampleFormat::Float32 => 32,
            SampleFormat::Pcm16 => 16,
        },
        sample_format: match format {
            SampleFormat::Float32 => hound::SampleFormat::Float,
            SampleFormat::Pcm16 => hound::SampleFormat::Int,
        },
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for row in x.rows() {
        for &v in row {
            match format {
                SampleFormat::Float32 => w.write_sample(v as f32)?,
                SampleFormat::Pcm16 => {
                    w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?
                }
            }
        }
    }
    w.finalize()?;
    Ok(())
}
