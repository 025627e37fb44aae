//! Impulse-response file readers and writers.
//!
//! CSV holds one sample per line with an optional `sample` header. Values
//! are written with 17 significant digits so a write/read cycle is exact
//! for `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::ImpulseResponse;

/// Loads by extension: `.wav` through the audio reader, anything else as CSV.
pub fn load_impulse_response<T: Real>(path: &Path, sample_rate_hz: u32) -> Result<ImpulseResponse<T>> {
    let is_wav = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        read_wav(path, sample_rate_hz)
    } else {
        read_csv(path, sample_rate_hz)
    }
}

pub fn read_csv<T: Real>(path: &Path, sample_rate_hz: u32) -> Result<ImpulseResponse<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut samples = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let field = record.get(0).unwrap_or("");
        if line == 0 && field.eq_ignore_ascii_case("sample") {
            continue;
        }
        if field.is_empty() {
            continue;
        }
        let value: f64 = field
            .parse()
            .map_err(|_| parse_err(format!("line {}: `{field}` is not a number", line + 1)))?;
        samples.push(T::of(value));
    }
    ImpulseResponse::new(samples, sample_rate_hz).map_err(|e| parse_err(e.to_string()))
}

pub fn write_csv<T: Real>(path: &Path, h: &ImpulseResponse<T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "sample")?;
        for s in h.samples() {
            writeln!(out, "{:.16e}", s.as_f64())?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a single-channel WAV file; integer PCM is scaled to [-1, 1).
pub fn read_wav<T: Real>(path: &Path, sample_rate_hz: u32) -> Result<ImpulseResponse<T>> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => parse_err(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(parse_err(format!(
            "expected mono audio, found {} channels",
            spec.channels
        )));
    }
    if spec.sample_rate != sample_rate_hz {
        return Err(Error::RateMismatch {
            left: spec.sample_rate,
            right: sample_rate_hz,
        });
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| parse_err(e.to_string()))?;
    ImpulseResponse::from_f64(&samples, sample_rate_hz)
}
