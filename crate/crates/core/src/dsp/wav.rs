use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::Format(format!("{}: unsupported WAV encoding", path.display())),
        hound::Error::FormatError(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        hound::Error::TooWide => Error::Format(format!("{}: sample width too large", path.display())),
        // The file itself opened fine, so read failures here mean the
        // chunk sizes promise more bytes than exist.
        hound::Error::IoError(io) => Error::Parse(format!("{}: truncated file ({io})", path.display())),
        other => Error::Parse(format!("{}: {other}", path.display())),
    }
}

/// Read a RIFF/WAVE file as a mono waveform.
///
/// Accepts 8/16/24-bit integer and 32-bit float PCM with one or two
/// channels. Integer samples are divided by the largest positive code so a
/// full-scale file reads back as exactly ±1; channels are averaged.
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = WavReader::new(BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    decode(reader, path)
}

fn decode<R: Read>(reader: WavReader<R>, path: &Path) -> Result<Waveform> {
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::Format(format!("{}: {} channels", path.display(), spec.channels)));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24)) => {
            let full_scale = ((1i64 << (bits - 1)) - 1) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / full_scale).clamp(-1.0, 1.0)))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (SampleFormat::Float, 32) => {
            let v: Vec<f32> = reader
                .into_samples::<f32>()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?;
            if v.iter().any(|s| !s.is_finite()) {
                return Err(Error::Parse(format!("{}: non-finite float sample", path.display())));
            }
            v.into_iter().map(|s| (s as f64).clamp(-1.0, 1.0)).collect()
        }
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    let channels = spec.channels as usize;
    if !interleaved.len().is_multiple_of(channels) {
        return Err(Error::Parse(format!("{}: truncated frame", path.display())));
    }
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|c| 0.5 * (c[0] + c[1]))
            .collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Write a waveform as 16-bit mono PCM. Samples are clipped to [-1, 1].
pub fn write_wav_pcm16(path: &Path, w: &Waveform) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_pcm16(BufWriter::new(file), w).map_err(|e| map_hound(path, e))
}

fn write_pcm16<W: Write + Seek>(out: W, w: &Waveform) -> std::result::Result<(), hound::Error> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::new(out, spec)?;
    for &s in &w.samples {
        writer.write_sample(quantize16(s))?;
    }
    writer.finalize()
}

pub(crate) fn quantize16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}
