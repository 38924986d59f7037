//! Minimal WAV support: mono 16-bit signed little-endian PCM only.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum WavError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a RIFF/WAVE file")]
    NotWave,
    #[error("unsupported wav: {0}")]
    Unsupported(String),
    #[error("missing {0} chunk")]
    MissingChunk(&'static str),
}

/// Write samples in [-1, 1] as mono 16-bit PCM. Values outside the range are
/// clipped.
pub fn write_wav_mono16(
    path: &Path,
    samples: &[f64],
    sample_rate: u32,
) -> Result<(), WavError> {
    let mut w = BufWriter::new(File::create(path)?);
    let data_len = (samples.len() * 2) as u32;
    let byte_rate = sample_rate * 2;

    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;

    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&byte_rate.to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?; // bits per sample

    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a mono 16-bit PCM WAV file. Returns the samples scaled to
/// [-1, 1) and the sample rate.
pub fn read_wav_mono16(path: &Path) -> Result<(Vec<f64>, u32), WavError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 12];
    r.read_exact(&mut header)?;
    if &header[0..4] != b"RIFF" || &header[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }

    let mut sample_rate = None;
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut chunk_header = [0u8; 8];
        match r.read_exact(&mut chunk_header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id = &chunk_header[0..4];
        let size = u32::from_le_bytes(chunk_header[4..8].try_into().unwrap()) as usize;
        let mut body = vec![0u8; size];
        r.read_exact(&mut body)?;
        if size % 2 == 1 {
            let mut pad = [0u8; 1];
            // Chunks are word-aligned; the pad byte may be absent at EOF.
            let _ = r.read_exact(&mut pad);
        }
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(WavError::Unsupported("short fmt chunk".into()));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 {
                    return Err(WavError::Unsupported(format!("format tag {format}")));
                }
                if channels != 1 {
                    return Err(WavError::Unsupported(format!("{channels} channels")));
                }
                if bits != 16 {
                    return Err(WavError::Unsupported(format!("{bits} bits per sample")));
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(body),
            _ => {} // skip LIST, fact, etc.
        }
    }

    let sample_rate = sample_rate.ok_or(WavError::MissingChunk("fmt"))?;
    let data = data.ok_or(WavError::MissingChunk("data"))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok((samples, sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_quantized_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let samples: Vec<f64> = (0..2048)
            .map(|n| 0.4 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16000.0).sin())
            .collect();
        write_wav_mono16(&path, &samples, 16000).unwrap();
        let (back, rate) = read_wav_mono16(&path).unwrap();
        assert_eq!(rate, 16000);
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1.0 / 32000.0, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_wave_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.wav");
        std::fs::write(&path, b"definitely not a wav file").unwrap();
        assert!(matches!(read_wav_mono16(&path), Err(WavError::NotWave)));
    }
}
