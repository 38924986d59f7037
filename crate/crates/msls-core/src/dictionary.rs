//! The measurement matrix: one trained magnitude-spectrum column per
//! (direction, audio) class, with lookup metadata and a bit-exact on-disk
//! format (JSON header line + little-endian f64 payload, column-major).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectra::{MagnitudeSpectrum, SpectralGrid, StftConfig};
use crate::util::fnv1a64;

pub const DICT_MAGIC: &str = "MSLS-DICT-1";

#[derive(Error, Debug)]
pub enum DictionaryError {
    #[error("class (direction {direction_id}, audio {audio_id}) has no frames")]
    EmptyClass { direction_id: u32, audio_id: u32 },
    #[error("duplicate class (direction {direction_id}, audio {audio_id})")]
    DuplicateClass { direction_id: u32, audio_id: u32 },
    #[error("frames use mixed spectral grids")]
    GridMismatch,
    #[error("class (direction {direction_id}, audio {audio_id}) trains to a zero column")]
    ZeroColumn { direction_id: u32, audio_id: u32 },
    #[error("no training classes given")]
    Empty,
    #[error("unknown class (direction {direction_id}, audio {audio_id})")]
    UnknownClass { direction_id: u32, audio_id: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("payload size mismatch: header declares {expected} bytes, file holds {got}")]
    PayloadSize { expected: usize, got: usize },
    #[error("payload checksum mismatch")]
    ChecksumMismatch,
    #[error("header dimensions P={p} Q={q} disagree with metadata ({meta} columns)")]
    DimensionMismatch { p: usize, q: usize, meta: usize },
}

/// Identity of one dictionary column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub column_index: usize,
    pub direction_id: u32,
    pub audio_id: u32,
    pub label: String,
}

/// P x Q matrix of trained class spectra, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    data: Vec<f64>,
    p: usize,
    q: usize,
    columns: Vec<ColumnMeta>,
    grid: SpectralGrid,
    stft_config_hash: u64,
}

impl MeasurementMatrix {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn grid(&self) -> SpectralGrid {
        self.grid
    }

    pub fn stft_config_hash(&self) -> u64 {
        self.stft_config_hash
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    /// Column `index` as a P-slice.
    pub fn column_values(&self, index: usize) -> &[f64] {
        &self.data[index * self.p..(index + 1) * self.p]
    }

    /// Look up the column trained for a (direction, audio) class.
    pub fn column(
        &self,
        direction_id: u32,
        audio_id: u32,
    ) -> Result<(&[f64], &ColumnMeta), DictionaryError> {
        let idx = self
            .columns
            .binary_search_by_key(&(direction_id, audio_id), |m| {
                (m.direction_id, m.audio_id)
            })
            .map_err(|_| DictionaryError::UnknownClass {
                direction_id,
                audio_id,
            })?;
        Ok((self.column_values(idx), &self.columns[idx]))
    }

    pub fn meta(&self, index: usize) -> &ColumnMeta {
        &self.columns[index]
    }
}

/// Frames collected for one training class.
pub struct ClassRender {
    pub direction_id: u32,
    pub audio_id: u32,
    pub label: String,
    pub frames: Vec<MagnitudeSpectrum>,
}

/// Build the measurement matrix: one column per class, the element-wise mean
/// of that class's frame spectra, ordered by (direction_id, audio_id).
pub fn train_dictionary(
    renders: &[ClassRender],
    stft: &StftConfig,
) -> Result<MeasurementMatrix, DictionaryError> {
    if renders.is_empty() {
        return Err(DictionaryError::Empty);
    }
    let grid = stft.grid();
    let p = grid.len();

    let mut order: Vec<usize> = (0..renders.len()).collect();
    order.sort_by_key(|&i| (renders[i].direction_id, renders[i].audio_id));
    for pair in order.windows(2) {
        let (a, b) = (&renders[pair[0]], &renders[pair[1]]);
        if (a.direction_id, a.audio_id) == (b.direction_id, b.audio_id) {
            return Err(DictionaryError::DuplicateClass {
                direction_id: a.direction_id,
                audio_id: a.audio_id,
            });
        }
    }

    let q = renders.len();
    let mut data = Vec::with_capacity(p * q);
    let mut columns = Vec::with_capacity(q);
    for (col_idx, &i) in order.iter().enumerate() {
        let r = &renders[i];
        if r.frames.is_empty() {
            return Err(DictionaryError::EmptyClass {
                direction_id: r.direction_id,
                audio_id: r.audio_id,
            });
        }
        let mut mean = vec![0.0f64; p];
        for frame in &r.frames {
            if frame.grid() != grid {
                return Err(DictionaryError::GridMismatch);
            }
            for (m, v) in mean.iter_mut().zip(frame.values()) {
                *m += v;
            }
        }
        let inv = 1.0 / r.frames.len() as f64;
        for m in mean.iter_mut() {
            *m *= inv;
        }
        if mean.iter().all(|&v| v == 0.0) {
            return Err(DictionaryError::ZeroColumn {
                direction_id: r.direction_id,
                audio_id: r.audio_id,
            });
        }
        data.extend_from_slice(&mean);
        columns.push(ColumnMeta {
            column_index: col_idx,
            direction_id: r.direction_id,
            audio_id: r.audio_id,
            label: r.label.clone(),
        });
    }

    Ok(MeasurementMatrix {
        data,
        p,
        q,
        columns,
        grid,
        stft_config_hash: stft.config_hash(),
    })
}

#[derive(Serialize, Deserialize)]
struct DictHeader {
    magic: String,
    p: usize,
    q: usize,
    grid: SpectralGrid,
    stft_config_hash: String,
    payload_checksum: String,
    columns: Vec<ColumnMeta>,
}

fn payload_bytes(data: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Write the dictionary: one JSON header line, then P*Q little-endian f64
/// values in column-major order. Byte-identical for identical matrices.
pub fn save_dictionary(m: &MeasurementMatrix, path: &Path) -> Result<(), DictionaryError> {
    let payload = payload_bytes(&m.data);
    let header = DictHeader {
        magic: DICT_MAGIC.to_string(),
        p: m.p,
        q: m.q,
        grid: m.grid,
        stft_config_hash: format!("{:016x}", m.stft_config_hash),
        payload_checksum: format!("{:016x}", fnv1a64(&payload)),
        columns: m.columns.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)
        .map_err(|e| DictionaryError::CorruptHeader(e.to_string()))?;
    w.write_all(b"\n")?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn load_dictionary(path: &Path) -> Result<MeasurementMatrix, DictionaryError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_line = String::new();
    r.read_line(&mut header_line)?;
    let header: DictHeader = serde_json::from_str(header_line.trim_end_matches('\n'))
        .map_err(|e| DictionaryError::CorruptHeader(e.to_string()))?;
    if header.magic != DICT_MAGIC {
        return Err(DictionaryError::CorruptHeader(format!(
            "bad magic {:?}",
            header.magic
        )));
    }
    if header.columns.len() != header.q {
        return Err(DictionaryError::DimensionMismatch {
            p: header.p,
            q: header.q,
            meta: header.columns.len(),
        });
    }
    let stft_config_hash = u64::from_str_radix(&header.stft_config_hash, 16)
        .map_err(|e| DictionaryError::CorruptHeader(format!("bad config hash: {e}")))?;
    let declared_checksum = u64::from_str_radix(&header.payload_checksum, 16)
        .map_err(|e| DictionaryError::CorruptHeader(format!("bad checksum field: {e}")))?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = header.p * header.q * 8;
    if payload.len() != expected {
        return Err(DictionaryError::PayloadSize {
            expected,
            got: payload.len(),
        });
    }
    if fnv1a64(&payload) != declared_checksum {
        return Err(DictionaryError::ChecksumMismatch);
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(MeasurementMatrix {
        data,
        p: header.p,
        q: header.q,
        columns: header.columns,
        grid: header.grid,
        stft_config_hash,
    })
}
