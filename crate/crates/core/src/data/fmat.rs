//! FMAT binary matrix files.
//!
//! Layout (all little-endian):
//!
//! | offset | field                          |
//! |--------|--------------------------------|
//! | 0      | magic `FMAT`                   |
//! | 4      | u32 version (= 1)              |
//! | 8      | u32 kind (0 activations, 1 posteriors) |
//! | 12     | u32 n_frames                   |
//! | 16     | u32 dim                        |
//! | 20     | n_frames * dim f32, frame-major |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMAT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Row-sum tolerance for posterior matrices.
pub const POSTERIOR_SUM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Activations,
    Posteriors,
}

impl MatrixKind {
    fn code(self) -> u32 {
        match self {
            MatrixKind::Activations => 0,
            MatrixKind::Posteriors => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(MatrixKind::Activations),
            1 => Some(MatrixKind::Posteriors),
            _ => None,
        }
    }
}

/// Frame-major matrix of per-frame activations or posteriors for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    kind: MatrixKind,
    n_frames: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FrameMatrix {
    pub fn new(kind: MatrixKind, n_frames: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_frames * dim {
            return Err(Error::Dimension(format!(
                "{n_frames}x{dim} matrix needs {} values, got {}",
                n_frames * dim,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at frame {}, column {}",
                i / dim.max(1),
                i % dim.max(1)
            )));
        }
        Ok(Self {
            kind,
            n_frames,
            dim,
            values,
        })
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.dim..(frame + 1) * self.dim]
    }

    /// Frames whose row is not a probability distribution, with a reason.
    /// Only meaningful for posterior matrices; activations never violate.
    pub fn posterior_violations(&self) -> Vec<(usize, String)> {
        if self.kind != MatrixKind::Posteriors {
            return Vec::new();
        }
        let mut out = Vec::new();
        for t in 0..self.n_frames {
            let row = self.row(t);
            if let Some(v) = row.iter().find(|v| **v < 0.0) {
                out.push((t, format!("negative posterior {v}")));
                continue;
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > POSTERIOR_SUM_TOL {
                out.push((t, format!("posterior row sums to {sum:.6}")));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes one FMAT block. `path` is only used to label errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, message: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(bytes.len(), format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(fail(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..4]))));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let kind = MatrixKind::from_code(word(8)).ok_or_else(|| fail(8, format!("unknown kind {}", word(8))))?;
        let n_frames = word(12) as usize;
        let dim = word(16) as usize;
        let expected = n_frames
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| fail(12, "matrix size overflows".to_string()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < expected {
            return Err(fail(
                bytes.len(),
                format!(
                    "truncated payload: header declares {n_frames}x{dim} ({expected} bytes), found {}",
                    payload.len()
                ),
            ));
        }
        if payload.len() > expected {
            return Err(fail(
                HEADER_LEN + expected,
                format!("{} trailing bytes after payload", payload.len() - expected),
            ));
        }
        let mut values = Vec::with_capacity(n_frames * dim);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(fail(HEADER_LEN + 4 * i, format!("non-finite value {v}")));
            }
            values.push(v);
        }
        Ok(Self {
            kind,
            n_frames,
            dim,
            values,
        })
    }
}

pub fn read_frame_matrix(path: &Path) -> Result<FrameMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FrameMatrix::from_bytes(&bytes, path)
}

pub fn write_frame_matrix(path: &Path, matrix: &FrameMatrix) -> Result<()> {
    fs::write(path, matrix.to_bytes()).map_err(|e| Error::io(path, e))
}
