//! Dense real matrices and the on-disk token tensor format.
//!
//! A token file is a single UTF-8 JSON header line followed by a little-endian
//! `f32` payload in row-major order:
//!
//! ```text
//! {"shape":[2,3],"dtype":"f32","layout":"row-major","endian":"little"}\n<24 bytes>
//! ```
//!
//! A three-element shape `[M, L, d]` stores M frames of a video back to back.
//! Values are widened to `f64` on read; all arithmetic in this crate is `f64`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite reals with at least one row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// An L×d matrix of encoder tokens, one token per row.
pub type TokenMatrix = Matrix;

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be at least 1x1");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Caller guarantees shape and finiteness.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        debug_assert!(rows > 0 && cols > 0);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_parts(indices.len(), self.cols, data)
    }

    /// Stacks matrices of equal width top to bottom.
    pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack zero matrices".into()))?;
        let cols = first.cols;
        if let Some(bad) = parts.iter().find(|m| m.cols != cols) {
            return Err(Error::Dimension(format!(
                "cannot stack widths {cols} and {}",
                bad.cols
            )));
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix::from_parts(rows, cols, data))
    }

    /// Places matrices of equal height side by side.
    pub fn hstack(parts: &[Matrix]) -> Result<Matrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack zero matrices".into()))?;
        let rows = first.rows;
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::Dimension(format!(
                "cannot join heights {rows} and {}",
                bad.rows
            )));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Matrix::from_parts(rows, cols, data))
    }

    /// `self · rhs`. Rows are computed independently (in parallel on the
    /// current rayon pool) with a fixed summation order, so the result does
    /// not depend on the thread count.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let n = rhs.cols;
        let mut out = vec![0.0; self.rows * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
            let lhs_row = self.row(i);
            for (k, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        });
        Ok(Matrix::from_parts(self.rows, n, out))
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix::from_parts(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_parts(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix::from_parts(self.rows, self.cols, data))
    }

    /// Column means; every row weighted equally.
    pub fn column_mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.rows as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Adds `offset` to every row.
    pub fn translate(&self, offset: &[f64]) -> Result<Matrix> {
        if offset.len() != self.cols {
            return Err(Error::Dimension(format!(
                "offset width {} for matrix width {}",
                offset.len(),
                self.cols
            )));
        }
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.cols) {
            for (v, o) in row.iter_mut().zip(offset) {
                *v += o;
            }
        }
        Ok(Matrix::from_parts(self.rows, self.cols, data))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// True when both matrices hold the same bit patterns.
    pub fn bitwise_eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Ordered video frames sharing one (L, d) shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<TokenMatrix>,
}

impl FrameSequence {
    pub fn new(frames: Vec<TokenMatrix>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Dimension("a video needs at least one frame".into()))?;
        let shape = first.shape();
        if let Some((m, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape) {
            return Err(Error::Dimension(format!(
                "frame {m} has shape {:?}, expected {shape:?}",
                f.shape()
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[TokenMatrix] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.frames[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].cols()
    }
}

/// Encoded audio features (L_a × d_a).
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatures(pub Matrix);

impl AudioFeatures {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
    layout: String,
    endian: String,
}

const DTYPE: &str = "f32";
const LAYOUT: &str = "row-major";
const ENDIAN: &str = "little";

fn encode(shape: Vec<usize>, values: &[f64]) -> Result<Vec<u8>> {
    let header = Header {
        shape,
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
        endian: ENDIAN.into(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
    bytes.push(b'\n');
    bytes.reserve(values.len() * 4);
    for (index, &v) in values.iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::NonFinite { index });
        }
        bytes.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(bytes)
}

fn decode(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("missing header line".into()))?;
    let text = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?;
    let header: Header =
        serde_json::from_str(text).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.dtype != DTYPE || header.layout != LAYOUT || header.endian != ENDIAN {
        return Err(Error::MalformedHeader(format!(
            "unsupported encoding {}/{}/{}",
            header.dtype, header.layout, header.endian
        )));
    }
    if !(2..=3).contains(&header.shape.len()) || header.shape.contains(&0) {
        return Err(Error::MalformedHeader(format!(
            "shape {:?} must have 2 or 3 positive dims",
            header.shape
        )));
    }
    let expected: usize = header.shape.iter().product();
    let payload = &bytes[newline + 1..];
    if payload.len() != expected * 4 {
        return Err(Error::ShapeMismatch {
            expected,
            found: payload.len() / 4,
        });
    }
    let mut values = Vec::with_capacity(expected);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        values.push(f64::from(v));
    }
    Ok((header.shape, values))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_matrix(matrix: &Matrix) -> Result<Vec<u8>> {
    encode(vec![matrix.rows, matrix.cols], &matrix.data)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let (shape, values) = decode(bytes)?;
    match shape.as_slice() {
        [l, d] => Ok(Matrix::from_parts(*l, *d, values)),
        [1, l, d] => Ok(Matrix::from_parts(*l, *d, values)),
        _ => Err(Error::MalformedHeader(format!(
            "expected a 2-D tensor, found shape {shape:?}"
        ))),
    }
}

pub fn read_token_file(path: impl AsRef<Path>) -> Result<TokenMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
}

pub fn write_token_file(matrix: &TokenMatrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_matrix(matrix)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes a video as one `[M, L, d]` tensor.
pub fn write_frames_file(video: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
    let values: Vec<f64> = video
        .frames
        .iter()
        .flat_map(|f| f.data.iter().copied())
        .collect();
    let bytes = encode(
        vec![video.frame_count(), video.tokens_per_frame(), video.dim()],
        &values,
    )?;
    write_atomic(path.as_ref(), &bytes)
}

/// Reads a video either from a single `[M, L, d]` (or `[L, d]`) tensor file or
/// from a directory of `frame_00000…` tensor files taken in name order.
pub fn read_video(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("frame_"))
            })
            .collect();
        names.sort();
        let frames = names
            .iter()
            .map(read_token_file)
            .collect::<Result<Vec<_>>>()?;
        return FrameSequence::new(frames);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (shape, values) = decode(&bytes)?;
    let (m, l, d) = match shape.as_slice() {
        [l, d] => (1, *l, *d),
        [m, l, d] => (*m, *l, *d),
        _ => unreachable!("decode validates rank"),
    };
    let frames = values
        .chunks_exact(l * d)
        .map(|chunk| Matrix::from_parts(l, d, chunk.to_vec()))
        .collect::<Vec<_>>();
    debug_assert_eq!(frames.len(), m);
    FrameSequence::new(frames)
}

/// File name for frame `m` in a frame directory.
pub fn frame_file_name(m: usize) -> String {
    format!("frame_{m:05}.tok")
}
