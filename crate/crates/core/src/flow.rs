//! Normalized directional optical flow and the flow matrix.
//!
//! For frame `t` the flow at a pixel is `D_t · G_t / ‖G_t‖²`, where `G_t` is the
//! forward-difference spatial gradient of frame `t` and `D_t` the temporal
//! difference to frame `t-1`. Stacking the flattened per-frame fields as
//! columns gives the `2P × N` flow matrix.

use std::io::{Read, Write};
use std::path::Path;

use crate::video_io::{FrameSequence, Grid};
use crate::{Error, Exec, Result};

/// Default guard on `‖G‖²` below which a pixel's flow is zeroed.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Per-pixel `(horizontal, vertical)` forward differences, interleaved
/// row-major: `data[2 * (y * width + x) + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GradientField {
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }
}

/// Per-pixel temporal differences, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Forward-difference gradient of one frame. Pixels in the last row or last
/// column have no forward neighbour and get `(0, 0)`.
pub fn spatial_gradient(frame: &Grid) -> GradientField {
    let (w, h) = (frame.width, frame.height);
    let mut data = vec![0.0; 2 * w * h];
    for y in 0..h.saturating_sub(1) {
        let row = &frame.data[y * w..(y + 1) * w];
        let below = &frame.data[(y + 1) * w..(y + 2) * w];
        for x in 0..w - 1 {
            let i = 2 * (y * w + x);
            data[i] = row[x + 1] - row[x];
            data[i + 1] = below[x] - row[x];
        }
    }
    GradientField {
        width: w,
        height: h,
        data,
    }
}

pub fn temporal_diff(curr: &Grid, prev: &Grid) -> Result<DiffField> {
    if !curr.same_shape(prev) {
        return Err(Error::ShapeMismatch {
            op: "temporal_diff",
            expected: format!("{}x{}", prev.width, prev.height),
            found: format!("{}x{}", curr.width, curr.height),
        });
    }
    Ok(DiffField {
        width: curr.width,
        height: curr.height,
        data: curr.data.iter().zip(&prev.data).map(|(a, b)| a - b).collect(),
    })
}

/// Flattened flow column: `D · G / ‖G‖²` per pixel, or zero where
/// `‖G‖² < eps`.
pub fn normalized_flow(d: &DiffField, g: &GradientField, eps: f64) -> Result<Vec<f64>> {
    if d.width != g.width || d.height != g.height {
        return Err(Error::ShapeMismatch {
            op: "normalized_flow",
            expected: format!("{}x{}", g.width, g.height),
            found: format!("{}x{}", d.width, d.height),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("eps must be positive, got {eps}")));
    }
    let mut out = vec![0.0; g.data.len()];
    for (p, &dt) in d.data.iter().enumerate() {
        let (gx, gy) = (g.data[2 * p], g.data[2 * p + 1]);
        let norm2 = gx * gx + gy * gy;
        if norm2 >= eps {
            let s = dt / norm2;
            out[2 * p] = s * gx;
            out[2 * p + 1] = s * gy;
        }
    }
    Ok(out)
}

/// Dense `rows × cols` matrix, row-major. Rows index flattened pixel
/// components, columns index frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Rows per block in the blocked transpose product; fixed so that the
/// reduction order never depends on the thread count.
const ROW_BLOCK: usize = 512;

impl FlowMatrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch {
                op: "flow matrix",
                expected: format!("{rows}x{cols} (nonzero)"),
                found: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::ShapeMismatch {
                op: "flow matrix",
                expected: format!("columns of length {rows}"),
                found: "ragged columns".into(),
            });
        }
        let mut data = vec![0.0; rows * cols];
        for (t, col) in columns.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                data[r * cols + t] = v;
            }
        }
        Self::from_row_major(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v * v;
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `F · v`.
    pub fn mul_vec(&self, v: &[f64], exec: Exec) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        exec.for_each_chunk_mut(&mut out, ROW_BLOCK, |bi, chunk| {
            let r0 = bi * ROW_BLOCK;
            for (k, o) in chunk.iter_mut().enumerate() {
                *o = dot(self.row(r0 + k), v);
            }
        });
        out
    }

    /// `Fᵀ · u`, reduced block by block in row order.
    pub fn mul_t_vec(&self, u: &[f64], exec: Exec) -> Vec<f64> {
        assert_eq!(u.len(), self.rows);
        let blocks = self.rows.div_ceil(ROW_BLOCK);
        let partials = exec.map(blocks, |bi| {
            let mut acc = vec![0.0; self.cols];
            let end = ((bi + 1) * ROW_BLOCK).min(self.rows);
            for r in bi * ROW_BLOCK..end {
                let ur = u[r];
                if ur != 0.0 {
                    for (a, f) in acc.iter_mut().zip(self.row(r)) {
                        *a += ur * f;
                    }
                }
            }
            acc
        });
        let mut out = vec![0.0; self.cols];
        for p in partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    }

    /// `Fᵀ F v` without forming the Gram matrix.
    pub fn gram_mul_vec(&self, v: &[f64], exec: Exec) -> Vec<f64> {
        self.mul_t_vec(&self.mul_vec(v, exec), exec)
    }

    /// Binary dump: eight little-endian u64 header words (magic, version,
    /// rows, cols, four reserved zeros) followed by row-major little-endian f64.
    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = [FLOW_MAGIC, FLOW_VERSION, self.rows as u64, self.cols as u64, 0, 0, 0, 0];
        for h in header {
            w.write_all(&h.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut header = [0u64; 8];
        for h in header.iter_mut() {
            r.read_exact(&mut word)
                .map_err(|e| Error::parse("flow matrix header", e))?;
            *h = u64::from_le_bytes(word);
        }
        if header[0] != FLOW_MAGIC {
            return Err(Error::parse("flow matrix header", "bad magic"));
        }
        if header[1] != FLOW_VERSION {
            return Err(Error::parse(
                "flow matrix header",
                format!("unsupported version {}", header[1]),
            ));
        }
        let (rows, cols) = (header[2] as usize, header[3] as usize);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut word)
                .map_err(|e| Error::parse("flow matrix data", e))?;
            data.push(f64::from_le_bytes(word));
        }
        Self::from_row_major(rows, cols, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_binary(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(&mut std::io::BufReader::new(file))
    }
}

const FLOW_MAGIC: u64 = u64::from_le_bytes(*b"FLOWMATX");
const FLOW_VERSION: u64 = 1;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flow column for frame `t` given frame `t-1`.
pub fn flow_column(curr: &Grid, prev: &Grid, eps: f64) -> Result<Vec<f64>> {
    normalized_flow(&temporal_diff(curr, prev)?, &spatial_gradient(curr), eps)
}

pub fn build_flow_matrix(seq: &FrameSequence, eps: f64) -> Result<FlowMatrix> {
    build_flow_matrix_with(seq, eps, Exec::default())
}

/// Assemble the `2P × N` flow matrix. Column 0 has no predecessor frame and
/// is all zeros, so the matrix keeps one column per frame.
pub fn build_flow_matrix_with(seq: &FrameSequence, eps: f64, exec: Exec) -> Result<FlowMatrix> {
    if seq.len() < 2 {
        return Err(Error::Precondition("need at least 2 frames".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("eps must be positive, got {eps}")));
    }
    let frames = seq.frames();
    let rows = 2 * seq.width() * seq.height();
    let columns = exec.map(frames.len(), |t| {
        if t == 0 {
            Ok(vec![0.0; rows])
        } else {
            flow_column(&frames[t], &frames[t - 1], eps)
        }
    });
    let columns: Vec<Vec<f64>> = columns.into_iter().collect::<Result<_>>()?;
    FlowMatrix::from_columns(&columns)
}
