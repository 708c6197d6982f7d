//! Dense row-major frames × channels matrices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A `T × d` matrix: one row per frame, one column per channel.
///
/// Parameters reuse the same type (a bias is `1 × d`, a convolution weight is
/// `out × (width · in)`), so everything the tape touches has one shape model.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqTensor<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> SeqTensor<S> {
    /// Builds a tensor from row-major data, rejecting empty shapes and non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("from_vec", format!("empty shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, S::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        assert!(rows > 0 && cols > 0, "empty tensor shape {rows}x{cols}");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Unchecked constructor for kernel outputs whose shape is known to be right.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[S] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [S] {
        let c = self.cols;
        &mut self.data[t * c..(t + 1) * c]
    }

    pub fn get(&self, t: usize, c: usize) -> S {
        self.data[t * self.cols + c]
    }

    pub fn set(&mut self, t: usize, c: usize, v: S) {
        self.data[t * self.cols + c] = v;
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    /// Rows `start..end` as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows {
            return Err(Error::shape(
                "slice_rows",
                format!("range {start}..{end} outside 0..{}", self.rows),
            ));
        }
        Ok(Self::from_raw(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        ))
    }

    pub fn cast<T: Scalar>(&self) -> SeqTensor<T> {
        SeqTensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn same_shape<S: Scalar>(op: &'static str, a: &SeqTensor<S>, b: &SeqTensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub fn add<S: Scalar>(a: &SeqTensor<S>, b: &SeqTensor<S>) -> Result<SeqTensor<S>> {
    same_shape("add", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
    Ok(SeqTensor::from_raw(a.rows, a.cols, data))
}

/// Elementwise (Hadamard) product.
pub fn mul<S: Scalar>(a: &SeqTensor<S>, b: &SeqTensor<S>) -> Result<SeqTensor<S>> {
    same_shape("mul", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect();
    Ok(SeqTensor::from_raw(a.rows, a.cols, data))
}

/// Stacks parts side by side along the channel axis, left to right.
pub fn concat_channels<S: Scalar>(parts: &[&SeqTensor<S>]) -> Result<SeqTensor<S>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no parts"))?;
    let rows = first.rows;
    if let Some(p) = parts.iter().find(|p| p.rows != rows) {
        return Err(Error::shape(
            "concat_channels",
            format!("frame count {} vs {rows}", p.rows),
        ));
    }
    let cols: usize = parts.iter().map(|p| p.cols).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for t in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(t));
        }
    }
    Ok(SeqTensor::from_raw(rows, cols, data))
}

/// Inverse of [`concat_channels`]: cuts `x` into consecutive channel groups.
pub fn split_channels<S: Scalar>(x: &SeqTensor<S>, widths: &[usize]) -> Result<Vec<SeqTensor<S>>> {
    if widths.iter().sum::<usize>() != x.cols || widths.contains(&0) {
        return Err(Error::shape(
            "split_channels",
            format!("widths {widths:?} do not partition {} channels", x.cols),
        ));
    }
    let mut out: Vec<Vec<S>> = widths.iter().map(|w| Vec::with_capacity(w * x.rows)).collect();
    for t in 0..x.rows {
        let mut off = 0;
        for (buf, &w) in out.iter_mut().zip(widths) {
            buf.extend_from_slice(&x.row(t)[off..off + w]);
            off += w;
        }
    }
    Ok(out
        .into_iter()
        .zip(widths)
        .map(|(d, &w)| SeqTensor::from_raw(x.rows, w, d))
        .collect())
}

/// Divides each row by `sqrt(|row|^2 + eps^2)`.
pub fn l2_normalize_rows<S: Scalar>(x: &SeqTensor<S>, eps: S) -> SeqTensor<S> {
    let mut out = x.clone();
    for t in 0..x.rows {
        let row = out.row_mut(t);
        let inv = S::one() / row_norm(row, eps);
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    out
}

pub(crate) fn row_norm<S: Scalar>(row: &[S], eps: S) -> S {
    let sq: S = row.iter().map(|&v| v * v).sum();
    (sq + eps * eps).sqrt()
}

/// Adjoint of [`l2_normalize_rows`] given its input, its output and the upstream gradient.
pub(crate) fn l2_normalize_rows_backward<S: Scalar>(
    x: &SeqTensor<S>,
    y: &SeqTensor<S>,
    grad: &SeqTensor<S>,
    eps: S,
) -> SeqTensor<S> {
    let mut gx = SeqTensor::zeros(x.rows, x.cols);
    for t in 0..x.rows {
        let n = row_norm(x.row(t), eps);
        let yr = y.row(t);
        let gr = grad.row(t);
        let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &gv) in gx.row_mut(t).iter_mut().zip(yr).zip(gr) {
            *o = (gv - yv * dot) / n;
        }
    }
    gx
}
