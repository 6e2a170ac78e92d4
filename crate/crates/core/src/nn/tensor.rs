use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`. Vectors are `1 x n` or `n x 1` tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "tensor data length {} does not match shape {rows}x{cols}",
            data.len()
        );
        Self { rows, cols, data }
    }

    /// Single row holding `values`.
    pub fn row(values: &[f64]) -> Self {
        Self::from_vec(1, values.len(), values.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    /// Stacks equally sized row vectors into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single entry of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out[r, :] = x[r, :] * w` accumulated into `out`, with `w` being `inner x cols`.
///
/// The summation order for each output entry depends only on `inner`, never on
/// the number of rows, so batched and unbatched evaluation agree bitwise.
pub(crate) fn matmul_acc(x: &[f64], w: &[f64], out: &mut [f64], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let or = &mut out[r * cols..(r + 1) * cols];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wk = &w[k * cols..(k + 1) * cols];
            for (o, &wv) in or.iter_mut().zip(wk) {
                *o += xv * wv;
            }
        }
    }
}

/// `dx[r, k] += sum_j dy[r, j] * w[k, j]`.
pub(crate) fn matmul_grad_input(dy: &[f64], w: &[f64], dx: &mut [f64], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let dyr = &dy[r * cols..(r + 1) * cols];
        let dxr = &mut dx[r * inner..(r + 1) * inner];
        for (k, d) in dxr.iter_mut().enumerate() {
            let wk = &w[k * cols..(k + 1) * cols];
            let mut s = 0.0;
            for (a, b) in dyr.iter().zip(wk) {
                s += a * b;
            }
            *d += s;
        }
    }
}

/// `dw[k, j] += sum_r x[r, k] * dy[r, j]`.
pub(crate) fn matmul_grad_weight(x: &[f64], dy: &[f64], dw: &mut [f64], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let dyr = &dy[r * cols..(r + 1) * cols];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let dwk = &mut dw[k * cols..(k + 1) * cols];
            for (o, &g) in dwk.iter_mut().zip(dyr) {
                *o += xv * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let w = [1.0, 0.5, -1.0, 2.0, 0.0, 3.0]; // 3x2
        let mut out = [0.0; 4];
        matmul_acc(&x, &w, &mut out, 2, 3, 2);
        assert_eq!(out, [1.0 - 2.0, 0.5 + 4.0 + 9.0, 4.0 - 5.0, 2.0 + 10.0 + 18.0]);
    }

    #[test]
    fn batched_rows_equal_single_rows() {
        let x = [0.3, -1.7, 2.2, 0.9, 0.1, -0.4];
        let w = [0.11, -0.7, 0.25, 1.3, -0.05, 0.6];
        let mut both = [0.0; 4];
        matmul_acc(&x, &w, &mut both, 2, 3, 2);
        for r in 0..2 {
            let mut single = [0.0; 2];
            matmul_acc(&x[r * 3..r * 3 + 3], &w, &mut single, 1, 3, 2);
            assert_eq!(single, both[r * 2..r * 2 + 2]);
        }
    }
}
