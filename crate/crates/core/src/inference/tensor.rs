//! Dense row-major matrices and the handful of kernels the encoder needs.
//! Arithmetic is `f64` throughout; weights are widened from their stored `f32`.

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.cols)
    }

    pub fn rows_iter_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.cols)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Columns `[start, start + width)` as a contiguous matrix.
    pub fn column_block(&self, start: usize, width: usize) -> Matrix {
        let mut out = Vec::with_capacity(self.rows * width);
        for row in self.rows_iter() {
            out.extend_from_slice(&row[start..start + width]);
        }
        Matrix::from_vec(self.rows, width, out)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn dot_f32(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &y)| x * y as f64).sum()
}

/// `x W^T + b` with `W` stored `[out, in]`.
pub fn linear(x: &Matrix, weight: &[f32], bias: &[f32]) -> Matrix {
    let (n, d_in) = x.shape();
    let d_out = bias.len();
    assert_eq!(weight.len(), d_out * d_in, "linear weight shape");
    let mut out = Matrix::zeros(n, d_out);
    for (x_row, out_row) in x.rows_iter().zip(out.rows_iter_mut()) {
        for ((o, w_row), &b) in out_row.iter_mut().zip(weight.chunks_exact(d_in)).zip(bias) {
            *o = dot_f32(x_row, w_row) + b as f64;
        }
    }
    out
}

/// In-place softmax with max subtraction.
pub fn softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn layer_norm(x: &mut Matrix, gamma: &[f32], beta: &[f32], eps: f64) {
    let d = x.cols() as f64;
    for row in x.rows_iter_mut() {
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) * inv * g as f64 + b as f64;
        }
    }
}

pub fn relu_in_place(x: &mut Matrix) {
    for row in x.rows_iter_mut() {
        for v in row {
            *v = v.max(0.0);
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Standard sinusoidal encoding: channel `2i` is `sin(pos / 10000^(2i/d))`,
/// channel `2i + 1` the matching cosine.
pub fn sinusoidal_encoding(positions: usize, d_model: usize) -> Matrix {
    let mut pe = Matrix::zeros(positions, d_model);
    for (pos, row) in pe.rows_iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let pair = (c / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d_model as f64);
            *v = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
