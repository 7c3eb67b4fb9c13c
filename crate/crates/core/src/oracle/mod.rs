//! Reference dense linear algebra and LSTM math in 64-bit floats.
//!
//! Nothing here knows about slices or timing; it is the ground truth the
//! simulator's functional path is checked against.

pub mod conv;
pub mod translator;

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("matrix entries must be finite".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::from_vec(rows.len(), cols, data).expect("ragged rows")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Uniform entries in [-scale, scale).
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn col_slice(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_fn(self.rows, end - start, |r, c| self[(r, start + c)])
    }

    /// `[self | other]`.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "hconcat of {} and {} rows",
                self.rows, other.rows
            )));
        }
        Ok(Matrix::from_fn(self.rows, self.cols + other.cols, |r, c| {
            if c < self.cols {
                self[(r, c)]
            } else {
                other[(r, c - self.cols)]
            }
        }))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Matrix, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max-norm relative difference `max|a-b| / max|b|` against a reference.
    /// Falls back to the absolute difference when the reference is all zero.
    pub fn rel_error(&self, reference: &Matrix) -> f64 {
        assert_eq!(self.shape(), reference.shape(), "rel_error shape");
        let diff = self
            .data
            .iter()
            .zip(&reference.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = reference.max_abs();
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Dense product with 64-bit accumulation, summing over the common
/// dimension in increasing index order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a.data[i * a.cols + k] * b.data[k * b.cols + j];
            }
            out.data[i * b.cols + j] = acc;
        }
    }
    Ok(out)
}

/// `w - eta * grad`.
pub fn sgd_update(w: &Matrix, grad: &Matrix, eta: f64) -> Result<Matrix> {
    if eta.is_nan() || eta < 0.0 {
        return Err(Error::Shape(format!("learning rate must be >= 0, got {eta}")));
    }
    w.zip(grad, "sgd_update", |w, g| w - eta * g)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// LSTM parameters. The weight is `2H x 4H`; its column groups are the
/// input, forget, candidate and output gates, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub hidden: usize,
    pub weight: Matrix,
}

/// Index of each gate's H-wide column group in the 4H axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

impl LstmParams {
    pub fn new(hidden: usize, weight: Matrix) -> Result<Self> {
        if weight.shape() != (2 * hidden, 4 * hidden) {
            return Err(Error::Shape(format!(
                "LSTM weight must be {}x{}, got {:?}",
                2 * hidden,
                4 * hidden,
                weight.shape()
            )));
        }
        Ok(LstmParams { hidden, weight })
    }
}

/// Everything the backward pass needs from a forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    /// `[x | h_prev]`, batch x 2H.
    pub input: Matrix,
    pub c_prev: Matrix,
    /// Pre-activation gates, batch x 4H.
    pub z: Matrix,
    pub c: Matrix,
    pub h: Matrix,
}

/// Gate activations from pre-activations `z`, as (i, f, g, o).
fn gates(z: &Matrix, hidden: usize) -> [Matrix; 4] {
    let group = |g: usize, f: fn(f64) -> f64| Matrix::from_fn(z.rows(), hidden, |r, c| f(z[(r, g * hidden + c)]));
    [
        group(0, sigmoid),
        group(1, sigmoid),
        group(2, f64::tanh),
        group(3, sigmoid),
    ]
}

/// Pointwise half of the cell: from pre-activations and previous cell state
/// to `(h, c)`.
pub fn lstm_pointwise(z: &Matrix, c_prev: &Matrix, hidden: usize) -> Result<(Matrix, Matrix)> {
    if z.cols() != 4 * hidden || c_prev.shape() != (z.rows(), hidden) {
        return Err(Error::Shape(format!(
            "lstm pointwise: z {:?}, c_prev {:?}, H {hidden}",
            z.shape(),
            c_prev.shape()
        )));
    }
    let [i, f, g, o] = gates(z, hidden);
    let c = f.hadamard(c_prev)?.add(&i.hadamard(&g)?)?;
    let h = o.hadamard(&c.map(f64::tanh))?;
    Ok((h, c))
}

/// One LSTM step: `z = [x | h_prev] W`, then the gate nonlinearities.
pub fn lstm_cell(
    params: &LstmParams,
    x: &Matrix,
    h_prev: &Matrix,
    c_prev: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    let cache = lstm_forward(params, x, h_prev, c_prev)?;
    Ok((cache.h, cache.c, cache.z))
}

pub fn lstm_forward(params: &LstmParams, x: &Matrix, h_prev: &Matrix, c_prev: &Matrix) -> Result<LstmCache> {
    let h = params.hidden;
    let batch = x.rows();
    for (name, m) in [("x", x), ("h_prev", h_prev), ("c_prev", c_prev)] {
        if m.shape() != (batch, h) {
            return Err(Error::Shape(format!(
                "lstm_cell: {name} is {:?}, expected {batch}x{h}",
                m.shape()
            )));
        }
    }
    let input = x.hconcat(h_prev)?;
    let z = matmul(&input, &params.weight)?;
    let (h_out, c) = lstm_pointwise(&z, c_prev, h)?;
    Ok(LstmCache {
        input,
        c_prev: c_prev.clone(),
        z,
        c,
        h: h_out,
    })
}

/// Gradient of the pointwise half: returns `(dz, dc_prev)` given upstream
/// gradients on `h` and `c`.
pub fn lstm_pointwise_backward(
    z: &Matrix,
    c_prev: &Matrix,
    c: &Matrix,
    dh: &Matrix,
    dc: &Matrix,
    hidden: usize,
) -> Result<(Matrix, Matrix)> {
    let batch = z.rows();
    for (name, m) in [("c_prev", c_prev), ("c", c), ("dh", dh), ("dc", dc)] {
        if m.shape() != (batch, hidden) {
            return Err(Error::Shape(format!(
                "lstm backward: {name} is {:?}, expected {batch}x{hidden}",
                m.shape()
            )));
        }
    }
    let [i, f, g, o] = gates(z, hidden);
    let mut dz = Matrix::zeros(batch, 4 * hidden);
    let mut dc_prev = Matrix::zeros(batch, hidden);
    for r in 0..batch {
        for j in 0..hidden {
            let tc = c[(r, j)].tanh();
            let dct = dc[(r, j)] + dh[(r, j)] * o[(r, j)] * (1.0 - tc * tc);
            let (iv, fv, gv, ov) = (i[(r, j)], f[(r, j)], g[(r, j)], o[(r, j)]);
            dz[(r, j)] = dct * gv * iv * (1.0 - iv);
            dz[(r, hidden + j)] = dct * c_prev[(r, j)] * fv * (1.0 - fv);
            dz[(r, 2 * hidden + j)] = dct * iv * (1.0 - gv * gv);
            dz[(r, 3 * hidden + j)] = dh[(r, j)] * tc * ov * (1.0 - ov);
            dc_prev[(r, j)] = dct * fv;
        }
    }
    Ok((dz, dc_prev))
}

/// Gradients of one LSTM step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub dw: Matrix,
    pub dx: Matrix,
    pub dh_prev: Matrix,
    pub dc_prev: Matrix,
}

pub fn lstm_backward(params: &LstmParams, cache: &LstmCache, dh: &Matrix, dc: &Matrix) -> Result<LstmGrads> {
    let h = params.hidden;
    if cache.input.cols() != 2 * h || cache.z.cols() != 4 * h {
        return Err(Error::Shape("lstm backward: cache does not match H".into()));
    }
    let (dz, dc_prev) = lstm_pointwise_backward(&cache.z, &cache.c_prev, &cache.c, dh, dc, h)?;
    let dw = matmul(&cache.input.transpose(), &dz)?;
    let dinput = matmul(&dz, &params.weight.transpose())?;
    Ok(LstmGrads {
        dw,
        dx: dinput.col_slice(0, h),
        dh_prev: dinput.col_slice(h, 2 * h),
        dc_prev,
    })
}

/// `0.5 * sum (y - t)^2` and its gradient `y - t`.
pub fn mse(y: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    let d = y.sub(target)?;
    let loss = 0.5 * d.data().iter().map(|v| v * v).sum::<f64>();
    Ok((loss, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_product() {
        let b = Matrix::random(3, 5, 1.0, &mut rng(1));
        assert_eq!(matmul(&Matrix::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn two_by_two_product() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, Matrix::from_rows(&[&[19.0, 22.0], &[43.0, 50.0]]));
    }

    #[test]
    fn product_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn sgd_cases() {
        let w = Matrix::from_rows(&[&[1.0]]);
        let g = Matrix::from_rows(&[&[2.0]]);
        assert!((sgd_update(&w, &g, 0.1).unwrap()[(0, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(sgd_update(&w, &Matrix::zeros(1, 1), 0.1).unwrap(), w);
        let back = sgd_update(&sgd_update(&w, &g, 0.1).unwrap(), &g.scale(-1.0), 0.1).unwrap();
        assert!((back[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(sgd_update(&w, &Matrix::zeros(2, 1), 0.1).is_err());
    }

    #[test]
    fn zero_weight_fixed_point() {
        let p = LstmParams::new(3, Matrix::zeros(6, 12)).unwrap();
        let x = Matrix::random(2, 3, 1.0, &mut rng(2));
        let h0 = Matrix::random(2, 3, 1.0, &mut rng(3));
        let (h, c, z) = lstm_cell(&p, &x, &h0, &Matrix::zeros(2, 3)).unwrap();
        assert_eq!(h.max_abs(), 0.0);
        assert_eq!(c.max_abs(), 0.0);
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn scalar_cell_by_hand() {
        // H = 1, batch = 1, every weight and input equal to one:
        // z = [2, 2, 2, 2]; c = s(2)*1 + s(2)*tanh(2); h = s(2) * tanh(c).
        let p = LstmParams::new(1, Matrix::from_fn(2, 4, |_, _| 1.0)).unwrap();
        let one = Matrix::from_rows(&[&[1.0]]);
        let (h, c, z) = lstm_cell(&p, &one, &one, &one).unwrap();
        let s2 = 1.0 / (1.0 + (-2.0f64).exp());
        let c_expected = s2 + s2 * 2.0f64.tanh();
        assert_eq!(z.data(), &[2.0, 2.0, 2.0, 2.0]);
        assert!((c[(0, 0)] - c_expected).abs() < 1e-12);
        assert!((h[(0, 0)] - s2 * c_expected.tanh()).abs() < 1e-12);
    }

    #[test]
    fn weight_shape_checked() {
        assert!(LstmParams::new(3, Matrix::zeros(12, 6)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut r = rng(4);
        let p = LstmParams::new(2, Matrix::random(4, 8, 0.5, &mut r)).unwrap();
        let x = Matrix::random(2, 2, 1.0, &mut r);
        let cache = lstm_forward(&p, &x, &x, &x).unwrap();
        let g = lstm_backward(&p, &cache, &Matrix::zeros(2, 2), &Matrix::zeros(2, 2)).unwrap();
        for m in [&g.dw, &g.dx, &g.dh_prev, &g.dc_prev] {
            assert_eq!(m.max_abs(), 0.0);
        }
    }

    #[test]
    fn zero_weight_has_zero_dx() {
        let mut r = rng(5);
        let p = LstmParams::new(2, Matrix::zeros(4, 8)).unwrap();
        let x = Matrix::random(2, 2, 1.0, &mut r);
        let cache = lstm_forward(&p, &x, &x, &x).unwrap();
        let dh = Matrix::random(2, 2, 1.0, &mut r);
        let g = lstm_backward(&p, &cache, &dh, &dh).unwrap();
        assert_eq!(g.dx.max_abs(), 0.0);
        assert_eq!(g.dh_prev.max_abs(), 0.0);
    }
}
