//! Convolution lowered to a matrix product with im2col.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::conv::Tensor4;
use crate::oracle::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.batch,
            self.channels,
            self.height,
            self.width,
            self.kernels,
            self.kh,
            self.kw,
            self.stride,
        ];
        if dims.contains(&0) {
            return Err(Error::Workload("conv dimensions and stride must be >= 1".into()));
        }
        if self.kh > self.height + 2 * self.padding || self.kw > self.width + 2 * self.padding {
            return Err(Error::Workload(format!(
                "kernel {}x{} larger than padded input {}x{}",
                self.kh,
                self.kw,
                self.height + 2 * self.padding,
                self.width + 2 * self.padding
            )));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kw) / self.stride + 1
    }

    /// Shape of the patch matrix A.
    pub fn a_shape(&self) -> (usize, usize) {
        (
            self.batch * self.out_h() * self.out_w(),
            self.channels * self.kh * self.kw,
        )
    }

    /// Shape of the kernel matrix B.
    pub fn b_shape(&self) -> (usize, usize) {
        (self.channels * self.kh * self.kw, self.kernels)
    }

    pub fn input_dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    /// Input stored as a matrix: one row per image, NCHW order within it.
    pub fn input_shape(&self) -> (usize, usize) {
        (self.batch, self.channels * self.height * self.width)
    }

    /// Input element feeding `A[row, col]`, or `None` for padding.
    pub fn source(&self, row: usize, col: usize) -> Option<[usize; 4]> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let b = row / (oh * ow);
        let oy = (row / ow) % oh;
        let ox = row % ow;
        let c = col / (self.kh * self.kw);
        let dy = (col / self.kw) % self.kh;
        let dx = col % self.kw;
        let y = (oy * self.stride + dy) as isize - self.padding as isize;
        let x = (ox * self.stride + dx) as isize - self.padding as isize;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some([b, c, y as usize, x as usize])
        }
    }

    /// Column of the input matrix holding element `(c, y, x)`.
    pub fn input_col(&self, idx: [usize; 4]) -> usize {
        (idx[1] * self.height + idx[2]) * self.width + idx[3]
    }
}

/// How many times each input element appears in the lowered matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DuplicationMap {
    pub dims: [usize; 4],
    /// Copy count per input element, NCHW order.
    pub copies: Vec<u32>,
}

impl DuplicationMap {
    pub fn total_copies(&self) -> u64 {
        self.copies.iter().map(|&c| c as u64).sum()
    }

    pub fn max_copies(&self) -> u32 {
        self.copies.iter().copied().max().unwrap_or(0)
    }

    /// Bytes materialized when the lowered matrix is written.
    pub fn bytes(&self, element_bytes: f64) -> u64 {
        (self.total_copies() as f64 * element_bytes).ceil() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Im2colLayout {
    pub a_shape: (usize, usize),
    pub b_shape: (usize, usize),
    pub duplication: DuplicationMap,
}

pub fn im2col(conv: &ConvSpec) -> Result<Im2colLayout> {
    conv.validate()?;
    let dims = conv.input_dims();
    let mut copies = vec![0u32; dims.iter().product()];
    let (rows, cols) = conv.a_shape();
    let probe = Tensor4::zeros(dims);
    for r in 0..rows {
        for c in 0..cols {
            if let Some(idx) = conv.source(r, c) {
                copies[probe.offset(idx)] += 1;
            }
        }
    }
    Ok(Im2colLayout {
        a_shape: conv.a_shape(),
        b_shape: conv.b_shape(),
        duplication: DuplicationMap { dims, copies },
    })
}

pub fn lower_input(conv: &ConvSpec, input: &Tensor4) -> Matrix {
    let (rows, cols) = conv.a_shape();
    Matrix::from_fn(rows, cols, |r, c| conv.source(r, c).map_or(0.0, |i| input.get(i)))
}

pub fn kernel_matrix(conv: &ConvSpec, kernels: &Tensor4) -> Matrix {
    let (rows, cols) = conv.b_shape();
    Matrix::from_fn(rows, cols, |r, k| {
        let c = r / (conv.kh * conv.kw);
        let dy = (r / conv.kw) % conv.kh;
        let dx = r % conv.kw;
        kernels.get([k, c, dy, dx])
    })
}

pub fn input_matrix(conv: &ConvSpec, input: &Tensor4) -> Matrix {
    let (rows, cols) = conv.input_shape();
    Matrix::from_vec(rows, cols, input.data.clone()).expect("input dims match spec")
}

/// Reshape the product `(batch*oh*ow) x kernels` back to NCHW.
pub fn output_tensor(conv: &ConvSpec, c: &Matrix) -> Tensor4 {
    let (oh, ow) = (conv.out_h(), conv.out_w());
    let mut out = Tensor4::zeros([conv.batch, conv.kernels, oh, ow]);
    for r in 0..c.rows() {
        let b = r / (oh * ow);
        let y = (r / ow) % oh;
        let x = r % ow;
        for k in 0..conv.kernels {
            out.set([b, k, y, x], c[(r, k)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{conv::conv2d, matmul};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(h: usize, k: usize, stride: usize, padding: usize) -> ConvSpec {
        ConvSpec {
            batch: 1,
            channels: 1,
            height: h,
            width: h,
            kernels: 1,
            kh: k,
            kw: k,
            stride,
            padding,
        }
    }

    #[test]
    fn pointwise_kernel_is_reshape() {
        let l = im2col(&spec(4, 1, 1, 0)).unwrap();
        assert_eq!(l.a_shape, (16, 1));
        assert!(l.duplication.copies.iter().all(|&c| c == 1));
    }

    #[test]
    fn three_by_three_duplicates_interior_nine_times() {
        let l = im2col(&spec(5, 3, 1, 0)).unwrap();
        assert_eq!(l.a_shape, (9, 9));
        assert_eq!(l.duplication.max_copies(), 9);
        assert_eq!(l.duplication.copies[12], 9);
        assert_eq!(l.duplication.copies[0], 1);
        assert_eq!(l.duplication.total_copies(), 81);
    }

    #[test]
    fn padding_entries_are_not_counted() {
        let l = im2col(&spec(3, 3, 1, 1)).unwrap();
        assert_eq!(l.a_shape, (9, 9));
        // Each of the nine outputs sees the 3x3 window clipped to the input.
        assert_eq!(l.duplication.total_copies(), 4 * 4 + 4 * 6 + 9);
    }

    #[test]
    fn lowered_product_matches_direct_convolution() {
        let conv = ConvSpec {
            batch: 2,
            channels: 3,
            height: 6,
            width: 5,
            kernels: 4,
            kh: 3,
            kw: 2,
            stride: 2,
            padding: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = Tensor4::random(conv.input_dims(), &mut rng);
        let kernels = Tensor4::random([4, 3, 3, 2], &mut rng);
        let c = matmul(&lower_input(&conv, &input), &kernel_matrix(&conv, &kernels)).unwrap();
        let got = output_tensor(&conv, &c);
        let want = conv2d(&input, &kernels, 2, 1).unwrap();
        assert_eq!(got.dims, want.dims);
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        assert!(im2col(&spec(2, 3, 1, 0)).is_err());
    }
}
