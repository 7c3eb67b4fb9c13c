//! Direct (sliding-window) 2D convolution, used to check im2col lowering.

use rand::Rng;

use crate::error::{Error, Result};

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn random<R: Rng + ?Sized>(dims: [usize; 4], rng: &mut R) -> Self {
        let n = dims.iter().product();
        Tensor4 {
            dims,
            data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    pub fn offset(&self, i: [usize; 4]) -> usize {
        let [_, d1, d2, d3] = self.dims;
        ((i[0] * d1 + i[1]) * d2 + i[2]) * d3 + i[3]
    }

    pub fn get(&self, i: [usize; 4]) -> f64 {
        self.data[self.offset(i)]
    }

    pub fn set(&mut self, i: [usize; 4], v: f64) {
        let o = self.offset(i);
        self.data[o] = v;
    }
}

/// `input` is (batch, channels, h, w); `kernels` is (count, channels, kh, kw).
/// Returns (batch, count, out_h, out_w).
pub fn conv2d(input: &Tensor4, kernels: &Tensor4, stride: usize, padding: usize) -> Result<Tensor4> {
    let [batch, channels, h, w] = input.dims;
    let [count, kc, kh, kw] = kernels.dims;
    if kc != channels {
        return Err(Error::Shape(format!(
            "kernel channels {kc} vs input channels {channels}"
        )));
    }
    if stride == 0 || kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(Error::Shape("kernel larger than padded input".into()));
    }
    let out_h = (h + 2 * padding - kh) / stride + 1;
    let out_w = (w + 2 * padding - kw) / stride + 1;
    let mut out = Tensor4::zeros([batch, count, out_h, out_w]);
    for b in 0..batch {
        for k in 0..count {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = 0.0;
                    for c in 0..channels {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let y = (oy * stride + dy) as isize - padding as isize;
                                let x = (ox * stride + dx) as isize - padding as isize;
                                if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                    continue;
                                }
                                acc += input.get([b, c, y as usize, x as usize]) * kernels.get([k, c, dy, dx]);
                            }
                        }
                    }
                    out.set([b, k, oy, ox], acc);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_kernel_scales() {
        let mut input = Tensor4::zeros([1, 1, 2, 2]);
        input.data = vec![1.0, 2.0, 3.0, 4.0];
        let mut k = Tensor4::zeros([1, 1, 1, 1]);
        k.data = vec![2.0];
        let out = conv2d(&input, &k, 1, 0).unwrap();
        assert_eq!(out.data, vec![2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn box_filter_with_padding() {
        let mut input = Tensor4::zeros([1, 1, 3, 3]);
        input.data = vec![1.0; 9];
        let mut k = Tensor4::zeros([1, 1, 3, 3]);
        k.data = vec![1.0; 9];
        let out = conv2d(&input, &k, 1, 1).unwrap();
        assert_eq!(out.dims, [1, 1, 3, 3]);
        assert_eq!(out.data, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn oversized_kernel() {
        let input = Tensor4::zeros([1, 1, 2, 2]);
        let k = Tensor4::zeros([1, 1, 3, 3]);
        assert!(conv2d(&input, &k, 1, 0).is_err());
    }
}
