//! Temporal 1-D convolution and max pooling with "same"-style padding: the
//! output length is always `ceil(T / stride)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::impl_module;
use crate::scalar::Scalar;
use crate::tensor::{gemm_into, Tensor};

/// Output length and left padding for a window of `kernel` moving by `stride`.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let needed = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(len);
    (out, needed / 2)
}

fn check_window(op: &str, kernel: usize, stride: usize) -> Result<()> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "{op}: kernel and stride must be positive, got kernel={kernel} stride={stride}"
        )));
    }
    Ok(())
}

/// 1-D convolution over the time axis, `x: [T, Cin]` → `[ceil(T/stride), Cout]`.
/// Weights are laid out `[kernel * Cin, Cout]` with the tap index outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub kernel: usize,
    pub stride: usize,
}

impl_module!(Conv1d { weight, bias });

#[derive(Debug)]
pub struct Conv1dCache<S> {
    cols: Tensor<S>,
    len: usize,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_window("conv1d", kernel, stride)?;
        let std = (2.0 / (kernel * input).max(1) as f64).sqrt();
        Ok(Conv1d {
            weight: Tensor::randn(&[kernel * input, output], std, rng),
            bias: Tensor::zeros(&[output]),
            kernel,
            stride,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows() / self.kernel
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_len(&self, len: usize) -> usize {
        same_padding(len, self.kernel, self.stride).0
    }

    fn im2col(&self, x: &Tensor<S>) -> Tensor<S> {
        let (len, cin) = (x.rows(), x.cols());
        let (out, left) = same_padding(len, self.kernel, self.stride);
        let mut cols = Tensor::zeros(&[out, self.kernel * cin]);
        for t in 0..out {
            let row = cols.row_mut(t);
            for tap in 0..self.kernel {
                let src = (t * self.stride + tap) as isize - left as isize;
                if src >= 0 && (src as usize) < len {
                    row[tap * cin..(tap + 1) * cin].copy_from_slice(x.row(src as usize));
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Conv1dCache<S>)> {
        check_window("conv1d", self.kernel, self.stride)?;
        let cin = self.input_dim();
        if x.shape().len() != 2 || x.cols() != cin || x.rows() == 0 {
            return Err(Error::dim("conv1d", &[x.rows().max(1), cin], x.shape()));
        }
        let cols = self.im2col(x);
        let out = cols.rows();
        let cout = self.output_dim();
        let mut y = Tensor::zeros(&[out, cout]);
        for t in 0..out {
            y.row_mut(t).copy_from_slice(self.bias.data());
        }
        gemm_into(
            out,
            self.kernel * cin,
            cout,
            cols.data(),
            false,
            self.weight.data(),
            false,
            y.data_mut(),
            true,
        );
        Ok((y, Conv1dCache { cols, len: x.rows() }))
    }

    pub fn backward(&self, cache: &Conv1dCache<S>, dy: &Tensor<S>, grad: &mut Conv1d<S>) -> Tensor<S> {
        let cin = self.input_dim();
        let (out, cout, kc) = (dy.rows(), self.output_dim(), self.kernel * cin);
        gemm_into(
            kc,
            out,
            cout,
            cache.cols.data(),
            true,
            dy.data(),
            false,
            grad.weight.data_mut(),
            true,
        );
        for t in 0..out {
            for (g, &d) in grad.bias.data_mut().iter_mut().zip(dy.row(t)) {
                *g += d;
            }
        }
        let mut dcols = Tensor::zeros(&[out, kc]);
        gemm_into(
            out,
            cout,
            kc,
            dy.data(),
            false,
            self.weight.data(),
            true,
            dcols.data_mut(),
            false,
        );
        let (_, left) = same_padding(cache.len, self.kernel, self.stride);
        let mut dx = Tensor::zeros(&[cache.len, cin]);
        for t in 0..out {
            let row = dcols.row(t);
            for tap in 0..self.kernel {
                let src = (t * self.stride + tap) as isize - left as isize;
                if src >= 0 && (src as usize) < cache.len {
                    for (d, &g) in dx
                        .row_mut(src as usize)
                        .iter_mut()
                        .zip(&row[tap * cin..(tap + 1) * cin])
                    {
                        *d += g;
                    }
                }
            }
        }
        dx
    }
}

/// Per-channel max pooling over time. Padded positions never win the max.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool1d {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug)]
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    len: usize,
}

impl MaxPool1d {
    pub fn new(kernel: usize, stride: usize) -> Result<Self> {
        check_window("maxpool1d", kernel, stride)?;
        Ok(MaxPool1d { kernel, stride })
    }

    pub fn output_len(&self, len: usize) -> usize {
        same_padding(len, self.kernel, self.stride).0
    }

    pub fn forward<S: Scalar>(&self, x: &Tensor<S>) -> Result<(Tensor<S>, MaxPoolCache)> {
        check_window("maxpool1d", self.kernel, self.stride)?;
        let (len, c) = (x.rows(), x.cols());
        if x.is_empty() || x.shape().len() != 2 {
            return Err(Error::dim("maxpool1d", &[1, c.max(1)], x.shape()));
        }
        let (out, left) = same_padding(len, self.kernel, self.stride);
        let mut y = Tensor::zeros(&[out, c]);
        let mut argmax = vec![0usize; out * c];
        for t in 0..out {
            let start = (t * self.stride) as isize - left as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + self.kernel as isize).max(0) as usize).min(len);
            // Every window overlaps the input because `out = ceil(len/stride)`.
            let lo = lo.min(len - 1);
            let hi = hi.max(lo + 1);
            for ch in 0..c {
                let mut best = lo;
                let mut val = x.at(lo, ch);
                for s in lo + 1..hi {
                    let v = x.at(s, ch);
                    if v > val {
                        val = v;
                        best = s;
                    }
                }
                y.row_mut(t)[ch] = val;
                argmax[t * c + ch] = best;
            }
        }
        Ok((y, MaxPoolCache { argmax, len }))
    }

    /// Routes each output gradient to the (lowest-index) argmax of its window.
    pub fn backward<S: Scalar>(&self, cache: &MaxPoolCache, dy: &Tensor<S>) -> Tensor<S> {
        let c = dy.cols();
        let mut dx = Tensor::zeros(&[cache.len, c]);
        for t in 0..dy.rows() {
            for ch in 0..c {
                let src = cache.argmax[t * c + ch];
                dx.row_mut(src)[ch] += dy.at(t, ch);
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input, check_module};
    use crate::nn::Module;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dot<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> S {
        a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).sum()
    }

    #[test]
    fn output_lengths_follow_ceil_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv1d::<f32>::new(8, 1024, 5, 8, &mut rng).unwrap();
        let (y, _) = conv.forward(&Tensor::zeros(&[256, 8])).unwrap();
        assert_eq!(y.shape(), &[32, 1024]);
        let pool = MaxPool1d::new(3, 2).unwrap();
        let (y, _) = pool.forward(&Tensor::<f32>::zeros(&[32, 4])).unwrap();
        assert_eq!(y.shape(), &[16, 4]);
        for len in 1..40 {
            for stride in 1..6 {
                assert_eq!(same_padding(len, 5, stride).0, len.div_ceil(stride));
            }
        }
    }

    #[test]
    fn identity_kernel_passes_through() {
        let mut w = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            w.row_mut(i)[i] = 1.0;
        }
        let conv = Conv1d {
            weight: w,
            bias: Tensor::zeros(&[3]),
            kernel: 1,
            stride: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::randn(&[8, 3], 1.0, &mut rng);
        assert_eq!(conv.forward(&x).unwrap().0, x);
    }

    #[test]
    fn single_window_max() {
        let pool = MaxPool1d::new(3, 3).unwrap();
        let x = Tensor::<f64>::from_f64(&[3, 1], &[1., 5., 3.]).unwrap();
        assert_eq!(pool.forward(&x).unwrap().0.data(), &[5.0]);
    }

    #[test]
    fn config_and_dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            Conv1d::<f32>::new(2, 2, 0, 1, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(matches!(MaxPool1d::new(2, 0), Err(Error::Config(_))));
        let pool = MaxPool1d::new(2, 2).unwrap();
        assert!(matches!(
            pool.forward(&Tensor::<f32>::zeros(&[0, 3])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn conv_gradient_seed11() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut conv = Conv1d::<f64>::new(3, 4, 5, 2, &mut rng).unwrap();
        conv.bias = Tensor::randn(&[4], 0.3, &mut rng);
        let x = Tensor::<f64>::randn(&[9, 3], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[5, 4], 1.0, &mut rng);
        let r = check_input(
            &x,
            |x| dot(&conv.forward(x).unwrap().0, &w),
            |x| {
                let (_, c) = conv.forward(x).unwrap();
                conv.backward(&c, &w, &mut conv.zeros_like())
            },
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        let r = check_module(
            &conv,
            |m| dot(&m.forward(&x).unwrap().0, &w),
            |m| {
                let (_, c) = m.forward(&x).unwrap();
                let mut g = m.zeros_like();
                m.backward(&c, &w, &mut g);
                g
            },
            1e-4,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        // f32 at the looser tolerance
        let conv32: Conv1d<f32> = Conv1d {
            weight: conv.weight.cast(),
            bias: conv.bias.cast(),
            kernel: 5,
            stride: 2,
        };
        let (x32, w32) = (x.cast::<f32>(), w.cast::<f32>());
        let r = check_input(
            &x32,
            |x| dot(&conv32.forward(x).unwrap().0, &w32),
            |x| {
                let (_, c) = conv32.forward(x).unwrap();
                conv32.backward(&c, &w32, &mut conv32.zeros_like())
            },
            f32::GRAD_STEP,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn maxpool_gradient_off_ties() {
        // distinct values spaced far beyond the step so no perturbation flips an argmax
        let vals: Vec<f64> = (0..24).map(|i| ((i * 7) % 24) as f64 * 0.1).collect();
        let x = Tensor::<f64>::from_f64(&[12, 2], &vals).unwrap();
        let pool = MaxPool1d::new(3, 2).unwrap();
        let w = Tensor::<f64>::from_f64(&[6, 2], &[1., -2., 0.5, 3., 1.5, -1., 2., 0.25, -0.5, 1., 4., 2.]).unwrap();
        let r = check_input(
            &x,
            |x| dot(&pool.forward(x).unwrap().0, &w),
            |x| {
                let (_, c) = pool.forward(x).unwrap();
                pool.backward(&c, &w)
            },
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn maxpool_ties_route_to_lowest_index() {
        let pool = MaxPool1d::new(3, 3).unwrap();
        let x = Tensor::<f64>::from_f64(&[3, 1], &[2., 2., 1.]).unwrap();
        let (_, c) = pool.forward(&x).unwrap();
        let dx = pool.backward(&c, &Tensor::<f64>::from_f64(&[1, 1], &[1.0]).unwrap());
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_pool_composite_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let conv = Conv1d::<f64>::new(2, 3, 3, 1, &mut rng).unwrap();
        let pool = MaxPool1d::new(2, 2).unwrap();
        let x = Tensor::<f64>::randn(&[10, 2], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[5, 3], 1.0, &mut rng);
        let f = |x: &Tensor<f64>| {
            let (h, _) = conv.forward(x).unwrap();
            dot(&pool.forward(&h).unwrap().0, &w)
        };
        let r = check_input(
            &x,
            f,
            |x| {
                let (h, cc) = conv.forward(x).unwrap();
                let (_, pc) = pool.forward(&h).unwrap();
                let dh = pool.backward(&pc, &w);
                conv.backward(&cc, &dh, &mut conv.zeros_like())
            },
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    proptest! {
        #[test]
        fn maxpool_backward_conserves_gradient(
            len in 1usize..30, k in 1usize..5, s in 1usize..4, seed in 0u64..1000
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::randn(&[len, 3], 1.0, &mut rng);
            let pool = MaxPool1d::new(k, s).unwrap();
            let (y, c) = pool.forward(&x).unwrap();
            prop_assert_eq!(y.rows(), len.div_ceil(s));
            let dy = Tensor::<f64>::randn(y.shape(), 1.0, &mut rng);
            let dx = pool.backward(&c, &dy);
            prop_assert!((dx.sum() - dy.sum()).abs() < 1e-9);
        }
    }
}
