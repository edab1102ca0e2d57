use rand::Rng;

use crate::error::{Error, Result};
use crate::impl_module;
use crate::scalar::Scalar;
use crate::tensor::{gemm_into, Tensor};

/// Fully connected layer `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl_module!(Linear { weight, bias });

impl<S: Scalar> Linear<S> {
    /// He-style Gaussian init scaled by `gain`; zero bias.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (input.max(1) as f64).sqrt();
        Linear {
            weight: Tensor::randn(&[input, output], std, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn from_parts(weight: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.cols()] {
            return Err(Error::dim("linear", &[weight.cols()], bias.shape()));
        }
        Ok(Linear { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `x: [n, in]` → `[n, out]`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (n, input, output) = (x.rows(), self.input_dim(), self.output_dim());
        if x.shape().len() != 2 || x.cols() != input {
            return Err(Error::dim("linear", &[n, input], x.shape()));
        }
        let mut y = Tensor::zeros(&[n, output]);
        let b = self.bias.data();
        for i in 0..n {
            y.row_mut(i).copy_from_slice(b);
        }
        gemm_into(
            n,
            input,
            output,
            x.data(),
            false,
            self.weight.data(),
            false,
            y.data_mut(),
            true,
        );
        Ok(y)
    }

    /// Accumulates `dW`, `db` into `grad` and returns `dx`.
    pub fn backward(&self, x: &Tensor<S>, dy: &Tensor<S>, grad: &mut Linear<S>) -> Tensor<S> {
        let (n, input, output) = (x.rows(), self.input_dim(), self.output_dim());
        debug_assert_eq!(dy.shape(), [n, output]);
        gemm_into(
            input,
            n,
            output,
            x.data(),
            true,
            dy.data(),
            false,
            grad.weight.data_mut(),
            true,
        );
        let db = grad.bias.data_mut();
        for i in 0..n {
            for (g, &d) in db.iter_mut().zip(dy.row(i)) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(&[n, input]);
        gemm_into(
            n,
            output,
            input,
            dy.data(),
            false,
            self.weight.data(),
            true,
            dx.data_mut(),
            false,
        );
        dx
    }
}

/// Three linear layers with ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp3<S> {
    pub l1: Linear<S>,
    pub l2: Linear<S>,
    pub l3: Linear<S>,
}

impl_module!(Mlp3 { l1, l2, l3 });

#[derive(Debug, Clone)]
pub struct Mlp3Cache<S> {
    x: Tensor<S>,
    h1: Tensor<S>,
    h2: Tensor<S>,
}

impl<S: Scalar> Mlp3<S> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, out_gain: f64, rng: &mut R) -> Self {
        Mlp3 {
            l1: Linear::new(input, hidden, 2f64.sqrt(), rng),
            l2: Linear::new(hidden, hidden, 2f64.sqrt(), rng),
            l3: Linear::new(hidden, output, out_gain, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Mlp3Cache<S>)> {
        let h1 = super::relu(&self.l1.forward(x)?);
        let h2 = super::relu(&self.l2.forward(&h1)?);
        let y = self.l3.forward(&h2)?;
        Ok((y, Mlp3Cache { x: x.clone(), h1, h2 }))
    }

    pub fn backward(&self, cache: &Mlp3Cache<S>, dy: &Tensor<S>, grad: &mut Mlp3<S>) -> Tensor<S> {
        let mut dh2 = self.l3.backward(&cache.h2, dy, &mut grad.l3);
        super::relu_mask(&cache.h2, &mut dh2);
        let mut dh1 = self.l2.backward(&cache.h1, &dh2, &mut grad.l2);
        super::relu_mask(&cache.h1, &mut dh1);
        self.l1.backward(&cache.x, &dh1, &mut grad.l1)
    }
}
