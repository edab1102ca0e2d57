use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Zeroes `dy` wherever the ReLU output `y` was not positive.
pub fn relu_mask<S: Scalar>(y: &Tensor<S>, dy: &mut Tensor<S>) {
    for (d, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        if v <= S::zero() {
            *d = S::zero();
        }
    }
}

/// `max(x - delta, 0)` elementwise.
pub fn shifted_relu<S: Scalar>(x: &Tensor<S>, delta: S) -> Tensor<S> {
    x.map(|v| shifted_relu_scalar(v, delta))
}

#[inline]
pub fn shifted_relu_scalar<S: Scalar>(x: S, delta: S) -> S {
    let v = x - delta;
    if v > S::zero() {
        v
    } else {
        S::zero()
    }
}

/// `dx = dy · 1[x > delta]`.
pub fn shifted_relu_backward<S: Scalar>(x: &Tensor<S>, delta: S, dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= delta {
            *d = S::zero();
        }
    }
    dx
}

/// Numerically stable softmax of a single vector.
pub fn softmax_slice<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax over the last dimension.
pub fn softmax<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut y = x.clone();
    for i in 0..x.rows() {
        let s = softmax_slice(x.row(i));
        y.row_mut(i).copy_from_slice(&s);
    }
    y
}

/// Backward of row-wise softmax given its output `y`.
pub fn softmax_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = dy.clone();
    for i in 0..y.rows() {
        let yr = y.row(i);
        let dot: S = yr.iter().zip(dy.row(i)).map(|(&a, &b)| a * b).sum();
        for ((d, &g), &p) in dx.row_mut(i).iter_mut().zip(dy.row(i)).zip(yr) {
            *d = p * (g - dot);
        }
    }
    dx
}

#[inline]
pub fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid given its output `y`.
pub fn sigmoid_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = dy.clone();
    for (d, &p) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= p * (S::one() - p);
    }
    dx
}
