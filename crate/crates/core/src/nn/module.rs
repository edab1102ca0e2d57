//! Named parameter containers.
//!
//! Every layer stores its weights as plain [`Tensor`] fields and implements
//! [`Module`] so that optimizers, checkpoints and gradient accumulators can
//! walk the parameters in a fixed order. A gradient accumulator is simply a
//! zero-filled clone of the layer it belongs to.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub trait Module<S: Scalar> {
    /// Visits every parameter tensor with its dotted path, in a stable order.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>));

    /// Same order as [`Module::visit`].
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t| t.fill(S::zero()));
    }

    /// A zero-filled accumulator with the same structure.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut g = self.clone();
        g.zero_grad();
        g
    }

    /// Adds `other` into `self` parameter-wise.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let mut parts = Vec::new();
        other.visit("", &mut |_, t| parts.push(t as *const Tensor<S>));
        let mut it = parts.into_iter();
        self.visit_mut("", &mut |_, t| {
            let src = it.next().expect("identical structure");
            // SAFETY: `other` is borrowed for the whole call and never mutated.
            t.add_assign(unsafe { &*src });
        });
    }

    fn scale(&mut self, factor: S) {
        self.visit_mut("", &mut |_, t| t.scale(factor));
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    /// Flattened copy of every parameter in visiting order.
    fn flatten(&self) -> Vec<S> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    /// Inverse of [`Module::flatten`].
    fn unflatten(&mut self, values: &[S]) {
        let mut off = 0;
        self.visit_mut("", &mut |_, t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        });
    }

    fn named_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.shape().to_vec())));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<S: Scalar> Module<S> for Tensor<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(prefix, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(prefix, self)
    }
}

impl<S: Scalar, M: Module<S>> Module<S> for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<S: Scalar, M: Module<S>, const N: usize> Module<S> for [M; N] {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Implements [`Module`] for a struct by visiting the listed fields in order.
#[macro_export]
macro_rules! impl_module {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<S: $crate::Scalar> $crate::nn::Module<S> for $ty<S> {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &$crate::Tensor<S>)) {
                $( $crate::nn::Module::visit(&self.$field, &$crate::nn::module::join(prefix, stringify!($field)), f); )*
            }

            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut $crate::Tensor<S>)) {
                $( $crate::nn::Module::visit_mut(&mut self.$field, &$crate::nn::module::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
