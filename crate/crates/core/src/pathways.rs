//! Two-granularity temporal feature extractor.
//!
//! Each pathway is `Conv1 → ReLU → MaxPool1 → Conv2 → ReLU → MaxPool2`. With
//! the default strides the fine pathway summarizes every 4 shots into one
//! segment and the coarse pathway every 16 shots.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impl_module;
use crate::nn::{relu, relu_mask, Conv1d, Conv1dCache, MaxPool1d, MaxPoolCache};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathwaySpec {
    pub conv1: ConvSpec,
    pub pool1: PoolSpec,
    pub conv2: ConvSpec,
    pub pool2: PoolSpec,
}

impl PathwaySpec {
    /// Shots covered by one output segment.
    pub fn span(&self) -> usize {
        self.conv1.stride * self.pool1.stride * self.conv2.stride * self.pool2.stride
    }

    pub fn channels(&self) -> usize {
        self.conv2.channels
    }

    pub fn output_len(&self, shots: usize) -> usize {
        [
            self.conv1.stride,
            self.pool1.stride,
            self.conv2.stride,
            self.pool2.stride,
        ]
        .iter()
        .fold(shots, |len, &s| len.div_ceil(s))
    }

    /// Same layer geometry with every channel count replaced by `channels`.
    pub fn with_channels(mut self, channels: usize) -> Self {
        self.conv1.channels = channels;
        self.conv2.channels = channels;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathwayConfig {
    pub input_dim: usize,
    pub fine: PathwaySpec,
    pub coarse: PathwaySpec,
}

impl PathwayConfig {
    /// The reference layer table: coarse (5,8,1024)/(2,1)/(5,1,1024)/(3,2),
    /// fine (5,1,256)/(2,2)/(5,1,256)/(2,2).
    pub fn reference(input_dim: usize) -> Self {
        PathwayConfig {
            input_dim,
            coarse: PathwaySpec {
                conv1: ConvSpec {
                    kernel: 5,
                    stride: 8,
                    channels: 1024,
                },
                pool1: PoolSpec { kernel: 2, stride: 1 },
                conv2: ConvSpec {
                    kernel: 5,
                    stride: 1,
                    channels: 1024,
                },
                pool2: PoolSpec { kernel: 3, stride: 2 },
            },
            fine: PathwaySpec {
                conv1: ConvSpec {
                    kernel: 5,
                    stride: 1,
                    channels: 256,
                },
                pool1: PoolSpec { kernel: 2, stride: 2 },
                conv2: ConvSpec {
                    kernel: 5,
                    stride: 1,
                    channels: 256,
                },
                pool2: PoolSpec { kernel: 2, stride: 2 },
            },
        }
    }

    /// Minimum number of shots: one full coarse segment.
    pub fn min_shots(&self) -> usize {
        self.fine.span().max(self.coarse.span())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pathway<S> {
    pub conv1: Conv1d<S>,
    pub conv2: Conv1d<S>,
    pub pool1: MaxPool1d,
    pub pool2: MaxPool1d,
}

impl_module!(Pathway { conv1, conv2 });

#[derive(Debug)]
pub struct PathwayCache<S> {
    c1: Conv1dCache<S>,
    a1: Tensor<S>,
    p1: MaxPoolCache,
    c2: Conv1dCache<S>,
    a2: Tensor<S>,
    p2: MaxPoolCache,
}

impl<S: Scalar> Pathway<S> {
    pub fn new<R: Rng + ?Sized>(input: usize, spec: &PathwaySpec, rng: &mut R) -> Result<Self> {
        Ok(Pathway {
            conv1: Conv1d::new(input, spec.conv1.channels, spec.conv1.kernel, spec.conv1.stride, rng)?,
            pool1: MaxPool1d::new(spec.pool1.kernel, spec.pool1.stride)?,
            conv2: Conv1d::new(
                spec.conv1.channels,
                spec.conv2.channels,
                spec.conv2.kernel,
                spec.conv2.stride,
                rng,
            )?,
            pool2: MaxPool1d::new(spec.pool2.kernel, spec.pool2.stride)?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, PathwayCache<S>)> {
        let (h, c1) = self.conv1.forward(x)?;
        let a1 = relu(&h);
        let (h, p1) = self.pool1.forward(&a1)?;
        let (h, c2) = self.conv2.forward(&h)?;
        let a2 = relu(&h);
        let (y, p2) = self.pool2.forward(&a2)?;
        Ok((y, PathwayCache { c1, a1, p1, c2, a2, p2 }))
    }

    pub fn backward(&self, cache: &PathwayCache<S>, dy: &Tensor<S>, grad: &mut Pathway<S>) -> Tensor<S> {
        let mut d = self.pool2.backward(&cache.p2, dy);
        relu_mask(&cache.a2, &mut d);
        let d = self.conv2.backward(&cache.c2, &d, &mut grad.conv2);
        let mut d = self.pool1.backward(&cache.p1, &d);
        relu_mask(&cache.a1, &mut d);
        self.conv1.backward(&cache.c1, &d, &mut grad.conv1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsPathways<S> {
    pub fine: Pathway<S>,
    pub coarse: Pathway<S>,
    pub fine_span: usize,
    pub coarse_span: usize,
}

impl_module!(GsPathways { fine, coarse });

/// Segment-level features of both pathways.
#[derive(Debug, Clone)]
pub struct SegmentFeatures<S> {
    /// `[ceil(T/4), fine channels]`
    pub fine: Tensor<S>,
    /// `[ceil(T/16), coarse channels]`
    pub coarse: Tensor<S>,
    pub fine_spans: Vec<Range<usize>>,
    pub coarse_spans: Vec<Range<usize>>,
}

#[derive(Debug)]
pub struct GsCache<S> {
    fine: PathwayCache<S>,
    coarse: PathwayCache<S>,
}

/// Contiguous shot ranges of `span` shots; the last one may be shorter.
pub fn segment_spans(shots: usize, span: usize) -> Vec<Range<usize>> {
    (0..shots.div_ceil(span))
        .map(|i| i * span..((i + 1) * span).min(shots))
        .collect()
}

impl<S: Scalar> GsPathways<S> {
    pub fn new<R: Rng + ?Sized>(cfg: &PathwayConfig, rng: &mut R) -> Result<Self> {
        Ok(GsPathways {
            fine: Pathway::new(cfg.input_dim, &cfg.fine, rng)?,
            coarse: Pathway::new(cfg.input_dim, &cfg.coarse, rng)?,
            fine_span: cfg.fine.span(),
            coarse_span: cfg.coarse.span(),
        })
    }

    pub fn min_shots(&self) -> usize {
        self.fine_span.max(self.coarse_span)
    }

    /// `x: [T, d]` shot features → segment features of both granularities.
    pub fn forward(&self, x: &Tensor<S>) -> Result<(SegmentFeatures<S>, GsCache<S>)> {
        let min = self.min_shots();
        if x.rows() < min || x.shape().len() != 2 {
            return Err(Error::InputTooShort { min, got: x.rows() });
        }
        if x.cols() != self.fine.conv1.input_dim() {
            return Err(Error::dim(
                "pathways",
                &[x.rows(), self.fine.conv1.input_dim()],
                x.shape(),
            ));
        }
        let (fine, fc) = self.fine.forward(x)?;
        let (coarse, cc) = self.coarse.forward(x)?;
        let t = x.rows();
        Ok((
            SegmentFeatures {
                fine,
                coarse,
                fine_spans: segment_spans(t, self.fine_span),
                coarse_spans: segment_spans(t, self.coarse_span),
            },
            GsCache { fine: fc, coarse: cc },
        ))
    }

    /// Returns the gradient with respect to the shot features.
    pub fn backward(
        &self,
        cache: &GsCache<S>,
        d_fine: &Tensor<S>,
        d_coarse: &Tensor<S>,
        grad: &mut GsPathways<S>,
    ) -> Tensor<S> {
        let mut dx = self.fine.backward(&cache.fine, d_fine, &mut grad.fine);
        dx.add_assign(&self.coarse.backward(&cache.coarse, d_coarse, &mut grad.coarse));
        dx
    }
}
