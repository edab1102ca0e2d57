//! Finite-difference checks over every differentiable building block and
//! the whole model, run in f64.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{semantic_edges, temporal_edges, Edge, EdgeConv, EdgeKind, Graph};
use crate::model::{mix_scores, mix_scores_backward, Model, ModelConfig, Query, WORD_DIM};
use crate::nn::gradcheck::{check_flat, check_input, check_module};
use crate::nn::{
    bce_grad, bce_loss, shifted_relu, shifted_relu_backward, Conv1d, GradReport, Linear, MaxPool1d, Module,
    MultiHeadAttention,
};
use crate::tensor::Tensor;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const MODEL_CHECK_SHOTS: usize = 32;
pub const MODEL_CHECK_COORDS: usize = 50;

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCase {
    fn from_reports(name: &'static str, reports: &[GradReport]) -> Self {
        GradCase {
            name,
            max_rel_error: reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
            checked: reports.iter().map(|r| r.checked).sum(),
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

const STEP: f64 = 1e-6;

pub fn check_linear(seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Linear::<f64>::new(5, 4, 1.0, &mut rng);
    layer.bias = Tensor::randn(&[4], 0.5, &mut rng);
    let x = Tensor::randn(&[6, 5], 1.0, &mut rng);
    let w = Tensor::randn(&[6, 4], 1.0, &mut rng);
    let params = check_module(
        &layer,
        |m| dot(&m.forward(&x).unwrap(), &w),
        |m| {
            let mut g = m.zeros_like();
            m.backward(&x, &w, &mut g);
            g
        },
        STEP,
        None,
    )?;
    let input = check_input(
        &x,
        |x| dot(&layer.forward(x).unwrap(), &w),
        |x| layer.backward(x, &w, &mut layer.zeros_like()),
        STEP,
    )?;
    Ok(GradCase::from_reports("linear", &[params, input]))
}

pub fn check_conv1d(seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = Conv1d::<f64>::new(3, 4, 5, 2, &mut rng)?;
    conv.bias = Tensor::randn(&[4], 0.3, &mut rng);
    let x = Tensor::randn(&[17, 3], 1.0, &mut rng);
    let w = Tensor::randn(&[conv.output_len(17), 4], 1.0, &mut rng);
    let params = check_module(
        &conv,
        |m| dot(&m.forward(&x).unwrap().0, &w),
        |m| {
            let (_, c) = m.forward(&x).unwrap();
            let mut g = m.zeros_like();
            m.backward(&c, &w, &mut g);
            g
        },
        STEP,
        None,
    )?;
    let input = check_input(
        &x,
        |x| dot(&conv.forward(x).unwrap().0, &w),
        |x| {
            let (_, c) = conv.forward(x).unwrap();
            conv.backward(&c, &w, &mut conv.zeros_like())
        },
        STEP,
    )?;
    Ok(GradCase::from_reports("conv1d", &[params, input]))
}

/// Inputs are a shuffled grid with spacing far above the step, so no
/// perturbation changes an argmax.
pub fn check_maxpool(seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 24;
    let mut vals: Vec<f64> = (0..2 * n).map(|i| i as f64 * 0.1).collect();
    rand::seq::SliceRandom::shuffle(vals.as_mut_slice(), &mut rng);
    let x = Tensor::from_f64(&[n, 2], &vals)?;
    let pool = MaxPool1d::new(3, 2)?;
    let w = Tensor::randn(&[pool.output_len(n), 2], 1.0, &mut rng);
    let r = check_input(
        &x,
        |x| dot(&pool.forward(x).unwrap().0, &w),
        |x| {
            let (_, c) = pool.forward(x).unwrap();
            pool.backward(&c, &w)
        },
        STEP,
    )?;
    Ok(GradCase::from_reports("maxpool1d", &[r]))
}

/// Inputs are kept at least 1e-3 away from the kink.
pub fn check_shifted_relu(seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = 0.05;
    let vals: Vec<f64> = (0..40)
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if (v - delta).abs() > 1e-3 {
                break v;
            }
        })
        .collect();
    let x = Tensor::from_f64(&[8, 5], &vals)?;
    let w = Tensor::randn(&[8, 5], 1.0, &mut rng);
    let r = check_input(
        &x,
        |x| dot(&shifted_relu(x, delta), &w),
        |x| shifted_relu_backward(x, delta, &w),
        STEP,
    )?;
    Ok(GradCase::from_reports("shifted_relu", &[r]))
}

pub fn check_attention(seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let att = MultiHeadAttention::<f64>::new(6, 5, 8, 2, &mut rng)?;
    let q = Tensor::randn(&[3, 6], 1.0, &mut rng);
    let kv = Tensor::randn(&[7, 5], 1.0, &mut rng);
    let w = Tensor::randn(&[3, 8], 1.0, &mut rng);
    let params = check_module(
        &att,
        |m| dot(&m.forward(&q, &kv).unwrap().0, &w),
        |m| {
            let (_, c) = m.forward(&q, &kv).unwrap();
            let mut g = m.zeros_like();
            m.backward(&c, &w, &mut g);
            g
        },
        STEP,
        None,
    )?;
    let dq = check_input(
        &q,
        |q| dot(&att.forward(q, &kv).unwrap().0, &w),
        |q| {
            let (_, c) = att.forward(q, &kv).unwrap();
            att.backward(&c, &w, &mut att.zeros_like()).0
        },
        STEP,
    )?;
    let dkv = check_input(
        &kv,
        |kv| dot(&att.forward(&q, kv).unwrap().0, &w),
        |kv| {
            let (_, c) = att.forward(&q, kv).unwrap();
            att.backward(&c, &w, &mut att.zeros_like()).1
        },
        STEP,
    )?;
    Ok(GradCase::from_reports("attention", &[params, dq, dkv]))
}

/// The graph is built once from the unperturbed input and held fixed.
pub fn check_edge_conv(seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = EdgeConv::<f64>::new(4, 1.0, &mut rng);
    for kind in EdgeKind::ALL {
        conv.mlp_mut(kind).bias = Tensor::randn(&[4], 0.3, &mut rng);
    }
    let x = Tensor::randn(&[8, 4], 1.0, &mut rng);
    let n = x.rows() - 1;
    let mut graph = Graph::new(n + 1);
    graph.semantic = semantic_edges(&x.slice_rows(0, n), 2)?;
    graph.temporal = temporal_edges(n);
    for i in 0..n {
        graph.intent.push(Edge::new(n, i));
        graph.intent.push(Edge::new(i, n));
    }
    let w = Tensor::randn(&[8, 4], 1.0, &mut rng);
    let params = check_module(
        &conv,
        |m| dot(&m.forward(&x, &graph).unwrap().0, &w),
        |m| {
            let (_, c) = m.forward(&x, &graph).unwrap();
            let mut g = m.zeros_like();
            m.backward(&c, &w, &mut g);
            g
        },
        STEP,
        None,
    )?;
    let input = check_input(
        &x,
        |x| dot(&conv.forward(x, &graph).unwrap().0, &w),
        |x| {
            let (_, c) = conv.forward(x, &graph).unwrap();
            conv.backward(&c, &w, &mut conv.zeros_like())
        },
        STEP,
    )?;
    Ok(GradCase::from_reports("edge_conv", &[params, input]))
}

/// Narrow model used by the whole-model check.
pub fn check_config(input_dim: usize) -> ModelConfig {
    let mut c = ModelConfig::toy(input_dim);
    c.pathways.fine = c.pathways.fine.with_channels(3);
    c.pathways.coarse = c.pathways.coarse.with_channels(4);
    c.num_intents = 3;
    c.intent_dim = 3;
    c.local_width = 3;
    c.relevance_width = 4;
    c.summary_hidden = 4;
    c.summary_layers = 2;
    c.intent_layers = 2;
    c.intent_hidden = 6;
    c.attention_dim = 4;
    c.attention_heads = 2;
    c
}

/// BCE of the mixed score for one text query, differentiated through the
/// intent module, the mixing step and the summary module. Coordinates are
/// sampled from the parameters that objective depends on.
pub fn check_model(seed: u64, shots: usize, coords: usize) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = check_config(4);
    // delta 0 keeps every mixed term active at initialization
    let cfg = ModelConfig { delta: 0.0, ..cfg };
    let model = Model::<f64>::new(&cfg, seed)?;
    let x = Tensor::randn(&[shots, 4], 1.0, &mut rng);
    let query = Query::Text(Tensor::randn(&[2, WORD_DIM], 1.0, &mut rng));
    let y: Vec<f64> = (0..shots)
        .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
        .collect();
    let delta = model.delta();
    let loss = |m: &Model<f64>| -> f64 {
        let (g, _) = m.intent_forward(&x, &query).unwrap();
        let h = m.shot_scores(&x).unwrap();
        bce_loss(&mix_scores(&g, &h, delta).unwrap(), &y).unwrap()
    };
    let (g, icache) = model.intent_forward(&x, &query)?;
    let (h, scache) = model.summary_forward(&x)?;
    let p = mix_scores(&g, &h, delta)?;
    let dp = bce_grad(&p, &y)?;
    let (dg, dh) = mix_scores_backward(&g, &h, delta, &dp);
    let mut grad = model.zeros_like();
    model.intent_backward(&query, &icache, &dg, &mut grad);
    model.summary.backward(&scache, &dh, &mut grad.summary);

    let trained = model.summary.num_params() + model.text_intent.num_params();
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut idx = sample(&mut pick, trained, coords.min(trained)).into_vec();
    idx.sort_unstable();
    let params = model.flatten();
    let mut probe = model.clone();
    let r = check_flat(
        &params,
        &idx,
        |v| {
            probe.unflatten(v);
            loss(&probe)
        },
        &grad.flatten(),
        STEP,
    )?;
    Ok(GradCase::from_reports("model", &[r]))
}

/// Every check, in a fixed order.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCase>> {
    Ok(vec![
        check_linear(seed)?,
        check_conv1d(seed)?,
        check_maxpool(seed)?,
        check_shifted_relu(seed)?,
        check_attention(seed)?,
        check_edge_conv(seed)?,
        check_model(seed, MODEL_CHECK_SHOTS, MODEL_CHECK_COORDS)?,
    ])
}
