//! Single-layer LSTM with a sigmoid scalar head, exact backpropagation
//! through time, and an Adam training loop on squared error.
//!
//! Gate rows are stacked in the order input, forget, output, candidate:
//!
//! ```text
//! i, f, o = σ(W x + U h + b)      g = tanh(W x + U h + b)
//! c' = f ⊙ c + i ⊙ g              h' = o ⊙ tanh(c')
//! ŷ = σ(w_out · h_T + b_out)
//! ```

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("no training samples")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("invalid model file: {0}")]
    BadModel(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

const GATES: usize = 4;
const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const CANDIDATE: usize = 3;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// All trainable parameters in one contiguous buffer.
///
/// Layout: `W` (4H × I, row-major), `U` (4H × H), `b` (4H), `w_out` (H),
/// `b_out`. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    input_size: usize,
    hidden: usize,
    data: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        let len =
            GATES * hidden * input_size + GATES * hidden * hidden + GATES * hidden + hidden + 1;
        LstmParams {
            input_size,
            hidden,
            data: vec![0.0; len],
        }
    }

    /// Weights uniform in `(-1/√H, 1/√H)`, forget-gate bias 1, other biases 0.
    pub fn init(input_size: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input_size, hidden);
        let r = 1.0 / (hidden as f64).sqrt();
        let (w, u, _, w_out, _) = p.split_mut();
        for x in w.iter_mut().chain(u.iter_mut()).chain(w_out.iter_mut()) {
            *x = rng.random_range(-r..r);
        }
        let h = hidden;
        p.bias_mut()[FORGET * h..(FORGET + 1) * h].fill(1.0);
        p
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offsets(&self) -> [usize; 5] {
        let (h, i) = (self.hidden, self.input_size);
        let w = 0;
        let u = w + GATES * h * i;
        let b = u + GATES * h * h;
        let w_out = b + GATES * h;
        let b_out = w_out + h;
        [w, u, b, w_out, b_out]
    }

    pub fn input_weights(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[0]..o[1]]
    }

    pub fn recurrent_weights(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[1]..o[2]]
    }

    pub fn bias(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[2]..o[3]]
    }

    pub fn head_weights(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[3]..o[4]]
    }

    pub fn head_bias(&self) -> f64 {
        self.data[self.offsets()[4]]
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[2]..o[3]]
    }

    #[allow(clippy::type_complexity)]
    fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64], &mut f64) {
        let o = self.offsets();
        let (w, rest) = self.data.split_at_mut(o[1]);
        let (u, rest) = rest.split_at_mut(o[2] - o[1]);
        let (b, rest) = rest.split_at_mut(o[3] - o[2]);
        let (w_out, rest) = rest.split_at_mut(o[4] - o[3]);
        (w, u, b, w_out, &mut rest[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Per-timestep activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    pub cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub steps: Vec<StepCache>,
    pub prediction: f64,
}

fn check_inputs(params: &LstmParams, inputs: &[Vec<f64>]) -> Result<(), LstmError> {
    if inputs.is_empty() {
        return Err(LstmError::EmptySequence);
    }
    if let Some(x) = inputs.iter().find(|x| x.len() != params.input_size) {
        return Err(LstmError::DimensionMismatch {
            expected: params.input_size,
            got: x.len(),
        });
    }
    Ok(())
}

/// Pre-activations `W x + U h + b` for all four gates.
fn preactivations(params: &LstmParams, x: &[f64], h_prev: &[f64], z: &mut [f64]) {
    let (hid, inp) = (params.hidden, params.input_size);
    let w = params.input_weights();
    let u = params.recurrent_weights();
    z.copy_from_slice(params.bias());
    for (r, zr) in z.iter_mut().enumerate() {
        let wr = &w[r * inp..(r + 1) * inp];
        let ur = &u[r * hid..(r + 1) * hid];
        let mut acc = 0.0;
        for (a, b) in wr.iter().zip(x) {
            acc += a * b;
        }
        for (a, b) in ur.iter().zip(h_prev) {
            acc += a * b;
        }
        *zr += acc;
    }
}

/// Runs the recurrence from zero state over `inputs` and applies the head.
pub fn forward(params: &LstmParams, inputs: &[Vec<f64>]) -> Result<ForwardCache, LstmError> {
    check_inputs(params, inputs)?;
    let h = params.hidden;
    let mut z = vec![0.0; GATES * h];
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut steps = Vec::with_capacity(inputs.len());

    for x in inputs {
        preactivations(params, x, &h_prev, &mut z);
        let gate = |g: usize, f: fn(f64) -> f64| -> Vec<f64> {
            z[g * h..(g + 1) * h].iter().map(|&v| f(v)).collect()
        };
        let i = gate(INPUT, sigmoid);
        let f = gate(FORGET, sigmoid);
        let o = gate(OUTPUT, sigmoid);
        let g = gate(CANDIDATE, f64::tanh);
        let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let hn: Vec<f64> = (0..h).map(|k| o[k] * c[k].tanh()).collect();
        h_prev.clone_from(&hn);
        c_prev.clone_from(&c);
        steps.push(StepCache {
            input_gate: i,
            forget_gate: f,
            output_gate: o,
            candidate: g,
            cell: c,
            hidden: hn,
        });
    }

    let logit: f64 = params
        .head_weights()
        .iter()
        .zip(&h_prev)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        + params.head_bias();
    Ok(ForwardCache {
        steps,
        prediction: sigmoid(logit),
    })
}

/// Prediction only.
pub fn predict(params: &LstmParams, inputs: &[Vec<f64>]) -> Result<f64, LstmError> {
    forward(params, inputs).map(|c| c.prediction)
}

/// Squared-error loss `(ŷ - target)²` for one sequence.
pub fn loss(params: &LstmParams, inputs: &[Vec<f64>], target: f64) -> Result<f64, LstmError> {
    let p = predict(params, inputs)?;
    Ok((p - target) * (p - target))
}

/// Gradient of `(ŷ - target)²` with respect to every parameter.
pub fn backward(
    params: &LstmParams,
    cache: &ForwardCache,
    inputs: &[Vec<f64>],
    target: f64,
) -> Result<LstmParams, LstmError> {
    let mut grads = LstmParams::zeros(params.input_size, params.hidden);
    accumulate_backward(params, cache, inputs, target, 1.0, &mut grads)?;
    Ok(grads)
}

/// Adds `scale · ∇(ŷ - target)²` into `grads`.
fn accumulate_backward(
    params: &LstmParams,
    cache: &ForwardCache,
    inputs: &[Vec<f64>],
    target: f64,
    scale: f64,
    grads: &mut LstmParams,
) -> Result<(), LstmError> {
    check_inputs(params, inputs)?;
    if cache.steps.len() != inputs.len() {
        return Err(LstmError::DimensionMismatch {
            expected: inputs.len(),
            got: cache.steps.len(),
        });
    }
    if grads.input_size != params.input_size || grads.hidden != params.hidden {
        return Err(LstmError::DimensionMismatch {
            expected: params.data.len(),
            got: grads.data.len(),
        });
    }
    let (hid, inp) = (params.hidden, params.input_size);
    let steps = &cache.steps;
    let t_last = steps.len() - 1;
    let p = cache.prediction;
    let d_logit = scale * 2.0 * (p - target) * p * (1.0 - p);

    let u = params.recurrent_weights();
    let w_out = params.head_weights();
    let (gw, gu, gb, gw_out, gb_out) = grads.split_mut();

    *gb_out += d_logit;
    for k in 0..hid {
        gw_out[k] += d_logit * steps[t_last].hidden[k];
    }

    let mut dh: Vec<f64> = w_out.iter().map(|w| d_logit * w).collect();
    let mut dc = vec![0.0; hid];
    let mut dz = vec![0.0; GATES * hid];
    let zeros = vec![0.0; hid];

    for t in (0..=t_last).rev() {
        let s = &steps[t];
        let (c_prev, h_prev) = if t == 0 {
            (&zeros, &zeros)
        } else {
            (&steps[t - 1].cell, &steps[t - 1].hidden)
        };
        for k in 0..hid {
            let tc = s.cell[k].tanh();
            let (i, f, o, g) = (
                s.input_gate[k],
                s.forget_gate[k],
                s.output_gate[k],
                s.candidate[k],
            );
            let d_o = dh[k] * tc;
            dc[k] += dh[k] * o * (1.0 - tc * tc);
            let d_i = dc[k] * g;
            let d_g = dc[k] * i;
            let d_f = dc[k] * c_prev[k];
            dz[INPUT * hid + k] = d_i * i * (1.0 - i);
            dz[FORGET * hid + k] = d_f * f * (1.0 - f);
            dz[OUTPUT * hid + k] = d_o * o * (1.0 - o);
            dz[CANDIDATE * hid + k] = d_g * (1.0 - g * g);
            // carry to c_{t-1}
            dc[k] *= f;
        }
        let x = &inputs[t];
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            gb[r] += dzr;
            for (gwr, xv) in gw[r * inp..(r + 1) * inp].iter_mut().zip(x) {
                *gwr += dzr * xv;
            }
            for (gur, hv) in gu[r * hid..(r + 1) * hid].iter_mut().zip(h_prev) {
                *gur += dzr * hv;
            }
        }
        // dh_{t-1} = Uᵀ dz
        dh.fill(0.0);
        for (r, &dzr) in dz.iter().enumerate() {
            for (dhk, ur) in dh.iter_mut().zip(&u[r * hid..(r + 1) * hid]) {
                *dhk += ur * dzr;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub history: usize,
    pub horizon: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 32,
            history: 10,
            horizon: 1,
            epochs: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LstmError> {
        let bad = |m: &str| Err(LstmError::BadConfig(m.to_string()));
        if self.hidden == 0 || self.history == 0 || self.horizon == 0 {
            return bad("hidden, history and horizon must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decays must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// One supervised example: `history` consecutive feature rows and the
/// utilization `horizon` windows after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Vec<f64>>,
    pub target: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: LstmParams,
    /// Mean squared error over the training set, one entry per epoch,
    /// accumulated over the epoch's minibatches.
    pub loss_history: Vec<f64>,
}

/// Minibatch Adam on mean squared error. Shuffling and initialization are
/// seeded; the run is bitwise deterministic for a given seed.
pub fn train(samples: &[Sample], config: &TrainConfig) -> Result<TrainedModel, LstmError> {
    config.validate()?;
    let first = samples.first().ok_or(LstmError::EmptyDataset)?;
    let input_size = first.inputs.first().map_or(0, Vec::len);
    if input_size == 0 {
        return Err(LstmError::EmptySequence);
    }
    for s in samples {
        if s.inputs.len() != first.inputs.len() {
            return Err(LstmError::DimensionMismatch {
                expected: first.inputs.len(),
                got: s.inputs.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = LstmParams::init(input_size, config.hidden, &mut rng);
    train_from(params, samples, config, &mut rng)
}

/// Continues training from given parameters.
pub fn train_from(
    mut params: LstmParams,
    samples: &[Sample],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainedModel, LstmError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(LstmError::EmptyDataset);
    }
    let mut adam = Adam::new(params.data.len());
    let mut grads = LstmParams::zeros(params.input_size, params.hidden);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut sse = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.data.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let s = &samples[idx];
                let cache = forward(&params, &s.inputs)?;
                let err = cache.prediction - s.target;
                sse += err * err;
                accumulate_backward(&params, &cache, &s.inputs, s.target, scale, &mut grads)?;
            }
            adam.step(&mut params.data, &grads.data, config);
        }
        loss_history.push(sse / samples.len() as f64);
    }
    Ok(TrainedModel {
        params,
        loss_history,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    input_size: usize,
    hidden: usize,
    gate_order: [String; 4],
    /// 4H × I, row-major.
    input_weights: Vec<f64>,
    /// 4H × H, row-major.
    recurrent_weights: Vec<f64>,
    bias: Vec<f64>,
    head_weights: Vec<f64>,
    head_bias: f64,
    config: TrainConfig,
}

pub fn write_model<W: Write>(
    out: W,
    params: &LstmParams,
    config: &TrainConfig,
) -> Result<(), LstmError> {
    let file = ModelFile {
        input_size: params.input_size,
        hidden: params.hidden,
        gate_order: ["input", "forget", "output", "candidate"].map(String::from),
        input_weights: params.input_weights().to_vec(),
        recurrent_weights: params.recurrent_weights().to_vec(),
        bias: params.bias().to_vec(),
        head_weights: params.head_weights().to_vec(),
        head_bias: params.head_bias(),
        config: config.clone(),
    };
    serde_json::to_writer_pretty(out, &file)?;
    Ok(())
}

pub fn read_model<R: Read>(input: R) -> Result<(LstmParams, TrainConfig), LstmError> {
    let file: ModelFile = serde_json::from_reader(input)?;
    let mut params = LstmParams::zeros(file.input_size, file.hidden);
    let expect = |name: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(LstmError::BadModel(format!(
                "{name}: expected {want} values, got {got}"
            )))
        }
    };
    let (w, u, b, w_out, b_out) = params.split_mut();
    expect("input_weights", file.input_weights.len(), w.len())?;
    expect("recurrent_weights", file.recurrent_weights.len(), u.len())?;
    expect("bias", file.bias.len(), b.len())?;
    expect("head_weights", file.head_weights.len(), w_out.len())?;
    w.copy_from_slice(&file.input_weights);
    u.copy_from_slice(&file.recurrent_weights);
    b.copy_from_slice(&file.bias);
    w_out.copy_from_slice(&file.head_weights);
    *b_out = file.head_bias;
    if !params.is_finite() {
        return Err(LstmError::BadModel("non-finite parameter".into()));
    }
    Ok((params, file.config))
}
