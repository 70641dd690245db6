#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sysforecast::embedding::sgns_loss_and_grads;
use sysforecast::lstm::{self, LstmParams};
use sysforecast::pipeline;
use sysforecast::synth::{self, SynthConfig, SyntheticTrace};
use sysforecast::window::Window;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor so that gradients that are zero
/// up to roundoff do not dominate.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn random_lstm_instance(
    seed: u64,
    hidden: usize,
    steps: usize,
    input: usize,
) -> (LstmParams, Vec<Vec<f64>>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = LstmParams::zeros(input, hidden);
    for p in params.as_mut_slice() {
        *p = rng.random_range(-0.8..0.8);
    }
    let inputs = (0..steps)
        .map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let target = rng.random_range(0.0..1.0);
    (params, inputs, target)
}

/// Max relative error between `lstm::backward` and central differences of
/// the forward loss, over every parameter.
pub fn lstm_grad_check(params: &LstmParams, inputs: &[Vec<f64>], target: f64) -> f64 {
    let cache = lstm::forward(params, inputs).unwrap();
    let grads = lstm::backward(params, &cache, inputs, target).unwrap();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for k in 0..params.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + FD_STEP;
        let up = lstm::loss(&probe, inputs, target).unwrap();
        probe.as_mut_slice()[k] = orig - FD_STEP;
        let down = lstm::loss(&probe, inputs, target).unwrap();
        probe.as_mut_slice()[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grads.as_slice()[k], numeric));
    }
    worst
}

/// Reference SGNS objective written out independently of the library.
fn sgns_reference_loss(center: &[f64], context: &[f64], negatives: &[Vec<f64>]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let log_sig = |x: f64| -(1.0 + (-x).exp()).ln();
    -log_sig(dot(context, center))
        - negatives
            .iter()
            .map(|n| log_sig(-dot(n, center)))
            .sum::<f64>()
}

/// Max relative error of `sgns_loss_and_grads` on one random instance.
pub fn sgns_grad_check(rng: &mut impl Rng, dim: usize, k: usize) -> f64 {
    let vec = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()
    };
    let center = vec(rng);
    let context = vec(rng);
    let negatives: Vec<Vec<f64>> = (0..k).map(|_| vec(rng)).collect();
    let neg_refs: Vec<&[f64]> = negatives.iter().map(Vec::as_slice).collect();
    let got = sgns_loss_and_grads(&center, &context, &neg_refs);
    let reference = sgns_reference_loss(&center, &context, &negatives);
    assert!((got.loss - reference).abs() < 1e-12 * reference.abs().max(1.0));

    // Flatten [center, context, negatives...] and perturb one coordinate.
    let mut all: Vec<Vec<f64>> = vec![center, context];
    all.extend(negatives);
    let analytic: Vec<&Vec<f64>> = std::iter::once(&got.center)
        .chain(std::iter::once(&got.context))
        .chain(got.negatives.iter())
        .collect();
    let mut worst: f64 = 0.0;
    for v in 0..all.len() {
        for j in 0..dim {
            let orig = all[v][j];
            let eval = |all: &Vec<Vec<f64>>| sgns_reference_loss(&all[0], &all[1], &all[2..]);
            all[v][j] = orig + FD_STEP;
            let up = eval(&all);
            all[v][j] = orig - FD_STEP;
            let down = eval(&all);
            all[v][j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[v][j], numeric));
        }
    }
    worst
}

/// Generates a synthetic trace, writes the canonical files into `dir`, and
/// loads the windows back through the parsers.
pub fn synthetic_windows(config: &SynthConfig, dir: &Path) -> (SyntheticTrace, Vec<Window>) {
    let trace = synth::generate(config).unwrap();
    trace.write_files(dir).unwrap();
    let windows = pipeline::load_windows(dir, config.dt).unwrap();
    (trace, windows)
}
