//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use vwd_core::cnn::*;
use vwd_core::cohort::{FlowSeries, Label};
use vwd_core::rng::task_rng;
use vwd_core::synth::{generate_cohort_series, SynthConfig};

pub const GRADCHECK_EPS: f64 = 1e-5;

/// Outcome of the finite-difference check for one layer type.
#[derive(Clone, Debug, Default)]
pub struct LayerCheck {
    pub checked: usize,
    pub available: usize,
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
}

pub fn layer_type(name: &str) -> &'static str {
    if name.starts_with("conv") {
        "conv"
    } else if name.ends_with(".gamma") {
        "bn_scale"
    } else if name.ends_with(".beta") {
        "bn_shift"
    } else {
        "affine"
    }
}

fn train_loss(net: &DenseNet<f64>, batch: &Batch<f64>, labels: &[usize]) -> (f64, ForwardCache<f64>) {
    let out = forward(net, batch, Mode::Train).unwrap();
    (cross_entropy(&out.logits, labels), out.cache)
}

/// Central differences against the analytic gradient for up to `per_type`
/// parameters of each layer type. A parameter whose perturbation moves any
/// ReLU or max-pool decision sits on a kink and is replaced by another.
pub fn gradient_check(
    net: &DenseNet<f64>,
    batch: &Batch<f64>,
    labels: &[usize],
    per_type: usize,
    seed: u64,
) -> BTreeMap<&'static str, LayerCheck> {
    let out = forward(net, batch, Mode::Train).unwrap();
    let grads = backward(net, &out.cache, &out.logits, labels).unwrap();
    let named = grads.named();

    let mut by_type: BTreeMap<&'static str, Vec<(usize, usize)>> = BTreeMap::new();
    for (a, (name, arr)) in named.iter().enumerate() {
        by_type
            .entry(layer_type(name))
            .or_default()
            .extend((0..arr.len()).map(|i| (a, i)));
    }

    let mut rng = task_rng(seed, &[]);
    let mut report = BTreeMap::new();
    for (ty, mut params) in by_type {
        params.shuffle(&mut rng);
        let mut r = LayerCheck {
            available: params.len(),
            ..Default::default()
        };
        for (a, i) in params {
            if r.checked == per_type {
                break;
            }
            let probe = |delta: f64| {
                let mut p = net.clone();
                p.weights.arrays_mut()[a][i] += delta;
                train_loss(&p, batch, labels)
            };
            let (lp, cp) = probe(GRADCHECK_EPS);
            let (lm, cm) = probe(-GRADCHECK_EPS);
            if !(cp.same_pattern(&out.cache) && cm.same_pattern(&out.cache)) {
                r.kinks_skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * GRADCHECK_EPS);
            let analytic = named[a].1[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            r.max_rel_error = r.max_rel_error.max(rel);
            r.checked += 1;
        }
        report.insert(ty, r);
    }
    report
}

/// A desk network moved off its identity batch norms so every parameter
/// has a non-trivial gradient.
pub fn perturbed_net(cfg: DenseNetConfig, seed: u64) -> DenseNet<f64> {
    let mut rng = task_rng(seed, &[0]);
    let mut net = DenseNet::init(cfg, &mut rng).unwrap();
    for bn in &mut net.weights.bns {
        bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
        bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    net.weights.fc_b = vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
    net
}

pub fn random_rows(n: usize, width: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = task_rng(seed, &[1]);
    (0..n)
        .map(|_| (0..width).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn batch_of(rows: &[Vec<f64>], channels: usize, length: usize) -> Batch<f64> {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Batch::from_rows(&refs, channels, length).unwrap()
}

pub fn cohort(cfg: &SynthConfig) -> Vec<FlowSeries> {
    generate_cohort_series(cfg)
        .unwrap()
        .into_iter()
        .map(|(s, _)| s)
        .collect()
}

pub fn roster(cohort: &[FlowSeries]) -> Vec<(String, Label)> {
    cohort.iter().map(|s| (s.patient_id.clone(), s.label)).collect()
}

pub fn patients(n_ards: usize, n_non: usize) -> Vec<(String, Label)> {
    (0..n_ards)
        .map(|i| (format!("a{i:03}"), Label::Ards))
        .chain((0..n_non).map(|i| (format!("n{i:03}"), Label::NonArds)))
        .collect()
}
