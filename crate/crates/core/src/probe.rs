//! Few-shot linear probing of frozen encoder features.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssl::augment::center_view;
use crate::ssl::model::Model;
use crate::ssl::tensor::Tensor;
use crate::ssl::train::derive_seed;

/// Features `h = f(x)` of each image's center view, one row per image.
pub fn extract_features(model: &Model, images: &[Tensor]) -> Result<Tensor> {
    let side = model.config.input_side;
    let rows: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| model.encode(center_view(img, side)?.data()))
        .collect::<Result<_>>()?;
    Tensor::new(
        vec![images.len(), model.config.embed_dim],
        rows.into_iter().flatten().collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Full-batch gradient steps.
    pub steps: usize,
    /// L2 penalty on the weights (not the biases).
    pub weight_decay: f64,
    /// Scale each feature row to unit length before standardizing.
    pub l2_normalize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 1000,
            weight_decay: 1e-3,
            l2_normalize: true,
        }
    }
}

/// Softmax-linear classifier on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub l2_normalize: bool,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `(classes, dim + 1)`, the last column being the bias.
    pub weights: Vec<f64>,
    pub classes: usize,
}

impl LinearProbe {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        let x = prepare(x, self.l2_normalize);
        let mut v: Vec<f64> = x
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        v.push(1.0);
        v
    }

    fn logits(&self, xt: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim() + 1)
            .map(|w| w.iter().zip(xt).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Predicted class; ties go to the lowest id.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(&self.standardize(x));
        let mut best = 0;
        for (c, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub probe: LinearProbe,
    /// Row indices drawn as shots, grouped by class.
    pub shots: Vec<usize>,
    /// Training objective before each step and after the last.
    pub losses: Vec<f64>,
}

fn prepare(x: &[f64], l2: bool) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if l2 && norm > 0.0 {
        x.iter().map(|v| v / norm).collect()
    } else {
        x.to_vec()
    }
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// `n_per_class` seeded draws per class and the remaining rows.
pub fn draw_shots(labels: &[usize], n_per_class: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut is_shot = vec![false; labels.len()];
    for class in 0..class_count(labels) {
        let rows = by_class.get(&class).map(Vec::as_slice).unwrap_or(&[]);
        if rows.len() < n_per_class {
            return Err(Error::InsufficientShots {
                class,
                available: rows.len(),
                required: n_per_class,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, class as u64]));
        for j in rand::seq::index::sample(&mut rng, rows.len(), n_per_class) {
            is_shot[rows[j]] = true;
        }
    }
    let shots = (0..labels.len()).filter(|&i| is_shot[i]).collect();
    let rest = (0..labels.len()).filter(|&i| !is_shot[i]).collect();
    Ok((shots, rest))
}

/// Cross-entropy probe fitted by full-batch gradient descent on the given rows.
/// The step size `1/L` uses the curvature bound `L = 0.5 * mean |x|^2 + weight_decay`,
/// which makes every step non-increasing in the objective.
pub fn fit_rows(features: &Tensor, labels: &[usize], rows: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<ProbeFit> {
    if rows.is_empty() || classes == 0 {
        return Err(Error::Empty);
    }
    let d = features.shape()[1];
    let n = rows.len() as f64;
    let prepared: Vec<Vec<f64>> = rows.iter().map(|&r| prepare(features.row(r), cfg.l2_normalize)).collect();
    let mut mean = vec![0.0; d];
    for x in &prepared {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for x in &prepared {
        for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let mut probe = LinearProbe {
        l2_normalize: cfg.l2_normalize,
        mean,
        scale,
        weights: vec![0.0; classes * (d + 1)],
        classes,
    };
    let xs: Vec<Vec<f64>> = rows.iter().map(|&r| probe.standardize(features.row(r))).collect();
    let ys: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    let curvature = 0.5 * xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n + cfg.weight_decay;
    let lr = 1.0 / curvature;

    let objective = |w: &[f64], grad: Option<&mut Vec<f64>>| -> f64 {
        let mut loss = 0.0;
        let mut g = vec![0.0; w.len()];
        for (x, &y) in xs.iter().zip(&ys) {
            let logits: Vec<f64> = w
                .chunks_exact(d + 1)
                .map(|wc| wc.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - logits[y];
            for (c, l) in logits.iter().enumerate() {
                let p = (l - lse).exp() - if c == y { 1.0 } else { 0.0 };
                for (gk, xk) in g[c * (d + 1)..(c + 1) * (d + 1)].iter_mut().zip(x) {
                    *gk += p * xk / n;
                }
            }
        }
        loss /= n;
        for c in 0..classes {
            for k in 0..d {
                let wv = w[c * (d + 1) + k];
                loss += 0.5 * cfg.weight_decay * wv * wv;
                g[c * (d + 1) + k] += cfg.weight_decay * wv;
            }
        }
        if let Some(out) = grad {
            *out = g;
        }
        loss
    };

    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut grad = Vec::new();
    for _ in 0..cfg.steps {
        losses.push(objective(&probe.weights, Some(&mut grad)));
        for (w, g) in probe.weights.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
    }
    losses.push(objective(&probe.weights, None));
    Ok(ProbeFit {
        probe,
        shots: rows.to_vec(),
        losses,
    })
}

/// Draws `n_per_class` shots per class with `seed` and fits a probe on them.
pub fn fit_probe(features: &Tensor, labels: &[usize], n_per_class: usize, cfg: &ProbeConfig, seed: u64) -> Result<ProbeFit> {
    if features.shape().first() != Some(&labels.len()) {
        return Err(Error::LengthMismatch(features.shape().first().copied().unwrap_or(0), labels.len()));
    }
    let (shots, _) = draw_shots(labels, n_per_class, seed)?;
    fit_rows(features, labels, &shots, class_count(labels), cfg)
}

/// Exact fraction of matching entries.
pub fn overall_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(Error::Empty);
    }
    let correct = preds.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub oa: f64,
    /// `None` for classes absent from the evaluation rows.
    pub per_class_acc: Vec<Option<f64>>,
    pub n_per_class: usize,
    pub seed: u64,
}

/// Few-shot protocol: fit on seeded shots, evaluate on every other row.
pub fn probe_once(features: &Tensor, labels: &[usize], n_per_class: usize, cfg: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    let fit = fit_probe(features, labels, n_per_class, cfg, seed)?;
    let (_, eval) = draw_shots(labels, n_per_class, seed)?;
    let preds: Vec<usize> = eval.iter().map(|&r| fit.probe.predict(features.row(r))).collect();
    let truth: Vec<usize> = eval.iter().map(|&r| labels[r]).collect();
    let oa = overall_accuracy(&preds, &truth)?;
    let classes = class_count(labels);
    let mut hit = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (p, t) in preds.iter().zip(&truth) {
        total[*t] += 1;
        if p == t {
            hit[*t] += 1;
        }
    }
    Ok(ProbeResult {
        oa,
        per_class_acc: hit
            .iter()
            .zip(&total)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
        n_per_class,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub init: String,
    pub shots: usize,
    pub seed: u64,
    pub oa: f64,
}

/// Probe OA for every (init, shots, seed). An init without a model is an error.
pub fn compare_inits(
    inits: &[(String, Option<&Model>)],
    images: &[Tensor],
    labels: &[usize],
    shots: &[usize],
    seeds: &[u64],
    cfg: &ProbeConfig,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for (name, model) in inits {
        let model = model.ok_or_else(|| Error::MissingCheckpoint(name.clone()))?;
        let features = extract_features(model, images)?;
        for &n in shots {
            let results: Vec<ProbeResult> = seeds
                .par_iter()
                .map(|&s| probe_once(&features, labels, n, cfg, s))
                .collect::<Result<_>>()?;
            rows.extend(results.into_iter().map(|r| ReportRow {
                init: name.clone(),
                shots: n,
                seed: r.seed,
                oa: r.oa,
            }));
        }
    }
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("init,shots,seed,oa\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.6}", r.init, r.shots, r.seed, r.oa);
    }
    out
}

/// `(mean, sample std)` OA of each (init, shots) group in first-seen order.
pub fn summarize(rows: &[ReportRow]) -> Vec<(String, usize, f64, f64)> {
    let mut groups: Vec<((String, usize), Vec<f64>)> = Vec::new();
    for r in rows {
        let key = (r.init.clone(), r.shots);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.oa),
            None => groups.push((key, vec![r.oa])),
        }
    }
    groups
        .into_iter()
        .map(|((init, shots), v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64
            } else {
                0.0
            };
            (init, shots, mean, var.sqrt())
        })
        .collect()
}

pub fn summary_table(rows: &[ReportRow]) -> String {
    let mut out = format!("{:<20} {:>6} {:>16}\n", "init", "shots", "OA (%)");
    for (init, shots, mean, std) in summarize(rows) {
        let _ = writeln!(out, "{init:<20} {shots:>6} {:>9.2} ± {:<5.2}", 100.0 * mean, 100.0 * std);
    }
    out
}
