//! Per-class score banks and two-component Gaussian-mixture thresholds.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-capacity FIFO of recent confidence scores, one queue per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBank {
    capacity: usize,
    queues: BTreeMap<usize, VecDeque<f64>>,
}

impl Default for ScoreBank {
    fn default() -> Self {
        Self::new(200)
    }
}

impl ScoreBank {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            queues: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn scores(&self, class_id: usize) -> Vec<f64> {
        self.queues
            .get(&class_id)
            .map(|q| q.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn len(&self, class_id: usize) -> usize {
        self.queues.get(&class_id).map_or(0, VecDeque::len)
    }

    /// Keeps the top `round(sum(scores))` scores (at least one when any score
    /// is positive) and appends them, evicting the oldest beyond capacity.
    /// Returns how many scores were stored.
    pub fn push(&mut self, class_id: usize, scores: &[f64]) -> Result<usize> {
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("bank scores must lie in [0, 1]"));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut k = sorted.iter().sum::<f64>().round() as usize;
        if k == 0 && sorted.first().is_some_and(|&s| s > 0.0) {
            k = 1;
        }
        let k = k.min(sorted.len());
        let queue = self.queues.entry(class_id).or_default();
        queue.extend(&sorted[..k]);
        while queue.len() > self.capacity {
            queue.pop_front();
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub var_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            var_floor: 1e-4,
        }
    }
}

/// Two-component fit, components ordered so that `mu_n <= mu_p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmFit {
    pub w_n: f64,
    pub w_p: f64,
    pub mu_n: f64,
    pub mu_p: f64,
    pub var_n: f64,
    pub var_p: f64,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood after initialization and after every EM iteration.
    #[serde(skip)]
    pub ll_trace: Vec<f64>,
}

fn log_normal(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((x - mu).powi(2) / var + var.ln() + (2.0 * std::f64::consts::PI).ln())
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Clone, Copy)]
struct Params {
    w: [f64; 2],
    mu: [f64; 2],
    var: [f64; 2],
}

impl Params {
    fn log_joint(&self, x: f64) -> [f64; 2] {
        [0, 1].map(|k| self.w[k].ln() + log_normal(x, self.mu[k], self.var[k]))
    }

    fn log_likelihood(&self, xs: &[f64]) -> f64 {
        xs.iter()
            .map(|&x| {
                let [a, b] = self.log_joint(x);
                log_add(a, b)
            })
            .sum()
    }
}

fn moments(xs: &[f64], floor: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    (mu, var.max(floor))
}

/// Fits a two-component univariate mixture by EM, starting from a median split.
///
/// Stops when an iteration improves the log-likelihood by less than `tol`, or
/// after `max_iters` iterations. Variances never drop below `var_floor`.
pub fn em_fit(samples: &[f64], config: &EmConfig) -> Result<GmmFit> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.first() == sorted.last() {
        return Err(Error::Degenerate(format!(
            "need at least 2 distinct samples, got {} values",
            samples.len()
        )));
    }
    // Sorting first also makes the fit independent of input order.
    let xs = &sorted;
    let n = xs.len();
    let half = n / 2;
    let (mu0, var0) = moments(&xs[..half], config.var_floor);
    let (mu1, var1) = moments(&xs[half..], config.var_floor);
    let mut p = Params {
        w: [half as f64 / n as f64, (n - half) as f64 / n as f64],
        mu: [mu0, mu1],
        var: [var0, var1],
    };
    let mut ll = p.log_likelihood(xs);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut resp = vec![0.0; n];
    while iterations < config.max_iters {
        // E-step: responsibility of component 1
        for (r, &x) in resp.iter_mut().zip(xs) {
            let [a, b] = p.log_joint(x);
            *r = 1.0 / (1.0 + (a - b).exp());
        }
        // M-step
        let n1: f64 = resp.iter().sum();
        let n0 = n as f64 - n1;
        let mut next = p;
        for (k, nk) in [(0usize, n0), (1, n1)] {
            let weight = |r: f64| if k == 1 { r } else { 1.0 - r };
            if nk <= 0.0 {
                next.w[k] = 0.0;
                continue;
            }
            let mu = resp.iter().zip(xs).map(|(&r, &x)| weight(r) * x).sum::<f64>() / nk;
            let var = resp
                .iter()
                .zip(xs)
                .map(|(&r, &x)| weight(r) * (x - mu).powi(2))
                .sum::<f64>()
                / nk;
            next.w[k] = nk / n as f64;
            next.mu[k] = mu;
            next.var[k] = var.max(config.var_floor);
        }
        p = next;
        iterations += 1;
        let new_ll = p.log_likelihood(xs);
        trace.push(new_ll);
        let gain = new_ll - ll;
        ll = new_ll;
        if gain < config.tol {
            break;
        }
    }
    let (neg, pos) = if p.mu[0] <= p.mu[1] { (0, 1) } else { (1, 0) };
    Ok(GmmFit {
        w_n: p.w[neg],
        w_p: p.w[pos],
        mu_n: p.mu[neg],
        mu_p: p.mu[pos],
        var_n: p.var[neg],
        var_p: p.var[pos],
        iterations,
        log_likelihood: ll,
        ll_trace: trace,
    })
}

/// Posterior probability that score `s` belongs to the positive component.
pub fn posterior_positive(fit: &GmmFit, s: f64) -> f64 {
    let lp = fit.w_p.ln() + log_normal(s, fit.mu_p, fit.var_p);
    let ln = fit.w_n.ln() + log_normal(s, fit.mu_n, fit.var_n);
    if lp == f64::NEG_INFINITY {
        return 0.0;
    }
    1.0 / (1.0 + (ln - lp).exp())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// The bank score with the highest positive posterior (smallest on ties).
    #[default]
    Argmax,
    /// Where the positive posterior crosses 0.5 below the argmax: the lowest
    /// score of the contiguous run of samples with posterior >= 0.5 that
    /// contains the argmax sample. Falls back to the argmax sample when its
    /// posterior is below 0.5.
    Crossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Gmm,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdDecision {
    pub tau: f64,
    pub source: ThresholdSource,
}

/// Minimum component weight below which the fit is not trusted.
pub const MIN_COMPONENT_WEIGHT: f64 = 0.01;

pub fn adaptive_threshold(fit: &GmmFit, samples: &[f64], fallback_tau: f64, rule: ThresholdRule) -> ThresholdDecision {
    let fallback = ThresholdDecision {
        tau: fallback_tau,
        source: ThresholdSource::Fallback,
    };
    if fit.w_n.min(fit.w_p) < MIN_COMPONENT_WEIGHT || samples.is_empty() {
        return fallback;
    }
    let mut scored: Vec<(f64, f64)> = samples.iter().map(|&s| (s, posterior_positive(fit, s))).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = 0;
    for (i, &(_, post)) in scored.iter().enumerate() {
        if post > scored[best].1 {
            best = i;
        }
    }
    let idx = match rule {
        ThresholdRule::Argmax => best,
        ThresholdRule::Crossing if scored[best].1 < 0.5 => best,
        ThresholdRule::Crossing => {
            let mut i = best;
            while i > 0 && scored[i - 1].1 >= 0.5 {
                i -= 1;
            }
            i
        }
    };
    ThresholdDecision {
        tau: scored[idx].0,
        source: ThresholdSource::Gmm,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub em: EmConfig,
    pub fallback_tau: f64,
    pub rule: ThresholdRule,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            em: EmConfig::default(),
            fallback_tau: 0.4,
            rule: ThresholdRule::Argmax,
        }
    }
}

/// Fits the bank contents and derives a threshold, falling back when the
/// samples cannot support a two-component fit.
pub fn threshold_for_scores(samples: &[f64], config: &ThresholdConfig) -> Result<ThresholdDecision> {
    match em_fit(samples, &config.em) {
        Ok(fit) => Ok(adaptive_threshold(&fit, samples, config.fallback_tau, config.rule)),
        Err(Error::Degenerate(_)) => Ok(ThresholdDecision {
            tau: config.fallback_tau,
            source: ThresholdSource::Fallback,
        }),
        Err(e) => Err(e),
    }
}
