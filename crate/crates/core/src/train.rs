//! Initialization, ADAM fitting of `{θ, Z, m_k, S_k}` against the ELBO, and
//! finite-difference gradient checking.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GgpError, Result};
use crate::features::{KernelFamily, KernelSpec};
use crate::linalg::{sigmoid, softplus, softplus_inverse};
use crate::prior::GgpPrior;
use crate::svgp::{
    predict_proba, ElboGrad, ElboObjective, QuadratureRule, RobustMaxLikelihood, VariationalState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub quad_points: usize,
    pub epsilon: f64,
    pub train_z: bool,
    pub tfidf: bool,
    /// Reset kernel hyperparameters with the data-driven rule before fitting.
    pub init_hyperparameters: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            max_iters: 2000,
            seed: 0,
            quad_points: QuadratureRule::DEFAULT_POINTS,
            epsilon: RobustMaxLikelihood::DEFAULT_EPSILON,
            train_z: true,
            tfidf: true,
            init_hyperparameters: true,
        }
    }
}

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(GgpError::input(format!("{key}: expected a boolean, got `{value}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| GgpError::input(format!("{key}: cannot parse `{value}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GgpError::input("learning_rate must be > 0"));
        }
        if self.quad_points == 0 {
            return Err(GgpError::input("quad_points must be >= 1"));
        }
        Ok(())
    }

    /// Sets one field from its config-file key. Returns `false` for keys
    /// this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "max_iters" => self.max_iters = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "quad_points" => self.quad_points = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "train_z" => self.train_z = parse_flag(key, value)?,
            "tfidf" => self.tfidf = parse_flag(key, value)?,
            "init_hyperparameters" => self.init_hyperparameters = parse_flag(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| GgpError::input(format!("config line {}: expected key=value", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Fit result: the prior under the final hyperparameters plus `q(u)`.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub prior: GgpPrior,
    pub state: VariationalState,
    pub likelihood: RobustMaxLikelihood,
    pub quad: QuadratureRule,
    /// ELBO before each ADAM step.
    pub elbo_trace: Vec<f64>,
    /// ELBO of the returned parameters.
    pub final_elbo: f64,
}

impl TrainedModel {
    pub fn predict_proba(&self, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
        predict_proba(&self.prior, &self.state, &self.likelihood, &self.quad, idx)
    }

    pub fn predict(&self, idx: &[usize]) -> Result<Vec<usize>> {
        Ok(self.predict_proba(idx)?.iter().map(|r| crate::svgp::argmax(r)).collect())
    }

    /// Fraction of `idx` whose predicted class equals `labels[node]`.
    pub fn accuracy(&self, idx: &[usize], labels: &[usize]) -> Result<f64> {
        if idx.is_empty() {
            return Err(GgpError::input("accuracy over an empty node set"));
        }
        let pred = self.predict(idx)?;
        let hits = idx.iter().zip(&pred).filter(|(&n, &p)| labels[n] == p).count();
        Ok(hits as f64 / idx.len() as f64)
    }

    /// `iter,elbo` CSV of the trace.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,elbo\n");
        for (i, v) in self.elbo_trace.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }
}

/// Data-driven starting hyperparameters: variance `1 / mean ⟨μ̂_n, μ̂_n⟩` over
/// the labelled nodes, offset 1.
pub fn initial_kernel(prior: &GgpPrior, labelled: &[usize]) -> Result<KernelSpec> {
    if labelled.is_empty() {
        return Err(GgpError::input("cannot initialize from an empty labelled set"));
    }
    let mean_sq = labelled
        .iter()
        .map(|&n| prior.mean_embedding(n).as_row().norm_sq())
        .sum::<f64>()
        / labelled.len() as f64;
    let variance = if mean_sq > 0.0 && mean_sq.is_finite() { 1.0 / mean_sq } else { 1.0 };
    match prior.spec().family {
        KernelFamily::Linear => KernelSpec::linear(variance),
        KernelFamily::Polynomial => KernelSpec::polynomial(variance, 1.0),
    }
}

/// `M = |labelled|` inducing inputs at the labelled nodes' averaged feature
/// rows plus small seeded Gaussian noise; `m_k = 0`, `S_k = I`.
pub fn initialize(prior: &GgpPrior, labelled: &[usize], n_classes: usize, config: &TrainConfig) -> Result<VariationalState> {
    if labelled.is_empty() {
        return Err(GgpError::input("cannot initialize from an empty labelled set"));
    }
    if let Some(&bad) = labelled.iter().find(|&&n| n >= prior.n_nodes()) {
        return Err(GgpError::input(format!("labelled node {bad} out of range")));
    }
    let d = prior.n_features();
    let m = labelled.len();
    let mut z = DMatrix::<f64>::zeros(m, d);
    for (row, &n) in labelled.iter().enumerate() {
        let e = prior.mean_embedding(n);
        for (&k, &v) in e.indices.iter().zip(&e.values) {
            z[(row, k)] = v;
        }
    }
    let count = (m * d) as f64;
    let mean = z.sum() / count;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let sd = (1e-4 * if var > 0.0 { var } else { 1.0 }).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, sd).expect("positive standard deviation");
    // row-major draw order so the noise does not depend on storage layout
    for i in 0..m {
        for k in 0..d {
            z[(i, k)] += noise.sample(&mut rng);
        }
    }
    Ok(VariationalState::prior(z, n_classes))
}

/// Layout of the flat unconstrained parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    family: KernelFamily,
    m: usize,
    d: usize,
    k: usize,
    train_z: bool,
}

impl ParamLayout {
    pub fn new(family: KernelFamily, m: usize, d: usize, k: usize, train_z: bool) -> Self {
        ParamLayout { family, m, d, k, train_z }
    }

    /// The linear kernel's variance is not a free parameter: whitened
    /// marginal means scale with `σ` and variances with `σ²`, and the
    /// robust-max argmax is invariant to that common rescaling, so the ELBO
    /// does not depend on it.
    fn n_kernel(&self) -> usize {
        match self.family {
            KernelFamily::Linear => 0,
            KernelFamily::Polynomial => 2,
        }
    }

    fn n_tri(&self) -> usize {
        self.m * (self.m + 1) / 2
    }

    /// Named contiguous blocks: kernel, inducing, mean, scale.
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        let mut out = Vec::new();
        let mut at = 0;
        let mut push = |name, len| {
            if len > 0 {
                out.push((name, at..at + len));
            }
            at += len;
        };
        push("kernel", self.n_kernel());
        push("inducing", if self.train_z { self.m * self.d } else { 0 });
        push("mean", self.k * self.m);
        push("scale", self.k * self.n_tri());
        out
    }

    pub fn len(&self) -> usize {
        self.blocks().last().map_or(0, |(_, r)| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, spec: &KernelSpec, state: &VariationalState) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        if self.family == KernelFamily::Polynomial {
            x.push(softplus_inverse(spec.variance));
            x.push(softplus_inverse(spec.offset.max(1e-12)));
        }
        if self.train_z {
            for i in 0..self.m {
                for j in 0..self.d {
                    x.push(state.z[(i, j)]);
                }
            }
        }
        for mk in &state.means {
            x.extend(mk.iter());
        }
        for sk in &state.scales {
            for i in 0..self.m {
                for j in 0..i {
                    x.push(sk[(i, j)]);
                }
                x.push(softplus_inverse(sk[(i, i)]));
            }
        }
        x
    }

    /// Constrained parameters. `base` supplies fixed hyperparameters and `z`
    /// the inducing inputs when they are not trained.
    pub fn unpack(&self, x: &[f64], base: &KernelSpec, z: &DMatrix<f64>) -> Result<(KernelSpec, VariationalState)> {
        let mut it = x.iter().copied();
        let mut next = || it.next().expect("parameter vector matches layout");
        let spec = match self.family {
            KernelFamily::Linear => *base,
            KernelFamily::Polynomial => {
                let v = softplus(next());
                KernelSpec::polynomial(v, softplus(next()))?
            }
        };
        let z = if self.train_z {
            let mut z = DMatrix::zeros(self.m, self.d);
            for i in 0..self.m {
                for j in 0..self.d {
                    z[(i, j)] = next();
                }
            }
            z
        } else {
            z.clone()
        };
        let means = (0..self.k).map(|_| DVector::from_fn(self.m, |_, _| next())).collect();
        let mut scales = Vec::with_capacity(self.k);
        for _ in 0..self.k {
            let mut s = DMatrix::zeros(self.m, self.m);
            for i in 0..self.m {
                for j in 0..i {
                    s[(i, j)] = next();
                }
                s[(i, i)] = softplus(next());
            }
            scales.push(s);
        }
        Ok((spec, VariationalState { z, means, scales }))
    }

    /// Chains a constrained-space gradient through the softplus transforms.
    pub fn chain(&self, x: &[f64], g: &ElboGrad) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        if self.family == KernelFamily::Polynomial {
            out.push(g.variance * sigmoid(x[0]));
            out.push(g.offset * sigmoid(x[1]));
        }
        if self.train_z {
            for i in 0..self.m {
                for j in 0..self.d {
                    out.push(g.z[(i, j)]);
                }
            }
        }
        for gm in &g.means {
            out.extend(gm.iter());
        }
        for gs in &g.scales {
            for i in 0..self.m {
                for j in 0..i {
                    out.push(gs[(i, j)]);
                }
                let pos = out.len();
                out.push(gs[(i, i)] * sigmoid(x[pos]));
            }
        }
        out
    }
}

/// ADAM for minimization.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            x[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Raised when the ELBO or its gradient stops being finite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Divergence {
    pub iteration: usize,
    pub spec: KernelSpec,
    pub state: VariationalState,
}

/// Outcome of [`fit`] when it aborts: the error plus, for divergence, the
/// last finite parameters.
#[derive(Debug)]
pub struct FitError {
    pub error: GgpError,
    pub divergence: Option<Box<Divergence>>,
}

impl From<GgpError> for FitError {
    fn from(error: GgpError) -> Self {
        FitError { error, divergence: None }
    }
}

impl std::fmt::Display for FitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for FitError {}

fn likelihood_for(labelled: &[(usize, usize)], n_classes: usize, config: &TrainConfig) -> Result<(RobustMaxLikelihood, QuadratureRule)> {
    let lik = RobustMaxLikelihood::new(n_classes, config.epsilon)?;
    let quad = QuadratureRule::gauss_hermite(config.quad_points)?;
    let mut seen = vec![false; n_classes];
    for &(_, y) in labelled {
        if y < n_classes {
            seen[y] = true;
        }
    }
    let missing: Vec<usize> = (0..n_classes).filter(|&k| !seen[k]).collect();
    if !missing.is_empty() {
        log::warn!("classes without any label: {missing:?}");
    }
    Ok((lik, quad))
}

/// Full-batch ADAM on the ELBO. Deterministic for fixed inputs and config.
pub fn fit(
    prior: &GgpPrior,
    labelled: &[(usize, usize)],
    n_classes: usize,
    config: &TrainConfig,
) -> std::result::Result<TrainedModel, FitError> {
    config.validate()?;
    let nodes: Vec<usize> = labelled.iter().map(|&(n, _)| n).collect();
    let (lik, quad) = likelihood_for(labelled, n_classes, config)?;
    let spec = if config.init_hyperparameters {
        initial_kernel(prior, &nodes)?
    } else {
        *prior.spec()
    };
    let prior = prior.with_spec(spec)?;
    let state = initialize(&prior, &nodes, n_classes, config)?;
    fit_from(&prior, state, labelled, lik, quad, config)
}

/// ADAM from a given starting point.
pub fn fit_from(
    prior: &GgpPrior,
    state: VariationalState,
    labelled: &[(usize, usize)],
    lik: RobustMaxLikelihood,
    quad: QuadratureRule,
    config: &TrainConfig,
) -> std::result::Result<TrainedModel, FitError> {
    state.validate()?;
    let objective = ElboObjective::new(prior, labelled, lik, quad.clone())?;
    let layout = ParamLayout::new(
        prior.spec().family,
        state.n_inducing(),
        prior.n_features(),
        state.n_classes(),
        config.train_z,
    );
    let fixed_z = state.z.clone();
    let mut x = layout.pack(prior.spec(), &state);
    let mut adam = Adam::new(x.len(), config.learning_rate);
    let mut trace = Vec::with_capacity(config.max_iters);
    let mut last_good = (*prior.spec(), state);

    for iteration in 0..config.max_iters {
        let (spec, st) = layout.unpack(&x, prior.spec(), &fixed_z)?;
        let pr = prior.with_spec(spec)?;
        let diverged = |detail: String, last: &(KernelSpec, VariationalState)| FitError {
            error: GgpError::numerical(format!("iteration {iteration}: {detail}")),
            divergence: Some(Box::new(Divergence {
                iteration,
                spec: last.0,
                state: last.1.clone(),
            })),
        };
        let (value, grad) = match objective.value_and_grad(&pr, &st) {
            Ok(v) => v,
            Err(GgpError::Numerical(msg)) => return Err(diverged(msg, &last_good)),
            Err(e) => return Err(e.into()),
        };
        let g = layout.chain(&x, &grad);
        if !value.is_finite() {
            return Err(diverged(format!("non-finite ELBO {value}"), &last_good));
        }
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(diverged(format!("non-finite gradient at parameter {pos}"), &last_good));
        }
        trace.push(value);
        last_good = (spec, st);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        adam.step(&mut x, &neg);
    }

    let (spec, state) = layout.unpack(&x, prior.spec(), &fixed_z)?;
    let prior = prior.with_spec(spec)?;
    let final_elbo = objective.value(&prior, &state)?;
    if !final_elbo.is_finite() {
        return Err(FitError {
            error: GgpError::numerical(format!("final ELBO is {final_elbo}")),
            divergence: Some(Box::new(Divergence {
                iteration: config.max_iters,
                spec: last_good.0,
                state: last_good.1,
            })),
        });
    }
    Ok(TrainedModel {
        prior,
        state,
        likelihood: lik,
        quad,
        elbo_trace: trace,
        final_elbo,
    })
}

/// Worst relative error within one parameter block.
#[derive(Debug, Clone, Serialize)]
pub struct BlockError {
    pub block: String,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < tol)
    }
}

/// Central finite differences of `f` at `x` compared with the analytic
/// gradient it returns, block by block. Relative error per entry is
/// `|g - ĝ| / max(|g|, |ĝ|, 1e-8)`.
pub fn check_gradient<F>(f: F, x: &[f64], blocks: &[(&str, Range<usize>)], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    let (_, analytic) = f(x)?;
    let mut out = Vec::with_capacity(blocks.len());
    for (name, range) in blocks {
        let fd: Vec<Result<f64>> = par_range_map!(range.clone(), |i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += step;
            xm[i] -= step;
            Ok((f(&xp)?.0 - f(&xm)?.0) / (2.0 * step))
        });
        let mut worst = (0.0f64, range.start);
        for (off, g_fd) in fd.into_iter().enumerate() {
            let i = range.start + off;
            let g_fd = g_fd?;
            let g = analytic[i];
            let rel = (g - g_fd).abs() / g.abs().max(g_fd.abs()).max(1e-8);
            if rel > worst.0 || rel.is_nan() {
                worst = (rel, i);
            }
        }
        out.push(BlockError {
            block: name.to_string(),
            n_params: range.len(),
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    Ok(GradCheckReport { step, blocks: out })
}

/// Finite-difference check of the ELBO gradient over every unconstrained
/// parameter block, at the given state and the prior's hyperparameters.
pub fn grad_check(
    prior: &GgpPrior,
    state: &VariationalState,
    labelled: &[(usize, usize)],
    config: &TrainConfig,
) -> Result<GradCheckReport> {
    state.validate()?;
    let lik = RobustMaxLikelihood::new(state.n_classes(), config.epsilon)?;
    let quad = QuadratureRule::gauss_hermite(config.quad_points)?;
    let objective = ElboObjective::new(prior, labelled, lik, quad)?;
    let layout = ParamLayout::new(
        prior.spec().family,
        state.n_inducing(),
        prior.n_features(),
        state.n_classes(),
        config.train_z,
    );
    let x = layout.pack(prior.spec(), state);
    let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (spec, st) = layout.unpack(x, prior.spec(), &state.z)?;
        let pr = prior.with_spec(spec)?;
        let (v, g) = objective.value_and_grad(&pr, &st)?;
        Ok((v, layout.chain(x, &g)))
    };
    check_gradient(f, &x, &layout.blocks(), 1e-4)
}

/// Shape of a generated gradient-check problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceShape {
    pub nodes: usize,
    pub classes: usize,
    pub inducing: usize,
    pub features: usize,
}

/// Random connected graph with non-negative sparse features, every node
/// labelled `node % classes`, and a random non-prior variational state.
pub fn random_instance(
    shape: &InstanceShape,
    spec: KernelSpec,
    seed: u64,
) -> Result<(GgpPrior, VariationalState, Vec<(usize, usize)>)> {
    use rand::Rng;
    let InstanceShape { nodes: n, classes: k, inducing: m, features: d } = *shape;
    if n == 0 || m == 0 || d == 0 {
        return Err(GgpError::input("nodes, inducing and features must be >= 1"));
    }
    if k < 2 {
        return Err(GgpError::input("at least 2 classes are required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    for _ in 0..n / 2 {
        edges.push((rng.random_range(0..n), rng.random_range(0..n)));
    }
    let graph = crate::graph::SparseGraph::from_edge_list(n, &edges)?;
    let rows = (0..n)
        .map(|_| {
            (0..d)
                .filter_map(|j| rng.random_bool(0.5).then(|| (j, rng.random_range(0.1..1.0))))
                .collect()
        })
        .collect();
    let features = crate::features::FeatureMatrix::from_rows(d, rows)?;
    let prior = GgpPrior::new(std::sync::Arc::new(graph), std::sync::Arc::new(features), spec)?;
    let z = DMatrix::from_fn(m, d, |_, _| rng.random_range(0.0..1.0));
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut state = VariationalState::prior(z, k);
    for c in 0..k {
        state.means[c] = DVector::from_fn(m, |_, _| std_normal.sample(&mut rng));
        state.scales[c] = DMatrix::from_fn(m, m, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Equal => rng.random_range(0.3..1.2),
            std::cmp::Ordering::Greater => 0.3 * std_normal.sample(&mut rng),
            std::cmp::Ordering::Less => 0.0,
        });
    }
    let labelled = (0..n).map(|v| (v, v % k)).collect();
    Ok((prior, state, labelled))
}
