//! Active-learning simulation: Σ-optimal and random acquisition, the label
//! propagation baseline, the acquire/retrain/evaluate loop and the ALC metric.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GgpError, Result};
use crate::graph::SparseGraph;
use crate::linalg::conjugate_gradient;
use crate::prior::GgpPrior;
use crate::train::{fit, TrainConfig};

/// Checks that every connected component holds at least one labelled node,
/// which is exactly when the grounded Laplacian is non-singular.
fn check_grounded(g: &SparseGraph, is_labelled: &[bool]) -> Result<()> {
    let comp = g.connected_components();
    let n_comp = comp.iter().max().map_or(0, |&c| c + 1);
    let mut grounded = vec![false; n_comp];
    for (u, &c) in comp.iter().enumerate() {
        grounded[c] |= is_labelled[u];
    }
    if let Some(c) = grounded.iter().position(|&ok| !ok) {
        let first = comp.iter().position(|&x| x == c).unwrap_or(0);
        return Err(GgpError::input(format!(
            "grounded Laplacian is singular: the component containing node {first} has no labelled node \
             (restrict the graph to its largest connected component first)"
        )));
    }
    Ok(())
}

fn labelled_mask(n: usize, labelled: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; n];
    for &v in labelled {
        if v >= n {
            return Err(GgpError::input(format!("labelled node {v} out of range ({n} nodes)")));
        }
        mask[v] = true;
    }
    Ok(mask)
}

/// Grounded-Laplacian inverse over the unlabelled nodes.
#[derive(Debug, Clone)]
pub struct SoptState {
    unlabelled: Vec<usize>,
    c: DMatrix<f64>,
}

impl SoptState {
    /// `C = (L_UU + δI)⁻¹` with `U` the complement of `labelled`, in
    /// ascending node order.
    pub fn new(g: &SparseGraph, labelled: &[usize], delta: f64) -> Result<Self> {
        if labelled.is_empty() {
            return Err(GgpError::input("SOPT needs at least one labelled node"));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(GgpError::input(format!("delta must be >= 0, got {delta}")));
        }
        let n = g.n_nodes();
        let mask = labelled_mask(n, labelled)?;
        if delta == 0.0 {
            check_grounded(g, &mask)?;
        }
        let unlabelled: Vec<usize> = (0..n).filter(|&u| !mask[u]).collect();
        let u = unlabelled.len();
        if u == 0 {
            return Ok(SoptState { unlabelled, c: DMatrix::zeros(0, 0) });
        }
        let mut pos = vec![usize::MAX; n];
        for (i, &v) in unlabelled.iter().enumerate() {
            pos[v] = i;
        }
        let mut l = DMatrix::<f64>::zeros(u, u);
        for (i, &v) in unlabelled.iter().enumerate() {
            l[(i, i)] = g.degree(v) as f64 + delta;
            for &w in g.neighbors(v) {
                if pos[w] != usize::MAX {
                    l[(i, pos[w])] = -1.0;
                }
            }
        }
        let chol = l
            .cholesky()
            .ok_or_else(|| GgpError::input("grounded Laplacian is not positive definite"))?;
        let c = chol.inverse();
        let c = (&c + c.transpose()) * 0.5;
        Ok(SoptState { unlabelled, c })
    }

    pub fn unlabelled(&self) -> &[usize] {
        &self.unlabelled
    }

    /// Current inverse, rows/columns ordered as [`Self::unlabelled`].
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn len(&self) -> usize {
        self.unlabelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unlabelled.is_empty()
    }

    /// `(𝟙ᵀC[:,v])² / C[v,v]` for every candidate.
    pub fn scores(&self) -> Vec<f64> {
        let idx: Vec<usize> = (0..self.len()).collect();
        par_map!(idx, |&j| {
            let col = self.c.column(j);
            let s = col.sum();
            s * s / col[j]
        })
    }

    /// Highest-scoring candidate; the smallest node index wins ties.
    pub fn select(&self) -> Result<usize> {
        if self.is_empty() {
            return Err(GgpError::State("SOPT selection from an empty pool".into()));
        }
        let scores = self.scores();
        let mut best = 0;
        for (j, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = j;
            }
        }
        Ok(self.unlabelled[best])
    }

    /// Labels `v`: rank-1 downdate of `C`, then drops its row and column.
    pub fn update(&mut self, v: usize) -> Result<()> {
        let j = self
            .unlabelled
            .binary_search(&v)
            .map_err(|_| GgpError::input(format!("node {v} is not in the unlabelled pool")))?;
        let col: DVector<f64> = self.c.column(j).into_owned();
        let pivot = col[j];
        self.c.ger(-1.0 / pivot, &col, &col, 1.0);
        let c = std::mem::replace(&mut self.c, DMatrix::zeros(0, 0));
        self.c = c.remove_row(j).remove_column(j);
        self.unlabelled.remove(j);
        Ok(())
    }
}

/// Harmonic label-propagation scores: labelled rows are one-hot, unlabelled
/// rows solve `L_UU F_U = A_UL Y_L`. Rows are indexed by node.
pub fn lp_scores(g: &SparseGraph, labelled: &[(usize, usize)], n_classes: usize) -> Result<Vec<Vec<f64>>> {
    if labelled.is_empty() {
        return Err(GgpError::input("label propagation needs at least one labelled node"));
    }
    let n = g.n_nodes();
    let mut label: Vec<Option<usize>> = vec![None; n];
    for &(v, y) in labelled {
        if v >= n {
            return Err(GgpError::input(format!("labelled node {v} out of range ({n} nodes)")));
        }
        if y >= n_classes {
            return Err(GgpError::input(format!("label {y} of node {v} is not below {n_classes}")));
        }
        match label[v] {
            Some(prev) if prev != y => {
                return Err(GgpError::input(format!("node {v} labelled both {prev} and {y}")))
            }
            _ => label[v] = Some(y),
        }
    }
    let mask: Vec<bool> = label.iter().map(Option::is_some).collect();
    check_grounded(g, &mask)?;

    let unlabelled: Vec<usize> = (0..n).filter(|&u| !mask[u]).collect();
    let mut pos = vec![usize::MAX; n];
    for (i, &v) in unlabelled.iter().enumerate() {
        pos[v] = i;
    }
    let apply = |x: &DVector<f64>| {
        DVector::from_iterator(
            unlabelled.len(),
            unlabelled.iter().enumerate().map(|(i, &v)| {
                let off: f64 = g.neighbors(v).iter().filter(|&&w| pos[w] != usize::MAX).map(|&w| x[pos[w]]).sum();
                g.degree(v) as f64 * x[i] - off
            }),
        )
    };
    let mut out: Vec<Vec<f64>> = label
        .iter()
        .map(|l| {
            let mut row = vec![0.0; n_classes];
            if let Some(y) = *l {
                row[y] = 1.0;
            }
            row
        })
        .collect();
    if unlabelled.is_empty() {
        return Ok(out);
    }
    let max_iter = 10 * unlabelled.len() + 100;
    for k in 0..n_classes {
        let rhs = DVector::from_iterator(
            unlabelled.len(),
            unlabelled
                .iter()
                .map(|&v| g.neighbors(v).iter().filter(|&&w| label[w] == Some(k)).count() as f64),
        );
        let f = conjugate_gradient(apply, &rhs, 1e-12, max_iter)?;
        for (i, &v) in unlabelled.iter().enumerate() {
            out[v][k] = f[i];
        }
    }
    Ok(out)
}

/// Row argmax treating values within `1e-9` of the maximum as ties, won by
/// the lowest class.
fn argmax_tolerant(row: &[f64]) -> usize {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.iter().position(|&v| v >= max - 1e-9).unwrap_or(0)
}

/// Label-propagation class per node.
pub fn lp_predict(g: &SparseGraph, labelled: &[(usize, usize)], n_classes: usize) -> Result<Vec<usize>> {
    Ok(lp_scores(g, labelled, n_classes)?.iter().map(|r| argmax_tolerant(r)).collect())
}

/// A model that can be retrained from a label set and queried on nodes.
pub trait NodeClassifier: Sync {
    fn name(&self) -> &str;

    /// Fits on `labelled` `(node, class)` pairs and predicts a class for
    /// each of `targets`.
    fn fit_predict(&self, labelled: &[(usize, usize)], targets: &[usize]) -> Result<Vec<usize>>;
}

pub struct LpClassifier {
    pub graph: Arc<SparseGraph>,
    pub n_classes: usize,
}

impl NodeClassifier for LpClassifier {
    fn name(&self) -> &str {
        "lp"
    }

    fn fit_predict(&self, labelled: &[(usize, usize)], targets: &[usize]) -> Result<Vec<usize>> {
        let pred = lp_predict(&self.graph, labelled, self.n_classes)?;
        Ok(targets.iter().map(|&t| pred[t]).collect())
    }
}

/// GGP retrained from scratch on every call.
pub struct GgpClassifier {
    pub prior: GgpPrior,
    pub n_classes: usize,
    pub config: TrainConfig,
}

impl NodeClassifier for GgpClassifier {
    fn name(&self) -> &str {
        "ggp"
    }

    fn fit_predict(&self, labelled: &[(usize, usize)], targets: &[usize]) -> Result<Vec<usize>> {
        let model = fit(&self.prior, labelled, self.n_classes, &self.config).map_err(|e| e.error)?;
        model.predict(targets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acquisition {
    Sopt,
    #[serde(rename = "rand")]
    Random,
}

impl std::str::FromStr for Acquisition {
    type Err = GgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sopt" => Ok(Acquisition::Sopt),
            "rand" | "random" => Ok(Acquisition::Random),
            _ => Err(GgpError::input(format!("unknown acquisition `{s}` (expected sopt or rand)"))),
        }
    }
}

/// `(labels_acquired, test_accuracy)` points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<(usize, f64)>,
}

impl LearningCurve {
    pub fn push(&mut self, labels: usize, accuracy: f64) -> Result<()> {
        let expected = self.points.last().map_or(1, |p| p.0 + 1);
        if labels != expected {
            return Err(GgpError::input(format!("curve point at {labels} labels, expected {expected}")));
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(GgpError::input(format!("accuracy {accuracy} outside [0, 1]")));
        }
        self.points.push((labels, accuracy));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Area under the learning curve, as the mean accuracy over its points.
pub fn alc(curve: &LearningCurve) -> Result<f64> {
    if curve.is_empty() {
        return Err(GgpError::input("ALC of an empty learning curve"));
    }
    Ok(curve.points.iter().map(|p| p.1).sum::<f64>() / curve.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    pub acquisition: Acquisition,
    pub budget: usize,
    /// Grounded-Laplacian regularizer for SOPT.
    pub delta: f64,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            acquisition: Acquisition::Sopt,
            budget: 50,
            delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// Labelled nodes in acquisition order, starting with the random seed node.
    pub queries: Vec<usize>,
    pub curve: LearningCurve,
}

/// One seeded acquire/retrain/evaluate trajectory. Accuracy at step `t` is
/// measured on every node still unlabelled after training on `t` labels.
pub fn run_seed(
    g: &SparseGraph,
    labels: &[usize],
    model: &dyn NodeClassifier,
    config: &ActiveConfig,
    seed: u64,
) -> Result<SeedRun> {
    let n = g.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut queries = vec![first];
    let mut pool: Vec<usize> = (0..n).filter(|&u| u != first).collect();
    let mut sopt = match config.acquisition {
        Acquisition::Sopt => Some(SoptState::new(g, &[first], config.delta)?),
        Acquisition::Random => None,
    };
    let mut curve = LearningCurve::default();
    for t in 1..=config.budget {
        let labelled: Vec<(usize, usize)> = queries.iter().map(|&v| (v, labels[v])).collect();
        let pred = model.fit_predict(&labelled, &pool)?;
        let hits = pool.iter().zip(&pred).filter(|(&v, &p)| labels[v] == p).count();
        curve.push(t, hits as f64 / pool.len() as f64)?;
        if t == config.budget {
            break;
        }
        let next = match sopt.as_mut() {
            Some(state) => {
                let v = state.select()?;
                state.update(v)?;
                v
            }
            None => pool[rng.random_range(0..pool.len())],
        };
        let j = pool.binary_search(&next).expect("acquired node comes from the pool");
        pool.remove(j);
        queries.push(next);
    }
    Ok(SeedRun { seed, queries, curve })
}

/// Runs every seed (in parallel when enabled); results are in seed order.
pub fn active_loop(
    g: &SparseGraph,
    labels: &[usize],
    model: &dyn NodeClassifier,
    config: &ActiveConfig,
    seeds: &[u64],
) -> Result<Vec<SeedRun>> {
    let n = g.n_nodes();
    if labels.len() != n {
        return Err(GgpError::input(format!("{} labels for {n} nodes", labels.len())));
    }
    if config.budget == 0 {
        return Err(GgpError::input("budget must be >= 1"));
    }
    if config.budget >= n {
        return Err(GgpError::input(format!(
            "budget {} leaves no unlabelled node to evaluate on ({n} nodes)",
            config.budget
        )));
    }
    if !g.is_connected() {
        return Err(GgpError::input(
            "active learning needs a connected graph (restrict to the largest connected component first)",
        ));
    }
    let runs: Vec<Result<SeedRun>> = par_map!(seeds, |&s| run_seed(g, labels, model, config, s));
    runs.into_iter().collect()
}

/// Mean and standard error of ALC across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlcSummary {
    pub model: String,
    pub acquisition: Acquisition,
    pub budget: usize,
    pub n_seeds: usize,
    pub alc_mean: f64,
    pub alc_std_error: f64,
    pub per_seed: Vec<(u64, f64)>,
}

pub fn summarize(model: &str, config: &ActiveConfig, runs: &[SeedRun]) -> Result<AlcSummary> {
    let mut per_seed = runs
        .iter()
        .map(|r| Ok((r.seed, alc(&r.curve)?)))
        .collect::<Result<Vec<_>>>()?;
    per_seed.sort_by_key(|p| p.0);
    let k = per_seed.len();
    if k == 0 {
        return Err(GgpError::input("no seeds to summarize"));
    }
    let mean = per_seed.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let se = if k > 1 {
        let var = per_seed.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    } else {
        0.0
    };
    Ok(AlcSummary {
        model: model.to_string(),
        acquisition: config.acquisition,
        budget: config.budget,
        n_seeds: k,
        alc_mean: mean,
        alc_std_error: se,
        per_seed,
    })
}

/// `seed,labels_acquired,test_accuracy` rows, sorted by seed.
pub fn curves_csv(runs: &[SeedRun]) -> String {
    let mut sorted: Vec<&SeedRun> = runs.iter().collect();
    sorted.sort_by_key(|r| r.seed);
    let mut out = String::from("seed,labels_acquired,test_accuracy\n");
    for r in sorted {
        for &(t, acc) in &r.curve.points {
            out.push_str(&format!("{},{t},{acc}\n", r.seed));
        }
    }
    out
}
