//! Sparse variational inference for the GGP.
//!
//! The variational family is whitened: `u = L_z v` with `L_z = chol(K_zz + jitter)`
//! and `q(v_k) = N(m_k, S_k S_kᵀ)` for each of the `K` latent functions. With
//! `a_n = L_z⁻¹ k_{z h_n}` the marginals are
//!
//! ```text
//! mean_k(n) = a_nᵀ m_k
//! var_k(n)  = Var(h_n) - ‖a_n‖² + ‖S_kᵀ a_n‖²
//! ```
//!
//! and the KL term is taken against `N(0, I)` in closed form. All latent
//! functions share the kernel hyperparameters and the inducing inputs `Z`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GgpError, Result};
use crate::linalg::{cholesky_backward, cholesky_jittered, solve_lower, solve_lower_transpose};
use crate::prior::{GgpPrior, NodeBlock};

/// Variances of `q(h_n)` are floored here; the floor only engages when
/// round-off drives the conditional variance negative.
const MIN_VARIANCE: f64 = 1e-12;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
pub(crate) fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Gauss–Hermite rule for `∫ e^{-x²} f(x) dx`, with weights pre-divided by
/// `√π` so they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    abscissae: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub const DEFAULT_POINTS: usize = 32;

    pub fn gauss_hermite(n_points: usize) -> Result<Self> {
        if n_points == 0 {
            return Err(GgpError::input("quadrature needs at least one point"));
        }
        if n_points > 150 {
            return Err(GgpError::input("more than 150 Gauss-Hermite points is not supported"));
        }
        let n = n_points;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                // orthonormal Hermite recurrence
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let total: f64 = w.iter().sum();
        let weights = w.iter().map(|v| v / total).collect();
        Ok(QuadratureRule { abscissae: x, weights })
    }

    pub fn n_points(&self) -> usize {
        self.abscissae.len()
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.abscissae
    }

    /// Weights normalized to sum to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `p(y = k | f) = 1 - ε` if `k = argmax_j f_j`, else `ε / (K - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustMaxLikelihood {
    pub n_classes: usize,
    pub epsilon: f64,
}

impl RobustMaxLikelihood {
    pub const DEFAULT_EPSILON: f64 = 1e-3;

    pub fn new(n_classes: usize, epsilon: f64) -> Result<Self> {
        if n_classes < 2 {
            return Err(GgpError::input(format!("robust-max needs K >= 2 classes, got {n_classes}")));
        }
        let k = n_classes as f64;
        if !(epsilon > 0.0 && epsilon < (k - 1.0) / k) {
            return Err(GgpError::input(format!(
                "robust-max epsilon must lie in (0, (K-1)/K), got {epsilon}"
            )));
        }
        Ok(RobustMaxLikelihood { n_classes, epsilon })
    }

    pub fn log_correct(&self) -> f64 {
        (1.0 - self.epsilon).ln()
    }

    pub fn log_wrong(&self) -> f64 {
        (self.epsilon / (self.n_classes as f64 - 1.0)).ln()
    }

    /// Class probability given the probability that class `k` is the argmax.
    pub fn prob_from_argmax(&self, p_max: f64) -> f64 {
        p_max * (1.0 - self.epsilon) + (1.0 - p_max) * self.epsilon / (self.n_classes as f64 - 1.0)
    }
}

/// `P(f_y = max_k f_k)` under independent Gaussians `f_k ~ N(means_k, vars_k)`,
/// with gradients wrt the means and variances. The outer integral over
/// `f_y` uses the quadrature rule; the inner probabilities are normal CDFs.
pub fn prob_argmax(means: &[f64], vars: &[f64], y: usize, quad: &QuadratureRule) -> (f64, Vec<f64>, Vec<f64>) {
    let k = means.len();
    let sd: Vec<f64> = vars.iter().map(|v| v.sqrt()).collect();
    let scale_y = (2.0 * vars[y]).sqrt();
    let mut p = 0.0;
    let mut dmean = vec![0.0; k];
    let mut dvar = vec![0.0; k];
    let mut cdf = vec![1.0; k];
    let mut pdf = vec![0.0; k];
    let mut u = vec![0.0; k];
    let mut prefix = vec![1.0; k + 1];
    let mut suffix = vec![1.0; k + 1];
    for (&xi, &w) in quad.abscissae().iter().zip(quad.weights()) {
        let t = means[y] + scale_y * xi;
        for j in 0..k {
            if j == y {
                cdf[j] = 1.0;
                continue;
            }
            u[j] = (t - means[j]) / sd[j];
            cdf[j] = normal_cdf(u[j]);
            pdf[j] = normal_pdf(u[j]);
        }
        for j in 0..k {
            prefix[j + 1] = prefix[j] * cdf[j];
        }
        for j in (0..k).rev() {
            suffix[j] = suffix[j + 1] * cdf[j];
        }
        p += w * prefix[k];
        // dt/dvar_y = xi / √(2 var_y)
        let dt_dvy = if vars[y] > 0.0 { xi / scale_y } else { 0.0 };
        for j in 0..k {
            if j == y {
                continue;
            }
            let others = prefix[j] * suffix[j + 1];
            let g = w * others * pdf[j] / sd[j];
            dmean[y] += g;
            dmean[j] -= g;
            dvar[y] += g * dt_dvy;
            dvar[j] -= w * others * pdf[j] * u[j] / (2.0 * vars[j]);
        }
    }
    (p, dmean, dvar)
}

fn check_marginal_args(means: &[f64], vars: &[f64], y: usize, lik: &RobustMaxLikelihood) -> Result<()> {
    if means.len() != lik.n_classes || vars.len() != lik.n_classes {
        return Err(GgpError::input(format!(
            "expected {} class marginals, got {} means and {} variances",
            lik.n_classes,
            means.len(),
            vars.len()
        )));
    }
    if y >= lik.n_classes {
        return Err(GgpError::input(format!("label {y} out of range for {} classes", lik.n_classes)));
    }
    if let Some(v) = vars.iter().find(|v| !(**v > 0.0)) {
        return Err(GgpError::input(format!("marginal variance must be positive, got {v}")));
    }
    Ok(())
}

/// `E_q[log p(y | f)]` under independent Gaussian marginals.
pub fn expected_loglik(
    means: &[f64],
    vars: &[f64],
    y: usize,
    lik: &RobustMaxLikelihood,
    quad: &QuadratureRule,
) -> Result<f64> {
    check_marginal_args(means, vars, y, lik)?;
    let (p, _, _) = prob_argmax(means, vars, y, quad);
    Ok(p * lik.log_correct() + (1.0 - p) * lik.log_wrong())
}

/// Class probabilities for one node. The argmax probabilities are
/// renormalized across classes so the row sums to one regardless of
/// quadrature error.
pub fn class_probabilities(
    means: &[f64],
    vars: &[f64],
    lik: &RobustMaxLikelihood,
    quad: &QuadratureRule,
) -> Result<Vec<f64>> {
    check_marginal_args(means, vars, 0, lik)?;
    let p_max: Vec<f64> = (0..lik.n_classes)
        .map(|k| prob_argmax(means, vars, k, quad).0.clamp(0.0, 1.0))
        .collect();
    let total: f64 = p_max.iter().sum();
    Ok(p_max.iter().map(|&p| lik.prob_from_argmax(p / total)).collect())
}

/// Whitened variational parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    /// Inducing inputs, `M × D`, shared by all latent functions.
    pub z: DMatrix<f64>,
    /// `m_k`, one length-`M` vector per class.
    pub means: Vec<DVector<f64>>,
    /// `S_k`, lower-triangular `M × M` with positive diagonal.
    pub scales: Vec<DMatrix<f64>>,
}

impl VariationalState {
    /// `q(v) = p(v) = N(0, I)` for every class.
    pub fn prior(z: DMatrix<f64>, n_classes: usize) -> Self {
        let m = z.nrows();
        VariationalState {
            z,
            means: vec![DVector::zeros(m); n_classes],
            scales: vec![DMatrix::identity(m, m); n_classes],
        }
    }

    pub fn n_inducing(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_inducing();
        if m == 0 {
            return Err(GgpError::input("variational state needs at least one inducing point"));
        }
        if self.scales.len() != self.means.len() {
            return Err(GgpError::input("one mean and one scale factor per class are required"));
        }
        if self.z.iter().any(|v| !v.is_finite()) {
            return Err(GgpError::input("inducing inputs contain non-finite values"));
        }
        for (k, (mk, sk)) in self.means.iter().zip(&self.scales).enumerate() {
            if mk.len() != m || sk.nrows() != m || sk.ncols() != m {
                return Err(GgpError::input(format!("class {k}: variational parameters have wrong shape")));
            }
            if mk.iter().chain(sk.iter()).any(|v| !v.is_finite()) {
                return Err(GgpError::input(format!("class {k}: non-finite variational parameters")));
            }
            for i in 0..m {
                if !(sk[(i, i)] > 0.0) {
                    return Err(GgpError::input(format!("class {k}: scale diagonal must be positive")));
                }
                for j in (i + 1)..m {
                    if sk[(i, j)] != 0.0 {
                        return Err(GgpError::input(format!("class {k}: scale factor is not lower-triangular")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `Σ_k KL(N(m_k, S_k S_kᵀ) ‖ N(0, I))`.
pub fn kl_term(state: &VariationalState) -> f64 {
    let m = state.n_inducing() as f64;
    state
        .means
        .iter()
        .zip(&state.scales)
        .map(|(mk, sk)| {
            let logdet: f64 = (0..sk.nrows()).map(|i| sk[(i, i)].ln()).sum();
            0.5 * (mk.norm_squared() + sk.norm_squared() - m - 2.0 * logdet)
        })
        .sum()
}

/// Per-class marginal means and variances of `q(h_n)`, indexed `[class][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

impl Marginals {
    pub fn n_nodes(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn node(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.means.iter().map(|m| m[n]).collect(),
            self.vars.iter().map(|v| v[n]).collect(),
        )
    }
}

/// Forward pass shared by prediction and the ELBO.
struct Conditional {
    l: DMatrix<f64>,
    rung: f64,
    kzz_raw: DMatrix<f64>,
    kuf_cache: crate::prior::CovHuCache,
    /// `L⁻¹ K_zh`, `M × N`.
    a: DMatrix<f64>,
    /// `S_kᵀ A` per class.
    sa: Vec<DMatrix<f64>>,
    marginals: Marginals,
    floored: Vec<Vec<bool>>,
}

fn conditional(prior: &GgpPrior, block: &NodeBlock, state: &VariationalState) -> Result<Conditional> {
    if state.z.ncols() != prior.n_features() {
        return Err(GgpError::input(format!(
            "inducing inputs have dimension {} but features have {}",
            state.z.ncols(),
            prior.n_features()
        )));
    }
    let spec = prior.spec();
    let kzz_raw = &state.z * state.z.transpose();
    let kzz = kzz_raw.map(|r| spec.eval(r));
    let (l, rung) = cholesky_jittered(&kzz)?;
    let (khu, kuf_cache) = block.cov_hu(prior, &state.z.transpose());
    let a = solve_lower(&l, &khu.transpose());
    let khh = block.khh_diag(spec);
    let n = block.len();
    let base: Vec<f64> = (0..n).map(|i| khh[i] - a.column(i).norm_squared()).collect();
    let mut means = Vec::with_capacity(state.n_classes());
    let mut vars = Vec::with_capacity(state.n_classes());
    let mut floored = Vec::with_capacity(state.n_classes());
    let mut sa = Vec::with_capacity(state.n_classes());
    for (mk, sk) in state.means.iter().zip(&state.scales) {
        means.push((a.transpose() * mk).iter().copied().collect());
        let t = sk.transpose() * &a;
        let mut v = Vec::with_capacity(n);
        let mut fl = Vec::with_capacity(n);
        for i in 0..n {
            let raw = base[i] + t.column(i).norm_squared();
            fl.push(!(raw > MIN_VARIANCE));
            v.push(raw.max(MIN_VARIANCE));
        }
        vars.push(v);
        floored.push(fl);
        sa.push(t);
    }
    Ok(Conditional {
        l,
        rung,
        kzz_raw,
        kuf_cache,
        a,
        sa,
        marginals: Marginals { means, vars },
        floored,
    })
}

/// Marginals of `q(h_n)` for the requested nodes.
pub fn marginal_q(prior: &GgpPrior, state: &VariationalState, idx: &[usize]) -> Result<Marginals> {
    let block = NodeBlock::new(prior, idx)?;
    Ok(conditional(prior, &block, state)?.marginals)
}

/// Gradient of the ELBO wrt the constrained parameters.
#[derive(Debug, Clone)]
pub struct ElboGrad {
    pub z: DMatrix<f64>,
    pub means: Vec<DVector<f64>>,
    /// Lower-triangular.
    pub scales: Vec<DMatrix<f64>>,
    pub variance: f64,
    pub offset: f64,
}

/// The ELBO for a fixed labelled set. Holds the neighborhood cache so
/// repeated evaluations only redo the parts that depend on `θ` and `Z`.
#[derive(Debug, Clone)]
pub struct ElboObjective {
    block: NodeBlock,
    labels: Vec<usize>,
    lik: RobustMaxLikelihood,
    quad: QuadratureRule,
}

impl ElboObjective {
    pub fn new(
        prior: &GgpPrior,
        labelled: &[(usize, usize)],
        lik: RobustMaxLikelihood,
        quad: QuadratureRule,
    ) -> Result<Self> {
        if let Some(&(n, y)) = labelled.iter().find(|&&(_, y)| y >= lik.n_classes) {
            return Err(GgpError::input(format!(
                "node {n} has label {y} but the likelihood has {} classes",
                lik.n_classes
            )));
        }
        let nodes: Vec<usize> = labelled.iter().map(|&(n, _)| n).collect();
        Ok(ElboObjective {
            block: NodeBlock::new(prior, &nodes)?,
            labels: labelled.iter().map(|&(_, y)| y).collect(),
            lik,
            quad,
        })
    }

    pub fn likelihood(&self) -> &RobustMaxLikelihood {
        &self.lik
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    fn check_state(&self, state: &VariationalState) -> Result<()> {
        if state.n_classes() != self.lik.n_classes {
            return Err(GgpError::input(format!(
                "state has {} latent functions but the likelihood has {} classes",
                state.n_classes(),
                self.lik.n_classes
            )));
        }
        Ok(())
    }

    /// Per-node expected log-likelihood terms and their gradients wrt the
    /// marginal means and variances.
    fn likelihood_terms(&self, marg: &Marginals) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
        let n = self.block.len();
        let (lc, lw) = (self.lik.log_correct(), self.lik.log_wrong());
        par_range_map!(0..n, |i| {
            let (means, vars) = marg.node(i);
            let (p, dm, dv) = prob_argmax(&means, &vars, self.labels[i], &self.quad);
            let slope = lc - lw;
            (
                p * lc + (1.0 - p) * lw,
                dm.iter().map(|g| g * slope).collect(),
                dv.iter().map(|g| g * slope).collect(),
            )
        })
    }

    pub fn value(&self, prior: &GgpPrior, state: &VariationalState) -> Result<f64> {
        self.check_state(state)?;
        if self.block.is_empty() {
            return Ok(-kl_term(state));
        }
        let cond = conditional(prior, &self.block, state)?;
        let terms = self.likelihood_terms(&cond.marginals);
        let fit: f64 = terms.iter().map(|t| t.0).sum();
        Ok(fit - kl_term(state))
    }

    pub fn value_and_grad(&self, prior: &GgpPrior, state: &VariationalState) -> Result<(f64, ElboGrad)> {
        self.check_state(state)?;
        let spec = prior.spec();
        let m = state.n_inducing();
        let k = state.n_classes();

        // KL part (enters with a minus sign)
        let mut grad = ElboGrad {
            z: DMatrix::zeros(m, state.z.ncols()),
            means: state.means.iter().map(|mk| -mk).collect(),
            scales: state
                .scales
                .iter()
                .map(|sk| {
                    let mut g = -sk.clone();
                    for i in 0..m {
                        g[(i, i)] += 1.0 / sk[(i, i)];
                    }
                    g
                })
                .collect(),
            variance: 0.0,
            offset: 0.0,
        };
        let kl = kl_term(state);
        if self.block.is_empty() {
            return Ok((-kl, grad));
        }

        let cond = conditional(prior, &self.block, state)?;
        let terms = self.likelihood_terms(&cond.marginals);
        let fit: f64 = terms.iter().map(|t| t.0).sum();
        let n = self.block.len();

        // gradients wrt marginal means / variances, [class] x [node]
        let mut dmean = DMatrix::<f64>::zeros(k, n);
        let mut dvar = DMatrix::<f64>::zeros(k, n);
        for (i, (_, dm, dv)) in terms.iter().enumerate() {
            for c in 0..k {
                dmean[(c, i)] = dm[c];
                dvar[(c, i)] = if cond.floored[c][i] { 0.0 } else { dv[c] };
            }
        }

        let a = &cond.a;
        let mut a_bar = DMatrix::<f64>::zeros(m, n);
        let mut dkhh = vec![0.0; n];
        for c in 0..k {
            let dm_c = dmean.row(c).transpose();
            let dv_c: Vec<f64> = dvar.row(c).iter().copied().collect();
            grad.means[c] += a * &dm_c;
            a_bar += &state.means[c] * dm_c.transpose();
            // scaled columns: A diag(dvar) and (SᵀA) diag(dvar)
            let mut a_dv = a.clone();
            let mut sa_dv = cond.sa[c].clone();
            for i in 0..n {
                a_dv.column_mut(i).scale_mut(dv_c[i]);
                sa_dv.column_mut(i).scale_mut(dv_c[i]);
                dkhh[i] += dv_c[i];
            }
            // ∂/∂S_k of ‖S_kᵀ a_n‖² terms: 2 A diag(dv) (SᵀA)ᵀ
            let s_bar = (&a_dv * cond.sa[c].transpose()) * 2.0;
            grad.scales[c] += s_bar.lower_triangle();
            // ∂/∂A: 2 S (SᵀA) diag(dv) − 2 A diag(dv)
            a_bar += (&state.scales[c] * sa_dv) * 2.0 - a_dv * 2.0;
        }

        // A = L⁻¹ K_zh
        let b = solve_lower_transpose(&cond.l, &a_bar);
        let l_bar = -(&b * a.transpose());
        let mut kzz_bar = cholesky_backward(&cond.l, &l_bar);
        let jitter_coeff = cond.rung * kzz_bar.trace() / m as f64;
        for i in 0..m {
            kzz_bar[(i, i)] += jitter_coeff;
        }

        // K_zz = g(Z Zᵀ)
        let mut w = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let (dr, dv, dc) = spec.eval_grads(cond.kzz_raw[(i, j)]);
                let g = kzz_bar[(i, j)];
                w[(i, j)] = g * dr;
                grad.variance += g * dv;
                grad.offset += g * dc;
            }
        }
        grad.z += (&w * &state.z) * 2.0;

        // K_hz
        let (zt_bar, theta) = self.block.cov_hu_backward(prior, &cond.kuf_cache, &b.transpose());
        grad.z += zt_bar.transpose();
        grad.variance += theta[0];
        grad.offset += theta[1];

        let theta = self.block.khh_diag_backward(spec, &dkhh);
        grad.variance += theta[0];
        grad.offset += theta[1];

        Ok((fit - kl, grad))
    }
}

/// `Σ_n E_q[log p(y_n | h_n)] - KL[q(u) ‖ p(u)]`.
pub fn elbo(
    prior: &GgpPrior,
    state: &VariationalState,
    labelled: &[(usize, usize)],
    lik: &RobustMaxLikelihood,
    quad: &QuadratureRule,
) -> Result<f64> {
    ElboObjective::new(prior, labelled, *lik, quad.clone())?.value(prior, state)
}

/// Class probability rows for the requested nodes.
pub fn predict_proba(
    prior: &GgpPrior,
    state: &VariationalState,
    lik: &RobustMaxLikelihood,
    quad: &QuadratureRule,
    idx: &[usize],
) -> Result<Vec<Vec<f64>>> {
    if state.n_classes() != lik.n_classes {
        return Err(GgpError::input("state and likelihood disagree on the number of classes"));
    }
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let marg = marginal_q(prior, state, idx)?;
    let rows: Vec<Result<Vec<f64>>> = par_range_map!(0..idx.len(), |i| {
        let (means, vars) = marg.node(i);
        class_probabilities(&means, &vars, lik, quad)
    });
    rows.into_iter().collect()
}

/// Row argmax, lowest class index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn predict_labels(
    prior: &GgpPrior,
    state: &VariationalState,
    lik: &RobustMaxLikelihood,
    quad: &QuadratureRule,
    idx: &[usize],
) -> Result<Vec<usize>> {
    Ok(predict_proba(prior, state, lik, quad, idx)?
        .iter()
        .map(|r| argmax(r))
        .collect())
}
