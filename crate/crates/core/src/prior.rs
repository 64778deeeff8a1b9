//! GGP covariance structure.
//!
//! Each node's latent value is `h_n = (1 + D_n)^-1 Σ_{j ∈ {n} ∪ Ne(n)} f(x_j)`
//! for a base GP `f ~ GP(0, k_θ)`. Hence
//!
//! * `Cov(h_m, h_n)` is the double sum of `k_θ` over the two closed
//!   neighborhoods, i.e. the inner product of empirical kernel mean embeddings,
//!   and equals `[P K_XX Pᵀ]_{mn}` with `P = (I + D)^-1 (I + A)`;
//! * `Cov(h_n, f(z))` is the single neighborhood average of `k_θ(x_j, z)`,
//!   i.e. `[P K_XZ]_{n·}`.
//!
//! The linear kernel has an explicit feature map, so it goes through the
//! averaged feature rows `μ̂_n` directly. The polynomial kernel uses the
//! double sums.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{GgpError, Result};
use crate::features::{FeatureMatrix, KernelFamily, KernelSpec, SparseVec};
use crate::graph::SparseGraph;

#[derive(Debug, Clone)]
pub struct GgpPrior {
    graph: Arc<SparseGraph>,
    features: Arc<FeatureMatrix>,
    spec: KernelSpec,
}

impl GgpPrior {
    pub fn new(graph: Arc<SparseGraph>, features: Arc<FeatureMatrix>, spec: KernelSpec) -> Result<Self> {
        if graph.n_nodes() != features.n_nodes() {
            return Err(GgpError::input(format!(
                "graph has {} nodes but features have {} rows",
                graph.n_nodes(),
                features.n_nodes()
            )));
        }
        Ok(GgpPrior {
            graph,
            features,
            spec: spec.validated()?,
        })
    }

    pub fn graph(&self) -> &SparseGraph {
        &self.graph
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Same graph and features under new hyperparameters.
    pub fn with_spec(&self, spec: KernelSpec) -> Result<Self> {
        Ok(GgpPrior {
            graph: Arc::clone(&self.graph),
            features: Arc::clone(&self.features),
            spec: spec.validated()?,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_features()
    }

    fn check_nodes(&self, idx: &[usize]) -> Result<()> {
        if let Some(&bad) = idx.iter().find(|&&n| n >= self.n_nodes()) {
            return Err(GgpError::input(format!(
                "node index {bad} out of range for {} nodes",
                self.n_nodes()
            )));
        }
        Ok(())
    }

    fn check_inducing(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.ncols() != self.n_features() {
            return Err(GgpError::input(format!(
                "inducing inputs have dimension {} but features have {}",
                z.ncols(),
                self.n_features()
            )));
        }
        Ok(())
    }

    /// Raw averaged feature row `μ̂_n = (1 + D_n)^-1 Σ_{j ∈ n ∪ Ne(n)} x_j`.
    pub fn mean_embedding(&self, node: usize) -> SparseVec {
        let w = 1.0 / (1.0 + self.graph.degree(node) as f64);
        SparseVec::weighted_sum(
            self.n_features(),
            self.graph
                .closed_neighborhood(node)
                .into_iter()
                .map(|j| (w, self.features.row(j))),
        )
    }

    fn cov_hh_entry(&self, m: usize, n: usize) -> f64 {
        let a = self.graph.closed_neighborhood(m);
        let b = self.graph.closed_neighborhood(n);
        let mut acc = 0.0;
        for &i in &a {
            let xi = self.features.row(i);
            for &j in &b {
                acc += self.spec.eval(xi.dot(&self.features.row(j)));
            }
        }
        acc / (a.len() as f64 * b.len() as f64)
    }

    /// `Cov(h_a, h_b)` as an `|a| × |b|` block.
    pub fn cov_hh(&self, idx_a: &[usize], idx_b: &[usize]) -> Result<DMatrix<f64>> {
        self.check_nodes(idx_a)?;
        self.check_nodes(idx_b)?;
        let rows: Vec<Vec<f64>> = match self.spec.family {
            KernelFamily::Linear => {
                let ea: Vec<SparseVec> = idx_a.iter().map(|&n| self.mean_embedding(n)).collect();
                let eb: Vec<SparseVec> = idx_b.iter().map(|&n| self.mean_embedding(n)).collect();
                par_map!(ea, |e: &SparseVec| eb
                    .iter()
                    .map(|f| self.spec.eval(e.as_row().dot(&f.as_row())))
                    .collect())
            }
            KernelFamily::Polynomial => par_map!(idx_a, |&m| idx_b
                .iter()
                .map(|&n| self.cov_hh_entry(m, n))
                .collect()),
        };
        Ok(DMatrix::from_fn(idx_a.len(), idx_b.len(), |i, j| rows[i][j]))
    }

    /// `Var(h_n)` for each requested node.
    pub fn khh_diag(&self, idx: &[usize]) -> Result<Vec<f64>> {
        self.check_nodes(idx)?;
        Ok(match self.spec.family {
            KernelFamily::Linear => par_map!(idx, |&n| self.spec.eval(self.mean_embedding(n).as_row().norm_sq())),
            KernelFamily::Polynomial => par_map!(idx, |&n| self.cov_hh_entry(n, n)),
        })
    }

    /// Inter-domain covariance `Cov(h_n, f(z_m))`, an `|idx| × M` block.
    pub fn cov_hu(&self, idx: &[usize], z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_nodes(idx)?;
        self.check_inducing(z)?;
        let block = NodeBlock::new(self, idx)?;
        Ok(block.cov_hu(self, &z.transpose()).0)
    }

    /// Filtered explicit feature maps `(I+D)^-1 D Φ + (I+D)^-1 (I - L) Φ` with
    /// `Φ = √σ² X`. Only defined for the linear kernel.
    pub fn spectral_transform(&self) -> Result<DMatrix<f64>> {
        if self.spec.family != KernelFamily::Linear {
            return Err(GgpError::Unsupported(
                "spectral transform needs the explicit feature map of the linear kernel".into(),
            ));
        }
        let n = self.n_nodes();
        let d = self.n_features();
        let scale = self.spec.variance.sqrt();
        let mut phi = DMatrix::<f64>::zeros(n, d);
        for node in 0..n {
            let r = self.features.row(node);
            for (&k, &v) in r.indices.iter().zip(r.values) {
                phi[(node, k)] = scale * v;
            }
        }
        let degrees: Vec<f64> = self.graph.degrees().into_iter().map(|x| x as f64).collect();
        let columns: Vec<Vec<f64>> = par_range_map!(0..d, |j| {
            let col: Vec<f64> = phi.column(j).iter().copied().collect();
            let lap = self.graph.laplacian_apply(&col).expect("column length matches");
            (0..n)
                .map(|i| (degrees[i] * col[i] + (col[i] - lap[i])) / (1.0 + degrees[i]))
                .collect()
        });
        Ok(DMatrix::from_fn(n, d, |i, j| columns[j][i]))
    }
}

/// `K_zz`, the base-kernel Gram matrix on the inducing inputs (rows of `z`).
pub fn cov_uu(z: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if z.nrows() == 0 {
        return Err(GgpError::input("at least one inducing input is required"));
    }
    let raw = z * z.transpose();
    Ok(raw.map(|r| spec.eval(r)))
}

/// Precomputed neighborhood structure for a fixed node set, reused across
/// ELBO evaluations while `θ` and `Z` change.
#[derive(Debug, Clone)]
pub struct NodeBlock {
    pub nodes: Vec<usize>,
    family: KernelFamily,
    /// `1 / (1 + D_n)` per node.
    inv_size: Vec<f64>,
    /// Union of the closed neighborhoods.
    support: Vec<usize>,
    /// Per node, positions of its closed neighborhood within `support`.
    members: Vec<Vec<usize>>,
    embeddings: Vec<SparseVec>,
    /// Per node, `(raw dot, weight)` terms whose weighted kernel sum is `Var(h_n)`.
    self_pairs: Vec<Vec<(f64, f64)>>,
}

/// Intermediate values from [`NodeBlock::cov_hu`] needed for its adjoint.
pub struct CovHuCache {
    /// Linear: `μ̂ Zᵀ` (nodes × M). Polynomial: `X_support Zᵀ` (support × M).
    raw: DMatrix<f64>,
}

impl NodeBlock {
    pub fn new(prior: &GgpPrior, nodes: &[usize]) -> Result<Self> {
        prior.check_nodes(nodes)?;
        let g = prior.graph();
        let family = prior.spec().family;
        let hoods: Vec<Vec<usize>> = nodes.iter().map(|&n| g.closed_neighborhood(n)).collect();
        let inv_size = hoods.iter().map(|h| 1.0 / h.len() as f64).collect();

        let (support, members) = if family == KernelFamily::Polynomial {
            let mut support: Vec<usize> = hoods.iter().flatten().copied().collect();
            support.sort_unstable();
            support.dedup();
            let members = hoods
                .iter()
                .map(|h| h.iter().map(|j| support.binary_search(j).unwrap()).collect())
                .collect();
            (support, members)
        } else {
            (Vec::new(), Vec::new())
        };

        let embeddings = if family == KernelFamily::Linear {
            par_map!(nodes, |&n| prior.mean_embedding(n))
        } else {
            Vec::new()
        };

        let self_pairs = if family == KernelFamily::Polynomial {
            let x = prior.features();
            par_map!(hoods, |h: &Vec<usize>| {
                let w = 1.0 / (h.len() as f64 * h.len() as f64);
                let mut pairs = Vec::with_capacity(h.len() * (h.len() + 1) / 2);
                for (a, &i) in h.iter().enumerate() {
                    let xi = x.row(i);
                    pairs.push((xi.norm_sq(), w));
                    for &j in &h[a + 1..] {
                        pairs.push((xi.dot(&x.row(j)), 2.0 * w));
                    }
                }
                pairs
            })
        } else {
            Vec::new()
        };

        Ok(NodeBlock {
            nodes: nodes.to_vec(),
            family,
            inv_size,
            support,
            members,
            embeddings,
            self_pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check_family(&self, spec: &KernelSpec) {
        assert_eq!(self.family, spec.family, "node block built for another kernel family");
    }

    /// `Var(h_n)` for every node of the block.
    pub fn khh_diag(&self, spec: &KernelSpec) -> Vec<f64> {
        self.check_family(spec);
        match self.family {
            KernelFamily::Linear => self
                .embeddings
                .iter()
                .map(|e| spec.eval(e.as_row().norm_sq()))
                .collect(),
            KernelFamily::Polynomial => self
                .self_pairs
                .iter()
                .map(|pairs| pairs.iter().map(|&(r, w)| w * spec.eval(r)).sum())
                .collect(),
        }
    }

    /// Accumulates `Σ_n dkhh[n] · ∂Var(h_n)/∂(variance, offset)`.
    pub fn khh_diag_backward(&self, spec: &KernelSpec, dkhh: &[f64]) -> [f64; 2] {
        let mut d = [0.0; 2];
        match self.family {
            KernelFamily::Linear => {
                for (e, &g) in self.embeddings.iter().zip(dkhh) {
                    let (_, dv, dc) = spec.eval_grads(e.as_row().norm_sq());
                    d[0] += g * dv;
                    d[1] += g * dc;
                }
            }
            KernelFamily::Polynomial => {
                for (pairs, &g) in self.self_pairs.iter().zip(dkhh) {
                    for &(r, w) in pairs {
                        let (_, dv, dc) = spec.eval_grads(r);
                        d[0] += g * w * dv;
                        d[1] += g * w * dc;
                    }
                }
            }
        }
        d
    }

    /// `Cov(h_n, f(z_m))` as nodes × M. `zt` holds inducing inputs as
    /// columns (D × M).
    pub fn cov_hu(&self, prior: &GgpPrior, zt: &DMatrix<f64>) -> (DMatrix<f64>, CovHuCache) {
        let spec = prior.spec();
        self.check_family(spec);
        let m = zt.ncols();
        match self.family {
            KernelFamily::Linear => {
                let rows: Vec<Vec<f64>> = par_map!(self.embeddings, |e: &SparseVec| (0..m)
                    .map(|c| e.as_row().dot_dense(zt.column(c).as_slice()))
                    .collect());
                let raw = DMatrix::from_fn(self.len(), m, |i, j| rows[i][j]);
                (raw.map(|r| spec.eval(r)), CovHuCache { raw })
            }
            KernelFamily::Polynomial => {
                let x = prior.features();
                let rows: Vec<Vec<f64>> = par_map!(self.support, |&l| {
                    let xl = x.row(l);
                    (0..m).map(|c| xl.dot_dense(zt.column(c).as_slice())).collect()
                });
                let raw = DMatrix::from_fn(self.support.len(), m, |i, j| rows[i][j]);
                let kernel = raw.map(|r| spec.eval(r));
                let k = DMatrix::from_fn(self.len(), m, |n, c| {
                    self.members[n].iter().map(|&l| kernel[(l, c)]).sum::<f64>() * self.inv_size[n]
                });
                (k, CovHuCache { raw })
            }
        }
    }

    /// Adjoint of [`cov_hu`](Self::cov_hu): given `∂f/∂K_hu` (nodes × M)
    /// returns `∂f/∂Zᵀ` (D × M) and `∂f/∂(variance, offset)`.
    pub fn cov_hu_backward(
        &self,
        prior: &GgpPrior,
        cache: &CovHuCache,
        k_bar: &DMatrix<f64>,
    ) -> (DMatrix<f64>, [f64; 2]) {
        let spec = prior.spec();
        let m = k_bar.ncols();
        let d = prior.n_features();
        let mut zt_bar = DMatrix::<f64>::zeros(d, m);
        let mut theta = [0.0; 2];
        match self.family {
            KernelFamily::Linear => {
                for n in 0..self.len() {
                    let e = &self.embeddings[n];
                    for c in 0..m {
                        let g = k_bar[(n, c)];
                        if g == 0.0 {
                            continue;
                        }
                        let (dr, dv, dc) = spec.eval_grads(cache.raw[(n, c)]);
                        theta[0] += g * dv;
                        theta[1] += g * dc;
                        let mut col = zt_bar.column_mut(c);
                        for (&k, &v) in e.indices.iter().zip(&e.values) {
                            col[k] += g * dr * v;
                        }
                    }
                }
            }
            KernelFamily::Polynomial => {
                let x = prior.features();
                // coefficient of each support row per inducing column
                let mut coef = DMatrix::<f64>::zeros(self.support.len(), m);
                for n in 0..self.len() {
                    for c in 0..m {
                        let g = k_bar[(n, c)] * self.inv_size[n];
                        if g == 0.0 {
                            continue;
                        }
                        for &l in &self.members[n] {
                            let (dr, dv, dc) = spec.eval_grads(cache.raw[(l, c)]);
                            theta[0] += g * dv;
                            theta[1] += g * dc;
                            coef[(l, c)] += g * dr;
                        }
                    }
                }
                for (pos, &l) in self.support.iter().enumerate() {
                    let xl = x.row(l);
                    for c in 0..m {
                        let g = coef[(pos, c)];
                        if g == 0.0 {
                            continue;
                        }
                        let mut col = zt_bar.column_mut(c);
                        for (&k, &v) in xl.indices.iter().zip(xl.values) {
                            col[k] += g * v;
                        }
                    }
                }
            }
        }
        (zt_bar, theta)
    }
}
