//! Sparse node features, TFIDF re-weighting and the base kernel `k_θ`.

use serde::{Deserialize, Serialize};

use crate::error::{GgpError, Result};

/// Node-by-feature matrix in CSR form. Explicit zeros are never stored and
/// column indices are strictly increasing within a row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_features: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// Borrowed sparse row.
#[derive(Debug, Clone, Copy)]
pub struct SparseRow<'a> {
    pub dim: usize,
    pub indices: &'a [usize],
    pub values: &'a [f64],
}

impl<'a> SparseRow<'a> {
    pub fn dot(&self, other: &SparseRow<'_>) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(self.values)
            .map(|(&k, &v)| v * dense[k])
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&k, &v) in self.indices.iter().zip(self.values) {
            out[k] = v;
        }
        out
    }
}

/// Owned sparse vector, used for averaged (mean-embedding) rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn as_row(&self) -> SparseRow<'_> {
        SparseRow {
            dim: self.dim,
            indices: &self.indices,
            values: &self.values,
        }
    }

    /// Weighted sum of rows, merged into sorted sparse form.
    pub fn weighted_sum<'a>(dim: usize, rows: impl IntoIterator<Item = (f64, SparseRow<'a>)>) -> Self {
        let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for (w, row) in rows {
            for (&k, &v) in row.indices.iter().zip(row.values) {
                *acc.entry(k).or_insert(0.0) += w * v;
            }
        }
        let (indices, values) = acc.into_iter().filter(|&(_, v)| v != 0.0).unzip();
        SparseVec { dim, indices, values }
    }
}

impl FeatureMatrix {
    /// Builds from per-row `(feature, value)` lists in any order. Zeros are
    /// dropped; duplicate entries within a row are an error.
    pub fn from_rows(n_features: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(k, _)| k);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(GgpError::input(format!(
                        "node {r}: feature {} given twice",
                        w[0].0
                    )));
                }
            }
            for (k, v) in row {
                if k >= n_features {
                    return Err(GgpError::input(format!(
                        "node {r}: feature {k} out of range for {n_features} features"
                    )));
                }
                if !v.is_finite() {
                    return Err(GgpError::input(format!("node {r}: non-finite value for feature {k}")));
                }
                if v != 0.0 {
                    indices.push(k);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Ok(FeatureMatrix {
            n_features,
            offsets,
            indices,
            values,
        })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let sparse = rows
            .iter()
            .map(|r| r.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect())
            .collect();
        Self::from_rows(d, sparse)
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, node: usize) -> SparseRow<'_> {
        let r = self.offsets[node]..self.offsets[node + 1];
        SparseRow {
            dim: self.n_features,
            indices: &self.indices[r.clone()],
            values: &self.values[r],
        }
    }

    /// Rows restricted to `keep`, in that order.
    pub fn select_rows(&self, keep: &[usize]) -> FeatureMatrix {
        let rows = keep
            .iter()
            .map(|&n| {
                let r = self.row(n);
                r.indices.iter().copied().zip(r.values.iter().copied()).collect()
            })
            .collect();
        FeatureMatrix::from_rows(self.n_features, rows).expect("rows of a valid matrix")
    }

    /// Smooth-idf TFIDF: `tf · (ln((1+N)/(1+df)) + 1)` with `tf` the stored
    /// value, optionally followed by L2 row normalization.
    pub fn tfidf(&self, normalize: bool) -> Result<FeatureMatrix> {
        if let Some(pos) = self.values.iter().position(|&v| v < 0.0) {
            let node = self.offsets.partition_point(|&o| o <= pos) - 1;
            return Err(GgpError::input(format!(
                "negative term count at node {node}, feature {}",
                self.indices[pos]
            )));
        }
        let n = self.n_nodes() as f64;
        let mut df = vec![0usize; self.n_features];
        for &k in &self.indices {
            df[k] += 1;
        }
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        let mut values: Vec<f64> = self
            .indices
            .iter()
            .zip(&self.values)
            .map(|(&k, &v)| v * idf[k])
            .collect();
        if normalize {
            for w in self.offsets.windows(2) {
                let row = &mut values[w[0]..w[1]];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        Ok(FeatureMatrix {
            n_features: self.n_features,
            offsets: self.offsets.clone(),
            indices: self.indices.clone(),
            values,
        })
    }

    /// Triples `(node, feature, value)` in row-major order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_nodes()).flat_map(move |n| {
            let r = self.row(n);
            r.indices.iter().zip(r.values).map(move |(&k, &v)| (n, k, v))
        })
    }
}

/// Parses `node<TAB>feature<TAB>value` lines. A `# nodes=N features=D`
/// header, when present, fixes the shape; otherwise both are inferred from
/// the largest index seen (nodes may also be fixed by the caller).
pub fn parse_feature_file(text: &str, n_nodes: Option<usize>) -> Result<FeatureMatrix> {
    let mut header_nodes = None;
    let mut header_features = None;
    let mut triples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for tok in rest.split_whitespace() {
                if let Some(v) = tok.strip_prefix("nodes=") {
                    header_nodes = v.parse::<usize>().ok();
                } else if let Some(v) = tok.strip_prefix("features=") {
                    header_features = v.parse::<usize>().ok();
                }
            }
            continue;
        }
        let bad = || GgpError::input(format!("feature file line {}: malformed `{line}`", lineno + 1));
        let mut it = line.split('\t');
        let node = it.next().and_then(|s| s.trim().parse::<usize>().ok()).ok_or_else(bad)?;
        let feat = it.next().and_then(|s| s.trim().parse::<usize>().ok()).ok_or_else(bad)?;
        let value = it.next().and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(bad)?;
        if it.next().is_some() || !value.is_finite() {
            return Err(bad());
        }
        triples.push((lineno + 1, node, feat, value));
    }
    let max_node = triples.iter().map(|t| t.1 + 1).max().unwrap_or(0);
    let max_feat = triples.iter().map(|t| t.2 + 1).max().unwrap_or(0);
    let n_nodes = n_nodes.or(header_nodes).unwrap_or(max_node);
    let n_features = header_features.unwrap_or(max_feat);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
    for (lineno, node, feat, value) in triples {
        if node >= n_nodes || feat >= n_features {
            return Err(GgpError::input(format!(
                "feature file line {lineno}: index out of range ({n_nodes} nodes, {n_features} features)"
            )));
        }
        rows[node].push((feat, value));
    }
    FeatureMatrix::from_rows(n_features, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Linear,
    Polynomial,
}

/// Base kernel hyperparameters. Both families depend on the inputs only
/// through the raw inner product `r = <x, z>`:
/// linear `σ² r`, polynomial `(σ² r + c)³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub variance: f64,
    pub offset: f64,
    pub degree: u32,
}

impl KernelSpec {
    pub fn linear(variance: f64) -> Result<Self> {
        KernelSpec {
            family: KernelFamily::Linear,
            variance,
            offset: 0.0,
            degree: 1,
        }
        .validated()
    }

    pub fn polynomial(variance: f64, offset: f64) -> Result<Self> {
        KernelSpec {
            family: KernelFamily::Polynomial,
            variance,
            offset,
            degree: 3,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(GgpError::input(format!("kernel variance must be > 0, got {}", self.variance)));
        }
        if !(self.offset >= 0.0 && self.offset.is_finite()) {
            return Err(GgpError::input(format!("kernel offset must be >= 0, got {}", self.offset)));
        }
        if self.family == KernelFamily::Polynomial && self.degree != 3 {
            return Err(GgpError::input("polynomial kernel degree is fixed to 3"));
        }
        Ok(self)
    }

    /// Kernel value as a function of the raw inner product.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Linear => self.variance * r,
            KernelFamily::Polynomial => {
                let t = self.variance * r + self.offset;
                t * t * t
            }
        }
    }

    /// `(dk/dr, dk/dvariance, dk/doffset)` at raw inner product `r`.
    #[inline]
    pub fn eval_grads(&self, r: f64) -> (f64, f64, f64) {
        match self.family {
            KernelFamily::Linear => (self.variance, r, 0.0),
            KernelFamily::Polynomial => {
                let t = self.variance * r + self.offset;
                let d = 3.0 * t * t;
                (d * self.variance, d * r, d)
            }
        }
    }

    /// Number of free hyperparameters (variance, plus offset for polynomial).
    pub fn n_params(&self) -> usize {
        match self.family {
            KernelFamily::Linear => 1,
            KernelFamily::Polynomial => 2,
        }
    }
}

/// `k_θ(x, z)` for two sparse vectors.
pub fn base_kernel(x: &SparseRow<'_>, z: &SparseRow<'_>, spec: &KernelSpec) -> Result<f64> {
    if x.dim != z.dim {
        return Err(GgpError::input(format!("dimension mismatch: {} vs {}", x.dim, z.dim)));
    }
    Ok(spec.eval(x.dot(z)))
}

/// `k_θ(x, z)` for a sparse `x` and dense `z`.
pub fn base_kernel_dense(x: &SparseRow<'_>, z: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.dim != z.len() {
        return Err(GgpError::input(format!("dimension mismatch: {} vs {}", x.dim, z.len())));
    }
    Ok(spec.eval(x.dot_dense(z)))
}
