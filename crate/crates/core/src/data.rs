//! Dataset directories and synthetic stochastic block model graphs.
//!
//! A dataset directory holds four files:
//!
//! | file              | line format                  |
//! |-------------------|------------------------------|
//! | `graph.edges`     | `u<TAB>v`                    |
//! | `features.sparse` | `node<TAB>feature<TAB>value` |
//! | `labels.tsv`      | `node<TAB>class`             |
//! | `split.json`      | `{"train": [..], "val": [..], "test": [..]}` |
//!
//! Indices are 0-based. Every node carries a label; the split decides which
//! of them a model may see.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GgpError, Result};
use crate::features::{parse_feature_file, FeatureMatrix, KernelSpec};
use crate::graph::{parse_edge_list, SparseGraph};
use crate::prior::GgpPrior;

pub const GRAPH_FILE: &str = "graph.edges";
pub const FEATURES_FILE: &str = "features.sparse";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(GgpError::input(format!("unknown split `{name}` (expected train, val or test)"))),
        }
    }

    fn named(&self) -> [(&'static str, &[usize]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    fn canonicalize(&mut self) {
        for s in [&mut self.train, &mut self.val, &mut self.test] {
            s.sort_unstable();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Arc<SparseGraph>,
    pub features: Arc<FeatureMatrix>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub splits: Splits,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub nodes: usize,
    pub edges: usize,
    pub classes: usize,
    pub features: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Dataset {
    /// Checks shapes, label range and split consistency.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n_nodes();
        if self.features.n_nodes() != n {
            return Err(GgpError::input(format!(
                "features cover {} nodes, graph has {n}",
                self.features.n_nodes()
            )));
        }
        if self.labels.len() != n {
            return Err(GgpError::input(format!("{} labels for {n} nodes", self.labels.len())));
        }
        if let Some((v, &y)) = self.labels.iter().enumerate().find(|(_, &y)| y >= self.n_classes) {
            return Err(GgpError::input(format!("node {v} has class {y}, not below {}", self.n_classes)));
        }
        let mut owner: Vec<Option<&str>> = vec![None; n];
        for (name, idx) in self.splits.named() {
            for &v in idx {
                if v >= n {
                    return Err(GgpError::input(format!("split `{name}` references node {v}, only {n} nodes")));
                }
                if let Some(prev) = owner[v] {
                    return Err(GgpError::input(if prev == name {
                        format!("node {v} listed twice in split `{name}`")
                    } else {
                        format!("node {v} is in both `{prev}` and `{name}` splits")
                    }));
                }
                owner[v] = Some(name);
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            nodes: self.n_nodes(),
            edges: self.graph.n_edges(),
            classes: self.n_classes,
            features: self.features.n_features(),
            train: self.splits.train.len(),
            val: self.splits.val.len(),
            test: self.splits.test.len(),
        }
    }

    /// `(node, class)` pairs of a split.
    pub fn labelled(&self, split: &[usize]) -> Vec<(usize, usize)> {
        split.iter().map(|&v| (v, self.labels[v])).collect()
    }

    /// GGP prior over this graph, optionally TFIDF-weighting the features.
    pub fn prior(&self, spec: KernelSpec, tfidf: bool) -> Result<GgpPrior> {
        let features = if tfidf {
            Arc::new(self.features.tfidf(true)?)
        } else {
            self.features.clone()
        };
        GgpPrior::new(self.graph.clone(), features, spec)
    }

    fn file_texts(&self) -> [(&'static str, String); 4] {
        let mut edges = String::new();
        for (u, v) in self.graph.edges() {
            edges.push_str(&format!("{u}\t{v}\n"));
        }
        let mut feats = format!(
            "# nodes={} features={}\n",
            self.features.n_nodes(),
            self.features.n_features()
        );
        for (n, k, v) in self.features.triples() {
            feats.push_str(&format!("{n}\t{k}\t{v}\n"));
        }
        let mut labels = String::new();
        for (v, y) in self.labels.iter().enumerate() {
            labels.push_str(&format!("{v}\t{y}\n"));
        }
        let split = serde_json::to_string(&self.splits).expect("splits serialize");
        [
            (GRAPH_FILE, edges),
            (FEATURES_FILE, feats),
            (LABELS_FILE, labels),
            (SPLIT_FILE, split + "\n"),
        ]
    }

    /// SHA-256 over the canonical file contents, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, text) in self.file_texts() {
            h.update(name.as_bytes());
            h.update((text.len() as u64).to_le_bytes());
            h.update(text.as_bytes());
        }
        hex(&h.finalize())
    }

    /// Restricts to the largest connected component, re-indexing features,
    /// labels and splits. The class count is kept. Returns the old → new map.
    pub fn restrict_to_largest_component(&self) -> Result<(Dataset, Vec<Option<usize>>)> {
        let (graph, map) = self.graph.largest_connected_component()?;
        let keep: Vec<usize> = (0..self.n_nodes()).filter(|&v| map[v].is_some()).collect();
        let remap = |idx: &[usize]| -> Vec<usize> { idx.iter().filter_map(|&v| map[v]).collect() };
        let ds = Dataset {
            graph: Arc::new(graph),
            features: Arc::new(self.features.select_rows(&keep)),
            labels: keep.iter().map(|&v| self.labels[v]).collect(),
            n_classes: self.n_classes,
            splits: Splits {
                train: remap(&self.splits.train),
                val: remap(&self.splits.val),
                test: remap(&self.splits.test),
            },
        };
        Ok((ds, map))
    }
}

/// SHA-256 of the sorted undirected edge list, hex encoded.
pub fn graph_hash(g: &SparseGraph) -> String {
    let mut h = Sha256::new();
    h.update((g.n_nodes() as u64).to_le_bytes());
    for (u, v) in g.edges() {
        h.update((u as u64).to_le_bytes());
        h.update((v as u64).to_le_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| GgpError::io(&path, e))
}

fn parse_labels(text: &str) -> Result<(Vec<usize>, usize)> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || GgpError::input(format!("{LABELS_FILE} line {}: malformed `{line}`", lineno + 1));
        let (a, b) = line.split_once('\t').ok_or_else(bad)?;
        let node = a.trim().parse::<usize>().map_err(|_| bad())?;
        let class = b.trim().parse::<usize>().map_err(|_| bad())?;
        pairs.push((lineno + 1, node, class));
    }
    let n = pairs.iter().map(|p| p.1 + 1).max().unwrap_or(0);
    let mut labels: Vec<Option<usize>> = vec![None; n];
    for (lineno, node, class) in pairs {
        if labels[node].is_some() {
            return Err(GgpError::input(format!("{LABELS_FILE} line {lineno}: node {node} labelled twice")));
        }
        labels[node] = Some(class);
    }
    let labels: Vec<usize> = labels
        .into_iter()
        .enumerate()
        .map(|(v, y)| y.ok_or_else(|| GgpError::input(format!("{LABELS_FILE}: node {v} has no label"))))
        .collect::<Result<_>>()?;
    let k = labels.iter().max().map_or(0, |&y| y + 1);
    let mut seen = vec![false; k];
    for &y in &labels {
        seen[y] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(GgpError::input(format!("{LABELS_FILE}: class {missing} has no node")));
    }
    Ok((labels, k))
}

/// Loads and validates a dataset directory. The node count comes from
/// `labels.tsv`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let (labels, n_classes) = parse_labels(&read(dir, LABELS_FILE)?)?;
    let n = labels.len();
    if n == 0 {
        return Err(GgpError::input(format!("{LABELS_FILE} lists no nodes")));
    }
    let graph = parse_edge_list(&read(dir, GRAPH_FILE)?, n)
        .map_err(|e| GgpError::input(format!("{GRAPH_FILE}: {e}")))?;
    let features = parse_feature_file(&read(dir, FEATURES_FILE)?, Some(n))
        .map_err(|e| GgpError::input(format!("{FEATURES_FILE}: {e}")))?;
    let mut splits: Splits = serde_json::from_str(&read(dir, SPLIT_FILE)?)
        .map_err(|e| GgpError::input(format!("{SPLIT_FILE}: {e}")))?;
    splits.canonicalize();
    let ds = Dataset {
        graph: Arc::new(graph),
        features: Arc::new(features),
        labels,
        n_classes,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes the four dataset files into `dir`, creating it if needed.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| GgpError::io(dir, e))?;
    for (name, text) in ds.file_texts() {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| GgpError::io(&path, e))?;
    }
    Ok(())
}

/// Stochastic block model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub n_per_block: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Dedicated one-hot features per block.
    pub d_per_block: usize,
    /// Probability of flipping each binary feature.
    pub noise: f64,
    pub seed: u64,
    pub train_per_block: usize,
    pub n_val: usize,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            n_per_block: 10,
            n_blocks: 2,
            p_in: 1.0,
            p_out: 0.0,
            d_per_block: 5,
            noise: 0.0,
            seed: 0,
            train_per_block: 1,
            n_val: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(prob(self.p_in) && prob(self.p_out) && self.p_out < self.p_in) {
            return Err(GgpError::input(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if !prob(self.noise) {
            return Err(GgpError::input(format!("noise must lie in [0, 1], got {}", self.noise)));
        }
        if self.n_blocks < 2 {
            return Err(GgpError::input("need at least 2 blocks"));
        }
        if self.d_per_block == 0 {
            return Err(GgpError::input("d_per_block must be >= 1"));
        }
        if self.train_per_block == 0 || self.train_per_block > self.n_per_block {
            return Err(GgpError::input(format!(
                "train_per_block must lie in 1..={}",
                self.n_per_block
            )));
        }
        let rest = self.n_blocks * (self.n_per_block - self.train_per_block);
        if self.n_val >= rest {
            return Err(GgpError::input(format!(
                "n_val {} leaves no test nodes ({rest} nodes outside train)",
                self.n_val
            )));
        }
        Ok(())
    }
}

/// Samples an SBM dataset: node `v` belongs to block `v / n_per_block`.
/// Random draws happen in a fixed order (edges, features, splits) so a seed
/// pins the dataset exactly.
pub fn synth_sbm(cfg: &SbmConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n_per_block * cfg.n_blocks;
    let block = |v: usize| v / cfg.n_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block(u) == block(v) { cfg.p_in } else { cfg.p_out };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let graph = SparseGraph::from_edge_list(n, &edges)?;

    let d = cfg.n_blocks * cfg.d_per_block;
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|v| {
            let own = block(v) * cfg.d_per_block..(block(v) + 1) * cfg.d_per_block;
            (0..d)
                .filter(|k| own.contains(k) != rng.random_bool(cfg.noise))
                .map(|k| (k, 1.0))
                .collect()
        })
        .collect();
    let features = FeatureMatrix::from_rows(d, rows)?;

    let mut train = Vec::new();
    let mut rest = Vec::new();
    for b in 0..cfg.n_blocks {
        let mut members: Vec<usize> = (b * cfg.n_per_block..(b + 1) * cfg.n_per_block).collect();
        shuffle(&mut members, &mut rng);
        train.extend_from_slice(&members[..cfg.train_per_block]);
        rest.extend_from_slice(&members[cfg.train_per_block..]);
    }
    rest.sort_unstable();
    shuffle(&mut rest, &mut rng);
    let val = rest[..cfg.n_val].to_vec();
    let test = rest[cfg.n_val..].to_vec();
    let mut splits = Splits { train, val, test };
    splits.canonicalize();

    let ds = Dataset {
        graph: Arc::new(graph),
        features: Arc::new(features),
        labels: (0..n).map(block).collect(),
        n_classes: cfg.n_blocks,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

/// Fisher–Yates with an explicit draw order.
fn shuffle(xs: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}
