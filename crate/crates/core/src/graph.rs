//! Undirected binary graphs stored as sorted neighbor lists (CSR layout).
//!
//! The graph is the source of the degree matrix `D`, adjacency `A`, the
//! Laplacian `L = D - A` and the closed-neighborhood averaging operator
//! `P = (I + D)^-1 (I + A)`. None of these are ever materialized densely.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::error::{GgpError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl SparseGraph {
    /// Builds a symmetric graph from undirected pairs. Duplicates and either
    /// orientation are merged, self-loops are dropped.
    pub fn from_edge_list(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u >= n_nodes || v >= n_nodes {
                return Err(GgpError::input(format!(
                    "edge #{i} ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Ok(SparseGraph { offsets, neighbors })
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n_nodes()).map(|n| self.degree(n)).collect()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_nodes()).map(|n| self.degree(n)).max().unwrap_or(0)
    }

    /// `{node} ∪ Ne(node)` in ascending order.
    pub fn closed_neighborhood(&self, node: usize) -> Vec<usize> {
        let nb = self.neighbors(node);
        let pos = nb.partition_point(|&v| v < node);
        let mut out = Vec::with_capacity(nb.len() + 1);
        out.extend_from_slice(&nb[..pos]);
        out.push(node);
        out.extend_from_slice(&nb[pos..]);
        out
    }

    /// Every undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges());
        for u in 0..self.n_nodes() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n_nodes() {
            return Err(GgpError::input(format!(
                "vector length {} does not match {} nodes",
                f.len(),
                self.n_nodes()
            )));
        }
        Ok(())
    }

    /// `(D - A) f`.
    pub fn laplacian_apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        Ok((0..self.n_nodes())
            .map(|n| {
                let s: f64 = self.neighbors(n).iter().map(|&v| f[v]).sum();
                self.degree(n) as f64 * f[n] - s
            })
            .collect())
    }

    /// `(I + D)^-1 (I + A) f`; isolated nodes pass through unchanged.
    pub fn averaging_apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        Ok((0..self.n_nodes())
            .map(|n| {
                let s: f64 = self.neighbors(n).iter().map(|&v| f[v]).sum();
                (f[n] + s) / (1.0 + self.degree(n) as f64)
            })
            .collect())
    }

    /// Component label per node, components numbered in order of their
    /// smallest member.
    pub fn connected_components(&self) -> Vec<usize> {
        let n = self.n_nodes();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Subgraph induced on the largest connected component. Ties go to the
    /// component containing the smallest original index. The returned map
    /// sends old indices to new ones (`None` for dropped nodes) and is
    /// order-preserving.
    pub fn largest_connected_component(&self) -> Result<(SparseGraph, Vec<Option<usize>>)> {
        if self.n_nodes() == 0 {
            return Err(GgpError::input("largest component of an empty graph"));
        }
        let comp = self.connected_components();
        let n_comp = comp.iter().max().map_or(0, |&c| c + 1);
        let mut sizes = vec![0usize; n_comp];
        for &c in &comp {
            sizes[c] += 1;
        }
        // components are numbered by smallest member, so the first maximum wins ties
        let mut best = 0;
        for (c, &s) in sizes.iter().enumerate() {
            if s > sizes[best] {
                best = c;
            }
        }
        let keep: Vec<usize> = (0..self.n_nodes()).filter(|&u| comp[u] == best).collect();
        Ok(self.induced_subgraph(&keep))
    }

    /// Subgraph induced on `keep` (ascending, unique).
    pub fn induced_subgraph(&self, keep: &[usize]) -> (SparseGraph, Vec<Option<usize>>) {
        let mut map = vec![None; self.n_nodes()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = Some(new);
        }
        let mut offsets = Vec::with_capacity(keep.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for &old in keep {
            neighbors.extend(self.neighbors(old).iter().filter_map(|&v| map[v]));
            offsets.push(neighbors.len());
        }
        (SparseGraph { offsets, neighbors }, map)
    }

    pub fn is_connected(&self) -> bool {
        self.n_nodes() == 0 || self.connected_components().iter().all(|&c| c == 0)
    }
}

/// Parses `u<TAB>v` lines with integer node indices. Lines starting with `#`
/// and blank lines are skipped.
pub fn parse_edge_list(text: &str, n_nodes: usize) -> Result<SparseGraph> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (u, v) = split_pair(line)
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| {
                GgpError::input(format!("edge list line {}: malformed `{line}`", lineno + 1))
            })?;
        if u >= n_nodes || v >= n_nodes {
            return Err(GgpError::input(format!(
                "edge list line {}: node index out of range in `{line}` ({n_nodes} nodes)",
                lineno + 1
            )));
        }
        edges.push((u, v));
    }
    SparseGraph::from_edge_list(n_nodes, &edges)
}

/// Parses an edge list whose endpoints are arbitrary string ids. Ids are
/// assigned dense indices in sorted order; the id table is returned alongside.
pub fn parse_edge_list_with_ids(text: &str) -> Result<(SparseGraph, Vec<String>)> {
    let mut pairs = Vec::new();
    let mut ids = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = split_pair(line).ok_or_else(|| {
            GgpError::input(format!("edge list line {}: malformed `{line}`", lineno + 1))
        })?;
        ids.insert(a.to_string());
        ids.insert(b.to_string());
        pairs.push((a, b));
    }
    let table: Vec<String> = ids.into_iter().collect();
    let index: HashMap<&str, usize> = table.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let edges: Vec<(usize, usize)> = pairs.iter().map(|(a, b)| (index[a], index[b])).collect();
    Ok((SparseGraph::from_edge_list(table.len(), &edges)?, table))
}

fn split_pair(line: &str) -> Option<(&str, &str)> {
    let mut it = line.split('\t');
    let a = it.next()?.trim();
    let b = it.next()?.trim();
    if it.next().is_some() || a.is_empty() || b.is_empty() {
        return None;
    }
    Some((a, b))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn path(n: usize) -> SparseGraph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        SparseGraph::from_edge_list(n, &edges).unwrap()
    }

    pub fn star(leaves: usize) -> SparseGraph {
        let edges: Vec<_> = (1..=leaves).map(|i| (0, i)).collect();
        SparseGraph::from_edge_list(leaves + 1, &edges).unwrap()
    }

    fn dense_adjacency(g: &SparseGraph) -> Vec<Vec<f64>> {
        let n = g.n_nodes();
        let mut a = vec![vec![0.0; n]; n];
        for u in 0..n {
            for &v in g.neighbors(u) {
                a[u][v] = 1.0;
            }
        }
        a
    }

    #[test]
    fn edge_list_degrees() {
        let g = SparseGraph::from_edge_list(2, &[(0, 1)]).unwrap();
        assert_eq!(g.degrees(), vec![1, 1]);
        let g = star(3);
        assert_eq!(g.degrees(), vec![3, 1, 1, 1]);
        let g = SparseGraph::from_edge_list(3, &[(0, 1), (1, 0), (2, 2)]).unwrap();
        assert_eq!(g.degrees(), vec![1, 1, 0]);
        assert!(g.neighbors(2).is_empty());
    }

    #[test]
    fn edge_out_of_range() {
        let err = SparseGraph::from_edge_list(2, &[(0, 1), (1, 2)]).unwrap_err();
        assert!(err.to_string().contains("(1, 2)"));
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(path(2).laplacian_apply(&[1.0, 2.0]).unwrap(), vec![-1.0, 1.0]);
        let tri = SparseGraph::from_edge_list(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(tri.laplacian_apply(&[2.5; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(
            star(3).laplacian_apply(&[0.0, 1.0, 1.0, 1.0]).unwrap(),
            vec![-3.0, 1.0, 1.0, 1.0]
        );
        assert!(path(2).laplacian_apply(&[1.0]).is_err());
    }

    #[test]
    fn averaging_examples() {
        assert_eq!(path(2).averaging_apply(&[1.0, 3.0]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(
            star(3).averaging_apply(&[0.0, 4.0, 4.0, 4.0]).unwrap(),
            vec![3.0, 2.0, 2.0, 2.0]
        );
        let g = SparseGraph::from_edge_list(3, &[(0, 1)]).unwrap();
        assert_eq!(g.averaging_apply(&[1.0, 3.0, 7.0]).unwrap()[2], 7.0);
        assert!(g.averaging_apply(&[1.0; 4]).is_err());
    }

    #[test]
    fn largest_component() {
        let g = SparseGraph::from_edge_list(5, &[(0, 1), (1, 2), (2, 0), (3, 4)]).unwrap();
        let (sub, map) = g.largest_connected_component().unwrap();
        assert_eq!(sub.n_nodes(), 3);
        assert_eq!(map, vec![Some(0), Some(1), Some(2), None, None]);

        let full = SparseGraph::from_edge_list(
            4,
            &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        )
        .unwrap();
        let (sub, map) = full.largest_connected_component().unwrap();
        assert_eq!(sub, full);
        assert_eq!(map, (0..4).map(Some).collect::<Vec<_>>());

        // equal sizes: the component holding node 0 wins
        let g = SparseGraph::from_edge_list(4, &[(2, 3), (0, 1)]).unwrap();
        let (_, map) = g.largest_connected_component().unwrap();
        assert_eq!(map, vec![Some(0), Some(1), None, None]);

        let empty = SparseGraph::from_edge_list(0, &[]).unwrap();
        assert!(empty.largest_connected_component().is_err());
    }

    #[test]
    fn closed_neighborhood_sorted() {
        let g = star(3);
        assert_eq!(g.closed_neighborhood(2), vec![0, 2]);
        assert_eq!(g.closed_neighborhood(0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn parse_edge_files() {
        let text = "# comment\n0\t1\n1\t2\n\n2\t2\n";
        let g = parse_edge_list(text, 3).unwrap();
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        let err = parse_edge_list("0\t1\n0 x\n", 3).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let err = parse_edge_list("0\t5\n", 3).unwrap_err();
        assert!(err.to_string().contains("line 1"));

        let (g, ids) = parse_edge_list_with_ids("paperB\tpaperA\npaperC\tpaperA\n").unwrap();
        assert_eq!(ids, vec!["paperA", "paperB", "paperC"]);
        assert_eq!(g.degrees(), vec![2, 1, 1]);
    }

    fn arb_graph(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1..=max_n).prop_flat_map(|n| {
            (Just(n), proptest::collection::vec((0..n, 0..n), 0..(3 * n)))
        })
    }

    proptest! {
        #[test]
        fn operators_match_dense((n, edges) in arb_graph(64), seed in 0u64..1000) {
            let g = SparseGraph::from_edge_list(n, &edges).unwrap();
            let a = dense_adjacency(&g);
            let f: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 13.0 - 3.0).collect();
            let lap = g.laplacian_apply(&f).unwrap();
            let avg = g.averaging_apply(&f).unwrap();
            for u in 0..n {
                let deg: f64 = a[u].iter().sum();
                let af: f64 = (0..n).map(|v| a[u][v] * f[v]).sum();
                prop_assert!((lap[u] - (deg * f[u] - af)).abs() < 1e-12);
                prop_assert!((avg[u] - (f[u] + af) / (1.0 + deg)).abs() < 1e-12);
            }
            prop_assert_eq!(g.averaging_apply(&vec![1.0; n]).unwrap(), vec![1.0; n]);
            prop_assert_eq!(g.laplacian_apply(&vec![1.0; n]).unwrap(), vec![0.0; n]);
            for u in 0..n {
                prop_assert!(!g.neighbors(u).contains(&u));
                for &v in g.neighbors(u) {
                    prop_assert!(g.neighbors(v).contains(&u));
                }
            }
        }

        #[test]
        fn construction_idempotent((n, edges) in arb_graph(30)) {
            let g = SparseGraph::from_edge_list(n, &edges).unwrap();
            let mut doubled: Vec<_> = edges.iter().map(|&(u, v)| (v, u)).collect();
            doubled.extend_from_slice(&edges);
            doubled.reverse();
            prop_assert_eq!(&SparseGraph::from_edge_list(n, &doubled).unwrap(), &g);
            prop_assert_eq!(SparseGraph::from_edge_list(n, &g.edges()).unwrap(), g);
        }
    }
}
