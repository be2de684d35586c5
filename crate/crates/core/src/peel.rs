//! Bottom-up peeling of the fidelity matrix into ancestral relations, a
//! causal order, and per-node instruments.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde_json::json;

use crate::error::{GampiError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeafIvPair {
    pub iv: usize,
    pub node: usize,
}

/// All indices are 0-based in memory and 1-based in JSON.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperGraph {
    pub p: usize,
    /// Transitively closed, sorted pairs `(k, j)` meaning `k` is an ancestor
    /// of `j`.
    pub ancestral: Vec<(usize, usize)>,
    pub order: Vec<usize>,
    pub ancestors: Vec<Vec<usize>>,
    pub instruments: Vec<Vec<usize>>,
    /// Leaf–instrument pairs found at each peel iteration. Empty when the
    /// graph was built directly from parts.
    pub leaf_iv_pairs: Vec<Vec<LeafIvPair>>,
}

impl SuperGraph {
    /// Builds a super-graph from raw ancestral pairs and instrument sets,
    /// closing the relation and deriving the order.
    pub fn from_parts(p: usize, pairs: &[(usize, usize)], instruments: Vec<Vec<usize>>) -> Result<Self> {
        if instruments.len() != p {
            return Err(GampiError::invalid("one instrument set per node is required"));
        }
        if let Some(&(k, j)) = pairs.iter().find(|&&(k, j)| k >= p || j >= p || k == j) {
            return Err(GampiError::invalid(format!("bad ancestral pair ({k}, {j})")));
        }
        let ancestral = transitive_closure(p, pairs)?;
        let mut ancestors = vec![Vec::new(); p];
        for &(k, j) in &ancestral {
            ancestors[j].push(k);
        }
        let order = depth_order(p, &ancestors);
        let instruments = instruments
            .into_iter()
            .map(|mut s| {
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        Ok(Self {
            p,
            ancestral,
            order,
            ancestors,
            instruments,
            leaf_iv_pairs: Vec::new(),
        })
    }

    pub fn is_root(&self, j: usize) -> bool {
        self.ancestors[j].is_empty()
    }

    /// Longest ancestral chain above each node.
    pub fn depths(&self) -> Vec<usize> {
        depths(&self.ancestors)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let order: Vec<usize> = self.order.iter().map(|k| k + 1).collect();
        let ancestral: Vec<[usize; 2]> = self.ancestral.iter().map(|&(k, j)| [k + 1, j + 1]).collect();
        let instruments: BTreeMap<String, Vec<usize>> = self
            .instruments
            .iter()
            .enumerate()
            .map(|(j, s)| ((j + 1).to_string(), s.iter().map(|l| l + 1).collect()))
            .collect();
        json!({"order": order, "ancestral": ancestral, "instruments": instruments})
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let bad = || GampiError::invalid("malformed super-graph JSON");
        let p = value["order"].as_array().ok_or_else(bad)?.len();
        let index = |v: &serde_json::Value| -> Result<usize> {
            match v.as_u64() {
                Some(i) if i >= 1 => Ok(i as usize - 1),
                _ => Err(bad()),
            }
        };
        let mut pairs = Vec::new();
        for pair in value["ancestral"].as_array().ok_or_else(bad)? {
            let pair = pair.as_array().filter(|a| a.len() == 2).ok_or_else(bad)?;
            pairs.push((index(&pair[0])?, index(&pair[1])?));
        }
        let mut instruments = vec![Vec::new(); p];
        for (node, ivs) in value["instruments"].as_object().ok_or_else(bad)? {
            let j = node.parse::<usize>().ok().filter(|&j| j >= 1 && j <= p).ok_or_else(bad)? - 1;
            for iv in ivs.as_array().ok_or_else(bad)? {
                instruments[j].push(index(iv)?);
            }
        }
        Self::from_parts(p, &pairs, instruments)
    }
}

fn depths(ancestors: &[Vec<usize>]) -> Vec<usize> {
    // Ancestor sets are closed, so a node's depth is one more than the
    // deepest of its ancestors; processing by ancestor count is a valid
    // topological order.
    let p = ancestors.len();
    let mut by_count: Vec<usize> = (0..p).collect();
    by_count.sort_by_key(|&j| ancestors[j].len());
    let mut depth = vec![0; p];
    for &j in &by_count {
        depth[j] = ancestors[j].iter().map(|&k| depth[k] + 1).max().unwrap_or(0);
    }
    depth
}

fn depth_order(p: usize, ancestors: &[Vec<usize>]) -> Vec<usize> {
    let depth = depths(ancestors);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by_key(|&j| (depth[j], j));
    order
}

/// Smallest transitively closed superset of `pairs` on nodes `0..p`, sorted.
pub fn transitive_closure(p: usize, pairs: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut reach = vec![vec![false; p]; p];
    for &(k, j) in pairs {
        reach[k][j] = true;
    }
    for m in 0..p {
        for a in 0..p {
            if reach[a][m] {
                for b in 0..p {
                    if reach[m][b] {
                        reach[a][b] = true;
                    }
                }
            }
        }
    }
    if let Some(node) = (0..p).find(|&a| reach[a][a]) {
        return Err(GampiError::CyclicAncestry { node });
    }
    Ok((0..p)
        .flat_map(|a| (0..p).map(move |b| (a, b)))
        .filter(|&(a, b)| reach[a][b])
        .collect())
}

/// Peels `v` (q×p, instruments by primaries). Entries count as present when
/// they are exactly nonzero.
pub fn peel(v: &DMatrix<f64>) -> Result<SuperGraph> {
    let (q, p) = v.shape();
    if p == 0 {
        return Err(GampiError::invalid("fidelity matrix has no columns"));
    }
    if let Some(j) = (0..p).find(|&j| v.column(j).iter().all(|x| *x == 0.0)) {
        return Err(GampiError::invalid(format!("column {} of V has no nonzero entry", j + 1)));
    }
    let mut row_alive = vec![true; q];
    let mut col_alive = vec![true; p];
    let mut removed_cols: Vec<usize> = Vec::new();
    let mut pairs = Vec::new();
    let mut instruments = vec![Vec::new(); p];
    let mut steps = Vec::new();

    while col_alive.iter().any(|&a| a) {
        let norm = |l: usize| (0..p).filter(|&k| col_alive[k] && v[(l, k)] != 0.0).count();
        let norms: Vec<(usize, usize)> = (0..q)
            .filter(|&l| row_alive[l])
            .map(|l| (l, norm(l)))
            .filter(|&(_, c)| c > 0)
            .collect();
        let Some(min) = norms.iter().map(|&(_, c)| c).min() else {
            return Err(GampiError::PeelStalled {
                columns: (0..p).filter(|&k| col_alive[k]).collect(),
                rows: (0..q).filter(|&l| row_alive[l]).collect(),
            });
        };
        let leaf_rows: Vec<usize> = norms.iter().filter(|&&(_, c)| c == min).map(|&(l, _)| l).collect();
        let mut step = Vec::new();
        let mut claimed = Vec::new();
        for &l in &leaf_rows {
            let mut best = None;
            for k in (0..p).filter(|&k| col_alive[k]) {
                let a = v[(l, k)].abs();
                if best.is_none_or(|(_, b)| a > b) {
                    best = Some((k, a));
                }
            }
            let (node, _) = best.expect("row has a nonzero live entry");
            step.push(LeafIvPair { iv: l, node });
            instruments[node].push(l);
            for &j in &removed_cols {
                if v[(l, j)] != 0.0 {
                    pairs.push((node, j));
                }
            }
            if !claimed.contains(&node) {
                claimed.push(node);
            }
        }
        for &l in &leaf_rows {
            row_alive[l] = false;
        }
        for &k in &claimed {
            col_alive[k] = false;
        }
        claimed.sort_unstable();
        removed_cols.extend(claimed);
        steps.push(step);
    }

    let mut sg = SuperGraph::from_parts(p, &pairs, instruments)?;
    sg.leaf_iv_pairs = steps;
    Ok(sg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_chain() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
        let sg = peel(&v).unwrap();
        assert_eq!(sg.leaf_iv_pairs[0], vec![LeafIvPair { iv: 1, node: 1 }]);
        assert_eq!(sg.leaf_iv_pairs[1], vec![LeafIvPair { iv: 0, node: 0 }]);
        assert_eq!(sg.ancestral, vec![(0, 1)]);
        assert_eq!(sg.order, vec![0, 1]);
    }

    #[test]
    fn diagonal_is_all_leaves() {
        let v = DMatrix::from_diagonal_element(3, 3, 1.5);
        let sg = peel(&v).unwrap();
        assert_eq!(sg.leaf_iv_pairs.len(), 1);
        assert!(sg.ancestral.is_empty());
        assert_eq!(sg.instruments, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn duplicate_claims_merge_instruments() {
        let v = DMatrix::from_row_slice(2, 1, &[1.0, -2.0]);
        let sg = peel(&v).unwrap();
        assert_eq!(sg.instruments, vec![vec![0, 1]]);
    }

    #[test]
    fn closure_examples() {
        assert_eq!(transitive_closure(3, &[(0, 1), (1, 2)]).unwrap(), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(transitive_closure(3, &[]).unwrap().is_empty());
        assert_eq!(
            transitive_closure(3, &[(0, 1), (1, 2), (2, 0)]),
            Err(GampiError::CyclicAncestry { node: 0 })
        );
    }

    #[test]
    fn stall_reports_stuck_block() {
        // Both rows tie towards column 0, leaving column 1 without rows.
        let v = DMatrix::from_element(2, 2, 1.0);
        let err = peel(&v).unwrap_err();
        assert!(matches!(err, GampiError::PeelStalled { ref columns, .. } if columns == &vec![1]));
    }

    #[test]
    fn json_round_trip() {
        let sg = SuperGraph::from_parts(3, &[(0, 2)], vec![vec![0], vec![1], vec![2]]).unwrap();
        let back = SuperGraph::from_json(&sg.to_json()).unwrap();
        assert_eq!(back, sg);
        assert_eq!(sg.to_json()["order"], json!([1, 2, 3]));
    }
}
