//! Zero-dimensional persistent homology of the sublevel-set filtration of a
//! 1-D signal.
//!
//! Samples are swept in increasing value order (ties by lower index). A
//! sample with no already-swept neighbour births a component; a sample that
//! joins two components kills the younger one (higher birth value, then
//! higher birth index) at its own value. The component that survives the
//! sweep is paired with the global maximum. Zero-length pairs are dropped.

use serde::{Deserialize, Serialize};

use super::{FeatureError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePair {
    pub birth: f64,
    pub death: f64,
    /// The pair of the component that never merges.
    pub essential: bool,
}

impl PersistencePair {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }
}

struct UnionFind {
    parent: Vec<usize>,
    /// Sample index at which each root's component was born.
    birth_idx: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            birth_idx: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        let mut root = i;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[i] != root {
            let next = self.parent[i];
            self.parent[i] = root;
            i = next;
        }
        root
    }
}

/// Returns finite pairs in the order their deaths occur, then the essential
/// pair.
pub fn sublevel_persistence(values: &[f64]) -> Result<Vec<PersistencePair>> {
    if values.is_empty() {
        return Err(FeatureError::InvalidInput("persistence of an empty series".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::InvalidInput(
            "persistence input contains non-finite values".into(),
        ));
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    // Rank of (value, index) decides which component is elder.
    let elder = |a: usize, b: usize| (values[a], a) <= (values[b], b);

    let mut uf = UnionFind::new(n);
    let mut swept = vec![false; n];
    let mut pairs = Vec::new();
    for &i in &order {
        swept[i] = true;
        let neighbours = [i.checked_sub(1), (i + 1 < n).then_some(i + 1)];
        for j in neighbours.into_iter().flatten().filter(|&j| swept[j]) {
            let (ri, rj) = (uf.find(i), uf.find(j));
            if ri == rj {
                continue;
            }
            let (bi, bj) = (uf.birth_idx[ri], uf.birth_idx[rj]);
            let (keep, die) = if elder(bi, bj) { (ri, rj) } else { (rj, ri) };
            // Joining a fresh sample to an existing component yields a
            // zero-length pair, which is dropped here.
            let pair = PersistencePair {
                birth: values[uf.birth_idx[die]],
                death: values[i],
                essential: false,
            };
            if pair.persistence() > 0.0 {
                pairs.push(pair);
            }
            uf.parent[die] = keep;
        }
    }
    let global_min = values[order[0]];
    let global_max = values[order[n - 1]];
    pairs.push(PersistencePair {
        birth: global_min,
        death: global_max,
        essential: true,
    });
    Ok(pairs)
}
