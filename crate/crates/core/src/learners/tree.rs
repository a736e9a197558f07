//! Exact-greedy regression trees grown level by level.
//!
//! Each feature is sorted once per fit. At every level a single pass over
//! each sorted feature evaluates all candidate thresholds of every open node
//! at once, so a level costs `O(features x rows)` regardless of node count.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf(value)],
        }
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if x[(row, feature)] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

/// Row indices of every column, sorted by value (ties by row index).
#[derive(Clone, Debug)]
pub struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let order = (0..x.ncols())
            .map(|f| {
                let col = column(x, f);
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        Presorted { order }
    }
}

fn column(x: &DMatrix<f64>, f: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[f * n..(f + 1) * n]
}

#[derive(Clone, Copy, Debug)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn per node; `None` uses all of them.
    pub max_features: Option<usize>,
}

const CLOSED: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree on `target` using integer row `weights` (bootstrap counts;
/// zero excludes a row). Splits maximize weighted variance reduction; ties go
/// to the lowest feature index, then the lowest threshold.
pub fn grow<R: Rng>(
    x: &DMatrix<f64>,
    presorted: &Presorted,
    target: &[f64],
    weights: &[u32],
    params: TreeParams,
    rng: &mut R,
) -> RegressionTree {
    let n = x.nrows();
    let p = x.ncols();
    let min_leaf = params.min_leaf.max(1) as f64;

    let mut nodes: Vec<Node> = Vec::new();
    // slot -> tree node index for the open nodes of the current level
    let mut open: Vec<usize> = Vec::new();
    let mut slot_of = vec![CLOSED; n];
    let (mut s0, mut c0, mut q0) = (0.0, 0.0, 0.0);
    for r in 0..n {
        if weights[r] > 0 {
            let w = f64::from(weights[r]);
            slot_of[r] = 0;
            s0 += w * target[r];
            q0 += w * target[r] * target[r];
            c0 += w;
        }
    }
    if c0 == 0.0 {
        return RegressionTree::constant(0.0);
    }
    nodes.push(Node::Leaf(s0 / c0));
    open.push(0);
    let mut sums = vec![s0];
    let mut counts = vec![c0];
    let mut sq = vec![q0];

    for _depth in 0..params.max_depth {
        let m = open.len();
        if m == 0 {
            break;
        }
        let splittable: Vec<bool> = (0..m).map(|k| counts[k] >= 2.0 * min_leaf).collect();
        // per-node feature subsets
        let uses: Option<Vec<Vec<bool>>> = params.max_features.filter(|&mf| mf < p).map(|mf| {
            (0..m)
                .map(|_| {
                    let mut mask = vec![false; p];
                    for f in sample(rng, p, mf).into_iter() {
                        mask[f] = true;
                    }
                    mask
                })
                .collect()
        });
        let mut best: Vec<Option<Best>> = vec![None; m];
        let mut sum_left = vec![0.0; m];
        let mut cnt_left = vec![0.0; m];
        let mut last = vec![f64::NAN; m];
        for f in 0..p {
            if let Some(u) = &uses {
                if !(0..m).any(|k| u[k][f] && splittable[k]) {
                    continue;
                }
            }
            sum_left.iter_mut().for_each(|v| *v = 0.0);
            cnt_left.iter_mut().for_each(|v| *v = 0.0);
            let col = column(x, f);
            for &r in &presorted.order[f] {
                let r = r as usize;
                let k = slot_of[r];
                if k == CLOSED {
                    continue;
                }
                let k = k as usize;
                if !splittable[k] || uses.as_ref().is_some_and(|u| !u[k][f]) {
                    continue;
                }
                let v = col[r];
                let cl = cnt_left[k];
                if cl >= min_leaf && v > last[k] {
                    let cr = counts[k] - cl;
                    if cr >= min_leaf {
                        let sl = sum_left[k];
                        let sr = sums[k] - sl;
                        let gain = sl * sl / cl + sr * sr / cr - sums[k] * sums[k] / counts[k];
                        if best[k].is_none_or(|b| gain > b.gain) {
                            best[k] = Some(Best {
                                gain,
                                feature: f,
                                threshold: 0.5 * (last[k] + v),
                            });
                        }
                    }
                }
                let w = f64::from(weights[r]);
                sum_left[k] += w * target[r];
                cnt_left[k] += w;
                last[k] = v;
            }
        }

        // materialize splits and route rows to the next level
        let mut next_open = Vec::new();
        let mut child_slot = vec![(CLOSED, CLOSED); m];
        let mut next_sums = Vec::new();
        let mut next_counts = Vec::new();
        let mut next_sq = Vec::new();
        for k in 0..m {
            let Some(b) = best[k] else { continue };
            // within-node sum of squares bounds the attainable gain
            let sse = sq[k] - sums[k] * sums[k] / counts[k];
            if sse <= 1e-12 * sq[k] || b.gain <= 1e-12 * sse {
                continue;
            }
            let left = nodes.len();
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            nodes[open[k]] = Node::Split {
                feature: b.feature,
                threshold: b.threshold,
                left,
                right: left + 1,
            };
            child_slot[k] = (next_open.len() as u32, next_open.len() as u32 + 1);
            next_open.push(left);
            next_open.push(left + 1);
            next_sums.extend([0.0, 0.0]);
            next_counts.extend([0.0, 0.0]);
            next_sq.extend([0.0, 0.0]);
        }
        for r in 0..n {
            let k = slot_of[r];
            if k == CLOSED {
                continue;
            }
            let (l, rt) = child_slot[k as usize];
            if l == CLOSED {
                slot_of[r] = CLOSED;
                continue;
            }
            let Node::Split {
                feature, threshold, ..
            } = nodes[open[k as usize]]
            else {
                unreachable!()
            };
            let s = if x[(r, feature)] <= threshold { l } else { rt };
            slot_of[r] = s;
            let w = f64::from(weights[r]);
            next_sums[s as usize] += w * target[r];
            next_counts[s as usize] += w;
            next_sq[s as usize] += w * target[r] * target[r];
        }
        for (s, &node) in next_open.iter().enumerate() {
            nodes[node] = Node::Leaf(next_sums[s] / next_counts[s]);
        }
        open = next_open;
        sums = next_sums;
        counts = next_counts;
        sq = next_sq;
    }
    RegressionTree { nodes }
}
