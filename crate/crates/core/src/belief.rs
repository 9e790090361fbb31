//! Beliefs over the unobservable substate.
//!
//! After observing `x_o -> x_o'` under action `a`, the belief moves to
//!
//! ```text
//! b'(x_u') = sum_{x_u} p(x_o', x_u' | x_o, x_u, a) b(x_u) / p(x_o' | x_o, b, a)
//! ```
//!
//! which is a deterministic map of `(x_o', x_o, b, a)`. The reachable set of
//! beliefs from `b_0` is enumerated breadth-first into a [`BeliefGraph`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_distribution, LsiModel};

/// Observation probabilities at or below this are treated as impossible.
pub const PROB_EPS: f64 = 1e-14;

pub const DEFAULT_DEDUP_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_NODES: usize = 100_000;

/// A probability vector over `X_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Dimension("belief must have at least one entry".into()));
        }
        check_distribution("belief", &probs, &[])?;
        Ok(Belief(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Belief(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, k: usize) -> Self {
        let mut p = vec![0.0; n];
        p[k] = 1.0;
        Belief(p)
    }

    /// The model's initial belief `b_0 = alpha_u`.
    pub fn initial(model: &LsiModel) -> Self {
        Belief(model.alpha_unobs().to_vec())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn linf_distance(&self, other: &Belief) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    }

    /// `b * P`, the row-vector product with a stochastic matrix.
    pub fn push_forward(&self, matrix: &[Vec<f64>]) -> Belief {
        let n = matrix.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (p, row) in self.0.iter().zip(matrix) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += p * m;
            }
        }
        Belief(out)
    }
}

fn check_dims(model: &LsiModel, b: &Belief) {
    assert_eq!(
        b.len(),
        model.n_unobs(),
        "belief length must equal the number of unobservable states"
    );
}

/// `p(x_o' | x_o, b, a)`: the chance of observing `x_o_next` next.
pub fn observation_prob(model: &LsiModel, b: &Belief, x_o: usize, a: usize, x_o_next: usize) -> f64 {
    check_dims(model, b);
    let nu = model.n_unobs();
    let mut total = 0.0;
    for (xu, &w) in b.probs().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = &model.kernel_row(a, x_o, xu)[x_o_next * nu..(x_o_next + 1) * nu];
        total += w * row.iter().sum::<f64>();
    }
    total
}

/// Bayes update of `b` after `x_o -> x_o_next` under `a`.
pub fn belief_update(
    model: &LsiModel,
    b: &Belief,
    x_o: usize,
    a: usize,
    x_o_next: usize,
) -> Result<Belief> {
    check_dims(model, b);
    let nu = model.n_unobs();
    let mut num = vec![0.0; nu];
    for (xu, &w) in b.probs().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = &model.kernel_row(a, x_o, xu)[x_o_next * nu..(x_o_next + 1) * nu];
        for (n, p) in num.iter_mut().zip(row) {
            *n += w * p;
        }
    }
    let den: f64 = num.iter().sum();
    if den <= PROB_EPS {
        return Err(Error::ZeroProbabilityObservation {
            x_o,
            action: a,
            x_o_next,
        });
    }
    num.iter_mut().for_each(|n| *n /= den);
    Ok(Belief(num))
}

/// `c_bar(x_o, b, a) = sum_{x_u} b(x_u) c(x_o, x_u, a)`.
pub fn expected_cost(model: &LsiModel, b: &Belief, x_o: usize, a: usize) -> f64 {
    check_dims(model, b);
    b.probs()
        .iter()
        .enumerate()
        .map(|(xu, w)| w * model.cost(a, x_o, xu))
        .sum()
}

/// One transition of the belief graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefEdge {
    pub node: usize,
    pub x_o: usize,
    pub action: usize,
    pub x_o_next: usize,
    pub successor: usize,
    pub prob: f64,
}

/// Reachable beliefs from `b_0` and the transitions between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefGraph {
    pub nodes: Vec<Belief>,
    /// Breadth-first depth at which each node was discovered.
    pub node_depth: Vec<usize>,
    /// Sorted by `(node, x_o, action, x_o_next)`.
    pub edges: Vec<BeliefEdge>,
    pub root: usize,
    pub depth_reached: usize,
    /// Set when some successor was left out because of the depth or node cap.
    pub truncated: bool,
}

impl BeliefGraph {
    pub fn edge(&self, node: usize, x_o: usize, action: usize, x_o_next: usize) -> Option<(usize, f64)> {
        let key = (node, x_o, action, x_o_next);
        self.edges
            .binary_search_by(|e| (e.node, e.x_o, e.action, e.x_o_next).cmp(&key))
            .ok()
            .map(|i| (self.edges[i].successor, self.edges[i].prob))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Finds an existing belief within an L-infinity tolerance, preferring the
/// earliest inserted match.
pub(crate) struct BeliefIndex {
    tol: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

/// Neighbour-cell search is exponential in the dimension; above this the
/// index falls back to a linear scan.
const MAX_GRID_DIM: usize = 8;

impl BeliefIndex {
    pub(crate) fn new(tol: f64) -> Self {
        BeliefIndex {
            tol,
            buckets: HashMap::new(),
        }
    }

    fn cell(&self, b: &Belief) -> Vec<i64> {
        if self.tol == 0.0 {
            // exact match; fold -0.0 into 0.0
            b.probs().iter().map(|p| (p + 0.0).to_bits() as i64).collect()
        } else {
            b.probs().iter().map(|p| (p / self.tol).floor() as i64).collect()
        }
    }

    pub(crate) fn find(&self, b: &Belief, nodes: &[Belief]) -> Option<usize> {
        let matches = |i: &usize| nodes[*i].linf_distance(b) <= self.tol;
        if self.tol == 0.0 {
            return self.buckets.get(&self.cell(b))?.iter().copied().find(matches);
        }
        if b.len() > MAX_GRID_DIM {
            return (0..nodes.len()).find(matches);
        }
        let center = self.cell(b);
        let mut best: Option<usize> = None;
        let mut offset = vec![-1i64; center.len()];
        loop {
            let key: Vec<i64> = center.iter().zip(&offset).map(|(c, o)| c + o).collect();
            if let Some(list) = self.buckets.get(&key) {
                if let Some(i) = list.iter().copied().find(matches) {
                    best = Some(best.map_or(i, |j| j.min(i)));
                }
            }
            // odometer over {-1, 0, 1}^n
            let mut k = 0;
            while k < offset.len() {
                offset[k] += 1;
                if offset[k] <= 1 {
                    break;
                }
                offset[k] = -1;
                k += 1;
            }
            if k == offset.len() {
                break;
            }
        }
        best
    }

    pub(crate) fn insert(&mut self, b: &Belief, index: usize) {
        if self.tol > 0.0 && b.len() > MAX_GRID_DIM {
            return;
        }
        self.buckets.entry(self.cell(b)).or_default().push(index);
    }
}

/// Breadth-first enumeration of beliefs reachable from `b_0`.
///
/// Successors come from every `(x_o, a, x_o')` with positive observation
/// probability. A successor within `dedup_tol` (L-infinity) of an existing
/// node is merged into the first such node. Nodes at `max_depth` are probed
/// but not expanded: if any of their successors is new the graph is marked
/// truncated, as it is when the `max_nodes` cap stops an insertion.
pub fn reachable_beliefs(
    model: &LsiModel,
    max_depth: usize,
    dedup_tol: f64,
    max_nodes: usize,
) -> BeliefGraph {
    assert!(dedup_tol >= 0.0, "dedup_tol must be nonnegative");
    assert!(max_nodes >= 1, "max_nodes must be at least 1");
    let (no, na) = (model.n_obs(), model.n_actions());
    let mut nodes = vec![Belief::initial(model)];
    let mut node_depth = vec![0];
    let mut index = BeliefIndex::new(dedup_tol);
    index.insert(&nodes[0], 0);
    let mut edges = Vec::new();
    let mut truncated = false;
    let mut frontier = vec![0usize];

    for depth in 0..=max_depth {
        let mut next = Vec::new();
        for &node in &frontier {
            for x_o in 0..no {
                for a in 0..na {
                    for x_o_next in 0..no {
                        let b = &nodes[node];
                        let prob = observation_prob(model, b, x_o, a, x_o_next);
                        if prob <= PROB_EPS {
                            continue;
                        }
                        let succ = belief_update(model, b, x_o, a, x_o_next)
                            .expect("positive observation probability");
                        let target = match index.find(&succ, &nodes) {
                            Some(j) => j,
                            None if depth == max_depth || nodes.len() >= max_nodes => {
                                truncated = true;
                                continue;
                            }
                            None => {
                                let j = nodes.len();
                                index.insert(&succ, j);
                                nodes.push(succ);
                                node_depth.push(depth + 1);
                                next.push(j);
                                j
                            }
                        };
                        edges.push(BeliefEdge {
                            node,
                            x_o,
                            action: a,
                            x_o_next,
                            successor: target,
                            prob,
                        });
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    let depth_reached = node_depth.iter().copied().max().unwrap_or(0);
    BeliefGraph {
        nodes,
        node_depth,
        edges,
        root: 0,
        depth_reached,
        truncated,
    }
}
