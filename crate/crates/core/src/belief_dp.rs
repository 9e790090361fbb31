//! Dynamic programming on the belief-augmented state `(x_o, b)`.
//!
//! The reachable belief set can be infinite, so the infinite-horizon
//! equation is replaced by the depth-`H` recursion
//!
//! ```text
//! u_H = 0
//! u_k(x_o, b) = min_a { c_bar(x_o, b, a)
//!                       + beta sum_{x_o'} p(x_o'|x_o,b,a) u_{k+1}(x_o', T(x_o', x_o, b, a)) }
//! ```
//!
//! with `H` the smallest horizon whose tail `beta^H c_max / (1 - beta)` is
//! within the requested accuracy. Memo keys are `(x_o, k, b)` with `b`
//! rounded component-wise to multiples of `quant_tol`; the first belief to
//! reach a key is its representative.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::belief::{
    belief_update, expected_cost, observation_prob, Belief, BeliefEdge, BeliefGraph, PROB_EPS,
};
use crate::error::{Error, Result};
use crate::mdp::TIE_TOL;
use crate::model::LsiModel;

pub const DEFAULT_ACCURACY: f64 = 1e-4;
pub const DEFAULT_QUANT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_MEMO: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefDpConfig {
    pub accuracy: f64,
    pub quant_tol: f64,
    pub max_memo: usize,
}

impl Default for BeliefDpConfig {
    fn default() -> Self {
        BeliefDpConfig {
            accuracy: DEFAULT_ACCURACY,
            quant_tol: DEFAULT_QUANT_TOL,
            max_memo: DEFAULT_MAX_MEMO,
        }
    }
}

/// Smallest `H` with `beta^H c_max / (1 - beta) <= accuracy`, and that tail.
pub fn horizon_for(discount: f64, max_cost: f64, accuracy: f64) -> (usize, f64) {
    let mut bound = max_cost / (1.0 - discount);
    let mut h = 0;
    while bound > accuracy {
        h += 1;
        bound *= discount;
    }
    (h, bound)
}

/// Round-half-up quantization key; exact bit pattern when `quant_tol` is 0.
pub fn quantize(b: &Belief, quant_tol: f64) -> Vec<i64> {
    if quant_tol == 0.0 {
        b.probs().iter().map(|p| (p + 0.0).to_bits() as i64).collect()
    } else {
        b.probs()
            .iter()
            .map(|p| (p / quant_tol + 0.5).floor() as i64)
            .collect()
    }
}

/// A solved memo entry: greedy action and value at `(x_o, depth, belief)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub x_o: usize,
    pub depth: usize,
    pub belief: Belief,
    pub action: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeliefDpReport {
    /// `u(x_o, b_0)` for each `x_o`.
    pub root_values: Vec<f64>,
    /// `sum_{x_o} alpha_o(x_o) u(x_o, b_0)`.
    pub weighted_value: f64,
    pub root_actions: Vec<usize>,
    pub horizon: usize,
    /// `beta^H c_max / (1 - beta)`.
    pub truncation_bound: f64,
    pub accuracy: f64,
    pub quant_tol: f64,
    /// Per-step value error budget for one quantization step,
    /// `c_max (1 + beta) / (1 - beta)`.
    pub lipschitz_budget: f64,
    /// `truncation_bound + H * lipschitz_budget * quant_tol`.
    pub error_bound: f64,
    pub n_unobs: usize,
    /// Beliefs visited at depths below `H` and the transitions between them.
    pub graph: BeliefGraph,
    /// Every memo entry in the order it was first visited.
    pub policy: Vec<PolicyEntry>,
    #[serde(skip)]
    lookup: OnceLock<HashMap<(usize, Vec<i64>), usize>>,
    #[serde(skip)]
    lookup_at: OnceLock<HashMap<(usize, usize, Vec<i64>), usize>>,
}

impl BeliefDpReport {
    pub fn memo_entries(&self) -> usize {
        self.policy.len()
    }

    /// `(x_o, key)` to the shallowest entry carrying that key.
    fn lookup(&self) -> &HashMap<(usize, Vec<i64>), usize> {
        self.lookup.get_or_init(|| {
            let mut map: HashMap<(usize, Vec<i64>), usize> = HashMap::new();
            for (i, e) in self.policy.iter().enumerate() {
                let slot = map.entry((e.x_o, quantize(&e.belief, self.quant_tol))).or_insert(i);
                if self.policy[*slot].depth > e.depth {
                    *slot = i;
                }
            }
            map
        })
    }

    fn lookup_at(&self) -> &HashMap<(usize, usize, Vec<i64>), usize> {
        self.lookup_at.get_or_init(|| {
            self.policy
                .iter()
                .enumerate()
                .map(|(i, e)| ((e.x_o, e.depth, quantize(&e.belief, self.quant_tol)), i))
                .collect()
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

struct MemoEntry {
    value: f64,
}

struct Solver<'a> {
    model: &'a LsiModel,
    horizon: usize,
    quant_tol: f64,
    cap: usize,
    memo: HashMap<(usize, usize, Vec<i64>), MemoEntry>,
    entries: Vec<PolicyEntry>,
    node_of_key: HashMap<Vec<i64>, usize>,
    nodes: Vec<Belief>,
    node_depth: Vec<usize>,
}

impl Solver<'_> {
    fn value(&mut self, x_o: usize, depth: usize, b: &Belief) -> Result<f64> {
        if depth == self.horizon {
            return Ok(0.0);
        }
        let key = quantize(b, self.quant_tol);
        let memo_key = (x_o, depth, key);
        if let Some(e) = self.memo.get(&memo_key) {
            return Ok(e.value);
        }
        if self.memo.len() >= self.cap {
            return Err(Error::BudgetExceeded {
                cap: self.cap,
                horizon: self.horizon,
                memo_entries: self.memo.len(),
            });
        }
        if !self.node_of_key.contains_key(&memo_key.2) {
            self.node_of_key.insert(memo_key.2.clone(), self.nodes.len());
            self.nodes.push(b.clone());
            self.node_depth.push(depth);
        }
        let model = self.model;
        let beta = model.discount();
        let mut best = (0usize, f64::INFINITY);
        for a in 0..model.n_actions() {
            let mut q = expected_cost(model, b, x_o, a);
            for x_o2 in 0..model.n_obs() {
                let p = observation_prob(model, b, x_o, a, x_o2);
                if p <= PROB_EPS {
                    continue;
                }
                let next = belief_update(model, b, x_o, a, x_o2)?;
                q += beta * p * self.value(x_o2, depth + 1, &next)?;
            }
            if q < best.1 - TIE_TOL {
                best = (a, q);
            }
        }
        self.memo.insert(memo_key, MemoEntry { value: best.1 });
        self.entries.push(PolicyEntry {
            x_o,
            depth,
            belief: b.clone(),
            action: best.0,
            value: best.1,
        });
        Ok(best.1)
    }

    fn graph(&self) -> BeliefGraph {
        let model = self.model;
        let mut edges = Vec::new();
        let mut truncated = false;
        for (node, b) in self.nodes.iter().enumerate() {
            for x_o in 0..model.n_obs() {
                for a in 0..model.n_actions() {
                    for x_o_next in 0..model.n_obs() {
                        let prob = observation_prob(model, b, x_o, a, x_o_next);
                        if prob <= PROB_EPS {
                            continue;
                        }
                        let next = belief_update(model, b, x_o, a, x_o_next)
                            .expect("positive observation probability");
                        match self.node_of_key.get(&quantize(&next, self.quant_tol)) {
                            Some(&successor) => edges.push(BeliefEdge {
                                node,
                                x_o,
                                action: a,
                                x_o_next,
                                successor,
                                prob,
                            }),
                            None => truncated = true,
                        }
                    }
                }
            }
        }
        BeliefGraph {
            nodes: self.nodes.clone(),
            node_depth: self.node_depth.clone(),
            edges,
            root: 0,
            depth_reached: self.node_depth.iter().copied().max().unwrap_or(0),
            truncated,
        }
    }
}

/// Solves the depth-truncated belief DP from `(x_o, b_0)` for every `x_o`.
pub fn solve_belief_dp(model: &LsiModel, config: &BeliefDpConfig) -> Result<BeliefDpReport> {
    if !(config.accuracy > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "accuracy must be positive, got {}",
            config.accuracy
        )));
    }
    if !(config.quant_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "quant_tol must be nonnegative, got {}",
            config.quant_tol
        )));
    }
    let beta = model.discount();
    let c_max = model.max_cost();
    let (horizon, truncation_bound) = horizon_for(beta, c_max, config.accuracy);
    let mut solver = Solver {
        model,
        horizon,
        quant_tol: config.quant_tol,
        cap: config.max_memo,
        memo: HashMap::new(),
        entries: Vec::new(),
        node_of_key: HashMap::new(),
        nodes: Vec::new(),
        node_depth: Vec::new(),
    };
    let b0 = Belief::initial(model);
    let mut root_values = Vec::with_capacity(model.n_obs());
    for x_o in 0..model.n_obs() {
        root_values.push(solver.value(x_o, 0, &b0)?);
    }
    let key0 = quantize(&b0, config.quant_tol);
    let root_actions = (0..model.n_obs())
        .map(|x_o| {
            if horizon == 0 {
                return 0;
            }
            solver
                .entries
                .iter()
                .find(|e| e.x_o == x_o && e.depth == 0 && quantize(&e.belief, config.quant_tol) == key0)
                .map_or(0, |e| e.action)
        })
        .collect();
    let weighted_value = root_values
        .iter()
        .zip(model.alpha_obs())
        .map(|(u, w)| u * w)
        .sum();
    let lipschitz_budget = c_max * (1.0 + beta) / (1.0 - beta);
    let graph = solver.graph();
    Ok(BeliefDpReport {
        root_values,
        weighted_value,
        root_actions,
        horizon,
        truncation_bound,
        accuracy: config.accuracy,
        quant_tol: config.quant_tol,
        lipschitz_budget,
        error_bound: truncation_bound + horizon as f64 * lipschitz_budget * config.quant_tol,
        n_unobs: model.n_unobs(),
        graph,
        policy: solver.entries,
        lookup: OnceLock::new(),
        lookup_at: OnceLock::new(),
    })
}

/// Greedy action stored for the solved belief nearest to `b` at `x_o`.
///
/// Exact key matches are preferred and among entries sharing a key the
/// shallowest one wins. Otherwise the nearest entry in L-infinity is used if
/// it lies within `quant_tol * |X_u|`.
pub fn belief_policy_action(report: &BeliefDpReport, x_o: usize, b: &Belief) -> Result<usize> {
    if let Some(&i) = report.lookup().get(&(x_o, quantize(b, report.quant_tol))) {
        return Ok(report.policy[i].action);
    }
    let radius = report.quant_tol * report.n_unobs as f64;
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, e) in report.policy.iter().enumerate().filter(|(_, e)| e.x_o == x_o) {
        let d = e.belief.linf_distance(b);
        let better = match best {
            None => true,
            Some((bd, bdepth, _)) => d < bd || d == bd && e.depth < bdepth,
        };
        if better {
            best = Some((d, e.depth, i));
        }
    }
    match best {
        Some((d, _, i)) if d <= radius => Ok(report.policy[i].action),
        other => Err(Error::KeyNotCovered {
            x_o,
            distance: other.map_or(f64::INFINITY, |(d, _, _)| d),
            radius,
            episode: None,
        }),
    }
}

/// Action the DP chose at `(x_o, depth, b)`, falling back to
/// [`belief_policy_action`] when that exact memo key was never solved.
pub fn belief_policy_action_at(report: &BeliefDpReport, x_o: usize, depth: usize, b: &Belief) -> Result<usize> {
    match report.lookup_at().get(&(x_o, depth, quantize(b, report.quant_tol))) {
        Some(&i) => Ok(report.policy[i].action),
        None => belief_policy_action(report, x_o, b),
    }
}

/// Optimal value of the belief-only control problem by brute force over all
/// action sequences of length `horizon`, for models with a single observable
/// state.
pub fn exhaustive_sequence_value(model: &LsiModel, horizon: usize) -> f64 {
    assert_eq!(model.n_obs(), 1, "sequence search needs |X_o| = 1");
    fn go(model: &LsiModel, b: &Belief, depth: usize, horizon: usize) -> f64 {
        if depth == horizon {
            return 0.0;
        }
        (0..model.n_actions())
            .map(|a| {
                let next = belief_update(model, b, 0, a, 0).expect("single observation is certain");
                expected_cost(model, b, 0, a) + model.discount() * go(model, &next, depth + 1, horizon)
            })
            .fold(f64::INFINITY, f64::min)
    }
    go(model, &Belief::initial(model), 0, horizon)
}

/// Set of beliefs that appear in the report's memo.
pub fn visited_beliefs(report: &BeliefDpReport) -> HashSet<Vec<i64>> {
    report
        .policy
        .iter()
        .map(|e| quantize(&e.belief, report.quant_tol))
        .collect()
}
