//! Side-by-side comparison of every method on one model, policy-file I/O and
//! a flat text rendering of JSON reports.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::approx::{solve_virtual, STRUCTURE_TOL};
use crate::belief::{reachable_beliefs, Belief, DEFAULT_DEDUP_TOL, DEFAULT_MAX_NODES};
use crate::belief_dp::{solve_belief_dp, BeliefDpConfig, DEFAULT_ACCURACY, DEFAULT_MAX_MEMO, DEFAULT_QUANT_TOL};
use crate::bounds::{gap_report, verify_belief_gap, verify_full_info_gap, BoundCheck, GapReport};
use crate::constrained::{audit_policy, solve_constrained_dual, solve_constrained_primal};
use crate::error::{Error, Result};
use crate::fixtures::example_model;
use crate::full_info::solve_full_info;
use crate::lp::{solve_lp, LpStatus};
use crate::mdp::{mdp_to_superharmonic_lp, Policy};
use crate::model::{check_factorization, LsiModel};
use crate::sim::{
    default_horizon, simulate_paired, SimConfig, SimPolicy, SimResult, DEFAULT_BIAS, DEFAULT_EPISODES, DEFAULT_SEED,
};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_DEPTH: usize = 8;
/// Published-value differences above this are flagged.
pub const REFERENCE_FLAG: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub tol: f64,
    pub accuracy: f64,
    pub quant_tol: f64,
    pub max_memo: usize,
    pub depth: usize,
    pub episodes: usize,
    pub seed: u64,
    /// Monte Carlo horizon; `None` picks one with truncation bias below 1e-6.
    pub horizon: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tol: DEFAULT_TOL,
            accuracy: DEFAULT_ACCURACY,
            quant_tol: DEFAULT_QUANT_TOL,
            max_memo: DEFAULT_MAX_MEMO,
            depth: DEFAULT_DEPTH,
            episodes: DEFAULT_EPISODES,
            seed: DEFAULT_SEED,
            horizon: None,
        }
    }
}

impl Settings {
    pub fn dp_config(&self) -> BeliefDpConfig {
        BeliefDpConfig {
            accuracy: self.accuracy,
            quant_tol: self.quant_tol,
            max_memo: self.max_memo,
        }
    }

    pub fn sim_config(&self, model: &LsiModel) -> SimConfig {
        SimConfig {
            episodes: self.episodes,
            horizon: self.horizon.unwrap_or_else(|| default_horizon(model, DEFAULT_BIAS)),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub n_obs: usize,
    pub n_unobs: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub max_cost: f64,
    pub value_bound: f64,
    pub factorized: bool,
}

impl ModelSummary {
    pub fn of(model: &LsiModel) -> Self {
        ModelSummary {
            n_obs: model.n_obs(),
            n_unobs: model.n_unobs(),
            n_actions: model.n_actions(),
            discount: model.discount(),
            max_cost: model.max_cost(),
            value_bound: model.value_bound(),
            factorized: check_factorization(model, STRUCTURE_TOL).is_some(),
        }
    }
}

/// Monte Carlo estimate next to the exact value it should reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCheck {
    pub result: SimResult,
    /// Exact value being estimated.
    pub target: f64,
    /// Slack beyond `3 * std_error + truncation_bias_bound` allowed for the target.
    pub target_slack: f64,
    pub agrees: bool,
}

impl MonteCarloCheck {
    fn new(result: SimResult, target: f64, target_slack: f64) -> Self {
        let agrees = (result.mean - target).abs() <= 3.0 * result.std_error + result.truncation_bias_bound + target_slack;
        MonteCarloCheck {
            result,
            target,
            target_slack,
            agrees,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullInfoEntry {
    pub value_iteration: f64,
    pub primal_lp: f64,
    pub dual_lp: f64,
    pub per_obs_values: Vec<f64>,
    pub policy: Value,
    pub monte_carlo: MonteCarloCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualEntry {
    pub value_iteration: f64,
    pub primal_lp: f64,
    pub dual_lp: f64,
    pub values: Vec<f64>,
    pub policy: Value,
    /// Exact value of the policy on the true system.
    pub audit: f64,
    /// Optimum of the superharmonic-constraint LP under minimisation.
    pub superharmonic_lp: Option<f64>,
    pub monte_carlo: MonteCarloCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefDpEntry {
    pub weighted_value: f64,
    pub root_values: Vec<f64>,
    pub root_actions: Vec<usize>,
    pub horizon: usize,
    pub error_bound: f64,
    pub memo_entries: usize,
    pub belief_nodes: usize,
    pub graph_truncated: bool,
    /// Rollouts of the DP policy over its own horizon; `Err` text if a belief left the solved set.
    pub monte_carlo: std::result::Result<MonteCarloCheck, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedEntry {
    pub dual_objective: f64,
    pub occupation_total: f64,
    pub policy: Value,
    pub audit: f64,
    pub dual_matches_audit: bool,
    pub primal_status: LpStatus,
    pub primal_objective: f64,
    pub monte_carlo: MonteCarloCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremChecks {
    pub full_info_gap: std::result::Result<BoundCheck, String>,
    pub belief_gap: std::result::Result<BoundCheck, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValue {
    pub quantity: String,
    pub published: f64,
    pub computed: f64,
    pub difference: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub model: ModelSummary,
    pub settings: Settings,
    pub full_info: FullInfoEntry,
    pub virtual_belief: VirtualEntry,
    pub belief_dp: std::result::Result<BeliefDpEntry, String>,
    pub constrained: ConstrainedEntry,
    pub gaps: GapReport,
    pub theorem_checks: TheoremChecks,
    /// Present only for the two-by-two worked example.
    pub reference_values: Option<Vec<ReferenceValue>>,
    pub internally_consistent: bool,
    /// Wall-clock milliseconds per stage, only when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

/// Local policy as `{"x_o": action}` or `{"x_o": [probabilities]}`.
pub fn policy_to_json(policy: &Policy) -> Value {
    let mut map = serde_json::Map::new();
    match policy {
        Policy::Deterministic(t) => {
            for (s, a) in t.iter().enumerate() {
                map.insert(s.to_string(), json!(a));
            }
        }
        Policy::Randomized(t) => {
            for (s, row) in t.iter().enumerate() {
                map.insert(s.to_string(), json!(row));
            }
        }
    }
    Value::Object(map)
}

pub fn policy_from_json(value: &Value, n_states: usize, n_actions: usize) -> Result<Policy> {
    let map = value
        .as_object()
        .ok_or_else(|| Error::InvalidArgument("policy must be a JSON object keyed by state index".into()))?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n_states];
    let mut all_det = true;
    for (k, v) in map {
        let s: usize = k
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("policy key {k:?} is not a state index")))?;
        if s >= n_states {
            return Err(Error::InvalidArgument(format!("policy state {s} out of range (n = {n_states})")));
        }
        let row = if let Some(a) = v.as_u64() {
            let a = a as usize;
            if a >= n_actions {
                return Err(Error::InvalidArgument(format!("policy action {a} out of range at state {s}")));
            }
            let mut r = vec![0.0; n_actions];
            r[a] = 1.0;
            r
        } else {
            all_det = false;
            serde_json::from_value::<Vec<f64>>(v.clone())
                .map_err(|_| Error::InvalidArgument(format!("policy entry for state {s} is neither an action nor a distribution")))?
        };
        rows[s] = Some(row);
    }
    let rows: Vec<Vec<f64>> = rows
        .into_iter()
        .enumerate()
        .map(|(s, r)| r.ok_or_else(|| Error::InvalidArgument(format!("policy misses state {s}"))))
        .collect::<Result<_>>()?;
    let policy = if all_det {
        Policy::Deterministic(rows.iter().map(|r| r.iter().position(|&p| p == 1.0).unwrap_or(0)).collect())
    } else {
        Policy::Randomized(rows)
    };
    policy.validate(n_states, n_actions)?;
    Ok(policy)
}

fn is_worked_example(model: &LsiModel) -> bool {
    let ex = example_model();
    let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
    model.n_obs() == 2
        && model.n_unobs() == 2
        && model.n_actions() == 2
        && model.discount() == ex.discount()
        && close(model.flat_kernel(), ex.flat_kernel())
        && close(model.flat_cost(), ex.flat_cost())
        && close(model.alpha_obs(), ex.alpha_obs())
        && close(model.alpha_unobs(), ex.alpha_unobs())
}

fn reference(quantity: &str, published: f64, computed: f64) -> ReferenceValue {
    let difference = computed - published;
    ReferenceValue {
        quantity: quantity.into(),
        published,
        computed,
        difference,
        flagged: difference.abs() > REFERENCE_FLAG,
    }
}

struct Clock {
    enabled: bool,
    marks: BTreeMap<String, f64>,
    last: Instant,
}

impl Clock {
    fn lap(&mut self, what: &str) {
        if self.enabled {
            let now = Instant::now();
            self.marks.insert(what.into(), (now - self.last).as_secs_f64() * 1e3);
            self.last = now;
        }
    }
}

pub fn compare(model: &LsiModel, settings: &Settings, timings: bool) -> Result<CompareReport> {
    let mut clock = Clock {
        enabled: timings,
        marks: BTreeMap::new(),
        last: Instant::now(),
    };
    let sim = settings.sim_config(model);
    let tol = settings.tol;

    let full = solve_full_info(model, tol)?;
    let full_mc = simulate_paired(model, &SimPolicy::Joint(full.solution.policy.clone()), &sim)?.true_cost;
    let full_info = FullInfoEntry {
        value_iteration: full.solution.weighted_vi,
        primal_lp: full.solution.primal_lp,
        dual_lp: full.solution.dual_lp,
        per_obs_values: full.per_obs_values.clone(),
        policy: policy_to_json(&full.solution.policy),
        monte_carlo: MonteCarloCheck::new(full_mc, full.weighted_value, 0.0),
    };
    clock.lap("full_info");

    let b0 = Belief::initial(model);
    let virt = solve_virtual(model, &b0, tol)?;
    let virt_audit = audit_policy(model, &virt.policy)?;
    let virt_mc = simulate_paired(model, &SimPolicy::Local(virt.policy.clone()), &sim)?.true_cost;
    let virtual_mdp = crate::approx::build_virtual(model, &b0)?.mdp;
    let superharmonic = solve_lp(&mdp_to_superharmonic_lp(&virtual_mdp))?;
    let virtual_belief = VirtualEntry {
        value_iteration: virt.weighted_vi,
        primal_lp: virt.primal_lp,
        dual_lp: virt.dual_lp,
        values: virt.value.values.clone(),
        policy: policy_to_json(&virt.policy),
        audit: virt_audit,
        superharmonic_lp: superharmonic.is_optimal().then_some(superharmonic.objective_value),
        monte_carlo: MonteCarloCheck::new(virt_mc, virt_audit, 0.0),
    };
    clock.lap("virtual");

    let dp = solve_belief_dp(model, &settings.dp_config());
    let belief_dp = match &dp {
        Ok(r) => {
            let cfg = SimConfig {
                horizon: r.horizon.max(1),
                ..sim
            };
            let mc = simulate_paired(model, &SimPolicy::BeliefFeedback(r), &cfg)
                .map(|p| MonteCarloCheck::new(p.true_cost, r.weighted_value, r.error_bound - r.truncation_bound))
                .map_err(|e| e.to_string());
            Ok(BeliefDpEntry {
                weighted_value: r.weighted_value,
                root_values: r.root_values.clone(),
                root_actions: r.root_actions.clone(),
                horizon: r.horizon,
                error_bound: r.error_bound,
                memo_entries: r.memo_entries(),
                belief_nodes: r.graph.len(),
                graph_truncated: r.graph.truncated,
                monte_carlo: mc,
            })
        }
        Err(e) => Err(e.to_string()),
    };
    clock.lap("belief_dp");

    let cd = solve_constrained_dual(model)?;
    let cp = solve_constrained_primal(model)?;
    let cd_audit = audit_policy(model, &cd.policy)?;
    let cd_mc = simulate_paired(model, &SimPolicy::Local(cd.policy.clone()), &sim)?.true_cost;
    let constrained = ConstrainedEntry {
        dual_objective: cd.objective,
        occupation_total: cd.occupation.total(),
        policy: policy_to_json(&cd.policy),
        audit: cd_audit,
        dual_matches_audit: (cd.objective - cd_audit).abs() <= 1e-6,
        primal_status: cp.status,
        primal_objective: cp.objective,
        monte_carlo: MonteCarloCheck::new(cd_mc, cd_audit, 0.0),
    };
    clock.lap("constrained");

    let graph = reachable_beliefs(model, settings.depth, DEFAULT_DEDUP_TOL, DEFAULT_MAX_NODES);
    let gaps = gap_report(model, &graph);
    let theorem_checks = TheoremChecks {
        full_info_gap: verify_full_info_gap(model, tol).map_err(|e| e.to_string()),
        belief_gap: match &dp {
            Ok(r) => verify_belief_gap(model, tol, r, &r.graph).map_err(|e| e.to_string()),
            Err(e) => Err(e.to_string()),
        },
    };
    clock.lap("bounds");

    let reference_values = is_worked_example(model).then(|| {
        vec![
            reference("full-information optimum", 2.0524, full.weighted_value),
            reference("virtual-belief policy on the true system", 2.3714, virt_audit),
            reference("constrained LP optimum", 1.8706, cd.objective),
        ]
    });

    let mc_ok = full_info.monte_carlo.agrees
        && virtual_belief.monte_carlo.agrees
        && constrained.monte_carlo.agrees
        && match &belief_dp {
            Ok(e) => e.monte_carlo.as_ref().map_or(true, |m| m.agrees),
            Err(_) => true,
        };
    let internally_consistent = full.solution.max_disagreement() <= 1e-6
        && virt.max_disagreement() <= 1e-6
        && (virt_audit - virt.weighted_vi) >= -1e-6
        && (virt_audit - full.weighted_value) >= -1e-6
        && (cd_audit - full.weighted_value) >= -1e-6
        && constrained.dual_matches_audit
        && mc_ok;

    Ok(CompareReport {
        model: ModelSummary::of(model),
        settings: *settings,
        full_info,
        virtual_belief,
        belief_dp,
        constrained,
        gaps,
        theorem_checks,
        reference_values,
        internally_consistent,
        timings_ms: timings.then_some(clock.marks),
    })
}

/// One `path = value` line per JSON leaf.
pub fn render_table(value: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(map) => {
                for (k, x) in map {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, x, out);
                }
            }
            Value::Array(items) if items.iter().all(|x| !x.is_object() && !x.is_array()) => {
                let parts: Vec<String> = items.iter().map(|x| x.to_string()).collect();
                out.push((prefix.to_string(), format!("[{}]", parts.join(", "))));
            }
            Value::Array(items) => {
                for (i, x) in items.iter().enumerate() {
                    walk(&format!("{prefix}[{i}]"), x, out);
                }
            }
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", value, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::new();
    for (k, v) in rows {
        s.push_str(&format!("{k:<width$}  {v}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_json_round_trip() {
        let p = Policy::Deterministic(vec![1, 0, 1]);
        let v = policy_to_json(&p);
        assert_eq!(v, json!({"0": 1, "1": 0, "2": 1}));
        assert_eq!(policy_from_json(&v, 3, 2).unwrap(), p);
        let r = Policy::Randomized(vec![vec![0.25, 0.75], vec![1.0, 0.0]]);
        assert_eq!(policy_from_json(&policy_to_json(&r), 2, 2).unwrap(), r);
        assert!(policy_from_json(&json!({"0": 2}), 1, 2).is_err());
        assert!(policy_from_json(&json!({"0": 0}), 2, 2).is_err());
    }

    #[test]
    fn table_lists_leaves() {
        let t = render_table(&json!({"a": {"b": 1.5, "c": [1, 2]}, "d": [{"e": true}]}));
        assert_eq!(t, "a.b     1.5\na.c     [1, 2]\nd[0].e  true\n");
    }

    #[test]
    fn worked_example_compare() {
        let m = example_model();
        let settings = Settings {
            episodes: 2000,
            ..Settings::default()
        };
        let r = compare(&m, &settings, false).unwrap();
        assert!(r.internally_consistent, "{r:#?}");
        let refs = r.reference_values.unwrap();
        assert_eq!(refs.iter().map(|x| x.flagged).collect::<Vec<_>>(), vec![true, true, false]);
        assert!(r.timings_ms.is_none());
        assert!(r.theorem_checks.full_info_gap.unwrap().holds);
    }
}
