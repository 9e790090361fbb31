//! Finite discounted-cost MDPs: Bellman operator, value iteration, exact
//! policy evaluation and the two LP formulations.
//!
//! Both the virtual-belief system over `X_o` and the full-information system
//! over `X_o x X_u` are instances of [`FiniteMdp`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, Direction, LpProblem, LpSolution, LpStatus, Sense};
use crate::model::check_distribution;

/// Q-values closer than this to the running minimum count as ties.
pub const TIE_TOL: f64 = 1e-12;

/// Tolerance for the VI / primal LP / dual LP cross-check.
pub const AGREEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// `[a][s][s']`
    kernel: Vec<f64>,
    /// `[a][s]`
    cost: Vec<f64>,
    discount: f64,
    alpha: Vec<f64>,
}

impl FiniteMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        cost: Vec<f64>,
        discount: f64,
        alpha: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Dimension("MDP needs at least one state and action".into()));
        }
        if kernel.len() != n_actions * n_states * n_states
            || cost.len() != n_actions * n_states
            || alpha.len() != n_states
        {
            return Err(Error::Dimension(format!(
                "MDP arrays do not match {n_states} states x {n_actions} actions"
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidDiscount(discount));
        }
        let mdp = FiniteMdp {
            n_states,
            n_actions,
            kernel,
            cost,
            discount,
            alpha,
        };
        for a in 0..n_actions {
            for s in 0..n_states {
                check_distribution("mdp kernel", mdp.row(a, s), &[a, s])?;
                let c = mdp.cost(a, s);
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::InvalidCost {
                        index: vec![a, s],
                        value: c,
                    });
                }
            }
        }
        check_distribution("mdp alpha", &mdp.alpha, &[])?;
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    #[inline]
    pub fn row(&self, a: usize, s: usize) -> &[f64] {
        let start = (a * self.n_states + s) * self.n_states;
        &self.kernel[start..start + self.n_states]
    }

    #[inline]
    pub fn cost(&self, a: usize, s: usize) -> f64 {
        self.cost[a * self.n_states + s]
    }

    pub fn max_cost(&self) -> f64 {
        self.cost.iter().copied().fold(0.0, f64::max)
    }

    /// `cost(a, s) + beta * sum_{s'} P(s'|s,a) v(s')`
    #[inline]
    pub fn q_value(&self, v: &ValueFunction, s: usize, a: usize) -> f64 {
        let ev: f64 = self.row(a, s).iter().zip(&v.values).map(|(p, x)| p * x).sum();
        self.cost(a, s) + self.discount * ev
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(n: usize) -> Self {
        ValueFunction { values: vec![0.0; n] }
    }

    /// `sum_s weights(s) v(s)`
    pub fn weighted(&self, weights: &[f64]) -> f64 {
        self.values.iter().zip(weights).map(|(v, w)| v * w).sum()
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A stationary policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "table")]
pub enum Policy {
    Deterministic(Vec<usize>),
    Randomized(Vec<Vec<f64>>),
}

impl Policy {
    pub fn constant(n_states: usize, action: usize) -> Self {
        Policy::Deterministic(vec![action; n_states])
    }

    pub fn n_states(&self) -> usize {
        match self {
            Policy::Deterministic(t) => t.len(),
            Policy::Randomized(t) => t.len(),
        }
    }

    /// Action distribution at `s`.
    pub fn action_probs(&self, s: usize, n_actions: usize) -> Vec<f64> {
        match self {
            Policy::Deterministic(t) => {
                let mut p = vec![0.0; n_actions];
                p[t[s]] = 1.0;
                p
            }
            Policy::Randomized(t) => t[s].clone(),
        }
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states() != n_states {
            return Err(Error::Dimension(format!(
                "policy covers {} states, expected {n_states}",
                self.n_states()
            )));
        }
        match self {
            Policy::Deterministic(t) => {
                if let Some((s, a)) = t.iter().enumerate().find(|(_, &a)| a >= n_actions) {
                    return Err(Error::InvalidArgument(format!(
                        "policy picks action {a} at state {s}, only {n_actions} actions exist"
                    )));
                }
            }
            Policy::Randomized(t) => {
                for (s, row) in t.iter().enumerate() {
                    if row.len() != n_actions {
                        return Err(Error::Dimension(format!(
                            "policy row {s} has {} entries, expected {n_actions}",
                            row.len()
                        )));
                    }
                    check_distribution("policy", row, &[s])?;
                }
            }
        }
        Ok(())
    }
}

/// `(Lv)(s) = min_a { cost(a,s) + beta sum P v }`.
pub fn bellman_apply(mdp: &FiniteMdp, v: &ValueFunction) -> ValueFunction {
    ValueFunction {
        values: (0..mdp.n_states)
            .map(|s| {
                (0..mdp.n_actions)
                    .map(|a| mdp.q_value(v, s, a))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect(),
    }
}

/// Greedy policy with respect to `v`; near-ties go to the lowest action.
pub fn greedy_policy(mdp: &FiniteMdp, v: &ValueFunction) -> Policy {
    Policy::Deterministic(
        (0..mdp.n_states)
            .map(|s| {
                let mut best = (0, mdp.q_value(v, s, 0));
                for a in 1..mdp.n_actions {
                    let q = mdp.q_value(v, s, a);
                    if q < best.1 - TIE_TOL {
                        best = (a, q);
                    }
                }
                best.0
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIterationResult {
    pub value: ValueFunction,
    pub policy: Policy,
    pub iterations: usize,
}

/// Value iteration from `v = 0`.
///
/// Stops once successive iterates are within `tol (1 - beta) / (2 beta)`,
/// which puts the returned values within `tol` of the fixed point.
pub fn value_iteration(mdp: &FiniteMdp, tol: f64, max_iter: usize) -> Result<ValueIterationResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let beta = mdp.discount;
    let threshold = if beta > 0.0 {
        tol * (1.0 - beta) / (2.0 * beta)
    } else {
        f64::INFINITY
    };
    let mut v = ValueFunction::zeros(mdp.n_states);
    let mut last_change = f64::INFINITY;
    for it in 1..=max_iter {
        let next = bellman_apply(mdp, &v);
        last_change = next.sup_distance(&v);
        v = next;
        if last_change <= threshold {
            let policy = greedy_policy(mdp, &v);
            return Ok(ValueIterationResult {
                value: v,
                policy,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last_change,
        best: v,
    })
}

/// Iteration budget that always suffices for [`value_iteration`] at `tol`.
pub fn default_max_iter(mdp: &FiniteMdp, tol: f64) -> usize {
    let beta = mdp.discount;
    if beta == 0.0 {
        return 1;
    }
    let scale = (mdp.max_cost() / (1.0 - beta)).max(tol);
    let n = ((tol * (1.0 - beta) / (2.0 * beta * scale)).ln() / beta.ln()).ceil();
    (n.max(0.0) as usize) * 2 + 10
}

/// Transition matrix and cost vector of the chain induced by `policy`.
pub fn induced_chain(mdp: &FiniteMdp, policy: &Policy) -> (DMatrix<f64>, DVector<f64>) {
    let n = mdp.n_states;
    let mut p = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    for s in 0..n {
        for (a, w) in policy.action_probs(s, mdp.n_actions).into_iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            c[s] += w * mdp.cost(a, s);
            for (s2, q) in mdp.row(a, s).iter().enumerate() {
                p[(s, s2)] += w * q;
            }
        }
    }
    (p, c)
}

/// Exact value of a stationary policy from `(I - beta P_pi) v = c_pi`.
pub fn policy_evaluation(mdp: &FiniteMdp, policy: &Policy) -> Result<ValueFunction> {
    policy.validate(mdp.n_states, mdp.n_actions)?;
    let n = mdp.n_states;
    let (p, c) = induced_chain(mdp, policy);
    let a = DMatrix::identity(n, n) - p * mdp.discount;
    let v = a
        .clone()
        .lu()
        .solve(&c)
        .ok_or_else(|| Error::Singular("I - beta P_pi".into()))?;
    let residual = (&a * &v - &c).amax();
    if residual > 1e-10 * c.amax().max(f64::MIN_POSITIVE) && residual > 0.0 {
        return Err(Error::Singular(format!("policy evaluation residual {residual:e}")));
    }
    Ok(ValueFunction {
        values: v.iter().copied().collect(),
    })
}

/// Variables `u(s)` free; maximise `sum alpha(s) u(s)` subject to
/// `u(s) <= cost(a,s) + beta sum_{s'} P(s'|s,a) u(s')` for every `(s,a)`.
pub fn mdp_to_primal_lp(mdp: &FiniteMdp) -> LpProblem {
    let n = mdp.n_states;
    let mut lp = LpProblem::new(Direction::Max, mdp.alpha.clone());
    lp.set_all_free();
    for s in 0..n {
        for a in 0..mdp.n_actions {
            // u(s) - beta P u <= cost
            let mut row: Vec<f64> = mdp.row(a, s).iter().map(|p| -mdp.discount * p).collect();
            row[s] += 1.0;
            lp.add_constraint(row, Sense::Le, mdp.cost(a, s));
        }
    }
    lp
}

/// The superharmonic form `cost + beta P u <= u` under minimisation. Its
/// optimum is the value of the costliest stationary policy, not `u*`; kept
/// for audits.
pub fn mdp_to_superharmonic_lp(mdp: &FiniteMdp) -> LpProblem {
    let n = mdp.n_states;
    let mut lp = LpProblem::new(Direction::Min, mdp.alpha.clone());
    lp.set_all_free();
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let mut row: Vec<f64> = mdp.row(a, s).iter().map(|p| mdp.discount * p).collect();
            row[s] -= 1.0;
            lp.add_constraint(row, Sense::Le, -mdp.cost(a, s));
        }
    }
    lp
}

/// Index of the occupation variable `y(s, a)` in [`mdp_to_dual_lp`].
pub fn dual_var(mdp: &FiniteMdp, s: usize, a: usize) -> usize {
    s * mdp.n_actions + a
}

/// Occupation-measure LP: `y(s,a) >= 0`, minimise `sum y cost` subject to
/// `sum_a y(s',a) - beta sum_{s,a} P(s'|s,a) y(s,a) = alpha(s')`.
pub fn mdp_to_dual_lp(mdp: &FiniteMdp) -> LpProblem {
    let (n, na) = (mdp.n_states, mdp.n_actions);
    let mut objective = vec![0.0; n * na];
    for s in 0..n {
        for a in 0..na {
            objective[dual_var(mdp, s, a)] = mdp.cost(a, s);
        }
    }
    let mut lp = LpProblem::new(Direction::Min, objective);
    for s2 in 0..n {
        let mut row = vec![0.0; n * na];
        for s in 0..n {
            for a in 0..na {
                row[dual_var(mdp, s, a)] -= mdp.discount * mdp.row(a, s)[s2];
            }
        }
        for a in 0..na {
            row[dual_var(mdp, s2, a)] += 1.0;
        }
        lp.add_constraint(row, Sense::Eq, mdp.alpha[s2]);
    }
    lp
}

/// Value iteration and both LPs on one MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSolution {
    pub value: ValueFunction,
    pub policy: Policy,
    pub iterations: usize,
    /// `alpha`-weighted value-iteration value.
    pub weighted_vi: f64,
    pub primal_lp: f64,
    pub dual_lp: f64,
    /// Optimal occupation measure `y(s, a)`, flattened `s * n_actions + a`.
    pub occupation: Vec<f64>,
}

impl MdpSolution {
    pub fn max_disagreement(&self) -> f64 {
        let xs = [self.weighted_vi, self.primal_lp, self.dual_lp];
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

fn require_optimal(sol: LpSolution, what: &str) -> Result<LpSolution> {
    match sol.status {
        LpStatus::Optimal => Ok(sol),
        LpStatus::Infeasible => Err(Error::Infeasible(what.into())),
        LpStatus::Unbounded => Err(Error::Unbounded(what.into())),
    }
}

/// Solves `mdp` three ways and fails with [`Error::Disagreement`] if the
/// `alpha`-weighted optima differ by more than [`AGREEMENT_TOL`].
pub fn solve_three_way(mdp: &FiniteMdp, tol: f64, what: &'static str) -> Result<MdpSolution> {
    let vi = value_iteration(mdp, tol, default_max_iter(mdp, tol))?;
    let primal = require_optimal(solve_lp(&mdp_to_primal_lp(mdp))?, "primal LP")?;
    let dual = require_optimal(solve_lp(&mdp_to_dual_lp(mdp))?, "dual LP")?;
    let sol = MdpSolution {
        weighted_vi: vi.value.weighted(&mdp.alpha),
        value: vi.value,
        policy: vi.policy,
        iterations: vi.iterations,
        primal_lp: primal.objective_value,
        dual_lp: dual.objective_value,
        occupation: dual.point,
    };
    if sol.max_disagreement() > AGREEMENT_TOL {
        return Err(Error::Disagreement {
            what,
            vi: sol.weighted_vi,
            primal: sol.primal_lp,
            dual: sol.dual_lp,
        });
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_mdp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(cost: f64, beta: f64) -> FiniteMdp {
        FiniteMdp::new(1, 1, vec![1.0], vec![cost], beta, vec![1.0]).unwrap()
    }

    /// Virtual MDP of the worked example: p = P_o(a), averaged costs.
    pub(crate) fn example_virtual_mdp() -> FiniteMdp {
        FiniteMdp::new(
            2,
            2,
            vec![0.8, 0.2, 0.5, 0.5, 0.2, 0.8, 0.8, 0.2],
            vec![1.1, 0.7, 0.55, 0.7],
            0.5,
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn bellman_scalar_recursion() {
        let m = scalar(1.0, 0.3);
        assert_eq!(bellman_apply(&m, &ValueFunction::zeros(1)).values, vec![1.0]);
        let v = ValueFunction { values: vec![2.0] };
        assert!((bellman_apply(&m, &v).values[0] - 1.6).abs() < 1e-15);
        let zero = scalar(0.0, 0.9);
        assert_eq!(bellman_apply(&zero, &ValueFunction::zeros(1)).values, vec![0.0]);
    }

    #[test]
    fn bellman_on_virtual_example_is_min_cost() {
        let v = bellman_apply(&example_virtual_mdp(), &ValueFunction::zeros(2));
        assert!((v.values[0] - 0.55).abs() < 1e-15);
        assert!((v.values[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn value_iteration_geometric_series() {
        let r = value_iteration(&scalar(2.0, 0.9), 1e-9, 10_000).unwrap();
        assert!((r.value.values[0] - 20.0).abs() <= 1e-9);
        let r0 = value_iteration(&scalar(2.0, 0.0), 1e-9, 10).unwrap();
        assert_eq!(r0.iterations, 1);
        assert_eq!(r0.value.values, vec![2.0]);
    }

    #[test]
    fn value_iteration_on_virtual_example() {
        let m = example_virtual_mdp();
        let r = value_iteration(&m, 1e-8, default_max_iter(&m, 1e-8)).unwrap();
        // 0.9 u0 = 0.55 + 0.4 u1, 0.9 u1 = 0.7 + 0.4 u0
        let (u0, u1) = (0.775 / 0.65, 0.85 / 0.65);
        assert!((r.value.values[0] - u0).abs() < 1e-8);
        assert!((r.value.values[1] - u1).abs() < 1e-8);
        assert!((r.value.values[0] - 1.1923).abs() < 5e-5);
        assert!((r.value.values[1] - 1.3077).abs() < 5e-5);
        assert_eq!(r.policy, Policy::Deterministic(vec![1, 1]));
        assert!((r.value.weighted(m.alpha()) - 1.25).abs() < 1e-8);
    }

    #[test]
    fn not_converged_carries_best_iterate() {
        match value_iteration(&scalar(1.0, 0.99), 1e-12, 3) {
            Err(Error::NotConverged { iterations, best, .. }) => {
                assert_eq!(iterations, 3);
                assert!((best.values[0] - (1.0 + 0.99 + 0.99 * 0.99)).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn policy_evaluation_matches_vi_and_symmetry() {
        let m = example_virtual_mdp();
        let r = value_iteration(&m, 1e-10, 10_000).unwrap();
        let v = policy_evaluation(&m, &r.policy).unwrap();
        assert!(v.sup_distance(&r.value) <= 1e-9);

        let walk = FiniteMdp::new(2, 1, vec![0.5, 0.5, 0.5, 0.5], vec![1.0, 1.0], 0.75, vec![0.5, 0.5])
            .unwrap();
        let v = policy_evaluation(&walk, &Policy::constant(2, 0)).unwrap();
        assert!(v.values.iter().all(|x| (x - 4.0).abs() < 1e-12));
    }

    #[test]
    fn randomized_policy_mixes_costs() {
        let m = example_virtual_mdp();
        let half = Policy::Randomized(vec![vec![0.5, 0.5]; 2]);
        let v = policy_evaluation(&m, &half).unwrap();
        let (p, c) = induced_chain(&m, &half);
        let lhs = DVector::from_vec(v.values.clone()) - p * DVector::from_vec(v.values.clone()) * 0.5;
        assert!((lhs - c).amax() < 1e-12);
    }

    #[test]
    fn scalar_lps() {
        let m = scalar(3.0, 0.5);
        let primal = solve_lp(&mdp_to_primal_lp(&m)).unwrap();
        assert_eq!(primal.status, LpStatus::Optimal);
        assert!((primal.objective_value - 6.0).abs() < 1e-12);
        let dual = solve_lp(&mdp_to_dual_lp(&m)).unwrap();
        assert!((dual.point[0] - 2.0).abs() < 1e-12);
        assert!((dual.objective_value - 6.0).abs() < 1e-12);
    }

    #[test]
    fn virtual_example_lps() {
        let m = example_virtual_mdp();
        let primal_lp = mdp_to_primal_lp(&m);
        assert_eq!((primal_lp.n_vars, primal_lp.constraints.len()), (2, 4));
        let sol = solve_three_way(&m, 1e-9, "virtual").unwrap();
        assert!((sol.primal_lp - 1.25).abs() < 1e-9);
        assert!((sol.dual_lp - 1.25).abs() < 1e-9);
        // support only on action 1
        for s in 0..2 {
            assert!(sol.occupation[dual_var(&m, s, 0)].abs() < 1e-12);
            assert!(sol.occupation[dual_var(&m, s, 1)] > 0.0);
        }
        assert!((sol.occupation.iter().sum::<f64>() - 2.0).abs() < 1e-9);
        // the superharmonic form prices the costliest policy instead
        let worst = solve_lp(&mdp_to_superharmonic_lp(&m)).unwrap();
        assert!((worst.objective_value - 1.92).abs() < 1e-9);
        let mut max_max = mdp_to_superharmonic_lp(&m);
        max_max.direction = Direction::Max;
        assert_eq!(solve_lp(&max_max).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn lp_and_vi_agree_on_random_mdps() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for i in 0..40 {
            let beta = [0.3, 0.5, 0.9][i % 3];
            let m = random_mdp(&mut rng, 2 + i % 5, 1 + i % 3, beta);
            let sol = solve_three_way(&m, 1e-9, "random").unwrap();
            assert!(sol.max_disagreement() < 1e-6);
            let total: f64 = sol.occupation.iter().sum();
            assert!((total - 1.0 / (1.0 - beta)).abs() < 1e-6);
            let v = policy_evaluation(&m, &sol.policy).unwrap();
            assert!(v.sup_distance(&sol.value) <= 1e-8);
        }
    }
}
