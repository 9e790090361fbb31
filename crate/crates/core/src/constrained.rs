//! Occupation-measure LPs on the joint chain that restrict the policy to
//! observable-state feedback, and an exact evaluator for local policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::full_info::{build_full_info, JointIndexMap};
use crate::lp::{solve_lp, Direction, LpProblem, LpStatus, Sense};
use crate::mdp::{policy_evaluation, Policy, ValueFunction};
use crate::model::LsiModel;

/// An action carrying at least this share of an observable state's mass is
/// taken deterministically.
pub const CONCENTRATION: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationMeasure {
    pub n_obs: usize,
    pub n_unobs: usize,
    pub n_actions: usize,
    /// `y[((x_o * |X_u|) + x_u) * |A| + a]`
    pub y: Vec<f64>,
}

impl OccupationMeasure {
    pub fn get(&self, x_o: usize, x_u: usize, a: usize) -> f64 {
        self.y[var(self.n_unobs, self.n_actions, x_o, x_u, a)]
    }

    pub fn total(&self) -> f64 {
        self.y.iter().sum()
    }
}

fn var(nu: usize, na: usize, xo: usize, xu: usize, a: usize) -> usize {
    (xo * nu + xu) * na + a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedDual {
    pub occupation: OccupationMeasure,
    pub objective: f64,
    pub policy: Policy,
}

pub fn constrained_dual_lp(model: &LsiModel) -> LpProblem {
    let (no, nu, na) = (model.n_obs(), model.n_unobs(), model.n_actions());
    let beta = model.discount();
    let n = no * nu * na;
    let mut objective = vec![0.0; n];
    for xo in 0..no {
        for xu in 0..nu {
            for a in 0..na {
                objective[var(nu, na, xo, xu, a)] = model.cost(a, xo, xu);
            }
        }
    }
    let mut lp = LpProblem::new(Direction::Min, objective);
    for xo2 in 0..no {
        for xu2 in 0..nu {
            let mut row = vec![0.0; n];
            for a in 0..na {
                row[var(nu, na, xo2, xu2, a)] += 1.0;
            }
            for xo in 0..no {
                for xu in 0..nu {
                    for a in 0..na {
                        row[var(nu, na, xo, xu, a)] -= beta * model.kernel(a, xo, xu, xo2, xu2);
                    }
                }
            }
            lp.add_constraint(row, Sense::Eq, model.alpha_obs()[xo2] * model.alpha_unobs()[xu2]);
        }
    }
    for xo in 0..no {
        for xu in 0..nu {
            for xu2 in xu + 1..nu {
                for a in 0..na {
                    let mut row = vec![0.0; n];
                    row[var(nu, na, xo, xu, a)] = 1.0;
                    row[var(nu, na, xo, xu2, a)] = -1.0;
                    lp.add_constraint(row, Sense::Eq, 0.0);
                }
            }
        }
    }
    lp
}

/// Local policy read off an occupation measure.
pub fn extract_policy(occ: &OccupationMeasure) -> Policy {
    let (no, nu, na) = (occ.n_obs, occ.n_unobs, occ.n_actions);
    let mut rows = Vec::with_capacity(no);
    let mut deterministic = Vec::with_capacity(no);
    for xo in 0..no {
        let mass: Vec<f64> = (0..na)
            .map(|a| (0..nu).map(|xu| occ.get(xo, xu, a).max(0.0)).sum())
            .collect();
        let total: f64 = mass.iter().sum();
        let mut row = vec![0.0; na];
        if total <= 0.0 {
            row[0] = 1.0;
            deterministic.push(Some(0));
        } else {
            let (best, top) = mass
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (a, &m)| if m > acc.1 { (a, m) } else { acc });
            if top >= CONCENTRATION * total {
                row[best] = 1.0;
                deterministic.push(Some(best));
            } else {
                row.iter_mut().zip(&mass).for_each(|(r, m)| *r = m / total);
                deterministic.push(None);
            }
        }
        rows.push(row);
    }
    match deterministic.into_iter().collect::<Option<Vec<usize>>>() {
        Some(table) => Policy::Deterministic(table),
        None => Policy::Randomized(rows),
    }
}

pub fn solve_constrained_dual(model: &LsiModel) -> Result<ConstrainedDual> {
    let sol = solve_lp(&constrained_dual_lp(model))?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::Infeasible("constrained occupation LP".into())),
        LpStatus::Unbounded => return Err(Error::Unbounded("constrained occupation LP".into())),
    }
    let occupation = OccupationMeasure {
        n_obs: model.n_obs(),
        n_unobs: model.n_unobs(),
        n_actions: model.n_actions(),
        y: sol.point,
    };
    Ok(ConstrainedDual {
        policy: extract_policy(&occupation),
        objective: sol.objective_value,
        occupation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedPrimal {
    pub status: LpStatus,
    /// `u[x_o * |X_u| + x_u]` when optimal.
    pub values: Vec<f64>,
    pub objective: f64,
}

/// Variables `u(x_o, x_u)` free; minimise `sum alpha_o alpha_u u` subject to,
/// for each `(x_o, a)`,
/// `sum_{x_u} u(x_o,x_u) - sum_{x_u} c(x_o,x_u,a) >= beta sum_{x_u,x_o',x_u'} p u(x_o',x_u')`.
pub fn constrained_primal_lp(model: &LsiModel) -> LpProblem {
    let map = JointIndexMap::of(model);
    let (no, nu) = (model.n_obs(), model.n_unobs());
    let beta = model.discount();
    let objective = (0..map.len())
        .map(|s| {
            let (xo, xu) = map.decode(s);
            model.alpha_obs()[xo] * model.alpha_unobs()[xu]
        })
        .collect();
    let mut lp = LpProblem::new(Direction::Min, objective);
    lp.set_all_free();
    for xo in 0..no {
        for a in 0..model.n_actions() {
            let mut row = vec![0.0; map.len()];
            let mut rhs = 0.0;
            for xu in 0..nu {
                row[map.encode(xo, xu)] += 1.0;
                rhs += model.cost(a, xo, xu);
                for (s2, p) in model.kernel_row(a, xo, xu).iter().enumerate() {
                    row[s2] -= beta * p;
                }
            }
            lp.add_constraint(row, Sense::Ge, rhs);
        }
    }
    lp
}

pub fn solve_constrained_primal(model: &LsiModel) -> Result<ConstrainedPrimal> {
    let sol = solve_lp(&constrained_primal_lp(model))?;
    Ok(ConstrainedPrimal {
        status: sol.status,
        objective: sol.objective_value,
        values: sol.point,
    })
}

/// Joint-state policy that ignores `x_u`.
pub fn lift_policy(model: &LsiModel, policy: &Policy) -> Result<Policy> {
    policy.validate(model.n_obs(), model.n_actions())?;
    let nu = model.n_unobs();
    Ok(match policy {
        Policy::Deterministic(t) => Policy::Deterministic(t.iter().flat_map(|&a| std::iter::repeat(a).take(nu)).collect()),
        Policy::Randomized(t) => Policy::Randomized(t.iter().flat_map(|r| std::iter::repeat(r.clone()).take(nu)).collect()),
    })
}

/// Exact joint-state values of a local policy.
pub fn audit_policy_values(model: &LsiModel, policy: &Policy) -> Result<ValueFunction> {
    let mdp = build_full_info(model);
    policy_evaluation(&mdp, &lift_policy(model, policy)?)
}

/// `alpha_o alpha_u`-weighted exact value of a local policy on the true system.
pub fn audit_policy(model: &LsiModel, policy: &Policy) -> Result<f64> {
    let mdp = build_full_info(model);
    Ok(audit_policy_values(model, policy)?.weighted(mdp.alpha()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_factored_model, example_model, UnobsKind};
    use crate::full_info::solve_full_info;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn example_local_policy_values() {
        // exact rational values of the four deterministic local policies
        let m = example_model();
        let cases = [([0, 0], 159.0 / 85.0), ([1, 1], 113.0 / 85.0)];
        for (table, want) in cases {
            let v = audit_policy(&m, &Policy::Deterministic(table.to_vec())).unwrap();
            assert!((v - want).abs() < 1e-12, "{table:?}: {v}");
        }
    }

    #[test]
    fn example_constrained_dual() {
        let m = example_model();
        let d = solve_constrained_dual(&m).unwrap();
        assert!((d.occupation.total() - 2.0).abs() < 1e-6);
        assert!(d.occupation.y.iter().all(|&y| y >= -1e-9));
        assert!((d.objective - 159.0 / 85.0).abs() < 1e-9);
        assert_eq!(d.policy, Policy::Deterministic(vec![0, 0]));
        let audit = audit_policy(&m, &d.policy).unwrap();
        assert!((audit - d.objective).abs() < 1e-9);
        let full = solve_full_info(&m, 1e-10).unwrap();
        assert!(audit >= full.weighted_value - 1e-6);
    }

    #[test]
    fn example_constrained_primal_solves() {
        let p = solve_constrained_primal(&example_model()).unwrap();
        assert_eq!(p.status, LpStatus::Optimal);
        assert!((p.objective - 159.0 / 85.0).abs() < 1e-9);
    }

    #[test]
    fn single_action_occupation_is_uncontrolled_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = random_factored_model(&mut rng, 2, 3, 1, 0.6, UnobsKind::Dense);
        let uniform_u = m.with_alpha_unobs(vec![1.0 / 3.0; 3]).unwrap();
        // equal-mass rows can make the LP infeasible; a uniform x_u start and
        // doubly stochastic x_u chain keep it feasible
        let mut f = uniform_u.factors().unwrap().clone();
        f.p_unobs[0] = vec![vec![0.2, 0.3, 0.5], vec![0.5, 0.2, 0.3], vec![0.3, 0.5, 0.2]];
        let m = LsiModel::from_factors(f, uniform_u.flat_cost().to_vec(), 0.6, m.alpha_obs().to_vec(), vec![1.0 / 3.0; 3]).unwrap();
        let d = solve_constrained_dual(&m).unwrap();
        let exact = audit_policy(&m, &Policy::constant(2, 0)).unwrap();
        assert!((d.objective - exact).abs() < 1e-9);
    }

    #[test]
    fn zero_cost_objectives_vanish() {
        let m = example_model();
        let z = LsiModel::from_factors(m.factors().unwrap().clone(), vec![0.0; 8], 0.5, vec![0.5; 2], vec![0.5; 2]).unwrap();
        assert_eq!(solve_constrained_dual(&z).unwrap().objective, 0.0);
        assert_eq!(solve_constrained_primal(&z).unwrap().objective, 0.0);
        assert_eq!(audit_policy(&z, &Policy::constant(2, 1)).unwrap(), 0.0);
    }

    #[test]
    fn scalar_audit() {
        let m = LsiModel::new(1, 1, 1, vec![1.0], vec![2.0], 0.75, vec![1.0], vec![1.0]).unwrap();
        assert!((audit_policy(&m, &Policy::constant(1, 0)).unwrap() - 8.0).abs() < 1e-12);
        let p = solve_constrained_primal(&m).unwrap();
        assert_eq!(p.status, LpStatus::Optimal);
        assert!((p.objective - 8.0).abs() < 1e-12);
    }

    #[test]
    fn policy_extraction_rules() {
        let occ = OccupationMeasure {
            n_obs: 3,
            n_unobs: 1,
            n_actions: 2,
            y: vec![0.0, 1.0, 0.25, 0.75, 0.0, 0.0],
        };
        assert_eq!(
            extract_policy(&occ),
            Policy::Randomized(vec![vec![0.0, 1.0], vec![0.25, 0.75], vec![1.0, 0.0]])
        );
        let occ = OccupationMeasure { y: vec![0.0, 1.0, 1.0, 1e-12, 0.0, 0.0], ..occ };
        assert_eq!(extract_policy(&occ), Policy::Deterministic(vec![1, 0, 0]));
    }
}
