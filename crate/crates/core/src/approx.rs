//! Virtual-belief approximation: freeze the belief and solve an MDP on `X_o`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::error::{Error, Result};
use crate::mdp::{solve_three_way, FiniteMdp, MdpSolution};
use crate::model::{check_factorization, LsiModel};

/// Tolerance for the factorization and action-independence checks.
pub const STRUCTURE_TOL: f64 = 1e-9;
/// Rank and spectral tolerance for the ergodicity check.
pub const ERGODIC_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualModel {
    pub mdp: FiniteMdp,
    pub frozen: Belief,
}

pub fn build_virtual(model: &LsiModel, frozen: &Belief) -> Result<VirtualModel> {
    let (no, nu, na) = (model.n_obs(), model.n_unobs(), model.n_actions());
    if frozen.len() != nu {
        return Err(Error::Dimension(format!(
            "frozen belief has {} entries, model has {nu} unobservable states",
            frozen.len()
        )));
    }
    let w = frozen.probs();
    let mut kernel = vec![0.0; na * no * no];
    let mut cost = vec![0.0; na * no];
    for a in 0..na {
        for xo in 0..no {
            let out = &mut kernel[(a * no + xo) * no..(a * no + xo + 1) * no];
            for xu in 0..nu {
                if w[xu] == 0.0 {
                    continue;
                }
                cost[a * no + xo] += w[xu] * model.cost(a, xo, xu);
                for (xo2, chunk) in model.kernel_row(a, xo, xu).chunks(nu).enumerate() {
                    out[xo2] += w[xu] * chunk.iter().sum::<f64>();
                }
            }
        }
    }
    let mdp = FiniteMdp::new(no, na, kernel, cost, model.discount(), model.alpha_obs().to_vec())?;
    Ok(VirtualModel {
        mdp,
        frozen: frozen.clone(),
    })
}

/// Value iteration plus both LPs on the virtual MDP.
pub fn solve_virtual(model: &LsiModel, frozen: &Belief, tol: f64) -> Result<MdpSolution> {
    let v = build_virtual(model, frozen)?;
    solve_three_way(&v.mdp, tol, "virtual")
}

/// Unique stationary law of an ergodic stochastic matrix.
///
/// Fails with [`Error::NotApplicable`] unless `I - P^T` has rank `n - 1` and
/// exactly one eigenvalue of `P` lies on the unit circle.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Belief> {
    let n = p.len();
    let pt = DMatrix::from_fn(n, n, |i, j| p[j][i]);
    let m = DMatrix::identity(n, n) - &pt;
    let rank = m.clone().svd(false, false).singular_values.iter().filter(|s| **s > ERGODIC_TOL).count();
    if rank + 1 != n {
        return Err(Error::NotApplicable(format!(
            "unobservable chain has {} recurrent classes",
            n - rank
        )));
    }
    let on_circle = pt
        .complex_eigenvalues()
        .iter()
        .filter(|l| l.norm() > 1.0 - ERGODIC_TOL)
        .count();
    if on_circle != 1 {
        return Err(Error::NotApplicable(format!(
            "unobservable chain is periodic ({on_circle} eigenvalues on the unit circle)"
        )));
    }
    let mut a = m;
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = nalgebra::DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("stationary system".into()))?;
    let mut probs: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= s);
    Belief::new(probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReduction {
    pub stationary: Belief,
    pub solution: MdpSolution,
}

/// Freezes the belief at the stationary law of an uncontrolled, ergodic
/// unobservable chain.
pub fn stationary_reduction(model: &LsiModel, tol: f64) -> Result<StationaryReduction> {
    let f = check_factorization(model, STRUCTURE_TOL)
        .ok_or_else(|| Error::NotApplicable("kernel does not factor".into()))?;
    let p0 = &f.p_unobs[0];
    for (a, pa) in f.p_unobs.iter().enumerate().skip(1) {
        let differs = pa
            .iter()
            .flatten()
            .zip(p0.iter().flatten())
            .any(|(x, y)| (x - y).abs() > STRUCTURE_TOL);
        if differs {
            return Err(Error::NotApplicable(format!(
                "unobservable transition under action {a} differs from action 0"
            )));
        }
    }
    let stationary = stationary_distribution(p0)?;
    let solution = solve_virtual(model, &stationary, tol)?;
    Ok(StationaryReduction { stationary, solution })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_factored_model, example_model, with_unobs_independent_cost, UnobsKind};
    use crate::mdp::{Policy, ValueFunction};
    use crate::model::FactoredKernel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn example_virtual_mdp_tables() {
        let m = example_model();
        let v = build_virtual(&m, &Belief::initial(&m)).unwrap();
        let f = m.factors().unwrap();
        for a in 0..2 {
            for xo in 0..2 {
                for (x, y) in v.mdp.row(a, xo).iter().zip(&f.p_obs[a][xo]) {
                    assert!((x - y).abs() < 1e-15);
                }
            }
        }
        let want = [1.1, 0.7, 0.55, 0.7];
        for a in 0..2 {
            for xo in 0..2 {
                assert!((v.mdp.cost(a, xo) - want[a * 2 + xo]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn example_virtual_solution() {
        let m = example_model();
        let s = solve_virtual(&m, &Belief::initial(&m), 1e-10).unwrap();
        assert_eq!(s.policy, Policy::Deterministic(vec![1, 1]));
        // (I - beta P_1) u = c_1 solved by hand
        let want = ValueFunction {
            values: vec![0.775 / 0.65, 0.85 / 0.65],
        };
        assert!(s.value.sup_distance(&want) < 1e-9);
        assert!((s.weighted_vi - 1.25).abs() < 1e-9);
    }

    #[test]
    fn point_mass_frozen_gives_slice_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_factored_model(&mut rng, 3, 3, 2, 0.5, UnobsKind::Dense);
        let v = build_virtual(&m, &Belief::point_mass(3, 2)).unwrap();
        for a in 0..2 {
            for xo in 0..3 {
                assert_eq!(v.mdp.cost(a, xo), m.cost(a, xo, 2));
                for xo2 in 0..3 {
                    let slice: f64 = (0..3).map(|xu2| m.kernel(a, xo, 2, xo2, xu2)).sum();
                    assert!((v.mdp.row(a, xo)[xo2] - slice).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn unobs_independent_cost_ignores_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = random_factored_model(&mut rng, 2, 3, 2, 0.5, UnobsKind::Dense);
        let m = with_unobs_independent_cost(&mut rng, &base);
        for frozen in [Belief::uniform(3), Belief::point_mass(3, 1)] {
            let v = build_virtual(&m, &frozen).unwrap();
            for a in 0..2 {
                for xo in 0..2 {
                    assert!((v.mdp.cost(a, xo) - m.cost(a, xo, 0)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn frozen_length_checked() {
        let m = example_model();
        assert!(matches!(build_virtual(&m, &Belief::uniform(3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn stationary_laws() {
        let b = stationary_distribution(&[vec![0.2, 0.8], vec![0.8, 0.2]]).unwrap();
        assert!((b.probs()[0] - 0.5).abs() < 1e-12);
        let b = stationary_distribution(&[vec![0.8, 0.2], vec![0.5, 0.5]]).unwrap();
        assert!((b.probs()[0] - 5.0 / 7.0).abs() < 1e-10);
        assert!((b.probs()[1] - 2.0 / 7.0).abs() < 1e-10);
        let id = stationary_distribution(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(id, Err(Error::NotApplicable(_))));
        let flip = stationary_distribution(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(flip, Err(Error::NotApplicable(_))));
    }

    #[test]
    fn stationary_reduction_preconditions() {
        // the worked example has action-dependent unobservable dynamics
        assert!(matches!(
            stationary_reduction(&example_model(), 1e-9),
            Err(Error::NotApplicable(_))
        ));
        let mut f = crate::fixtures::example_factors();
        f.p_unobs[1] = f.p_unobs[0].clone();
        let m = LsiModel::from_factors(f, crate::fixtures::example_cost(), 0.5, vec![0.5; 2], vec![0.5; 2]).unwrap();
        let r = stationary_reduction(&m, 1e-9).unwrap();
        assert!((r.stationary.probs()[0] - 0.5).abs() < 1e-12);
        let g = FactoredKernel {
            p_obs: m.factors().unwrap().p_obs.clone(),
            p_unobs: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2],
        };
        let id = LsiModel::from_factors(g, crate::fixtures::example_cost(), 0.5, vec![0.5; 2], vec![0.5; 2]).unwrap();
        assert!(matches!(stationary_reduction(&id, 1e-9), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn value_is_lipschitz_in_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_factored_model(&mut rng, 3, 3, 2, 0.7, UnobsKind::Dense);
        let b = Belief::new(vec![0.5, 0.3, 0.2]).unwrap();
        let c = Belief::new(vec![0.45, 0.35, 0.2]).unwrap();
        let delta = 0.1; // L1 distance
        let vb = solve_virtual(&m, &b, 1e-10).unwrap().weighted_vi;
        let vc = solve_virtual(&m, &c, 1e-10).unwrap().weighted_vi;
        assert!((vb - vc).abs() <= delta * m.max_cost() / (1.0 - 0.7) + 1e-9);
    }
}
