//! Full-information baseline: the MDP on joint states with both substates
//! observed. Its value lower-bounds every local-feedback value.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{solve_three_way, FiniteMdp, MdpSolution};
use crate::model::LsiModel;

/// `s = x_o * |X_u| + x_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointIndexMap {
    pub n_obs: usize,
    pub n_unobs: usize,
}

impl JointIndexMap {
    pub fn of(model: &LsiModel) -> Self {
        JointIndexMap {
            n_obs: model.n_obs(),
            n_unobs: model.n_unobs(),
        }
    }

    #[inline]
    pub fn encode(&self, x_o: usize, x_u: usize) -> usize {
        x_o * self.n_unobs + x_u
    }

    #[inline]
    pub fn decode(&self, s: usize) -> (usize, usize) {
        (s / self.n_unobs, s % self.n_unobs)
    }

    pub fn len(&self) -> usize {
        self.n_obs * self.n_unobs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_full_info(model: &LsiModel) -> FiniteMdp {
    let map = JointIndexMap::of(model);
    let n = map.len();
    let na = model.n_actions();
    let mut kernel = Vec::with_capacity(na * n * n);
    let mut cost = Vec::with_capacity(na * n);
    for a in 0..na {
        for s in 0..n {
            let (xo, xu) = map.decode(s);
            kernel.extend_from_slice(model.kernel_row(a, xo, xu));
            cost.push(model.cost(a, xo, xu));
        }
    }
    let alpha = (0..n)
        .map(|s| {
            let (xo, xu) = map.decode(s);
            model.alpha_obs()[xo] * model.alpha_unobs()[xu]
        })
        .collect();
    FiniteMdp::new(n, na, kernel, cost, model.discount(), alpha).expect("joint chain of a valid model is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullInfoSolution {
    pub solution: MdpSolution,
    /// `sum alpha_o alpha_u v*`.
    pub weighted_value: f64,
    /// `sum_{x_u} alpha_u(x_u) v*(x_o, x_u)` for each `x_o`.
    pub per_obs_values: Vec<f64>,
}

pub fn solve_full_info(model: &LsiModel, tol: f64) -> Result<FullInfoSolution> {
    let mdp = build_full_info(model);
    let solution = solve_three_way(&mdp, tol, "full-information")?;
    let per_obs_values = alpha_u_average(model, &solution.value.values);
    Ok(FullInfoSolution {
        weighted_value: solution.weighted_vi,
        solution,
        per_obs_values,
    })
}

/// Averages a joint-state vector over `x_u` with weights `alpha_u`.
pub fn alpha_u_average(model: &LsiModel, joint: &[f64]) -> Vec<f64> {
    let map = JointIndexMap::of(model);
    (0..model.n_obs())
        .map(|xo| {
            (0..model.n_unobs())
                .map(|xu| model.alpha_unobs()[xu] * joint[map.encode(xo, xu)])
                .sum()
        })
        .collect()
}

/// A model whose unobservable substate is a function `x_u = g(x_o)` of the
/// observable one, started deterministically at `(x_o*, g(x_o*))`.
///
/// `p_obs` is `[a][x_o][x_o']` and `cost` is `[a][x_o][x_u]`. Every
/// transition lands on `x_u' = g(x_o')`.
pub fn observable_map_model(
    p_obs: &[Vec<Vec<f64>>],
    g: &[usize],
    n_unobs: usize,
    cost: Vec<f64>,
    discount: f64,
    start: usize,
) -> Result<LsiModel> {
    let na = p_obs.len();
    let no = g.len();
    let mut kernel = Vec::with_capacity(na * no * n_unobs * no * n_unobs);
    for row_a in p_obs {
        for row in row_a {
            for _xu in 0..n_unobs {
                for (xo2, &p) in row.iter().enumerate() {
                    for xu2 in 0..n_unobs {
                        kernel.push(if xu2 == g[xo2] { p } else { 0.0 });
                    }
                }
            }
        }
    }
    let mut alpha_obs = vec![0.0; no];
    alpha_obs[start] = 1.0;
    let mut alpha_unobs = vec![0.0; n_unobs];
    alpha_unobs[g[start]] = 1.0;
    LsiModel::new(no, n_unobs, na, kernel, cost, discount, alpha_obs, alpha_unobs)
}
