//! Model builders shared by the test suites, the acceptance harness and the
//! CLI demos.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::mdp::FiniteMdp;
use crate::model::{FactoredKernel, LsiModel};

/// The two-by-two-by-two worked example: two observable states, two
/// unobservable states, two actions, discount 1/2, uniform initial laws.
pub fn example_factors() -> FactoredKernel {
    FactoredKernel {
        p_obs: vec![
            vec![vec![0.8, 0.2], vec![0.5, 0.5]],
            vec![vec![0.2, 0.8], vec![0.8, 0.2]],
        ],
        p_unobs: vec![
            vec![vec![0.2, 0.8], vec![0.8, 0.2]],
            vec![vec![0.8, 0.2], vec![0.5, 0.5]],
        ],
    }
}

/// Costs `[a][x_o][x_u]` of the worked example.
pub fn example_cost() -> Vec<f64> {
    vec![2.0, 0.2, 1.0, 0.4, 0.7, 0.4, 1.0, 0.4]
}

pub fn example_model() -> LsiModel {
    LsiModel::from_factors(example_factors(), example_cost(), 0.5, vec![0.5, 0.5], vec![0.5, 0.5])
        .expect("worked example is valid")
}

/// How the unobservable factor of a random model is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnobsKind {
    /// Strictly positive random rows; the reachable belief set is usually infinite.
    Dense,
    /// 0/1 rows; beliefs are push-forwards under maps and the set is finite.
    Deterministic,
    /// Every row equal to one random vector, so beliefs jump to it in one step.
    RankOne,
    /// Random permutation matrices.
    Permutation,
}

impl UnobsKind {
    pub const ALL: [UnobsKind; 4] = [
        UnobsKind::Dense,
        UnobsKind::Deterministic,
        UnobsKind::RankOne,
        UnobsKind::Permutation,
    ];
}

pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // exponential spacings give a uniform point on the simplex
    let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-3).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    normalize_last(&mut v);
    v
}

/// Absorbs rounding into the last entry so the row sums to one within an ulp.
fn normalize_last(v: &mut [f64]) {
    let n = v.len();
    let head: f64 = v[..n - 1].iter().sum();
    v[n - 1] = (1.0 - head).max(0.0);
}

pub fn random_stochastic<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| random_distribution(rng, n)).collect()
}

fn random_unobs<R: Rng>(rng: &mut R, n: usize, kind: UnobsKind) -> Vec<Vec<f64>> {
    match kind {
        UnobsKind::Dense => random_stochastic(rng, n),
        UnobsKind::Deterministic => (0..n)
            .map(|_| {
                let mut row = vec![0.0; n];
                row[rng.gen_range(0..n)] = 1.0;
                row
            })
            .collect(),
        UnobsKind::RankOne => {
            let row = random_distribution(rng, n);
            vec![row; n]
        }
        UnobsKind::Permutation => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            perm.iter()
                .map(|&j| {
                    let mut row = vec![0.0; n];
                    row[j] = 1.0;
                    row
                })
                .collect()
        }
    }
}

/// A random factored model with uniform-on-simplex initial laws and costs in `[0, 1)`.
pub fn random_factored_model<R: Rng>(
    rng: &mut R,
    n_obs: usize,
    n_unobs: usize,
    n_actions: usize,
    discount: f64,
    kind: UnobsKind,
) -> LsiModel {
    let factors = FactoredKernel {
        p_obs: (0..n_actions).map(|_| random_stochastic(rng, n_obs)).collect(),
        p_unobs: (0..n_actions)
            .map(|_| random_unobs(rng, n_unobs, kind))
            .collect(),
    };
    let cost = (0..n_actions * n_obs * n_unobs).map(|_| rng.gen::<f64>()).collect();
    let alpha_obs = random_distribution(rng, n_obs);
    let alpha_unobs = random_distribution(rng, n_unobs);
    LsiModel::from_factors(factors, cost, discount, alpha_obs, alpha_unobs)
        .expect("random factored model is valid")
}

/// A random model with a genuinely coupled joint kernel.
pub fn random_joint_model<R: Rng>(
    rng: &mut R,
    n_obs: usize,
    n_unobs: usize,
    n_actions: usize,
    discount: f64,
) -> LsiModel {
    let joint = n_obs * n_unobs;
    let kernel = (0..n_actions * joint)
        .flat_map(|_| random_distribution(rng, joint))
        .collect();
    let cost = (0..n_actions * joint).map(|_| rng.gen::<f64>()).collect();
    LsiModel::new(
        n_obs,
        n_unobs,
        n_actions,
        kernel,
        cost,
        discount,
        random_distribution(rng, n_obs),
        random_distribution(rng, n_unobs),
    )
    .expect("random joint model is valid")
}

/// Replaces the costs of `model` with `cost[a][x_o]`, repeated over `x_u`.
pub fn with_unobs_independent_cost<R: Rng>(rng: &mut R, model: &LsiModel) -> LsiModel {
    let (no, nu, na) = (model.n_obs(), model.n_unobs(), model.n_actions());
    let base: Vec<f64> = (0..na * no).map(|_| rng.gen::<f64>()).collect();
    let cost = (0..na * no * nu).map(|i| base[i / nu]).collect();
    rebuild_with_cost(model, cost)
}

fn rebuild_with_cost(model: &LsiModel, cost: Vec<f64>) -> LsiModel {
    match model.factors() {
        Some(f) => LsiModel::from_factors(
            f.clone(),
            cost,
            model.discount(),
            model.alpha_obs().to_vec(),
            model.alpha_unobs().to_vec(),
        ),
        None => LsiModel::new(
            model.n_obs(),
            model.n_unobs(),
            model.n_actions(),
            model.flat_kernel().to_vec(),
            cost,
            model.discount(),
            model.alpha_obs().to_vec(),
            model.alpha_unobs().to_vec(),
        ),
    }
    .expect("cost replacement keeps the model valid")
}

pub fn random_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, discount: f64) -> FiniteMdp {
    let kernel = (0..n_actions * n_states)
        .flat_map(|_| random_distribution(rng, n_states))
        .collect();
    let cost = (0..n_actions * n_states).map(|_| rng.gen::<f64>()).collect();
    FiniteMdp::new(
        n_states,
        n_actions,
        kernel,
        cost,
        discount,
        random_distribution(rng, n_states),
    )
    .expect("random MDP is valid")
}
