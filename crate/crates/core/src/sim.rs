//! Seeded Monte Carlo on the true joint chain.
//!
//! Episode `i` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `i`,
//! so results do not depend on how episodes are scheduled across threads.
//! Every episode accumulates two totals along the same sampled path: the
//! realised cost `c(x_o, x_u, a)` and the belief-averaged cost
//! `c_bar(x_o, b, a)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{belief_update, expected_cost, Belief};
use crate::belief_dp::{belief_policy_action_at, BeliefDpReport};
use crate::error::{Error, Result};
use crate::full_info::JointIndexMap;
use crate::mdp::Policy;
use crate::model::LsiModel;

pub const DEFAULT_EPISODES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 0;
/// Target truncation bias for [`default_horizon`].
pub const DEFAULT_BIAS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum SimPolicy<'a> {
    /// Stationary feedback on `x_o`.
    Local(Policy),
    /// Stationary feedback on the joint state.
    Joint(Policy),
    /// Greedy actions of a solved belief DP, looked up along the tracked belief.
    BeliefFeedback(&'a BeliefDpReport),
    /// Open-loop actions; the last one repeats.
    ActionSequence(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTotals {
    pub true_cost: f64,
    pub belief_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mean: f64,
    pub std_error: f64,
    /// `beta^H c_max / (1 - beta)`.
    pub truncation_bias_bound: f64,
    pub episodes_run: usize,
    pub horizon: usize,
    pub seed: u64,
}

/// Smallest `H >= 1` with `beta^H c_max / (1 - beta) <= eps`.
pub fn default_horizon(model: &LsiModel, eps: f64) -> usize {
    let (beta, c_max) = (model.discount(), model.max_cost());
    if beta == 0.0 || c_max == 0.0 {
        return 1;
    }
    let h = ((eps * (1.0 - beta) / c_max).ln() / beta.ln()).ceil();
    (h.max(1.0)) as usize
}

fn truncation_bias(model: &LsiModel, horizon: usize) -> f64 {
    model.discount().powi(horizon as i32) * model.max_cost() / (1.0 - model.discount())
}

/// Inverse-CDF draw with index-ascending cumulative sums.
fn sample(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn validate(model: &LsiModel, policy: &SimPolicy, config: &SimConfig) -> Result<()> {
    if config.episodes == 0 || config.horizon == 0 {
        return Err(Error::InvalidArgument("episodes and horizon must be at least 1".into()));
    }
    match policy {
        SimPolicy::Local(p) => p.validate(model.n_obs(), model.n_actions()),
        SimPolicy::Joint(p) => p.validate(model.n_obs() * model.n_unobs(), model.n_actions()),
        SimPolicy::BeliefFeedback(r) => {
            if r.n_unobs != model.n_unobs() || r.root_values.len() != model.n_obs() {
                return Err(Error::Dimension("belief policy was solved for a different model".into()));
            }
            Ok(())
        }
        SimPolicy::ActionSequence(seq) => {
            if seq.is_empty() {
                return Err(Error::InvalidArgument("action sequence is empty".into()));
            }
            match seq.iter().find(|&&a| a >= model.n_actions()) {
                Some(a) => Err(Error::InvalidArgument(format!("action {a} out of range"))),
                None => Ok(()),
            }
        }
    }
}

fn run_episode(model: &LsiModel, policy: &SimPolicy, config: &SimConfig, episode: usize) -> Result<EpisodeTotals> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(episode as u64);
    let map = JointIndexMap::of(model);
    let nu = model.n_unobs();
    let beta = model.discount();
    let mut xo = sample(model.alpha_obs(), rng.gen());
    let mut xu = sample(model.alpha_unobs(), rng.gen());
    let mut b = Belief::initial(model);
    let mut weight = 1.0;
    let mut totals = EpisodeTotals {
        true_cost: 0.0,
        belief_cost: 0.0,
    };
    for t in 0..config.horizon {
        let a = match policy {
            SimPolicy::Local(Policy::Deterministic(table)) => table[xo],
            SimPolicy::Local(p) => sample(&p.action_probs(xo, model.n_actions()), rng.gen()),
            SimPolicy::Joint(Policy::Deterministic(table)) => table[map.encode(xo, xu)],
            SimPolicy::Joint(p) => sample(&p.action_probs(map.encode(xo, xu), model.n_actions()), rng.gen()),
            SimPolicy::BeliefFeedback(report) => {
                belief_policy_action_at(report, xo, t, &b).map_err(|e| match e {
                    Error::KeyNotCovered { x_o, distance, radius, .. } => Error::KeyNotCovered {
                        x_o,
                        distance,
                        radius,
                        episode: Some(episode),
                    },
                    other => other,
                })?
            }
            SimPolicy::ActionSequence(seq) => seq[t.min(seq.len() - 1)],
        };
        totals.true_cost += weight * model.cost(a, xo, xu);
        totals.belief_cost += weight * expected_cost(model, &b, xo, a);
        let next = sample(model.kernel_row(a, xo, xu), rng.gen());
        let (xo2, xu2) = (next / nu, next % nu);
        if t + 1 < config.horizon {
            b = belief_update(model, &b, xo, a, xo2)?;
        }
        xo = xo2;
        xu = xu2;
        weight *= beta;
    }
    Ok(totals)
}

/// Per-episode totals in episode order.
pub fn episode_totals(model: &LsiModel, policy: &SimPolicy, config: &SimConfig) -> Result<Vec<EpisodeTotals>> {
    validate(model, policy, config)?;
    let results: Vec<Result<EpisodeTotals>> = (0..config.episodes)
        .into_par_iter()
        .map(|i| run_episode(model, policy, config, i))
        .collect();
    results.into_iter().collect()
}

fn summarize(xs: impl Iterator<Item = f64> + Clone, n: usize, model: &LsiModel, config: &SimConfig) -> SimResult {
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    SimResult {
        mean,
        std_error: (var / n as f64).sqrt(),
        truncation_bias_bound: truncation_bias(model, config.horizon),
        episodes_run: n,
        horizon: config.horizon,
        seed: config.seed,
    }
}

/// Discounted realised cost.
pub fn simulate(model: &LsiModel, policy: &SimPolicy, config: &SimConfig) -> Result<SimResult> {
    Ok(simulate_paired(model, policy, config)?.true_cost)
}

/// Discounted belief-averaged cost along the same sampled paths.
pub fn simulate_belief_objective(model: &LsiModel, policy: &SimPolicy, config: &SimConfig) -> Result<SimResult> {
    Ok(simulate_paired(model, policy, config)?.belief_cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedResult {
    pub true_cost: SimResult,
    pub belief_cost: SimResult,
    /// Mean of the per-episode differences.
    pub diff_mean: f64,
    pub diff_std_error: f64,
}

pub fn simulate_paired(model: &LsiModel, policy: &SimPolicy, config: &SimConfig) -> Result<PairedResult> {
    let totals = episode_totals(model, policy, config)?;
    Ok(summarize_paired(&totals, model, config))
}

pub fn summarize_paired(totals: &[EpisodeTotals], model: &LsiModel, config: &SimConfig) -> PairedResult {
    let n = totals.len();
    let diff = summarize(totals.iter().map(|t| t.true_cost - t.belief_cost), n, model, config);
    PairedResult {
        true_cost: summarize(totals.iter().map(|t| t.true_cost), n, model, config),
        belief_cost: summarize(totals.iter().map(|t| t.belief_cost), n, model, config),
        diff_mean: diff.mean,
        diff_std_error: diff.std_error,
    }
}

pub fn totals_csv(totals: &[EpisodeTotals]) -> String {
    let mut out = String::from("episode,true_cost,belief_cost\n");
    for (i, t) in totals.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", t.true_cost, t.belief_cost));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constrained::audit_policy;
    use crate::fixtures::{random_factored_model, example_model, with_unobs_independent_cost, UnobsKind};
    use crate::model::FactoredKernel;

    fn cfg(episodes: usize, horizon: usize) -> SimConfig {
        SimConfig {
            episodes,
            horizon,
            seed: 7,
        }
    }

    #[test]
    fn inverse_cdf() {
        assert_eq!(sample(&[0.2, 0.3, 0.5], 0.0), 0);
        assert_eq!(sample(&[0.2, 0.3, 0.5], 0.2), 1);
        assert_eq!(sample(&[0.2, 0.3, 0.5], 0.999_999), 2);
        assert_eq!(sample(&[0.5, 0.5, 0.0], 1.0 - 1e-17), 1);
    }

    #[test]
    fn deterministic_scalar_sum() {
        let m = LsiModel::new(1, 1, 1, vec![1.0], vec![1.0], 0.5, vec![1.0], vec![1.0]).unwrap();
        let r = simulate(&m, &SimPolicy::Local(Policy::constant(1, 0)), &cfg(50, 30)).unwrap();
        assert!((r.mean - (1.0 - 0.5f64.powi(30)) / 0.5).abs() < 1e-15);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn zero_cost_is_exactly_zero() {
        let m = example_model();
        let z = LsiModel::from_factors(m.factors().unwrap().clone(), vec![0.0; 8], 0.5, vec![0.5; 2], vec![0.5; 2]).unwrap();
        let r = simulate(&z, &SimPolicy::Local(Policy::constant(2, 1)), &cfg(100, 20)).unwrap();
        assert_eq!((r.mean, r.std_error), (0.0, 0.0));
    }

    #[test]
    fn bit_identical_reruns() {
        let m = example_model();
        let p = SimPolicy::Local(Policy::Randomized(vec![vec![0.3, 0.7], vec![0.6, 0.4]]));
        let a = episode_totals(&m, &p, &cfg(500, 25)).unwrap();
        let b = episode_totals(&m, &p, &cfg(500, 25)).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| episode_totals(&m, &p, &cfg(500, 25)).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn example_local_policy_matches_exact_value() {
        let m = example_model();
        let policy = Policy::constant(2, 1);
        let exact = audit_policy(&m, &policy).unwrap();
        let r = simulate(&m, &SimPolicy::Local(policy), &cfg(100_000, 40)).unwrap();
        assert!((r.mean - exact).abs() <= 3.0 * r.std_error + r.truncation_bias_bound, "{r:?} vs {exact}");
    }

    #[test]
    fn unobs_independent_cost_gives_identical_totals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let base = random_factored_model(&mut rng, 3, 2, 2, 0.6, UnobsKind::Dense);
        let m = with_unobs_independent_cost(&mut rng, &base);
        let t = episode_totals(&m, &SimPolicy::ActionSequence(vec![0, 1, 1, 0]), &cfg(200, 30)).unwrap();
        for e in t {
            assert!((e.true_cost - e.belief_cost).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_belief_tracks_deterministic_truth() {
        let f = FactoredKernel {
            p_obs: vec![vec![vec![0.4, 0.6], vec![0.9, 0.1]]; 2],
            p_unobs: vec![
                vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
                vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            ],
        };
        let cost = (0..12).map(|i| (i * 7 % 5) as f64).collect();
        let m = LsiModel::from_factors(f, cost, 0.8, vec![0.5, 0.5], vec![0.0, 0.0, 1.0]).unwrap();
        let p = SimPolicy::Local(Policy::Deterministic(vec![1, 0]));
        for e in episode_totals(&m, &p, &cfg(200, 40)).unwrap() {
            assert_eq!(e.true_cost, e.belief_cost);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let m = example_model();
        let p = SimPolicy::ActionSequence(vec![]);
        assert!(simulate(&m, &p, &cfg(10, 10)).is_err());
        let p = SimPolicy::ActionSequence(vec![0]);
        assert!(simulate(&m, &p, &cfg(0, 10)).is_err());
        assert!(simulate(&m, &SimPolicy::Local(Policy::constant(3, 0)), &cfg(1, 1)).is_err());
    }

    #[test]
    fn default_horizon_meets_bias() {
        let m = example_model();
        let h = default_horizon(&m, 1e-6);
        assert!(truncation_bias(&m, h) <= 1e-6);
        assert!(truncation_bias(&m, h - 1) > 1e-6);
    }
}
