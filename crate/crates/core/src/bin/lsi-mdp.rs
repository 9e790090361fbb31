use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use lsi_mdp::approx::solve_virtual;
use lsi_mdp::belief::{reachable_beliefs, Belief, DEFAULT_DEDUP_TOL, DEFAULT_MAX_NODES};
use lsi_mdp::belief_dp::{solve_belief_dp, BeliefDpReport, DEFAULT_ACCURACY, DEFAULT_MAX_MEMO, DEFAULT_QUANT_TOL};
use lsi_mdp::bounds::{gap_report, verify_belief_gap, verify_full_info_gap};
use lsi_mdp::constrained::{audit_policy, solve_constrained_dual, solve_constrained_primal};
use lsi_mdp::full_info::solve_full_info;
use lsi_mdp::mdp::Policy;
use lsi_mdp::model::{load_model, LsiModel};
use lsi_mdp::report::{compare, policy_from_json, policy_to_json, render_table, ModelSummary, Settings, DEFAULT_DEPTH, DEFAULT_TOL};
use lsi_mdp::sim::{episode_totals, summarize_paired, totals_csv, SimConfig, SimPolicy, DEFAULT_EPISODES, DEFAULT_SEED};
use lsi_mdp::{Error, Result};

/// Solvers for discounted MDPs with an observed and a hidden state component.
#[derive(Parser)]
#[command(name = "lsi-mdp", version)]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    format: Format,
    /// Write output here instead of stdout (written to a temporary file, then renamed).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Method {
    Full,
    Virtual,
    BeliefDp,
    Constrained,
}

#[derive(Args, Clone, Copy)]
struct SolverArgs {
    /// Value-iteration tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Truncation accuracy of the belief DP.
    #[arg(long, default_value_t = DEFAULT_ACCURACY)]
    accuracy: f64,
    /// Belief quantization step of the belief DP (0 keys on exact bits).
    #[arg(long, default_value_t = DEFAULT_QUANT_TOL)]
    quant_tol: f64,
    /// Maximum number of belief-DP memo entries.
    #[arg(long, default_value_t = DEFAULT_MAX_MEMO)]
    max_memo: usize,
}

#[derive(Args, Clone, Copy)]
struct SimArgs {
    #[arg(long, default_value_t = DEFAULT_EPISODES)]
    episodes: usize,
    /// Steps per episode [default: bias below 1e-6, or the DP horizon for belief-feedback policies].
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and print its dimensions.
    Validate { model: PathBuf },
    /// Solve a model with one method.
    Solve {
        model: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Gap constants and bound checks.
    Bounds {
        model: PathBuf,
        /// Depth of the enumerated belief set.
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Monte Carlo evaluation of a policy on the true system.
    Simulate {
        model: PathBuf,
        /// A method name (full, virtual, belief-dp, constrained) or a policy / solve-output file.
        #[arg(long)]
        policy: String,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also write per-episode totals as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run every method and cross-check the results.
    Compare {
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Include wall-clock timings (makes output run-dependent).
        #[arg(long)]
        timings: bool,
    },
}

fn settings(solver: &SolverArgs, sim: Option<&SimArgs>, depth: usize) -> Settings {
    let d = Settings::default();
    Settings {
        tol: solver.tol,
        accuracy: solver.accuracy,
        quant_tol: solver.quant_tol,
        max_memo: solver.max_memo,
        depth,
        episodes: sim.map_or(d.episodes, |s| s.episodes),
        seed: sim.map_or(d.seed, |s| s.seed),
        horizon: sim.and_then(|s| s.horizon),
    }
}

fn solve(model: &LsiModel, method: Method, s: &Settings) -> Result<Value> {
    Ok(match method {
        Method::Full => {
            let f = solve_full_info(model, s.tol)?;
            json!({
                "method": "full",
                "settings": s,
                "policy_scope": "joint",
                "value": f.weighted_value,
                "per_obs_values": f.per_obs_values,
                "values": f.solution.value.values,
                "policy": policy_to_json(&f.solution.policy),
                "value_iteration": f.solution.weighted_vi,
                "primal_lp": f.solution.primal_lp,
                "dual_lp": f.solution.dual_lp,
                "iterations": f.solution.iterations,
            })
        }
        Method::Virtual => {
            let b0 = Belief::initial(model);
            let v = solve_virtual(model, &b0, s.tol)?;
            json!({
                "method": "virtual",
                "settings": s,
                "policy_scope": "observable",
                "frozen_belief": b0,
                "value": v.weighted_vi,
                "values": v.value.values,
                "policy": policy_to_json(&v.policy),
                "value_iteration": v.weighted_vi,
                "primal_lp": v.primal_lp,
                "dual_lp": v.dual_lp,
                "iterations": v.iterations,
                "occupation": v.occupation,
            })
        }
        Method::BeliefDp => {
            let r = solve_belief_dp(model, &s.dp_config())?;
            json!({
                "method": "belief-dp",
                "settings": s,
                "value": r.weighted_value,
                "report": r,
            })
        }
        Method::Constrained => {
            let d = solve_constrained_dual(model)?;
            let p = solve_constrained_primal(model)?;
            let audit = audit_policy(model, &d.policy)?;
            json!({
                "method": "constrained",
                "settings": s,
                "policy_scope": "observable",
                "value": d.objective,
                "policy": policy_to_json(&d.policy),
                "audit": audit,
                "occupation": d.occupation,
                "primal": p,
            })
        }
    })
}

enum LoadedPolicy {
    Local(Policy),
    Joint(Policy),
    Belief(Box<BeliefDpReport>),
    Sequence(Vec<usize>),
}

fn load_policy(model: &LsiModel, spec: &str, s: &Settings) -> Result<(LoadedPolicy, Value)> {
    let (no, nu, na) = (model.n_obs(), model.n_unobs(), model.n_actions());
    let method = match spec {
        "full" => Some(Method::Full),
        "virtual" => Some(Method::Virtual),
        "belief-dp" => Some(Method::BeliefDp),
        "constrained" => Some(Method::Constrained),
        _ => None,
    };
    let doc = match method {
        Some(m) => solve(model, m, s)?,
        None => {
            let text = fs::read_to_string(spec).map_err(|source| Error::Io {
                path: spec.into(),
                source,
            })?;
            serde_json::from_str::<Value>(&text)?
        }
    };
    let describe = |kind: &str| json!({ "source": spec, "kind": kind });
    if doc.get("method").and_then(Value::as_str) == Some("belief-dp") {
        let report: BeliefDpReport = serde_json::from_value(doc["report"].clone())?;
        return Ok((LoadedPolicy::Belief(Box::new(report)), describe("belief-feedback")));
    }
    if let Some(seq) = doc.get("sequence") {
        let seq: Vec<usize> = serde_json::from_value(seq.clone())?;
        return Ok((LoadedPolicy::Sequence(seq), describe("action-sequence")));
    }
    if let Some(p) = doc.get("policy") {
        if doc.get("policy_scope").and_then(Value::as_str) == Some("joint") {
            return Ok((LoadedPolicy::Joint(policy_from_json(p, no * nu, na)?), describe("joint")));
        }
        return Ok((LoadedPolicy::Local(policy_from_json(p, no, na)?), describe("local")));
    }
    Ok((LoadedPolicy::Local(policy_from_json(&doc, no, na)?), describe("local")))
}

fn simulate(model: &LsiModel, spec: &str, s: &Settings, csv: Option<&Path>) -> Result<Value> {
    let (loaded, description) = load_policy(model, spec, s)?;
    let mut config: SimConfig = s.sim_config(model);
    let policy = match &loaded {
        LoadedPolicy::Local(p) => SimPolicy::Local(p.clone()),
        LoadedPolicy::Joint(p) => SimPolicy::Joint(p.clone()),
        LoadedPolicy::Sequence(q) => SimPolicy::ActionSequence(q.clone()),
        LoadedPolicy::Belief(r) => {
            if s.horizon.is_none() {
                config.horizon = r.horizon.max(1);
            }
            SimPolicy::BeliefFeedback(r)
        }
    };
    let totals = episode_totals(model, &policy, &config)?;
    if let Some(path) = csv {
        write_atomic(path, &totals_csv(&totals))?;
    }
    let paired = summarize_paired(&totals, model, &config);
    Ok(json!({
        "policy": description,
        "config": config,
        "result": paired.true_cost,
        "belief_objective": paired.belief_cost,
        "paired_difference": { "mean": paired.diff_mean, "std_error": paired.diff_std_error },
    }))
}

fn bounds(model: &LsiModel, s: &Settings) -> Result<Value> {
    let graph = reachable_beliefs(model, s.depth, DEFAULT_DEDUP_TOL, DEFAULT_MAX_NODES);
    let gaps = gap_report(model, &graph);
    let full = verify_full_info_gap(model, s.tol).map_err(|e| e.to_string());
    let belief = solve_belief_dp(model, &s.dp_config())
        .and_then(|r| verify_belief_gap(model, s.tol, &r, &r.graph))
        .map_err(|e| e.to_string());
    Ok(json!({
        "settings": s,
        "gaps": gaps,
        "full_info_gap": full,
        "belief_gap": belief,
    }))
}

fn run(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Validate { model } => {
            let m = load_model(model)?;
            Ok(json!({ "valid": true, "model": ModelSummary::of(&m) }))
        }
        Command::Solve { model, method, solver } => {
            let m = load_model(model)?;
            solve(&m, *method, &settings(solver, None, DEFAULT_DEPTH))
        }
        Command::Bounds { model, depth, solver } => {
            let m = load_model(model)?;
            bounds(&m, &settings(solver, None, *depth))
        }
        Command::Simulate {
            model,
            policy,
            sim,
            solver,
            csv,
        } => {
            let m = load_model(model)?;
            simulate(&m, policy, &settings(solver, Some(sim), DEFAULT_DEPTH), csv.as_deref())
        }
        Command::Compare {
            model,
            depth,
            solver,
            sim,
            timings,
        } => {
            let m = load_model(model)?;
            let report = compare(&m, &settings(solver, Some(sim), *depth), *timings)?;
            Ok(serde_json::to_value(report)?)
        }
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let result = fs::write(&tmp, text).and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let value = match run(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_validation() { 1 } else { 2 });
        }
    };
    let text = match cli.format {
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&value).expect("JSON value serializes")),
        Format::Table => render_table(&value),
    };
    match &cli.out {
        Some(path) => {
            if let Err(e) = write_atomic(path, &text) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
        None => {
            let _ = std::io::stdout().write_all(text.as_bytes());
        }
    }
    ExitCode::SUCCESS
}
