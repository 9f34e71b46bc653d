//! Subcommand implementations: setting resolution, seed loops, CSV emission.
//!
//! Every command reads an optional `--config` key-value file and lets
//! command-line flags override file entries. Numeric output goes through
//! `Display`, which keeps the CSV artifacts byte-identical across runs with
//! the same inputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rcrl::config::KvMap;
use rcrl::duality::{self, CounterexampleParams};
use rcrl::eval::{
    induced_worst_case_kernel, robust_value_fixed_point, DEFAULT_EVAL_MAX_ITER,
};
use rcrl::gridworld::{assumption_diagnostics, build_gridworld, GridMode, GridworldSpec};
use rcrl::occupancy::{nominal_value, value_at_initial, value_under_kernel};
use rcrl::opt::{
    crpo_train, initial_policy, rrpo_train, ConstraintPick, EvalMode, RRPOConfig, TrainingTrace,
};
use rcrl::uncertainty::NormOrder;
use rcrl::{PNormUncertainty, RcrlError, Result, SoftmaxPolicy, TabularRCMDP};

use crate::{DiagnosticsArgs, DualityArgs, EvaluateArgs, TrainArgs};

/// Process exit code for a hard error: 4 when training found no feasible
/// policy, 2 for everything else (bad configuration, I/O, numerics).
pub fn exit_code(err: &RcrlError) -> u8 {
    match err {
        RcrlError::NoFeasiblePolicy { .. } => 4,
        _ => 2,
    }
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn load_map(path: &Option<PathBuf>) -> Result<KvMap> {
    match path {
        Some(p) => KvMap::parse(&fs::read_to_string(p)?),
        None => Ok(KvMap::new()),
    }
}

fn pick_f64(flag: Option<f64>, map: &KvMap, key: &str, default: f64) -> Result<f64> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(map.get_f64(key)?.unwrap_or(default)),
    }
}

fn pick_usize(flag: Option<usize>, map: &KvMap, key: &str, default: usize) -> Result<usize> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(map.get_usize(key)?.unwrap_or(default)),
    }
}

fn pick_str(flag: &Option<String>, map: &KvMap, key: &str, default: &str) -> String {
    flag.clone()
        .or_else(|| map.get(key).map(str::to_string))
        .unwrap_or_else(|| default.to_string())
}

/// An environment resolved from settings: the training model, the optional
/// slippery test model, and the uncertainty set used for robust evaluation.
pub struct ResolvedEnv {
    pub train: TabularRCMDP,
    pub slippery: Option<TabularRCMDP>,
    pub set: PNormUncertainty,
}

fn counterexample_params(map: &KvMap, rho_flag: Option<f64>) -> Result<CounterexampleParams> {
    let p_lo = map.get_f64("counterexample.p_lo")?.unwrap_or(0.25);
    let p_hi = map.get_f64("counterexample.p_hi")?.unwrap_or(0.75);
    let gamma = map.get_f64("counterexample.gamma")?.unwrap_or(0.5);
    let rho = match rho_flag {
        Some(r) => r,
        None => map.get_f64("counterexample.rho")?.unwrap_or(0.2),
    };
    match map.get_f64("counterexample.p")? {
        Some(p) => CounterexampleParams::new(p, p_lo, p_hi, gamma, rho),
        None => CounterexampleParams::symmetric(p_lo, p_hi, gamma, rho),
    }
}

pub fn resolve_env(map: &KvMap, args: &crate::EnvArgs) -> Result<ResolvedEnv> {
    let name = pick_str(&args.env, map, "env", "gridworld");
    match name.as_str() {
        "counterexample" => {
            let params = counterexample_params(map, args.rho)?;
            let (train, set) = duality::build_counterexample(&params)?;
            Ok(ResolvedEnv {
                train,
                slippery: None,
                set,
            })
        }
        "gridworld" => {
            let spec = GridworldSpec::from_map(map)?;
            let train = build_gridworld(&spec, GridMode::Train)?;
            let slippery = build_gridworld(&spec, GridMode::Test)?;
            let norm = NormOrder::parse(&pick_str(&args.p, map, "uncertainty.p", "2"))?;
            let beta = pick_f64(args.beta, map, "uncertainty.beta", 0.05)?;
            let set = PNormUncertainty::new(norm, beta)?;
            Ok(ResolvedEnv {
                train,
                slippery: Some(slippery),
                set,
            })
        }
        other => Err(RcrlError::InvalidArgument(format!(
            "unknown environment `{other}`; expected `counterexample` or `gridworld`"
        ))),
    }
}

fn parse_eval_mode(token: &str) -> Result<EvalMode> {
    match token {
        "exact" => Ok(EvalMode::Exact),
        "td" => Ok(EvalMode::Td),
        other => Err(RcrlError::InvalidArgument(format!(
            "unknown evaluation mode `{other}`; expected `exact` or `td`"
        ))),
    }
}

fn parse_pick(token: &str) -> Result<ConstraintPick> {
    match token {
        "first" => Ok(ConstraintPick::LowestIndex),
        "random" => Ok(ConstraintPick::Random),
        other => Err(RcrlError::InvalidArgument(format!(
            "unknown constraint pick `{other}`; expected `first` or `random`"
        ))),
    }
}

struct TrainSetup {
    algo: String,
    config: RRPOConfig,
    seeds: Vec<u64>,
}

fn resolve_training(map: &KvMap, args: &TrainArgs) -> Result<TrainSetup> {
    let algo = pick_str(&args.algo, map, "algo", "rrpo");
    if algo != "rrpo" && algo != "crpo" {
        return Err(RcrlError::InvalidArgument(format!(
            "unknown algorithm `{algo}`; expected `rrpo` or `crpo`"
        )));
    }
    let mut config = RRPOConfig::default();
    config.eta = pick_f64(args.eta, map, "train.eta", config.eta)?;
    config.delta = pick_f64(args.delta, map, "train.delta", config.delta)?;
    config.iterations = pick_usize(args.iterations, map, "train.iterations", 4000)?;
    config.eval_mode = parse_eval_mode(&pick_str(&args.eval_mode, map, "train.eval_mode", "exact"))?;
    config.eval_tol = map.get_f64("train.eval_tol")?.unwrap_or(config.eval_tol);
    config.eval_max_iter = map
        .get_usize("train.eval_max_iter")?
        .unwrap_or(config.eval_max_iter);
    config.td_steps = map.get_usize("train.td_steps")?.unwrap_or(config.td_steps);
    config.td_a0 = map.get_f64("train.td_a0")?.unwrap_or(config.td_a0);
    config.td_k0 = map.get_f64("train.td_k0")?.unwrap_or(config.td_k0);
    config.init_logit_noise =
        pick_f64(args.init_noise, map, "train.init_noise", config.init_logit_noise)?;
    config.constraint_pick = parse_pick(&pick_str(&args.pick, map, "train.pick", "first"))?;
    if config.iterations > 0 {
        config.validate()?;
    } else {
        // An iteration budget of zero means "evaluate the initial policy";
        // validate the remaining fields against a unit budget.
        let mut probe = config.clone();
        probe.iterations = 1;
        probe.validate()?;
    }
    let seeds = if !args.seeds.is_empty() {
        args.seeds.clone()
    } else {
        map.get_u64_list("train.seeds")?.unwrap_or_else(|| vec![0])
    };
    Ok(TrainSetup { algo, config, seeds })
}

struct SeedOutcome {
    seed: u64,
    feasible: bool,
    trace_csv: String,
    policy_text: String,
    summary_row: String,
    note: String,
}

fn trace_csv(trace: &TrainingTrace, num_rewards: usize) -> String {
    let mut out = String::from("iter,branch");
    for i in 0..num_rewards {
        out.push_str(&format!(",V_{i}"));
    }
    out.push_str(",d_0\n");
    for (t, rec) in trace.records.iter().enumerate() {
        out.push_str(&format!("{t},{}", rec.branch.label()));
        for v in &rec.values {
            out.push(',');
            out.push_str(&fmt(*v));
        }
        out.push(',');
        out.push_str(&fmt(rec.d0));
        out.push('\n');
    }
    out
}

fn run_seed(env: &ResolvedEnv, algo: &str, base: &RRPOConfig, seed: u64) -> Result<SeedOutcome> {
    let mdp = &env.train;
    let mut config = base.clone();
    config.seed = seed;

    let (policy, trace, trained_ok) = if config.iterations == 0 {
        let policy = initial_policy(mdp.num_states(), mdp.num_actions(), &config)?;
        (policy, TrainingTrace::default(), true)
    } else {
        let outcome = match algo {
            "rrpo" => rrpo_train(mdp, &env.set, &config),
            _ => crpo_train(mdp, &env.set, &config),
        };
        match outcome {
            Ok(result) => (result.policy, result.trace, true),
            Err(RcrlError::NoFeasiblePolicy {
                last_logits, trace, ..
            }) => {
                let policy =
                    SoftmaxPolicy::from_logits(mdp.num_states(), mdp.num_actions(), last_logits)?;
                (policy, trace, false)
            }
            Err(err) => return Err(err),
        }
    };

    // Final evaluations at a tight tolerance, independent of the training
    // evaluation mode.
    let tol = 1e-10;
    let mut robust = Vec::with_capacity(mdp.num_rewards());
    for i in 0..mdp.num_rewards() {
        robust.push(robust_value_fixed_point(
            mdp,
            &env.set,
            &policy,
            i,
            tol,
            DEFAULT_EVAL_MAX_ITER,
        )?);
    }
    let v0_nominal = value_at_initial(mdp, &nominal_value(mdp, &policy, 0)?);
    let induced = induced_worst_case_kernel(mdp, &env.set, &robust[0].values)?;
    let v0_worst = value_at_initial(mdp, &value_under_kernel(mdp, &induced.kernel, &policy, 0)?);
    let cost_nominal = -value_at_initial(mdp, &nominal_value(mdp, &policy, 1)?);
    let cost_worst = -value_at_initial(mdp, &robust[1].values);
    let cost_slippery = match &env.slippery {
        Some(test) => -value_at_initial(test, &nominal_value(test, &policy, 1)?),
        None => f64::NAN,
    };

    let mut feasible = trained_ok;
    for (i, table) in robust.iter().enumerate().skip(1) {
        let v = value_at_initial(mdp, &table.values);
        if v < mdp.threshold(i) - config.delta {
            feasible = false;
        }
    }

    let summary_row = format!(
        "{seed},{algo},{},{},{},{},{},{feasible}\n",
        fmt(v0_nominal),
        fmt(v0_worst),
        fmt(cost_nominal),
        fmt(cost_worst),
        fmt(cost_slippery),
    );
    let note = format!(
        "seed {seed}: {algo} V_0={} cost_worst={} feasible={feasible}",
        fmt(v0_nominal),
        fmt(cost_worst),
    );
    Ok(SeedOutcome {
        seed,
        feasible,
        trace_csv: trace_csv(&trace, mdp.num_rewards()),
        policy_text: policy.to_text(),
        summary_row,
        note,
    })
}

pub fn run_train(args: TrainArgs) -> Result<u8> {
    let map = load_map(&args.common.config)?;
    let env = resolve_env(&map, &args.env)?;
    let setup = resolve_training(&map, &args)?;
    fs::create_dir_all(&args.common.out)?;

    let outcomes: Vec<Result<SeedOutcome>> = setup
        .seeds
        .par_iter()
        .map(|&seed| run_seed(&env, &setup.algo, &setup.config, seed))
        .collect();

    let mut summary =
        String::from("seed,algo,V_0_nominal,V_0_worst,cost_nominal,cost_worst,cost_slippery,feasible_flag\n");
    let mut feasible_count = 0usize;
    let mut resolved = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        resolved.push(outcome?);
    }
    for o in &resolved {
        fs::write(
            args.common.out.join(format!("trace_{}_seed{}.csv", setup.algo, o.seed)),
            &o.trace_csv,
        )?;
        fs::write(
            args.common.out.join(format!("policy_{}_seed{}.txt", setup.algo, o.seed)),
            &o.policy_text,
        )?;
        summary.push_str(&o.summary_row);
        if o.feasible {
            feasible_count += 1;
        }
        println!("{}", o.note);
    }
    let summary_path = args.common.out.join("summary.csv");
    fs::write(&summary_path, &summary)?;
    println!(
        "wrote {} seed(s) to {}",
        resolved.len(),
        summary_path.display()
    );

    Ok(if feasible_count == resolved.len() {
        0
    } else if feasible_count == 0 {
        4
    } else {
        3
    })
}

pub fn run_duality(args: DualityArgs) -> Result<u8> {
    let map = load_map(&args.common.config)?;
    let p_lo = pick_f64(args.p_lo, &map, "counterexample.p_lo", 0.25)?;
    let p_hi = pick_f64(args.p_hi, &map, "counterexample.p_hi", 0.75)?;
    let gamma = pick_f64(args.gamma, &map, "counterexample.gamma", 0.5)?;
    let rho = pick_f64(args.rho, &map, "counterexample.rho", 1.0)?;
    let params = match args.p {
        Some(p) => CounterexampleParams::new(p, p_lo, p_hi, gamma, rho)?,
        None => match map.get_f64("counterexample.p")? {
            Some(p) => CounterexampleParams::new(p, p_lo, p_hi, gamma, rho)?,
            None => CounterexampleParams::symmetric(p_lo, p_hi, gamma, rho)?,
        },
    };
    let report = duality::primal_dual_analytic(&params)?;
    let pi_grid = pick_usize(args.pi_grid, &map, "oracle.pi_grid", 10_000)?;
    let lambda_grid = pick_usize(args.lambda_grid, &map, "oracle.lambda_grid", 10_000)?;
    let lambda_max = match args.lambda_max {
        Some(v) => Some(v),
        None => map.get_f64("oracle.lambda_max")?,
    };
    let oracle = duality::numeric_oracle(&params, pi_grid, lambda_grid, lambda_max)?;

    fs::create_dir_all(&args.common.out)?;
    let mut csv =
        String::from("primal,dual,lambda_hat,gap,pi1_star,pi1_feasible,primal_num,dual_num\n");
    csv.push_str(&format!(
        "{},{},{},{},{},{},{},{}\n",
        fmt(report.primal),
        fmt(report.dual),
        fmt(report.lambda_hat),
        fmt(report.gap),
        fmt(report.pi1_star),
        report.pi1_feasible,
        fmt(oracle.primal),
        fmt(oracle.dual),
    ));
    fs::write(args.common.out.join("duality.csv"), &csv)?;

    println!(
        "primal {}  dual {}  gap {}  lambda_hat {}",
        fmt(report.primal),
        fmt(report.dual),
        fmt(report.gap),
        fmt(report.lambda_hat)
    );
    println!(
        "oracle primal {}  oracle dual {}  ({pi_grid}x{lambda_grid} grid)",
        fmt(oracle.primal),
        fmt(oracle.dual)
    );
    Ok(0)
}

fn kernel_text(mdp: &TabularRCMDP, kernel: &[f64]) -> String {
    let n = mdp.num_states();
    let mut out = String::new();
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let row = &kernel[(s * mdp.num_actions() + a) * n..(s * mdp.num_actions() + a + 1) * n];
            out.push_str(&format!("{s} {a} {}\n", rcrl::config::join_numbers(row)));
        }
    }
    out
}

fn load_policy(path: &Path, mdp: &TabularRCMDP) -> Result<SoftmaxPolicy> {
    let policy = SoftmaxPolicy::from_text(&fs::read_to_string(path)?)?;
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(RcrlError::InvalidArgument(format!(
            "policy shape {}x{} does not match the environment {}x{}",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(policy)
}

pub fn run_evaluate(args: EvaluateArgs) -> Result<u8> {
    let map = load_map(&args.common.config)?;
    let env = resolve_env(&map, &args.env)?;
    let mdp = &env.train;
    let policy = load_policy(&args.policy, mdp)?;

    let requested: Vec<String> = if !args.kernels.is_empty() {
        args.kernels.clone()
    } else if let Some(s) = map.get("eval.kernels") {
        s.split_whitespace().map(str::to_string).collect()
    } else {
        let mut v = vec!["nominal".to_string(), "worst-case".to_string()];
        if env.slippery.is_some() {
            v.push("slippery".to_string());
        }
        v
    };

    fs::create_dir_all(&args.common.out)?;
    let mut csv = String::from("kernel,reward,value,cost\n");
    for kernel in &requested {
        match kernel.as_str() {
            "nominal" => {
                for i in 0..mdp.num_rewards() {
                    let v = value_at_initial(mdp, &nominal_value(mdp, &policy, i)?);
                    csv.push_str(&format!("nominal,{i},{},{}\n", fmt(v), fmt(-v)));
                }
            }
            "worst-case" => {
                for i in 0..mdp.num_rewards() {
                    let table = robust_value_fixed_point(
                        mdp,
                        &env.set,
                        &policy,
                        i,
                        1e-10,
                        DEFAULT_EVAL_MAX_ITER,
                    )?;
                    let v = value_at_initial(mdp, &table.values);
                    csv.push_str(&format!("worst-case,{i},{},{}\n", fmt(v), fmt(-v)));
                    if args.dump_kernels {
                        let induced = induced_worst_case_kernel(mdp, &env.set, &table.values)?;
                        fs::write(
                            args.common.out.join(format!("induced_kernel_r{i}.txt")),
                            kernel_text(mdp, &induced.kernel),
                        )?;
                    }
                }
            }
            "slippery" => {
                let test = env.slippery.as_ref().ok_or_else(|| {
                    RcrlError::InvalidArgument(
                        "the slippery kernel is only defined for the gridworld".to_string(),
                    )
                })?;
                for i in 0..test.num_rewards() {
                    let v = value_at_initial(test, &nominal_value(test, &policy, i)?);
                    csv.push_str(&format!("slippery,{i},{},{}\n", fmt(v), fmt(-v)));
                }
            }
            other => {
                return Err(RcrlError::InvalidArgument(format!(
                    "unknown kernel `{other}`; expected `nominal`, `worst-case`, or `slippery`"
                )))
            }
        }
    }
    fs::write(args.common.out.join("evaluation.csv"), &csv)?;
    print!("{csv}");
    Ok(0)
}

pub fn run_diagnostics(args: DiagnosticsArgs) -> Result<u8> {
    let map = load_map(&args.common.config)?;
    let env = resolve_env(&map, &args.env)?;
    let mdp = &env.train;
    let policy = match &args.policy {
        Some(path) => load_policy(path, mdp)?,
        None => SoftmaxPolicy::uniform(mdp.num_states(), mdp.num_actions()),
    };
    let report = assumption_diagnostics(mdp, &env.set, &policy)?;

    fs::create_dir_all(&args.common.out)?;
    let mut csv =
        String::from("min_visitation,min_state,diameter_bound,simplex_violations,max_abs_reward\n");
    csv.push_str(&format!(
        "{},{},{},{},{}\n",
        fmt(report.min_visitation),
        report.min_state,
        fmt(report.diameter_bound),
        report.simplex_violations,
        fmt(report.max_abs_reward),
    ));
    fs::write(args.common.out.join("diagnostics.csv"), &csv)?;

    println!(
        "min visitation {} at state {}; diameter bound {}; {} induced row(s) left the simplex; max |r| {}",
        fmt(report.min_visitation),
        report.min_state,
        fmt(report.diameter_bound),
        report.simplex_violations,
        fmt(report.max_abs_reward)
    );
    if report.min_visitation < 1e-9 {
        println!(
            "warning: state {} is effectively unvisited under this policy",
            report.min_state
        );
    }
    Ok(0)
}
