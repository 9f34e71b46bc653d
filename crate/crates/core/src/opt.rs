//! Rectified robust policy optimization (RRPO) and the CRPO baseline.
//!
//! Both trainers share one loop: evaluate every robust value, pick a branch
//! (rectify a violated constraint, rectify the objective, or record a new
//! best feasible iterate) and apply one natural policy gradient step on the
//! selected reward. They differ only in output selection — RRPO tracks the
//! feasible iterate with the best objective via the moving threshold `d_0`,
//! CRPO draws uniformly from the feasible iterates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{RcrlError, Result};
use crate::eval::{robust_q_from_v, robust_td_learning, robust_value_fixed_point_from};
use crate::mdp::TabularRCMDP;
use crate::occupancy::value_at_initial;
use crate::policy::SoftmaxPolicy;
use crate::uncertainty::PNormUncertainty;

/// Branch taken by one training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateBranch {
    /// All thresholds met within the tolerance; the iterate is recorded.
    Threshold,
    /// Constraint `i >= 1` violated beyond the tolerance; ascend its value.
    ConstraintRectify(usize),
    /// Constraints hold but the objective fell below `d_0`; ascend it.
    ObjectiveRectify,
}

impl UpdateBranch {
    pub fn label(self) -> String {
        match self {
            UpdateBranch::Threshold => "threshold".into(),
            UpdateBranch::ConstraintRectify(i) => format!("constraint-rectify({i})"),
            UpdateBranch::ObjectiveRectify => "objective-rectify".into(),
        }
    }
}

/// How to choose among several violated constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintPick {
    LowestIndex,
    Random,
}

/// How the per-iteration robust values are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Fixed point at `eval_tol` (warm-started across iterations).
    Exact,
    /// Sampled robust TD estimates (`td_steps`, `td_a0`, `td_k0`).
    Td,
}

#[derive(Debug, Clone)]
pub struct RRPOConfig {
    pub eta: f64,
    pub delta: f64,
    pub iterations: usize,
    /// Initial objective threshold; negative infinity makes the first
    /// constraint-feasible iterate a threshold update.
    pub d0_init: f64,
    pub constraint_pick: ConstraintPick,
    pub seed: u64,
    pub eval_mode: EvalMode,
    pub eval_tol: f64,
    pub eval_max_iter: usize,
    pub td_steps: usize,
    pub td_a0: f64,
    pub td_k0: f64,
    /// Standard deviation of Gaussian noise on the initial logits; zero
    /// starts from the uniform policy.
    pub init_logit_noise: f64,
}

impl Default for RRPOConfig {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            delta: 1e-2,
            iterations: 1000,
            d0_init: f64::NEG_INFINITY,
            constraint_pick: ConstraintPick::LowestIndex,
            seed: 0,
            eval_mode: EvalMode::Exact,
            eval_tol: 1e-8,
            eval_max_iter: crate::eval::DEFAULT_EVAL_MAX_ITER,
            td_steps: 100_000,
            td_a0: 1.0,
            td_k0: 100.0,
            init_logit_noise: 0.0,
        }
    }
}

impl RRPOConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(RcrlError::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.eta
            )));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(RcrlError::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.delta
            )));
        }
        if self.iterations == 0 {
            return Err(RcrlError::InvalidArgument(
                "iteration budget must be at least 1".into(),
            ));
        }
        if !(self.eval_tol.is_finite() && self.eval_tol > 0.0) {
            return Err(RcrlError::InvalidArgument(format!(
                "evaluation tolerance must be positive, got {}",
                self.eval_tol
            )));
        }
        if self.eval_mode == EvalMode::Td
            && !(self.td_steps > 0 && self.td_a0 > 0.0 && self.td_k0 > 0.0)
        {
            return Err(RcrlError::InvalidArgument(
                "td evaluation needs positive td_steps, td_a0 and td_k0".into(),
            ));
        }
        if !(self.init_logit_noise.is_finite() && self.init_logit_noise >= 0.0) {
            return Err(RcrlError::InvalidArgument(format!(
                "initial logit noise must be non-negative, got {}",
                self.init_logit_noise
            )));
        }
        Ok(())
    }
}

/// One row of the training trace: the branch, the robust values `V_i(mu)`
/// of the evaluated iterate, the threshold `d_0` after any update, and
/// whether the fixed constraints held within the tolerance.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub branch: UpdateBranch,
    pub values: Vec<f64>,
    pub d0: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingTrace {
    pub records: Vec<IterationRecord>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// True when `d_0` never decreases after its first finite value.
    pub fn d0_non_decreasing(&self) -> bool {
        let mut last = f64::NEG_INFINITY;
        for record in &self.records {
            if record.d0.is_finite() {
                if record.d0 < last {
                    return false;
                }
                last = record.d0;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct TrainingResult {
    pub policy: SoftmaxPolicy,
    pub trace: TrainingTrace,
    /// Iteration whose policy became the output.
    pub output_iteration: usize,
    /// Robust objective `V_0(mu)` of the output iterate as seen in training.
    pub best_objective: f64,
}

/// One natural policy gradient step on reward values `q`:
/// `pi'(a|s) ∝ pi(a|s) exp(eta Q(s,a) / (1 - gamma))`, applied in logit
/// space with per-state re-centering as an overflow guard.
pub fn npg_step(policy: &mut SoftmaxPolicy, q: &[f64], eta: f64, gamma: f64) -> Result<()> {
    if q.len() != policy.num_states() * policy.num_actions() {
        return Err(RcrlError::InvalidArgument(format!(
            "q table has {} entries, expected {}",
            q.len(),
            policy.num_states() * policy.num_actions()
        )));
    }
    if q.iter().any(|x| !x.is_finite()) {
        return Err(RcrlError::InvalidArgument("non-finite q table".into()));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(RcrlError::InvalidArgument(format!(
            "step size must be positive, got {eta}"
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(RcrlError::InvalidArgument(format!(
            "discount must lie in [0, 1), got {gamma}"
        )));
    }
    let scale = eta / (1.0 - gamma);
    for (theta, qv) in policy.logits_mut().iter_mut().zip(q) {
        *theta += scale * qv;
    }
    policy.recenter();
    Ok(())
}

/// Branch decision for one iteration. `thresholds[0]` is the dynamic `d_0`,
/// the rest are the fixed constraint thresholds.
pub fn select_update_index<R: Rng>(
    values: &[f64],
    thresholds: &[f64],
    delta: f64,
    rule: ConstraintPick,
    rng: &mut R,
) -> UpdateBranch {
    debug_assert_eq!(values.len(), thresholds.len());
    let violated: Vec<usize> = (1..values.len())
        .filter(|&i| values[i] < thresholds[i] - delta)
        .collect();
    if let Some(&first) = violated.first() {
        return match rule {
            ConstraintPick::LowestIndex => UpdateBranch::ConstraintRectify(first),
            ConstraintPick::Random => {
                UpdateBranch::ConstraintRectify(violated[rng.random_range(0..violated.len())])
            }
        };
    }
    if values[0] >= thresholds[0] - delta {
        UpdateBranch::Threshold
    } else {
        UpdateBranch::ObjectiveRectify
    }
}

enum Algo {
    Rrpo,
    Crpo,
}

/// RRPO (Algorithm 1): rectified robust policy optimization with the moving
/// objective threshold `d_0` and best-feasible output tracking.
pub fn rrpo_train(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    config: &RRPOConfig,
) -> Result<TrainingResult> {
    train(mdp, set, config, Algo::Rrpo)
}

/// CRPO baseline: the same rectification loop without threshold tracking;
/// the output is drawn uniformly (seeded) from the feasible iterates.
pub fn crpo_train(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    config: &RRPOConfig,
) -> Result<TrainingResult> {
    train(mdp, set, config, Algo::Crpo)
}

/// The policy a training run starts from: uniform, or uniform plus seeded
/// Gaussian logit noise when `init_logit_noise > 0`.
pub fn initial_policy(
    num_states: usize,
    num_actions: usize,
    config: &RRPOConfig,
) -> Result<SoftmaxPolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    initial_policy_with(num_states, num_actions, config, &mut rng)
}

fn initial_policy_with(
    num_states: usize,
    num_actions: usize,
    config: &RRPOConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SoftmaxPolicy> {
    if config.init_logit_noise > 0.0 {
        let logits = (0..num_states * num_actions)
            .map(|_| {
                config.init_logit_noise
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            })
            .collect();
        SoftmaxPolicy::from_logits(num_states, num_actions, logits)
    } else {
        Ok(SoftmaxPolicy::uniform(num_states, num_actions))
    }
}

fn train(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    config: &RRPOConfig,
    algo: Algo,
) -> Result<TrainingResult> {
    config.validate()?;
    if mdp.num_constraints() == 0 {
        return Err(RcrlError::InvalidArgument(
            "training requires at least one constraint reward".into(),
        ));
    }
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let num_rewards = mdp.num_rewards();
    let gamma = mdp.discount();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = initial_policy_with(n, na, config, &mut rng)?;

    let mut warm = vec![vec![0.0; n]; num_rewards];
    let mut trace = TrainingTrace::default();
    let mut d0 = config.d0_init;
    // RRPO: best feasible iterate so far. CRPO: all feasible iterates.
    let mut best: Option<(usize, f64, SoftmaxPolicy)> = None;
    let mut feasible_pool: Vec<(usize, f64, SoftmaxPolicy)> = Vec::new();

    for t in 0..config.iterations {
        let mut values_mu = vec![0.0; num_rewards];
        let mut tables = Vec::with_capacity(num_rewards);
        for i in 0..num_rewards {
            let v = match config.eval_mode {
                EvalMode::Exact => {
                    let fp = robust_value_fixed_point_from(
                        mdp,
                        set,
                        &policy,
                        i,
                        &warm[i],
                        config.eval_tol,
                        config.eval_max_iter,
                    )?;
                    warm[i] = fp.values.clone();
                    fp.values
                }
                EvalMode::Td => {
                    let mut td_rng = ChaCha8Rng::seed_from_u64(rng.random());
                    robust_td_learning(
                        mdp,
                        set,
                        &policy,
                        i,
                        config.td_steps,
                        config.td_a0,
                        config.td_k0,
                        &mut td_rng,
                    )?
                }
            };
            values_mu[i] = value_at_initial(mdp, &v);
            tables.push(v);
        }

        let mut thresholds = Vec::with_capacity(num_rewards);
        thresholds.push(match algo {
            Algo::Rrpo => d0,
            // CRPO has no objective threshold; a feasible iterate always
            // lands in the threshold branch and takes an objective step.
            Algo::Crpo => f64::NEG_INFINITY,
        });
        thresholds.extend_from_slice(mdp.thresholds());
        let branch =
            select_update_index(&values_mu, &thresholds, config.delta, config.constraint_pick, &mut rng);
        let feasible =
            (1..num_rewards).all(|i| values_mu[i] >= mdp.threshold(i) - config.delta);

        let update_index = match branch {
            UpdateBranch::ConstraintRectify(i) => i,
            UpdateBranch::Threshold | UpdateBranch::ObjectiveRectify => {
                if matches!(branch, UpdateBranch::Threshold) {
                    match algo {
                        Algo::Rrpo => {
                            // Record the evaluated iterate before updating it.
                            d0 = d0.max(values_mu[0]);
                            let improved = best
                                .as_ref()
                                .map(|(_, obj, _)| values_mu[0] > *obj)
                                .unwrap_or(true);
                            if improved {
                                best = Some((t, values_mu[0], policy.clone()));
                            }
                        }
                        Algo::Crpo => {
                            feasible_pool.push((t, values_mu[0], policy.clone()));
                        }
                    }
                }
                0
            }
        };
        trace.records.push(IterationRecord {
            branch,
            values: values_mu,
            d0,
            feasible,
        });
        let q = robust_q_from_v(mdp, set, update_index, &tables[update_index])?;
        npg_step(&mut policy, &q, config.eta, gamma)?;
    }

    let picked = match algo {
        Algo::Rrpo => best,
        Algo::Crpo => {
            if feasible_pool.is_empty() {
                None
            } else {
                let idx = rng.random_range(0..feasible_pool.len());
                Some(feasible_pool.swap_remove(idx))
            }
        }
    };
    match picked {
        Some((iteration, objective, output)) => Ok(TrainingResult {
            policy: output,
            trace,
            output_iteration: iteration,
            best_objective: objective,
        }),
        None => Err(RcrlError::NoFeasiblePolicy {
            iterations: config.iterations,
            last_logits: policy.logits().to_vec(),
            trace,
        }),
    }
}
