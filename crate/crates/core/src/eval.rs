//! Robust policy evaluation: penalty-form Bellman backups, fixed points,
//! temporal-difference learning and a brute-force oracle.
//!
//! For a p-norm row uncertainty set the inner minimization has the closed
//! form `min_u <P0 + u, V> = <P0, V> - radius kappa_q(V)` with `q` the dual
//! norm, so every operation here works with the scalar penalty rather than
//! enumerating kernels. The brute-force oracle instead evaluates explicit
//! perturbed kernels and is used to validate that equivalence.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{RcrlError, Result};
use crate::mdp::TabularRCMDP;
use crate::occupancy::{transition_under_policy, value_under_kernel};
use crate::policy::SoftmaxPolicy;
use crate::uncertainty::{sample_boundary_direction, worst_case_certificate, PNormUncertainty};

pub const DEFAULT_EVAL_TOL: f64 = 1e-10;
pub const DEFAULT_EVAL_MAX_ITER: usize = 100_000;

/// Converged robust state values together with how hard they were to reach.
#[derive(Debug, Clone)]
pub struct RobustValueTable {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Explicit worst-case kernel induced by a value vector, with the number of
/// rows whose perturbation left the probability simplex.
#[derive(Debug, Clone)]
pub struct InducedKernel {
    pub kernel: Vec<f64>,
    pub simplex_violations: usize,
}

fn check_set(mdp: &TabularRCMDP, set: &PNormUncertainty) -> Result<()> {
    if let Some(radii) = set.row_radii() {
        let rows = mdp.num_states() * mdp.num_actions();
        if radii.len() != rows {
            return Err(RcrlError::InvalidArgument(format!(
                "uncertainty set has {} row radii, model has {} rows",
                radii.len(),
                rows
            )));
        }
    }
    Ok(())
}

fn check_values(mdp: &TabularRCMDP, v: &[f64]) -> Result<()> {
    if v.len() != mdp.num_states() {
        return Err(RcrlError::InvalidArgument(format!(
            "value vector has length {}, expected {}",
            v.len(),
            mdp.num_states()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RcrlError::InvalidArgument("non-finite value vector".into()));
    }
    Ok(())
}

/// Robust state-action values from a state-value vector:
/// `Q_i(s,a) = r_i(s,a) + gamma (P0(.|s,a) . V - radius(s,a) kappa_q(V))`.
pub fn robust_q_from_v(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    i: usize,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_set(mdp, set)?;
    check_values(mdp, v)?;
    if i >= mdp.num_rewards() {
        return Err(RcrlError::InvalidArgument(format!(
            "reward index {i} out of range"
        )));
    }
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let gamma = mdp.discount();
    let kappa = set.kappa(v);
    let mut q = vec![0.0; n * na];
    for s in 0..n {
        for a in 0..na {
            let sa = s * na + a;
            let dot: f64 = mdp.kernel_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
            q[sa] = mdp.reward(i, s, a) + gamma * (dot - set.radius(sa) * kappa);
        }
    }
    Ok(q)
}

/// One sweep of the robust Bellman operator for `policy` and reward `i`.
pub fn robust_bellman_backup(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    policy: &SoftmaxPolicy,
    i: usize,
    v: &[f64],
) -> Result<Vec<f64>> {
    let q = robust_q_from_v(mdp, set, i, v)?;
    let na = mdp.num_actions();
    Ok((0..mdp.num_states())
        .map(|s| {
            let probs = policy.action_probabilities(s);
            (0..na).map(|a| probs[a] * q[s * na + a]).sum()
        })
        .collect())
}

/// Robust advantages `A(s,a) = Q(s,a) - sum_a' pi(a'|s) Q(s,a')`.
pub fn robust_advantage(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    policy: &SoftmaxPolicy,
    i: usize,
    v: &[f64],
) -> Result<Vec<f64>> {
    let mut q = robust_q_from_v(mdp, set, i, v)?;
    let na = mdp.num_actions();
    for s in 0..mdp.num_states() {
        let probs = policy.action_probabilities(s);
        let mean: f64 = (0..na).map(|a| probs[a] * q[s * na + a]).sum();
        for a in 0..na {
            q[s * na + a] -= mean;
        }
    }
    Ok(q)
}

/// Fixed point of the robust Bellman operator, started from zero values.
pub fn robust_value_fixed_point(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    policy: &SoftmaxPolicy,
    i: usize,
    tol: f64,
    max_iter: usize,
) -> Result<RobustValueTable> {
    let zeros = vec![0.0; mdp.num_states()];
    robust_value_fixed_point_from(mdp, set, policy, i, &zeros, tol, max_iter)
}

/// Fixed point of the robust Bellman operator from a warm start. The solver
/// alternates exact policy-evaluation solves against the current penalty
/// `kappa_q(V)` — for uniform radii this converges in a handful of
/// iterations — and falls back to plain backup sweeps if the residual ever
/// stops decreasing.
pub fn robust_value_fixed_point_from(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    policy: &SoftmaxPolicy,
    i: usize,
    init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<RobustValueTable> {
    check_set(mdp, set)?;
    check_values(mdp, init)?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(RcrlError::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let gamma = mdp.discount();
    let probs = policy.probabilities();
    let r_pi: Vec<f64> = (0..n)
        .map(|s| {
            (0..na)
                .map(|a| probs[s * na + a] * mdp.reward(i, s, a))
                .sum()
        })
        .collect();
    let rad_pi: Vec<f64> = (0..n)
        .map(|s| {
            (0..na)
                .map(|a| probs[s * na + a] * set.radius(s * na + a))
                .sum()
        })
        .collect();
    let m = transition_under_policy(mdp, policy)?;
    let system =
        DMatrix::identity(n, n) - gamma * DMatrix::from_row_slice(n, n, &m).transpose();
    let lu = system.lu();

    let mut v = init.to_vec();
    let mut residual = f64::INFINITY;
    let mut prev_residual = f64::INFINITY;
    let mut bad_streak = 0usize;
    let mut sweep_mode = false;
    for iteration in 1..=max_iter {
        let next = if sweep_mode {
            robust_bellman_backup(mdp, set, policy, i, &v)?
        } else {
            let kappa = set.kappa(&v);
            let rhs = DVector::from_iterator(
                n,
                r_pi
                    .iter()
                    .zip(&rad_pi)
                    .map(|(r, rad)| r - gamma * rad * kappa),
            );
            lu.solve(&rhs)
                .map(|x| x.as_slice().to_vec())
                .ok_or_else(|| {
                    RcrlError::Numerical("singular system in robust evaluation".into())
                })?
        };
        residual = next
            .iter()
            .zip(&v)
            .fold(0.0_f64, |r, (a, b)| r.max((a - b).abs()));
        v = next;
        if residual <= tol {
            return Ok(RobustValueTable {
                values: v,
                iterations: iteration,
                residual,
            });
        }
        if residual.is_finite() && residual < prev_residual {
            bad_streak = 0;
        } else {
            bad_streak += 1;
        }
        if !sweep_mode && bad_streak >= 3 {
            sweep_mode = true;
            bad_streak = 0;
        }
        prev_residual = residual;
    }
    Err(RcrlError::NoConvergence {
        iterations: max_iter,
        residual,
        last_values: v,
    })
}

/// Worst-case kernel `P+ = P0 - radius(s,a) O(V)` induced by a value vector,
/// with `O(V)` the unit-radius optimal direction shared by every row.
pub fn induced_worst_case_kernel(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    v: &[f64],
) -> Result<InducedKernel> {
    check_set(mdp, set)?;
    check_values(mdp, v)?;
    let unit = worst_case_certificate(set.norm_order(), 1.0, v)?;
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let mut kernel = mdp.kernel().to_vec();
    let mut simplex_violations = 0;
    for sa in 0..n * na {
        let radius = set.radius(sa);
        if radius == 0.0 {
            continue;
        }
        let row = &mut kernel[sa * n..(sa + 1) * n];
        let mut outside = false;
        for (p, o) in row.iter_mut().zip(&unit.direction) {
            *p -= radius * o;
            if *p < -1e-12 || *p > 1.0 + 1e-12 {
                outside = true;
            }
        }
        if outside {
            simplex_violations += 1;
        }
    }
    Ok(InducedKernel {
        kernel,
        simplex_violations,
    })
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let mut t = rng.random::<f64>();
    for (idx, w) in weights.iter().enumerate() {
        t -= w;
        if t <= 0.0 {
            return idx;
        }
    }
    weights.len() - 1
}

/// Tabular TD(0) with the robust penalty term. Transitions are sampled from
/// the nominal kernel; each update subtracts `gamma radius(s,a) kappa_q(V)`
/// computed from the current estimate, and the chain restarts from the
/// initial distribution with probability `1 - gamma` so updates follow the
/// discounted visitation. Step sizes are `a0 / (k0 + visits(s))` per state.
#[allow(clippy::too_many_arguments)]
pub fn robust_td_learning<R: Rng>(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    policy: &SoftmaxPolicy,
    i: usize,
    steps: usize,
    a0: f64,
    k0: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_set(mdp, set)?;
    if i >= mdp.num_rewards() {
        return Err(RcrlError::InvalidArgument(format!(
            "reward index {i} out of range"
        )));
    }
    if !(a0 > 0.0 && k0 > 0.0) {
        return Err(RcrlError::InvalidArgument(format!(
            "step-size schedule needs a0 > 0 and k0 > 0, got a0 = {a0}, k0 = {k0}"
        )));
    }
    let na = mdp.num_actions();
    let gamma = mdp.discount();
    let mut v = vec![0.0; mdp.num_states()];
    let mut visits = vec![0u64; mdp.num_states()];
    let mut s = sample_index(mdp.initial_dist(), rng);
    for _ in 0..steps {
        let a = policy.sample_action(s, rng);
        let sa = s * na + a;
        let next = sample_index(mdp.kernel_row(s, a), rng);
        let kappa = set.kappa(&v);
        visits[s] += 1;
        let alpha = a0 / (k0 + visits[s] as f64);
        let target = mdp.reward(i, s, a) + gamma * (v[next] - set.radius(sa) * kappa);
        v[s] += alpha * (target - v[s]);
        s = if rng.random::<f64>() < 1.0 - gamma {
            sample_index(mdp.initial_dist(), rng)
        } else {
            next
        };
    }
    Ok(v)
}

/// Componentwise minimum value over explicit kernels from the uncertainty
/// set: the nominal kernel, `num_samples` kernels with independent random
/// boundary perturbations per row, and the analytic worst-case kernel. By
/// rectangularity this bounds the robust value from above, and the analytic
/// candidate closes the gap. Only intended for tiny models.
pub fn brute_force_robust_value<R: Rng>(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    policy: &SoftmaxPolicy,
    i: usize,
    num_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_set(mdp, set)?;
    let n = mdp.num_states();
    if n > 6 {
        return Err(RcrlError::InvalidArgument(format!(
            "brute-force oracle is limited to 6 states, got {n}"
        )));
    }
    let na = mdp.num_actions();
    let norm = set.norm_order();
    let mut best = value_under_kernel(mdp, mdp.kernel(), policy, i)?;
    let consider = |candidate: Vec<f64>, best: &mut Vec<f64>| {
        for (b, c) in best.iter_mut().zip(candidate) {
            *b = b.min(c);
        }
    };
    for _ in 0..num_samples {
        let mut kernel = mdp.kernel().to_vec();
        for sa in 0..n * na {
            let u = sample_boundary_direction(norm, set.radius(sa), n, rng);
            for (p, du) in kernel[sa * n..(sa + 1) * n].iter_mut().zip(u) {
                *p += du;
            }
        }
        consider(value_under_kernel(mdp, &kernel, policy, i)?, &mut best);
    }
    let fp = robust_value_fixed_point(mdp, set, policy, i, DEFAULT_EVAL_TOL, DEFAULT_EVAL_MAX_ITER)?;
    let induced = induced_worst_case_kernel(mdp, set, &fp.values)?;
    consider(
        value_under_kernel(mdp, &induced.kernel, policy, i)?,
        &mut best,
    );
    Ok(best)
}
