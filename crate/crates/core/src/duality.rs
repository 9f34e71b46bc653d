//! The two-state counterexample with a non-zero Lagrangian duality gap.
//!
//! A single uncertain transition probability `p ∈ [p_lo, p_hi]` drives a
//! constrained robust MDP whose primal (max-min) and dual (min-max) values
//! admit closed forms. The module builds the instance for the general
//! machinery, evaluates the closed forms, and checks them against an
//! independent grid-search oracle over the actual policy interval [0, 1].

use crate::error::{RcrlError, Result};
use crate::mdp::TabularRCMDP;
use crate::policy::SoftmaxPolicy;
use crate::uncertainty::{NormOrder, PNormUncertainty};

/// Parameters of the counterexample family: nominal stay probability `p`,
/// uncertainty interval `[p_lo, p_hi]`, discount and constraint threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleParams {
    pub p: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub gamma: f64,
    pub rho: f64,
}

impl CounterexampleParams {
    pub fn new(p: f64, p_lo: f64, p_hi: f64, gamma: f64, rho: f64) -> Result<Self> {
        let params = Self {
            p,
            p_lo,
            p_hi,
            gamma,
            rho,
        };
        params.validate()?;
        Ok(params)
    }

    /// Interval endpoints with the nominal at the midpoint, so the interval
    /// coincides with the infinity-norm ball used by the general machinery.
    pub fn symmetric(p_lo: f64, p_hi: f64, gamma: f64, rho: f64) -> Result<Self> {
        Self::new(0.5 * (p_lo + p_hi), p_lo, p_hi, gamma, rho)
    }

    /// Half-width of the uncertainty interval.
    pub fn delta(&self) -> f64 {
        0.5 * (self.p_hi - self.p_lo)
    }

    fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("p", self.p),
            ("p_lo", self.p_lo),
            ("p_hi", self.p_hi),
            ("gamma", self.gamma),
            ("rho", self.rho),
        ] {
            if !value.is_finite() {
                return Err(RcrlError::InvalidArgument(format!(
                    "{name} must be finite, got {value}"
                )));
            }
        }
        if !(0.0 < self.p_lo && self.p_lo <= self.p && self.p <= self.p_hi && self.p_hi < 1.0) {
            return Err(RcrlError::InvalidArgument(format!(
                "need 0 < p_lo <= p <= p_hi < 1, got p_lo={}, p={}, p_hi={}",
                self.p_lo, self.p, self.p_hi
            )));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(RcrlError::InvalidArgument(format!(
                "discount must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0 / (1.0 - self.gamma)).contains(&self.rho) {
            return Err(RcrlError::InvalidArgument(format!(
                "threshold must lie in [0, 1/(1-gamma)), got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Closed-form primal/dual values and the gap between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    pub primal: f64,
    pub dual: f64,
    pub lambda_hat: f64,
    pub gap: f64,
    pub pi1_star: f64,
    /// Whether the primal maximizer is an actual policy (`pi1_star <= 1`).
    pub pi1_feasible: bool,
}

/// Grid-search estimates over the true policy interval [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericDualityReport {
    /// Best feasible objective on the grid; negative infinity when no grid
    /// point satisfies the constraint.
    pub primal: f64,
    pub dual: f64,
    pub lambda_at_dual: f64,
    pub feasible: bool,
}

/// The 2-state, 2-action instance: action 0 stays at s0, action 1 moves to
/// s1 with probability `1 - p`, and both actions return from s1 to s0.
/// The uncertainty is an infinity-norm ball of radius `(p_hi - p_lo)/2` on
/// the single uncertain row (s0, a1).
pub fn build_counterexample(
    params: &CounterexampleParams,
) -> Result<(TabularRCMDP, PNormUncertainty)> {
    params.validate()?;
    let kernel = vec![
        1.0,
        0.0,
        params.p,
        1.0 - params.p,
        1.0,
        0.0,
        1.0,
        0.0,
    ];
    // State rewards broadcast over actions: r_0 pays at s0, r_1 at s1.
    let rewards = vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]];
    let mdp = TabularRCMDP::new(
        2,
        2,
        kernel,
        rewards,
        vec![params.rho],
        params.gamma,
        vec![1.0, 0.0],
    )?;
    let set =
        PNormUncertainty::with_row_radii(NormOrder::Inf, vec![0.0, params.delta(), 0.0, 0.0])?;
    Ok((mdp, set))
}

/// Softmax policy playing action 1 at both states with probability `pi1`
/// (the s1 row is irrelevant: both actions leave s1 identically).
pub fn policy_for_pi1(pi1: f64) -> Result<SoftmaxPolicy> {
    if !(0.0..=1.0).contains(&pi1) {
        return Err(RcrlError::InvalidArgument(format!(
            "pi1 must lie in [0, 1], got {pi1}"
        )));
    }
    let logit = (pi1 / (1.0 - pi1)).ln().clamp(-40.0, 40.0);
    SoftmaxPolicy::from_logits(2, 2, vec![0.0, logit, 0.0, logit])
}

/// Non-robust values (V_0(s0), V_1(s0)) under a fixed stay probability `p`.
pub fn values_under_p(params: &CounterexampleParams, pi1: f64, p: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&pi1) || !(0.0..=1.0).contains(&p) {
        return Err(RcrlError::InvalidArgument(format!(
            "pi1 and p must lie in [0, 1], got pi1={pi1}, p={p}"
        )));
    }
    let gamma = params.gamma;
    let leak = gamma - gamma * gamma;
    let den = 1.0 - gamma + pi1 * (1.0 - p) * leak;
    Ok((1.0 / den, gamma * pi1 * (1.0 - p) / den))
}

/// Worst-case values: the objective's adversary picks `p_lo`, the
/// constraint's picks `p_hi` (each value is minimized separately).
pub fn robust_values_analytic(params: &CounterexampleParams, pi1: f64) -> Result<(f64, f64)> {
    let (v0, _) = values_under_p(params, pi1, params.p_lo)?;
    let (_, v1) = values_under_p(params, pi1, params.p_hi)?;
    Ok((v0, v1))
}

/// Lagrangian L(pi1, lambda) = V_0 - lambda (rho - V_1) on the worst-case
/// values.
pub fn lagrangian_value(params: &CounterexampleParams, pi1: f64, lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(RcrlError::InvalidArgument(format!(
            "multiplier must be non-negative, got {lambda}"
        )));
    }
    let (v0, v1) = robust_values_analytic(params, pi1)?;
    Ok(v0 - lambda * (params.rho - v1))
}

/// Closed forms for the primal, the dual at the balancing multiplier
/// `lambda_hat`, and the gap. The primal maximizer `pi1_star` may exceed 1;
/// the flag reports whether it is a realizable policy.
pub fn primal_dual_analytic(params: &CounterexampleParams) -> Result<DualityReport> {
    params.validate()?;
    let gamma = params.gamma;
    let rho = params.rho;
    let r = (1.0 - params.p_lo) / (1.0 - params.p_hi);
    let lambda_hat =
        r * (1.0 + (1.0 - params.p_hi) * gamma) / (1.0 + (1.0 - params.p_lo) * gamma);
    let x = rho * (1.0 - gamma);
    let primal = 1.0 / (1.0 - gamma) - rho * r / (1.0 - x + x * r);
    let dual = 1.0 / (1.0 - gamma) - lambda_hat * rho;
    let pi1_star = x / ((1.0 - x) * gamma * (1.0 - params.p_hi));
    Ok(DualityReport {
        primal,
        dual,
        lambda_hat,
        gap: primal - dual,
        pi1_star,
        pi1_feasible: pi1_star <= 1.0,
    })
}

/// Brute-force check over the realizable policies: the primal maximizes
/// V_0 over feasible grid points, the dual minimizes max_pi L over a
/// multiplier grid on [0, lambda_max] (default 4 lambda_hat).
pub fn numeric_oracle(
    params: &CounterexampleParams,
    pi_grid_size: usize,
    lambda_grid_size: usize,
    lambda_max: Option<f64>,
) -> Result<NumericDualityReport> {
    params.validate()?;
    if pi_grid_size < 100 || lambda_grid_size < 100 {
        return Err(RcrlError::InvalidArgument(format!(
            "grid sizes must be at least 100, got {pi_grid_size} x {lambda_grid_size}"
        )));
    }
    let analytic = primal_dual_analytic(params)?;
    let lmax = lambda_max.unwrap_or(4.0 * analytic.lambda_hat);
    if !(lmax.is_finite() && lmax > 0.0) {
        return Err(RcrlError::InvalidArgument(format!(
            "lambda_max must be positive, got {lmax}"
        )));
    }
    let mut v0 = vec![0.0; pi_grid_size];
    let mut v1 = vec![0.0; pi_grid_size];
    for (j, (a, b)) in v0.iter_mut().zip(v1.iter_mut()).enumerate() {
        let pi1 = j as f64 / (pi_grid_size - 1) as f64;
        (*a, *b) = robust_values_analytic(params, pi1)?;
    }
    let mut primal = f64::NEG_INFINITY;
    for j in 0..pi_grid_size {
        if v1[j] >= params.rho && v0[j] > primal {
            primal = v0[j];
        }
    }
    let mut dual = f64::INFINITY;
    let mut lambda_at_dual = 0.0;
    for k in 0..lambda_grid_size {
        let lambda = lmax * k as f64 / (lambda_grid_size - 1) as f64;
        let mut best = f64::NEG_INFINITY;
        for j in 0..pi_grid_size {
            let l = v0[j] + lambda * (v1[j] - params.rho);
            if l > best {
                best = l;
            }
        }
        if best < dual {
            dual = best;
            lambda_at_dual = lambda;
        }
    }
    Ok(NumericDualityReport {
        primal,
        dual,
        lambda_at_dual,
        feasible: primal.is_finite(),
    })
}
