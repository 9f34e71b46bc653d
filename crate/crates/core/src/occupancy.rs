//! Policy-induced transition matrices, discounted occupancy measures and
//! nominal (non-robust) policy evaluation by direct linear solves.
//!
//! Convention: the policy-induced matrix is column-stochastic, `M[s'][s] =
//! sum_a pi(a|s) P(s'|s,a)`, so columns index source states. Occupancy solves
//! `(I - gamma M) d = mu` and values solve `(I - gamma M^T) V = r^pi`; all
//! instances are tiny, so a dense LU factorization is used throughout.

use nalgebra::{DMatrix, DVector};

use crate::error::{RcrlError, Result};
use crate::mdp::TabularRCMDP;
use crate::policy::SoftmaxPolicy;

/// Discounted state-visitation measure. Unnormalized measures sum to
/// `1/(1-gamma)`; normalized ones are scaled by `1-gamma` and sum to 1.
#[derive(Debug, Clone)]
pub struct OccupancyMeasure {
    values: Vec<f64>,
    normalized: bool,
}

impl OccupancyMeasure {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Expected reward under the occupancy measure, `sum_s d(s) r(s)`.
    pub fn weighted_sum(&self, per_state: &[f64]) -> f64 {
        self.values.iter().zip(per_state).map(|(d, r)| d * r).sum()
    }
}

fn check_shapes(mdp: &TabularRCMDP, policy: &SoftmaxPolicy) -> Result<()> {
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(RcrlError::InvalidArgument(format!(
            "policy shape {}x{} does not match MDP {}x{}",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

fn check_reward_index(mdp: &TabularRCMDP, i: usize) -> Result<()> {
    if i >= mdp.num_rewards() {
        return Err(RcrlError::InvalidArgument(format!(
            "reward index {i} out of range (have {})",
            mdp.num_rewards()
        )));
    }
    Ok(())
}

/// Column-stochastic policy-induced matrix over a caller-supplied kernel
/// (row-major `[s][a][s']`, same shape as the MDP's nominal kernel). Returned
/// row-major with `M[s' * n + s]`.
pub fn transition_under_kernel(
    kernel: &[f64],
    policy: &SoftmaxPolicy,
    num_states: usize,
    num_actions: usize,
) -> Vec<f64> {
    let probs = policy.probabilities();
    let mut m = vec![0.0; num_states * num_states];
    for s in 0..num_states {
        for a in 0..num_actions {
            let w = probs[s * num_actions + a];
            if w == 0.0 {
                continue;
            }
            let row = &kernel[(s * num_actions + a) * num_states..(s * num_actions + a + 1) * num_states];
            for (sp, p) in row.iter().enumerate() {
                m[sp * num_states + s] += w * p;
            }
        }
    }
    m
}

/// Column-stochastic matrix `M[s'][s] = sum_a pi(a|s) P0(s'|s,a)` under the
/// nominal kernel, row-major with `M[s' * n + s]`.
pub fn transition_under_policy(mdp: &TabularRCMDP, policy: &SoftmaxPolicy) -> Result<Vec<f64>> {
    check_shapes(mdp, policy)?;
    Ok(transition_under_kernel(
        mdp.kernel(),
        policy,
        mdp.num_states(),
        mdp.num_actions(),
    ))
}

pub(crate) fn lu_solve(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<Vec<f64>> {
    a.lu()
        .solve(&b)
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| RcrlError::Numerical(format!("singular system in {what}")))
}

/// Discounted state visitation `d = (I - gamma M)^-1 mu`, optionally scaled
/// by `1 - gamma` so it sums to one.
pub fn discounted_visitation(
    mdp: &TabularRCMDP,
    policy: &SoftmaxPolicy,
    normalized: bool,
) -> Result<OccupancyMeasure> {
    visitation_under_kernel(mdp, mdp.kernel(), policy, normalized)
}

/// Discounted state visitation under a caller-supplied kernel (same shape
/// as the nominal one), e.g. an induced worst-case kernel.
pub fn visitation_under_kernel(
    mdp: &TabularRCMDP,
    kernel: &[f64],
    policy: &SoftmaxPolicy,
    normalized: bool,
) -> Result<OccupancyMeasure> {
    check_shapes(mdp, policy)?;
    let n = mdp.num_states();
    let na = mdp.num_actions();
    if kernel.len() != n * na * n {
        return Err(RcrlError::InvalidArgument(format!(
            "kernel override has {} entries, expected {}",
            kernel.len(),
            n * na * n
        )));
    }
    let m = transition_under_kernel(kernel, policy, n, na);
    let a = DMatrix::identity(n, n) - mdp.discount() * DMatrix::from_row_slice(n, n, &m);
    let mu = DVector::from_row_slice(mdp.initial_dist());
    let mut values = lu_solve(a, mu, "discounted visitation")?;
    if normalized {
        let scale = 1.0 - mdp.discount();
        values.iter_mut().for_each(|d| *d *= scale);
    }
    Ok(OccupancyMeasure { values, normalized })
}

/// Per-state policy value for reward table `i` under a caller-supplied
/// kernel: solves `(I - gamma M^T) V = r_i^pi`. Used for nominal evaluation
/// and for evaluating explicit (possibly perturbed) kernels.
pub fn value_under_kernel(
    mdp: &TabularRCMDP,
    kernel: &[f64],
    policy: &SoftmaxPolicy,
    i: usize,
) -> Result<Vec<f64>> {
    check_shapes(mdp, policy)?;
    check_reward_index(mdp, i)?;
    let n = mdp.num_states();
    let na = mdp.num_actions();
    if kernel.len() != n * na * n {
        return Err(RcrlError::InvalidArgument(format!(
            "kernel override has {} entries, expected {}",
            kernel.len(),
            n * na * n
        )));
    }
    let m = transition_under_kernel(kernel, policy, n, na);
    let probs = policy.probabilities();
    let r_pi: Vec<f64> = (0..n)
        .map(|s| {
            (0..na)
                .map(|a| probs[s * na + a] * mdp.reward(i, s, a))
                .sum()
        })
        .collect();
    let a = DMatrix::identity(n, n)
        - mdp.discount() * DMatrix::from_row_slice(n, n, &m).transpose();
    lu_solve(a, DVector::from_row_slice(&r_pi), "policy evaluation")
}

/// Nominal (uncertainty-free) per-state value of `policy` for reward `i`.
pub fn nominal_value(mdp: &TabularRCMDP, policy: &SoftmaxPolicy, i: usize) -> Result<Vec<f64>> {
    value_under_kernel(mdp, mdp.kernel(), policy, i)
}

/// Nominal state-action values `Q_i(s,a) = r_i(s,a) + gamma P0(.|s,a) . V`.
pub fn nominal_q(mdp: &TabularRCMDP, policy: &SoftmaxPolicy, i: usize) -> Result<Vec<f64>> {
    let v = nominal_value(mdp, policy, i)?;
    Ok(q_from_value(mdp, &v, i))
}

/// `Q_i` from an explicit state-value vector under the nominal kernel.
pub fn q_from_value(mdp: &TabularRCMDP, v: &[f64], i: usize) -> Vec<f64> {
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let mut q = vec![0.0; n * na];
    for s in 0..n {
        for a in 0..na {
            let dot: f64 = mdp.kernel_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
            q[s * na + a] = mdp.reward(i, s, a) + mdp.discount() * dot;
        }
    }
    q
}

/// Initial-distribution aggregate `V(mu) = sum_s mu(s) V(s)`.
pub fn value_at_initial(mdp: &TabularRCMDP, v: &[f64]) -> f64 {
    mdp.initial_dist().iter().zip(v).map(|(m, x)| m * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::{build_counterexample, policy_for_pi1, CounterexampleParams};
    use crate::mdp::random_mdp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counterexample() -> TabularRCMDP {
        let params = CounterexampleParams::symmetric(0.25, 0.75, 0.5, 1.0).unwrap();
        build_counterexample(&params).unwrap().0
    }

    #[test]
    fn induced_matrix_is_column_stochastic_with_columns_as_sources() {
        let mdp = counterexample();
        // pi1 = 0 plays a0 everywhere: both states jump to s0.
        let m = transition_under_policy(&mdp, &policy_for_pi1(0.0).unwrap()).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-12 && (m[1] - 1.0).abs() < 1e-12);
        assert!(m[2].abs() < 1e-12 && m[3].abs() < 1e-12);
        // pi1 = 1: column s0 mixes p = 0.5 between states, column s1 -> s0.
        let m = transition_under_policy(&mdp, &policy_for_pi1(1.0).unwrap()).unwrap();
        for (got, want) in m.iter().zip(&[0.5, 1.0, 0.5, 0.0]) {
            assert!((got - want).abs() < 1e-9, "matrix {m:?}");
        }
    }

    #[test]
    fn visitation_matches_hand_solved_inverse() {
        let mdp = counterexample();
        let d = discounted_visitation(&mdp, &policy_for_pi1(0.0).unwrap(), false).unwrap();
        assert!((d.values()[0] - 2.0).abs() < 1e-9);
        assert!(d.values()[1].abs() < 1e-9);
        // det(I - 0.5 P^pi) = 0.625 for pi1 = 1; d = [1.6, 0.4].
        let d = discounted_visitation(&mdp, &policy_for_pi1(1.0).unwrap(), false).unwrap();
        assert!((d.values()[0] - 1.6).abs() < 1e-9);
        assert!((d.values()[1] - 0.4).abs() < 1e-9);
        assert!((d.total_mass() - 2.0).abs() < 1e-8);
        let dn = discounted_visitation(&mdp, &policy_for_pi1(1.0).unwrap(), true).unwrap();
        assert!((dn.total_mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn value_and_q_match_hand_solved_fixed_point() {
        let mdp = counterexample();
        let v = nominal_value(&mdp, &policy_for_pi1(1.0).unwrap(), 0).unwrap();
        assert!((v[0] - 1.6).abs() < 1e-9, "V = {v:?}");
        assert!((v[1] - 0.8).abs() < 1e-9);
        let q = nominal_q(&mdp, &policy_for_pi1(1.0).unwrap(), 0).unwrap();
        assert!((q[0] - 1.8).abs() < 1e-9, "Q = {q:?}");
    }

    #[test]
    fn occupancy_value_identity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let mdp = random_mdp(5, 3, 2, 0.9, &mut rng);
            let logits: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
            let policy = SoftmaxPolicy::from_logits(5, 3, logits).unwrap();
            let d = discounted_visitation(&mdp, &policy, false).unwrap();
            assert!((d.total_mass() - 10.0).abs() < 1e-8);
            for i in 0..2 {
                // mu . V == d . r^pi, the two sides of the occupancy LP.
                let v = nominal_value(&mdp, &policy, i).unwrap();
                let probs = policy.probabilities();
                let r_pi: Vec<f64> = (0..5)
                    .map(|s| (0..3).map(|a| probs[s * 3 + a] * mdp.reward(i, s, a)).sum())
                    .collect();
                let lhs = value_at_initial(&mdp, &v);
                let rhs = d.weighted_sum(&r_pi);
                assert!((lhs - rhs).abs() < 1e-10, "lhs {lhs} rhs {rhs}");
            }
        }
    }

    #[test]
    fn unreachable_state_gets_zero_visitation() {
        // Two states, single action, s0 self-loops: s1 is never visited.
        let mdp = TabularRCMDP::new(
            2,
            1,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![vec![1.0, 0.0]],
            vec![],
            0.9,
            vec![1.0, 0.0],
        )
        .unwrap();
        let d = discounted_visitation(&mdp, &SoftmaxPolicy::uniform(2, 1), true).unwrap();
        assert!(d.values()[1].abs() < 1e-12);
        assert!((d.values()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn monte_carlo_rollouts_agree_with_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mdp = random_mdp(3, 2, 1, 0.5, &mut rng);
        let policy = SoftmaxPolicy::from_logits(3, 2, vec![0.3, -0.2, 0.0, 0.5, -0.4, 0.1]).unwrap();
        let v = nominal_value(&mdp, &policy, 0).unwrap();
        let exact = value_at_initial(&mdp, &v);

        // Truncated rollouts: horizon chosen so the tail is < 1e-4.
        let horizon = ((1e-4_f64).ln() / 0.5_f64.ln()).ceil() as usize;
        let episodes = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..episodes {
            let mut s = sample_index(mdp.initial_dist(), &mut rng);
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                let a = policy.sample_action(s, &mut rng);
                ret += disc * mdp.reward(0, s, a);
                disc *= mdp.discount();
                s = sample_index(mdp.kernel_row(s, a), &mut rng);
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let mean = sum / episodes as f64;
        let var = (sum_sq / episodes as f64 - mean * mean).max(0.0);
        let se = (var / episodes as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * se + 2e-4,
            "mc {mean} exact {exact} se {se}"
        );
    }

    fn sample_index<R: rand::Rng>(probs: &[f64], rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}
