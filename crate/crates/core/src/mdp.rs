//! Finite constrained MDP with one objective reward and zero or more
//! constraint rewards sharing a single transition kernel.

use rand::Rng;

use crate::config::{join_numbers, KvMap};
use crate::error::{RcrlError, Result};

/// Row-sum slack accepted when validating kernel rows and the initial
/// distribution.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Tabular robust-constrained MDP data: kernel `P0[s][a][s']` (row-major),
/// reward tables `r_i[s][a]` for `i = 0` (objective) and `i = 1..=I`
/// (constraints), constraint thresholds `d_1..=d_I`, discount and initial
/// distribution. Uncertainty sets live in [`crate::uncertainty`] and are
/// supplied separately to the evaluation routines.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularRCMDP {
    num_states: usize,
    num_actions: usize,
    kernel: Vec<f64>,
    rewards: Vec<Vec<f64>>,
    thresholds: Vec<f64>,
    discount: f64,
    initial_dist: Vec<f64>,
}

impl TabularRCMDP {
    /// Validates shapes, row stochasticity and parameter ranges.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        kernel: Vec<f64>,
        rewards: Vec<Vec<f64>>,
        thresholds: Vec<f64>,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(RcrlError::InvalidModel(
                "need at least one state and one action".into(),
            ));
        }
        if kernel.len() != num_states * num_actions * num_states {
            return Err(RcrlError::InvalidModel(format!(
                "kernel has {} entries, expected {}",
                kernel.len(),
                num_states * num_actions * num_states
            )));
        }
        if rewards.is_empty() {
            return Err(RcrlError::InvalidModel("need an objective reward table".into()));
        }
        for (i, table) in rewards.iter().enumerate() {
            if table.len() != num_states * num_actions {
                return Err(RcrlError::InvalidModel(format!(
                    "reward table {i} has {} entries, expected {}",
                    table.len(),
                    num_states * num_actions
                )));
            }
            if table.iter().any(|r| !r.is_finite()) {
                return Err(RcrlError::InvalidModel(format!(
                    "reward table {i} has non-finite entries"
                )));
            }
        }
        if thresholds.len() != rewards.len() - 1 {
            return Err(RcrlError::InvalidModel(format!(
                "{} thresholds for {} constraint rewards",
                thresholds.len(),
                rewards.len() - 1
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(RcrlError::InvalidModel(format!(
                "discount must lie in (0, 1), got {discount}"
            )));
        }
        if initial_dist.len() != num_states {
            return Err(RcrlError::InvalidModel(format!(
                "initial distribution has {} entries for {} states",
                initial_dist.len(),
                num_states
            )));
        }
        check_distribution(&initial_dist, "initial distribution")?;
        for s in 0..num_states {
            for a in 0..num_actions {
                let row =
                    &kernel[(s * num_actions + a) * num_states..(s * num_actions + a + 1) * num_states];
                check_distribution(row, &format!("kernel row (s={s}, a={a})"))?;
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            kernel,
            rewards,
            thresholds,
            discount,
            initial_dist,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of reward tables, objective included.
    pub fn num_rewards(&self) -> usize {
        self.rewards.len()
    }

    /// Number of constraint rewards (`num_rewards() - 1`).
    pub fn num_constraints(&self) -> usize {
        self.thresholds.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Flat index of the state-action pair `(s, a)`.
    pub fn sa_index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// Nominal next-state distribution for `(s, a)`.
    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        let base = self.sa_index(s, a) * self.num_states;
        &self.kernel[base..base + self.num_states]
    }

    /// Full kernel, row-major over `[s][a][s']`.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn reward(&self, i: usize, s: usize, a: usize) -> f64 {
        self.rewards[i][self.sa_index(s, a)]
    }

    /// Reward table `i` as a flat `[s][a]` slice.
    pub fn reward_table(&self, i: usize) -> &[f64] {
        &self.rewards[i]
    }

    /// Threshold `d_i` for constraint index `i` in `1..=num_constraints()`.
    pub fn threshold(&self, i: usize) -> f64 {
        self.thresholds[i - 1]
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// True when every reward entry lies in `[0, 1]` (informational; several
    /// built-in instances use negative step costs on purpose).
    pub fn bounded_rewards(&self) -> bool {
        self.rewards
            .iter()
            .all(|t| t.iter().all(|&r| (0.0..=1.0).contains(&r)))
    }

    /// Serializes to the `key = value` text schema parsed by [`Self::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# tabular constrained MDP\n");
        out.push_str(&format!("states = {}\n", self.num_states));
        out.push_str(&format!("actions = {}\n", self.num_actions));
        out.push_str(&format!("discount = {}\n", self.discount));
        out.push_str(&format!("initial = {}\n", join_numbers(&self.initial_dist)));
        out.push_str(&format!("kernel = {}\n", join_numbers(&self.kernel)));
        for (i, table) in self.rewards.iter().enumerate() {
            out.push_str(&format!("reward.{i} = {}\n", join_numbers(table)));
        }
        if !self.thresholds.is_empty() {
            out.push_str(&format!("thresholds = {}\n", join_numbers(&self.thresholds)));
        }
        out
    }

    /// Parses the schema written by [`Self::to_text`]: `states`, `actions`,
    /// `discount`, `initial`, flattened `kernel` (`[s][a][s']` row-major),
    /// `reward.N` tables (`[s][a]` row-major) and optional `thresholds`.
    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KvMap::parse(text)?;
        let num_states = kv
            .get_usize("states")?
            .ok_or_else(|| RcrlError::InvalidModel("missing `states`".into()))?;
        let num_actions = kv
            .get_usize("actions")?
            .ok_or_else(|| RcrlError::InvalidModel("missing `actions`".into()))?;
        let discount = kv
            .get_f64("discount")?
            .ok_or_else(|| RcrlError::InvalidModel("missing `discount`".into()))?;
        let initial = kv
            .get_f64_list("initial")?
            .ok_or_else(|| RcrlError::InvalidModel("missing `initial`".into()))?;
        let kernel = kv
            .get_f64_list("kernel")?
            .ok_or_else(|| RcrlError::InvalidModel("missing `kernel`".into()))?;
        let mut rewards = Vec::new();
        while let Some(table) = kv.get_f64_list(&format!("reward.{}", rewards.len()))? {
            rewards.push(table);
        }
        let thresholds = kv.get_f64_list("thresholds")?.unwrap_or_default();
        Self::new(
            num_states,
            num_actions,
            kernel,
            rewards,
            thresholds,
            discount,
            initial,
        )
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < -STOCHASTIC_TOL) {
        return Err(RcrlError::InvalidModel(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(RcrlError::InvalidModel(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Random dense instance for tests and cross-validation: Dirichlet(1) kernel
/// rows and initial distribution, uniform `[0, 1]` rewards, zero thresholds.
pub fn random_mdp<R: Rng>(
    num_states: usize,
    num_actions: usize,
    num_rewards: usize,
    discount: f64,
    rng: &mut R,
) -> TabularRCMDP {
    let simplex = |rng: &mut R, n: usize| -> Vec<f64> {
        // -ln(U) draws are Exp(1); normalizing gives a flat Dirichlet sample.
        let mut v: Vec<f64> = (0..n)
            .map(|_| -(rng.random::<f64>().max(1e-12)).ln())
            .collect();
        let sum: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= sum);
        v
    };
    let mut kernel = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        kernel.extend(simplex(rng, num_states));
    }
    let rewards = (0..num_rewards)
        .map(|_| (0..num_states * num_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    let thresholds = vec![0.0; num_rewards - 1];
    let initial = simplex(rng, num_states);
    TabularRCMDP::new(
        num_states,
        num_actions,
        kernel,
        rewards,
        thresholds,
        discount,
        initial,
    )
    .expect("random instance is valid by construction")
}
