//! Softmax (Boltzmann) policies over state-action logits.

use rand::Rng;

use crate::config::{join_numbers, KvMap};
use crate::error::{RcrlError, Result};

/// Stochastic policy `pi(a|s) = softmax(theta(s, .))(a)` stored as flat
/// `[s][a]` logits. The parameterization is shift-invariant per state; logits
/// are re-centered after updates to keep them bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    num_states: usize,
    num_actions: usize,
    logits: Vec<f64>,
}

impl SoftmaxPolicy {
    /// Uniform policy (all-zero logits).
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            logits: vec![0.0; num_states * num_actions],
        }
    }

    /// Builds a policy from flat `[s][a]` logits, rejecting non-finite entries.
    pub fn from_logits(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(RcrlError::InvalidArgument(
                "policy needs at least one state and one action".into(),
            ));
        }
        if logits.len() != num_states * num_actions {
            return Err(RcrlError::InvalidArgument(format!(
                "{} logits for {} state-action pairs",
                logits.len(),
                num_states * num_actions
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(RcrlError::InvalidArgument("non-finite logits".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            logits,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Action distribution at state `s`; sums to 1 up to rounding.
    pub fn action_probabilities(&self, s: usize) -> Vec<f64> {
        let row = &self.logits[s * self.num_actions..(s + 1) * self.num_actions];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        probs
    }

    /// Full `[s][a]` probability table.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.logits.len());
        for s in 0..self.num_states {
            out.extend(self.action_probabilities(s));
        }
        out
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.action_probabilities(s)[a]
    }

    /// Subtracts each state's max logit; leaves the distribution unchanged.
    pub fn recenter(&mut self) {
        for s in 0..self.num_states {
            let row = &mut self.logits[s * self.num_actions..(s + 1) * self.num_actions];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|x| *x -= max);
        }
    }

    /// Samples an action at `s` from the policy distribution.
    pub fn sample_action<R: Rng>(&self, s: usize, rng: &mut R) -> usize {
        let probs = self.action_probabilities(s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        self.num_actions - 1
    }

    /// Serializes to the `key = value` text schema parsed by [`Self::from_text`].
    pub fn to_text(&self) -> String {
        format!(
            "# softmax policy logits\nstates = {}\nactions = {}\nlogits = {}\n",
            self.num_states,
            self.num_actions,
            join_numbers(&self.logits)
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KvMap::parse(text)?;
        let num_states = kv
            .get_usize("states")?
            .ok_or_else(|| RcrlError::InvalidArgument("missing `states`".into()))?;
        let num_actions = kv
            .get_usize("actions")?
            .ok_or_else(|| RcrlError::InvalidArgument("missing `actions`".into()))?;
        let logits = kv
            .get_f64_list("logits")?
            .ok_or_else(|| RcrlError::InvalidArgument("missing `logits`".into()))?;
        Self::from_logits(num_states, num_actions, logits)
    }
}
