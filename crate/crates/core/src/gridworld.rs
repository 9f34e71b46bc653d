//! The 4x6 gridworld: deterministic training dynamics, a slippery test
//! variant, and the dual reward stack (goal progress vs. hazard events).
//!
//! Cells are 1-indexed `(row, col)` with `(1,1)` at the top-left. Stepping
//! out of bounds keeps the position, stepping onto an obstacle resets to the
//! start; both count as hazard events for the constraint reward. The target
//! is absorbing with zero further reward by default.

use crate::config::KvMap;
use crate::error::{RcrlError, Result};
use crate::eval::{
    induced_worst_case_kernel, robust_value_fixed_point, DEFAULT_EVAL_MAX_ITER, DEFAULT_EVAL_TOL,
};
use crate::mdp::TabularRCMDP;
use crate::occupancy::visitation_under_kernel;
use crate::policy::SoftmaxPolicy;
use crate::uncertainty::{tv_diameter_bound, PNormUncertainty};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

pub fn action_name(action: usize) -> &'static str {
    match action {
        UP => "up",
        DOWN => "down",
        LEFT => "left",
        RIGHT => "right",
        _ => "?",
    }
}

/// Deterministic kernel for training vs. slippery kernel for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    Train,
    Test,
}

/// How an unintended slip redirects the move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlipMode {
    /// Split the slip mass over the two perpendicular moves.
    Perpendicular,
    /// Split the slip mass over the three other moves.
    UniformOther,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridworldSpec {
    pub rows: usize,
    pub cols: usize,
    pub start: (usize, usize),
    pub target: (usize, usize),
    pub obstacles: Vec<(usize, usize)>,
    pub slip_prob: f64,
    pub slip_mode: SlipMode,
    pub discount: f64,
    pub step_penalty: f64,
    pub target_reward: f64,
    pub hazard_penalty: f64,
    /// Constraint threshold `d_1`; the default encodes "fewer than 0.2
    /// expected discounted hazard events" as `V_1(mu) >= -0.2`.
    pub threshold: f64,
    pub absorbing_target: bool,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 6,
            start: (1, 1),
            target: (2, 5),
            obstacles: vec![(1, 3), (1, 4), (1, 5)],
            slip_prob: 0.2,
            slip_mode: SlipMode::Perpendicular,
            discount: 0.99,
            step_penalty: -0.1,
            target_reward: 1.0,
            hazard_penalty: -1.0,
            threshold: -0.2,
            absorbing_target: true,
        }
    }
}

impl GridworldSpec {
    pub fn num_states(&self) -> usize {
        self.rows * self.cols
    }

    /// Flat state index of a 1-indexed cell.
    pub fn state_index(&self, cell: (usize, usize)) -> usize {
        (cell.0 - 1) * self.cols + (cell.1 - 1)
    }

    /// 1-indexed cell of a flat state index.
    pub fn cell_of(&self, state: usize) -> (usize, usize) {
        (state / self.cols + 1, state % self.cols + 1)
    }

    fn in_bounds(&self, cell: (usize, usize)) -> bool {
        (1..=self.rows).contains(&cell.0) && (1..=self.cols).contains(&cell.1)
    }

    pub fn is_obstacle(&self, cell: (usize, usize)) -> bool {
        self.obstacles.contains(&cell)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(RcrlError::InvalidModel("grid must be non-empty".into()));
        }
        for (name, cell) in [("start", self.start), ("target", self.target)] {
            if !self.in_bounds(cell) {
                return Err(RcrlError::InvalidModel(format!(
                    "{name} cell {cell:?} is out of bounds for {}x{}",
                    self.rows, self.cols
                )));
            }
            if self.is_obstacle(cell) {
                return Err(RcrlError::InvalidModel(format!(
                    "{name} cell {cell:?} sits on an obstacle"
                )));
            }
        }
        if self.start == self.target {
            return Err(RcrlError::InvalidModel(
                "start and target must be distinct cells".into(),
            ));
        }
        for &cell in &self.obstacles {
            if !self.in_bounds(cell) {
                return Err(RcrlError::InvalidModel(format!(
                    "obstacle {cell:?} is out of bounds"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(RcrlError::InvalidModel(format!(
                "slip probability must lie in [0, 1), got {}",
                self.slip_prob
            )));
        }
        if !(0.0 < self.discount && self.discount < 1.0) {
            return Err(RcrlError::InvalidModel(format!(
                "discount must lie in (0, 1), got {}",
                self.discount
            )));
        }
        for (name, value) in [
            ("step penalty", self.step_penalty),
            ("target reward", self.target_reward),
            ("hazard penalty", self.hazard_penalty),
            ("threshold", self.threshold),
        ] {
            if !value.is_finite() {
                return Err(RcrlError::InvalidModel(format!(
                    "{name} must be finite, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Applies `grid.*` keys from a config map over the defaults.
    pub fn from_map(map: &KvMap) -> Result<Self> {
        let mut spec = Self::default();
        if let Some(v) = map.get_usize("grid.rows")? {
            spec.rows = v;
        }
        if let Some(v) = map.get_usize("grid.cols")? {
            spec.cols = v;
        }
        if let Some(v) = map.get("grid.start") {
            spec.start = parse_cell(v)?;
        }
        if let Some(v) = map.get("grid.target") {
            spec.target = parse_cell(v)?;
        }
        if let Some(v) = map.get("grid.obstacles") {
            spec.obstacles = parse_cell_list(v)?;
        }
        if let Some(v) = map.get_f64("grid.slip")? {
            spec.slip_prob = v;
        }
        if let Some(v) = map.get("grid.slip_mode") {
            spec.slip_mode = match v {
                "perpendicular" => SlipMode::Perpendicular,
                "uniform" => SlipMode::UniformOther,
                other => {
                    return Err(RcrlError::InvalidArgument(format!(
                        "unknown slip mode `{other}` (use `perpendicular` or `uniform`)"
                    )))
                }
            };
        }
        if let Some(v) = map.get_f64("grid.discount")? {
            spec.discount = v;
        }
        if let Some(v) = map.get_f64("grid.step_penalty")? {
            spec.step_penalty = v;
        }
        if let Some(v) = map.get_f64("grid.target_reward")? {
            spec.target_reward = v;
        }
        if let Some(v) = map.get_f64("grid.hazard_penalty")? {
            spec.hazard_penalty = v;
        }
        if let Some(v) = map.get_f64("grid.threshold")? {
            spec.threshold = v;
        }
        if let Some(v) = map.get_bool("grid.absorbing")? {
            spec.absorbing_target = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Parses a 1-indexed `row,col` pair.
pub fn parse_cell(token: &str) -> Result<(usize, usize)> {
    let bad = || RcrlError::InvalidArgument(format!("expected `row,col`, got `{token}`"));
    let (r, c) = token.split_once(',').ok_or_else(bad)?;
    Ok((
        r.trim().parse().map_err(|_| bad())?,
        c.trim().parse().map_err(|_| bad())?,
    ))
}

/// Parses a semicolon-separated list of cells, e.g. `1,5;2,3`.
pub fn parse_cell_list(token: &str) -> Result<Vec<(usize, usize)>> {
    token
        .split(';')
        .map(str::trim)
        .filter(|part| !part.is_empty())
        .map(parse_cell)
        .collect()
}

/// Outcome of executing one directional move from a cell.
struct Step {
    dest: usize,
    r0: f64,
    r1: f64,
}

fn resolve_move(spec: &GridworldSpec, cell: (usize, usize), action: usize) -> Step {
    let (r, c) = (cell.0 as isize, cell.1 as isize);
    let (nr, nc) = match action {
        UP => (r - 1, c),
        DOWN => (r + 1, c),
        LEFT => (r, c - 1),
        _ => (r, c + 1),
    };
    if nr < 1 || nr > spec.rows as isize || nc < 1 || nc > spec.cols as isize {
        // Boundary bump: stay in place, hazard event.
        return Step {
            dest: spec.state_index(cell),
            r0: spec.step_penalty,
            r1: spec.hazard_penalty,
        };
    }
    let next = (nr as usize, nc as usize);
    if spec.is_obstacle(next) {
        // Obstacle entry: hazard event plus reset to the start cell.
        return Step {
            dest: spec.state_index(spec.start),
            r0: spec.hazard_penalty,
            r1: spec.hazard_penalty,
        };
    }
    if next == spec.target {
        return Step {
            dest: spec.state_index(next),
            r0: spec.target_reward,
            r1: 0.0,
        };
    }
    Step {
        dest: spec.state_index(next),
        r0: spec.step_penalty,
        r1: 0.0,
    }
}

/// Builds the 24-state, 4-action constrained MDP for the requested mode.
/// Test mode replaces the executed move by a slip with probability
/// `slip_prob`; rewards are the kernel-consistent expectations.
pub fn build_gridworld(spec: &GridworldSpec, mode: GridMode) -> Result<TabularRCMDP> {
    spec.validate()?;
    let n = spec.num_states();
    let na = 4;
    let mut kernel = vec![0.0; n * na * n];
    let mut r0 = vec![0.0; n * na];
    let mut r1 = vec![0.0; n * na];
    for s in 0..n {
        let cell = spec.cell_of(s);
        let absorbed = spec.absorbing_target && cell == spec.target;
        for a in 0..na {
            let sa = s * na + a;
            if absorbed {
                kernel[sa * n + s] = 1.0;
                continue;
            }
            let outcomes: Vec<(f64, usize)> = if mode == GridMode::Train || spec.slip_prob == 0.0 {
                vec![(1.0, a)]
            } else {
                match spec.slip_mode {
                    SlipMode::Perpendicular => {
                        let (p1, p2) = if a == UP || a == DOWN {
                            (LEFT, RIGHT)
                        } else {
                            (UP, DOWN)
                        };
                        let half = spec.slip_prob / 2.0;
                        vec![(1.0 - spec.slip_prob, a), (half, p1), (half, p2)]
                    }
                    SlipMode::UniformOther => {
                        let third = spec.slip_prob / 3.0;
                        let mut v = vec![(1.0 - spec.slip_prob, a)];
                        v.extend((0..na).filter(|&b| b != a).map(|b| (third, b)));
                        v
                    }
                }
            };
            for (prob, dir) in outcomes {
                let step = resolve_move(spec, cell, dir);
                kernel[sa * n + step.dest] += prob;
                r0[sa] += prob * step.r0;
                r1[sa] += prob * step.r1;
            }
        }
    }
    TabularRCMDP::new(
        n,
        na,
        kernel,
        vec![r0, r1],
        vec![spec.threshold],
        spec.discount,
        {
            let mut mu = vec![0.0; n];
            mu[spec.state_index(spec.start)] = 1.0;
            mu
        },
    )
}

/// Witnesses for the analysis assumptions: minimum normalized visitation
/// under the induced worst-case kernel (zero flags unreachable states), the
/// total-variation diameter of the uncertainty set, reward magnitude, and
/// how many induced rows left the simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    pub min_visitation: f64,
    pub min_state: usize,
    pub diameter_bound: f64,
    pub simplex_violations: usize,
    pub max_abs_reward: f64,
}

pub fn assumption_diagnostics(
    mdp: &TabularRCMDP,
    set: &PNormUncertainty,
    policy: &SoftmaxPolicy,
) -> Result<AssumptionReport> {
    let fp = robust_value_fixed_point(mdp, set, policy, 0, DEFAULT_EVAL_TOL, DEFAULT_EVAL_MAX_ITER)?;
    let induced = induced_worst_case_kernel(mdp, set, &fp.values)?;
    let visitation = visitation_under_kernel(mdp, &induced.kernel, policy, true)?;
    let mut min_state = 0;
    let mut min_visitation = f64::INFINITY;
    for (s, &d) in visitation.values().iter().enumerate() {
        if d < min_visitation {
            min_visitation = d;
            min_state = s;
        }
    }
    let max_abs_reward = (0..mdp.num_rewards())
        .flat_map(|i| mdp.reward_table(i).iter().map(|r| r.abs()))
        .fold(0.0, f64::max);
    Ok(AssumptionReport {
        min_visitation,
        min_state,
        diameter_bound: tv_diameter_bound(set, mdp.num_states()),
        simplex_violations: induced.simplex_violations,
        max_abs_reward,
    })
}
