//! (s,a)-rectangular p-norm uncertainty sets and their worst-case
//! certificates.
//!
//! Each kernel row may be perturbed by a zero-sum vector `u` with
//! `||u||_p <= beta`. For a value vector `V` the adversary's optimal row
//! perturbation has the closed form `O(s') = beta sign(V(s') - omega)
//! |V(s') - omega|^(q-1) / kappa^(q-1)` where `q` is the Hoelder dual of `p`,
//! `omega = argmin_w ||V - w 1||_q` and `kappa` is the attained minimum. The
//! worst-case backup then subtracts the scalar penalty `beta kappa` from the
//! nominal expectation, and the worst kernel row is `P0 - O`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{RcrlError, Result};

const BISECTION_MAX_ITER: usize = 200;

/// Which vector norm bounds the row perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOrder {
    One,
    Two,
    Inf,
    /// Any other order `p >= 1`.
    Other(f64),
}

impl NormOrder {
    /// Parses `1`, `2`, `inf` or a float `p >= 1`.
    pub fn parse(token: &str) -> Result<Self> {
        let norm = match token {
            "1" => NormOrder::One,
            "2" => NormOrder::Two,
            "inf" | "Inf" | "INF" => NormOrder::Inf,
            other => NormOrder::Other(other.parse().map_err(|_| {
                RcrlError::InvalidArgument(format!("cannot parse norm order `{other}`"))
            })?),
        };
        norm.validate()?;
        Ok(norm)
    }

    pub fn validate(self) -> Result<()> {
        if let NormOrder::Other(p) = self {
            if !(p.is_finite() && p >= 1.0) {
                return Err(RcrlError::InvalidArgument(format!(
                    "norm order must satisfy p >= 1, got {p}"
                )));
            }
        }
        Ok(())
    }

    /// Numeric order (`f64::INFINITY` for the sup norm).
    pub fn value(self) -> f64 {
        match self {
            NormOrder::One => 1.0,
            NormOrder::Two => 2.0,
            NormOrder::Inf => f64::INFINITY,
            NormOrder::Other(p) => p,
        }
    }

    /// Hoelder dual `q` with `1/p + 1/q = 1`.
    pub fn dual(self) -> NormOrder {
        match self {
            NormOrder::One => NormOrder::Inf,
            NormOrder::Two => NormOrder::Two,
            NormOrder::Inf => NormOrder::One,
            NormOrder::Other(p) => {
                if p == 1.0 {
                    NormOrder::Inf
                } else {
                    NormOrder::Other(p / (p - 1.0))
                }
            }
        }
    }

    /// `||v||_p`.
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            NormOrder::One => v.iter().map(|x| x.abs()).sum(),
            NormOrder::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormOrder::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            NormOrder::Other(p) => v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

/// Zero-sum p-norm ball around each nominal kernel row. A uniform radius
/// `beta` applies to every state-action pair unless per-row radii are given
/// (used e.g. to put uncertainty on a single row of the counterexample).
#[derive(Debug, Clone, PartialEq)]
pub struct PNormUncertainty {
    norm: NormOrder,
    beta: f64,
    row_radii: Option<Vec<f64>>,
}

impl PNormUncertainty {
    pub fn new(norm: NormOrder, beta: f64) -> Result<Self> {
        norm.validate()?;
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(RcrlError::InvalidArgument(format!(
                "radius must be non-negative, got {beta}"
            )));
        }
        Ok(Self {
            norm,
            beta,
            row_radii: None,
        })
    }

    /// Per-row radii indexed by the flat `(s, a)` index.
    pub fn with_row_radii(norm: NormOrder, radii: Vec<f64>) -> Result<Self> {
        norm.validate()?;
        if radii.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(RcrlError::InvalidArgument(
                "per-row radii must be non-negative".into(),
            ));
        }
        let beta = radii.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            norm,
            beta,
            row_radii: Some(radii),
        })
    }

    pub fn norm_order(&self) -> NormOrder {
        self.norm
    }

    /// Largest row radius (the uniform `beta` unless per-row radii are set).
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Radius applied to the row with flat index `sa`.
    pub fn radius(&self, sa: usize) -> f64 {
        match &self.row_radii {
            Some(r) => r[sa],
            None => self.beta,
        }
    }

    /// Per-row radii when set, `None` for a uniform ball.
    pub fn row_radii(&self) -> Option<&[f64]> {
        self.row_radii.as_deref()
    }

    pub fn is_zero(&self) -> bool {
        self.beta == 0.0
    }

    /// The q-norm distance from `v` to the constant vectors — the penalty
    /// multiplier of the robust backup — without building a direction.
    pub fn kappa(&self, v: &[f64]) -> f64 {
        let q = self.norm.dual();
        let omega = q_center(q, v);
        let deviations: Vec<f64> = v.iter().map(|x| x - omega).collect();
        q.norm(&deviations)
    }

    /// Certificate for `V` at this set's norm with the uniform radius.
    pub fn certificate(&self, v: &[f64]) -> Result<WorstCaseCertificate> {
        worst_case_certificate(self.norm, self.beta, v)
    }
}

/// Closed-form description of the adversary's optimal row perturbation for a
/// fixed value vector: the q-norm center `omega`, the q-norm radius `kappa`
/// and the perturbation `direction` itself (p-norm equal to the requested
/// radius, zero-sum, inner product `radius * kappa` with the value vector).
#[derive(Debug, Clone)]
pub struct WorstCaseCertificate {
    pub omega: f64,
    pub kappa: f64,
    pub direction: Vec<f64>,
}

/// Computes the worst-case certificate of `v` for a ball of the given norm
/// and radius. A constant `v` (or a zero radius) yields a zero direction.
pub fn worst_case_certificate(
    norm: NormOrder,
    radius: f64,
    v: &[f64],
) -> Result<WorstCaseCertificate> {
    norm.validate()?;
    if v.is_empty() {
        return Err(RcrlError::InvalidArgument("empty value vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RcrlError::InvalidArgument("non-finite value vector".into()));
    }
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(RcrlError::InvalidArgument(format!(
            "radius must be non-negative, got {radius}"
        )));
    }

    let q = norm.dual();
    let omega = q_center(q, v);
    let deviations: Vec<f64> = v.iter().map(|x| x - omega).collect();
    let kappa = q.norm(&deviations);
    let mut direction = vec![0.0; v.len()];
    if kappa > 0.0 && radius > 0.0 {
        fill_direction(norm, q, radius, &deviations, kappa, &mut direction);
    }
    Ok(WorstCaseCertificate {
        omega,
        kappa,
        direction,
    })
}

/// Minimizer of `w -> ||v - w 1||_q`.
fn q_center(q: NormOrder, v: &[f64]) -> f64 {
    match q {
        // Mean minimizes the 2-norm.
        NormOrder::Two => v.iter().sum::<f64>() / v.len() as f64,
        // Midrange minimizes the sup norm.
        NormOrder::Inf => {
            let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (min + max)
        }
        // Median minimizes the 1-norm; even counts take the interval midpoint.
        NormOrder::One => {
            let mut sorted = v.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sorted.len();
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            }
        }
        // General q: the derivative sum_i sign(v_i - w) |v_i - w|^(q-1) is
        // strictly decreasing in w; bisect for its root on [min v, max v].
        NormOrder::Other(q) => {
            let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let h = |w: f64| -> f64 {
                v.iter()
                    .map(|x| {
                        let d = x - w;
                        d.signum() * d.abs().powf(q - 1.0)
                    })
                    .sum()
            };
            for _ in 0..BISECTION_MAX_ITER {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if h(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

fn fill_direction(
    p: NormOrder,
    q: NormOrder,
    radius: f64,
    deviations: &[f64],
    kappa: f64,
    out: &mut [f64],
) {
    match p {
        // q = 2: the normalized deviation vector.
        NormOrder::Two => {
            for (o, d) in out.iter_mut().zip(deviations) {
                *o = radius * d / kappa;
            }
        }
        // p = 1 (q = inf): mass +r/2 split over the argmax set, -r/2 over the
        // argmin set; ties split evenly so the direction stays deterministic.
        NormOrder::One => {
            let max = deviations.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = deviations.iter().cloned().fold(f64::INFINITY, f64::min);
            let n_max = deviations.iter().filter(|d| **d == max).count();
            let n_min = deviations.iter().filter(|d| **d == min).count();
            for (o, d) in out.iter_mut().zip(deviations) {
                if *d == max {
                    *o = radius / (2.0 * n_max as f64);
                } else if *d == min {
                    *o = -radius / (2.0 * n_min as f64);
                }
            }
        }
        // p = inf (q = 1): sign pattern of the deviations; entries at the
        // median absorb the opposite of the sign surplus to stay zero-sum.
        NormOrder::Inf => {
            let mut surplus = 0.0;
            let mut ties = 0usize;
            for d in deviations {
                if *d == 0.0 {
                    ties += 1;
                } else {
                    surplus += d.signum();
                }
            }
            for (o, d) in out.iter_mut().zip(deviations) {
                *o = if *d == 0.0 {
                    // |surplus| <= ties at an exact median, so this stays in
                    // [-radius, radius].
                    -radius * surplus / ties as f64
                } else {
                    radius * d.signum()
                };
            }
        }
        NormOrder::Other(_) => {
            let q = q.value();
            let scale = radius / kappa.powf(q - 1.0);
            for (o, d) in out.iter_mut().zip(deviations) {
                *o = scale * d.signum() * d.abs().powf(q - 1.0);
            }
        }
    }
}

/// A nominal row shifted by a worst-case direction. `outside_simplex` flags
/// rows with entries outside `[0, 1]`; no clipping is applied, so flagged
/// rows witness that the uncertainty set extends beyond the simplex.
#[derive(Debug, Clone)]
pub struct PerturbedRow {
    pub probabilities: Vec<f64>,
    pub outside_simplex: bool,
}

/// Worst-case kernel row `P+ = P0 - O` for a certificate already scaled to
/// the desired radius.
pub fn worst_case_kernel(nominal_row: &[f64], cert: &WorstCaseCertificate) -> Result<PerturbedRow> {
    if nominal_row.len() != cert.direction.len() {
        return Err(RcrlError::InvalidArgument(format!(
            "row length {} does not match certificate length {}",
            nominal_row.len(),
            cert.direction.len()
        )));
    }
    let probabilities: Vec<f64> = nominal_row
        .iter()
        .zip(&cert.direction)
        .map(|(p, o)| p - o)
        .collect();
    let outside_simplex = probabilities
        .iter()
        .any(|p| *p < -1e-12 || *p > 1.0 + 1e-12);
    Ok(PerturbedRow {
        probabilities,
        outside_simplex,
    })
}

/// Upper bound on the total-variation diameter of the per-row uncertainty
/// set: `beta |S|^(1 - 1/p)` by norm equivalence on the zero-sum subspace.
pub fn tv_diameter_bound(set: &PNormUncertainty, num_states: usize) -> f64 {
    let p = set.norm_order().value();
    let exponent = if p.is_infinite() { 1.0 } else { 1.0 - 1.0 / p };
    set.beta() * (num_states as f64).powf(exponent)
}

/// Random zero-sum direction with `||u||_p = radius`, used by brute-force
/// oracles to sample the boundary of the uncertainty set.
pub fn sample_boundary_direction<R: Rng>(
    norm: NormOrder,
    radius: f64,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    if radius == 0.0 || n < 2 {
        return vec![0.0; n];
    }
    loop {
        let mut u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let mean = u.iter().sum::<f64>() / n as f64;
        u.iter_mut().for_each(|x| *x -= mean);
        let len = norm.norm(&u);
        if len > 1e-12 {
            u.iter_mut().for_each(|x| *x *= radius / len);
            return u;
        }
    }
}
