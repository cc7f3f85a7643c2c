//! Class-prior distribution and clamped probability values.

use crate::error::{Error, Result};
use crate::math;

/// Tolerance for a probability vector summing to one.
pub const PRIOR_SUM_TOL: f64 = 1e-12;

/// Round-off excess beyond [0, 1] that is forgiven (clamped) rather than
/// treated as a formula bug.
pub const PROB_CLAMP_TOL: f64 = 1e-9;

/// Probability mass over the latent classes.
///
/// Entries are nonnegative and sum to one within 1e-12. The closed-form
/// bounds require at least two classes; that is enforced where those bounds
/// are constructed (`BoundParams`), while the loss machinery also accepts
/// single-class datasets (e.g. fully coarse-grained labels), so a length-1
/// prior is permitted here.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrior {
    probs: Vec<f64>,
}

impl ClassPrior {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParams("class prior must be nonempty".into()));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParams(format!(
                    "prior entry {i} = {p} is outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PRIOR_SUM_TOL {
            return Err(Error::InvalidParams(format!(
                "prior sums to {sum}, not 1 within {PRIOR_SUM_TOL:e}"
            )));
        }
        Ok(Self { probs })
    }

    /// Uniform prior over `c` classes.
    pub fn uniform(c: usize) -> Result<Self> {
        if c == 0 {
            return Err(Error::InvalidParams("class prior must be nonempty".into()));
        }
        Ok(Self {
            probs: vec![1.0 / c as f64; c],
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Largest entry, pi_(1).
    pub fn max_entry(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Shannon entropy H(pi).
    pub fn entropy(&self) -> f64 {
        math::entropy(&self.probs)
    }

    /// True iff every entry is bit-identical to the first. Priors built by
    /// [`ClassPrior::uniform`] satisfy this; it gates the closed forms that
    /// are stated for the uniform prior only.
    pub fn is_uniform(&self) -> bool {
        self.probs.iter().all(|&p| p == self.probs[0])
    }
}

/// A probability in [0, 1].
///
/// Construction clamps round-off excursions smaller than 1e-9 back into the
/// interval and rejects anything larger, distinguishing float noise from a
/// genuinely broken formula.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct ProbValue(f64);

impl ProbValue {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::ProbabilityRange {
                value,
                tolerance: PROB_CLAMP_TOL,
            });
        }
        if value < -PROB_CLAMP_TOL || value > 1.0 + PROB_CLAMP_TOL {
            return Err(Error::ProbabilityRange {
                value,
                tolerance: PROB_CLAMP_TOL,
            });
        }
        Ok(Self(value.clamp(0.0, 1.0)))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<ProbValue> for f64 {
    fn from(p: ProbValue) -> f64 {
        p.0
    }
}
