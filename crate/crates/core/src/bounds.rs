//! Closed-form bound quantities relating the contrastive loss to the mean
//! supervised loss: the surrogate intercepts, essential minima, feasible
//! region, competing upper bounds from prior analyses, and the InfoNCE
//! identity.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::math::{
    binomial_pmf_scan, collision_prob, coupon_collector_prob, expected_log_col_plus_one, harmonic,
    log_cosh, CompensatedSum,
};
use crate::prior::{ClassPrior, ProbValue};
use crate::textfmt::{csv_line, fmt_f64, fmt_f64_opt};

/// The parameter tuple (C, K, L, prior) every bound is a function of.
#[derive(Clone, Debug)]
pub struct BoundParams {
    classes: u64,
    negatives: u64,
    norm_bound: f64,
    prior: ClassPrior,
}

impl BoundParams {
    pub fn new(classes: u64, negatives: u64, norm_bound: f64, prior: ClassPrior) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParams(format!(
                "bounds need C >= 2 classes, got {classes}"
            )));
        }
        if negatives < 1 {
            return Err(Error::InvalidParams(format!(
                "bounds need K >= 1 negatives, got {negatives}"
            )));
        }
        if !norm_bound.is_finite() || norm_bound < 0.0 {
            return Err(Error::InvalidParams(format!(
                "norm bound must be finite and nonnegative, got {norm_bound}"
            )));
        }
        if prior.len() as u64 != classes {
            return Err(Error::InvalidParams(format!(
                "prior has {} entries but C = {classes}",
                prior.len()
            )));
        }
        Ok(Self {
            classes,
            negatives,
            norm_bound,
            prior,
        })
    }

    /// Uniform-prior parameters.
    pub fn uniform(classes: u64, negatives: u64, norm_bound: f64) -> Result<Self> {
        let prior = ClassPrior::uniform(classes as usize)?;
        Self::new(classes, negatives, norm_bound, prior)
    }

    pub fn classes(&self) -> u64 {
        self.classes
    }

    pub fn negatives(&self) -> u64 {
        self.negatives
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn prior(&self) -> &ClassPrior {
        &self.prior
    }
}

/// Upper surrogate intercept:
/// `Delta_U = ln pi_(1) - ln K + 2 ln C + 2 ln cosh(L^2)`.
pub fn delta_upper(p: &BoundParams) -> f64 {
    p.prior.max_entry().ln() - (p.negatives as f64).ln()
        + 2.0 * (p.classes as f64).ln()
        + 2.0 * log_cosh(p.norm_bound * p.norm_bound)
}

/// Lower surrogate intercept:
/// `Delta_L = H(pi) + ln K - 2 ln(K+1) - 2 ln cosh(L^2)`.
pub fn delta_lower(p: &BoundParams) -> f64 {
    let k = p.negatives as f64;
    p.prior.entropy() + k.ln() - 2.0 * (k + 1.0).ln()
        - 2.0 * log_cosh(p.norm_bound * p.norm_bound)
}

/// Surrogate intercepts without the conditional-independence assumption:
/// the upper bound gains `+2L^2` and the lower bound loses `-2L^2`
/// (Cauchy-Schwarz slack on the anchor/positive coupling), so the relaxed
/// corridor is wider by exactly `4L^2`.
pub fn ci_relaxed_deltas(p: &BoundParams) -> (f64, f64) {
    let slack = 2.0 * p.norm_bound * p.norm_bound;
    (delta_upper(p) + slack, delta_lower(p) - slack)
}

/// Essential minimum of the mean supervised loss under ||f|| <= L:
/// `ln(1 + (C-1) e^{-2L^2})`.
pub fn essential_sup(p: &BoundParams) -> f64 {
    let c = p.classes as f64;
    ((c - 1.0) * (-2.0 * p.norm_bound * p.norm_bound).exp()).ln_1p()
}

/// Essential minimum of the contrastive loss under ||f|| <= L:
/// `sum_m Binom(K, m, 1/C) ln(1 + m + (K-m) e^{-2L^2})`.
///
/// The collision weights are stated for the uniform prior only; any other
/// prior is rejected.
pub fn essential_cont(p: &BoundParams) -> Result<f64> {
    if !p.prior.is_uniform() {
        return Err(Error::Unsupported(
            "the essential contrastive bound is defined for the uniform class prior only".into(),
        ));
    }
    let k = p.negatives;
    let damp = (-2.0 * p.norm_bound * p.norm_bound).exp();
    let mut acc = CompensatedSum::new();
    binomial_pmf_scan(k, 1.0 / p.classes as f64, |m, pmf| {
        let survivors = (k - m) as f64;
        acc.add(pmf * (1.0 + m as f64 + survivors * damp).ln());
    });
    Ok(acc.value())
}

/// Both essential minima as `(ess_sup, ess_cont)`.
pub fn essential_bounds(p: &BoundParams) -> Result<(f64, f64)> {
    Ok((essential_sup(p), essential_cont(p)?))
}

/// Signed slacks of the four feasible-region constraints at a given
/// `(l_cont, l_sup)` point. A constraint is satisfied iff its slack is
/// nonnegative.
#[derive(Clone, Copy, Debug)]
pub struct RegionCheck {
    /// `l_cont + Delta_U - l_sup` (surrogate upper bound).
    pub slack_upper: f64,
    /// `l_sup - l_cont - Delta_L` (surrogate lower bound).
    pub slack_lower: f64,
    /// `l_sup - ess_sup`.
    pub slack_ess_sup: f64,
    /// `l_cont - ess_cont`.
    pub slack_ess_cont: f64,
}

impl RegionCheck {
    pub fn slacks(&self) -> [f64; 4] {
        [
            self.slack_upper,
            self.slack_lower,
            self.slack_ess_sup,
            self.slack_ess_cont,
        ]
    }

    pub fn min_slack(&self) -> f64 {
        self.slacks().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn contained(&self) -> bool {
        self.min_slack() >= 0.0
    }

    /// Containment with a tolerance, e.g. statistical slack for Monte Carlo
    /// loss estimates.
    pub fn contained_with_tol(&self, tol: f64) -> bool {
        self.min_slack() >= -tol
    }
}

/// Evaluates the four feasible-region constraints at `(l_cont, l_sup)`.
pub fn feasible_region_contains(p: &BoundParams, l_cont: f64, l_sup: f64) -> Result<RegionCheck> {
    if !l_cont.is_finite() || !l_sup.is_finite() {
        return Err(Error::InvalidParams(
            "loss values must be finite for a region check".into(),
        ));
    }
    let (ess_sup, ess_cont) = essential_bounds(p)?;
    Ok(RegionCheck {
        slack_upper: l_cont + delta_upper(p) - l_sup,
        slack_lower: l_sup - l_cont - delta_lower(p),
        slack_ess_sup: l_sup - ess_sup,
        slack_ess_cont: l_cont - ess_cont,
    })
}

/// Why a competitor bound carries no numeric value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvalidReason {
    /// The coverage probability `v_{K+1}` is zero because `K + 1 < C`.
    CoverageZero,
    /// A denominator underflowed to zero in double precision.
    VanishedDenominator,
}

impl InvalidReason {
    pub fn code(&self) -> &'static str {
        match self {
            InvalidReason::CoverageZero => "coverage_zero",
            InvalidReason::VanishedDenominator => "vanished_denominator",
        }
    }
}

/// A bound value that may be undefined for the given parameters. Undefined
/// values are tagged with a reason instead of being reported as infinities,
/// so CSV/JSON consumers can tell "formula does not apply" from "huge".
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundValue {
    Valid(f64),
    Invalid(InvalidReason),
}

impl BoundValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            BoundValue::Valid(v) => Some(*v),
            BoundValue::Invalid(_) => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, BoundValue::Valid(_))
    }
}

/// The three competing upper bounds evaluated at a given contrastive loss.
#[derive(Clone, Copy, Debug)]
pub struct CompetitorBounds {
    pub arora: BoundValue,
    pub nozawa: BoundValue,
    pub ash: BoundValue,
}

/// Evaluates the competing surrogate upper bounds at `l_cont`:
///
/// * `arora  = (l_cont - E ln(Col+1)) / ((1 - tau_K) v_{K+1})`
/// * `nozawa = (2 l_cont - E ln(Col+1)) / v_{K+1}`
/// * `ash    = 2 / (1 - tau_K) * ceil(2 (C-1) H_{C-1} / K) * (l_cont - E ln(Col+1))`
///
/// All three closed forms assume the uniform class prior. `arora` and
/// `nozawa` are flagged invalid when `K + 1 < C` (zero coverage
/// probability).
pub fn competitor_bounds(p: &BoundParams, l_cont: f64) -> Result<CompetitorBounds> {
    if !p.prior.is_uniform() {
        return Err(Error::Unsupported(
            "competitor bounds are defined for the uniform class prior only".into(),
        ));
    }
    if !l_cont.is_finite() {
        return Err(Error::InvalidParams("l_cont must be finite".into()));
    }
    let c = p.classes;
    let k = p.negatives;
    let e_log_col = expected_log_col_plus_one(c, k)?;
    let v_next = coupon_collector_prob(c, k + 1)?.value();
    // 1 - tau_K computed directly as (1 - 1/C)^K so it keeps precision when
    // tau_K is within round-off of 1.
    let one_minus_tau = (k as f64 * (-1.0 / c as f64).ln_1p()).exp();

    let coverage_ok = k + 1 >= c;
    let arora = if !coverage_ok {
        BoundValue::Invalid(InvalidReason::CoverageZero)
    } else {
        let denom = one_minus_tau * v_next;
        if denom == 0.0 {
            BoundValue::Invalid(InvalidReason::VanishedDenominator)
        } else {
            BoundValue::Valid((l_cont - e_log_col) / denom)
        }
    };
    let nozawa = if !coverage_ok {
        BoundValue::Invalid(InvalidReason::CoverageZero)
    } else if v_next == 0.0 {
        BoundValue::Invalid(InvalidReason::VanishedDenominator)
    } else {
        BoundValue::Valid((2.0 * l_cont - e_log_col) / v_next)
    };
    let ash = if one_minus_tau == 0.0 {
        BoundValue::Invalid(InvalidReason::VanishedDenominator)
    } else {
        let ceil_factor = (2.0 * (c - 1) as f64 * harmonic(c - 1)? / k as f64).ceil();
        BoundValue::Valid(2.0 / one_minus_tau * ceil_factor * (l_cont - e_log_col))
    };
    Ok(CompetitorBounds { arora, nozawa, ash })
}

/// The InfoNCE mutual-information estimate implied by a contrastive loss.
#[derive(Clone, Copy, Debug)]
pub struct InfoNce {
    /// `I_NCE^{K+1} = ln(K+1) - l_cont`.
    pub value: f64,
    /// Consistency with the sample-based estimator ceiling
    /// `I_NCE <= 2 ln(K+1) + 5`; any nonnegative contrastive loss satisfies
    /// it, so this flag is always true for valid inputs.
    pub within_estimator_limit: bool,
}

/// Computes `I_NCE^{K+1} = ln(K+1) - l_cont` for `l_cont >= 0`.
pub fn info_nce_value(l_cont: f64, k: u64) -> Result<InfoNce> {
    if k < 1 {
        return Err(Error::InvalidParams(format!("info_nce needs K >= 1, got {k}")));
    }
    if !l_cont.is_finite() || l_cont < 0.0 {
        return Err(Error::InvalidParams(format!(
            "info_nce needs a finite nonnegative contrastive loss, got {l_cont}"
        )));
    }
    let ln_k1 = ((k + 1) as f64).ln();
    let value = ln_k1 - l_cont;
    Ok(InfoNce {
        value,
        within_estimator_limit: value <= 2.0 * ln_k1 + 5.0,
    })
}

/// How the class prior of a report was specified.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    Uniform,
    Custom,
}

impl PriorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PriorKind::Uniform => "uniform",
            PriorKind::Custom => "custom",
        }
    }
}

/// Every derived bound quantity for one `(C, K, L, prior)` setting.
///
/// The uniform-prior-only quantities (`ess_cont`, `v_next`, `tau`,
/// `e_log_col`, the competitor bounds, and the default `info_nce` reference)
/// are `None`/invalid under a custom prior. The competitor bounds and
/// `info_nce` are evaluated at the reference contrastive loss `l_cont_ref`,
/// which defaults to the essential minimum `ess_cont`.
#[derive(Clone, Debug)]
pub struct BoundsReport {
    pub classes: u64,
    pub negatives: u64,
    pub norm_bound: f64,
    pub prior_kind: PriorKind,
    pub delta_upper: f64,
    pub delta_lower: f64,
    pub gap: f64,
    pub ess_sup: f64,
    pub ess_cont: Option<f64>,
    pub v_next: Option<ProbValue>,
    pub tau: Option<ProbValue>,
    pub e_log_col: Option<f64>,
    pub arora: BoundValue,
    pub nozawa: BoundValue,
    pub ash: BoundValue,
    pub info_nce: Option<f64>,
    /// Reference contrastive loss the `arora`/`nozawa`/`ash`/`info_nce`
    /// fields were evaluated at (not serialized; the schema is fixed).
    pub l_cont_ref: Option<f64>,
}

impl BoundsReport {
    pub const CSV_HEADER: &'static str = "C,K,L,prior_kind,delta_upper,delta_lower,gap,ess_sup,ess_cont,v_next,tau,e_log_col,arora,arora_valid,nozawa,nozawa_valid,ash,info_nce";

    pub fn csv_row(&self) -> String {
        csv_line([
            self.classes.to_string(),
            self.negatives.to_string(),
            fmt_f64(self.norm_bound),
            self.prior_kind.as_str().to_string(),
            fmt_f64(self.delta_upper),
            fmt_f64(self.delta_lower),
            fmt_f64(self.gap),
            fmt_f64(self.ess_sup),
            fmt_f64_opt(self.ess_cont),
            fmt_f64_opt(self.v_next.map(ProbValue::value)),
            fmt_f64_opt(self.tau.map(ProbValue::value)),
            fmt_f64_opt(self.e_log_col),
            fmt_f64_opt(self.arora.value()),
            self.arora.is_valid().to_string(),
            fmt_f64_opt(self.nozawa.value()),
            self.nozawa.is_valid().to_string(),
            fmt_f64_opt(self.ash.value()),
            fmt_f64_opt(self.info_nce),
        ])
    }

    pub fn to_json(&self) -> Value {
        fn opt(v: Option<f64>) -> Value {
            v.map_or(Value::Null, |x| json!(x))
        }
        json!({
            "C": self.classes,
            "K": self.negatives,
            "L": self.norm_bound,
            "prior_kind": self.prior_kind.as_str(),
            "delta_upper": self.delta_upper,
            "delta_lower": self.delta_lower,
            "gap": self.gap,
            "ess_sup": self.ess_sup,
            "ess_cont": opt(self.ess_cont),
            "v_next": opt(self.v_next.map(ProbValue::value)),
            "tau": opt(self.tau.map(ProbValue::value)),
            "e_log_col": opt(self.e_log_col),
            "arora": opt(self.arora.value()),
            "arora_valid": self.arora.is_valid(),
            "nozawa": opt(self.nozawa.value()),
            "nozawa_valid": self.nozawa.is_valid(),
            "ash": opt(self.ash.value()),
            "info_nce": opt(self.info_nce),
        })
    }
}

/// Assembles the full [`BoundsReport`] for one parameter setting.
///
/// `l_cont_ref` fixes the contrastive-loss value the competitor bounds and
/// the InfoNCE identity are evaluated at; it defaults to the essential
/// contrastive minimum. Under a custom prior there is no default reference,
/// so the dependent fields are reported as unavailable unless `l_cont_ref`
/// is supplied (and the competitor closed forms stay unavailable
/// regardless, since they assume the uniform prior).
pub fn bounds_report(p: &BoundParams, l_cont_ref: Option<f64>) -> Result<BoundsReport> {
    let du = delta_upper(p);
    let dl = delta_lower(p);
    let uniform = p.prior().is_uniform();
    let ess_cont = if uniform { Some(essential_cont(p)?) } else { None };
    let l_ref = l_cont_ref.or(ess_cont);
    let (arora, nozawa, ash) = if uniform {
        let l = l_ref.expect("uniform prior always has an ess_cont reference");
        let comp = competitor_bounds(p, l)?;
        (comp.arora, comp.nozawa, comp.ash)
    } else {
        (
            BoundValue::Invalid(InvalidReason::CoverageZero),
            BoundValue::Invalid(InvalidReason::CoverageZero),
            BoundValue::Invalid(InvalidReason::CoverageZero),
        )
    };
    Ok(BoundsReport {
        classes: p.classes(),
        negatives: p.negatives(),
        norm_bound: p.norm_bound(),
        prior_kind: if uniform { PriorKind::Uniform } else { PriorKind::Custom },
        delta_upper: du,
        delta_lower: dl,
        gap: du - dl,
        ess_sup: essential_sup(p),
        ess_cont,
        v_next: if uniform {
            Some(coupon_collector_prob(p.classes(), p.negatives() + 1)?)
        } else {
            None
        },
        tau: if uniform {
            Some(collision_prob(p.classes(), p.negatives())?)
        } else {
            None
        },
        e_log_col: if uniform {
            Some(expected_log_col_plus_one(p.classes(), p.negatives())?)
        } else {
            None
        },
        arora,
        nozawa,
        ash,
        info_nce: match l_ref {
            Some(l) => Some(info_nce_value(l, p.negatives())?.value),
            None => None,
        },
        l_cont_ref: l_ref,
    })
}

/// The exact uniform-prior gap identity
/// `Delta_U - Delta_L = 4 ln cosh(L^2) + 2 ln(1 + 1/K)`.
pub fn gap_identity_rhs(k: u64, norm_bound: f64) -> f64 {
    4.0 * log_cosh(norm_bound * norm_bound) + 2.0 * (1.0 / k as f64).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_log_cosh_one() -> f64 {
        // oracle: direct evaluation, safe at this magnitude
        2.0 * 1.0f64.cosh().ln()
    }

    #[test]
    fn delta_upper_examples() {
        let p = BoundParams::uniform(10, 10, 1.0).unwrap();
        // C/K factor cancels at C = K under the uniform prior
        assert!((delta_upper(&p) - two_log_cosh_one()).abs() < 1e-12);

        let p = BoundParams::uniform(10, 512, 1.0).unwrap();
        let expected = (10.0f64 / 512.0).ln() + two_log_cosh_one();
        assert!((delta_upper(&p) - expected).abs() < 1e-12);
        assert!((delta_upper(&p) + 3.068_178).abs() < 1e-6);

        let p = BoundParams::uniform(10, 10, 0.0).unwrap();
        assert!(delta_upper(&p).abs() < 1e-12);
    }

    #[test]
    fn delta_lower_examples() {
        let p = BoundParams::uniform(10, 10, 1.0).unwrap();
        let expected = 10.0f64.ln() + (10.0f64 / 121.0).ln() - two_log_cosh_one();
        assert!((delta_lower(&p) - expected).abs() < 1e-12);
        assert!((delta_lower(&p) + 1.058_182).abs() < 1e-6);

        let p = BoundParams::uniform(10, 10, 0.0).unwrap();
        assert!((delta_lower(&p) - (100.0f64 / 121.0).ln()).abs() < 1e-12);

        let prior = ClassPrior::new(vec![1.0, 0.0]).unwrap();
        let p = BoundParams::new(2, 1, 0.0, prior).unwrap();
        assert!((delta_lower(&p) - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gap_identity_on_grid() {
        for &c in &[2u64, 3, 17, 128] {
            for &k in &[1u64, 2, 7, 64, 8192] {
                for &l in &[0.0, 0.5, 1.0, 2.0] {
                    let p = BoundParams::uniform(c, k, l).unwrap();
                    let gap = delta_upper(&p) - delta_lower(&p);
                    assert!(
                        (gap - gap_identity_rhs(k, l)).abs() < 1e-12,
                        "C={c} K={k} L={l}"
                    );
                }
            }
        }
    }

    #[test]
    fn delta_monotonicity() {
        // strictly decreasing in K for both intercepts; Delta_U increasing in L
        for &c in &[2u64, 10, 100] {
            let mut prev_u = f64::INFINITY;
            let mut prev_l = f64::INFINITY;
            for k in 1..=200u64 {
                let p = BoundParams::uniform(c, k, 1.0).unwrap();
                let du = delta_upper(&p);
                let dl = delta_lower(&p);
                assert!(du < prev_u);
                assert!(dl < prev_l, "delta_lower not decreasing at C={c} K={k}");
                prev_u = du;
                prev_l = dl;
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for &l in &[0.0, 0.5, 1.0, 2.0, 4.0] {
            let p = BoundParams::uniform(10, 10, l).unwrap();
            assert!(delta_upper(&p) > prev);
            prev = delta_upper(&p);
        }
    }

    #[test]
    fn essential_examples() {
        let p = BoundParams::uniform(10, 4, 1.0).unwrap();
        let expected = (1.0 + 9.0 * (-2.0f64).exp()).ln();
        assert!((essential_sup(&p) - expected).abs() < 1e-12);
        assert!((essential_sup(&p) - 0.796_614).abs() < 1e-6);

        // two-term sum checkable by hand
        let p = BoundParams::uniform(2, 1, 1.0).unwrap();
        let expected = 0.5 * (1.0 + (-2.0f64).exp()).ln() + 0.5 * 2.0f64.ln();
        assert!((essential_cont(&p).unwrap() - expected).abs() < 1e-12);
        assert!((essential_cont(&p).unwrap() - 0.410_038).abs() < 1e-6);

        // L = 0 collapses both sums
        for (c, k) in [(2u64, 1u64), (10, 7), (37, 100)] {
            let p = BoundParams::uniform(c, k, 0.0).unwrap();
            assert!((essential_sup(&p) - (c as f64).ln()).abs() < 1e-12);
            assert!((essential_cont(&p).unwrap() - ((k + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn essential_bounds_are_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let c = rng.gen_range(2..=64u64);
            let k = rng.gen_range(1..=512u64);
            let l = rng.gen::<f64>() * 2.0;
            let p = BoundParams::uniform(c, k, l).unwrap();
            let (es, ec) = essential_bounds(&p).unwrap();
            assert!(es <= (c as f64).ln() + 1e-12);
            assert!(ec <= ((k + 1) as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn essential_cont_rejects_non_uniform() {
        let prior = ClassPrior::new(vec![0.9, 0.1]).unwrap();
        let p = BoundParams::new(2, 4, 1.0, prior).unwrap();
        assert!(matches!(essential_cont(&p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn region_examples() {
        let p = BoundParams::uniform(10, 10, 1.0).unwrap();
        // the f == 0 point
        let check =
            feasible_region_contains(&p, 11.0f64.ln(), 10.0f64.ln()).unwrap();
        assert!(check.contained(), "slacks: {:?}", check.slacks());

        // the optimal corner (ess_cont, ess_sup) stays feasible
        let (es, ec) = essential_bounds(&p).unwrap();
        let check = feasible_region_contains(&p, ec, es).unwrap();
        assert!(check.contained(), "slacks: {:?}", check.slacks());
        assert_eq!(check.slack_ess_sup, 0.0);
        assert_eq!(check.slack_ess_cont, 0.0);

        // violating 5a by construction
        let l_cont = 2.0;
        let check =
            feasible_region_contains(&p, l_cont, l_cont + delta_upper(&p) + 1.0).unwrap();
        assert!(!check.contained());
        assert!(check.slack_upper < 0.0);
    }

    #[test]
    fn zero_feature_point_always_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let c = rng.gen_range(2..=128u64);
            let k = rng.gen_range(1..=8192u64);
            let l = rng.gen::<f64>() * 2.0;
            let p = BoundParams::uniform(c, k, l).unwrap();
            let check = feasible_region_contains(&p, ((k + 1) as f64).ln(), (c as f64).ln())
                .unwrap();
            assert!(check.contained(), "C={c} K={k} L={l}: {:?}", check.slacks());
        }
    }

    #[test]
    fn competitor_validity_flags() {
        let p = BoundParams::uniform(10, 5, 1.0).unwrap();
        let comp = competitor_bounds(&p, 1.0).unwrap();
        assert_eq!(comp.arora, BoundValue::Invalid(InvalidReason::CoverageZero));
        assert_eq!(comp.nozawa, BoundValue::Invalid(InvalidReason::CoverageZero));
        assert!(comp.ash.is_valid());
    }

    #[test]
    fn nozawa_hand_checkable() {
        let p = BoundParams::uniform(2, 1, 1.0).unwrap();
        let comp = competitor_bounds(&p, 2.0f64.ln()).unwrap();
        // v_2 = 1/2, E ln(Col+1) = ln(2)/2, so (2 ln 2 - ln(2)/2) / (1/2) = 3 ln 2
        let expected = 3.0 * 2.0f64.ln();
        assert!((comp.nozawa.value().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn arora_against_monte_carlo_coverage() {
        // oracle: Monte Carlo coverage simulation for v_17 at C = 10
        let p = BoundParams::uniform(10, 16, 1.0).unwrap();
        let ec = essential_cont(&p).unwrap();
        let comp = competitor_bounds(&p, ec).unwrap();

        let trials = 1_000_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut hits = 0u64;
        for _ in 0..trials {
            let mut seen = [false; 10];
            for _ in 0..17 {
                seen[rng.gen_range(0..10usize)] = true;
            }
            if seen.iter().all(|&s| s) {
                hits += 1;
            }
        }
        let v17_mc = hits as f64 / trials as f64;
        let se = (v17_mc * (1.0 - v17_mc) / trials as f64).sqrt();
        assert!((v17_mc - 0.0997f64).abs() < 0.002, "v_17 MC sanity: {v17_mc}");

        let elc = expected_log_col_plus_one(10, 16).unwrap();
        let one_minus_tau = 0.9f64.powi(16);
        // propagate 3 sigma of the coverage estimate through the formula
        let lo = (ec - elc) / (one_minus_tau * (v17_mc + 3.0 * se));
        let hi = (ec - elc) / (one_minus_tau * (v17_mc - 3.0 * se));
        let arora = comp.arora.value().unwrap();
        assert!(arora > lo && arora < hi, "{arora} not in [{lo}, {hi}]");
    }

    #[test]
    fn ci_relaxed_examples() {
        let p = BoundParams::uniform(10, 10, 0.0).unwrap();
        let (u, l) = ci_relaxed_deltas(&p);
        assert_eq!(u, delta_upper(&p));
        assert_eq!(l, delta_lower(&p));

        let p = BoundParams::uniform(10, 10, 1.0).unwrap();
        let (u, l) = ci_relaxed_deltas(&p);
        assert!((u - (delta_upper(&p) + 2.0)).abs() < 1e-15);
        assert!((l - (delta_lower(&p) - 2.0)).abs() < 1e-15);
        // slack width is 4 L^2 by construction
        assert!(((u - delta_upper(&p)) + (delta_lower(&p) - l) - 4.0).abs() < 1e-15);
        assert!(u >= delta_upper(&p) && l <= delta_lower(&p));
    }

    #[test]
    fn info_nce_examples() {
        for k in [1u64, 5, 100] {
            let r = info_nce_value(((k + 1) as f64).ln(), k).unwrap();
            assert!(r.value.abs() < 1e-15);
            assert!(r.within_estimator_limit);
        }
        let r = info_nce_value(0.0, 15).unwrap();
        assert!((r.value - 16.0f64.ln()).abs() < 1e-15);
        let r = info_nce_value(0.5, 63).unwrap();
        assert!((r.value - (64.0f64.ln() - 0.5)).abs() < 1e-15);
        assert!((r.value - 3.658_883).abs() < 1e-6);
        assert!(info_nce_value(-0.1, 4).is_err());
    }

    #[test]
    fn report_schema_round_trip() {
        let p = BoundParams::uniform(10, 16, 1.0).unwrap();
        let r = bounds_report(&p, None).unwrap();
        assert_eq!(r.gap, r.delta_upper - r.delta_lower);
        let header_fields = BoundsReport::CSV_HEADER.split(',').count();
        let row = r.csv_row();
        assert_eq!(row.trim_end().split(',').count(), header_fields);
        let js = r.to_json();
        assert_eq!(js.as_object().unwrap().len(), header_fields);
        assert!(js["arora_valid"].as_bool().unwrap());
        // info_nce defaults to the ess_cont reference
        let expected = 17.0f64.ln() - r.ess_cont.unwrap();
        assert!((js["info_nce"].as_f64().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn report_custom_prior_leaves_uniform_fields_empty() {
        let prior = ClassPrior::new(vec![0.7, 0.2, 0.1]).unwrap();
        let p = BoundParams::new(3, 4, 1.0, prior).unwrap();
        let r = bounds_report(&p, None).unwrap();
        assert_eq!(r.prior_kind, PriorKind::Custom);
        assert!(r.ess_cont.is_none() && r.v_next.is_none() && r.info_nce.is_none());
        assert!(!r.arora.is_valid());
        let row = r.csv_row();
        assert!(row.contains(",custom,"));
        // supplying an explicit reference enables the identity field
        let r = bounds_report(&p, Some(1.0)).unwrap();
        assert!((r.info_nce.unwrap() - (5.0f64.ln() - 1.0)).abs() < 1e-12);
    }
}
