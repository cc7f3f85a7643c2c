//! Randomized property sweeps for the bound inequalities: the two
//! log-sum-exp lemmas (with exact vertex suprema), the loss sandwich on
//! exactly enumerable instances, and the bound-comparison table.
//!
//! Inequalities are asserted asymmetrically: satisfaction by any margin
//! passes, violation beyond 1e-9 fails; the band in between is attributed to
//! round-off. Trials are chunked over deterministic substreams and merged
//! with order-independent reductions (sums and minima), so reports do not
//! depend on the worker count.

use std::io::Write;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::bounds::{
    competitor_bounds, delta_lower, delta_upper, essential_sup, feasible_region_contains,
    BoundParams, BoundValue,
};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::features::{build_mean_classifier, FeatureMap};
use crate::losses::{
    contrastive_loss_exact_opts, mean_supervised_loss, ExactOptions,
};
use crate::math::{log_cosh, lse_unchecked};
use crate::rng::substream;
use crate::textfmt::{csv_line, fmt_f64, fmt_f64_opt};

/// Violations smaller than this are attributed to round-off.
pub const VERIFY_TOL: f64 = 1e-9;
/// Tolerance for exact tightness checks (vertex values hitting suprema).
const TIGHT_TOL: f64 = 1e-12;

/// Outcome of one property sweep.
#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub property: String,
    pub trials: u64,
    pub failures: u64,
    /// Smallest signed margin seen (negative means some slack was consumed
    /// by round-off; below -1e-9 it counts as a failure).
    pub worst_margin: f64,
    /// Human-readable description of the swept parameter grid.
    pub params: String,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn to_json(&self) -> Value {
        json!({
            "property": self.property,
            "trials": self.trials,
            "failures": self.failures,
            "worst_margin": self.worst_margin,
            "params": self.params,
            "passed": self.passed(),
        })
    }
}

struct CellOutcome {
    trials: u64,
    failures: u64,
    worst_margin: f64,
}

/// `H(z) = LSE(z) + LSE(-z)` evaluated at the vertex with `j` positive
/// entries out of `n` at magnitude `l2`.
fn vertex_value(n: usize, j: usize, l2: f64) -> f64 {
    let (jf, rest) = (j as f64, (n - j) as f64);
    (jf * l2.exp() + rest * (-l2).exp()).ln() + (jf * (-l2).exp() + rest * l2.exp()).ln()
}

/// Checks `2 ln N <= LSE(z) + LSE(-z) <= 2 ln(N cosh(L^2))` on random boxes
/// `z in [-L^2, L^2]^N` for every `N <= n_max` and `L` in `l_set`, plus the
/// exact tightness of both ends (z = 0, and the half/half vertex for even
/// N) and the dominance of the vertex maximum over all random trials.
pub fn check_lemma_lse(
    n_max: usize,
    l_set: &[f64],
    trials: u64,
    seed: u64,
) -> Result<VerificationReport> {
    if n_max < 1 || trials < 1 || l_set.is_empty() {
        return Err(Error::InvalidParams("empty lemma sweep".into()));
    }
    let cells: Vec<(usize, f64)> = (1..=n_max)
        .flat_map(|n| l_set.iter().map(move |&l| (n, l)))
        .collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .enumerate()
        .map(|(cell_idx, &(n, l))| {
            let l2 = l * l;
            let lower = 2.0 * (n as f64).ln();
            // 2 ln(N cosh(L^2)) = 2 (ln N + log_cosh(L^2))
            let upper = 2.0 * ((n as f64).ln() + log_cosh(l2));
            let vertex_max = (0..=n)
                .map(|j| vertex_value(n, j, l2))
                .fold(f64::NEG_INFINITY, f64::max);

            let mut rng = substream(seed, cell_idx as u64);
            let mut z = vec![0.0f64; n];
            let mut neg = vec![0.0f64; n];
            let mut failures = 0u64;
            let mut worst = f64::INFINITY;
            let mut random_max = f64::NEG_INFINITY;
            for _ in 0..trials {
                for i in 0..n {
                    z[i] = (rng.gen::<f64>() * 2.0 - 1.0) * l2;
                    neg[i] = -z[i];
                }
                let value = lse_unchecked(&z) + lse_unchecked(&neg);
                random_max = random_max.max(value);
                let m = (value - lower).min(upper - value);
                worst = worst.min(m);
                if m < -VERIFY_TOL {
                    failures += 1;
                }
            }
            // z = 0 achieves the lower bound exactly
            let zeros = vec![0.0f64; n];
            let at_zero = lse_unchecked(&zeros) + lse_unchecked(&zeros);
            if (at_zero - lower).abs() > TIGHT_TOL * lower.max(1.0) {
                failures += 1;
            }
            // half/half vertex achieves the upper bound exactly for even N
            if n % 2 == 0 {
                let half = vertex_value(n, n / 2, l2);
                if (half - upper).abs() > TIGHT_TOL * upper.abs().max(1.0) {
                    failures += 1;
                }
            }
            // no random trial may exceed the vertex supremum
            if random_max > vertex_max + VERIFY_TOL {
                failures += 1;
            }
            CellOutcome {
                trials,
                failures,
                worst_margin: worst,
            }
        })
        .collect();
    Ok(merge_outcomes(
        "lemma_lse",
        format!("N in 1..={n_max}, L in {l_set:?}, {trials} trials per cell"),
        outcomes,
    ))
}

/// Checks the cross-entropy offset lemma
/// `ln[e^{-z0} / sum e^{-z}] >= -ln[e^{z0} / sum e^{z}] - 2 ln((K+1) cosh(L^2))`
/// on random boxes for every `K <= k_max` and `L` in `l_set`. For `K <= 12`
/// all `2^(K+1)` vertices are enumerated; the maximizing vertex must carry
/// `ceil((K+1)/2)` positive entries and dominate every random trial.
pub fn check_lemma_offset(
    k_max: usize,
    l_set: &[f64],
    trials: u64,
    seed: u64,
) -> Result<VerificationReport> {
    if k_max < 1 || trials < 1 || l_set.is_empty() {
        return Err(Error::InvalidParams("empty lemma sweep".into()));
    }
    let cells: Vec<(usize, f64)> = (1..=k_max)
        .flat_map(|k| l_set.iter().map(move |&l| (k, l)))
        .collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .enumerate()
        .map(|(cell_idx, &(k, l))| {
            let l2 = l * l;
            let n = k + 1;
            let offset = 2.0 * ((n as f64).ln() + log_cosh(l2));
            let mut rng = substream(seed, cell_idx as u64);
            let mut z = vec![0.0f64; n];
            let mut neg = vec![0.0f64; n];
            let mut failures = 0u64;
            let mut worst = f64::INFINITY;
            let mut random_max = f64::NEG_INFINITY;
            for _ in 0..trials {
                for i in 0..n {
                    z[i] = (rng.gen::<f64>() * 2.0 - 1.0) * l2;
                    neg[i] = -z[i];
                }
                // the lemma's two cross-entropy sides
                let lhs = -z[0] - lse_unchecked(&neg);
                let rhs = -z[0] + lse_unchecked(&z) - offset;
                let margin = lhs - rhs;
                random_max = random_max.max(lse_unchecked(&z) + lse_unchecked(&neg));
                worst = worst.min(margin);
                if margin < -VERIFY_TOL {
                    failures += 1;
                }
            }
            if k <= 12 {
                // exhaustive vertex sweep over all sign patterns
                let mut vertex_max = f64::NEG_INFINITY;
                let mut argmax_counts = Vec::new();
                for pattern in 0..(1u32 << n) {
                    for (i, zi) in z.iter_mut().enumerate() {
                        *zi = if pattern >> i & 1 == 1 { l2 } else { -l2 };
                    }
                    for i in 0..n {
                        neg[i] = -z[i];
                    }
                    let value = lse_unchecked(&z) + lse_unchecked(&neg);
                    if value > vertex_max + TIGHT_TOL {
                        vertex_max = value;
                        argmax_counts.clear();
                    }
                    if (value - vertex_max).abs() <= TIGHT_TOL {
                        argmax_counts.push(pattern.count_ones() as usize);
                    }
                }
                // the proof's maximizer sits at ceil((K+1)/2) positives (and
                // its mirror)
                let want = n.div_ceil(2);
                if !argmax_counts.iter().any(|&c| c == want || c == n - want) {
                    failures += 1;
                }
                if l2 > 0.0 {
                    let stated = vertex_value(n, want, l2);
                    if (stated - vertex_max).abs() > TIGHT_TOL * vertex_max.abs().max(1.0) {
                        failures += 1;
                    }
                }
                // for odd K the supremum 2 ln((K+1) cosh(L^2)) is attained
                if k % 2 == 1 {
                    let bound = offset;
                    if (vertex_max - bound).abs() > TIGHT_TOL * bound.abs().max(1.0) {
                        failures += 1;
                    }
                }
                if random_max > vertex_max + VERIFY_TOL {
                    failures += 1;
                }
            }
            CellOutcome {
                trials,
                failures,
                worst_margin: worst,
            }
        })
        .collect();
    Ok(merge_outcomes(
        "lemma_offset",
        format!("K in 1..={k_max}, L in {l_set:?}, {trials} trials per cell"),
        outcomes,
    ))
}

fn merge_outcomes(
    property: &str,
    params: String,
    outcomes: Vec<CellOutcome>,
) -> VerificationReport {
    let mut trials = 0;
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for o in &outcomes {
        trials += o.trials;
        failures += o.failures;
        worst = worst.min(o.worst_margin);
    }
    VerificationReport {
        property: property.to_string(),
        trials,
        failures,
        worst_margin: worst,
        params,
    }
}

/// One random exactly-enumerable instance: a labeled point set, a bounded
/// feature table, and the matching bound parameters.
struct SandwichInstance {
    data: LabeledDataset,
    features: FeatureMap,
    params: BoundParams,
    coupling: Vec<usize>,
}

fn random_instance(
    rng: &mut rand_chacha::ChaCha8Rng,
    c_max: u64,
    k_max: u64,
    budget: f64,
) -> SandwichInstance {
    // sample (C, K) until some per-class count fits the enumeration budget
    let (c, k, max_count) = loop {
        let c = rng.gen_range(2..=c_max);
        let k = rng.gen_range(1..=k_max);
        let cap = (budget / (c as f64).powi(k as i32 + 1))
            .powf(1.0 / (k as f64 + 2.0))
            .floor();
        if cap >= 1.0 {
            break (c, k, (cap as usize).min(5));
        }
    };
    let l = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
    let h = rng.gen_range(1..=4usize);
    let mut labels = Vec::new();
    for class in 0..c as usize {
        for _ in 0..rng.gen_range(1..=max_count) {
            labels.push(class);
        }
    }
    let n = labels.len();

    // feature styles: random radii in the ball, everything on the boundary,
    // or the +-L e1 parity map
    let style = rng.gen_range(0..5);
    let mut feats = Array2::zeros((n, h));
    for i in 0..n {
        match style {
            0 => {
                // parity map: +-L along the first axis by class parity
                feats[[i, 0]] = if labels[i] % 2 == 0 { l } else { -l };
            }
            _ => {
                let mut v: Vec<f64> = (0..h).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                let radius = if style == 1 { l } else { l * rng.gen::<f64>() };
                v.iter_mut().for_each(|x| *x *= radius / norm);
                feats.row_mut(i).assign(&Array1::from(v));
            }
        }
    }

    // within-class permutation used by the non-CI coupled sampler
    let data = LabeledDataset::new(Array2::zeros((n, 1)), labels, c as usize).unwrap();
    let mut coupling: Vec<usize> = (0..n).collect();
    for class in 0..c as usize {
        let mut bucket = data.class_points(class).to_vec();
        for i in (1..bucket.len()).rev() {
            bucket.swap(i, rng.gen_range(0..=i));
        }
        for (slot, &p) in data.class_points(class).iter().zip(&bucket) {
            coupling[*slot] = p;
        }
    }
    SandwichInstance {
        params: BoundParams::uniform(c, k, l).unwrap(),
        features: FeatureMap::from_table(feats, l).unwrap(),
        data,
        coupling,
    }
}

/// Draws random tiny instances, computes both losses exactly, and asserts
/// the full feasible region (conditionally independent positives) plus the
/// `+-2L^2`-relaxed surrogate corridor under a within-class coupling that
/// breaks conditional independence.
pub fn check_sandwich(
    instance_count: u64,
    c_max: u64,
    k_max: u64,
    seed: u64,
) -> Result<VerificationReport> {
    if instance_count < 1 || c_max < 2 || k_max < 1 {
        return Err(Error::InvalidParams("empty sandwich sweep".into()));
    }
    const PER_CHUNK: u64 = 8;
    let n_chunks = instance_count.div_ceil(PER_CHUNK);
    let outcomes: Vec<CellOutcome> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = substream(seed, chunk);
            let n = PER_CHUNK.min(instance_count - chunk * PER_CHUNK);
            let mut failures = 0u64;
            let mut worst = f64::INFINITY;
            for _ in 0..n {
                let inst = random_instance(&mut rng, c_max, k_max, 1e7);
                let prior = inst.params.prior().clone();
                let mc = build_mean_classifier(&inst.data, &inst.features).unwrap();
                let l_sup =
                    mean_supervised_loss(&inst.data, &prior, &inst.features, &mc).unwrap();
                let l_cont = contrastive_loss_exact_opts(
                    &inst.data,
                    &prior,
                    &inst.features,
                    inst.params.negatives(),
                    &ExactOptions::default(),
                )
                .unwrap();
                let check =
                    feasible_region_contains(&inst.params, l_cont.value, l_sup).unwrap();
                worst = worst.min(check.min_slack());
                if check.min_slack() < -VERIFY_TOL {
                    failures += 1;
                }

                // coupled positives: only the relaxed surrogate corridor holds
                let opts = ExactOptions {
                    positive_coupling: Some(inst.coupling.clone()),
                    ..Default::default()
                };
                let l_cont_nci = contrastive_loss_exact_opts(
                    &inst.data,
                    &prior,
                    &inst.features,
                    inst.params.negatives(),
                    &opts,
                )
                .unwrap();
                let slack = 2.0 * inst.params.norm_bound() * inst.params.norm_bound();
                let upper_margin =
                    l_cont_nci.value + delta_upper(&inst.params) + slack - l_sup;
                let lower_margin =
                    l_sup - (l_cont_nci.value + delta_lower(&inst.params) - slack);
                let m = upper_margin.min(lower_margin);
                worst = worst.min(m);
                if m < -VERIFY_TOL {
                    failures += 1;
                }
            }
            CellOutcome {
                trials: n,
                failures,
                worst_margin: worst,
            }
        })
        .collect();
    Ok(merge_outcomes(
        "sandwich",
        format!("{instance_count} instances, C <= {c_max}, K <= {k_max}, <= 5 pts/class"),
        outcomes,
    ))
}

/// Where the comparison table evaluates each upper bound.
#[derive(Clone, Copy, Debug)]
pub enum CompareMode {
    /// At the essential contrastive minimum for each K.
    AtEssCont,
    /// At one fixed contrastive loss.
    AtGivenLCont(f64),
}

/// One row of the bound-comparison table.
#[derive(Clone, Debug)]
pub struct CompareRow {
    pub classes: u64,
    pub negatives: u64,
    pub norm_bound: f64,
    pub l_cont: f64,
    pub ours_upper: f64,
    pub ours_lower: f64,
    pub arora: BoundValue,
    pub nozawa: BoundValue,
    pub ash: BoundValue,
    pub ess_sup: f64,
}

pub const COMPARE_CSV_HEADER: &str =
    "C,K,L,l_cont,ours_upper,ours_lower,arora,arora_valid,nozawa,nozawa_valid,ash,ess_sup";

/// Evaluates every bound on a K-grid at the chosen contrastive-loss level
/// (uniform prior).
pub fn compare_bounds_table(
    classes: u64,
    k_list: &[u64],
    norm_bound: f64,
    mode: CompareMode,
) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let p = BoundParams::uniform(classes, k, norm_bound)?;
        let l_cont = match mode {
            CompareMode::AtEssCont => crate::bounds::essential_cont(&p)?,
            CompareMode::AtGivenLCont(v) => v,
        };
        let comp = competitor_bounds(&p, l_cont)?;
        rows.push(CompareRow {
            classes,
            negatives: k,
            norm_bound,
            l_cont,
            ours_upper: l_cont + delta_upper(&p),
            ours_lower: l_cont + delta_lower(&p),
            arora: comp.arora,
            nozawa: comp.nozawa,
            ash: comp.ash,
            ess_sup: essential_sup(&p),
        });
    }
    Ok(rows)
}

pub fn write_compare_csv<W: Write>(out: &mut W, rows: &[CompareRow]) -> Result<()> {
    out.write_all(COMPARE_CSV_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for r in rows {
        out.write_all(
            csv_line([
                r.classes.to_string(),
                r.negatives.to_string(),
                fmt_f64(r.norm_bound),
                fmt_f64(r.l_cont),
                fmt_f64(r.ours_upper),
                fmt_f64(r.ours_lower),
                fmt_f64_opt(r.arora.value()),
                r.arora.is_valid().to_string(),
                fmt_f64_opt(r.nozawa.value()),
                r.nozawa.is_valid().to_string(),
                fmt_f64_opt(r.ash.value()),
                fmt_f64(r.ess_sup),
            ])
            .as_bytes(),
        )?;
    }
    Ok(())
}

/// Powers of two from 1 through `max` inclusive (the log-scaled K axis the
/// comparison figures use).
pub fn doubling_grid(max: u64) -> Vec<u64> {
    let mut ks = Vec::new();
    let mut k = 1;
    while k <= max {
        ks.push(k);
        k *= 2;
    }
    ks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemma_lse_small_sweep_passes() {
        let r = check_lemma_lse(8, &[0.5, 1.0], 2000, 1).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.worst_margin >= -VERIFY_TOL);
        assert_eq!(r.trials, 8 * 2 * 2000);
    }

    #[test]
    fn lemma_lse_known_points() {
        // N = 2, z = (L^2, -L^2), L = 1: the sum is exactly 2 ln(2 cosh 1)
        let value = lse_unchecked(&[1.0, -1.0]) + lse_unchecked(&[-1.0, 1.0]);
        let bound = 2.0 * (2.0 * 1.0f64.cosh()).ln();
        assert!((value - bound).abs() < 1e-12);
        assert!((value - 2.253_856).abs() < 1e-6);
        // N = 1: sum is exactly 0 for all z
        assert_eq!(lse_unchecked(&[0.7]) + lse_unchecked(&[-0.7]), 0.0);
    }

    #[test]
    fn lemma_offset_small_sweep_passes() {
        let r = check_lemma_offset(6, &[0.5, 1.0], 2000, 2).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn lemma_offset_known_points() {
        // K = 1, z0 = z1 = 0: margin equals 2 log_cosh(L^2)
        for l in [0.5f64, 1.0, 2.0] {
            let l2 = l * l;
            let offset = 2.0 * (2.0f64.ln() + log_cosh(l2));
            let lhs = -0.0 - lse_unchecked(&[0.0, 0.0]);
            let rhs = -0.0 + lse_unchecked(&[0.0, 0.0]) - offset;
            assert!((lhs - rhs - 2.0 * log_cosh(l2)).abs() < 1e-12);
        }
        // K = 3, L = 1: the vertex sweep supremum equals 2 ln(4 cosh 1)
        let mut best = f64::NEG_INFINITY;
        for pattern in 0..16u32 {
            let z: Vec<f64> = (0..4)
                .map(|i| if pattern >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect();
            let neg: Vec<f64> = z.iter().map(|v| -v).collect();
            best = best.max(lse_unchecked(&z) + lse_unchecked(&neg));
        }
        let stated = 2.0 * (4.0 * 1.0f64.cosh()).ln();
        assert!((best - stated).abs() < 1e-12);
    }

    #[test]
    fn lemma_offset_degenerate_box() {
        // L = 0 collapses the box to the origin: the two cross-entropies
        // coincide and the margin is exactly the 2 ln(K+1) offset minus
        // itself
        for k in [1usize, 4, 9] {
            let z = vec![0.0; k + 1];
            let offset = 2.0 * (((k + 1) as f64).ln() + log_cosh(0.0));
            let lhs = -z[0] - lse_unchecked(&z);
            let rhs = -z[0] + lse_unchecked(&z) - offset;
            // the bound is tight here: margin exactly zero
            assert_eq!(lhs - rhs, 0.0);
        }
        let r = check_lemma_offset(4, &[0.0], 100, 5).unwrap();
        assert!(r.passed());
        assert!(r.worst_margin >= 0.0);
    }

    #[test]
    fn sandwich_small_sweep_passes() {
        let r = check_sandwich(60, 6, 4, 3).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.trials, 60);
    }

    #[test]
    fn zero_feature_margins_match_closed_form() {
        // at f == 0: losses are (ln(K+1), ln C); margins to 5a/5b follow
        let p = BoundParams::uniform(5, 3, 1.0).unwrap();
        let (l_cont, l_sup) = (4.0f64.ln(), 5.0f64.ln());
        let check = feasible_region_contains(&p, l_cont, l_sup).unwrap();
        let expected_upper = delta_upper(&p) - (l_sup - l_cont);
        let expected_lower = (l_sup - l_cont) - delta_lower(&p);
        assert!((check.slack_upper - expected_upper).abs() < 1e-12);
        assert!((check.slack_lower - expected_lower).abs() < 1e-12);
        assert!(check.contained());
    }

    #[test]
    fn compare_table_fig3_shapes() {
        let ks = doubling_grid(512);
        let rows = compare_bounds_table(10, &ks, 1.0, CompareMode::AtEssCont).unwrap();
        // ours strictly decreasing on the doubling grid
        for w in rows.windows(2) {
            assert!(
                w[1].ours_upper < w[0].ours_upper,
                "ours not decreasing at K={}",
                w[1].negatives
            );
        }
        // ash nondecreasing on the doubling grid
        for w in rows.windows(2) {
            let (a, b) = (w[0].ash.value().unwrap(), w[1].ash.value().unwrap());
            assert!(b >= a, "ash decreasing at K={}", w[1].negatives);
        }
        // arora/nozawa invalid strictly below coverage, valid from K+1 >= C
        for r in &rows {
            assert_eq!(r.arora.is_valid(), r.negatives + 1 >= 10);
            assert_eq!(r.nozawa.is_valid(), r.negatives + 1 >= 10);
        }
        // arora blows up monotonically for K >= 64
        let big: Vec<f64> = rows
            .iter()
            .filter(|r| r.negatives >= 64)
            .map(|r| r.arora.value().unwrap())
            .collect();
        for w in big.windows(2) {
            assert!(w[1] > w[0]);
        }
        // nozawa: finite on its validity range, single valley (decreasing
        // then nondecreasing) from K = 16 on
        let noz: Vec<f64> = rows
            .iter()
            .filter(|r| r.negatives >= 16)
            .map(|r| r.nozawa.value().unwrap())
            .collect();
        let min_pos = noz
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        for w in noz[..=min_pos].windows(2) {
            assert!(w[1] <= w[0]);
        }
        for w in noz[min_pos..].windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn ours_decreasing_on_every_integer_k() {
        let ks: Vec<u64> = (1..=512).collect();
        let rows = compare_bounds_table(10, &ks, 1.0, CompareMode::AtEssCont).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].ours_upper < w[0].ours_upper, "K={}", w[1].negatives);
        }
    }

    #[test]
    fn compare_csv_schema() {
        let rows = compare_bounds_table(10, &[4, 16], 1.0, CompareMode::AtGivenLCont(2.0))
            .unwrap();
        let mut buf = Vec::new();
        write_compare_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), COMPARE_CSV_HEADER);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), COMPARE_CSV_HEADER.split(',').count());
        assert_eq!(first[0], "10");
        // K = 4: arora empty, flag false
        assert_eq!(first[6], "");
        assert_eq!(first[7], "false");
    }
}
