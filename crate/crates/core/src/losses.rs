//! Finite-population loss computation.
//!
//! Both losses are evaluated under the generating process: a positive class
//! drawn from the prior, anchor and positive drawn iid from that class's
//! empirical conditional (coincidence allowed), and K negatives drawn iid
//! from the prior mixture. The contrastive loss comes either from exact
//! enumeration (negative tuples collapsed to unordered multisets with
//! multinomial weights) or from deterministic chunked Monte Carlo.
//!
//! All inner products are f64 and every log-ratio goes through a max-shifted
//! log-sum-exp; no naive exp ratios.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::features::{build_mean_classifier, FeatureMap, MeanClassifier};
use crate::math::CompensatedSum;
use crate::prior::ClassPrior;
use crate::rng::{substream, CatSampler, ChunkStats, McSummary, MC_CHUNK};

/// How a [`LossEstimate`] was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimateMode {
    Exact,
    MonteCarlo,
}

/// A loss value with its sampling uncertainty.
///
/// `std_error` is zero exactly when the estimate is exact; for Monte Carlo
/// it is the sample standard deviation divided by sqrt(n).
#[derive(Clone, Copy, Debug)]
pub struct LossEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub mode: EstimateMode,
}

impl LossEstimate {
    fn exact(value: f64, terms: u64) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_samples: terms,
            seed: 0,
            mode: EstimateMode::Exact,
        }
    }

    fn monte_carlo(summary: McSummary, seed: u64) -> Self {
        Self {
            value: summary.mean,
            std_error: summary.std_error,
            n_samples: summary.count,
            seed,
            mode: EstimateMode::MonteCarlo,
        }
    }
}

fn check_alignment(data: &LabeledDataset, prior: &ClassPrior, f: &FeatureMap) -> Result<()> {
    if f.n() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "feature table has {} rows, dataset {}",
            f.n(),
            data.len()
        )));
    }
    if prior.len() != data.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "prior has {} entries, dataset {} classes",
            prior.len(),
            data.num_classes()
        )));
    }
    Ok(())
}

/// Mean supervised loss: softmax cross-entropy of a linear classifier over
/// the finite population, classes weighted by the prior and points uniformly
/// within their class.
pub fn supervised_loss(
    data: &LabeledDataset,
    prior: &ClassPrior,
    f: &FeatureMap,
    weights: &Array2<f64>,
    bias: &Array1<f64>,
) -> Result<f64> {
    check_alignment(data, prior, f)?;
    if weights.nrows() != data.num_classes() || weights.ncols() != f.dim() {
        return Err(Error::DimensionMismatch(format!(
            "classifier is {}x{}, expected {}x{}",
            weights.nrows(),
            weights.ncols(),
            data.num_classes(),
            f.dim()
        )));
    }
    let logits = f.table().dot(&weights.t()) + bias;
    let mut total = CompensatedSum::new();
    for c in 0..data.num_classes() {
        let pc = prior.probs()[c];
        if pc == 0.0 {
            continue;
        }
        let bucket = data.class_points(c);
        let w = pc / bucket.len() as f64;
        for &i in bucket {
            let row = logits.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
            total.add(w * (lse - row[c]));
        }
    }
    Ok(total.value())
}

/// Mean supervised loss of the mean classifier `W^mu`.
pub fn mean_supervised_loss(
    data: &LabeledDataset,
    prior: &ClassPrior,
    f: &FeatureMap,
    mc: &MeanClassifier,
) -> Result<f64> {
    supervised_loss(
        data,
        prior,
        f,
        mc.means(),
        &Array1::zeros(data.num_classes()),
    )
}

/// Fraction of points whose argmax logit matches the label (ties break to
/// the lowest class index).
pub fn classifier_accuracy(
    data: &LabeledDataset,
    f: &FeatureMap,
    weights: &Array2<f64>,
    bias: &Array1<f64>,
) -> Result<f64> {
    if f.n() != data.len() {
        return Err(Error::DimensionMismatch("features do not match dataset".into()));
    }
    let logits = f.table().dot(&weights.t()) + bias;
    let mut hits = 0usize;
    for i in 0..data.len() {
        let row = logits.row(i);
        let mut best = 0;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        if best == data.label(i) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Options for the exact contrastive enumeration.
#[derive(Clone, Debug)]
pub struct ExactOptions {
    /// Upper bound on the ordered-tuple count `C^(K+1) * max_count^(K+2)`;
    /// configurations above it are rejected in favor of Monte Carlo. The
    /// multiset-grouped enumeration actually performed is much smaller.
    pub budget_terms: f64,
    /// When set, the positive is the fixed partner `coupling[i]` of each
    /// anchor `i` (a within-class coupling) instead of an iid draw from the
    /// anchor's class. This breaks conditional independence on purpose.
    pub positive_coupling: Option<Vec<usize>>,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            budget_terms: 1e7,
            positive_coupling: None,
        }
    }
}

/// Exact contrastive loss by full enumeration (default options).
pub fn contrastive_loss_exact(
    data: &LabeledDataset,
    prior: &ClassPrior,
    f: &FeatureMap,
    k: u64,
) -> Result<LossEstimate> {
    contrastive_loss_exact_opts(data, prior, f, k, &ExactOptions::default())
}

/// Exact contrastive loss by full enumeration.
///
/// Negative tuples are enumerated as unordered multisets over the mixture
/// support with multinomial weights, which collapses the `n^K` ordered
/// blow-up while leaving the expectation unchanged.
pub fn contrastive_loss_exact_opts(
    data: &LabeledDataset,
    prior: &ClassPrior,
    f: &FeatureMap,
    k: u64,
    opts: &ExactOptions,
) -> Result<LossEstimate> {
    check_alignment(data, prior, f)?;
    if k < 1 {
        return Err(Error::InvalidParams("contrastive loss needs K >= 1".into()));
    }
    let max_count = (0..data.num_classes())
        .map(|c| data.class_points(c).len())
        .max()
        .unwrap_or(0);
    let log_terms = (k + 1) as f64 * (data.num_classes() as f64).ln()
        + (k + 2) as f64 * (max_count as f64).ln();
    if log_terms > opts.budget_terms.ln() {
        return Err(Error::BudgetExceeded {
            estimated_terms: log_terms.exp(),
            budget: opts.budget_terms,
        });
    }
    if let Some(coupling) = &opts.positive_coupling {
        if coupling.len() != data.len() {
            return Err(Error::DimensionMismatch(
                "positive coupling must assign a partner to every point".into(),
            ));
        }
        for (i, &p) in coupling.iter().enumerate() {
            if p >= data.len() || data.label(p) != data.label(i) {
                return Err(Error::InvalidParams(format!(
                    "coupling partner of point {i} must be a point of the same class"
                )));
            }
        }
    }

    // per-point mixture mass of one negative draw
    let n = data.len();
    let mut q = vec![0.0f64; n];
    for c in 0..data.num_classes() {
        let bucket = data.class_points(c);
        let w = prior.probs()[c] / bucket.len() as f64;
        for &i in bucket {
            q[i] = w;
        }
    }
    let support: Vec<usize> = (0..n).filter(|&i| q[i] > 0.0).collect();
    if support.is_empty() {
        return Err(Error::InvalidParams("prior has empty support".into()));
    }
    let binom = pascal_triangle(k as usize);

    // many tiny weighted terms; compensation keeps the total exact to a few
    // ulps even for 1e5+ leaves
    let mut total = CompensatedSum::new();
    let mut terms: u64 = 0;
    let mut u = vec![0.0f64; n];
    let mut s = vec![0.0f64; n];
    for c in 0..data.num_classes() {
        let pc = prior.probs()[c];
        if pc == 0.0 {
            continue;
        }
        let bucket = data.class_points(c);
        for &a in bucket {
            let fa = f.feature(a);
            for j in 0..n {
                u[j] = fa.dot(&f.feature(j));
            }
            let shift = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for j in 0..n {
                s[j] = (u[j] - shift).exp();
            }
            // anchor weight times the per-positive weight
            let (positives, pair_w): (&[usize], f64) = match &opts.positive_coupling {
                Some(coupling) => (
                    std::slice::from_ref(&coupling[a]),
                    pc / bucket.len() as f64,
                ),
                None => (bucket, pc / (bucket.len() * bucket.len()) as f64),
            };
            let mut weight_check = CompensatedSum::new();
            enumerate_multisets(&support, &q, &s, &binom, k, &mut |w, t| {
                weight_check.add(w);
                for &p in positives {
                    total.add(pair_w * w * (shift + (s[p] + t).ln() - u[p]));
                    terms += 1;
                }
            });
            debug_assert!(
                (weight_check.value() - 1.0).abs() < 1e-12,
                "multiset weights sum to {}",
                weight_check.value()
            );
        }
    }
    Ok(LossEstimate::exact(total.value(), terms))
}

/// Calls `leaf(weight, t)` for every multiset of `k` negative draws over the
/// support, where `weight` is the multinomial probability of the multiset
/// and `t` the sum of the shifted exponentials it contributes.
fn enumerate_multisets(
    support: &[usize],
    q: &[f64],
    s: &[f64],
    binom: &[Vec<f64>],
    k: u64,
    leaf: &mut impl FnMut(f64, f64),
) {
    fn rec(
        support: &[usize],
        q: &[f64],
        s: &[f64],
        binom: &[Vec<f64>],
        idx: usize,
        remaining: usize,
        weight: f64,
        t: f64,
        leaf: &mut impl FnMut(f64, f64),
    ) {
        let point = support[idx];
        if idx == support.len() - 1 {
            let w = weight * q[point].powi(remaining as i32);
            if w > 0.0 {
                leaf(w, t + remaining as f64 * s[point]);
            }
            return;
        }
        for mult in 0..=remaining {
            let w = weight * binom[remaining][mult] * q[point].powi(mult as i32);
            if w > 0.0 {
                rec(
                    support,
                    q,
                    s,
                    binom,
                    idx + 1,
                    remaining - mult,
                    w,
                    t + mult as f64 * s[point],
                    leaf,
                );
            }
        }
    }
    rec(support, q, s, binom, 0, k as usize, 1.0, 0.0, leaf);
}

/// Rows 0..=n of Pascal's triangle as f64 (exact via u128 before widening).
fn pascal_triangle(n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<u128>> = vec![vec![1]];
    for r in 1..=n {
        let prev = &rows[r - 1];
        let mut row = vec![1u128; r + 1];
        for j in 1..r {
            row[j] = prev[j - 1] + prev[j];
        }
        rows.push(row);
    }
    rows.into_iter()
        .map(|row| row.into_iter().map(|v| v as f64).collect())
        .collect()
}

/// Upper limit on the feature-table size for which the Monte Carlo path
/// precomputes the full Gram matrix.
const GRAM_MAX_POINTS: usize = 4096;
/// Relative cost of a gathered dot versus a GEMM flop, measured on the
/// target hardware; steers the Gram-vs-direct decision.
const GATHER_TO_GEMM_COST: f64 = 7.0;

enum PairValues<'a> {
    Direct { feats: &'a [f64], dim: usize },
    Gram { data: Vec<f64>, n: usize },
}

impl PairValues<'_> {
    #[inline]
    fn u(&self, i: usize, j: usize) -> f64 {
        match self {
            PairValues::Direct { feats, dim } => {
                let a = &feats[i * dim..(i + 1) * dim];
                let b = &feats[j * dim..(j + 1) * dim];
                dot_unrolled(a, b)
            }
            PairValues::Gram { data, n } => data[i * n + j],
        }
    }
}

#[inline]
pub(crate) fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut chunks_a = a.chunks_exact(4);
    let mut chunks_b = b.chunks_exact(4);
    for (ca, cb) in chunks_a.by_ref().zip(chunks_b.by_ref()) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn pair_values(f: &FeatureMap, n_samples: u64, k: u64) -> PairValues<'_> {
    let n = f.n();
    let lookups = n_samples as f64 * (k + 2) as f64;
    if n <= GRAM_MAX_POINTS && lookups * GATHER_TO_GEMM_COST > (n * n) as f64 {
        let gram = f.table().dot(&f.table().t());
        PairValues::Gram {
            data: gram.into_raw_vec_and_offset().0,
            n,
        }
    } else {
        PairValues::Direct {
            feats: f
                .table()
                .as_slice()
                .expect("feature tables are standard layout"),
            dim: f.dim(),
        }
    }
}

/// Monte Carlo contrastive loss over `n_samples` independent draws of the
/// full (K+2)-tuple. Deterministic for a fixed seed and independent of the
/// number of worker threads.
pub fn contrastive_loss_mc(
    data: &LabeledDataset,
    prior: &ClassPrior,
    f: &FeatureMap,
    k: u64,
    n_samples: u64,
    seed: u64,
) -> Result<LossEstimate> {
    let (est, _) = contrastive_mc_impl(data, prior, f, k, n_samples, seed, false)?;
    Ok(est)
}

/// Like [`contrastive_loss_mc`], but also returns the InfoNCE
/// mutual-information estimate computed directly on the same sampled tuples
/// (mean of `u+ - ln(mean_j exp(u_j))`), so the identity
/// `I_NCE = ln(K+1) - L_cont` can be checked on shared randomness.
pub fn contrastive_loss_mc_with_info_nce(
    data: &LabeledDataset,
    prior: &ClassPrior,
    f: &FeatureMap,
    k: u64,
    n_samples: u64,
    seed: u64,
) -> Result<(LossEstimate, f64)> {
    let (est, ince) = contrastive_mc_impl(data, prior, f, k, n_samples, seed, true)?;
    Ok((est, ince.expect("requested info-nce accumulation")))
}

fn contrastive_mc_impl(
    data: &LabeledDataset,
    prior: &ClassPrior,
    f: &FeatureMap,
    k: u64,
    n_samples: u64,
    seed: u64,
    with_info_nce: bool,
) -> Result<(LossEstimate, Option<f64>)> {
    check_alignment(data, prior, f)?;
    if k < 1 {
        return Err(Error::InvalidParams("contrastive loss needs K >= 1".into()));
    }
    if n_samples < 2 {
        return Err(Error::InvalidParams(
            "Monte Carlo estimation needs n_samples >= 2".into(),
        ));
    }
    let sampler = CatSampler::new(prior.probs());
    let pairs = pair_values(f, n_samples, k);
    let kk = k as usize;
    // When the prior equals the empirical class distribution, both the
    // anchor and each negative are a uniform point of the whole dataset, so
    // class sampling can be skipped entirely.
    let n_points = data.len();
    let flat_mixture = (0..data.num_classes()).all(|c| {
        (prior.probs()[c] - data.class_points(c).len() as f64 / n_points as f64).abs() < 1e-12
    });

    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let partials: Vec<(ChunkStats, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = substream(seed, chunk);
            let n = MC_CHUNK.min(n_samples - chunk * MC_CHUNK) as usize;
            let tuple = kk + 2; // anchor, positive, K negatives

            // sampling pass: record the whole chunk's tuples first
            let mut idx = vec![0u32; n * tuple];
            for d in 0..n {
                use rand::Rng;
                let t = &mut idx[d * tuple..(d + 1) * tuple];
                if flat_mixture {
                    let anchor = rng.gen_range(0..n_points);
                    let bucket = data.class_points(data.label(anchor));
                    t[0] = anchor as u32;
                    t[1] = bucket[rng.gen_range(0..bucket.len())] as u32;
                    for slot in t.iter_mut().skip(2) {
                        *slot = rng.gen_range(0..n_points) as u32;
                    }
                } else {
                    let c_pos = sampler.sample(&mut rng);
                    let bucket = data.class_points(c_pos);
                    t[0] = bucket[rng.gen_range(0..bucket.len())] as u32;
                    t[1] = bucket[rng.gen_range(0..bucket.len())] as u32;
                    for slot in t.iter_mut().skip(2) {
                        let c_neg = sampler.sample(&mut rng);
                        let neg_bucket = data.class_points(c_neg);
                        *slot = neg_bucket[rng.gen_range(0..neg_bucket.len())] as u32;
                    }
                }
            }
            // evaluation pass grouped by anchor, which keeps the pair-value
            // reads row-local; the grouping is deterministic, so estimates
            // stay reproducible
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_unstable_by_key(|&d| (idx[d as usize * tuple], d));

            let mut stats = ChunkStats::default();
            let mut ince_sum = 0.0;
            let mut logits = vec![0.0f64; kk + 1];
            for &d in &order {
                let t = &idx[d as usize * tuple..(d as usize + 1) * tuple];
                let anchor = t[0] as usize;
                for (slot, &partner) in logits.iter_mut().zip(&t[1..]) {
                    *slot = pairs.u(anchor, partner as usize);
                }
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
                stats.push(m + sum_exp.ln() - logits[0]);
                if with_info_nce {
                    // direct route, no max shift: u+ - ln(mean_j e^{u_j})
                    let raw: f64 = logits.iter().map(|&z| z.exp()).sum();
                    ince_sum += logits[0] - (raw / (kk + 1) as f64).ln();
                }
            }
            (stats, ince_sum)
        })
        .collect();

    let mut merged = ChunkStats::default();
    let mut ince_total = 0.0;
    for (stats, ince) in &partials {
        merged.merge(stats);
        ince_total += ince;
    }
    let est = LossEstimate::monte_carlo(merged.into(), seed);
    let ince = with_info_nce.then(|| ince_total / est.n_samples as f64);
    Ok((est, ince))
}

/// Linear-probe settings: full-batch gradient descent with Armijo
/// backtracking, warm-started at the mean classifier.
#[derive(Clone, Debug)]
pub struct ProbeConfig {
    /// Maximum gradient steps.
    pub epochs: usize,
    /// Initial step size per iteration.
    pub lr: f64,
    /// Reserved for stochastic variants; the full-batch probe is
    /// deterministic and does not consume it.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1.0,
            seed: 0,
        }
    }
}

/// Outcome of a linear probe on frozen features.
#[derive(Clone, Debug)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Final supervised loss on the training split. Backtracking makes the
    /// descent monotone, so this never exceeds the warm-start
    /// (mean-classifier) loss.
    pub train_loss: f64,
    pub steps_taken: usize,
}

/// Multinomial logistic regression on frozen features by full-batch descent,
/// warm-started from the mean classifier (plus a zero bias), evaluated on a
/// held-out split.
pub fn linear_probe(
    train: &LabeledDataset,
    f_train: &FeatureMap,
    eval: &LabeledDataset,
    f_eval: &FeatureMap,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if eval.num_classes() > train.num_classes() {
        return Err(Error::InvalidParams(
            "evaluation split contains classes unseen in training".into(),
        ));
    }
    if f_eval.n() != eval.len() || f_eval.dim() != f_train.dim() {
        return Err(Error::DimensionMismatch("evaluation features misaligned".into()));
    }
    let prior = train.empirical_prior();
    check_alignment(train, &prior, f_train)?;
    let c = train.num_classes();
    let n = train.len();

    // per-point weights pi_c / n_c (equals 1/n for the empirical prior)
    let mut point_w = vec![0.0f64; n];
    for class in 0..c {
        let bucket = train.class_points(class);
        let w = prior.probs()[class] / bucket.len() as f64;
        for &i in bucket {
            point_w[i] = w;
        }
    }

    let mut weights = build_mean_classifier(train, f_train)?.means().clone();
    let mut bias = Array1::<f64>::zeros(c);

    let loss_and_grad = |w: &Array2<f64>, b: &Array1<f64>| -> (f64, Array2<f64>, Array1<f64>) {
        let logits = f_train.table().dot(&w.t()) + b;
        let mut loss = 0.0;
        let mut residual = Array2::<f64>::zeros((n, c));
        for i in 0..n {
            let row = logits.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &z) in row.iter().enumerate() {
                let e = (z - m).exp();
                residual[[i, j]] = e;
                sum += e;
            }
            loss += point_w[i] * (m + sum.ln() - row[train.label(i)]);
            for j in 0..c {
                residual[[i, j]] = point_w[i]
                    * (residual[[i, j]] / sum - if j == train.label(i) { 1.0 } else { 0.0 });
            }
        }
        let grad_w = residual.t().dot(f_train.table());
        let grad_b = residual.sum_axis(ndarray::Axis(0));
        (loss, grad_w, grad_b)
    };

    let (mut loss, mut grad_w, mut grad_b) = loss_and_grad(&weights, &bias);
    let mut steps_taken = 0;
    for _ in 0..cfg.epochs {
        let grad_norm_sq = grad_w.iter().map(|g| g * g).sum::<f64>()
            + grad_b.iter().map(|g| g * g).sum::<f64>();
        if grad_norm_sq < 1e-24 {
            break;
        }
        let mut step = cfg.lr;
        let mut accepted = false;
        for _ in 0..40 {
            let w_try = &weights - &(step * &grad_w);
            let b_try = &bias - &(step * &grad_b);
            let (loss_try, gw_try, gb_try) = loss_and_grad(&w_try, &b_try);
            if loss_try <= loss - 1e-4 * step * grad_norm_sq {
                weights = w_try;
                bias = b_try;
                loss = loss_try;
                grad_w = gw_try;
                grad_b = gb_try;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        steps_taken += 1;
    }

    let accuracy = {
        let logits = f_eval.table().dot(&weights.t()) + &bias;
        let mut hits = 0usize;
        for i in 0..eval.len() {
            let row = logits.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == eval.label(i) {
                hits += 1;
            }
        }
        hits as f64 / eval.len() as f64
    };
    Ok(ProbeResult {
        accuracy,
        weights,
        bias,
        train_loss: loss,
        steps_taken,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_class_line() -> (LabeledDataset, FeatureMap) {
        // one point per class at +-e1, features equal to the points
        let points = array![[1.0], [-1.0]];
        let data = LabeledDataset::new(points.clone(), vec![0, 1], 2).unwrap();
        let f = FeatureMap::from_table(points, 1.0).unwrap();
        (data, f)
    }

    /// Independent oracle: ordered enumeration of every (c+, x, x+, classes,
    /// points) tuple with naive probability products.
    fn contrastive_bruteforce(
        data: &LabeledDataset,
        prior: &ClassPrior,
        f: &FeatureMap,
        k: usize,
        coupling: Option<&[usize]>,
    ) -> f64 {
        let c = data.num_classes();
        let mut total = 0.0;
        let mut neg_classes = vec![0usize; k];
        for cp in 0..c {
            if prior.probs()[cp] == 0.0 {
                continue;
            }
            let bucket = data.class_points(cp);
            for &x in bucket {
                let positives: Vec<usize> = match coupling {
                    Some(map) => vec![map[x]],
                    None => bucket.to_vec(),
                };
                let pair_w = prior.probs()[cp]
                    / (bucket.len() * if coupling.is_some() { 1 } else { bucket.len() }) as f64;
                for &xp in &positives {
                    // odometer over ordered class tuples
                    neg_classes.iter_mut().for_each(|v| *v = 0);
                    'outer: loop {
                        let class_w: f64 =
                            neg_classes.iter().map(|&nc| prior.probs()[nc]).product();
                        if class_w > 0.0 {
                            total += pair_w
                                * class_w
                                * expect_over_points(data, f, x, xp, &neg_classes);
                        }
                        let mut pos = 0;
                        loop {
                            if pos == k {
                                break 'outer;
                            }
                            neg_classes[pos] += 1;
                            if neg_classes[pos] < c {
                                break;
                            }
                            neg_classes[pos] = 0;
                            pos += 1;
                        }
                    }
                }
            }
        }
        total
    }

    fn expect_over_points(
        data: &LabeledDataset,
        f: &FeatureMap,
        x: usize,
        xp: usize,
        neg_classes: &[usize],
    ) -> f64 {
        // recursive expectation over the uniform point choice inside each class
        fn rec(
            data: &LabeledDataset,
            f: &FeatureMap,
            x: usize,
            u_pos: f64,
            neg_classes: &[usize],
            acc: &mut Vec<f64>,
        ) -> f64 {
            if let Some((&nc, rest)) = neg_classes.split_first() {
                let bucket = data.class_points(nc);
                let mut total = 0.0;
                for &pt in bucket {
                    acc.push(f.feature(x).dot(&f.feature(pt)));
                    total += rec(data, f, x, u_pos, rest, acc) / bucket.len() as f64;
                    acc.pop();
                }
                total
            } else {
                let denom: f64 = acc.iter().map(|&u| u.exp()).sum::<f64>() + u_pos.exp();
                -(u_pos.exp() / denom).ln()
            }
        }
        let u_pos = f.feature(x).dot(&f.feature(xp));
        rec(data, f, x, u_pos, neg_classes, &mut Vec::new())
    }

    fn random_tiny_instance(
        rng: &mut ChaCha8Rng,
        max_c: usize,
        max_k: u64,
        max_count: usize,
        max_h: usize,
    ) -> (LabeledDataset, FeatureMap, u64, f64) {
        let c = rng.gen_range(2..=max_c);
        let k = rng.gen_range(1..=max_k);
        let h = rng.gen_range(1..=max_h);
        let l = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let mut labels = Vec::new();
        for class in 0..c {
            for _ in 0..rng.gen_range(1..=max_count) {
                labels.push(class);
            }
        }
        let n = labels.len();
        let mut feats = Array2::zeros((n, h));
        for i in 0..n {
            let mut v: Vec<f64> = (0..h).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let target = l * rng.gen::<f64>();
            v.iter_mut().for_each(|x| *x *= target / norm);
            feats.row_mut(i).assign(&Array1::from(v));
        }
        let data = LabeledDataset::new(Array2::zeros((n, 1)), labels, c).unwrap();
        let f = FeatureMap::from_table(feats, l).unwrap();
        (data, f, k, l)
    }

    #[test]
    fn mean_supervised_zero_features_gives_ln_c() {
        let points = Array2::zeros((20, 2));
        let labels: Vec<usize> = (0..20).map(|i| i % 10).collect();
        let data = LabeledDataset::new(points, labels, 10).unwrap();
        let prior = ClassPrior::uniform(10).unwrap();
        let f = FeatureMap::zeros(20, 4, 1.0).unwrap();
        let mc = build_mean_classifier(&data, &f).unwrap();
        let loss = mean_supervised_loss(&data, &prior, &f, &mc).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mean_supervised_two_point_closed_form() {
        let (data, f) = two_class_line();
        let prior = ClassPrior::uniform(2).unwrap();
        let mc = build_mean_classifier(&data, &f).unwrap();
        let loss = mean_supervised_loss(&data, &prior, &f, &mc).unwrap();
        // ln(1 + e^{-2}); equals the essential supervised bound at C = 2, L = 1
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn mean_supervised_degenerate_prior_uses_one_class() {
        let points = array![[1.0], [-1.0], [0.5]];
        let data = LabeledDataset::new(points.clone(), vec![0, 1, 1], 2).unwrap();
        let f = FeatureMap::from_table(points, 1.0).unwrap();
        let mc = build_mean_classifier(&data, &f).unwrap();
        let prior = ClassPrior::new(vec![1.0, 0.0]).unwrap();
        let loss = mean_supervised_loss(&data, &prior, &f, &mc).unwrap();
        // only the class-0 point contributes
        let logits = [1.0f64, -0.25];
        let m = logits[0];
        let expected =
            m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln() - logits[0];
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn exact_zero_features_is_ln_k_plus_one() {
        let points = Array2::zeros((6, 1));
        let data = LabeledDataset::new(points, vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let prior = ClassPrior::uniform(3).unwrap();
        let f = FeatureMap::zeros(6, 2, 1.0).unwrap();
        let est = contrastive_loss_exact(&data, &prior, &f, 7).unwrap();
        assert!((est.value - 8.0f64.ln()).abs() < 1e-12);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.mode, EstimateMode::Exact);
    }

    #[test]
    fn exact_single_class_single_point() {
        let points = array![[0.7]];
        let data = LabeledDataset::new(points.clone(), vec![0], 1).unwrap();
        let prior = ClassPrior::uniform(1).unwrap();
        let f = FeatureMap::from_table(points, 1.0).unwrap();
        for k in [1u64, 3, 9] {
            let est = contrastive_loss_exact(&data, &prior, &f, k).unwrap();
            assert!((est.value - ((k + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_two_class_hand_computation() {
        let (data, f) = two_class_line();
        let prior = ClassPrior::uniform(2).unwrap();
        let est = contrastive_loss_exact(&data, &prior, &f, 1).unwrap();
        // u+ = 1 always; negative is same class (u=1) or other (u=-1), each 1/2
        let expected = 0.5 * 2.0f64.ln() + 0.5 * (1.0 + (-2.0f64).exp()).ln();
        assert!((est.value - expected).abs() < 1e-12);
    }

    #[test]
    fn exact_matches_ordered_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..25 {
            let (data, f, k, _) = random_tiny_instance(&mut rng, 3, 3, 3, 3);
            let prior = ClassPrior::uniform(data.num_classes()).unwrap();
            let exact = contrastive_loss_exact(&data, &prior, &f, k).unwrap();
            let brute = contrastive_bruteforce(&data, &prior, &f, k as usize, None);
            assert!(
                (exact.value - brute).abs() < 1e-11,
                "exact {} vs brute {brute}",
                exact.value
            );
        }
    }

    #[test]
    fn exact_matches_bruteforce_with_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..10 {
            let (data, f, k, _) = random_tiny_instance(&mut rng, 3, 3, 3, 2);
            let prior = ClassPrior::uniform(data.num_classes()).unwrap();
            // random within-class permutation
            let mut coupling: Vec<usize> = (0..data.len()).collect();
            for c in 0..data.num_classes() {
                let mut bucket = data.class_points(c).to_vec();
                for i in (1..bucket.len()).rev() {
                    bucket.swap(i, rng.gen_range(0..=i));
                }
                for (slot, &p) in data.class_points(c).iter().zip(&bucket) {
                    coupling[*slot] = p;
                }
            }
            let opts = ExactOptions {
                positive_coupling: Some(coupling.clone()),
                ..Default::default()
            };
            let exact = contrastive_loss_exact_opts(&data, &prior, &f, k, &opts).unwrap();
            let brute = contrastive_bruteforce(&data, &prior, &f, k as usize, Some(&coupling));
            assert!((exact.value - brute).abs() < 1e-11);
        }
    }

    #[test]
    fn exact_budget_rejection() {
        let points = Array2::zeros((50, 1));
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let data = LabeledDataset::new(points, labels, 5).unwrap();
        let prior = ClassPrior::uniform(5).unwrap();
        let f = FeatureMap::zeros(50, 2, 1.0).unwrap();
        match contrastive_loss_exact(&data, &prior, &f, 20) {
            Err(Error::BudgetExceeded { .. }) => {}
            other => panic!("expected budget rejection, got {other:?}"),
        }
    }

    #[test]
    fn mc_zero_features_has_zero_std_error() {
        let points = Array2::zeros((8, 1));
        let data = LabeledDataset::new(points, vec![0, 0, 1, 1, 2, 2, 3, 3], 4).unwrap();
        let prior = ClassPrior::uniform(4).unwrap();
        let f = FeatureMap::zeros(8, 2, 1.0).unwrap();
        let est = contrastive_loss_mc(&data, &prior, &f, 15, 5000, 3).unwrap();
        assert_eq!(est.value, 16.0f64.ln());
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.n_samples, 5000);
    }

    #[test]
    fn mc_same_seed_bit_identical_and_seeds_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let (data, f, k, _) = random_tiny_instance(&mut rng, 4, 4, 4, 3);
        let prior = ClassPrior::uniform(data.num_classes()).unwrap();
        let a = contrastive_loss_mc(&data, &prior, &f, k, 10_000, 7).unwrap();
        let b = contrastive_loss_mc(&data, &prior, &f, k, 10_000, 7).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        let c = contrastive_loss_mc(&data, &prior, &f, k, 10_000, 8).unwrap();
        assert_ne!(a.value.to_bits(), c.value.to_bits());
    }

    #[test]
    fn mc_agrees_with_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..10 {
            let (data, f, k, _) = random_tiny_instance(&mut rng, 4, 4, 4, 3);
            let prior = ClassPrior::uniform(data.num_classes()).unwrap();
            let exact = contrastive_loss_exact(&data, &prior, &f, k).unwrap();
            let mc = contrastive_loss_mc(&data, &prior, &f, k, 40_000, trial).unwrap();
            assert!(
                (mc.value - exact.value).abs() <= 4.0 * mc.std_error.max(1e-9),
                "trial {trial}: mc {} vs exact {} (se {})",
                mc.value,
                exact.value,
                mc.std_error
            );
        }
    }

    #[test]
    fn mc_estimator_is_unbiased_over_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (data, f, k, _) = random_tiny_instance(&mut rng, 4, 3, 3, 2);
        let prior = ClassPrior::uniform(data.num_classes()).unwrap();
        let exact = contrastive_loss_exact(&data, &prior, &f, k).unwrap();
        let n_seeds = 200;
        let mut mean_of_means = 0.0;
        let mut combined_var = 0.0;
        for seed in 0..n_seeds {
            let est = contrastive_loss_mc(&data, &prior, &f, k, 2000, seed).unwrap();
            mean_of_means += est.value / n_seeds as f64;
            combined_var += est.std_error * est.std_error / (n_seeds * n_seeds) as f64;
        }
        let combined_se = combined_var.sqrt();
        assert!(
            (mean_of_means - exact.value).abs() <= 4.0 * combined_se,
            "bias check: {mean_of_means} vs {} (combined se {combined_se})",
            exact.value
        );
    }

    #[test]
    fn gram_and_direct_paths_agree_statistically() {
        // tiny n with many samples forces the Gram path; compare against the
        // exact value rather than the direct path (which rounds differently)
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (data, f, k, _) = random_tiny_instance(&mut rng, 3, 3, 3, 2);
        let prior = ClassPrior::uniform(data.num_classes()).unwrap();
        let exact = contrastive_loss_exact(&data, &prior, &f, k).unwrap();
        let mc = contrastive_loss_mc(&data, &prior, &f, k, 100_000, 5).unwrap();
        assert!((mc.value - exact.value).abs() <= 4.0 * mc.std_error.max(1e-9));
    }

    #[test]
    fn info_nce_identity_on_shared_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (data, f, k, _) = random_tiny_instance(&mut rng, 4, 6, 4, 3);
        let prior = ClassPrior::uniform(data.num_classes()).unwrap();
        let (est, ince) =
            contrastive_loss_mc_with_info_nce(&data, &prior, &f, k, 20_000, 11).unwrap();
        let identity = ((k + 1) as f64).ln() - est.value;
        assert!(
            (ince - identity).abs() < 1e-12,
            "info-nce {ince} vs identity {identity}"
        );
    }

    #[test]
    fn probe_zero_features_predicts_majority_class() {
        // class 0 has 3 of 5 training points
        let points = Array2::zeros((5, 2));
        let train = LabeledDataset::new(points, vec![0, 0, 0, 1, 1], 2).unwrap();
        let f_train = FeatureMap::zeros(5, 3, 1.0).unwrap();
        let eval_points = Array2::zeros((4, 2));
        let eval = LabeledDataset::new(eval_points, vec![0, 0, 1, 1], 2).unwrap();
        let f_eval = FeatureMap::zeros(4, 3, 1.0).unwrap();
        let res = linear_probe(&train, &f_train, &eval, &f_eval, &ProbeConfig::default())
            .unwrap();
        // constant features: the bias learns the prior, so the majority
        // training class is predicted everywhere
        assert_eq!(res.accuracy, 0.5);
        assert!(res.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn probe_zero_epochs_equals_mean_classifier() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let (data, f, _, _) = random_tiny_instance(&mut rng, 4, 1, 4, 3);
        let prior = data.empirical_prior();
        let mc = build_mean_classifier(&data, &f).unwrap();
        let expected = mean_supervised_loss(&data, &prior, &f, &mc).unwrap();
        let cfg = ProbeConfig {
            epochs: 0,
            ..Default::default()
        };
        let res = linear_probe(&data, &f, &data, &f, &cfg).unwrap();
        // the probe evaluates its loss in row order rather than bucket
        // order, so agreement is up to summation round-off
        assert!((res.train_loss - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        assert_eq!(res.weights, *mc.means());
    }

    #[test]
    fn probe_never_worse_than_mean_classifier() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let (data, f, _, _) = random_tiny_instance(&mut rng, 5, 1, 5, 4);
            let prior = data.empirical_prior();
            let mc = build_mean_classifier(&data, &f).unwrap();
            let warm = mean_supervised_loss(&data, &prior, &f, &mc).unwrap();
            let res =
                linear_probe(&data, &f, &data, &f, &ProbeConfig::default()).unwrap();
            assert!(
                res.train_loss <= warm + 1e-6,
                "probe {} vs warm start {warm}",
                res.train_loss
            );
        }
    }

    #[test]
    fn probe_separable_means_reach_full_accuracy() {
        // all points sit exactly at well-separated class means
        let points = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let data = LabeledDataset::new(points.clone(), vec![0, 0, 1, 1], 2).unwrap();
        let f = FeatureMap::from_table(points, 1.0).unwrap();
        let res = linear_probe(&data, &f, &data, &f, &ProbeConfig::default()).unwrap();
        assert_eq!(res.accuracy, 1.0);
    }
}
