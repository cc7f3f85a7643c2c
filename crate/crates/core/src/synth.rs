//! Synthetic concentric-circles experiment: dataset generation, contrastive
//! MLP training with in-batch negative sampling, and per-epoch trajectory
//! recording of `(l_cont, l_sup)` on the test split.

use std::io::Write;

use ndarray::Array2;
use rand::Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::features::{build_mean_classifier, FeatureMap};
use crate::losses::{classifier_accuracy, contrastive_loss_mc, mean_supervised_loss, LossEstimate};
use crate::mlp::{minibatch_contrastive_loss, AdamW, Mlp};
use crate::prior::ClassPrior;
use crate::rng::substream;
use crate::textfmt::{csv_line, fmt_f64};

// RNG stream roles, so every randomness source has its own substream of the
// run seed.
const STREAM_DATA: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_PAIRS: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_TRAIN: u64 = 5;

/// 2-D dataset of `classes` concentric circles: for class `c` (1-based in
/// the construction), points are drawn uniformly from the square
/// `[-0.5, 0.5]^2`, normalized to the unit circle, and scaled to radius
/// `(c + 1) / 2`, so class 0 sits at radius 1.0 and class 9 at radius 5.5.
pub fn gen_circle(classes: usize, n_per_class: usize, seed: u64) -> Result<LabeledDataset> {
    if classes < 1 {
        return Err(Error::InvalidParams("need at least one class".into()));
    }
    if n_per_class < 1 {
        return Err(Error::InvalidParams("need at least one point per class".into()));
    }
    let mut rng = substream(seed, STREAM_DATA);
    let n = classes * n_per_class;
    let mut points = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        let radius = (class as f64 + 2.0) / 2.0;
        for i in 0..n_per_class {
            let (x, y) = loop {
                let x = rng.gen::<f64>() - 0.5;
                let y = rng.gen::<f64>() - 0.5;
                let norm = (x * x + y * y).sqrt();
                if norm > 1e-9 {
                    break (x / norm, y / norm);
                }
            };
            let row = class * n_per_class + i;
            points[[row, 0]] = x * radius;
            points[[row, 1]] = y * radius;
            labels.push(class);
        }
    }
    LabeledDataset::new(points, labels, classes)
}

/// Training configuration for the synthetic experiment.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub classes: usize,
    pub n_per_class: usize,
    pub train_fraction: f64,
    /// Negative sample count K.
    pub negatives: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without training-loss improvement before the learning rate is
    /// multiplied by `lr_factor`.
    pub lr_patience: usize,
    pub lr_factor: f64,
    /// Layer sizes, input first.
    pub dims: Vec<usize>,
    pub init_scale: f64,
    /// Seed of the per-epoch evaluation sampler (fixed across epochs).
    pub eval_seed: u64,
    /// Monte Carlo tuple draws per test point for the l_cont evaluation.
    pub eval_draws_per_test_point: u64,
}

impl TrainConfig {
    pub fn new(negatives: usize, seed: u64) -> Self {
        Self {
            classes: 10,
            n_per_class: 1000,
            train_fraction: 0.6,
            negatives,
            batch_size: 1024,
            epochs: 300,
            lr: 0.01,
            weight_decay: 0.01,
            seed,
            lr_patience: 10,
            lr_factor: 0.1,
            dims: vec![2, 256, 256, 256],
            init_scale: 0.1,
            eval_seed: seed ^ 0x9e37_79b9_7f4a_7c15,
            eval_draws_per_test_point: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 1
            || self.n_per_class < 1
            || self.negatives < 1
            || self.batch_size < 2
            || self.epochs < 1
            || self.lr <= 0.0
            || self.lr_factor <= 0.0
            || self.lr_factor >= 1.0
            || self.init_scale <= 0.0
            || self.eval_draws_per_test_point < 1
        {
            return Err(Error::InvalidParams("all training sizes must be positive".into()));
        }
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return Err(Error::InvalidParams(
                "train fraction must lie strictly between 0 and 1".into(),
            ));
        }
        if self.negatives > 2 * self.batch_size - 2 {
            return Err(Error::InvalidParams(format!(
                "K = {} exceeds the 2B-2 = {} in-batch negative candidates",
                self.negatives,
                2 * self.batch_size - 2
            )));
        }
        if self.dims.len() < 2 || self.dims[0] != 2 {
            return Err(Error::InvalidParams(
                "network dims must start at the 2-D input".into(),
            ));
        }
        let train_per_class = (self.train_fraction * self.n_per_class as f64).floor() as usize;
        if train_per_class < 2 || train_per_class >= self.n_per_class {
            return Err(Error::InvalidParams(
                "split leaves fewer than 2 train or 1 test points per class".into(),
            ));
        }
        Ok(())
    }
}

/// Loss/accuracy snapshot taken at the start of an epoch (so `epoch` counts
/// completed training epochs; row 0 is the freshly initialized network).
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    /// Test-split contrastive loss (theory-mode Monte Carlo).
    pub l_cont: LossEstimate,
    /// Test-split mean supervised loss with train-split class means.
    pub l_sup: f64,
    /// Test-split mean-classifier accuracy.
    pub accuracy: f64,
    /// Learning rate in effect for the upcoming epoch.
    pub lr: f64,
}

/// Everything a finished run exposes: the per-epoch trajectory, the trained
/// network, and the split datasets for further probing.
pub struct TrainRun {
    pub config: TrainConfig,
    pub records: Vec<TrajectoryRecord>,
    pub mlp: Mlp,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl TrainRun {
    /// Features of the train split under the final network.
    pub fn final_train_features(&self) -> Result<FeatureMap> {
        FeatureMap::from_table(self.mlp.features(self.train.points().view()), 1.0)
    }

    /// Features of the test split under the final network.
    pub fn final_test_features(&self) -> Result<FeatureMap> {
        FeatureMap::from_table(self.mlp.features(self.test.points().view()), 1.0)
    }
}

/// `seed,K,epoch,l_cont,l_cont_se,l_sup,accuracy,lr` rows for one run.
pub const TRAJECTORY_CSV_HEADER: &str = "seed,K,epoch,l_cont,l_cont_se,l_sup,accuracy,lr";

pub fn write_trajectory_csv<W: Write>(out: &mut W, run: &TrainRun) -> Result<()> {
    out.write_all(TRAJECTORY_CSV_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for r in &run.records {
        out.write_all(
            csv_line([
                run.config.seed.to_string(),
                run.config.negatives.to_string(),
                r.epoch.to_string(),
                fmt_f64(r.l_cont.value),
                fmt_f64(r.l_cont.std_error),
                fmt_f64(r.l_sup),
                fmt_f64(r.accuracy),
                fmt_f64(r.lr),
            ])
            .as_bytes(),
        )?;
    }
    Ok(())
}

/// PyTorch-style reduce-on-plateau: relative improvement threshold 1e-4,
/// no cooldown.
struct PlateauScheduler {
    best: f64,
    bad_epochs: usize,
    patience: usize,
    factor: f64,
}

impl PlateauScheduler {
    fn new(patience: usize, factor: f64) -> Self {
        Self {
            best: f64::INFINITY,
            bad_epochs: 0,
            patience,
            factor,
        }
    }

    fn observe(&mut self, loss: f64, lr: &mut f64) {
        const REL_THRESHOLD: f64 = 1e-4;
        if loss < self.best * (1.0 - REL_THRESHOLD) {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                *lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
    }
}

/// Stratified split: per class, a seeded shuffle sends the first
/// `train_fraction` of points to the train split.
fn split_dataset(
    data: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut rng = substream(seed, STREAM_SPLIT);
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for c in 0..data.num_classes() {
        let mut rows = data.class_points(c).to_vec();
        for i in (1..rows.len()).rev() {
            rows.swap(i, rng.gen_range(0..=i));
        }
        let cut = (train_fraction * rows.len() as f64).floor() as usize;
        train_rows.extend_from_slice(&rows[..cut]);
        test_rows.extend_from_slice(&rows[cut..]);
    }
    let take = |rows: &[usize]| -> Result<LabeledDataset> {
        let mut points = Array2::zeros((rows.len(), data.dim()));
        let mut labels = Vec::with_capacity(rows.len());
        for (new, &old) in rows.iter().enumerate() {
            points.row_mut(new).assign(&data.point(old));
            labels.push(data.label(old));
        }
        LabeledDataset::new(points, labels, data.num_classes())
    };
    Ok((take(&train_rows)?, take(&test_rows)?))
}

/// Fixed positive pairing: each train point gets a distinct partner drawn
/// from its own class, assigned once before training.
fn assign_pairs(train: &LabeledDataset, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, STREAM_PAIRS);
    let mut partner = vec![0usize; train.len()];
    for c in 0..train.num_classes() {
        let bucket = train.class_points(c);
        for &i in bucket {
            loop {
                let p = bucket[rng.gen_range(0..bucket.len())];
                if p != i {
                    partner[i] = p;
                    break;
                }
            }
        }
    }
    partner
}

/// In-batch negatives for one anchor: K distinct pairs among the other
/// `b - 1`, one random member each (so at most one point per positive pair).
/// If K exceeds `b - 1` the pair constraint is unsatisfiable and rows are
/// drawn without replacement from all `2b - 2` candidates instead.
fn sample_negatives(
    rng: &mut rand_chacha::ChaCha8Rng,
    b: usize,
    anchor_pair: usize,
    k: usize,
    scratch: &mut Vec<usize>,
) -> Vec<usize> {
    let mut rows = Vec::with_capacity(k);
    if k <= b - 1 {
        scratch.clear();
        scratch.extend((0..b).filter(|&j| j != anchor_pair));
        for t in 0..k {
            let pick = rng.gen_range(t..scratch.len());
            scratch.swap(t, pick);
            let pair = scratch[t];
            rows.push(if rng.gen::<bool>() { pair } else { b + pair });
        }
    } else {
        scratch.clear();
        scratch.extend((0..2 * b).filter(|&r| r != anchor_pair && r != b + anchor_pair));
        for t in 0..k {
            let pick = rng.gen_range(t..scratch.len());
            scratch.swap(t, pick);
            rows.push(scratch[t]);
        }
    }
    // the draw is a set; ascending order keeps the feature reads sequential
    rows.sort_unstable();
    rows
}

/// Trains the contrastive MLP and records the trajectory.
///
/// Each epoch shuffles the fixed positive pairs into batches of
/// `batch_size`; a trailing partial batch is kept unless it is too small to
/// furnish K negatives. The record for epoch `e` is taken before that
/// epoch's updates, so `--epochs 1` yields exactly one row describing the
/// freshly initialized network.
pub fn train_contrastive(cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let data = gen_circle(cfg.classes, cfg.n_per_class, cfg.seed)?;
    let (train, test) = split_dataset(&data, cfg.train_fraction, cfg.seed)?;
    let partner = assign_pairs(&train, cfg.seed);
    let prior = ClassPrior::uniform(cfg.classes)?;

    let mut init_rng = substream(cfg.seed, STREAM_INIT);
    let mut mlp = Mlp::new(&cfg.dims, cfg.init_scale, &mut init_rng)?;
    let mut opt = AdamW::new(&mlp, cfg.weight_decay);
    let mut train_rng = substream(cfg.seed, STREAM_TRAIN);
    let mut scheduler = PlateauScheduler::new(cfg.lr_patience, cfg.lr_factor);
    let mut lr = cfg.lr;

    let n_eval = cfg.eval_draws_per_test_point * test.len() as u64;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut scratch: Vec<usize> = Vec::with_capacity(2 * cfg.batch_size);
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        records.push(evaluate_epoch(
            &mlp, &train, &test, &prior, cfg, n_eval, epoch, lr,
        )?);

        // one training epoch
        for i in (1..order.len()).rev() {
            order.swap(i, train_rng.gen_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        let mut counted_pairs = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            if b < 2 || (cfg.negatives > b - 1 && cfg.negatives > 2 * b - 2) {
                // partial batch too small to furnish K negatives
                continue;
            }
            let mut x = Array2::zeros((2 * b, train.dim()));
            for (slot, &row) in batch.iter().enumerate() {
                x.row_mut(slot).assign(&train.point(row));
                x.row_mut(b + slot).assign(&train.point(partner[row]));
            }
            let negatives: Vec<Vec<usize>> = (0..b)
                .map(|i| sample_negatives(&mut train_rng, b, i, cfg.negatives, &mut scratch))
                .collect();
            let cache = mlp.forward(x.view());
            let (loss, d_y) = minibatch_contrastive_loss(&cache.output, &negatives);
            let grads = mlp.backward(&cache, &d_y);
            opt.step(&mut mlp, &grads, lr);
            epoch_loss += loss * b as f64;
            counted_pairs += b;
        }
        if counted_pairs == 0 {
            return Err(Error::InvalidParams(
                "no batch was large enough for the configured K".into(),
            ));
        }
        scheduler.observe(epoch_loss / counted_pairs as f64, &mut lr);
    }

    Ok(TrainRun {
        config: cfg.clone(),
        records,
        mlp,
        train,
        test,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_epoch(
    mlp: &Mlp,
    train: &LabeledDataset,
    test: &LabeledDataset,
    prior: &ClassPrior,
    cfg: &TrainConfig,
    n_eval: u64,
    epoch: usize,
    lr: f64,
) -> Result<TrajectoryRecord> {
    let f_train = FeatureMap::from_table(mlp.features(train.points().view()), 1.0)?;
    let f_test = FeatureMap::from_table(mlp.features(test.points().view()), 1.0)?;
    let means = build_mean_classifier(train, &f_train)?;
    let l_sup = mean_supervised_loss(test, prior, &f_test, &means)?;
    let accuracy = classifier_accuracy(
        test,
        &f_test,
        means.means(),
        &ndarray::Array1::zeros(test.num_classes()),
    )?;
    let l_cont = contrastive_loss_mc(
        test,
        prior,
        &f_test,
        cfg.negatives as u64,
        n_eval,
        cfg.eval_seed,
    )?;
    Ok(TrajectoryRecord {
        epoch,
        l_cont,
        l_sup,
        accuracy,
        lr,
    })
}
