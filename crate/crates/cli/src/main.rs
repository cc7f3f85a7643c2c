//! `curl-lab`: surrogate bounds between contrastive and mean-supervised
//! losses, from the command line.
//!
//! Subcommands
//! * `bounds`      - bound report for one or a grid of (C, K, L) settings
//! * `region`      - feasible-region slacks for a given loss pair
//! * `compare`     - upper-bound comparison table over a K grid
//! * `verify`      - randomized lemma and sandwich property suites
//! * `synth-data`  - concentric-circles dataset emitter
//! * `synth-train` - contrastive MLP training with trajectory CSV
//! * `probe`       - linear probe on saved feature files
//!
//! Exit codes: 0 success, 1 verification/runtime failure, 2 usage error.
//! Every run that writes an output file also writes
//! `<file>.manifest.json` with the full parameter set; data files are
//! byte-identical across reruns with the same arguments and seed,
//! independent of `--threads`.

mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use curl_lab_core::bounds::{bounds_report, BoundParams, BoundsReport};
use curl_lab_core::data::LabeledDataset;
use curl_lab_core::features::FeatureMap;
use curl_lab_core::losses::{linear_probe, ProbeConfig};
use curl_lab_core::prior::ClassPrior;
use curl_lab_core::synth::{gen_circle, train_contrastive, write_trajectory_csv, TrainConfig};
use curl_lab_core::textfmt::{csv_line, fmt_f64, to_json_pretty};
use curl_lab_core::verify::{
    check_lemma_lse, check_lemma_offset, check_sandwich, compare_bounds_table, write_compare_csv,
    CompareMode, VerificationReport,
};
use manifest::Manifest;

#[derive(Parser)]
#[command(name = "curl-lab", version, about = "Contrastive/supervised surrogate-bound toolkit")]
struct Cli {
    /// Worker threads for parallel sections (falls back to CURL_LAB_THREADS,
    /// then to the number of cores). Outputs do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Bound report for one or a grid of (C, K, L) parameter settings.
    Bounds(BoundsArgs),
    /// Feasible-region slacks for a given (l_cont, l_sup) pair.
    Region(RegionArgs),
    /// Upper-bound comparison table over a K grid (uniform prior).
    Compare(CompareArgs),
    /// Randomized verification suites; exits 1 on any property failure.
    Verify(VerifyArgs),
    /// Generate the concentric-circles dataset.
    SynthData(SynthDataArgs),
    /// Train the contrastive MLP and record the learning trajectory.
    SynthTrain(SynthTrainArgs),
    /// Linear probe on saved feature files.
    Probe(ProbeArgs),
}

#[derive(Args)]
struct BoundsArgs {
    /// Class count(s) C, comma-separated for a grid.
    #[arg(long, value_delimiter = ',', required = true)]
    classes: Vec<u64>,
    /// Negative sample count(s) K, comma-separated for a grid.
    #[arg(long, value_delimiter = ',', required = true)]
    negatives: Vec<u64>,
    /// Embedding norm bound(s) L, comma-separated for a grid.
    #[arg(long, value_delimiter = ',', required = true)]
    norm_bound: Vec<f64>,
    /// `uniform` or a path to a whitespace-separated probability file.
    #[arg(long, default_value = "uniform")]
    prior: String,
    /// Reference contrastive loss for the competitor bounds and the InfoNCE
    /// identity (default: the essential minimum, uniform prior only).
    #[arg(long)]
    l_cont: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write here instead of stdout (also emits a manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RegionArgs {
    #[arg(long)]
    classes: u64,
    #[arg(long)]
    negatives: u64,
    #[arg(long)]
    norm_bound: f64,
    #[arg(long, default_value = "uniform")]
    prior: String,
    /// Contrastive loss of the point under test.
    #[arg(long)]
    l_cont: f64,
    /// Mean supervised loss of the point under test.
    #[arg(long)]
    l_sup: f64,
    /// Statistical slack added to every constraint (e.g. 3 standard errors).
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    classes: u64,
    /// Comma-separated K grid, e.g. 1,2,4,...,512.
    #[arg(long, value_delimiter = ',', required = true)]
    k_list: Vec<u64>,
    #[arg(long)]
    norm_bound: f64,
    /// Evaluate at this fixed contrastive loss instead of the per-K
    /// essential minimum.
    #[arg(long)]
    at_l_cont: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Lemmas,
    Sandwich,
    All,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: Suite,
    /// Random trials per (N or K, L) cell in the lemma suites.
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    /// Largest N and K swept by the lemma suites.
    #[arg(long, default_value_t = 64)]
    max_size: usize,
    /// Random instances for the sandwich suite.
    #[arg(long, default_value_t = 1000)]
    instances: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthDataArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 1000)]
    n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; `.csv` writes text, anything else the binary container.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthTrainArgs {
    /// Negative sample count.
    #[arg(long = "K")]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// Trajectory CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 1000)]
    n_per_class: usize,
    #[arg(long, default_value_t = 0.6)]
    train_fraction: f64,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 10)]
    lr_patience: usize,
    /// Monte Carlo tuple draws per test point in the per-epoch evaluation.
    #[arg(long, default_value_t = 20)]
    eval_draws_per_point: u64,
    /// Also save final train/test features as `<prefix>_train.bin` and
    /// `<prefix>_test.bin` (binary containers usable by `probe`).
    #[arg(long)]
    features_out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Training features (CSV `x_0..x_{h-1},label` or binary container).
    #[arg(long)]
    train: PathBuf,
    /// Evaluation features in the same format.
    #[arg(long)]
    eval: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli
        .threads
        .or_else(|| std::env::var("CURL_LAB_THREADS").ok()?.parse().ok())
    {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            eprintln!("warning: thread pool already initialized; --threads ignored");
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // setup/validation problems are usage errors
            let is_usage = e.is::<UsageError>()
                || e.downcast_ref::<curl_lab_core::Error>().is_some_and(|c| {
                    matches!(
                        c,
                        curl_lab_core::Error::InvalidParams(_)
                            | curl_lab_core::Error::Unsupported(_)
                            | curl_lab_core::Error::Domain(_)
                            | curl_lab_core::Error::Parse(_)
                    )
                });
            if is_usage {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Bounds(args) => cmd_bounds(args),
        Command::Region(args) => cmd_region(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Verify(args) => cmd_verify(args),
        Command::SynthData(args) => cmd_synth_data(args),
        Command::SynthTrain(args) => cmd_synth_train(args),
        Command::Probe(args) => cmd_probe(args),
    }
}

/// Loads `uniform` or a whitespace-separated probability file, checked
/// against the class count.
fn load_prior(spec: &str, classes: u64) -> anyhow::Result<ClassPrior> {
    if spec == "uniform" {
        return Ok(ClassPrior::uniform(classes as usize)?);
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| usage(format!("reading prior file {spec}: {e}")))?;
    let probs: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage(format!("prior file {spec}: {e}")))?;
    if probs.len() as u64 != classes {
        return Err(usage(format!(
            "prior file {spec} has {} entries but --classes is {classes}",
            probs.len()
        )));
    }
    Ok(ClassPrior::new(probs)?)
}

/// Writes `text` to the file (with a manifest) or to stdout.
fn emit(text: &str, out: Option<&Path>, manifest: &mut Manifest) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            manifest.output(path);
            manifest.write()?;
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> anyhow::Result<ExitCode> {
    let mut manifest = Manifest::new("bounds");
    manifest
        .arg("classes", args.classes.clone())
        .arg("negatives", args.negatives.clone())
        .arg("norm_bound", args.norm_bound.clone())
        .arg("prior", args.prior.clone())
        .arg("l_cont", args.l_cont)
        .arg(
            "format",
            if args.format == Format::Csv { "csv" } else { "json" },
        );

    let mut reports: Vec<BoundsReport> = Vec::new();
    for &c in &args.classes {
        let prior = load_prior(&args.prior, c)?;
        for &k in &args.negatives {
            for &l in &args.norm_bound {
                let params = BoundParams::new(c, k, l, prior.clone())?;
                reports.push(bounds_report(&params, args.l_cont)?);
            }
        }
    }
    let text = match args.format {
        Format::Csv => {
            let mut s = String::from(BoundsReport::CSV_HEADER);
            s.push('\n');
            for r in &reports {
                s.push_str(&r.csv_row());
            }
            s
        }
        Format::Json => {
            if reports.len() == 1 {
                to_json_pretty(&reports[0].to_json())
            } else {
                to_json_pretty(&Value::Array(
                    reports.iter().map(|r| r.to_json()).collect(),
                ))
            }
        }
    };
    emit(&text, args.out.as_deref(), &mut manifest)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_region(args: RegionArgs) -> anyhow::Result<ExitCode> {
    let prior = load_prior(&args.prior, args.classes)?;
    let params = BoundParams::new(args.classes, args.negatives, args.norm_bound, prior)?;
    let check = curl_lab_core::feasible_region_contains(&params, args.l_cont, args.l_sup)?;
    let contained = check.contained_with_tol(args.tolerance);
    let mut manifest = Manifest::new("region");
    manifest
        .arg("classes", args.classes)
        .arg("negatives", args.negatives)
        .arg("norm_bound", args.norm_bound)
        .arg("l_cont", args.l_cont)
        .arg("l_sup", args.l_sup)
        .arg("tolerance", args.tolerance);
    let text = match args.format {
        Format::Json => to_json_pretty(&json!({
            "contained": contained,
            "tolerance": args.tolerance,
            "slack_upper": check.slack_upper,
            "slack_lower": check.slack_lower,
            "slack_ess_sup": check.slack_ess_sup,
            "slack_ess_cont": check.slack_ess_cont,
            "min_slack": check.min_slack(),
        })),
        Format::Csv => {
            let mut s = String::from(
                "contained,tolerance,slack_upper,slack_lower,slack_ess_sup,slack_ess_cont\n",
            );
            s.push_str(&csv_line([
                contained.to_string(),
                fmt_f64(args.tolerance),
                fmt_f64(check.slack_upper),
                fmt_f64(check.slack_lower),
                fmt_f64(check.slack_ess_sup),
                fmt_f64(check.slack_ess_cont),
            ]));
            s
        }
    };
    emit(&text, args.out.as_deref(), &mut manifest)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<ExitCode> {
    let mode = match args.at_l_cont {
        Some(v) => CompareMode::AtGivenLCont(v),
        None => CompareMode::AtEssCont,
    };
    let rows = compare_bounds_table(args.classes, &args.k_list, args.norm_bound, mode)?;
    let mut manifest = Manifest::new("compare");
    manifest
        .arg("classes", args.classes)
        .arg("k_list", args.k_list.clone())
        .arg("norm_bound", args.norm_bound)
        .arg("at_l_cont", args.at_l_cont);
    let text = match args.format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_compare_csv(&mut buf, &rows)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
        Format::Json => {
            let items: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "C": r.classes,
                        "K": r.negatives,
                        "L": r.norm_bound,
                        "l_cont": r.l_cont,
                        "ours_upper": r.ours_upper,
                        "ours_lower": r.ours_lower,
                        "arora": r.arora.value(),
                        "arora_valid": r.arora.is_valid(),
                        "nozawa": r.nozawa.value(),
                        "nozawa_valid": r.nozawa.is_valid(),
                        "ash": r.ash.value(),
                        "ess_sup": r.ess_sup,
                    })
                })
                .collect();
            to_json_pretty(&Value::Array(items))
        }
    };
    emit(&text, args.out.as_deref(), &mut manifest)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let l_set = [0.5, 1.0, 2.0];
    let mut reports: Vec<VerificationReport> = Vec::new();
    if matches!(args.suite, Suite::Lemmas | Suite::All) {
        reports.push(check_lemma_lse(args.max_size, &l_set, args.trials, args.seed)?);
        reports.push(check_lemma_offset(
            args.max_size,
            &l_set,
            args.trials,
            args.seed,
        )?);
    }
    if matches!(args.suite, Suite::Sandwich | Suite::All) {
        reports.push(check_sandwich(args.instances, 8, 6, args.seed)?);
    }
    let mut manifest = Manifest::new("verify");
    manifest
        .arg(
            "suite",
            match args.suite {
                Suite::Lemmas => "lemmas",
                Suite::Sandwich => "sandwich",
                Suite::All => "all",
            },
        )
        .arg("trials", args.trials)
        .arg("max_size", args.max_size as u64)
        .arg("instances", args.instances)
        .seed(args.seed);
    let text = to_json_pretty(&Value::Array(
        reports.iter().map(|r| r.to_json()).collect(),
    ));
    emit(&text, args.out.as_deref(), &mut manifest)?;
    if reports.iter().all(VerificationReport::passed) {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("verification failures detected");
        Ok(ExitCode::from(1))
    }
}

fn cmd_synth_data(args: SynthDataArgs) -> anyhow::Result<ExitCode> {
    let data = gen_circle(args.classes, args.n_per_class, args.seed)?;
    let mut manifest = Manifest::new("synth-data");
    manifest
        .arg("classes", args.classes as u64)
        .arg("n_per_class", args.n_per_class as u64)
        .seed(args.seed);
    if args.out.extension().is_some_and(|e| e == "csv") {
        data.to_csv_path(&args.out)?;
    } else {
        data.to_binary_path(&args.out)?;
    }
    manifest.output(&args.out);
    manifest.write()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth_train(args: SynthTrainArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = TrainConfig::new(args.k, args.seed);
    cfg.classes = args.classes;
    cfg.n_per_class = args.n_per_class;
    cfg.train_fraction = args.train_fraction;
    cfg.batch_size = args.batch_size;
    cfg.epochs = args.epochs;
    cfg.lr = args.lr;
    cfg.weight_decay = args.weight_decay;
    cfg.lr_patience = args.lr_patience;
    cfg.eval_draws_per_test_point = args.eval_draws_per_point;
    cfg.validate()?;

    let run = train_contrastive(&cfg)?;

    let mut manifest = Manifest::new("synth-train");
    manifest
        .arg("K", args.k as u64)
        .arg("epochs", args.epochs as u64)
        .arg("classes", args.classes as u64)
        .arg("n_per_class", args.n_per_class as u64)
        .arg("train_fraction", args.train_fraction)
        .arg("batch_size", args.batch_size as u64)
        .arg("lr", args.lr)
        .arg("weight_decay", args.weight_decay)
        .arg("lr_patience", args.lr_patience as u64)
        .arg("eval_draws_per_point", args.eval_draws_per_point)
        .seed(args.seed);

    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &run)?;
    std::fs::write(&args.out, &buf)
        .with_context(|| format!("writing {}", args.out.display()))?;
    manifest.output(&args.out);

    if let Some(prefix) = &args.features_out {
        let write_features = |suffix: &str,
                              data: &LabeledDataset,
                              feats: &FeatureMap|
         -> anyhow::Result<PathBuf> {
            let mut name = prefix.file_name().unwrap_or_default().to_os_string();
            name.push(format!("_{suffix}.bin"));
            let path = prefix.with_file_name(name);
            let table = LabeledDataset::new(
                feats.table().clone(),
                data.labels().to_vec(),
                data.num_classes(),
            )?;
            table.to_binary_path(&path)?;
            Ok(path)
        };
        let p1 = write_features("train", &run.train, &run.final_train_features()?)?;
        let p2 = write_features("test", &run.test, &run.final_test_features()?)?;
        manifest.output(&p1);
        manifest.output(&p2);
    }
    manifest.write()?;
    Ok(ExitCode::SUCCESS)
}

/// Feature files are either CSV datasets or binary containers; sniff the
/// magic to decide.
fn load_features(path: &Path) -> anyhow::Result<(LabeledDataset, FeatureMap)> {
    let head = {
        let mut f = std::fs::File::open(path)
            .map_err(|e| usage(format!("opening {}: {e}", path.display())))?;
        let mut buf = [0u8; 8];
        use std::io::Read;
        let n = f.read(&mut buf)?;
        buf[..n].to_vec()
    };
    let data = if head.starts_with(b"CURLDATA") {
        LabeledDataset::from_binary_path(path)?
    } else {
        LabeledDataset::from_csv_path(path)?
    };
    let max_norm = data
        .points()
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0f64, f64::max);
    let feats = FeatureMap::from_table(data.points().clone(), max_norm + 1e-9)?;
    Ok((data, feats))
}

fn cmd_probe(args: ProbeArgs) -> anyhow::Result<ExitCode> {
    let (train, f_train) = load_features(&args.train)?;
    let (eval, f_eval) = load_features(&args.eval)?;
    if f_eval.dim() != f_train.dim() {
        return Err(usage(format!(
            "feature dimensions differ: train {} vs eval {}",
            f_train.dim(),
            f_eval.dim()
        )));
    }
    let cfg = ProbeConfig {
        epochs: args.epochs,
        lr: args.lr,
        seed: args.seed,
    };
    let result = linear_probe(&train, &f_train, &eval, &f_eval, &cfg)?;
    let mut manifest = Manifest::new("probe");
    manifest
        .arg("train", args.train.display().to_string())
        .arg("eval", args.eval.display().to_string())
        .arg("epochs", args.epochs as u64)
        .arg("lr", args.lr)
        .seed(args.seed);
    let text = match args.format {
        Format::Json => to_json_pretty(&json!({
            "accuracy": result.accuracy,
            "train_loss": result.train_loss,
            "steps_taken": result.steps_taken as u64,
            "n_train": train.len() as u64,
            "n_eval": eval.len() as u64,
            "feature_dim": f_train.dim() as u64,
        })),
        Format::Csv => {
            let mut s = String::from("accuracy,train_loss,steps_taken,n_train,n_eval\n");
            s.push_str(&csv_line([
                fmt_f64(result.accuracy),
                fmt_f64(result.train_loss),
                result.steps_taken.to_string(),
                train.len().to_string(),
                eval.len().to_string(),
            ]));
            s
        }
    };
    emit(&text, args.out.as_deref(), &mut manifest)?;
    Ok(ExitCode::SUCCESS)
}
