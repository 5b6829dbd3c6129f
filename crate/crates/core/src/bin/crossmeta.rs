use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crossmeta::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crossmeta::config::{ClassSet, TrainConfig};
use crossmeta::data::{generate_dataset, load_dataset, save_dataset, DatasetSpec};
use crossmeta::ensemble::{baseline_average, default_mu, gwa_of_trajectory, BaselineScheme, DEFAULT_SIGMA2};
use crossmeta::eval::evaluate;
use crossmeta::model::{self, dims_from_layout, Batch, SimilarityClassifier, DEFAULT_LOGIT_SCALE};
use crossmeta::objective::{finite_diff_grad, relative_error};
use crossmeta::train::{class_set, eval_classifier, train};
use crossmeta::{Error, ParamVector, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Parser)]
#[command(name = "crossmeta", version, about = "Cross-batch meta-optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Classes {
    Base,
    Novel,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Gwa,
    Uniform,
    Ema,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset directory from a spec JSON.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a config JSON, writing checkpoints and metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-shot accuracy of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: String,
        #[arg(long, value_enum, default_value = "all")]
        classes: Classes,
        #[arg(long, default_value_t = DEFAULT_LOGIT_SCALE)]
        logit_scale: f64,
    },
    /// Average the per-epoch checkpoints in a directory.
    Avg {
        #[arg(long, value_enum)]
        scheme: Scheme,
        /// Defaults to ceil(0.6 * number of checkpoints).
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_SIGMA2)]
        sigma2: f64,
        #[arg(long, default_value_t = 0.9)]
        decay: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on random problems.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

fn gen_data(spec: &Path, out: &Path) -> Result<()> {
    let spec: DatasetSpec = serde_json::from_slice(&fs::read(spec)?)?;
    let ds = generate_dataset(&spec)?;
    save_dataset(&ds, out)?;
    println!("wrote {} splits to {}", ds.splits.len(), out.display());
    Ok(())
}

fn run_train(config: &Path, out: &Path) -> Result<()> {
    let cfg = TrainConfig::from_file(config)?;
    let outcome = train(&cfg, Some(out))?;
    for (fin, gwa) in outcome.final_reports.iter().zip(&outcome.gwa_reports) {
        println!(
            "{:<16} final top1 {:.4} top5 {:.4} | gwa top1 {:.4} top5 {:.4}",
            fin.split, fin.top1, fin.top5, gwa.top1, gwa.top5
        );
    }
    Ok(())
}

fn run_eval(checkpoint: &Path, data: &Path, split: &str, classes: Classes, logit_scale: f64) -> Result<()> {
    let ds = load_dataset(data)?;
    let (theta, _) = load_checkpoint(checkpoint)?;
    let dims = dims_from_layout(theta.layout())?;
    let clf = eval_classifier(&ds, &dims, logit_scale)?;
    let set = match classes {
        Classes::Base => ClassSet::Base,
        Classes::Novel => ClassSet::Novel,
        Classes::All => ClassSet::All,
    };
    let batch = ds.split(split)?.as_batch()?;
    let report = evaluate(&theta, &clf, split, &[batch], &class_set(&ds, set))?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// Per-epoch checkpoints in epoch order. Accepts a training output
/// directory or its `checkpoints/` subdirectory.
fn epoch_checkpoints(dir: &Path) -> Result<Vec<(ParamVector, CheckpointMeta)>> {
    let dir = if dir.join("checkpoints").is_dir() {
        dir.join("checkpoints")
    } else {
        dir.to_path_buf()
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("epoch_") && n.ends_with(".omd"))
        })
        .collect();
    paths.sort();
    let mut out = paths.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|(_, m)| m.epoch);
    if out.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    Ok(out)
}

fn run_avg(scheme: Scheme, mu: Option<f64>, sigma2: f64, decay: f64, input: &Path, out: &Path) -> Result<()> {
    let snaps = epoch_checkpoints(input)?;
    let meta = snaps.last().unwrap().1;
    let thetas: Vec<ParamVector> = snaps.into_iter().map(|(t, _)| t).collect();
    let avg = match scheme {
        Scheme::Gwa => gwa_of_trajectory(&thetas, mu.unwrap_or_else(|| default_mu(thetas.len())), sigma2)?,
        Scheme::Uniform => baseline_average(&thetas, BaselineScheme::Uniform)?,
        Scheme::Ema => baseline_average(&thetas, BaselineScheme::Ema { decay })?,
    };
    save_checkpoint(out, &avg, &meta)?;
    println!("averaged {} checkpoints into {}", thetas.len(), out.display());
    Ok(())
}

fn grad_check(seed: u64, trials: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let d_x = rng.random_range(1..=8);
        let d_e = rng.random_range(2..=6);
        let k = rng.random_range(2..=6);
        let b = rng.random_range(1..=8);
        let dims = vec![d_x, rng.random_range(1..=6), d_e];
        let emb = Array2::from_shape_simple_fn((k, d_e), || rng.sample(StandardNormal));
        let clf = SimilarityClassifier::from_raw_embeddings(emb, dims, DEFAULT_LOGIT_SCALE)?;
        let theta = model::init_params(&clf, rng.random())?;
        let inputs = Array2::from_shape_simple_fn((b, d_x), || rng.sample(StandardNormal));
        let labels = (0..b).map(|_| rng.random_range(0..k)).collect();
        let batch = Batch::new(inputs, labels, (0..b as u64).collect())?;
        let (_, g) = model::loss_and_grad(&theta, &batch, &clf)?;
        let fd = finite_diff_grad(&clf, &theta, &batch, 1e-5)?;
        worst = worst.max(relative_error(&g, &fd)?);
    }
    println!("{trials} trials, worst relative error {worst:.3e}");
    if worst < 1e-6 {
        Ok(())
    } else {
        Err(Error::Numeric {
            segment: "gradient".into(),
            detail: format!("relative error {worst:.3e} exceeds 1e-6"),
        })
    }
}

fn main() -> ExitCode {
    let result = match Cli::parse().cmd {
        Cmd::GenData { spec, out } => gen_data(&spec, &out),
        Cmd::Train { config, out } => run_train(&config, &out),
        Cmd::Eval {
            checkpoint,
            data,
            split,
            classes,
            logit_scale,
        } => run_eval(&checkpoint, &data, &split, classes, logit_scale),
        Cmd::Avg {
            scheme,
            mu,
            sigma2,
            decay,
            input,
            out,
        } => run_avg(scheme, mu, sigma2, decay, &input, &out),
        Cmd::GradCheck { seed, trials } => grad_check(seed, trials),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crossmeta: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
