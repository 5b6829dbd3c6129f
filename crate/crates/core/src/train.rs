//! The training loop: warm-up with plain steps, then cross-batch meta steps,
//! a Gaussian weight average snapshotted once per epoch, and per-epoch
//! evaluation written to a metrics CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::config::{ClassSet, Method, OptimizerKind, TrainConfig};
use crate::data::{batch_stream, generate_dataset, load_dataset, pair_tasks, SyntheticDataset, TRAIN_BASE};
use crate::ensemble::{default_mu, GwaState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::meta::{fomaml_gradient, AdaptiveMoments, MetaStepConfig, OuterOptimizer};
use crate::model::{class_subset_embeddings, init_extractor, Batch, SimilarityClassifier};
use crate::objective::Objective;
use crate::params::ParamVector;
use crate::schedule::cosine_decay;

pub const METRICS_HEADER: &str = "epoch,step,split,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.step, r.split, r.metric, r.value);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_theta: ParamVector,
    pub gwa_theta: ParamVector,
    /// Per-epoch snapshots, in epoch order.
    pub trajectory: Vec<ParamVector>,
    pub checkpoints: Vec<PathBuf>,
    pub metrics: Vec<MetricRow>,
    pub final_reports: Vec<EvalReport>,
    pub gwa_reports: Vec<EvalReport>,
}

impl TrainOutcome {
    fn report<'a>(reports: &'a [EvalReport], split: &str) -> Option<&'a EvalReport> {
        reports.iter().find(|r| r.split == split)
    }

    pub fn final_report(&self, split: &str) -> Option<&EvalReport> {
        TrainOutcome::report(&self.final_reports, split)
    }

    pub fn gwa_report(&self, split: &str) -> Option<&EvalReport> {
        TrainOutcome::report(&self.gwa_reports, split)
    }
}

pub fn load_or_generate(cfg: &TrainConfig) -> Result<SyntheticDataset> {
    match (&cfg.dataset_spec, &cfg.dataset_path) {
        (Some(spec), _) => generate_dataset(spec),
        (None, Some(path)) => load_dataset(path),
        (None, None) => Err(Error::config("no dataset configured")),
    }
}

pub fn class_set(ds: &SyntheticDataset, set: ClassSet) -> Vec<usize> {
    match set {
        ClassSet::Base => ds.base_classes(),
        ClassSet::Novel => ds.novel_classes(),
        ClassSet::All => (0..ds.spec.num_classes()).collect(),
    }
}

/// Full class table, used for evaluation over any subset.
pub fn eval_classifier(ds: &SyntheticDataset, dims: &[usize], logit_scale: f64) -> Result<SimilarityClassifier> {
    SimilarityClassifier::new(ds.class_embeddings.clone(), dims.to_vec(), logit_scale)
}

fn eval_batches(ds: &SyntheticDataset, split: &str) -> Result<Vec<Batch>> {
    Ok(vec![ds.split(split)?.as_batch()?])
}

struct Phase {
    meta: bool,
    steps: usize,
}

fn epoch_phase(cfg: &TrainConfig, epoch: usize, n_batches: usize) -> Phase {
    let meta = cfg.method == Method::Meta && epoch >= cfg.warmup_epochs;
    let steps = if meta {
        match cfg.meta.pairing {
            crate::data::Pairing::Disjoint => n_batches / (2 * cfg.meta.tasks_per_step),
            crate::data::Pairing::Sliding => n_batches.saturating_sub(1) / cfg.meta.tasks_per_step,
        }
    } else {
        n_batches
    };
    Phase { meta, steps }
}

/// Runs the configured training to completion, writing checkpoints and
/// `metrics.csv` under `out_dir` when given.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = load_or_generate(cfg)?;
    let spec = &ds.spec;
    if cfg.extractor_dims.first() != Some(&spec.input_dim()) || cfg.extractor_dims.last() != Some(&spec.d_embed) {
        return Err(Error::config(format!(
            "extractor_dims {:?} must start at d_x = {} and end at d_embed = {}",
            cfg.extractor_dims,
            spec.input_dim(),
            spec.d_embed
        )));
    }
    let train_split = ds.split(TRAIN_BASE)?;
    let base = ds.base_classes();
    let train_clf = SimilarityClassifier::new(
        class_subset_embeddings(&eval_classifier(&ds, &cfg.extractor_dims, cfg.logit_scale)?, &base),
        cfg.extractor_dims.clone(),
        cfg.logit_scale,
    )?;
    let full_clf = eval_classifier(&ds, &cfg.extractor_dims, cfg.logit_scale)?;
    let eval_sets: Vec<(String, Vec<usize>, Vec<Batch>)> = cfg
        .eval
        .iter()
        .map(|t| Ok((t.split.clone(), class_set(&ds, t.classes), eval_batches(&ds, &t.split)?)))
        .collect::<Result<_>>()?;

    let bsz = cfg.meta.batch_size;
    if bsz > train_split.len() {
        return Err(Error::config(format!(
            "batch size {bsz} exceeds training split of {}",
            train_split.len()
        )));
    }
    let n_batches = train_split.len() / bsz;
    let phases: Vec<Phase> = (0..cfg.epochs).map(|e| epoch_phase(cfg, e, n_batches)).collect();
    if let Some(e) = phases.iter().position(|p| p.steps == 0) {
        return Err(Error::config(format!(
            "epoch {} would run no optimizer steps; need more data or fewer tasks per step",
            e + 1
        )));
    }
    let total_steps = cfg
        .schedule
        .total_steps
        .unwrap_or_else(|| phases.iter().map(|p| p.steps).sum());
    let sched = &cfg.schedule;

    let mut theta = init_extractor(&cfg.extractor_dims, cfg.seeds.model)?;
    let mut optimizer = match cfg.meta.optimizer {
        OptimizerKind::Sgd => OuterOptimizer::Descent,
        OptimizerKind::Adam => OuterOptimizer::Adaptive(AdaptiveMoments::default()),
    };
    let snapshot_epochs = if cfg.gwa.skip_warmup {
        cfg.epochs - cfg.warmup_epochs
    } else {
        cfg.epochs
    };
    let mu = cfg.gwa.mu.unwrap_or_else(|| default_mu(snapshot_epochs));
    let mut gwa = GwaState::new(mu, cfg.gwa.sigma2, snapshot_epochs, phases.last().unwrap().steps)?;

    let digest = cfg.digest();
    let ckpt_dir = out_dir.map(|d| d.join("checkpoints"));
    if let Some(d) = &ckpt_dir {
        fs::create_dir_all(d)?;
    }

    let mut step = 0usize;
    let mut metrics = Vec::new();
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    for (epoch, phase) in phases.iter().enumerate() {
        let batches = batch_stream(
            train_split,
            cfg.sampler,
            train_clf.class_embeddings(),
            bsz,
            cfg.seeds.sampler,
            epoch as u64,
        )?;
        let mut losses = Vec::with_capacity(phase.steps);
        let mut query_losses = Vec::new();
        if phase.meta {
            let groups = pair_tasks(&batches, cfg.meta.tasks_per_step, cfg.meta.pairing)?;
            for group in &groups {
                let step_cfg = MetaStepConfig {
                    alpha: cosine_decay(sched.alpha_init, sched.alpha_final, step, total_steps),
                    beta: cosine_decay(sched.beta_init, sched.beta_final, step, total_steps),
                    delta: cfg.meta.delta,
                    tasks_per_step: cfg.meta.tasks_per_step,
                };
                let (g, report) =
                    fomaml_gradient(&train_clf, &theta, group, &step_cfg).map_err(|e| diverged_or(e, step))?;
                theta = optimizer
                    .apply(&theta, &g, step_cfg.beta)
                    .map_err(|e| diverged_or(e, step))?;
                losses.push(report.mean_support_loss());
                query_losses.push(report.mean_query_loss());
                step += 1;
            }
        } else {
            for batch in &batches {
                let lr = cosine_decay(sched.beta_init, sched.beta_final, step, total_steps);
                let (l, g) = train_clf
                    .loss_and_grad(&theta, batch)
                    .map_err(|e| diverged_or(e, step))?;
                theta = optimizer.apply(&theta, &g, lr).map_err(|e| diverged_or(e, step))?;
                losses.push(l);
                step += 1;
            }
        }
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::Diverged { step });
        }

        let ep = epoch + 1;
        let mut push = |split: &str, metric: &str, value: f64| {
            metrics.push(MetricRow {
                epoch: ep,
                step,
                split: split.to_string(),
                metric: metric.to_string(),
                value,
            })
        };
        push(TRAIN_BASE, "loss", mean(&losses));
        if !query_losses.is_empty() {
            push(TRAIN_BASE, "query_loss", mean(&query_losses));
        }
        push(
            TRAIN_BASE,
            "lr",
            cosine_decay(sched.beta_init, sched.beta_final, step, total_steps),
        );
        for (name, subset, batches) in &eval_sets {
            let r = evaluate(&theta, &full_clf, name, batches, subset)?;
            push(name, "top1", r.top1);
            push(name, "top5", r.top5);
            push(name, "loss", r.mean_loss);
        }

        if cfg.gwa.enabled && !(cfg.gwa.skip_warmup && epoch < cfg.warmup_epochs) {
            gwa.update(&theta)?;
        }
        if let Some(d) = &ckpt_dir {
            let path = d.join(format!("epoch_{ep:03}.omd"));
            save_checkpoint(
                &path,
                &theta,
                &CheckpointMeta {
                    epoch: ep as u64,
                    config_digest: digest,
                },
            )?;
            checkpoints.push(path);
        }
        trajectory.push(theta.clone());
    }

    let gwa_theta = if cfg.gwa.enabled {
        gwa.finalize()?
    } else {
        theta.clone()
    };
    let mut final_reports = Vec::new();
    let mut gwa_reports = Vec::new();
    for (name, subset, batches) in &eval_sets {
        final_reports.push(evaluate(&theta, &full_clf, name, batches, subset)?);
        gwa_reports.push(evaluate(&gwa_theta, &full_clf, name, batches, subset)?);
    }
    for r in &gwa_reports {
        for (metric, value) in [("top1", r.top1), ("top5", r.top5), ("loss", r.mean_loss)] {
            metrics.push(MetricRow {
                epoch: cfg.epochs,
                step,
                split: format!("gwa:{}", r.split),
                metric: metric.to_string(),
                value,
            });
        }
    }

    if let Some(d) = out_dir {
        let meta = CheckpointMeta {
            epoch: cfg.epochs as u64,
            config_digest: digest,
        };
        save_checkpoint(&d.join("final.omd"), &theta, &meta)?;
        save_checkpoint(&d.join("gwa.omd"), &gwa_theta, &meta)?;
        fs::write(d.join("metrics.csv"), metrics_csv(&metrics))?;
        fs::write(d.join("config.json"), serde_json::to_vec_pretty(cfg)?)?;
    }

    Ok(TrainOutcome {
        final_theta: theta,
        gwa_theta,
        trajectory,
        checkpoints,
        metrics,
        final_reports,
        gwa_reports,
    })
}

fn diverged_or(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric { .. } => Error::Diverged { step },
        other => other,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}
