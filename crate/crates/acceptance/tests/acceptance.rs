//! Acceptance suite. One line per criterion; exits nonzero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use crossmeta::config::{Method, TrainConfig};
use crossmeta::data::{generate_dataset, DatasetSpec, TEST_BASE_OOC, TEST_NOVEL_IC, TEST_NOVEL_OOC, TRAIN_BASE};
use crossmeta::ensemble::{gaussian_weight, gwa_of_trajectory, GwaState};
use crossmeta::eval::harmonic_mean;
use crossmeta::meta::{fomaml_gradient, fomaml_step, second_order_meta_grad, MetaStepConfig, MetaTask};
use crossmeta::model::{self, Batch};
use crossmeta::objective::{Quadratic, QuadraticBatch};
use crossmeta::train::train;
use crossmeta::ParamVector;
use ndarray::Array2;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradient_oracle() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let inst = random_instance(seed, None);
        let (_, g) = model::loss_and_grad(&inst.theta, &inst.batch, &inst.classifier).unwrap();
        let fd = numeric_grad(&inst.theta, 1e-5, |p| {
            model::loss(p, &inst.batch, &inst.classifier).unwrap()
        });
        worst = worst.max(rel_err(g.values(), &fd));
    }
    verdict(
        worst < 1e-6,
        format!("100 instances, worst relative error {worst:.2e} (limit 1e-6)"),
    )
}

fn scalar(v: f64) -> ParamVector {
    ParamVector::from_slice(&[v]).unwrap()
}

/// Cosine between first-order and exact meta-gradients on random instance
/// `seed` for alpha = 1e-1, 1e-2, 1e-3, 1e-4.
fn fidelity_cosines(seed: u64) -> Vec<f64> {
    let inst = random_instance(seed, Some(60));
    let mut r = rng(seed + 5000);
    let (b, d_x) = inst.batch.inputs().dim();
    let k = inst.classifier.num_classes();
    let query = Batch::new(
        Array2::from_shape_simple_fn((b, d_x), || normal(&mut r)),
        (0..b).map(|_| r.random_range(0..k)).collect(),
        (100..100 + b as u64).collect(),
    )
    .unwrap();
    let task = MetaTask::new(inst.batch.clone(), query).unwrap();
    [1e-1, 1e-2, 1e-3, 1e-4]
        .into_iter()
        .map(|alpha| {
            let cfg = MetaStepConfig {
                alpha,
                beta: 1.0,
                delta: 1.0,
                tasks_per_step: 1,
            };
            let g_fo = fomaml_gradient(&inst.classifier, &inst.theta, std::slice::from_ref(&task), &cfg)
                .unwrap()
                .0;
            let g_ex = second_order_meta_grad(&inst.classifier, &inst.theta, &task, alpha, 1e-5).unwrap();
            cosine(g_fo.values(), g_ex.values())
        })
        .collect()
}

fn first_order_fidelity() -> Verdict {
    // Support bowl centred at 0, query bowl at 1, unit curvature.
    let task = MetaTask::new(
        QuadraticBatch::new(vec![0.0], 1.0, 0),
        QuadraticBatch::new(vec![1.0], 1.0, 1),
    )
    .unwrap();
    let exact = second_order_meta_grad(&Quadratic, &scalar(1.0), &task, 0.1, 1e-5)
        .unwrap()
        .values()[0];
    let cfg = MetaStepConfig {
        alpha: 0.1,
        beta: 1.0,
        delta: 1.0,
        tasks_per_step: 1,
    };
    let fo = fomaml_gradient(&Quadratic, &scalar(1.0), std::slice::from_ref(&task), &cfg)
        .unwrap()
        .0
        .values()[0];
    let quad_ok = (exact - 0.91).abs() < 1e-9 && (fo - 0.90).abs() < 1e-9;

    // Tiny classifier, instance 0 is the one judged. The sweep over further
    // instances is reported for context only.
    let cosines = fidelity_cosines(0);
    let monotone = cosines.windows(2).all(|w| w[1] >= w[0]);
    let last = *cosines.last().unwrap();
    let sweep = (0..200)
        .filter(|&s| fidelity_cosines(s).windows(2).all(|w| w[1] >= w[0]))
        .count();
    verdict(
        quad_ok && monotone && last >= 0.999,
        format!(
            "quadratic exact {exact:.12} first-order {fo:.12}; classifier cosines {:?}; \
             monotone on {sweep}/200 random instances",
            cosines.iter().map(|c| format!("{c:.9}")).collect::<Vec<_>>()
        ),
    )
}

fn delta_zero_reduction() -> Verdict {
    let mut failures = 0;
    for seed in 0..20u64 {
        let inst = random_instance(1000 + seed, None);
        let mut r = rng(seed);
        let (_, d_x) = inst.batch.inputs().dim();
        let k = inst.classifier.num_classes();
        let n_tasks = r.random_range(1..=4);
        let mut next_id = 0u64;
        let mut make = |r: &mut rand_chacha::ChaCha8Rng| {
            let b = r.random_range(1..=8);
            let batch = Batch::new(
                Array2::from_shape_simple_fn((b, d_x), || normal(r)),
                (0..b).map(|_| r.random_range(0..k)).collect(),
                (next_id..next_id + b as u64).collect(),
            )
            .unwrap();
            next_id += b as u64;
            batch
        };
        let tasks: Vec<_> = (0..n_tasks)
            .map(|_| {
                let s = make(&mut r);
                let q = make(&mut r);
                MetaTask::new(s, q).unwrap()
            })
            .collect();
        let beta = 10f64.powf(r.random_range(-4.0..-1.0));
        let cfg = MetaStepConfig {
            alpha: 10f64.powf(r.random_range(-4.0..-1.0)),
            beta,
            delta: 0.0,
            tasks_per_step: n_tasks,
        };
        let (stepped, _) = fomaml_step(&inst.classifier, &inst.theta, &tasks, &cfg).unwrap();

        let mut acc = vec![0.0; inst.theta.len()];
        for t in &tasks {
            let (_, g) = model::loss_and_grad(&inst.theta, t.support(), &inst.classifier).unwrap();
            for (a, v) in acc.iter_mut().zip(g.values()) {
                *a += v;
            }
        }
        let expect: Vec<f64> = inst
            .theta
            .values()
            .iter()
            .zip(&acc)
            .map(|(t, g)| t - beta * g)
            .collect();
        let same = stepped
            .values()
            .iter()
            .zip(&expect)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("{} of 20 cases bitwise equal", 20 - failures))
}

fn gwa_equivalence() -> Verdict {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let len = r.random_range(1..=50);
        let dim = r.random_range(1..=12);
        let mu = r.random_range(1.0..=len as f64);
        let sigma2 = r.random_range(1.0..30.0);
        let raw: Vec<Vec<f64>> = (0..len).map(|_| (0..dim).map(|_| normal(&mut r)).collect()).collect();
        let thetas: Vec<ParamVector> = raw.iter().map(|v| ParamVector::from_slice(v).unwrap()).collect();
        let mut state = GwaState::new(mu, sigma2, len, 1).unwrap();
        for t in &thetas {
            state.update(t).unwrap();
        }
        let streamed = state.finalize().unwrap();
        let batch = gwa_of_trajectory(&thetas, mu, sigma2).unwrap();
        assert!(streamed.bit_eq(&batch));
        worst = worst.max(rel_err(streamed.values(), &direct_gwa(&raw, mu, sigma2)));
    }

    let mut asym = 0.0f64;
    for d in 1..=6 {
        let a = gaussian_weight(7 + d, 7.0, 10.0).unwrap();
        let b = gaussian_weight(7 - d, 7.0, 10.0).unwrap();
        asym = asym.max((a - b).abs());
    }
    // Unit mass over a span wide enough that the truncated tails are negligible.
    let mass: f64 = (1..=200).map(|t| gaussian_weight(t, 100.0, 10.0).unwrap()).sum();
    let peak = gaussian_weight(7, 7.0, 10.0).unwrap();
    let pass = worst < 1e-10 && asym == 0.0 && (mass - 1.0).abs() < 1e-12 && (peak - 0.126157).abs() < 1e-6;
    verdict(
        pass,
        format!("worst relative error {worst:.2e}; asymmetry {asym:.1e}; mass {mass:.15}; peak {peak:.7}"),
    )
}

fn harmonic_rows() -> Verdict {
    let a = harmonic_mean(&[83.9, 33.5, 64.5]).unwrap();
    let b = harmonic_mean(&[81.5, 46.6]).unwrap();
    verdict(
        (a - 52.4).abs() <= 0.05 && (b - 59.3).abs() <= 0.05,
        format!("{a:.3} (want 52.4), {b:.3} (want 59.3)"),
    )
}

fn behaviour_config(seed: u64, method: Method) -> TrainConfig {
    let mut cfg = TrainConfig {
        dataset_spec: Some(DatasetSpec {
            k_base: 10,
            k_novel: 10,
            d_motion: 8,
            d_static: 8,
            n_contexts: 10,
            bias_rho: 0.9,
            noise_sigma: 0.1,
            samples_per_class_train: 200,
            seed,
            ..Default::default()
        }),
        method,
        ..Default::default()
    };
    cfg.seeds.model = seed;
    cfg.seeds.sampler = seed;
    cfg
}

/// Criteria 6 and 7 share the same twenty runs.
fn behaviour() -> (Verdict, Verdict) {
    let mut wins = 0;
    let mut gaps = Vec::new();
    let mut gwa_ok = 0;
    let mut rows = Vec::new();
    for seed in 0..10 {
        let plain = train(&behaviour_config(seed, Method::Plain), None).unwrap();
        let meta = train(&behaviour_config(seed, Method::Meta), None).unwrap();
        let p = plain.final_report(TEST_NOVEL_OOC).unwrap().top1;
        let m = meta.final_report(TEST_NOVEL_OOC).unwrap().top1;
        let fin = meta.final_report(TEST_NOVEL_IC).unwrap().top1;
        let gwa = meta.gwa_report(TEST_NOVEL_IC).unwrap().top1;
        wins += (m > p) as usize;
        gaps.push(m - p);
        gwa_ok += (gwa >= fin) as usize;
        rows.push(format!(
            "    seed {seed}: ooc plain {p:.3} meta {m:.3} | ic final {fin:.3} gwa {gwa:.3}"
        ));
    }
    for r in &rows {
        println!("{r}");
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    (
        verdict(
            wins >= 8 && mean_gap > 0.0,
            format!("meta ahead on novel OOC top-1 in {wins}/10 seeds (need 8), mean gap {mean_gap:+.4}"),
        ),
        verdict(
            gwa_ok >= 7,
            format!("GWA >= final on novel IC top-1 in {gwa_ok}/10 seeds (need 7)"),
        ),
    )
}

fn bias_calibration() -> Verdict {
    let spec = DatasetSpec::default();
    let ds = generate_dataset(&spec).unwrap();
    let base = ds.base_classes();
    let train_acc = static_oracle_accuracy(&ds, ds.split(TRAIN_BASE).unwrap(), &base);
    let ooc_acc = static_oracle_accuracy(&ds, ds.split(TEST_BASE_OOC).unwrap(), &base);
    let lo = spec.bias_rho - 0.05;
    let hi = 1.0 / spec.n_contexts as f64 + 0.05;
    verdict(
        train_acc >= lo && ooc_acc <= hi,
        format!("static oracle train {train_acc:.4} (>= {lo:.2}), resample OOC {ooc_acc:.4} (<= {hi:.2})"),
    )
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Verdict {
    let cfg = behaviour_config(3, Method::Meta);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train(&cfg, Some(a.path())).unwrap();
    train(&cfg, Some(b.path())).unwrap();
    let fa = files_under(a.path());
    let fb = files_under(b.path());
    let checkpoints = fa.iter().filter(|(n, _)| n.ends_with(".omd")).count();
    let has_metrics = fa.iter().any(|(n, _)| n == "metrics.csv");
    verdict(
        fa == fb && has_metrics && checkpoints > 0,
        format!(
            "{} files compared ({checkpoints} checkpoints), identical: {}",
            fa.len(),
            fa == fb
        ),
    )
}

fn report(id: usize, name: &str, budget: Duration, elapsed: Duration, v: &Verdict) -> bool {
    let in_time = elapsed < budget;
    let pass = v.pass && in_time;
    println!(
        "criterion {id} [{}] {name}: {} ({:.1}s of {}s)",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn main() -> ExitCode {
    let mut all = true;
    let (v, t) = timed(gradient_oracle);
    all &= report(1, "gradient oracle", Duration::from_secs(30), t, &v);
    let (v, t) = timed(first_order_fidelity);
    all &= report(2, "first-order fidelity", Duration::from_secs(120), t, &v);
    let (v, t) = timed(delta_zero_reduction);
    all &= report(3, "delta=0 reduction", Duration::from_secs(10), t, &v);
    let (v, t) = timed(gwa_equivalence);
    all &= report(4, "GWA equivalence", Duration::from_secs(10), t, &v);
    let (v, t) = timed(harmonic_rows);
    all &= report(5, "harmonic mean", Duration::from_secs(1), t, &v);
    let ((v6, v7), t) = timed(behaviour);
    all &= report(6, "debiasing trend", Duration::from_secs(300), t, &v6);
    all &= report(7, "GWA trend", Duration::from_secs(300), t, &v7);
    let (v, t) = timed(bias_calibration);
    all &= report(8, "synthetic-bias calibration", Duration::from_secs(30), t, &v);
    let (v, t) = timed(reproducibility);
    all &= report(9, "reproducibility", Duration::from_secs(120), t, &v);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
