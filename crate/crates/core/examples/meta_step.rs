//! One cross-batch meta step, first on the scalar bowl where everything has a
//! closed form, then on a small classifier where the first-order update is
//! compared with the exact meta-gradient.
//!
//! cargo run --example meta_step

use crossmeta::meta::{fomaml_gradient, fomaml_step, second_order_meta_grad, MetaStepConfig, MetaTask};
use crossmeta::model::{self, Batch, SimilarityClassifier};
use crossmeta::objective::{Quadratic, QuadraticBatch};
use crossmeta::ParamVector;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn bowls() -> crossmeta::Result<()> {
    // Support bowl at 0, query bowl at 1.
    let task = MetaTask::new(
        QuadraticBatch::new(vec![0.0], 1.0, 0),
        QuadraticBatch::new(vec![1.0], 1.0, 1),
    )?;
    let theta = ParamVector::from_slice(&[1.0])?;
    let cfg = MetaStepConfig {
        alpha: 0.1,
        beta: 0.1,
        delta: 1.0,
        tasks_per_step: 1,
    };
    let (g, report) = fomaml_gradient(&Quadratic, &theta, std::slice::from_ref(&task), &cfg)?;
    let exact = second_order_meta_grad(&Quadratic, &theta, &task, cfg.alpha, 1e-5)?;
    let (next, _) = fomaml_step(&Quadratic, &theta, std::slice::from_ref(&task), &cfg)?;
    println!(
        "bowl: support loss {:.3}, query loss {:.3}",
        report.tasks[0].support, report.tasks[0].query
    );
    println!(
        "bowl: first-order grad {:.4}, exact {:.4}, theta {:.2} -> {:.4}",
        g.values()[0],
        exact.values()[0],
        theta.values()[0],
        next.values()[0]
    );
    Ok(())
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, d: usize, k: usize, first_id: u64) -> crossmeta::Result<Batch> {
    let x = Array2::from_shape_simple_fn((b, d), || rng.sample(StandardNormal));
    let y = (0..b).map(|_| rng.random_range(0..k)).collect();
    Batch::new(x, y, (first_id..first_id + b as u64).collect())
}

fn classifier() -> crossmeta::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (d, k) = (4, 3);
    let emb = Array2::from_shape_simple_fn((k, 3), || rng.sample(StandardNormal));
    let clf = SimilarityClassifier::from_raw_embeddings(emb, vec![d, 4, 3], 10.0)?;
    let theta = model::init_params(&clf, 5)?;
    let task = MetaTask::new(
        random_batch(&mut rng, 6, d, k, 0)?,
        random_batch(&mut rng, 6, d, k, 100)?,
    )?;

    println!("classifier ({} params): alpha, cosine(first-order, exact)", theta.len());
    for alpha in [1e-1, 1e-2, 1e-3, 1e-4] {
        let cfg = MetaStepConfig {
            alpha,
            beta: 1.0,
            delta: 1.0,
            tasks_per_step: 1,
        };
        let (g_fo, _) = fomaml_gradient(&clf, &theta, std::slice::from_ref(&task), &cfg)?;
        let g_ex = second_order_meta_grad(&clf, &theta, &task, alpha, 1e-5)?;
        println!("  {alpha:>6.0e}  {:.9}", g_fo.cosine(&g_ex)?);
    }
    Ok(())
}

fn main() -> crossmeta::Result<()> {
    bowls()?;
    classifier()
}
