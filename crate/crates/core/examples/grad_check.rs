//! Checks the analytic gradient of the cosine-similarity classifier against
//! central differences on a handful of random problems.
//!
//! cargo run --example grad_check -- [seed]

use crossmeta::model::{self, Batch, SimilarityClassifier};
use crossmeta::objective::{finite_diff_grad, relative_error};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> crossmeta::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    println!("dims          K  B  params  loss      rel_err");
    for _ in 0..8 {
        let d_x = rng.random_range(2..=8);
        let dims = vec![d_x, rng.random_range(2..=6), rng.random_range(2..=5)];
        let k = rng.random_range(2..=6);
        let b = rng.random_range(1..=8);
        let emb = Array2::from_shape_simple_fn((k, dims[2]), || rng.sample(StandardNormal));
        let clf = SimilarityClassifier::from_raw_embeddings(emb, dims.clone(), 10.0)?;
        let theta = model::init_params(&clf, rng.random())?;
        let x = Array2::from_shape_simple_fn((b, d_x), || rng.sample(StandardNormal));
        let labels = (0..b).map(|_| rng.random_range(0..k)).collect();
        let batch = Batch::new(x, labels, (0..b as u64).collect())?;

        let (loss, g) = model::loss_and_grad(&theta, &batch, &clf)?;
        let fd = finite_diff_grad(&clf, &theta, &batch, 1e-5)?;
        println!(
            "{:<12}  {k}  {b}  {:>6}  {loss:.5}  {:.2e}",
            format!("{dims:?}"),
            theta.len(),
            relative_error(&g, &fd)?
        );
    }
    Ok(())
}
