//! Full pipeline on a small benchmark: train with per-epoch checkpoints,
//! reload the final and GWA snapshots, evaluate them, and blend the two
//! models' score matrices.
//!
//! cargo run --release --example train_and_evaluate -- [out_dir]

use crossmeta::checkpoint::load_checkpoint_checked;
use crossmeta::config::TrainConfig;
use crossmeta::data::{DatasetSpec, TEST_BASE_IC, TEST_NOVEL_IC, TEST_NOVEL_OOC};
use crossmeta::eval::{evaluate, harmonic_mean, prediction_ensemble};
use crossmeta::model::{cosine_scores, extract_features};
use crossmeta::train::{eval_classifier, load_or_generate, train};

fn main() -> crossmeta::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("crossmeta_run"));
    let cfg = TrainConfig {
        dataset_spec: Some(DatasetSpec {
            samples_per_class_train: 100,
            seed: 1,
            ..Default::default()
        }),
        epochs: 10,
        ..Default::default()
    };
    let outcome = train(&cfg, Some(&out))?;
    println!(
        "wrote {} checkpoints under {}",
        outcome.checkpoints.len(),
        out.display()
    );

    let ds = load_or_generate(&cfg)?;
    let clf = eval_classifier(&ds, &cfg.extractor_dims, cfg.logit_scale)?;
    let digest = cfg.digest();
    let (last, _) = load_checkpoint_checked(&out.join("final.omd"), outcome.final_theta.layout(), Some(&digest))?;
    let (gwa, _) = load_checkpoint_checked(&out.join("gwa.omd"), outcome.final_theta.layout(), Some(&digest))?;

    let mut summary = Vec::new();
    for (name, classes) in [
        (TEST_BASE_IC, ds.base_classes()),
        (TEST_NOVEL_IC, ds.novel_classes()),
        (TEST_NOVEL_OOC, ds.novel_classes()),
    ] {
        let batch = ds.split(name)?.as_batch()?;
        let a = evaluate(&last, &clf, name, std::slice::from_ref(&batch), &classes)?;
        let b = evaluate(&gwa, &clf, name, std::slice::from_ref(&batch), &classes)?;
        println!("{name:<15} final {:.4}  gwa {:.4}", a.top1, b.top1);
        summary.push(100.0 * b.top1);
    }
    println!("harmonic mean of gwa top-1: {:.1}", harmonic_mean(&summary)?);

    // Half-and-half blend of the two models' cosine scores on one split.
    let batch = ds.split(TEST_NOVEL_IC)?.as_batch()?;
    let sa = cosine_scores(extract_features(&last, batch.inputs(), &clf)?.view(), &clf)?;
    let sb = cosine_scores(extract_features(&gwa, batch.inputs(), &clf)?.view(), &clf)?;
    let blend = prediction_ensemble(&sa, &sb, 0.5)?;
    println!("blended score matrix {:?}", blend.shape());
    Ok(())
}
