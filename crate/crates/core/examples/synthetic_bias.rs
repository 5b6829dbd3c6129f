//! Generates the static-bias benchmark, reports how strongly the context
//! shortcut predicts labels on each split, and writes it to disk.
//!
//! cargo run --example synthetic_bias -- [out_dir]

use crossmeta::data::{generate_dataset, load_dataset, save_dataset, DatasetSpec, SyntheticDataset, SPLIT_NAMES};

/// Fraction of samples whose context is their class's assigned one.
fn in_context_rate(ds: &SyntheticDataset, name: &str) -> crossmeta::Result<f64> {
    let s = ds.split(name)?;
    let ctx = s.contexts.as_ref().expect("generated splits carry contexts");
    let hits = s
        .labels
        .iter()
        .zip(ctx)
        .filter(|(y, c)| ds.class_context[**y] == **c)
        .count();
    Ok(hits as f64 / s.len() as f64)
}

fn main() -> crossmeta::Result<()> {
    let spec = DatasetSpec::default();
    let ds = generate_dataset(&spec)?;
    println!(
        "{} base + {} novel classes, {} contexts, bias_rho {}",
        spec.k_base, spec.k_novel, spec.n_contexts, spec.bias_rho
    );
    println!("base contexts  {:?}", &ds.class_context[..spec.k_base]);
    println!("novel contexts {:?}", &ds.class_context[spec.k_base..]);
    for name in SPLIT_NAMES {
        println!(
            "  {name:<15} {:>5} samples, in-context rate {:.3}",
            ds.split(name)?.len(),
            in_context_rate(&ds, name)?
        );
    }

    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::Path::new(&dir);
        save_dataset(&ds, dir)?;
        let back = load_dataset(dir)?;
        assert_eq!(back.split("train_base")?.inputs, ds.split("train_base")?.inputs);
        println!("saved to {}", dir.display());
    }
    Ok(())
}
