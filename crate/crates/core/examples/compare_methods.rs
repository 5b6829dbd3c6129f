//! Trains the plain and meta configurations side by side on the static-bias
//! benchmark and prints zero-shot accuracies per seed.
//!
//! cargo run --release --example compare_methods -- [n_seeds] [base_config.json]
//!
//! A base config overrides the defaults; its dataset and model/sampler seeds
//! are replaced by the loop seed, and `method` by each side of the pair.

use crossmeta::config::{Method, TrainConfig};
use crossmeta::data::{DatasetSpec, TEST_NOVEL_IC, TEST_NOVEL_OOC};
use crossmeta::train::train;

fn config(base: &TrainConfig, seed: u64, method: Method) -> TrainConfig {
    let mut cfg = base.clone();
    let spec = cfg.dataset_spec.clone().unwrap_or_default();
    cfg.dataset_spec = Some(DatasetSpec { seed, ..spec });
    cfg.dataset_path = None;
    cfg.method = method;
    cfg.seeds.model = seed;
    cfg.seeds.sampler = seed;
    cfg
}

fn main() -> crossmeta::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let base = match args.next() {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)?
        }
        None => TrainConfig::default(),
    };
    println!("seed  plain_ooc  meta_ooc   gap     | final_ic  gwa_ic");
    let mut wins = 0;
    let mut gwa_ok = 0;
    let mut gap_sum = 0.0;
    for seed in 0..n {
        let plain = train(&config(&base, seed, Method::Plain), None)?;
        let meta = train(&config(&base, seed, Method::Meta), None)?;
        let p = plain.final_report(TEST_NOVEL_OOC).unwrap().top1;
        let m = meta.final_report(TEST_NOVEL_OOC).unwrap().top1;
        let f_ic = meta.final_report(TEST_NOVEL_IC).unwrap().top1;
        let g_ic = meta.gwa_report(TEST_NOVEL_IC).unwrap().top1;
        wins += usize::from(m > p);
        gwa_ok += usize::from(g_ic >= f_ic);
        gap_sum += m - p;
        println!(
            "{seed:>4}  {p:>9.4}  {m:>8.4}  {:>+7.4} | {f_ic:>8.4}  {g_ic:>6.4}",
            m - p
        );
    }
    println!(
        "meta wins {wins}/{n}, mean gap {:+.4}; gwa >= final {gwa_ok}/{n}",
        gap_sum / n as f64
    );
    Ok(())
}
