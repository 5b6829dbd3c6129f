use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Split;
use crate::error::{Error, Result};
use crate::meta::MetaTask;
use crate::model::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Fresh seeded permutation every epoch.
    #[default]
    Shuffle,
    /// Dataset order, every epoch.
    Initial,
    /// Classes visited along a greedy nearest-embedding tour.
    Similar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Tasks `(b1, b2), (b3, b4), ...`; each batch used once.
    #[default]
    Disjoint,
    /// Tasks `(b1, b2), (b2, b3), ...`; each batch is query then support.
    Sliding,
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

fn cosine(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    let n = (a.dot(&a) * b.dot(&b)).sqrt();
    if n == 0.0 {
        0.0
    } else {
        a.dot(&b) / n
    }
}

/// Greedy tour starting at the lowest class, always stepping to the most
/// similar unvisited class (ties to the lower index).
fn class_tour(classes: &[usize], embeddings: ArrayView2<'_, f64>) -> Vec<usize> {
    let mut left: Vec<usize> = classes.to_vec();
    left.sort_unstable();
    left.dedup();
    let mut tour = Vec::with_capacity(left.len());
    if left.is_empty() {
        return tour;
    }
    let mut cur = left.remove(0);
    tour.push(cur);
    while !left.is_empty() {
        let (pos, _) = left.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &c)| {
            let s = cosine(embeddings.row(cur), embeddings.row(c));
            if s > best.1 {
                (i, s)
            } else {
                best
            }
        });
        cur = left.remove(pos);
        tour.push(cur);
    }
    tour
}

/// Partitions a split into `floor(M / B)` batches for one epoch.
///
/// `class_embeddings` is only consulted in [`SamplerMode::Similar`].
pub fn batch_stream(
    split: &Split,
    mode: SamplerMode,
    class_embeddings: ArrayView2<'_, f64>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    let m = split.len();
    if batch_size == 0 || batch_size > m {
        return Err(Error::config(format!(
            "batch size {batch_size} does not fit split {} of {m} samples",
            split.name
        )));
    }
    let order: Vec<usize> = match mode {
        SamplerMode::Initial => (0..m).collect(),
        SamplerMode::Shuffle => {
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(&mut epoch_rng(seed, epoch));
            idx
        }
        SamplerMode::Similar => {
            if let Some(&c) = split.labels.iter().find(|&&c| c >= class_embeddings.nrows()) {
                return Err(Error::config(format!("no embedding for class {c}")));
            }
            let mut rng = epoch_rng(seed, epoch);
            let tour = class_tour(&split.labels, class_embeddings);
            let mut idx = Vec::with_capacity(m);
            for c in tour {
                let mut members: Vec<usize> = (0..m).filter(|&i| split.labels[i] == c).collect();
                members.shuffle(&mut rng);
                idx.extend(members);
            }
            idx
        }
    };
    order.chunks_exact(batch_size).map(|chunk| split.batch(chunk)).collect()
}

/// Groups consecutive batches into meta steps of `tasks_per_step` tasks.
/// Incomplete trailing groups are dropped.
pub fn pair_tasks(batches: &[Batch], tasks_per_step: usize, pairing: Pairing) -> Result<Vec<Vec<MetaTask<Batch>>>> {
    if batches.len() < 2 {
        return Err(Error::config(format!(
            "need at least 2 batches to form a task, got {}",
            batches.len()
        )));
    }
    if tasks_per_step == 0 {
        return Err(Error::config("tasks_per_step must be at least 1"));
    }
    let n = tasks_per_step;
    let mut groups = Vec::new();
    match pairing {
        Pairing::Disjoint => {
            for chunk in batches.chunks_exact(2 * n) {
                let group = chunk
                    .chunks_exact(2)
                    .map(|p| MetaTask::new(p[0].clone(), p[1].clone()))
                    .collect::<Result<Vec<_>>>()?;
                groups.push(group);
            }
        }
        Pairing::Sliding => {
            let n_groups = (batches.len() - 1) / n;
            for g in 0..n_groups {
                let group = (g * n..(g + 1) * n)
                    .map(|k| MetaTask::new(batches[k].clone(), batches[k + 1].clone()))
                    .collect::<Result<Vec<_>>>()?;
                groups.push(group);
            }
        }
    }
    Ok(groups)
}
