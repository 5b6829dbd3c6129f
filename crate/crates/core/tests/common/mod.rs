//! Reference computations shared by the integration tests. Nothing here calls
//! into the library's own gradient or averaging code.

#![allow(dead_code)]

use crossmeta::data::{Split, SyntheticDataset};
use crossmeta::model::{self, Batch, SimilarityClassifier};
use crossmeta::ParamVector;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Central differences of `f` around `p`, one coordinate at a time.
pub fn numeric_grad(p: &ParamVector, h: f64, f: impl Fn(&ParamVector) -> f64) -> Vec<f64> {
    (0..p.len())
        .map(|i| {
            let mut up = p.clone();
            up.values_mut()[i] += h;
            let mut down = p.clone();
            down.values_mut()[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - reference| / max(|reference|, 1e-12)`.
pub fn rel_err(a: &[f64], reference: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(reference).map(|(x, y)| x - y).collect();
    l2(&d) / l2(reference).max(1e-12)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (l2(a) * l2(b))
}

/// A small random classifier problem.
pub struct Instance {
    pub classifier: SimilarityClassifier,
    pub theta: ParamVector,
    pub batch: Batch,
}

/// Random tiny problem with `d_x <= 8`, `B <= 8`, `K <= 6`.
pub fn random_instance(seed: u64, max_params: Option<usize>) -> Instance {
    let mut r = rng(seed);
    loop {
        let d_x = r.random_range(1..=8);
        let hidden = r.random_range(1..=6);
        let d_e = r.random_range(2..=6);
        let dims = if r.random_bool(0.5) {
            vec![d_x, d_e]
        } else {
            vec![d_x, hidden, d_e]
        };
        let n_params: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if max_params.is_some_and(|m| n_params > m) {
            continue;
        }
        let k = r.random_range(2..=6);
        let b = r.random_range(1..=8);
        let emb = Array2::from_shape_simple_fn((k, d_e), || normal(&mut r));
        let classifier = SimilarityClassifier::from_raw_embeddings(emb, dims.clone(), 10.0).unwrap();
        let theta = model::init_params(&classifier, r.random()).unwrap();
        // Nonzero biases so every path through the network is exercised.
        let mut theta = theta;
        for v in theta.values_mut() {
            *v += 0.1 * normal(&mut r);
        }
        let inputs = Array2::from_shape_simple_fn((b, d_x), || normal(&mut r));
        let labels = (0..b).map(|_| r.random_range(0..k)).collect();
        let batch = Batch::new(inputs, labels, (0..b as u64).collect()).unwrap();
        return Instance {
            classifier,
            theta,
            batch,
        };
    }
}

/// Predicts a class from the static half of each input alone: the nearest
/// context prototype, mapped back through the class/context table.
pub fn static_oracle_accuracy(ds: &SyntheticDataset, split: &Split, candidates: &[usize]) -> f64 {
    let dm = ds.spec.d_motion;
    let protos = &ds.context_prototypes;
    let mut hits = 0;
    for (x, &y) in split.inputs.outer_iter().zip(&split.labels) {
        let s = x.slice(ndarray::s![dm..]);
        let nearest = (0..protos.nrows())
            .min_by(|&a, &b| {
                let da: f64 = (&s - &protos.row(a)).mapv(|v| v * v).sum();
                let db: f64 = (&s - &protos.row(b)).mapv(|v| v * v).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        let guess = candidates.iter().copied().find(|&c| ds.class_context[c] == nearest);
        if guess == Some(y) {
            hits += 1;
        }
    }
    hits as f64 / split.len() as f64
}

/// Predicts from the motion half alone by nearest `M t_c`.
pub fn motion_oracle_accuracy(ds: &SyntheticDataset, split: &Split, candidates: &[usize]) -> f64 {
    let dm = ds.spec.d_motion;
    let centers: Vec<_> = candidates
        .iter()
        .map(|&c| ds.motion_map.dot(&ds.class_embeddings.row(c)))
        .collect();
    let mut hits = 0;
    for (x, &y) in split.inputs.outer_iter().zip(&split.labels) {
        let m = x.slice(ndarray::s![..dm]);
        let best = (0..candidates.len())
            .min_by(|&a, &b| {
                let da: f64 = (&m - &centers[a]).mapv(|v| v * v).sum();
                let db: f64 = (&m - &centers[b]).mapv(|v| v * v).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        if candidates[best] == y {
            hits += 1;
        }
    }
    hits as f64 / split.len() as f64
}

/// Gaussian weight written out from the density formula.
pub fn gauss(t: f64, mu: f64, sigma2: f64) -> f64 {
    (-(t - mu).powi(2) / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI * sigma2).sqrt()
}

/// `sum_t w_t theta_t / sum_t w_t` with `t` counted from 1.
pub fn direct_gwa(thetas: &[Vec<f64>], mu: f64, sigma2: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=thetas.len()).map(|t| gauss(t as f64, mu, sigma2)).collect();
    let total: f64 = w.iter().sum();
    let mut out = vec![0.0; thetas[0].len()];
    for (th, wt) in thetas.iter().zip(&w) {
        for (o, v) in out.iter_mut().zip(th) {
            *o += wt / total * v;
        }
    }
    out
}
