//! Feature-space benchmark with a controllable static bias.
//!
//! Every class `c` has a unit embedding `t_c` and an assigned context.
//! A sample of class `c` shown in context `k` is
//!
//! ```text
//! x = [ motion_map . t_c + noise ,  prototype_k + noise ]
//!       \____ d_motion ____/        \__ d_static __/
//! ```
//!
//! In training data the context equals the assigned one with probability
//! `bias_rho`, so the static half is a shortcut. Out-of-context splits break
//! that link, either by drawing the context independently of the class or
//! by swapping in another class's context. Only the motion half carries
//! information that transfers to unseen (novel) classes.

mod format;
mod sampler;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;

pub use format::{load_dataset, read_split, save_dataset, write_split, SplitHeader, SPLIT_MAGIC};
pub use sampler::{batch_stream, pair_tasks, Pairing, SamplerMode};

pub const TRAIN_BASE: &str = "train_base";
pub const TEST_BASE_IC: &str = "test_base_ic";
pub const TEST_NOVEL_IC: &str = "test_novel_ic";
pub const TEST_BASE_OOC: &str = "test_base_ooc";
pub const TEST_NOVEL_OOC: &str = "test_novel_ooc";

pub const SPLIT_NAMES: [&str; 5] = [TRAIN_BASE, TEST_BASE_IC, TEST_NOVEL_IC, TEST_BASE_OOC, TEST_NOVEL_OOC];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OocMode {
    /// Context drawn uniformly, independent of the class.
    #[default]
    Resample,
    /// Context of the next class (by index) whose context differs.
    Swap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub k_base: usize,
    pub k_novel: usize,
    pub d_embed: usize,
    pub d_motion: usize,
    pub d_static: usize,
    pub n_contexts: usize,
    pub bias_rho: f64,
    pub noise_sigma: f64,
    pub samples_per_class_train: usize,
    pub samples_per_class_test: usize,
    pub seed: u64,
    #[serde(default)]
    pub ooc_mode: OocMode,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            k_base: 10,
            k_novel: 10,
            d_embed: 8,
            d_motion: 8,
            d_static: 8,
            n_contexts: 10,
            bias_rho: 0.9,
            noise_sigma: 0.1,
            samples_per_class_train: 200,
            samples_per_class_test: 100,
            seed: 0,
            ooc_mode: OocMode::Resample,
        }
    }
}

impl DatasetSpec {
    pub fn num_classes(&self) -> usize {
        self.k_base + self.k_novel
    }

    pub fn input_dim(&self) -> usize {
        self.d_motion + self.d_static
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_base", self.k_base),
            ("k_novel", self.k_novel),
            ("d_embed", self.d_embed),
            ("d_motion", self.d_motion),
            ("d_static", self.d_static),
            ("n_contexts", self.n_contexts),
            ("samples_per_class_train", self.samples_per_class_train),
            ("samples_per_class_test", self.samples_per_class_test),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.bias_rho) {
            return Err(Error::config(format!("bias_rho {} outside [0, 1]", self.bias_rho)));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma must be positive"));
        }
        Ok(())
    }
}

/// One realized split. `contexts` is only known for generated data.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub name: String,
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<u64>,
    pub contexts: Option<Vec<usize>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `idx` as a batch, in the given order.
    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let inputs = self.inputs.select(ndarray::Axis(0), idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        let ids = idx.iter().map(|&i| self.sample_ids[i]).collect();
        Batch::new(inputs, labels, ids)
    }

    pub fn as_batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.labels.clone(), self.sample_ids.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    pub class_embeddings: Array2<f64>,
    pub class_context: Vec<usize>,
    pub motion_map: Array2<f64>,
    pub context_prototypes: Array2<f64>,
    pub splits: BTreeMap<String, Split>,
}

impl SyntheticDataset {
    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits
            .get(name)
            .ok_or_else(|| Error::config(format!("dataset has no split named {name}")))
    }

    pub fn base_classes(&self) -> Vec<usize> {
        (0..self.spec.k_base).collect()
    }

    pub fn novel_classes(&self) -> Vec<usize> {
        (self.spec.k_base..self.spec.num_classes()).collect()
    }
}

/// First `k_base` classes are base, the rest novel.
pub fn split_base_novel(dataset: &SyntheticDataset) -> (Vec<usize>, Vec<usize>) {
    (dataset.base_classes(), dataset.novel_classes())
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = gaussian_matrix(rng, rows, cols, 1.0);
    for mut row in m.outer_iter_mut() {
        let mut n = row.dot(&row).sqrt();
        while n < 1e-12 {
            row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
            n = row.dot(&row).sqrt();
        }
        row /= n;
    }
    m
}

/// Base classes take distinct contexts while they last, likewise novel ones.
fn assign_contexts(rng: &mut ChaCha8Rng, spec: &DatasetSpec) -> Vec<usize> {
    let mut out = Vec::with_capacity(spec.num_classes());
    for count in [spec.k_base, spec.k_novel] {
        let mut perm: Vec<usize> = (0..spec.n_contexts).collect();
        perm.shuffle(rng);
        out.extend((0..count).map(|i| perm[i % spec.n_contexts]));
    }
    out
}

#[derive(Clone, Copy)]
enum ContextRule {
    Biased(f64),
    Ooc(OocMode),
}

struct Generator<'a> {
    spec: &'a DatasetSpec,
    class_embeddings: &'a Array2<f64>,
    class_context: &'a [usize],
    motion_map: &'a Array2<f64>,
    prototypes: &'a Array2<f64>,
    next_id: u64,
}

impl Generator<'_> {
    fn swap_context(&self, class: usize) -> usize {
        let k = self.class_context.len();
        let own = self.class_context[class];
        (1..k)
            .map(|off| self.class_context[(class + off) % k])
            .find(|&c| c != own)
            .unwrap_or(own)
    }

    fn draw_context(&self, rng: &mut ChaCha8Rng, class: usize, rule: ContextRule) -> usize {
        let n = self.spec.n_contexts;
        let own = self.class_context[class];
        match rule {
            ContextRule::Biased(rho) => {
                if n == 1 || rng.random::<f64>() < rho {
                    own
                } else {
                    let r = rng.random_range(0..n - 1);
                    if r >= own {
                        r + 1
                    } else {
                        r
                    }
                }
            }
            ContextRule::Ooc(OocMode::Resample) => rng.random_range(0..n),
            ContextRule::Ooc(OocMode::Swap) => self.swap_context(class),
        }
    }

    fn split(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: &str,
        classes: &[usize],
        per_class: usize,
        rule: ContextRule,
    ) -> Split {
        let (dm, ds) = (self.spec.d_motion, self.spec.d_static);
        let sigma = self.spec.noise_sigma;
        let m = classes.len() * per_class;
        let mut inputs = Array2::zeros((m, dm + ds));
        let mut labels = Vec::with_capacity(m);
        let mut contexts = Vec::with_capacity(m);
        let mut ids = Vec::with_capacity(m);
        let mut row = 0;
        for &c in classes {
            let motion: Array1<f64> = self.motion_map.dot(&self.class_embeddings.row(c));
            for _ in 0..per_class {
                let ctx = self.draw_context(rng, c, rule);
                let mut x = inputs.row_mut(row);
                for j in 0..dm {
                    x[j] = motion[j] + sigma * rng.sample::<f64, _>(StandardNormal);
                }
                for j in 0..ds {
                    x[dm + j] = self.prototypes[[ctx, j]] + sigma * rng.sample::<f64, _>(StandardNormal);
                }
                labels.push(c);
                contexts.push(ctx);
                ids.push(self.next_id);
                self.next_id += 1;
                row += 1;
            }
        }
        Split {
            name: name.to_string(),
            inputs,
            labels,
            sample_ids: ids,
            contexts: Some(contexts),
        }
    }
}

/// Realizes every split of `spec`; bit-identical for a fixed seed.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.num_classes();
    let class_embeddings = unit_rows(&mut rng, k, spec.d_embed);
    let motion_map = gaussian_matrix(
        &mut rng,
        spec.d_motion,
        spec.d_embed,
        1.0 / (spec.d_embed as f64).sqrt(),
    );
    let context_prototypes = gaussian_matrix(&mut rng, spec.n_contexts, spec.d_static, 1.0);
    let class_context = assign_contexts(&mut rng, spec);

    let base: Vec<usize> = (0..spec.k_base).collect();
    let novel: Vec<usize> = (spec.k_base..k).collect();
    let mut gen = Generator {
        spec,
        class_embeddings: &class_embeddings,
        class_context: &class_context,
        motion_map: &motion_map,
        prototypes: &context_prototypes,
        next_id: 0,
    };
    let biased = ContextRule::Biased(spec.bias_rho);
    let ooc = ContextRule::Ooc(spec.ooc_mode);
    let (n_tr, n_te) = (spec.samples_per_class_train, spec.samples_per_class_test);
    let plan: [(&str, &[usize], usize, ContextRule); 5] = [
        (TRAIN_BASE, &base, n_tr, biased),
        (TEST_BASE_IC, &base, n_te, biased),
        (TEST_NOVEL_IC, &novel, n_te, biased),
        (TEST_BASE_OOC, &base, n_te, ooc),
        (TEST_NOVEL_OOC, &novel, n_te, ooc),
    ];
    let mut splits = BTreeMap::new();
    for (name, classes, per_class, rule) in plan {
        splits.insert(name.to_string(), gen.split(&mut rng, name, classes, per_class, rule));
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        class_embeddings,
        class_context,
        motion_map,
        context_prototypes,
        splits,
    })
}
