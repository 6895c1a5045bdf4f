//! Minibatch SGD and shadow-ensemble training.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_subset, Dataset, MembershipLedger, SubsetMask};
use crate::digest::{self, derive_seed};
use crate::error::{Error, Result};
use crate::nn::{init_mlp, LayerSizes, MlpParams};

/// SGD hyperparameters. Defaults deliberately overfit small MLPs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_decay_epochs: vec![120, 160],
            lr_decay_factor: 0.1,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::invalid("lr_decay_factor must be in (0, 1]"));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }
}

/// Trains a fresh `init_mlp(arch, seed)` on the masked examples.
///
/// Per-epoch shuffling draws from a stream derived from `seed`; the update is
/// `v <- momentum * v + (g + weight_decay * w)`, `w <- w - lr * v`.
pub fn train_model(
    dataset: &Dataset,
    mask: &SubsetMask,
    arch: &LayerSizes,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<MlpParams> {
    hyper.validate()?;
    if mask.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            got: mask.len(),
        });
    }
    if arch.input_dim() != dataset.d {
        return Err(Error::DimensionMismatch {
            expected: dataset.d,
            got: arch.input_dim(),
        });
    }
    if arch.n_classes() < dataset.k {
        return Err(Error::InvalidArch(format!(
            "{} outputs for {} classes",
            arch.n_classes(),
            dataset.k
        )));
    }
    let train = dataset.select(mask);
    if train.is_empty() {
        return Err(Error::invalid("empty training subset"));
    }

    let mut params = init_mlp(arch, seed);
    params.config_digest = digest::digest_of(&("train", arch.as_slice(), hyper, seed, dataset.digest(), mask.bits()));
    if hyper.epochs == 0 {
        return Ok(init_mlp(arch, seed));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5348_5546)); // "SHUF"
    let mut velocity = params.zero_grad();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..hyper.epochs {
        let lr = hyper.lr_at(epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let mut g = params.zero_grad();
            for &i in batch {
                params.accumulate_grad(&train[i], &mut g);
            }
            let inv = 1.0 / batch.len() as f64;
            for ((layer, gl), vl) in params.layers.iter_mut().zip(&g.layers).zip(velocity.layers.iter_mut()) {
                let wd = hyper.weight_decay;
                for ((w, g), v) in layer.w.iter_mut().zip(&gl.w).zip(vl.w.iter_mut()) {
                    *v = hyper.momentum * *v + (g * inv + wd * *w);
                    *w -= lr * *v;
                }
                for ((b, g), v) in layer.b.iter_mut().zip(&gl.b).zip(vl.b.iter_mut()) {
                    *v = hyper.momentum * *v + g * inv;
                    *b -= lr * *v;
                }
            }
        }
    }
    params
        .validate()
        .map_err(|_| Error::NonFinite("training diverged".into()))?;
    Ok(params)
}

/// Fraction of `examples` whose arg-max prediction equals the label.
pub fn accuracy(params: &MlpParams, examples: &[crate::nn::Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .iter()
        .filter(|e| params.predict(&e.x).map(|p| p == e.y).unwrap_or(false))
        .count();
    hits as f64 / examples.len() as f64
}

/// Mean clamped cross-entropy over `examples`.
pub fn mean_loss(params: &MlpParams, examples: &[crate::nn::Example]) -> Result<f64> {
    let mut total = 0.0;
    for e in examples {
        total += params.loss_at(&e.x, e.y)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Shadow models with the membership of every example in every model.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowEnsemble {
    pub models: Vec<MlpParams>,
    pub ledger: MembershipLedger,
    pub dataset_digest: String,
    pub master_seed: u64,
    /// Per-model seed used for both the subset draw and training.
    pub seeds: Vec<u64>,
}

/// Seed of shadow model `j`: `derive_seed(master_seed, j)`.
pub fn shadow_seed(master_seed: u64, j: usize) -> u64 {
    derive_seed(master_seed, j as u64)
}

/// Trains `n_models` shadows; model `j` sees `sample_subset(dataset,
/// fraction, shadow_seed(master_seed, j))` and trains with the same seed.
///
/// Work runs on the ambient rayon pool; the result does not depend on its
/// size or on scheduling order.
pub fn train_shadow_ensemble(
    dataset: &Dataset,
    n_models: usize,
    fraction: f64,
    arch: &LayerSizes,
    hyper: &TrainHyper,
    master_seed: u64,
) -> Result<ShadowEnsemble> {
    if n_models < 2 {
        return Err(Error::invalid(format!("need at least 2 shadow models, got {n_models}")));
    }
    let seeds: Vec<u64> = (0..n_models).map(|j| shadow_seed(master_seed, j)).collect();
    let results: Vec<Result<(SubsetMask, MlpParams)>> = seeds
        .par_iter()
        .map(|&s| {
            let mask = sample_subset(dataset, fraction, s)?;
            let model = train_model(dataset, &mask, arch, hyper, s)?;
            Ok((mask, model))
        })
        .collect();
    let (masks, models): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(ShadowEnsemble {
        models,
        ledger: MembershipLedger::from_masks(&masks),
        dataset_digest: dataset.digest(),
        master_seed,
        seeds,
    })
}

#[derive(Serialize, Deserialize)]
struct LedgerDoc {
    in_matrix: Vec<Vec<bool>>,
    master_seed: u64,
    seeds: Vec<u64>,
    dataset_digest: String,
    model_digests: Vec<String>,
}

impl ShadowEnsemble {
    pub fn model_digests(&self) -> Vec<String> {
        self.models.iter().map(MlpParams::digest).collect()
    }

    /// Writes `ledger.json` and `model_<j>.json` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (j, m) in self.models.iter().enumerate() {
            m.save_json(&dir.join(format!("model_{j}.json")))?;
        }
        let doc = LedgerDoc {
            in_matrix: self.ledger.in_matrix.clone(),
            master_seed: self.master_seed,
            seeds: self.seeds.clone(),
            dataset_digest: self.dataset_digest.clone(),
            model_digests: self.model_digests(),
        };
        let path = dir.join("ledger.json");
        let bytes = digest::to_json_sig17_pretty(&doc).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    /// Loads an ensemble written by [`save_dir`](Self::save_dir), checking
    /// every model against its recorded digest.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("ledger.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let doc: LedgerDoc = serde_json::from_slice(&text).map_err(|e| Error::json(&path, e))?;
        if doc.in_matrix.len() != doc.model_digests.len() || doc.seeds.len() != doc.model_digests.len() {
            return Err(Error::invalid(format!(
                "{}: inconsistent ledger lengths",
                path.display()
            )));
        }
        let mut models = Vec::with_capacity(doc.model_digests.len());
        for (j, want) in doc.model_digests.iter().enumerate() {
            let m = MlpParams::load_json(&dir.join(format!("model_{j}.json")))?;
            if &m.digest() != want {
                return Err(Error::invalid(format!("model_{j}.json does not match ledger digest")));
            }
            models.push(m);
        }
        Ok(Self {
            models,
            ledger: MembershipLedger {
                in_matrix: doc.in_matrix,
            },
            dataset_digest: doc.dataset_digest,
            master_seed: doc.master_seed,
            seeds: doc.seeds,
        })
    }
}
