use super::album_net::{AlbumBatch, AlbumNet, AlbumNetSpec};
use super::dense_net::{argmax, DenseNet, DenseNetSpec, M2Dataset};
use super::layers::{cross_entropy, Pass};
use super::optim::{Adagrad, Adam, Optimizer};
use super::{ModelError, Network};
use crate::data::{EpochSampler, SamplerParams};
use crate::features::Album;
use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    /// Rows per batch for the dense network, albums per batch for the album network.
    pub batch_size: usize,
    pub max_epochs: u32,
    /// One adaptive-moment phase per rate, in order.
    pub learning_rates: Vec<f64>,
    /// Epochs of adaptive-gradient warm-up before the first phase.
    pub warmup_epochs: u32,
    pub warmup_learning_rate: f64,
    /// Epochs without sufficient validation-accuracy gain before a phase ends.
    pub patience: u32,
    /// Required absolute gain in validation accuracy (fraction, 0.001 = 0.1 points).
    pub min_improvement: f64,
    pub sampler: SamplerParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 256,
            max_epochs: 100,
            learning_rates: vec![0.005, 0.001],
            warmup_epochs: 0,
            warmup_learning_rate: 0.01,
            patience: 5,
            min_improvement: 0.001,
            sampler: SamplerParams::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.learning_rates.is_empty() || self.patience == 0 {
            return Err(ModelError::InvalidConfig(
                "batch_size, patience and learning_rates must be non-empty/positive".into(),
            ));
        }
        if self.learning_rates.iter().any(|lr| !(*lr > 0.0)) {
            return Err(ModelError::InvalidConfig("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub phase: String,
    pub learning_rate: f64,
    pub examples: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: u32,
    pub best_valid_accuracy: f64,
}

/// Supplies per-epoch batches and validation scores to the shared loop.
trait EpochSource<N: Network> {
    fn batches(&mut self, epoch: u32) -> Vec<N::Batch>;
    /// Validation cross-entropy and accuracy.
    fn validate(&self, model: &N) -> Result<(f64, f64), ModelError>;
}

enum Phase {
    Warmup(f64),
    Adam(f64),
}

fn fit<N: Network, S: EpochSource<N>>(
    mut model: N,
    source: &mut S,
    cfg: &TrainConfig,
) -> Result<(N, TrainHistory), ModelError> {
    cfg.validate()?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut phases = Vec::new();
    if cfg.warmup_epochs > 0 {
        phases.push(Phase::Warmup(cfg.warmup_learning_rate));
    }
    phases.extend(cfg.learning_rates.iter().map(|lr| Phase::Adam(*lr)));

    let mut history = TrainHistory {
        best_valid_accuracy: f64::NEG_INFINITY,
        ..TrainHistory::default()
    };
    let mut best = model.clone();
    let mut epoch = 0u32;
    let mut last_finite = f64::NAN;
    'phases: for phase in phases {
        let (mut optimizer, name, lr, limit) = match phase {
            Phase::Warmup(lr) => (Optimizer::Adagrad(Adagrad::new(lr)), "warmup", lr, Some(cfg.warmup_epochs)),
            Phase::Adam(lr) => (Optimizer::Adam(Adam::new(lr)), "adam", lr, None),
        };
        let mut stale = 0;
        let mut in_phase = 0;
        loop {
            if epoch >= cfg.max_epochs {
                break 'phases;
            }
            if limit.is_some_and(|l| in_phase >= l) {
                break;
            }
            let batches = source.batches(epoch);
            let mut loss_sum = 0.0;
            let mut count = 0usize;
            for (index, batch) in batches.iter().enumerate() {
                let (loss, grad, caches) = model.loss_and_grads(batch, Pass::Train, &mut dropout_rng)?;
                let grads = grad.params();
                if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                    return Err(ModelError::Divergence {
                        epoch,
                        batch: index,
                        last_finite_loss: last_finite,
                    });
                }
                last_finite = loss;
                optimizer.update(model.params_mut(), grads);
                model.apply_batch_stats(&caches);
                loss_sum += loss;
                count += 1;
            }
            let (valid_loss, valid_accuracy) = source.validate(&model)?;
            if !valid_loss.is_finite() {
                return Err(ModelError::Divergence {
                    epoch,
                    batch: count,
                    last_finite_loss: last_finite,
                });
            }
            history.epochs.push(EpochRecord {
                epoch,
                phase: name.to_string(),
                learning_rate: lr,
                examples: count,
                train_loss: if count > 0 { loss_sum / count as f64 } else { f64::NAN },
                valid_loss,
                valid_accuracy,
            });
            log::info!(
                "epoch {epoch} ({name} lr {lr}): train loss {:.4}, valid loss {valid_loss:.4}, valid acc {:.4}",
                loss_sum / count.max(1) as f64,
                valid_accuracy
            );
            if valid_accuracy >= history.best_valid_accuracy + cfg.min_improvement {
                history.best_valid_accuracy = valid_accuracy;
                history.best_epoch = epoch;
                best = model.clone();
                stale = 0;
            } else {
                stale += 1;
            }
            epoch += 1;
            in_phase += 1;
            if limit.is_none() && stale >= cfg.patience {
                break;
            }
        }
        model = best.clone();
    }
    Ok((best, history))
}

struct DenseSource<'a> {
    train: &'a M2Dataset,
    valid: &'a M2Dataset,
    sampler: EpochSampler,
    batch_size: usize,
}

fn chunked_predict_dense(model: &DenseNet, data: &M2Dataset) -> Result<Array2<f64>, ModelError> {
    let mut out = Array2::zeros((data.len(), model.num_classes()));
    let step = 4096;
    for start in (0..data.len()).step_by(step) {
        let end = (start + step).min(data.len());
        let p = model.predict(data.inputs.slice(s![start..end, ..]))?;
        out.slice_mut(s![start..end, ..]).assign(&p);
    }
    Ok(out)
}

fn score(probs: &Array2<f64>, targets: &[usize], weights: &[f64]) -> (f64, f64) {
    let (loss, _) = cross_entropy(probs, targets, weights);
    let total: f64 = weights.iter().sum();
    let hits: f64 = probs
        .rows()
        .into_iter()
        .zip(targets.iter().zip(weights))
        .filter(|(_, (_, w))| **w > 0.0)
        .filter(|(row, (t, _))| argmax(row.as_slice().expect("contiguous")) == **t)
        .count() as f64;
    (loss, hits / total)
}

impl EpochSource<DenseNet> for DenseSource<'_> {
    fn batches(&mut self, epoch: u32) -> Vec<M2Dataset> {
        let indices = self.sampler.sample(epoch);
        indices
            .chunks(self.batch_size)
            .filter(|c| c.len() >= 2)
            .map(|c| self.train.select(c))
            .collect()
    }

    fn validate(&self, model: &DenseNet) -> Result<(f64, f64), ModelError> {
        let probs = chunked_predict_dense(model, self.valid)?;
        Ok(score(&probs, &self.valid.targets, &vec![1.0; self.valid.len()]))
    }
}

fn check_dense_data(data: &M2Dataset, spec_dim: usize, classes: usize) -> Result<(), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if data.inputs.ncols() != spec_dim {
        return Err(ModelError::Dimension {
            expected: spec_dim,
            found: data.inputs.ncols(),
        });
    }
    if let Some(t) = data.targets.iter().find(|t| **t >= classes) {
        return Err(ModelError::InvalidConfig(format!("target {t} exceeds class count {classes}")));
    }
    Ok(())
}

/// Trains the dense time-adjust network with the epoch sampler, two
/// adaptive-moment phases and early stopping on validation accuracy.
pub fn train_m2(
    train: &M2Dataset,
    valid: &M2Dataset,
    spec: DenseNetSpec,
    cfg: &TrainConfig,
) -> Result<(DenseNet, TrainHistory), ModelError> {
    check_dense_data(train, spec.input_dim, spec.num_classes)?;
    check_dense_data(valid, spec.input_dim, spec.num_classes)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(2);
    let model = DenseNet::new(spec.clone(), &mut init_rng);
    let sampler = EpochSampler::new(&train.targets, spec.num_classes, cfg.sampler, cfg.seed);
    if !sampler.empty_classes.is_empty() {
        log::warn!("{} classes have no training rows", sampler.empty_classes.len());
    }
    let mut source = DenseSource {
        train,
        valid,
        sampler,
        batch_size: cfg.batch_size,
    };
    fit(model, &mut source, cfg)
}

struct AlbumSource<'a> {
    train: &'a [Album],
    valid: Vec<AlbumBatch>,
    by_user: Vec<Vec<usize>>,
    batch_size: usize,
    seed: u64,
}

/// Indices of one randomly chosen album per user, in shuffled order.
pub fn sample_one_album_per_user(albums: &[Album], seed: u64, epoch: u32) -> Vec<usize> {
    let by_user = group_by_user(albums);
    pick_albums(&by_user, seed, epoch)
}

fn group_by_user(albums: &[Album]) -> Vec<Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, a) in albums.iter().enumerate() {
        map.entry(&a.user_id).or_default().push(i);
    }
    map.into_values().collect()
}

fn pick_albums(by_user: &[Vec<usize>], seed: u64, epoch: u32) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32 | epoch as u64);
    let mut chosen: Vec<usize> = by_user
        .iter()
        .map(|albums| albums[rng.random_range(0..albums.len())])
        .collect();
    chosen.shuffle(&mut rng);
    chosen
}

impl EpochSource<AlbumNet> for AlbumSource<'_> {
    fn batches(&mut self, epoch: u32) -> Vec<AlbumBatch> {
        pick_albums(&self.by_user, self.seed, epoch)
            .chunks(self.batch_size)
            .filter_map(|chunk| {
                let refs: Vec<&Album> = chunk.iter().map(|&i| &self.train[i]).collect();
                let batch = AlbumBatch::from_albums(&refs, true).expect("albums validated up front");
                (batch.mask.sum() >= 2.0).then_some(batch)
            })
            .collect()
    }

    fn validate(&self, model: &AlbumNet) -> Result<(f64, f64), ModelError> {
        let mut loss = 0.0;
        let mut hits = 0.0;
        let mut total = 0.0;
        for batch in &self.valid {
            let probs = model.predict_batch(batch)?;
            let weights = batch.row_weights();
            let w = weights.as_slice().expect("contiguous");
            let (l, acc) = score(&probs, &batch.targets, w);
            let n: f64 = w.iter().sum();
            loss += l * n;
            hits += acc * n;
            total += n;
        }
        Ok((loss / total, hits / total))
    }
}

/// Trains the album network: each epoch visits one random album per user.
pub fn train_m3(
    train: &[Album],
    valid: &[Album],
    spec: AlbumNetSpec,
    cfg: &TrainConfig,
) -> Result<(AlbumNet, TrainHistory), ModelError> {
    if train.is_empty() || valid.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    for set in [train, valid] {
        let refs: Vec<&Album> = set.iter().collect();
        let batch = AlbumBatch::from_albums(&refs, true)?;
        if batch.inputs.dim().2 != spec.input_dim {
            return Err(ModelError::Dimension {
                expected: spec.input_dim,
                found: batch.inputs.dim().2,
            });
        }
        if let Some(t) = batch.targets.iter().find(|t| **t >= spec.num_classes) {
            return Err(ModelError::InvalidConfig(format!("target {t} exceeds class count")));
        }
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(2);
    let model = AlbumNet::new(spec, &mut init_rng);
    let valid_batches = valid
        .chunks(256)
        .map(|c| AlbumBatch::from_albums(&c.iter().collect::<Vec<_>>(), true))
        .collect::<Result<Vec<_>, _>>()?;
    let mut source = AlbumSource {
        train,
        valid: valid_batches,
        by_user: group_by_user(train),
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    fit(model, &mut source, cfg)
}
