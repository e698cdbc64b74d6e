use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub initial_per_cell: f64,
    pub growth: f64,
    /// 0 follows empirical class frequencies, 1 draws every class equally often.
    pub bias: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            initial_per_cell: 200.0,
            growth: 0.06,
            bias: 0.0,
        }
    }
}

/// Per-epoch training subsets whose size grows geometrically.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    params: SamplerParams,
    num_cells: usize,
    total: usize,
    seed: u64,
    by_class: Vec<Vec<usize>>,
    /// Classes with no records; they are never drawn.
    pub empty_classes: Vec<usize>,
    class_weights: Option<WeightedIndex<f64>>,
}

impl EpochSampler {
    /// `classes[i]` is the geo-class of record `i`, each `< num_cells`.
    pub fn new(classes: &[usize], num_cells: usize, params: SamplerParams, seed: u64) -> Self {
        let mut by_class = vec![Vec::new(); num_cells];
        for (i, &c) in classes.iter().enumerate() {
            by_class[c].push(i);
        }
        let empty_classes: Vec<usize> = (0..num_cells).filter(|&c| by_class[c].is_empty()).collect();
        let populated = num_cells - empty_classes.len();
        let bias = params.bias.clamp(0.0, 1.0);
        let class_weights = if populated == 0 {
            None
        } else {
            let weights: Vec<f64> = by_class
                .iter()
                .map(|members| {
                    if members.is_empty() {
                        0.0
                    } else {
                        (1.0 - bias) * members.len() as f64 / classes.len() as f64
                            + bias / populated as f64
                    }
                })
                .collect();
            WeightedIndex::new(weights).ok()
        };
        Self {
            params,
            num_cells,
            total: classes.len(),
            seed,
            by_class,
            empty_classes,
            class_weights,
        }
    }

    /// `ceil(num_cells * initial_per_cell * (1 + growth)^epoch)`, capped at the set size.
    pub fn epoch_size(&self, epoch: u32) -> usize {
        let exact = self.num_cells as f64
            * self.params.initial_per_cell
            * (1.0 + self.params.growth).powi(epoch as i32);
        // Products like 2000 * 1.06 land a few ulps above an integer.
        let nearest = exact.round();
        let size = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
            nearest
        } else {
            exact.ceil()
        };
        (size.min(self.total as f64)) as usize
    }

    fn rng(&self, epoch: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        rng
    }

    /// Record indices for one epoch; deterministic per seed and epoch.
    pub fn sample(&self, epoch: u32) -> Vec<usize> {
        let n = self.epoch_size(epoch);
        if self.params.bias <= 0.0 {
            let mut rng = self.rng(epoch);
            sample(&mut rng, self.total, n).into_vec()
        } else {
            self.draw(epoch, n)
        }
    }

    /// `n` independent class-weighted draws (with replacement).
    pub fn draw(&self, epoch: u32, n: usize) -> Vec<usize> {
        let Some(weights) = &self.class_weights else {
            return Vec::new();
        };
        let mut rng = self.rng(epoch);
        (0..n)
            .map(|_| {
                let members = &self.by_class[weights.sample(&mut rng)];
                members[rng.random_range(0..members.len())]
            })
            .collect()
    }
}
