use super::layers::{cross_entropy, softmax_rows, Activation, BlockCache, BlockStack, Dense, Pass};
use super::{ModelError, Network};
use crate::features::EXTRA_INPUTS;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hidden width used for every class count.
pub const TABLE_HIDDEN_WIDTH: usize = 1626;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    /// Width and activation of each non-output layer.
    pub layers: Vec<(usize, Activation)>,
    pub dropout: f64,
}

impl DenseNetSpec {
    /// Input `N+4` rectifier, three hidden layers of `hidden` units
    /// (sigmoid, rectifier, sigmoid), softmax output over `N`.
    pub fn with_hidden(num_classes: usize, hidden: usize) -> Self {
        let input_dim = num_classes + EXTRA_INPUTS;
        Self {
            num_classes,
            input_dim,
            layers: vec![
                (input_dim, Activation::Relu),
                (hidden, Activation::Sigmoid),
                (hidden, Activation::Relu),
                (hidden, Activation::Sigmoid),
            ],
            dropout: 0.5,
        }
    }

    /// The published layout with 1626 hidden units.
    pub fn table2(num_classes: usize) -> Self {
        Self::with_hidden(num_classes, TABLE_HIDDEN_WIDTH)
    }

    /// Hidden width three times the input width.
    pub fn proportional(num_classes: usize) -> Self {
        Self::with_hidden(num_classes, 3 * (num_classes + EXTRA_INPUTS))
    }

    /// All layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.0).collect();
        w.push(self.num_classes);
        w
    }
}

/// The time-adjust network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub spec: DenseNetSpec,
    pub stack: BlockStack,
    pub output: Dense,
}

/// Rows and integer targets for dense-network training.
#[derive(Debug, Clone, PartialEq)]
pub struct M2Dataset {
    pub inputs: Array2<f64>,
    pub targets: Vec<usize>,
}

impl M2Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> M2Dataset {
        M2Dataset {
            inputs: self.inputs.select(ndarray::Axis(0), rows),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
        }
    }
}

pub struct DenseCache {
    blocks: Vec<BlockCache>,
    hidden: Array2<f64>,
}

impl DenseNet {
    pub fn new<R: Rng>(spec: DenseNetSpec, rng: &mut R) -> Self {
        let stack = BlockStack::new(rng, spec.input_dim, &spec.layers, spec.dropout);
        let fan_in = if spec.layers.is_empty() { spec.input_dim } else { stack.output_dim() };
        let output = Dense::new(rng, fan_in, spec.num_classes);
        Self { spec, stack, output }
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn check_input(&self, cols: usize) -> Result<(), ModelError> {
        if cols != self.spec.input_dim {
            return Err(ModelError::Dimension {
                expected: self.spec.input_dim,
                found: cols,
            });
        }
        Ok(())
    }

    /// Softmax outputs in inference mode.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ModelError> {
        self.check_input(x.ncols())?;
        let h = self.stack.infer(x);
        Ok(softmax_rows(&self.output.forward(h.view())))
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("one row");
        Ok(self.predict(view)?.row(0).to_vec())
    }

    fn forward<R: Rng>(&self, x: &Array2<f64>, pass: Pass, rng: &mut R) -> (Array2<f64>, DenseCache) {
        let (hidden, blocks) = self.stack.forward(x.clone(), None, pass, rng);
        let probs = softmax_rows(&self.output.forward(hidden.view()));
        (probs, DenseCache { blocks, hidden })
    }
}

impl Network for DenseNet {
    type Batch = M2Dataset;

    fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            stack: self.stack.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    fn loss_and_grads<R: Rng>(
        &self,
        batch: &M2Dataset,
        pass: Pass,
        rng: &mut R,
    ) -> Result<(f64, Self, Vec<BlockCache>), ModelError> {
        self.check_input(batch.inputs.ncols())?;
        let (probs, cache) = self.forward(&batch.inputs, pass, rng);
        let weights = vec![1.0; batch.len()];
        let (loss, dlogits) = cross_entropy(&probs, &batch.targets, &weights);
        let mut grad = self.zeros_like();
        let dh = self.output.backward(cache.hidden.view(), &dlogits, &mut grad.output);
        self.stack.backward(&cache.blocks, dh, None, &mut grad.stack);
        Ok((loss, grad, cache.blocks))
    }

    fn loss(&self, batch: &M2Dataset) -> Result<f64, ModelError> {
        let probs = self.predict(batch.inputs.view())?;
        Ok(cross_entropy(&probs, &batch.targets, &vec![1.0; batch.len()]).0)
    }

    fn apply_batch_stats(&mut self, caches: &[BlockCache]) {
        self.stack.update_running(caches);
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.stack.params();
        p.extend(self.output.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.stack.params_mut();
        p.extend(self.output.params_mut());
        p
    }

    fn running(&self) -> Vec<&[f64]> {
        self.stack.running()
    }

    fn running_mut(&mut self) -> Vec<&mut [f64]> {
        self.stack.running_mut()
    }
}

/// Argmax of a probability row, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(probs: &Array2<f64>, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = probs
        .rows()
        .into_iter()
        .zip(targets)
        .filter(|(row, t)| argmax(row.as_slice().expect("contiguous rows")) == **t)
        .count();
    hits as f64 / targets.len() as f64
}
