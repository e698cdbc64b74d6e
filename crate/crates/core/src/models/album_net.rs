use super::dense_net::DenseNetSpec;
use super::layers::{cross_entropy, softmax_rows, Activation, BlockCache, BlockStack, Dense, Lstm, LstmCache, Pass};
use super::{ModelError, Network};
use crate::features::Album;
use ndarray::{concatenate, s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_LSTM_HIDDEN: usize = 256;

/// Per-step dense front end (same layout as the time-adjust network minus its
/// output layer), a masked bidirectional LSTM, and a per-step softmax over
/// the front-end features concatenated with both recurrent states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbumNetSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub layers: Vec<(usize, Activation)>,
    pub lstm_hidden: usize,
    pub dropout: f64,
}

impl AlbumNetSpec {
    pub fn from_dense(dense: &DenseNetSpec, lstm_hidden: usize) -> Self {
        Self {
            num_classes: dense.num_classes,
            input_dim: dense.input_dim,
            layers: dense.layers.clone(),
            lstm_hidden,
            dropout: dense.dropout,
        }
    }

    pub fn front_width(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlbumNet {
    pub spec: AlbumNetSpec,
    pub stack: BlockStack,
    pub forward_lstm: Lstm,
    pub backward_lstm: Lstm,
    pub output: Dense,
}

/// Albums stacked into dense tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AlbumBatch {
    /// `(albums, steps, input_dim)`.
    pub inputs: Array3<f64>,
    /// `(albums, steps)`, 1 for real images.
    pub mask: Array2<f64>,
    /// Flattened `albums * steps` targets; padded slots hold 0 and are ignored.
    pub targets: Vec<usize>,
}

impl AlbumBatch {
    /// Validates masks (real entries first, at least one) and, when
    /// `need_targets`, that every real slot carries a target.
    pub fn from_albums(albums: &[&Album], need_targets: bool) -> Result<Self, ModelError> {
        let first = albums.first().ok_or(ModelError::EmptyInput)?;
        let (steps, dim) = first.entries.dim();
        let mut inputs = Array3::zeros((albums.len(), steps, dim));
        let mut mask = Array2::zeros((albums.len(), steps));
        let mut targets = vec![0; albums.len() * steps];
        for (a, album) in albums.iter().enumerate() {
            if album.entries.dim() != (steps, dim) || album.mask.len() != steps || album.targets.len() != steps {
                return Err(ModelError::MalformedAlbum(format!(
                    "album of user {} has inconsistent shape",
                    album.user_id
                )));
            }
            let real = album.real_count();
            if real == 0 {
                return Err(ModelError::MalformedAlbum(format!(
                    "album of user {} has no real images",
                    album.user_id
                )));
            }
            if album.mask[..real].iter().any(|m| !m) {
                return Err(ModelError::MalformedAlbum(format!(
                    "album of user {} has padding before real images",
                    album.user_id
                )));
            }
            inputs.slice_mut(s![a, .., ..]).assign(&album.entries);
            for t in 0..real {
                mask[[a, t]] = 1.0;
                match album.targets[t] {
                    Some(c) => targets[a * steps + t] = c,
                    None if need_targets => {
                        return Err(ModelError::MalformedAlbum(format!(
                            "album of user {} lacks a target at slot {t}",
                            album.user_id
                        )))
                    }
                    None => {}
                }
            }
        }
        Ok(Self { inputs, mask, targets })
    }

    pub fn albums(&self) -> usize {
        self.inputs.dim().0
    }

    pub fn steps(&self) -> usize {
        self.inputs.dim().1
    }

    pub fn row_weights(&self) -> Array1<f64> {
        self.mask.iter().copied().collect()
    }
}

pub struct AlbumCache {
    blocks: Vec<BlockCache>,
    fwd: LstmCache,
    bwd: LstmCache,
    joint: Array2<f64>,
    probs: Array2<f64>,
}

impl AlbumNet {
    pub fn new<R: Rng>(spec: AlbumNetSpec, rng: &mut R) -> Self {
        let stack = BlockStack::new(rng, spec.input_dim, &spec.layers, spec.dropout);
        let front = spec.front_width();
        let forward_lstm = Lstm::new(rng, front, spec.lstm_hidden);
        let backward_lstm = Lstm::new(rng, front, spec.lstm_hidden);
        let output = Dense::new(rng, front + 2 * spec.lstm_hidden, spec.num_classes);
        Self {
            spec,
            stack,
            forward_lstm,
            backward_lstm,
            output,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn forward<R: Rng>(&self, batch: &AlbumBatch, pass: Pass, rng: &mut R) -> Result<AlbumCache, ModelError> {
        let (albums, steps, dim) = batch.inputs.dim();
        if dim != self.spec.input_dim {
            return Err(ModelError::Dimension {
                expected: self.spec.input_dim,
                found: dim,
            });
        }
        let rows = albums * steps;
        let weights = batch.row_weights();
        let flat = batch
            .inputs
            .clone()
            .into_shape_with_order((rows, dim))
            .expect("contiguous");
        let (front, blocks) = match pass {
            Pass::Train => self.stack.forward(flat, Some(&weights), pass, rng),
            Pass::Frozen => self.stack.forward(flat, None, pass, rng),
        };
        let width = front.ncols();
        let seq = front
            .clone()
            .into_shape_with_order((albums, steps, width))
            .expect("contiguous");
        let (hf, fwd) = self.forward_lstm.forward(&seq, &batch.mask, false);
        let (hb, bwd) = self.backward_lstm.forward(&seq, &batch.mask, true);
        let hsz = self.spec.lstm_hidden;
        let hf = hf.into_shape_with_order((rows, hsz)).expect("contiguous");
        let hb = hb.into_shape_with_order((rows, hsz)).expect("contiguous");
        let joint = concatenate(Axis(1), &[front.view(), hf.view(), hb.view()]).expect("same rows");
        let probs = softmax_rows(&self.output.forward(joint.view()));
        Ok(AlbumCache {
            blocks,
            fwd,
            bwd,
            joint,
            probs,
        })
    }

    /// Per-step class probabilities, `(albums * steps, N)`; padded rows are meaningless.
    pub fn predict_batch(&self, batch: &AlbumBatch) -> Result<Array2<f64>, ModelError> {
        // Frozen passes draw no random numbers.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(batch, Pass::Frozen, &mut rng)?.probs)
    }

    /// `steps x N` probabilities for one album.
    pub fn predict_album(&self, album: &Album) -> Result<Array2<f64>, ModelError> {
        let batch = AlbumBatch::from_albums(&[album], false)?;
        self.predict_batch(&batch)
    }
}

impl Network for AlbumNet {
    type Batch = AlbumBatch;

    fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            stack: self.stack.zeros_like(),
            forward_lstm: self.forward_lstm.zeros_like(),
            backward_lstm: self.backward_lstm.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    fn loss_and_grads<R: Rng>(
        &self,
        batch: &AlbumBatch,
        pass: Pass,
        rng: &mut R,
    ) -> Result<(f64, Self, Vec<BlockCache>), ModelError> {
        let cache = self.forward(batch, pass, rng)?;
        let (albums, steps, _) = batch.inputs.dim();
        let weights = batch.row_weights();
        let (loss, dlogits) = cross_entropy(&cache.probs, &batch.targets, weights.as_slice().expect("contiguous"));
        let mut grad = self.zeros_like();
        let djoint = self.output.backward(cache.joint.view(), &dlogits, &mut grad.output);
        let width = self.spec.front_width();
        let hsz = self.spec.lstm_hidden;
        let dhf = djoint
            .slice(s![.., width..width + hsz])
            .to_owned()
            .into_shape_with_order((albums, steps, hsz))
            .expect("contiguous");
        let dhb = djoint
            .slice(s![.., width + hsz..])
            .to_owned()
            .into_shape_with_order((albums, steps, hsz))
            .expect("contiguous");
        let dseq_f = self.forward_lstm.backward(&cache.fwd, &dhf, &mut grad.forward_lstm);
        let dseq_b = self.backward_lstm.backward(&cache.bwd, &dhb, &mut grad.backward_lstm);
        let mut dfront = djoint.slice(s![.., ..width]).to_owned();
        dfront += &(dseq_f + dseq_b)
            .into_shape_with_order((albums * steps, width))
            .expect("contiguous");
        let row_weights = match pass {
            Pass::Train => Some(&weights),
            Pass::Frozen => None,
        };
        self.stack.backward(&cache.blocks, dfront, row_weights, &mut grad.stack);
        Ok((loss, grad, cache.blocks))
    }

    fn loss(&self, batch: &AlbumBatch) -> Result<f64, ModelError> {
        let probs = self.predict_batch(batch)?;
        let weights = batch.row_weights();
        Ok(cross_entropy(&probs, &batch.targets, weights.as_slice().expect("contiguous")).0)
    }

    fn apply_batch_stats(&mut self, caches: &[BlockCache]) {
        self.stack.update_running(caches);
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.stack.params();
        p.extend(self.forward_lstm.params());
        p.extend(self.backward_lstm.params());
        p.extend(self.output.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.stack.params_mut();
        p.extend(self.forward_lstm.params_mut());
        p.extend(self.backward_lstm.params_mut());
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
