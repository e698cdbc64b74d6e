use super::layers::Pass;
use super::{ModelError, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// `(slice, index, analytic, numeric)` of the worst parameter.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares back-propagated gradients with central differences on `samples`
/// parameters spread round-robin over every parameter slice.
///
/// Both losses are evaluated with the same pass and a dropout stream reseeded
/// from `seed`, so training-mode checks see identical masks.
pub fn gradient_check<N: Network>(
    model: &N,
    batch: &N::Batch,
    pass: Pass,
    samples: usize,
    seed: u64,
) -> Result<GradientReport, ModelError> {
    let eval = |m: &N| -> Result<f64, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match pass {
            Pass::Frozen => m.loss(batch),
            Pass::Train => Ok(m.loss_and_grads(batch, pass, &mut rng)?.0),
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, grad, _) = model.loss_and_grads(batch, pass, &mut rng)?;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let capacity: usize = sizes.iter().sum();
    let target = samples.min(capacity);

    let mut picker = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut slice = 0;
    while chosen.len() < target {
        if sizes[slice] > 0 && chosen.iter().filter(|(s, _)| *s == slice).count() < sizes[slice] {
            loop {
                let idx = picker.random_range(0..sizes[slice]);
                if chosen.insert((slice, idx)) {
                    break;
                }
            }
        }
        slice = (slice + 1) % sizes.len();
    }

    let analytic = grad.params();
    let mut probe = model.clone();
    let mut report = GradientReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    for &(s, i) in &chosen {
        let original = probe.params()[s][i];
        probe.params_mut()[s][i] = original + STEP;
        let up = eval(&probe)?;
        probe.params_mut()[s][i] = original - STEP;
        let down = eval(&probe)?;
        probe.params_mut()[s][i] = original;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[s][i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        report.checked += 1;
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = rel.max(report.max_relative_error);
            report.worst = Some((s, i, a, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AlbumBatch, AlbumNet, AlbumNetSpec, DenseNet, DenseNetSpec, M2Dataset};
    use ndarray::{Array2, Array3};
    use rand_distr::{Distribution, StandardNormal};

    fn dense_batch(rows: usize, classes: usize, seed: u64) -> M2Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        M2Dataset {
            inputs: Array2::from_shape_simple_fn((rows, classes + 4), || StandardNormal.sample(&mut rng)),
            targets: (0..rows).map(|r| r % classes).collect(),
        }
    }

    #[test]
    fn dense_frozen_and_train() {
        let model = DenseNet::new(DenseNetSpec::with_hidden(5, 7), &mut ChaCha8Rng::seed_from_u64(1));
        let batch = dense_batch(6, 5, 2);
        for pass in [Pass::Frozen, Pass::Train] {
            let r = gradient_check(&model, &batch, pass, 250, 3).unwrap();
            assert_eq!(r.checked, 250);
            assert!(r.max_relative_error < 1e-4, "{pass:?}: {r:?}");
        }
    }

    #[test]
    fn album_train_pass_with_padding() {
        let spec = AlbumNetSpec::from_dense(&DenseNetSpec::with_hidden(3, 5), 4);
        let model = AlbumNet::new(spec, &mut ChaCha8Rng::seed_from_u64(4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mask = Array2::ones((2, 5));
        mask[[1, 3]] = 0.0;
        mask[[1, 4]] = 0.0;
        let batch = AlbumBatch {
            inputs: Array3::from_shape_simple_fn((2, 5, 7), || StandardNormal.sample(&mut rng)),
            mask,
            targets: vec![0, 1, 2, 0, 1, 2, 0, 1, 0, 0],
        };
        let r = gradient_check(&model, &batch, Pass::Train, 300, 6).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn output_bias_gradient_matches_quotient() {
        let model = DenseNet::new(DenseNetSpec::with_hidden(3, 4), &mut ChaCha8Rng::seed_from_u64(1));
        let batch = dense_batch(4, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, grad, _) = model.loss_and_grads(&batch, Pass::Frozen, &mut rng).unwrap();
        let g = grad.output.b[0];
        let mut shifted = model.clone();
        shifted.output.b[0] += STEP;
        let up = shifted.loss(&batch).unwrap();
        shifted.output.b[0] -= 2.0 * STEP;
        let down = shifted.loss(&batch).unwrap();
        let numeric = (up - down) / (2.0 * STEP);
        assert!((g - numeric).abs() < 1e-8);
        assert!(((g * 1.01) - numeric).abs() / numeric.abs() > 1e-4);
    }
}
