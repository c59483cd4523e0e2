//! Replay and distillation losses.

use crate::compressor::CompressorParams;
use crate::error::{Error, Result};
use crate::memory::FeatureRecord;
use crate::ndcore::{add_scaled, check_len, Tensors, Vector};

use super::classifier::ModelParams;

/// Weight of the reconstruction term in the replay loss.
pub const REPLAY_MSE_WEIGHT: f64 = 0.5;

/// Features rebuilt from stored codes: `f̄ = decode(z)`.
pub fn materialize(records: &[FeatureRecord], compressor: &CompressorParams) -> Result<Vec<Vector>> {
    records
        .iter()
        .map(|r| {
            let z = Vector::from(r.code.iter().map(|v| *v as f64).collect::<Vec<_>>());
            compressor.decode(&z)
        })
        .collect()
}

/// Mean over records of `CE(h(encode(f̄)), c) + 0.5·MSE(reconstruct(f̄), f̄)`
/// with `f̄ = decode(code)` held fixed.
pub fn replay_loss(records: &[FeatureRecord], model: &ModelParams) -> Result<f64> {
    replay_terms(records, model, None)
}

pub fn replay_loss_grad(records: &[FeatureRecord], model: &ModelParams) -> Result<(f64, ModelParams)> {
    let mut grad = model.zeros_like();
    let loss = replay_terms(records, model, Some(&mut grad))?;
    Ok((loss, grad))
}

fn replay_terms(records: &[FeatureRecord], model: &ModelParams, grad: Option<&mut ModelParams>) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty { op: "replay_loss" });
    }
    for r in records {
        check_len("replay_loss", model.compressor.code_dim(), r.code.len())?;
        model.classifier.row_of(r.class_id)?;
    }
    let feats = materialize(records, &model.compressor)?;
    let scale = 1.0 / records.len() as f64;
    let mut ce = 0.0;
    match grad {
        None => {
            for (f, r) in feats.iter().zip(records) {
                ce += model.pipeline_ce(f, r.class_id, None, scale)?;
            }
            Ok(ce * scale + REPLAY_MSE_WEIGHT * model.compressor.recon_loss(&feats)?)
        }
        Some(g) => {
            for (f, r) in feats.iter().zip(records) {
                ce += model.pipeline_ce(f, r.class_id, Some(g), scale)?;
            }
            let (mse, g_mse) = model.compressor.recon_loss_grad(&feats)?;
            add_scaled(&mut g.compressor, &g_mse, REPLAY_MSE_WEIGHT)?;
            Ok(ce * scale + REPLAY_MSE_WEIGHT * mse)
        }
    }
}

/// `λ·MSE` between two equally shaped batches of codes, averaged over all entries.
pub fn distill_loss(new: &[Vector], old: &[Vector], lambda: f64) -> Result<f64> {
    check_len("distill_loss", old.len(), new.len())?;
    if new.is_empty() {
        return Err(Error::Empty { op: "distill_loss" });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in new.iter().zip(old) {
        check_len("distill_loss", b.len(), a.len())?;
        sum += a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        count += a.len();
    }
    Ok(lambda * sum / count as f64)
}

/// Distillation of the current encoder towards `frozen` on `batch`, with the
/// gradient w.r.t. the current compressor.
pub fn distill_loss_grad(
    current: &CompressorParams,
    frozen: &CompressorParams,
    batch: &[Vector],
    lambda: f64,
) -> Result<(f64, CompressorParams)> {
    current.check_batch("distill_loss", batch)?;
    let new: Vec<Vector> = batch.iter().map(|f| current.encode(f)).collect::<Result<_>>()?;
    let old: Vec<Vector> = batch.iter().map(|f| frozen.encode(f)).collect::<Result<_>>()?;
    let loss = distill_loss(&new, &old, lambda)?;
    let count = (batch.len() * current.code_dim()) as f64;
    let mut grad = current.zeros_like();
    for ((f, a), b) in batch.iter().zip(&new).zip(&old) {
        let g_z: Vec<f64> = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| 2.0 * lambda * (x - y) / count)
            .collect();
        current.encoder_vjp(f, &g_z, &mut grad)?;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::CompressorShape;
    use crate::continual::classifier::ReplayClassifier;
    use crate::ndcore::{compare_gradients, finite_diff_grad, mse, DEFAULT_STEP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(code: Vec<f32>, class_id: u32) -> FeatureRecord {
        FeatureRecord::new(code, class_id, 0, 0.0, 0.0)
    }

    fn zero_model(d: usize, classes: usize) -> ModelParams {
        let shape = CompressorShape::new(5, d, 1).unwrap();
        let clf = ReplayClassifier::from_parts(
            d,
            (0..classes as u32).collect(),
            vec![0.0; d * classes],
            vec![0.0; classes],
        )
        .unwrap();
        ModelParams::new(CompressorParams::zeros(shape), clf).unwrap()
    }

    #[test]
    fn perfect_classifier_and_exact_reconstruction_is_zero() {
        let mut m = zero_model(2, 2);
        m.classifier = ReplayClassifier::from_parts(2, vec![0, 1], vec![0.0; 4], vec![1000.0, 0.0]).unwrap();
        assert_eq!(replay_loss(&[rec(vec![0.3, 0.1], 0)], &m).unwrap(), 0.0);
    }

    #[test]
    fn uniform_classifier_gives_log_c() {
        let m = zero_model(2, 5);
        let l = replay_loss(&[rec(vec![0.3, 0.1], 0), rec(vec![-1.0, 2.0], 4)], &m).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    fn decoder_only(seed: u64) -> ModelParams {
        let mut m = zero_model(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // decoder W (5×2) sits after the encoder W (2×5) and b (2)
        for v in &mut m.compressor.as_flat_mut()[12..22] {
            *v = rng.random_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn mse_term_has_half_weight_and_is_quadratic() {
        let m = decoder_only(1);
        let r = rec(vec![0.8, -0.4], 1);
        let fbar = m
            .compressor
            .decode(&Vector::from(vec![0.8f32 as f64, -0.4f32 as f64]))
            .unwrap();
        let gap = mse(&m.compressor.reconstruct(&fbar).unwrap(), &fbar).unwrap();
        assert!(gap > 0.0);
        let term = replay_loss(&[r], &m).unwrap() - 3f64.ln();
        assert!((term - 0.5 * gap).abs() < 1e-12);
        let half = replay_loss(&[rec(vec![0.4, -0.2], 1)], &m).unwrap() - 3f64.ln();
        assert!((half / term - 0.25).abs() < 1e-9, "{half} vs {term}");
    }

    #[test]
    fn unknown_class_is_error() {
        let m = zero_model(2, 2);
        assert!(matches!(
            replay_loss(&[rec(vec![0.0, 0.0], 7)], &m),
            Err(Error::UnknownClass(7))
        ));
        assert!(replay_loss(&[], &m).is_err());
    }

    #[test]
    fn replay_gradient_matches_finite_differences() {
        let shape = CompressorShape::new(5, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut clf = ReplayClassifier::new(2);
        clf.expand(&[0, 1, 2], &mut rng);
        let m = ModelParams::new(CompressorParams::init(shape, 4), clf).unwrap();
        let recs = vec![rec(vec![0.5, -0.3], 0), rec(vec![1.2, 0.4], 2), rec(vec![-0.7, 0.9], 1)];
        let (_, g) = replay_loss_grad(&recs, &m).unwrap();
        let numeric = finite_diff_grad(
            |v| {
                let mut q = m.clone();
                q.load_flat(v.as_slice()).unwrap();
                // f̄ is fixed: materialize with the unperturbed decoder
                let feats = materialize(&recs, &m.compressor).unwrap();
                let ce: f64 = feats
                    .iter()
                    .zip(&recs)
                    .map(|(f, r)| q.pipeline_ce(f, r.class_id, None, 1.0).unwrap())
                    .sum::<f64>()
                    / 3.0;
                ce + 0.5 * q.compressor.recon_loss(&feats).unwrap()
            },
            &Vector::from(m.flatten()),
            DEFAULT_STEP,
        )
        .unwrap();
        let cmp = compare_gradients(&g.flatten(), numeric.as_slice()).unwrap();
        assert!(cmp.within(1e-6), "{cmp:?}");
    }

    #[test]
    fn distill_examples() {
        let a = vec![Vector::from(vec![1.0, 2.0]), Vector::from(vec![0.0, -1.0])];
        assert_eq!(distill_loss(&a, &a, 2.0).unwrap(), 0.0);
        let b = vec![Vector::from(vec![1.5, 2.0]), Vector::from(vec![0.0, -1.0])];
        let c = vec![Vector::from(vec![2.0, 2.0]), Vector::from(vec![0.0, -1.0])];
        let l1 = distill_loss(&b, &a, 2.0).unwrap();
        assert!((l1 - 2.0 * 0.25 / 4.0).abs() < 1e-15);
        assert!((distill_loss(&c, &a, 2.0).unwrap() / l1 - 4.0).abs() < 1e-12);
        assert!(distill_loss(&a[..1], &a, 2.0).is_err());
    }

    #[test]
    fn distill_gradient_matches_finite_differences() {
        let shape = CompressorShape::new(5, 3, 2).unwrap();
        let cur = CompressorParams::init(shape, 1);
        let old = CompressorParams::init(shape, 2);
        let batch: Vec<Vector> = (0..4)
            .map(|i| Vector::from((0..5).map(|j| ((i * 5 + j) as f64 * 0.37).sin()).collect::<Vec<_>>()))
            .collect();
        let (_, g) = distill_loss_grad(&cur, &old, &batch, 2.0).unwrap();
        let numeric = finite_diff_grad(
            |v| {
                let q = CompressorParams::from_flat(shape, v.as_slice().to_vec()).unwrap();
                distill_loss_grad(&q, &old, &batch, 2.0).unwrap().0
            },
            &Vector::from(cur.as_flat().to_vec()),
            DEFAULT_STEP,
        )
        .unwrap();
        let cmp = compare_gradients(g.as_flat(), numeric.as_slice()).unwrap();
        assert!(cmp.within(1e-6), "{cmp:?}");
    }
}
