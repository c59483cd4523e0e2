//! Linear replay classifier on codes, and the joint compressor + classifier
//! parameter collection the training loop updates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::compressor::CompressorParams;
use crate::error::{Error, Result};
use crate::ndcore::{check_len, Tensors, Vector};

/// `logits = W z + b` with one row per class seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayClassifier {
    code_dim: usize,
    classes: Vec<u32>,
    /// Row-major `C × d`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl ReplayClassifier {
    pub fn new(code_dim: usize) -> Self {
        Self {
            code_dim,
            classes: Vec::new(),
            weight: Vec::new(),
            bias: Vec::new(),
        }
    }

    /// Builds a classifier from explicit rows.
    pub fn from_parts(code_dim: usize, classes: Vec<u32>, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        check_len("ReplayClassifier::from_parts", classes.len() * code_dim, weight.len())?;
        check_len("ReplayClassifier::from_parts", classes.len(), bias.len())?;
        let mut sorted = classes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != classes.len() {
            return Err(Error::InvalidArgument("duplicate class ids".into()));
        }
        Ok(Self {
            code_dim,
            classes,
            weight,
            bias,
        })
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn row_of(&self, class_id: u32) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| *c == class_id)
            .ok_or(Error::UnknownClass(class_id))
    }

    /// Appends a row for every class not yet present. New weights are uniform
    /// in `±1/√d`, new biases zero. Returns the number of rows added.
    pub fn expand(&mut self, classes: &[u32], rng: &mut ChaCha8Rng) -> usize {
        let limit = 1.0 / (self.code_dim as f64).sqrt();
        let mut added = 0;
        for &c in classes {
            if self.classes.contains(&c) {
                continue;
            }
            self.classes.push(c);
            self.weight
                .extend((0..self.code_dim).map(|_| rng.random_range(-limit..limit)));
            self.bias.push(0.0);
            added += 1;
        }
        added
    }

    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        let d = self.code_dim;
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| {
                b + self.weight[c * d..(c + 1) * d]
                    .iter()
                    .zip(z)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, z: &[f64]) -> Vec<f64> {
        softmax(&self.logits(z))
    }

    /// Class id with the largest logit (first on ties).
    pub fn predict(&self, z: &[f64]) -> Option<u32> {
        let logits = self.logits(z);
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in logits.iter().enumerate() {
            if best.is_none_or(|(_, b)| *v > b) {
                best = Some((i, *v));
            }
        }
        best.map(|(i, _)| self.classes[i])
    }

    /// Cross-entropy of `class_id` at code `z`. With `grads`, adds `scale`
    /// times the gradient w.r.t. this classifier into `grads.0` and w.r.t. the
    /// code into `grads.1`.
    pub fn cross_entropy(
        &self,
        z: &[f64],
        class_id: u32,
        grads: Option<(&mut ReplayClassifier, &mut [f64])>,
        scale: f64,
    ) -> Result<f64> {
        check_len("cross_entropy", self.code_dim, z.len())?;
        let row = self.row_of(class_id)?;
        let logits = self.logits(z);
        let lse = log_sum_exp(&logits);
        let loss = lse - logits[row];
        if let Some((g_clf, g_z)) = grads {
            let d = self.code_dim;
            for (c, l) in logits.iter().enumerate() {
                let delta = scale * ((l - lse).exp() - if c == row { 1.0 } else { 0.0 });
                g_clf.bias[c] += delta;
                for j in 0..d {
                    g_clf.weight[c * d + j] += delta * z[j];
                    g_z[j] += delta * self.weight[c * d + j];
                }
            }
        }
        Ok(loss)
    }

    /// The first `classes` rows only.
    pub fn truncated(&self, classes: usize) -> Result<Self> {
        if classes > self.classes.len() {
            return Err(Error::DimMismatch {
                op: "ReplayClassifier::truncated",
                expected: self.classes.len(),
                got: classes,
            });
        }
        Ok(Self {
            code_dim: self.code_dim,
            classes: self.classes[..classes].to_vec(),
            weight: self.weight[..classes * self.code_dim].to_vec(),
            bias: self.bias[..classes].to_vec(),
        })
    }

    /// Adds `other` (a truncated view of this classifier) into the leading rows.
    pub fn add_prefix(&mut self, other: &ReplayClassifier) -> Result<()> {
        if other.code_dim != self.code_dim || other.classes.len() > self.classes.len() {
            return Err(Error::DimMismatch {
                op: "ReplayClassifier::add_prefix",
                expected: self.classes.len(),
                got: other.classes.len(),
            });
        }
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        Ok(())
    }
}

impl Tensors for ReplayClassifier {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn tensor_names(&self) -> Vec<String> {
        vec!["clf.w".into(), "clf.b".into()]
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}

/// Everything the training loop updates: compressor then classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub compressor: CompressorParams,
    pub classifier: ReplayClassifier,
}

impl ModelParams {
    pub fn new(compressor: CompressorParams, classifier: ReplayClassifier) -> Result<Self> {
        check_len("ModelParams::new", compressor.code_dim(), classifier.code_dim())?;
        Ok(Self { compressor, classifier })
    }

    /// Same compressor, classifier restricted to its first `classes` rows.
    pub fn truncated(&self, classes: usize) -> Result<Self> {
        Ok(Self {
            compressor: self.compressor.clone(),
            classifier: self.classifier.truncated(classes)?,
        })
    }

    /// Cross-entropy of the full pipeline `f → encode → classifier`, with
    /// optional gradient accumulation scaled by `scale`.
    pub fn pipeline_ce(&self, f: &Vector, class_id: u32, grad: Option<&mut ModelParams>, scale: f64) -> Result<f64> {
        let z = self.compressor.encode(f)?;
        match grad {
            None => self.classifier.cross_entropy(z.as_slice(), class_id, None, scale),
            Some(g) => {
                let mut g_z = vec![0.0; z.len()];
                let loss = self.classifier.cross_entropy(
                    z.as_slice(),
                    class_id,
                    Some((&mut g.classifier, &mut g_z)),
                    scale,
                )?;
                self.compressor.encoder_vjp(f, &g_z, &mut g.compressor)?;
                Ok(loss)
            }
        }
    }

    pub fn predict(&self, f: &Vector) -> Result<Option<u32>> {
        let z = self.compressor.encode(f)?;
        Ok(self.classifier.predict(z.as_slice()))
    }
}

impl Tensors for ModelParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.compressor.tensors();
        t.extend(self.classifier.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.compressor.tensors_mut();
        t.extend(self.classifier.tensors_mut());
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut n = self.compressor.tensor_names();
        n.extend(self.classifier.tensor_names());
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::CompressorShape;
    use crate::ndcore::{compare_gradients, finite_diff_grad, DEFAULT_STEP};
    use rand::SeedableRng;

    fn model(seed: u64) -> ModelParams {
        let shape = CompressorShape::new(6, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clf = ReplayClassifier::new(3);
        clf.expand(&[4, 7, 9], &mut rng);
        for b in &mut clf.bias {
            *b = rng.random_range(-0.5..0.5);
        }
        ModelParams::new(CompressorParams::init(shape, seed), clf).unwrap()
    }

    #[test]
    fn expand_adds_only_new_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut clf = ReplayClassifier::new(4);
        assert_eq!(clf.expand(&[0, 1], &mut rng), 2);
        assert_eq!(clf.expand(&[1, 2], &mut rng), 1);
        assert_eq!(clf.classes(), &[0, 1, 2]);
        assert_eq!(clf.num_params(), 3 * 4 + 3);
        assert!(matches!(clf.row_of(5), Err(Error::UnknownClass(5))));
    }

    #[test]
    fn zero_classifier_gives_log_c() {
        let clf = ReplayClassifier::from_parts(2, vec![0, 1, 2, 3], vec![0.0; 8], vec![0.0; 4]).unwrap();
        let ce = clf.cross_entropy(&[0.3, -1.0], 2, None, 1.0).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_class_gives_zero() {
        let clf = ReplayClassifier::from_parts(1, vec![0, 1], vec![0.0, 0.0], vec![1000.0, 0.0]).unwrap();
        assert_eq!(clf.cross_entropy(&[0.0], 0, None, 1.0).unwrap(), 0.0);
        assert_eq!(clf.predict(&[0.0]), Some(0));
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pipeline_gradient_matches_finite_differences() {
        let m = model(3);
        let f = Vector::from(vec![0.5, -1.0, 0.2, 0.9, -0.3, 0.1]);
        let mut g = m.zeros_like();
        m.pipeline_ce(&f, 7, Some(&mut g), 1.0).unwrap();
        let p = Vector::from(m.flatten());
        let numeric = finite_diff_grad(
            |v| {
                let mut q = m.clone();
                q.load_flat(v.as_slice()).unwrap();
                q.pipeline_ce(&f, 7, None, 1.0).unwrap()
            },
            &p,
            DEFAULT_STEP,
        )
        .unwrap();
        let cmp = compare_gradients(&g.flatten(), numeric.as_slice()).unwrap();
        assert!(cmp.within(1e-6), "{cmp:?}");
    }

    #[test]
    fn truncate_and_add_prefix() {
        let m = model(1);
        let t = m.classifier.truncated(2).unwrap();
        assert_eq!(t.classes(), &[4, 7]);
        let mut z = m.classifier.zeros_like();
        z.add_prefix(&t).unwrap();
        assert_eq!(&z.weight()[..6], &m.classifier.weight()[..6]);
        assert!(z.weight()[6..].iter().all(|v| *v == 0.0));
        assert!(m.classifier.truncated(4).is_err());
    }
}
