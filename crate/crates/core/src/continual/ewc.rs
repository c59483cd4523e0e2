//! Elastic weight consolidation with a globally normalised Fisher diagonal.

use crate::error::{Error, Result};
use crate::ndcore::{check_same_shape, Tensors, Vector};

use super::classifier::ModelParams;

/// Fisher diagonal and anchor parameters captured at the end of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherState<P: Tensors> {
    /// Raw diagonal, flat in tensor order.
    pub fisher_diag: Vec<f64>,
    /// `fisher_diag / mean(fisher_diag)`; mean exactly 1 up to rounding.
    pub normalized: Vec<f64>,
    pub theta_star: P,
    /// Layer id of every flat parameter.
    pub layer_index: Vec<usize>,
    /// Parameter count of every layer.
    pub layer_sizes: Vec<usize>,
}

/// Groups tensors into layers by the name prefix before the last `.`, so a
/// weight and its bias form one layer.
pub fn layer_groups<P: Tensors>(params: &P) -> (Vec<usize>, Vec<usize>) {
    let mut prefixes: Vec<String> = Vec::new();
    let mut index = Vec::with_capacity(params.num_params());
    let mut sizes: Vec<usize> = Vec::new();
    for (name, t) in params.tensor_names().iter().zip(params.tensors()) {
        let prefix = name.rsplit_once('.').map_or(name.as_str(), |(p, _)| p).to_string();
        let id = match prefixes.iter().position(|p| *p == prefix) {
            Some(id) => id,
            None => {
                prefixes.push(prefix);
                sizes.push(0);
                prefixes.len() - 1
            }
        };
        sizes[id] += t.len();
        index.extend(std::iter::repeat_n(id, t.len()));
    }
    (index, sizes)
}

impl<P: Tensors> FisherState<P> {
    /// Normalises a raw diagonal and snapshots `theta_star`.
    pub fn from_diag(theta_star: P, fisher_diag: Vec<f64>) -> Result<Self> {
        if fisher_diag.len() != theta_star.num_params() {
            return Err(Error::DimMismatch {
                op: "FisherState::from_diag",
                expected: theta_star.num_params(),
                got: fisher_diag.len(),
            });
        }
        if fisher_diag.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::InvalidArgument(
                "fisher entries must be finite and non-negative".into(),
            ));
        }
        let mean = fisher_diag.iter().sum::<f64>() / fisher_diag.len() as f64;
        if mean <= 0.0 {
            return Err(Error::ZeroFisher);
        }
        let normalized = fisher_diag.iter().map(|f| f / mean).collect();
        let (layer_index, layer_sizes) = layer_groups(&theta_star);
        Ok(Self {
            fisher_diag,
            normalized,
            theta_star,
            layer_index,
            layer_sizes,
        })
    }
}

/// `λ Σ_l (1/|θ_l|) Σ_{i∈l} F̂_i (θ_i − θ*_i)²`.
pub fn ewc_penalty<P: Tensors>(params: &P, fs: &FisherState<P>, lambda: f64) -> Result<f64> {
    Ok(ewc_penalty_grad(params, fs, lambda)?.0)
}

pub fn ewc_penalty_grad<P: Tensors>(params: &P, fs: &FisherState<P>, lambda: f64) -> Result<(f64, P)> {
    check_same_shape("ewc_penalty", params, &fs.theta_star)?;
    let theta = params.flatten();
    let star = fs.theta_star.flatten();
    let mut g = vec![0.0; theta.len()];
    let mut penalty = 0.0;
    for i in 0..theta.len() {
        let size = fs.layer_sizes[fs.layer_index[i]] as f64;
        let diff = theta[i] - star[i];
        penalty += fs.normalized[i] * diff * diff / size;
        g[i] = lambda * 2.0 * fs.normalized[i] * diff / size;
    }
    let mut grad = params.zeros_like();
    grad.load_flat(&g)?;
    Ok((lambda * penalty, grad))
}

/// Empirical Fisher: mean over the batch of the squared gradient of
/// `log p(label | f)` under the full pipeline, then globally normalised.
pub fn estimate_fisher(model: &ModelParams, batch: &[Vector], labels: &[u32]) -> Result<FisherState<ModelParams>> {
    if batch.is_empty() {
        return Err(Error::Empty { op: "estimate_fisher" });
    }
    if batch.len() != labels.len() {
        return Err(Error::DimMismatch {
            op: "estimate_fisher",
            expected: batch.len(),
            got: labels.len(),
        });
    }
    let mut diag = vec![0.0; model.num_params()];
    for (f, y) in batch.iter().zip(labels) {
        let mut g = model.zeros_like();
        model.pipeline_ce(f, *y, Some(&mut g), 1.0)?;
        for (d, v) in diag.iter_mut().zip(g.flatten()) {
            *d += v * v;
        }
    }
    let n = batch.len() as f64;
    diag.iter_mut().for_each(|d| *d /= n);
    FisherState::from_diag(model.clone(), diag)
}
