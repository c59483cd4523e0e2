//! Inner-loop adaptation and second-order meta-gradients.
//!
//! Adaptation runs `K` plain gradient steps on the support reconstruction
//! loss. The meta-gradient of an outer loss evaluated at the adapted
//! parameters is pulled back through those steps with
//! `g ← (I − α H_k) g`, where each `H_k g` is an exact Hessian-vector product
//! obtained by running the backward pass on dual numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndcore::{add_scaled, sgd_step, Dual, Tensors, Vector};

use super::config::{CompressorShape, MamlConfig};
use super::kernel::recon_loss_and_grad;
use super::params::CompressorParams;

/// Sizes of the support and query parts of a batch of `n` items for support
/// ratio `rho`; both sides get at least one item.
pub fn split_sizes(n: usize, rho: f64) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "support/query split needs at least 2 items, got {n}"
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must be in (0, 1), got {rho}"
        )));
    }
    let support = ((rho * n as f64).round() as usize).clamp(1, n - 1);
    Ok((support, n - support))
}

pub const DEFAULT_SPLIT_RATIO: f64 = 0.3;

/// Disjoint support and query feature batches.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportQuerySplit {
    pub support: Vec<Vector>,
    pub query: Vec<Vector>,
}

impl SupportQuerySplit {
    pub fn new(support: Vec<Vector>, query: Vec<Vector>) -> Result<Self> {
        if support.is_empty() || query.is_empty() {
            return Err(Error::Empty {
                op: "SupportQuerySplit",
            });
        }
        Ok(Self { support, query })
    }

    /// Leading `≈ rho·n` items become the support set, the rest the query set.
    pub fn split(batch: &[Vector], rho: f64) -> Result<Self> {
        let (s, _) = split_sizes(batch.len(), rho)?;
        Self::new(batch[..s].to_vec(), batch[s..].to_vec())
    }
}

/// Result of an inner loop.
#[derive(Debug, Clone)]
pub struct Adaptation {
    /// Parameters after the last inner step.
    pub adapted: CompressorParams,
    /// Inner iterates before each step (`φ'_0 .. φ'_{K-1}`); empty unless the
    /// configuration asks for second-order gradients.
    pub trajectory: Vec<CompressorParams>,
    /// Support loss before each step.
    pub support_losses: Vec<f64>,
}

/// Adapts `meta` to `support` with `cfg.inner_steps` gradient steps at `cfg.inner_lr`.
pub fn maml_adapt(meta: &CompressorParams, support: &[Vector], cfg: &MamlConfig) -> Result<Adaptation> {
    meta.check_batch("maml_adapt", support)?;
    let mut current = meta.clone();
    let mut trajectory = Vec::new();
    let mut support_losses = Vec::with_capacity(cfg.inner_steps);
    for step in 0..cfg.inner_steps {
        let (loss, grad) = current.recon_loss_grad(support)?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::InnerLoopDiverged { step });
        }
        support_losses.push(loss);
        let next = sgd_step(&current, &grad, cfg.inner_lr)?;
        if cfg.second_order {
            trajectory.push(current);
        }
        current = next;
    }
    if !current.is_finite() {
        return Err(Error::InnerLoopDiverged { step: cfg.inner_steps });
    }
    Ok(Adaptation {
        adapted: current,
        trajectory,
        support_losses,
    })
}

/// Exact Hessian-vector product of the reconstruction loss on `batch` at `params`.
pub fn recon_hvp(params: &CompressorParams, batch: &[Vector], v: &CompressorParams) -> Result<CompressorParams> {
    params.check_batch("recon_hvp", batch)?;
    crate::ndcore::check_same_shape("recon_hvp", params, v)?;
    let shape: &CompressorShape = params.shape();
    let theta: Vec<Dual> = params
        .as_flat()
        .iter()
        .zip(v.as_flat())
        .map(|(p, t)| Dual::new(*p, *t))
        .collect();
    let mut grad = vec![Dual::default(); theta.len()];
    recon_loss_and_grad(shape, &theta, batch, Some(&mut grad));
    CompressorParams::from_flat(*shape, grad.iter().map(|g| g.eps).collect())
}

/// Pulls an outer gradient taken at `adaptation.adapted` back to the meta
/// parameters. Without second-order terms the outer gradient is returned as is.
pub fn pullback(
    adaptation: &Adaptation,
    support: &[Vector],
    outer_grad: &CompressorParams,
    cfg: &MamlConfig,
) -> Result<CompressorParams> {
    let mut g = outer_grad.clone();
    if !cfg.second_order {
        return Ok(g);
    }
    for phi_k in adaptation.trajectory.iter().rev() {
        let hg = recon_hvp(phi_k, support, &g)?;
        add_scaled(&mut g, &hg, -cfg.inner_lr)?;
    }
    Ok(g)
}

/// Gradient of the adapted query reconstruction loss w.r.t. the meta
/// parameters. Returns `(query loss at the adapted parameters, gradient)`.
pub fn meta_gradient(
    meta: &CompressorParams,
    split: &SupportQuerySplit,
    cfg: &MamlConfig,
) -> Result<(f64, CompressorParams)> {
    if cfg.inner_steps == 0 {
        return Err(Error::InvalidArgument(
            "meta_gradient needs at least one inner step".into(),
        ));
    }
    let adaptation = maml_adapt(meta, &split.support, cfg)?;
    let (loss, outer) = adaptation.adapted.recon_loss_grad(&split.query)?;
    let grad = pullback(&adaptation, &split.support, &outer, cfg)?;
    Ok((loss, grad))
}

/// Source of support/query episodes for meta-training.
pub trait TaskSampler {
    fn input_dim(&self) -> usize;
    fn sample(&mut self, rng: &mut ChaCha8Rng) -> Result<SupportQuerySplit>;
}

#[derive(Debug, Clone)]
pub struct MetaTrainRun {
    pub params: CompressorParams,
    /// Adapted query loss of every outer iteration.
    pub query_losses: Vec<f64>,
}

/// Loss above which meta-training is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Outer loop: `iters` SGD steps at `cfg.meta_lr` on [`meta_gradient`].
/// Parameters are initialised from `seed`; episodes are drawn from a stream
/// seeded independently of the initialisation.
pub fn meta_train(
    shape: CompressorShape,
    cfg: &MamlConfig,
    sampler: &mut dyn TaskSampler,
    iters: usize,
    seed: u64,
) -> Result<MetaTrainRun> {
    if iters == 0 {
        return Err(Error::InvalidArgument("meta_train needs at least one iteration".into()));
    }
    if sampler.input_dim() != shape.input_dim {
        return Err(Error::DimMismatch {
            op: "meta_train",
            expected: shape.input_dim,
            got: sampler.input_dim(),
        });
    }
    cfg.validate()?;
    let mut params = CompressorParams::init(shape, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut query_losses = Vec::with_capacity(iters);
    for iteration in 0..iters {
        let split = sampler.sample(&mut rng)?;
        let (loss, grad) = meta_gradient(&params, &split, cfg).map_err(|e| match e {
            Error::InnerLoopDiverged { .. } => Error::MetaDiverged {
                iteration,
                loss: f64::INFINITY,
            },
            other => other,
        })?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::MetaDiverged { iteration, loss });
        }
        query_losses.push(loss);
        params = sgd_step(&params, &grad, cfg.meta_lr)?;
    }
    Ok(MetaTrainRun { params, query_losses })
}

/// Largest inner rate among `candidates` for which `K` steps lower the support
/// loss on this instance, if any.
pub fn stable_inner_lr(
    meta: &CompressorParams,
    support: &[Vector],
    inner_steps: usize,
    candidates: &[f64],
) -> Result<Option<f64>> {
    let before = meta.recon_loss(support)?;
    let mut best: Option<f64> = None;
    for &lr in candidates {
        let cfg = MamlConfig {
            inner_steps,
            inner_lr: lr,
            second_order: false,
            ..MamlConfig::default()
        };
        let after = match maml_adapt(meta, support, &cfg) {
            Ok(a) => a.adapted.recon_loss(support)?,
            Err(Error::InnerLoopDiverged { .. }) => continue,
            Err(e) => return Err(e),
        };
        if after < before && best.is_none_or(|b| lr > b) {
            best = Some(lr);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::{compare_gradients, finite_diff_grad, l2_norm, Tensors};
    use rand::Rng;

    fn small_shape() -> CompressorShape {
        CompressorShape::new(6, 2, 1).unwrap()
    }

    fn batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64) -> Vec<Vector> {
        (0..n)
            .map(|_| {
                Vector::from(
                    (0..dim)
                        .map(|_| shift + rng.random_range(-1.0..1.0))
                        .collect::<Vec<_>>(),
                )
            })
            .collect()
    }

    fn adapted_query_loss(flat: &Vector, shape: CompressorShape, split: &SupportQuerySplit, cfg: &MamlConfig) -> f64 {
        let meta = CompressorParams::from_flat(shape, flat.as_slice().to_vec()).unwrap();
        let a = maml_adapt(&meta, &split.support, cfg).unwrap();
        a.adapted.recon_loss(&split.query).unwrap()
    }

    #[test]
    fn split_sizes_round_and_clamp() {
        assert_eq!(split_sizes(10, 0.3).unwrap(), (3, 7));
        assert_eq!(split_sizes(24, 0.3).unwrap(), (7, 17));
        assert_eq!(split_sizes(2, 0.3).unwrap(), (1, 1));
        assert_eq!(split_sizes(3, 0.01).unwrap(), (1, 2));
        assert_eq!(split_sizes(3, 0.99).unwrap(), (2, 1));
        assert!(split_sizes(1, 0.3).is_err());
        assert!(split_sizes(10, 1.0).is_err());
    }

    #[test]
    fn zero_steps_or_zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let meta = CompressorParams::init(small_shape(), 2);
        let support = batch(&mut rng, 4, 6, 0.0);
        for cfg in [
            MamlConfig {
                inner_steps: 0,
                ..Default::default()
            },
            MamlConfig {
                inner_lr: 0.0,
                ..Default::default()
            },
        ] {
            assert_eq!(maml_adapt(&meta, &support, &cfg).unwrap().adapted, meta);
        }
    }

    #[test]
    fn adapt_does_not_mutate_meta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let meta = CompressorParams::init(small_shape(), 4);
        let before = meta.clone();
        let support = batch(&mut rng, 5, 6, 0.5);
        let a = maml_adapt(&meta, &support, &MamlConfig::default()).unwrap();
        assert_eq!(meta, before);
        assert_ne!(a.adapted, meta);
        assert_eq!(a.trajectory.len(), 5);
        assert_eq!(a.trajectory[0], meta);
    }

    #[test]
    fn hvp_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for depth in [1, 2] {
            let shape = CompressorShape::new(6, 2, depth).unwrap();
            let p = CompressorParams::init(shape, 6);
            let data = batch(&mut rng, 4, 6, 0.2);
            let v_flat: Vec<f64> = (0..shape.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v = CompressorParams::from_flat(shape, v_flat).unwrap();
            let hv = recon_hvp(&p, &data, &v).unwrap();
            let h = 1e-5;
            let plus = crate::ndcore::axpy(&p, &v, h)
                .unwrap()
                .recon_loss_grad(&data)
                .unwrap()
                .1;
            let minus = crate::ndcore::axpy(&p, &v, -h)
                .unwrap()
                .recon_loss_grad(&data)
                .unwrap()
                .1;
            let numeric: Vec<f64> = plus
                .as_flat()
                .iter()
                .zip(minus.as_flat())
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            let cmp = compare_gradients(hv.as_flat(), &numeric).unwrap();
            assert!(cmp.within(1e-5), "depth {depth}: {cmp:?}");
        }
    }

    #[test]
    fn second_order_meta_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = small_shape();
        assert!(shape.num_params() <= 200);
        let meta = CompressorParams::init(shape, 9);
        let split = SupportQuerySplit::new(batch(&mut rng, 4, 6, 0.3), batch(&mut rng, 6, 6, 0.3)).unwrap();
        let cfg = MamlConfig {
            inner_steps: 2,
            inner_lr: 0.2,
            ..Default::default()
        };
        let (_, g) = meta_gradient(&meta, &split, &cfg).unwrap();
        let numeric = finite_diff_grad(
            |p| adapted_query_loss(p, shape, &split, &cfg),
            &Vector::from(meta.flatten()),
            1e-4,
        )
        .unwrap();
        let cmp = compare_gradients(g.as_flat(), numeric.as_slice()).unwrap();
        assert!(cmp.within(1e-3), "{cmp:?}");
    }

    #[test]
    fn zero_inner_rate_meta_gradient_is_query_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let meta = CompressorParams::init(small_shape(), 11);
        let split = SupportQuerySplit::new(batch(&mut rng, 3, 6, 0.0), batch(&mut rng, 3, 6, 0.0)).unwrap();
        let cfg = MamlConfig {
            inner_steps: 4,
            inner_lr: 0.0,
            ..Default::default()
        };
        let (_, g) = meta_gradient(&meta, &split, &cfg).unwrap();
        assert_eq!(g, meta.recon_loss_grad(&split.query).unwrap().1);
    }

    #[test]
    fn first_order_gap_grows_with_inner_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let meta = CompressorParams::init(small_shape(), 13);
        let split = SupportQuerySplit::new(batch(&mut rng, 5, 6, 0.5), batch(&mut rng, 5, 6, 0.5)).unwrap();
        let mut gaps = Vec::new();
        for lr in [0.001, 0.003, 0.01, 0.03] {
            let so = MamlConfig {
                inner_steps: 3,
                inner_lr: lr,
                second_order: true,
                ..Default::default()
            };
            let fo = MamlConfig {
                second_order: false,
                ..so
            };
            let (_, g2) = meta_gradient(&meta, &split, &so).unwrap();
            let (_, g1) = meta_gradient(&meta, &split, &fo).unwrap();
            gaps.push(l2_norm(&crate::ndcore::axpy(&g2, &g1, -1.0).unwrap()));
        }
        assert!(gaps[0] > 0.0);
        assert!(gaps.windows(2).all(|w| w[1] > w[0]), "{gaps:?}");
    }

    #[test]
    fn adaptation_lowers_support_loss_at_stable_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let shape = CompressorShape::new(64, 10, 1).unwrap();
        let meta = CompressorParams::init(shape, 15);
        let support = batch(&mut rng, 8, 64, 1.0);
        let lr = stable_inner_lr(&meta, &support, 5, &[0.1, 0.01, 0.001])
            .unwrap()
            .expect("some stable rate");
        let cfg = MamlConfig {
            inner_lr: lr,
            ..Default::default()
        };
        let a = maml_adapt(&meta, &support, &cfg).unwrap();
        assert!(a.adapted.recon_loss(&support).unwrap() <= meta.recon_loss(&support).unwrap());
    }

    #[test]
    fn diverging_inner_loop_reports_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let meta = CompressorParams::init(small_shape(), 17);
        let support = batch(&mut rng, 4, 6, 50.0);
        let cfg = MamlConfig {
            inner_steps: 50,
            inner_lr: 10.0,
            ..Default::default()
        };
        match maml_adapt(&meta, &support, &cfg) {
            Err(Error::InnerLoopDiverged { step }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn meta_gradient_rejects_zero_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let meta = CompressorParams::init(small_shape(), 1);
        let split = SupportQuerySplit::new(batch(&mut rng, 2, 6, 0.0), batch(&mut rng, 2, 6, 0.0)).unwrap();
        let cfg = MamlConfig {
            inner_steps: 0,
            ..Default::default()
        };
        assert!(meta_gradient(&meta, &split, &cfg).is_err());
    }

    struct FixedClusters {
        centers: Vec<Vector>,
    }

    impl TaskSampler for FixedClusters {
        fn input_dim(&self) -> usize {
            6
        }
        fn sample(&mut self, rng: &mut ChaCha8Rng) -> Result<SupportQuerySplit> {
            let draw = |rng: &mut ChaCha8Rng| {
                let c = &self.centers[rng.random_range(0..self.centers.len())];
                Vector::from(
                    c.iter()
                        .map(|v| v + 0.1 * rng.random_range(-1.0..1.0))
                        .collect::<Vec<_>>(),
                )
            };
            let items: Vec<Vector> = (0..10).map(|_| draw(rng)).collect();
            SupportQuerySplit::split(&items, DEFAULT_SPLIT_RATIO)
        }
    }

    #[test]
    fn meta_train_zero_rate_returns_init_and_is_deterministic() {
        let mut s = FixedClusters {
            centers: vec![Vector::filled(6, 1.0), Vector::filled(6, -1.0)],
        };
        let cfg = MamlConfig {
            meta_lr: 0.0,
            ..Default::default()
        };
        let run = meta_train(small_shape(), &cfg, &mut s, 5, 3).unwrap();
        assert_eq!(run.params, CompressorParams::init(small_shape(), 3));
        let cfg = MamlConfig {
            meta_lr: 0.05,
            ..Default::default()
        };
        let a = meta_train(small_shape(), &cfg, &mut s, 20, 3).unwrap();
        let b = meta_train(small_shape(), &cfg, &mut s, 20, 3).unwrap();
        assert_eq!(a.params.flatten(), b.params.flatten());
        assert!(meta_train(small_shape(), &cfg, &mut s, 0, 3).is_err());
    }

    #[test]
    fn meta_train_divergence_is_reported() {
        let mut s = FixedClusters {
            centers: vec![Vector::filled(6, 30.0)],
        };
        let cfg = MamlConfig {
            meta_lr: 50.0,
            inner_steps: 1,
            ..Default::default()
        };
        assert!(matches!(
            meta_train(small_shape(), &cfg, &mut s, 200, 1),
            Err(Error::MetaDiverged { .. })
        ));
    }
}
