use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::compressor::{maml_adapt, recon_hvp, CompressorParams, CompressorShape, MamlConfig};
use crate::continual::{
    distill_loss_grad, ewc_penalty, ewc_penalty_grad, materialize, replay_loss_grad, FisherState, ModelParams,
    ReplayClassifier, REPLAY_MSE_WEIGHT,
};
use crate::error::{Error, Result};
use crate::memory::FeatureRecord;
use crate::ndcore::{add_scaled, compare_gradients, finite_diff_grad, Tensors, Vector, DEFAULT_STEP};

/// Tolerance for first-order gradients.
pub const STRICT_TOL: f64 = 1e-4;
/// Tolerance for the second-order meta-gradient.
pub const META_TOL: f64 = 1e-3;

/// Deliberate backward-pass bugs for exercising the harness itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Reconstruction residual taken with the wrong sign.
    ReconSign,
    /// EWC pull pointing away from the anchor.
    EwcSign,
    /// Hessian correction added instead of subtracted in the pullback.
    MetaSign,
}

impl Fault {
    pub const ALL: [Fault; 3] = [Fault::ReconSign, Fault::EwcSign, Fault::MetaSign];

    pub fn name(self) -> &'static str {
        match self {
            Fault::ReconSign => "recon-sign",
            Fault::EwcSign => "ewc-sign",
            Fault::MetaSign => "meta-sign",
        }
    }
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Fault::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "fault",
                name: s.to_string(),
                known: Fault::ALL.map(Fault::name).join(", "),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub params: usize,
    pub worst_rel_err: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst_rel_err <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<18} {:>7} {:>12} {:>9}  status\n",
            "check", "params", "worst_rel", "tol"
        );
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<18} {:>7} {:>12.3e} {:>9.0e}  {}",
                c.name,
                c.params,
                c.worst_rel_err,
                c.tolerance,
                if c.passed() { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

fn gaussian_batch(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    (0..n)
        .map(|_| {
            Vector::from(
                (0..dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect::<Vec<_>>(),
            )
        })
        .collect()
}

/// Central differences straddling a ReLU kink measure neither one-sided
/// derivative, so batches are redrawn until every rectified unit sits at
/// least this far from zero.
const KINK_MARGIN: f64 = 1e-3;

fn smooth_batch(params: &CompressorParams, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vector>> {
    for _ in 0..100 {
        let batch = gaussian_batch(n, params.input_dim(), rng);
        if params.relu_margin(&batch).is_none_or(|m| m >= KINK_MARGIN) {
            return Ok(batch);
        }
    }
    Err(Error::InvalidArgument(
        "no batch clear of ReLU kinks in 100 draws".into(),
    ))
}

fn perturbed<P: Tensors + Clone>(p: &P, scale: f64, rng: &mut ChaCha8Rng) -> P {
    let mut q = p.clone();
    let flat: Vec<f64> = p
        .flatten()
        .iter()
        .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    q.load_flat(&flat).expect("same length");
    q
}

/// Compares `analytic` against central differences of `loss` around `at`.
fn compare<P, F>(name: &'static str, tolerance: f64, at: &P, analytic: &P, loss: F) -> Result<CheckResult>
where
    P: Tensors + Clone,
    F: Fn(&P) -> Result<f64>,
{
    let mut failure = None;
    let numeric = finite_diff_grad(
        |v| {
            let mut q = at.clone();
            q.load_flat(v.as_slice()).expect("same length");
            loss(&q).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &Vector::from(at.flatten()),
        DEFAULT_STEP,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let cmp = compare_gradients(&analytic.flatten(), numeric?.as_slice())?;
    Ok(CheckResult {
        name,
        params: at.num_params(),
        worst_rel_err: cmp.worst_rel_err,
        worst_index: cmp.worst_index,
        tolerance,
    })
}

fn negate<P: Tensors>(p: &mut P) {
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = -*v);
    }
}

fn recon_check(name: &'static str, depth: usize, fault: Option<Fault>, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let shape = CompressorShape::new(64, 10, depth)?;
    let params = CompressorParams::init(shape, rng.random());
    let batch = smooth_batch(&params, 8, rng)?;
    let (_, mut grad) = params.recon_loss_grad(&batch)?;
    if fault == Some(Fault::ReconSign) {
        negate(&mut grad);
    }
    compare(name, STRICT_TOL, &params, &grad, |p| p.recon_loss(&batch))
}

fn small_model(rng: &mut ChaCha8Rng) -> Result<ModelParams> {
    let shape = CompressorShape::new(12, 4, 1)?;
    let mut clf = ReplayClassifier::new(4);
    clf.expand(&[0, 1, 2], rng);
    ModelParams::new(CompressorParams::init(shape, rng.random()), clf)
}

fn ewc_check(fault: Option<Fault>, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let anchor = small_model(rng)?;
    let diag: Vec<f64> = (0..anchor.num_params()).map(|_| rng.random_range(0.0..2.0)).collect();
    let fs = FisherState::from_diag(anchor.clone(), diag)?;
    let at = perturbed(&anchor, 0.3, rng);
    let lambda = 50.0;
    let (_, mut grad) = ewc_penalty_grad(&at, &fs, lambda)?;
    if fault == Some(Fault::EwcSign) {
        negate(&mut grad);
    }
    compare("ewc_penalty", STRICT_TOL, &at, &grad, |p| ewc_penalty(p, &fs, lambda))
}

fn replay_check(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let model = small_model(rng)?;
    let records: Vec<FeatureRecord> = (0..6u32)
        .map(|i| {
            let code = (0..4).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            FeatureRecord::new(code, i % 3, 0, 0.5, 0.5)
        })
        .collect();
    let (_, grad) = replay_loss_grad(&records, &model)?;
    // Rebuilt features are constants of the loss, so the oracle fixes them too.
    let feats = materialize(&records, &model.compressor)?;
    compare("replay_loss", STRICT_TOL, &model, &grad, |m| {
        let mut ce = 0.0;
        for (f, r) in feats.iter().zip(&records) {
            ce += m.pipeline_ce(f, r.class_id, None, 1.0)?;
        }
        Ok(ce / records.len() as f64 + REPLAY_MSE_WEIGHT * m.compressor.recon_loss(&feats)?)
    })
}

fn distill_check(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let shape = CompressorShape::new(16, 5, 2)?;
    let frozen = CompressorParams::init(shape, rng.random());
    let current = perturbed(&frozen, 0.05, rng);
    let batch = smooth_batch(&current, 6, rng)?;
    let (_, grad) = distill_loss_grad(&current, &frozen, &batch, 2.0)?;
    compare("distill", STRICT_TOL, &current, &grad, |c| {
        Ok(distill_loss_grad(c, &frozen, &batch, 2.0)?.0)
    })
}

fn hvp_check(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let shape = CompressorShape::new(8, 3, 1)?;
    let params = CompressorParams::init(shape, rng.random());
    let batch = gaussian_batch(6, 8, rng);
    let v = perturbed(&params.zeros_like(), 1.0, rng);
    let hv = recon_hvp(&params, &batch, &v)?;
    // The directional derivative of <grad, v> is <Hv, v>, so checking the
    // gradient of that scalar checks every coordinate of Hv.
    compare("recon_hvp", STRICT_TOL, &params, &hv, |p| {
        let (_, g) = p.recon_loss_grad(&batch)?;
        crate::ndcore::dot(&g, &v)
    })
}

fn meta_check(fault: Option<Fault>, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let shape = CompressorShape::new(8, 3, 1)?;
    let meta = CompressorParams::init(shape, rng.random());
    let support = gaussian_batch(6, 8, rng);
    let query: Vec<Vector> = gaussian_batch(6, 8, rng)
        .iter()
        .map(|v| v.add(&Vector::filled(8, 0.5)).unwrap())
        .collect();
    let cfg = MamlConfig {
        inner_steps: 3,
        inner_lr: 0.05,
        second_order: true,
        ..MamlConfig::default()
    };
    let adaptation = maml_adapt(&meta, &support, &cfg)?;
    let (_, mut g) = adaptation.adapted.recon_loss_grad(&query)?;
    let sign = if fault == Some(Fault::MetaSign) { 1.0 } else { -1.0 };
    for phi in adaptation.trajectory.iter().rev() {
        let hg = recon_hvp(phi, &support, &g)?;
        add_scaled(&mut g, &hg, sign * cfg.inner_lr)?;
    }
    compare("meta_gradient", META_TOL, &meta, &g, |m| {
        maml_adapt(m, &support, &cfg)?.adapted.recon_loss(&query)
    })
}

/// Runs every gradient oracle on seeded random instances.
pub fn run_gradcheck(seed: u64, fault: Option<Fault>) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        recon_check("recon_grad", 1, fault, &mut rng)?,
        recon_check("recon_grad_depth2", 2, fault, &mut rng)?,
        hvp_check(&mut rng)?,
        meta_check(fault, &mut rng)?,
        ewc_check(fault, &mut rng)?,
        replay_check(&mut rng)?,
        distill_check(&mut rng)?,
    ];
    Ok(GradcheckReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let r = run_gradcheck(0, None).unwrap();
        assert!(r.all_passed(), "{}", r.to_text());
        assert!(r.get("recon_grad").is_some() && r.get("meta_gradient").is_some());
        assert!(r.get("meta_gradient").unwrap().params <= 200);
    }

    #[test]
    fn each_fault_is_caught_by_its_check() {
        for (fault, name) in [
            (Fault::ReconSign, "recon_grad"),
            (Fault::EwcSign, "ewc_penalty"),
            (Fault::MetaSign, "meta_gradient"),
        ] {
            let r = run_gradcheck(0, Some(fault)).unwrap();
            let failed: Vec<_> = r.failures().iter().map(|c| c.name).collect();
            assert!(failed.contains(&name), "{fault:?}: {}", r.to_text());
        }
    }

    #[test]
    fn smooth_batches_clear_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = CompressorParams::init(CompressorShape::new(64, 10, 2).unwrap(), 5);
        for _ in 0..5 {
            let b = smooth_batch(&params, 8, &mut rng).unwrap();
            assert!(params.relu_margin(&b).unwrap() >= KINK_MARGIN);
        }
        let linear = CompressorParams::init(CompressorShape::new(8, 3, 1).unwrap(), 5);
        assert_eq!(linear.relu_margin(&gaussian_batch(2, 8, &mut rng)), None);
    }

    #[test]
    fn fault_names_round_trip() {
        for f in Fault::ALL {
            assert_eq!(f.name().parse::<Fault>().unwrap(), f);
        }
        assert!("nope".parse::<Fault>().is_err());
    }
}
