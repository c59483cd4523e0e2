//! Continual-learning methods, selectable by name.

use crate::registry::Registry;

/// Which parts of the training objective a method switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    /// Inner-loop adaptation of the compressor before the outer loss.
    pub adapt: bool,
    pub replay: bool,
    pub ewc: bool,
    pub distill: bool,
}

pub trait Method: Send + Sync {
    fn name(&self) -> &'static str;
    fn terms(&self) -> Terms;

    /// Whether task features are written to the memory bank.
    fn stores_features(&self) -> bool {
        self.terms().replay
    }
}

/// Full method: adaptation, replay, EWC and distillation.
pub struct Ahc;

impl Method for Ahc {
    fn name(&self) -> &'static str {
        "ahc"
    }
    fn terms(&self) -> Terms {
        Terms {
            adapt: true,
            replay: true,
            ewc: true,
            distill: true,
        }
    }
}

/// Everything but adaptation (`K = 0`).
pub struct AhcFixed;

impl Method for AhcFixed {
    fn name(&self) -> &'static str {
        "ahc-fixed"
    }
    fn terms(&self) -> Terms {
        Terms {
            adapt: false,
            ..Ahc.terms()
        }
    }
}

pub struct Finetune;

impl Method for Finetune {
    fn name(&self) -> &'static str {
        "finetune"
    }
    fn terms(&self) -> Terms {
        Terms {
            adapt: false,
            replay: false,
            ewc: false,
            distill: false,
        }
    }
}

pub struct EwcOnly;

impl Method for EwcOnly {
    fn name(&self) -> &'static str {
        "ewc"
    }
    fn terms(&self) -> Terms {
        Terms {
            ewc: true,
            ..Finetune.terms()
        }
    }
}

pub struct ReplayOnly;

impl Method for ReplayOnly {
    fn name(&self) -> &'static str {
        "replay"
    }
    fn terms(&self) -> Terms {
        Terms {
            replay: true,
            ..Finetune.terms()
        }
    }
}

pub fn methods() -> Registry<dyn Method> {
    let mut r: Registry<dyn Method> = Registry::new("method");
    r.register("ahc", || Box::new(Ahc));
    r.register("ahc-fixed", || Box::new(AhcFixed));
    r.register("finetune", || Box::new(Finetune));
    r.register("ewc", || Box::new(EwcOnly));
    r.register("replay", || Box::new(ReplayOnly));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registered_names_match_methods() {
        let r = methods();
        for name in r.names() {
            assert_eq!(r.create(name).unwrap().name(), name);
        }
        assert!(r.create("icarl").is_err());
    }

    #[test]
    fn fixed_differs_from_full_only_in_adaptation() {
        let (a, f) = (Ahc.terms(), AhcFixed.terms());
        assert!(a.adapt && !f.adapt);
        assert_eq!(Terms { adapt: true, ..f }, a);
    }
}
