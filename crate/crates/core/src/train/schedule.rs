use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use crate::registry::Registry;

pub trait LrSchedule: Send + Sync {
    fn name(&self) -> &'static str;
    /// Learning rate for 0-based `epoch` out of at most `max_epochs`.
    fn lr(&self, base: f64, epoch: usize, max_epochs: usize) -> f64;
}

pub struct Constant;

/// Half-cosine decay from `base` to `base / 10` over `max_epochs`.
pub struct Cosine;

impl LrSchedule for Constant {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn lr(&self, base: f64, _: usize, _: usize) -> f64 {
        base
    }
}

impl LrSchedule for Cosine {
    fn name(&self) -> &'static str {
        "cosine"
    }

    fn lr(&self, base: f64, epoch: usize, max_epochs: usize) -> f64 {
        let frac = (epoch as f64 / max_epochs.max(1) as f64).min(1.0);
        let floor = 0.1 * base;
        floor + 0.5 * (base - floor) * (1.0 + (PI * frac).cos())
    }
}

pub fn schedule_registry() -> &'static Registry<dyn LrSchedule> {
    static REGISTRY: OnceLock<Registry<dyn LrSchedule>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn LrSchedule> = Registry::new("lr schedule");
        r.register("constant", Arc::new(Constant));
        r.register("cosine", Arc::new(Cosine));
        r
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let c = schedule_registry().get("cosine").unwrap();
        assert!((c.lr(1.0, 0, 10) - 1.0).abs() < 1e-15);
        assert!((c.lr(1.0, 10, 10) - 0.1).abs() < 1e-15);
        assert_eq!(schedule_registry().get("constant").unwrap().lr(0.3, 7, 10), 0.3);
    }
}
