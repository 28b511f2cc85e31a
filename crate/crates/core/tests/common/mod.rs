#![allow(dead_code)]

use ringtrap::fields::locate_sites;
use ringtrap::geometry::build_ring_layout;
use ringtrap::{RingLayoutParams, TrapModel};
use std::sync::OnceLock;

/// Default layout with sites on the pseudopotential minimum.
pub fn model() -> &'static TrapModel {
    static M: OnceLock<TrapModel> = OnceLock::new();
    M.get_or_init(|| {
        locate_sites(&build_ring_layout(&RingLayoutParams::default()).unwrap()).unwrap()
    })
}

/// Default layout without the loading hole and without shorted electrodes,
/// sites located.
pub fn symmetric_model() -> &'static TrapModel {
    static M: OnceLock<TrapModel> = OnceLock::new();
    M.get_or_init(|| {
        let p = RingLayoutParams {
            loading_hole: false,
            shorted: vec![],
            ..RingLayoutParams::default()
        };
        locate_sites(&build_ring_layout(&p).unwrap()).unwrap()
    })
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
