#![allow(dead_code)]

use std::sync::OnceLock;

use rollwave::bloch::SpectrumOptions;
use rollwave::orbit::{continue_family, family_hopf_point, hopf_start, Closure, ContinuationOptions, OrbitFamily, PeriodicProfile};
use rollwave::ModelParams;

pub const CLOSURE: Closure = Closure::EndState { u_minus: 0.96 };

/// Family from the Hopf point to X = 30 with a few periods solved exactly.
pub fn family() -> &'static OrbitFamily {
    static FAMILY: OnceLock<OrbitFamily> = OnceLock::new();
    FAMILY.get_or_init(|| {
        let params = ModelParams::roll_wave_default();
        let hopf = family_hopf_point(&params, CLOSURE).unwrap();
        let start = hopf_start(&params, CLOSURE, &hopf, 1e-3, 30, 256).unwrap();
        let opts = ContinuationOptions {
            target_period: 30.0,
            requested_periods: vec![4.5, 6.2, 25.0],
            ..Default::default()
        };
        continue_family(&start, CLOSURE, hopf, &opts).unwrap()
    })
}

pub fn member(period: f64) -> &'static PeriodicProfile {
    let p = family().nearest(period).unwrap();
    assert!((p.period() - period).abs() < 1e-9, "X = {period} not in the family");
    p
}

pub fn spectrum_options() -> SpectrumOptions {
    SpectrumOptions { convergence_stride: 10, ..SpectrumOptions::default() }
}
