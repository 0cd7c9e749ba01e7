//! Frequency/time scaling invariance: multiplying every frequency-typed
//! input by a common factor and dividing all durations by the same factor
//! leaves populations unchanged.

use proptest::prelude::*;

use rydsim_core::hamiltonian::{build_segment, evolve_segment};
use rydsim_core::hilbert::QuantumState;
use rydsim_core::model::{
    AddressingBeam, AtomGeometry, ExperimentModel, GlobalDrive, RydbergLevel, TrapModel,
};
use rydsim_core::Vec3;

fn populations_after_pulse(
    c6: f64,
    rabi: f64,
    detuning: f64,
    peak_shift: f64,
    duration: f64,
) -> Vec<f64> {
    let model = ExperimentModel::new(
        AtomGeometry::new(vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0)]).unwrap(),
        RydbergLevel::new("scaled", c6).unwrap(),
        TrapModel::default(),
    );
    let drive = GlobalDrive::new(rabi, detuning, Vec3::new(5.35, 0.0, 0.0), 0.3).unwrap();
    let beam = AddressingBeam::new(Vec3::new(3.0, 0.0, 0.0), peak_shift, 1.3).unwrap();
    let h = build_segment(
        &model,
        &[&drive],
        &[&beam],
        model.geometry.positions(),
        duration,
    )
    .unwrap();
    evolve_segment(&QuantumState::all_ground(2), &h)
        .unwrap()
        .populations()
        .unwrap()
        .probabilities()
        .to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn populations_are_invariant_under_frequency_time_rescaling(
        c6 in 1.0e3..1.0e6f64,
        rabi in 0.1..4.0f64,
        detuning in -4.0..4.0f64,
        peak_shift in 0.0..15.0f64,
        duration in 0.01..1.5f64,
        scale in 0.05..20.0f64,
    ) {
        let base = populations_after_pulse(c6, rabi, detuning, peak_shift, duration);
        let scaled = populations_after_pulse(
            c6 * scale,
            rabi * scale,
            detuning * scale,
            peak_shift * scale,
            duration / scale,
        );
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((a - b).abs() < 1e-9, "population {a} vs {b}");
        }
    }
}
