//! Rotating-frame Hamiltonians for piecewise-constant pulse schedules and
//! exact propagation through each constant segment.
//!
//! For a segment with one global drive (Rabi frequency `Omega`, detuning
//! `delta`, wavevector `k`, phase `phi`) and a set of addressing beams, the
//! Hamiltonian over the product basis is, in angular units of rad/us,
//!
//! ```text
//! H = sum_i  2pi*(Omega/2) (e^{+i(k.r_i + phi)} |r_i><g_i| + h.c.)
//!   - sum_i  2pi*delta_i_eff n_i
//!   + sum_{i<j} 2pi*U_ij n_i n_j,          n_i = |r_i><r_i|,
//! ```
//!
//! with `delta_i_eff = delta - sum_beams shift_i` in MHz: the addressing
//! light lowers the ground level of atom `i` by `h * shift_i`, which raises
//! its transition frequency, so it enters as a negative contribution to the
//! laser detuning. During drive-free segments the same diagonal applies with
//! `delta = 0`; this reproduces every relative phase exactly (the dropped
//! `-sum_i shift_i` identity term is a global phase).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::hilbert::{HilbertError, QuantumState};
use crate::model::{
    interaction_energy, light_shift_at, AddressingBeam, ExperimentModel, GlobalDrive, ModelError,
};
use crate::sequence::{PulseSequence, SequenceItem};
use crate::Vec3;

const TAU: f64 = std::f64::consts::TAU;

/// Relative Hermiticity tolerance enforced by the propagator.
pub const HERMITICITY_TOLERANCE: f64 = 1e-12;

/// Slack when deciding whether a pulse covers a time interval; boundary
/// times are reused exactly, so this only absorbs float noise in sample
/// times supplied by callers.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("{0} global drives active in one segment; at most one is allowed")]
    OverlappingDrives(usize),
    #[error("got {got} positions for {expected} atoms")]
    PositionCount { got: usize, expected: usize },
    #[error("active-atom mask has length {got}, expected {expected}")]
    MaskLength { got: usize, expected: usize },
    #[error("segment duration must be non-negative, got {0}")]
    NegativeDuration(f64),
    #[error("matrix deviates from Hermitian by {0:.3e} (relative)")]
    NotHermitian(f64),
    #[error("sample time {t} outside the schedule [0, {total}]")]
    SampleOutOfRange { t: f64, total: f64 },
}

/// Hamiltonian of one constant schedule segment, entries in rad/us.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentHamiltonian {
    matrix: DMatrix<C64>,
    duration: f64,
    atoms: usize,
}

impl SegmentHamiltonian {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn atom_count(&self) -> usize {
        self.atoms
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest absolute deviation from Hermiticity relative to the largest
    /// element magnitude (0 for the zero matrix).
    pub fn hermiticity_defect(&self) -> f64 {
        let m = &self.matrix;
        let mut max_defect = 0.0f64;
        let mut max_entry = 0.0f64;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                max_entry = max_entry.max(m[(i, j)].norm());
                let defect = (m[(i, j)] - m[(j, i)].conj()).norm();
                max_defect = max_defect.max(defect);
            }
        }
        if max_entry > 0.0 {
            max_defect / max_entry
        } else {
            0.0
        }
    }

    /// Eigendecomposition-backed propagator, reusable across durations.
    pub fn propagator(&self) -> Result<SegmentPropagator, EvolveError> {
        let defect = self.hermiticity_defect();
        if defect > HERMITICITY_TOLERANCE {
            return Err(EvolveError::NotHermitian(defect));
        }
        let eig = self.matrix.clone().symmetric_eigen();
        Ok(SegmentPropagator {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            atoms: self.atoms,
        })
    }
}

/// Diagonalized segment Hamiltonian: applies `exp(-i H dt)` exactly for any
/// non-negative `dt`.
pub struct SegmentPropagator {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<C64>,
    atoms: usize,
}

impl SegmentPropagator {
    pub fn apply(&self, state: &QuantumState, dt: f64) -> Result<QuantumState, EvolveError> {
        if !dt.is_finite() || dt < 0.0 {
            return Err(EvolveError::NegativeDuration(dt));
        }
        if dt == 0.0 {
            return Ok(state.clone());
        }
        let vec = DVector::from_column_slice(state.amplitudes());
        let mut coeffs = self.eigenvectors.adjoint() * vec;
        for (c, &lambda) in coeffs.iter_mut().zip(self.eigenvalues.iter()) {
            *c *= C64::from_polar(1.0, -lambda * dt);
        }
        let out = &self.eigenvectors * coeffs;
        Ok(QuantumState::from_amplitudes_unchecked(
            out.iter().copied().collect(),
            self.atoms,
        ))
    }
}

/// Per-atom effective detunings in MHz: the laser detuning minus the summed
/// addressing light shift at each atom position.
pub fn effective_detunings(
    laser_detuning: f64,
    beams: &[&AddressingBeam],
    positions: &[Vec3],
) -> Vec<f64> {
    positions
        .iter()
        .map(|&p| laser_detuning - beams.iter().map(|b| light_shift_at(b, p)).sum::<f64>())
        .collect()
}

/// Builds the Hamiltonian of one constant segment.
///
/// `positions` are the per-shot atom positions (trap centers in the ideal
/// case). With zero drives and zero beams the matrix holds only the
/// interaction diagonal.
pub fn build_segment(
    model: &ExperimentModel,
    drives: &[&GlobalDrive],
    beams: &[&AddressingBeam],
    positions: &[Vec3],
    duration: f64,
) -> Result<SegmentHamiltonian, EvolveError> {
    build_segment_masked(model, drives, beams, positions, duration, None)
}

/// As [`build_segment`], but atoms with `active = false` have their drive
/// coupling removed (they sit frozen in `|g>`; used for state-preparation
/// failures).
pub fn build_segment_masked(
    model: &ExperimentModel,
    drives: &[&GlobalDrive],
    beams: &[&AddressingBeam],
    positions: &[Vec3],
    duration: f64,
    active: Option<&[bool]>,
) -> Result<SegmentHamiltonian, EvolveError> {
    let n = model.atom_count();
    if positions.len() != n {
        return Err(EvolveError::PositionCount {
            got: positions.len(),
            expected: n,
        });
    }
    if drives.len() > 1 {
        return Err(EvolveError::OverlappingDrives(drives.len()));
    }
    if let Some(mask) = active {
        if mask.len() != n {
            return Err(EvolveError::MaskLength {
                got: mask.len(),
                expected: n,
            });
        }
    }
    if !duration.is_finite() || duration < 0.0 {
        return Err(EvolveError::NegativeDuration(duration));
    }

    let drive = drives.first().copied();
    let laser_detuning = drive.map_or(0.0, |d| d.detuning);
    let detunings = effective_detunings(laser_detuning, beams, positions);

    // Pair interactions at the per-shot distances.
    let mut pair_shift = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let r = (positions[i] - positions[j]).norm();
            let u = interaction_energy(&model.level, r)?;
            pair_shift[i * n + j] = u;
        }
    }

    let dim = 1usize << n;
    let mut matrix = DMatrix::<C64>::zeros(dim, dim);

    for config in 0..dim {
        let mut diag = 0.0;
        for i in 0..n {
            if config >> (n - 1 - i) & 1 == 1 {
                diag -= TAU * detunings[i];
                for j in (i + 1)..n {
                    if config >> (n - 1 - j) & 1 == 1 {
                        diag += TAU * pair_shift[i * n + j];
                    }
                }
            }
        }
        matrix[(config, config)] = C64::new(diag, 0.0);
    }

    if let Some(d) = drive {
        for i in 0..n {
            if active.is_some_and(|mask| !mask[i]) {
                continue;
            }
            let phase = d.phase_wavevector.dot(&positions[i]) + d.drive_phase;
            let element = C64::from_polar(TAU * d.rabi / 2.0, phase);
            let bit = 1usize << (n - 1 - i);
            for config in 0..dim {
                if config & bit == 0 {
                    // <config with atom i raised| H |config>
                    matrix[(config | bit, config)] += element;
                    matrix[(config, config | bit)] += element.conj();
                }
            }
        }
    }

    Ok(SegmentHamiltonian {
        matrix,
        duration,
        atoms: n,
    })
}

/// Propagates a state exactly through one segment:
/// `state' = exp(-i H duration) state` via Hermitian eigendecomposition.
pub fn evolve_segment(
    state: &QuantumState,
    hamiltonian: &SegmentHamiltonian,
) -> Result<QuantumState, EvolveError> {
    hamiltonian
        .propagator()?
        .apply(state, hamiltonian.duration())
}

/// Positions to use for a schedule segment starting at a given time.
/// [`run_sequence`] uses fixed trap positions; the Monte Carlo layer
/// substitutes ballistic per-shot trajectories.
pub trait PositionSource {
    fn positions_at(&self, t: f64) -> Vec<Vec3>;
}

/// Static positions, the noiseless case.
pub struct StaticPositions<'a>(pub &'a [Vec3]);

impl PositionSource for StaticPositions<'_> {
    fn positions_at(&self, _t: f64) -> Vec<Vec3> {
        self.0.to_vec()
    }
}

impl<F: Fn(f64) -> Vec<Vec3>> PositionSource for F {
    fn positions_at(&self, t: f64) -> Vec<Vec3> {
        self(t)
    }
}

/// Runs a validated pulse schedule from `state0`, returning the state at
/// every segment boundary and at every requested sample time.
///
/// Boundaries are exactly the union of pulse start/end times and sample
/// times. The Hamiltonian is rebuilt whenever the set of active pulses
/// changes; positions are re-evaluated at the start of each such physical
/// segment (sample times subdivide the propagation without touching the
/// physics).
pub fn run_sequence(
    state0: &QuantumState,
    sequence: &PulseSequence,
    model: &ExperimentModel,
    positions: &[Vec3],
    sample_times: &[f64],
) -> Result<Vec<(f64, QuantumState)>, EvolveError> {
    run_sequence_masked(
        state0,
        sequence,
        model,
        &StaticPositions(positions),
        sample_times,
        None,
    )
}

/// As [`run_sequence`] with a dynamic position source and an optional
/// active-atom mask.
pub fn run_sequence_masked(
    state0: &QuantumState,
    sequence: &PulseSequence,
    model: &ExperimentModel,
    positions: &impl PositionSource,
    sample_times: &[f64],
    active: Option<&[bool]>,
) -> Result<Vec<(f64, QuantumState)>, EvolveError> {
    let total = sequence.total_duration();
    for &t in sample_times {
        if !(0.0..=total + TIME_EPS).contains(&t) {
            return Err(EvolveError::SampleOutOfRange { t, total });
        }
    }

    // Physical boundaries: pulse edges. Full boundaries: plus sample times.
    let mut physical: Vec<f64> = vec![0.0];
    for item in sequence.items() {
        physical.push(item.t_start);
        physical.push(item.t_end());
    }
    sort_dedup(&mut physical);

    let mut boundaries = physical.clone();
    boundaries.extend_from_slice(sample_times);
    boundaries.push(total);
    sort_dedup(&mut boundaries);

    let mut trajectory = Vec::with_capacity(boundaries.len());
    let mut state = state0.clone();
    trajectory.push((boundaries[0], state.clone()));

    let mut propagator: Option<SegmentPropagator> = None;
    let mut propagator_segment = f64::NAN;

    for window in boundaries.windows(2) {
        let (t_a, t_b) = (window[0], window[1]);
        if t_b - t_a <= 0.0 {
            continue;
        }
        // Start of the physical segment containing t_a.
        let segment_start = physical
            .iter()
            .copied()
            .take_while(|&p| p <= t_a + TIME_EPS)
            .last()
            .unwrap_or(0.0);
        if propagator.is_none() || propagator_segment != segment_start {
            let pos = positions.positions_at(segment_start);
            let mut drives = Vec::new();
            let mut beams = Vec::new();
            for item in sequence.items() {
                if item.t_start <= t_a + TIME_EPS && item.t_end() >= t_b - TIME_EPS {
                    match &item.item {
                        SequenceItem::Drive(d) => drives.push(d),
                        SequenceItem::Address(b) => beams.push(b),
                    }
                }
            }
            let h = build_segment_masked(model, &drives, &beams, &pos, t_b - t_a, active)?;
            propagator = Some(h.propagator()?);
            propagator_segment = segment_start;
        }
        state = propagator.as_ref().unwrap().apply(&state, t_b - t_a)?;
        trajectory.push((t_b, state.clone()));
    }

    Ok(trajectory)
}

/// Final state after the full schedule.
pub fn run_sequence_final(
    state0: &QuantumState,
    sequence: &PulseSequence,
    model: &ExperimentModel,
    positions: &[Vec3],
) -> Result<QuantumState, EvolveError> {
    let trajectory = run_sequence(state0, sequence, model, positions, &[])?;
    Ok(trajectory
        .into_iter()
        .last()
        .expect("trajectory never empty")
        .1)
}

fn sort_dedup(times: &mut Vec<f64>) {
    times.sort_by(|a, b| a.partial_cmp(b).expect("times are finite"));
    times.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AtomGeometry, RydbergLevel, TrapModel};
    use crate::sequence::TimedItem;

    fn single_atom_model() -> ExperimentModel {
        ExperimentModel::new(
            AtomGeometry::new(vec![Vec3::zeros()]).unwrap(),
            RydbergLevel::preset("59D3/2").unwrap(),
            TrapModel::default(),
        )
    }

    fn pair_model() -> ExperimentModel {
        ExperimentModel::new(
            AtomGeometry::new(vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0)]).unwrap(),
            RydbergLevel::preset("59D3/2").unwrap(),
            TrapModel::default(),
        )
    }

    #[test]
    fn single_atom_resonant_structure() {
        let model = single_atom_model();
        let drive = GlobalDrive::resonant(1.0);
        let h = build_segment(&model, &[&drive], &[], model.geometry.positions(), 1.0).unwrap();
        let m = h.matrix();
        assert_eq!(m.nrows(), 2);
        assert!((m[(1, 0)].norm() - TAU * 0.5).abs() < 1e-12);
        assert_eq!(m[(0, 0)], C64::ZERO);
        assert_eq!(m[(1, 1)], C64::ZERO);
        assert!(h.hermiticity_defect() < 1e-15);
    }

    #[test]
    fn doubly_excited_diagonal_carries_the_pair_interaction() {
        let model = pair_model();
        let drive = GlobalDrive::resonant(1.0);
        let h = build_segment(&model, &[&drive], &[], model.geometry.positions(), 1.0).unwrap();
        let rr = h.matrix()[(3, 3)];
        assert!((rr.re - TAU * 300.0).abs() < 1e-9, "rr diagonal = {rr}");
        assert_eq!(rr.im, 0.0);
    }

    #[test]
    fn addressing_beam_detunes_the_targeted_atom() {
        let model = pair_model();
        let beam = AddressingBeam::new(Vec3::new(3.0, 0.0, 0.0), 10.0, 1.3).unwrap();
        let detunings = effective_detunings(0.5, &[&beam], model.geometry.positions());
        assert!((detunings[1] - (0.5 - 10.0)).abs() < 1e-12);
        let cross_talk = 10.0 * (-2.0 * (3.0 / 1.3) * (3.0_f64 / 1.3)).exp();
        assert!((detunings[0] - (0.5 - cross_talk)).abs() < 1e-15);
        assert!((cross_talk - 2.4e-4).abs() < 1e-5);

        // Diagonal of |gr> picks up -2pi * delta_eff of atom 1.
        let drive = GlobalDrive {
            detuning: 0.5,
            ..GlobalDrive::resonant(1.0)
        };
        let h =
            build_segment(&model, &[&drive], &[&beam], model.geometry.positions(), 1.0).unwrap();
        assert!((h.matrix()[(1, 1)].re - (-TAU * detunings[1])).abs() < 1e-12);
        assert!((h.matrix()[(2, 2)].re - (-TAU * detunings[0])).abs() < 1e-12);
    }

    #[test]
    fn no_drive_no_beam_leaves_interaction_diagonal_only() {
        let model = pair_model();
        let h = build_segment(&model, &[], &[], model.geometry.positions(), 1.0).unwrap();
        let m = h.matrix();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(m[(i, j)], C64::ZERO);
                }
            }
        }
        assert_eq!(m[(0, 0)], C64::ZERO);
        assert_eq!(m[(1, 1)], C64::ZERO);
        assert_eq!(m[(2, 2)], C64::ZERO);
        assert!((m[(3, 3)].re - TAU * 300.0).abs() < 1e-9);
    }

    #[test]
    fn two_drives_in_one_segment_are_rejected() {
        let model = pair_model();
        let d = GlobalDrive::resonant(1.0);
        let err =
            build_segment(&model, &[&d, &d], &[], model.geometry.positions(), 1.0).unwrap_err();
        assert!(matches!(err, EvolveError::OverlappingDrives(2)));
    }

    #[test]
    fn zero_duration_segment_is_the_identity() {
        let model = single_atom_model();
        let drive = GlobalDrive::resonant(1.0);
        let h = build_segment(&model, &[&drive], &[], model.geometry.positions(), 0.0).unwrap();
        let state = QuantumState::all_ground(1);
        let out = evolve_segment(&state, &h).unwrap();
        assert_eq!(out.amplitudes()[0], C64::ONE);
        assert_eq!(out.amplitudes()[1], C64::ZERO);
    }

    #[test]
    fn resonant_pi_pulse_inverts_a_single_atom() {
        // Omega = 1 MHz, tau = 0.5 us: angular area 2pi * 1 * 0.5 = pi.
        let model = single_atom_model();
        let drive = GlobalDrive::resonant(1.0);
        let h = build_segment(&model, &[&drive], &[], model.geometry.positions(), 0.5).unwrap();
        let out = evolve_segment(&QuantumState::all_ground(1), &h).unwrap();
        let p_r = out.amplitudes()[1].norm_sqr();
        assert!((p_r - 1.0).abs() < 1e-9, "P_r = {p_r}");
        assert!((out.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blockaded_pair_reaches_the_symmetric_single_excitation() {
        let model = pair_model();
        let drive = GlobalDrive::resonant(1.0);
        let tau = 1.0 / (2.0 * 2.0f64.sqrt());
        let h = build_segment(&model, &[&drive], &[], model.geometry.positions(), tau).unwrap();
        let out = evolve_segment(&QuantumState::all_ground(2), &h).unwrap();
        let table = out.populations().unwrap();
        let single = table.probability("gr").unwrap() + table.probability("rg").unwrap();
        assert!(single >= 0.999, "P_gr + P_rg = {single}");
        assert!(table.probability("rr").unwrap() <= 1e-3);
    }

    #[test]
    fn masked_atom_stays_in_ground() {
        let model = pair_model();
        let drive = GlobalDrive::resonant(1.0);
        let h = build_segment_masked(
            &model,
            &[&drive],
            &[],
            model.geometry.positions(),
            0.5,
            Some(&[true, false]),
        )
        .unwrap();
        let out = evolve_segment(&QuantumState::all_ground(2), &h).unwrap();
        let p_atom1_r = out
            .single_atom_population(1, crate::hilbert::Level::Rydberg)
            .unwrap();
        assert!(p_atom1_r < 1e-12);
        // The unmasked atom still undergoes its pi flip.
        let p_atom0_r = out
            .single_atom_population(0, crate::hilbert::Level::Rydberg)
            .unwrap();
        assert!((p_atom0_r - 1.0).abs() < 1e-6, "P_r(atom 0) = {p_atom0_r}");
    }

    #[test]
    fn non_hermitian_matrices_are_rejected() {
        let model = single_atom_model();
        let drive = GlobalDrive::resonant(1.0);
        let mut h = build_segment(&model, &[&drive], &[], model.geometry.positions(), 0.5).unwrap();
        h.matrix[(0, 1)] += C64::new(0.3, 0.0);
        assert!(matches!(
            evolve_segment(&QuantumState::all_ground(1), &h),
            Err(EvolveError::NotHermitian(_))
        ));
    }

    #[test]
    fn empty_sequence_returns_the_initial_state() {
        let model = pair_model();
        let state0 = QuantumState::all_ground(2);
        let traj = run_sequence(
            &state0,
            &PulseSequence::empty(),
            &model,
            model.geometry.positions(),
            &[],
        )
        .unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj[0].0, 0.0);
        assert_eq!(traj[0].1, state0);
    }

    #[test]
    fn sample_time_outside_schedule_is_an_error() {
        let model = pair_model();
        let drive = GlobalDrive::resonant(1.0);
        let seq = PulseSequence::new(vec![TimedItem::drive(0.0, 0.5, drive)]).unwrap();
        let err = run_sequence(
            &QuantumState::all_ground(2),
            &seq,
            &model,
            model.geometry.positions(),
            &[0.7],
        )
        .unwrap_err();
        assert!(matches!(err, EvolveError::SampleOutOfRange { .. }));
    }

    #[test]
    fn phase_manipulation_reaches_the_dark_state_at_t_pi() {
        let model = pair_model();
        let drive = GlobalDrive::resonant(1.0);
        let beam = AddressingBeam::new(Vec3::new(3.0, 0.0, 0.0), 10.0, 1.3).unwrap();
        let tau_pi = 1.0 / (2.0 * 2.0f64.sqrt());
        let t_pi = 0.05; // 1 / (2 * 10 MHz)

        for (t_address, expected_gg) in [(t_pi, 0.0), (2.0 * t_pi, 1.0)] {
            let seq = PulseSequence::new(vec![
                TimedItem::drive(0.0, tau_pi, drive.clone()),
                TimedItem::address(tau_pi, t_address, beam.clone()),
                TimedItem::drive(tau_pi + t_address, tau_pi, drive.clone()),
            ])
            .unwrap();
            let final_state = run_sequence_final(
                &QuantumState::all_ground(2),
                &seq,
                &model,
                model.geometry.positions(),
            )
            .unwrap();
            let p_gg = final_state
                .populations()
                .unwrap()
                .probability("gg")
                .unwrap();
            assert!(
                (p_gg - expected_gg).abs() < 2e-3,
                "T = {t_address}: P_gg = {p_gg}, expected {expected_gg}"
            );
        }
    }

    #[test]
    fn norm_preserved_over_a_thousand_chained_segments() {
        let model = pair_model();
        let mut state = QuantumState::all_ground(2);
        let drive = GlobalDrive {
            detuning: 0.3,
            ..GlobalDrive::resonant(1.3)
        };
        let beam = AddressingBeam::new(Vec3::new(3.0, 0.0, 0.0), 4.0, 1.3).unwrap();
        let h = build_segment(
            &model,
            &[&drive],
            &[&beam],
            model.geometry.positions(),
            0.013,
        )
        .unwrap();
        let propagator = h.propagator().unwrap();
        for _ in 0..1000 {
            state = propagator.apply(&state, 0.013).unwrap();
        }
        assert!(
            (state.norm() - 1.0).abs() < 1e-9,
            "norm drift = {}",
            (state.norm() - 1.0).abs()
        );
    }
}
