//! Physical configuration types and closed-form field evaluations.
//!
//! Conventions: a drive's `rabi` and `detuning` are the ordinary frequencies
//! `Omega/2pi` and `delta/2pi` in MHz (`detuning` = laser minus unshifted
//! transition). An addressing beam's `peak_shift` is the ground-state
//! light shift `Delta_E/h` in MHz at the beam center, taken positive. The
//! Rydberg state is treated as exactly unshifted by the addressing light.

use thiserror::Error;

use crate::Vec3;

/// Default cap on the register size; 2^N amplitudes must stay desk-scale.
pub const DEFAULT_MAX_ATOMS: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("atom register is empty")]
    NoAtoms,
    #[error("{count} atoms exceed the configured maximum of {max}")]
    TooManyAtoms { count: usize, max: usize },
    #[error("atoms {first} and {second} are coincident")]
    CoincidentAtoms { first: usize, second: usize },
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("invalid {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

fn require_positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ModelError::InvalidParameter { name, value })
    }
}

fn require_non_negative(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(ModelError::InvalidParameter { name, value })
    }
}

/// Trap positions of the atom register, in micrometers.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomGeometry {
    positions: Vec<Vec3>,
}

impl AtomGeometry {
    /// Builds a register with the default `N <= 12` guard.
    pub fn new(positions: Vec<Vec3>) -> Result<Self, ModelError> {
        Self::with_max_atoms(positions, DEFAULT_MAX_ATOMS)
    }

    /// Builds a register with an explicit size cap (CLI exposes an override).
    pub fn with_max_atoms(positions: Vec<Vec3>, max_atoms: usize) -> Result<Self, ModelError> {
        if positions.is_empty() {
            return Err(ModelError::NoAtoms);
        }
        if positions.len() > max_atoms {
            return Err(ModelError::TooManyAtoms {
                count: positions.len(),
                max: max_atoms,
            });
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if (positions[i] - positions[j]).norm() <= 0.0 {
                    return Err(ModelError::CoincidentAtoms {
                        first: i,
                        second: j,
                    });
                }
            }
        }
        Ok(Self { positions })
    }

    pub fn atom_count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }
}

/// Rydberg level selection: a label plus the van der Waals coefficient
/// `C6/h` in MHz*um^6 (positive for the repulsive convention).
#[derive(Debug, Clone, PartialEq)]
pub struct RydbergLevel {
    pub label: String,
    pub c6: f64,
}

impl RydbergLevel {
    pub fn new(label: impl Into<String>, c6: f64) -> Result<Self, ModelError> {
        let c6 = require_positive("c6", c6)?;
        Ok(Self {
            label: label.into(),
            c6,
        })
    }

    /// Named preset. `59D3/2` ships `C6/h = 218 700 MHz*um^6`, back-solved
    /// from the 300 MHz pair interaction at 3 um; `82D3/2` is recognized but
    /// carries no default coefficient and must be given one explicitly.
    pub fn preset(label: &str) -> Option<Self> {
        match label {
            "59D3/2" => Some(Self {
                label: label.into(),
                c6: 218_700.0,
            }),
            _ => None,
        }
    }
}

/// Global excitation drive: couples `|g>` to `|r>` on every atom.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDrive {
    /// Rabi frequency `Omega/2pi` in MHz.
    pub rabi: f64,
    /// Laser detuning `delta/2pi` in MHz relative to the unshifted transition.
    pub detuning: f64,
    /// Effective two-photon wavevector in rad/um; imprints the phase `k.r_i`.
    pub phase_wavevector: Vec3,
    /// Overall drive phase in radians.
    pub drive_phase: f64,
}

impl GlobalDrive {
    pub fn new(
        rabi: f64,
        detuning: f64,
        phase_wavevector: Vec3,
        drive_phase: f64,
    ) -> Result<Self, ModelError> {
        let rabi = require_non_negative("rabi", rabi)?;
        Ok(Self {
            rabi,
            detuning,
            phase_wavevector,
            drive_phase,
        })
    }

    /// Resonant drive with zero wavevector; handy in tests.
    pub fn resonant(rabi: f64) -> Self {
        Self {
            rabi,
            detuning: 0.0,
            phase_wavevector: Vec3::zeros(),
            drive_phase: 0.0,
        }
    }
}

/// Tightly focused addressing beam: Gaussian in the plane transverse to
/// `axis`, uniform along it (only the transverse profile is modeled).
#[derive(Debug, Clone, PartialEq)]
pub struct AddressingBeam {
    /// Beam-center position in um.
    pub center: Vec3,
    /// Ground-state light shift `Delta_E/h` in MHz at the beam center.
    pub peak_shift: f64,
    /// 1/e^2 intensity radius in um.
    pub waist: f64,
    /// Optical axis (normalized); transverse distance is measured in the
    /// plane orthogonal to it.
    pub axis: Vec3,
}

impl AddressingBeam {
    /// Beam propagating along z (the default optical axis).
    pub fn new(center: Vec3, peak_shift: f64, waist: f64) -> Result<Self, ModelError> {
        Self::with_axis(center, peak_shift, waist, Vec3::z())
    }

    pub fn with_axis(
        center: Vec3,
        peak_shift: f64,
        waist: f64,
        axis: Vec3,
    ) -> Result<Self, ModelError> {
        let peak_shift = require_non_negative("peak_shift", peak_shift)?;
        let waist = require_positive("waist", waist)?;
        Ok(Self {
            center,
            peak_shift,
            waist,
            axis: normalize_idempotent(axis)?,
        })
    }
}

/// Optical microtrap parameters; these only enter the thermal position
/// sampling (traps are off while pulses run).
#[derive(Debug, Clone, PartialEq)]
pub struct TrapModel {
    /// 1/e^2 intensity radius in um.
    pub waist: f64,
    /// Trap depth `U0/h` in MHz.
    pub depth: f64,
    /// Axial-to-radial extent ratio of the thermal position distribution.
    pub axial_aspect: f64,
}

impl TrapModel {
    pub fn new(waist: f64, depth: f64, axial_aspect: f64) -> Result<Self, ModelError> {
        let waist = require_positive("waist", waist)?;
        let depth = require_positive("depth", depth)?;
        if !axial_aspect.is_finite() || axial_aspect < 1.0 {
            return Err(ModelError::InvalidParameter {
                name: "axial_aspect",
                value: axial_aspect,
            });
        }
        Ok(Self {
            waist,
            depth,
            axial_aspect,
        })
    }
}

impl Default for TrapModel {
    fn default() -> Self {
        Self {
            waist: 1.0,
            depth: 20.0,
            axial_aspect: 5.2,
        }
    }
}

/// Full static physical configuration: register geometry, Rydberg level and
/// trap parameters. Drives, beams and noise settings ride on the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentModel {
    pub geometry: AtomGeometry,
    pub level: RydbergLevel,
    pub trap: TrapModel,
}

impl ExperimentModel {
    pub fn new(geometry: AtomGeometry, level: RydbergLevel, trap: TrapModel) -> Self {
        Self {
            geometry,
            level,
            trap,
        }
    }

    pub fn atom_count(&self) -> usize {
        self.geometry.atom_count()
    }
}

/// Pair interaction `C6 / R^6` in MHz for two atoms in the Rydberg state.
pub fn interaction_energy(level: &RydbergLevel, distance: f64) -> Result<f64, ModelError> {
    if !distance.is_finite() || distance <= 0.0 {
        return Err(ModelError::NonPositiveDistance(distance));
    }
    Ok(level.c6 / distance.powi(6))
}

/// Ground-state light shift in MHz seen at `position`:
/// `peak_shift * exp(-2 d^2 / w0^2)` with `d` the transverse distance from
/// the beam center.
pub fn light_shift_at(beam: &AddressingBeam, position: Vec3) -> f64 {
    let offset = position - beam.center;
    let transverse = offset - beam.axis * offset.dot(&beam.axis);
    let d2 = transverse.norm_squared();
    beam.peak_shift * (-2.0 * d2 / (beam.waist * beam.waist)).exp()
}

/// Unit vector along `axis`; vectors already normalized pass through
/// unchanged so that re-normalization is bit-stable.
fn normalize_idempotent(axis: Vec3) -> Result<Vec3, ModelError> {
    let norm = axis.norm();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "axis",
            value: norm,
        });
    }
    if (norm - 1.0).abs() <= 1e-9 {
        Ok(axis)
    } else {
        Ok(axis / norm)
    }
}

/// Relative propagation geometry of the two excitation lasers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamGeometry {
    CoPropagating,
    CounterPropagating,
}

/// Effective two-photon wavevector along `axis`, in rad/um:
/// `|k| = 2pi |1/lambda_blue +- 1/lambda_red|` (+ co-, - counter-propagating).
pub fn effective_wavevector(
    lambda_red: f64,
    lambda_blue: f64,
    geometry: BeamGeometry,
    axis: Vec3,
) -> Result<Vec3, ModelError> {
    let lambda_red = require_positive("lambda_red", lambda_red)?;
    let lambda_blue = require_positive("lambda_blue", lambda_blue)?;
    let unit = normalize_idempotent(axis)?;
    let magnitude = match geometry {
        BeamGeometry::CoPropagating => 1.0 / lambda_blue + 1.0 / lambda_red,
        BeamGeometry::CounterPropagating => (1.0 / lambda_blue - 1.0 / lambda_red).abs(),
    };
    Ok(unit * (std::f64::consts::TAU * magnitude))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: f64 = std::f64::consts::TAU;

    fn level_59d() -> RydbergLevel {
        RydbergLevel::preset("59D3/2").unwrap()
    }

    #[test]
    fn interaction_matches_pair_anchor_at_3um() {
        // 218 700 / 3^6 = 300 exactly.
        let u = interaction_energy(&level_59d(), 3.0).unwrap();
        assert!((u - 300.0).abs() < 1e-12, "u = {u}");
    }

    #[test]
    fn interaction_at_half_distance_gains_factor_64() {
        let u = interaction_energy(&level_59d(), 1.5).unwrap();
        assert!((u - 19_200.0).abs() < 1e-9, "u = {u}");
        assert!((u / interaction_energy(&level_59d(), 3.0).unwrap() - 64.0).abs() < 1e-12);
    }

    #[test]
    fn interaction_vanishes_at_large_distance_and_decreases() {
        let far = interaction_energy(&level_59d(), 300.0).unwrap();
        assert!(far < 1e-9);
        let mut prev = f64::INFINITY;
        for r in [1.0, 2.0, 5.0, 20.0, 300.0] {
            let u = interaction_energy(&level_59d(), r).unwrap();
            assert!(u < prev);
            prev = u;
        }
    }

    #[test]
    fn interaction_rejects_coincident_atoms() {
        assert!(matches!(
            interaction_energy(&level_59d(), 0.0),
            Err(ModelError::NonPositiveDistance(_))
        ));
    }

    #[test]
    fn interaction_r6_product_is_constant() {
        let level = level_59d();
        for r in [0.7, 1.3, 2.9, 8.5, 40.0] {
            let u = interaction_energy(&level, r).unwrap();
            assert!((u * r.powi(6) - level.c6).abs() < 1e-6 * level.c6);
        }
    }

    #[test]
    fn light_shift_cross_talk_at_3um_is_0p2_khz() {
        let beam = AddressingBeam::new(Vec3::zeros(), 10.0, 1.3).unwrap();
        let shift = light_shift_at(&beam, Vec3::new(3.0, 0.0, 0.0));
        let expected = 10.0 * (-2.0 * (3.0 / 1.3) * (3.0_f64 / 1.3)).exp();
        assert!(((shift - expected) / expected).abs() < 1e-12);
        // ~0.237 kHz, which rounds to the 0.2 kHz cross-talk figure.
        assert!((shift - 2.37e-4).abs() < 5e-7, "shift = {shift}");
    }

    #[test]
    fn light_shift_identities_at_center_and_waist() {
        let beam = AddressingBeam::new(Vec3::zeros(), 10.0, 1.3).unwrap();
        assert_eq!(light_shift_at(&beam, Vec3::zeros()), 10.0);
        let at_waist = light_shift_at(&beam, Vec3::new(1.3, 0.0, 0.0));
        assert!((at_waist - 10.0 * (-2.0f64).exp()).abs() < 1e-12);
        assert!((at_waist - 1.353).abs() < 1e-3);
    }

    #[test]
    fn light_shift_ignores_distance_along_the_axis() {
        let beam = AddressingBeam::new(Vec3::zeros(), 10.0, 1.3).unwrap();
        assert_eq!(light_shift_at(&beam, Vec3::new(0.0, 0.0, 7.0)), 10.0);
        let tilted = AddressingBeam::with_axis(Vec3::zeros(), 10.0, 1.3, Vec3::x()).unwrap();
        assert_eq!(light_shift_at(&tilted, Vec3::new(5.0, 0.0, 0.0)), 10.0);
        let d = light_shift_at(&tilted, Vec3::new(5.0, 1.3, 0.0));
        assert!((d - 10.0 * (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn light_shift_profile_depends_only_on_d_over_w0() {
        let narrow = AddressingBeam::new(Vec3::zeros(), 7.0, 0.9).unwrap();
        let wide = AddressingBeam::new(Vec3::zeros(), 3.0, 2.6).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..20 {
            let ratio = 0.2 * step as f64;
            let a = light_shift_at(&narrow, Vec3::new(ratio * 0.9, 0.0, 0.0)) / 7.0;
            let b = light_shift_at(&wide, Vec3::new(ratio * 2.6, 0.0, 0.0)) / 3.0;
            assert!((a - b).abs() < 1e-14);
            assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn wavevector_counter_propagating_matches_direct_sum() {
        let k = effective_wavevector(0.795, 0.474, BeamGeometry::CounterPropagating, Vec3::x())
            .unwrap();
        let expected = TAU * (1.0 / 0.474 - 1.0 / 0.795);
        assert!((k.norm() - expected).abs() < 1e-12);
        assert!((k.norm() - 5.3522).abs() < 1e-3, "|k| = {}", k.norm());
        assert_eq!(k.y, 0.0);
        assert_eq!(k.z, 0.0);
    }

    #[test]
    fn wavevector_co_propagating_matches_direct_sum() {
        let k = effective_wavevector(0.795, 0.474, BeamGeometry::CoPropagating, Vec3::x()).unwrap();
        let expected = TAU * (1.0 / 0.474 + 1.0 / 0.795);
        assert!((k.norm() - expected).abs() < 1e-12);
        assert!((k.norm() - 21.158).abs() < 1e-2, "|k| = {}", k.norm());
    }

    #[test]
    fn wavevector_cancels_for_equal_counter_propagating_beams() {
        let k =
            effective_wavevector(0.6, 0.6, BeamGeometry::CounterPropagating, Vec3::x()).unwrap();
        assert_eq!(k, Vec3::zeros());
    }

    #[test]
    fn geometry_rejects_duplicates_and_oversize() {
        let err = AtomGeometry::new(vec![Vec3::zeros(), Vec3::zeros()]).unwrap_err();
        assert!(matches!(
            err,
            ModelError::CoincidentAtoms {
                first: 0,
                second: 1
            }
        ));

        let many: Vec<Vec3> = (0..13).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            AtomGeometry::new(many.clone()),
            Err(ModelError::TooManyAtoms { .. })
        ));
        assert!(AtomGeometry::with_max_atoms(many, 16).is_ok());
        assert!(matches!(
            AtomGeometry::new(vec![]),
            Err(ModelError::NoAtoms)
        ));
    }

    #[test]
    fn presets_know_59d_only() {
        assert_eq!(level_59d().c6, 218_700.0);
        assert!(RydbergLevel::preset("82D3/2").is_none());
        assert!(RydbergLevel::new("82D3/2", 5.0e6).is_ok());
        assert!(RydbergLevel::new("82D3/2", -1.0).is_err());
    }
}
