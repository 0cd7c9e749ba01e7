//! The turnkey experiment recipes: addressing-beam spectroscopy, blockade
//! Rabi oscillations (plain and addressed), dark-state phase manipulation,
//! and a generic schedule evolver.
//!
//! Each recipe takes a parsed experiment document for the physical
//! configuration and builds the pulse timing itself: drive and address
//! blocks act as templates (their `rabi_mhz`, `detuning_mhz`, beam
//! geometry and so on are used; their scheduling, if any, is ignored
//! everywhere except in `evolve`). Scan points run either in exact mode
//! (no RNG touched) or through the shot-sampled Monte Carlo layer.

use thiserror::Error;

use rydsim_core::fit::{
    find_resonance, fit, linear_fit, FitError, FitResult, LinearFit, ModelFunction,
};
use rydsim_core::hamiltonian::{run_sequence, EvolveError};
use rydsim_core::hilbert::{HilbertError, PopulationTable, QuantumState};
use rydsim_core::model::AddressingBeam;
use rydsim_core::noise::{apply_detection_table, run_monte_carlo, NoiseError};
use rydsim_core::sequence::{
    ExperimentDocument, PulseSequence, ScanBlock, ScheduleError, TimedAddress, TimedDrive,
    TimedItem,
};

use crate::table::{model_hash, ResultTable, TableMeta};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecipeError {
    #[error("recipe needs exactly {expected} atom(s), document has {got}")]
    WrongAtomCount { expected: usize, got: usize },
    #[error("document has no [drive] block to use as the pulse template")]
    MissingDrive,
    #[error("document has no [address] block to use as the beam template")]
    MissingAddress,
    #[error("drive template needs rabi_mhz > 0 for this recipe")]
    ZeroRabi,
    #[error("the [scan] block scans {got:?}; this recipe scans {expected}")]
    ScanPathMismatch { expected: &'static str, got: String },
    #[error("the detection-channel transform applies to ideal tables only")]
    DetectionRequiresIdeal,
    #[error("resonance extraction failed at dx = {dx} um: {source}")]
    ResonanceAt { dx: f64, source: FitError },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Exact populations or shot-sampled frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Ideal,
    Sampled,
}

impl RunMode {
    fn as_str(self) -> &'static str {
        match self {
            RunMode::Ideal => "ideal",
            RunMode::Sampled => "sampled",
        }
    }
}

/// Spreads scan points over decorrelated seed streams: point 0 keeps the
/// document seed, later points hop by the 64-bit golden ratio so every
/// (point, shot) pair sees fresh thermal draws.
fn point_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn require_atoms(document: &ExperimentDocument, expected: usize) -> Result<(), RecipeError> {
    let got = document.model.atom_count();
    if got != expected {
        return Err(RecipeError::WrongAtomCount { expected, got });
    }
    Ok(())
}

fn drive_template(document: &ExperimentDocument) -> Result<&TimedDrive, RecipeError> {
    document.drives.first().ok_or(RecipeError::MissingDrive)
}

fn address_template(document: &ExperimentDocument) -> Result<&TimedAddress, RecipeError> {
    document
        .addresses
        .first()
        .ok_or(RecipeError::MissingAddress)
}

fn scan_or_default(
    document: &ExperimentDocument,
    expected: &'static str,
    default: ScanBlock,
) -> Result<ScanBlock, RecipeError> {
    match &document.scan {
        Some(block) if block.parameter == expected => Ok(block.clone()),
        Some(block) => Err(RecipeError::ScanPathMismatch {
            expected,
            got: block.parameter.clone(),
        }),
        None => Ok(default),
    }
}

/// Exact populations at the end of a schedule, atoms pinned to the trap
/// centers and no stochastic layer.
fn ideal_populations(
    document: &ExperimentDocument,
    sequence: &PulseSequence,
) -> Result<PopulationTable, RecipeError> {
    let model = &document.model;
    let state0 = QuantumState::all_ground(model.atom_count());
    let trajectory = run_sequence(&state0, sequence, model, model.geometry.positions(), &[])?;
    let (_, state) = trajectory.last().expect("trajectory never empty");
    Ok(state.populations()?)
}

/// One scan point: exact or Monte Carlo populations at the end of the
/// given schedule. The Monte Carlo path rides on a per-point document so
/// the declared schedule, seed and noise settings line up.
fn point_populations(
    document: &ExperimentDocument,
    items: Vec<TimedItem>,
    mode: RunMode,
    point: usize,
) -> Result<PopulationTable, RecipeError> {
    let sequence = PulseSequence::new(items.clone())?;
    match mode {
        RunMode::Ideal => ideal_populations(document, &sequence),
        RunMode::Sampled => {
            let mut point_doc = document.clone();
            point_doc.drives.clear();
            point_doc.addresses.clear();
            for item in items {
                match item.item {
                    rydsim_core::sequence::SequenceItem::Drive(drive) => {
                        point_doc.drives.push(TimedDrive {
                            t_start: item.t_start,
                            duration: Some(item.duration),
                            drive,
                        })
                    }
                    rydsim_core::sequence::SequenceItem::Address(beam) => {
                        point_doc.addresses.push(TimedAddress {
                            t_start: item.t_start,
                            duration: Some(item.duration),
                            beam,
                        })
                    }
                }
            }
            point_doc.noise.rng_seed = point_seed(document.noise.rng_seed, point);
            let t_end = sequence.total_duration();
            let mut tables = run_monte_carlo(&point_doc, &[t_end])?;
            Ok(tables.remove(0))
        }
    }
}

fn meta_for(
    document: &ExperimentDocument,
    recipe: &str,
    mode: RunMode,
    scan_path: &str,
) -> TableMeta {
    let seed = match mode {
        RunMode::Ideal => None,
        RunMode::Sampled => Some(document.noise.rng_seed),
    };
    TableMeta::new(
        recipe,
        mode.as_str(),
        seed,
        model_hash(&document.serialize()),
        scan_path,
    )
}

// ---------------------------------------------------------------------------
// Blockade Rabi oscillations
// ---------------------------------------------------------------------------

/// Two-atom Rabi scan under blockade: populations P_ij versus the drive
/// duration. With `addressed` the first address block's beam stays on for
/// the whole pulse, selectively blocking its target atom.
pub fn experiment_blockade_rabi(
    document: &ExperimentDocument,
    addressed: bool,
    mode: RunMode,
) -> Result<ResultTable, RecipeError> {
    require_atoms(document, 2)?;
    let drive = drive_template(document)?.drive.clone();
    let beam = if addressed {
        Some(address_template(document)?.beam.clone())
    } else {
        None
    };
    let scan = scan_or_default(
        document,
        "drive.duration_us",
        ScanBlock {
            parameter: "drive.duration_us".into(),
            start: 0.0,
            stop: 2.0,
            step: 0.02,
        },
    )?;

    let recipe = if addressed { "rabi-addressed" } else { "rabi" };
    let mut table = ResultTable::new(meta_for(document, recipe, mode, &scan.parameter), 2);
    for (point, tau) in scan.values().into_iter().enumerate() {
        let mut items = Vec::new();
        if tau > 0.0 {
            items.push(TimedItem::drive(0.0, tau, drive.clone()));
            if let Some(beam) = &beam {
                items.push(TimedItem::address(0.0, tau, beam.clone()));
            }
        }
        let populations = point_populations(document, items, mode, point)?;
        table.push(tau, &populations);
    }
    Ok(table)
}

/// The detection-error "dashed line" construction: pushes every row of an
/// ideal table through the per-atom misclassification channel.
pub fn detection_transform(
    table: &ResultTable,
    eps_g_to_r: f64,
    eps_r_to_g: f64,
) -> Result<ResultTable, RecipeError> {
    if table.meta.mode != "ideal" {
        return Err(RecipeError::DetectionRequiresIdeal);
    }
    let atoms = table.labels.len().trailing_zeros() as usize;
    let mut out = table.clone();
    out.meta.mode = "ideal+detection".into();
    for row in &mut out.rows {
        let ideal = PopulationTable::ideal(atoms, row.probs.clone());
        let measured = apply_detection_table(&ideal, eps_g_to_r, eps_r_to_g)?;
        row.probs = measured.probabilities().to_vec();
        row.std_errors = measured.std_errors().to_vec();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dark-state phase manipulation
// ---------------------------------------------------------------------------

/// One phase-oscillation curve: P_gg versus the addressing window length,
/// with its damped-sine fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCurve {
    /// Ground-state light shift of the addressed atom, MHz.
    pub shift: f64,
    pub table: ResultTable,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResult {
    pub curves: Vec<PhaseCurve>,
    /// Fitted oscillation frequency against the applied shift, when at
    /// least three shifts were run.
    pub frequency_law: Option<LinearFit>,
}

/// Model used for every phase-curve fit: the cosine phase is pinned to
/// zero because the sequence guarantees a P_gg maximum at T = 0.
pub fn phase_fit_model() -> ModelFunction {
    ModelFunction::DampedSine { free_phase: false }
}

/// Builds the fit input from a phase table; shared by the in-process path
/// and CSV re-analysis so both fit bit-identical data.
pub fn phase_fit_series(table: &ResultTable) -> Vec<(f64, f64, f64)> {
    table.fit_series("gg")
}

/// Dark-state phase manipulation: a collective pi excitation, an
/// addressing window of scanned length on atom 2, and a mirror
/// de-excitation pulse. One curve per requested light shift; a linear fit
/// of frequency versus shift when three or more shifts are given.
pub fn experiment_phase_oscillation(
    document: &ExperimentDocument,
    shifts: &[f64],
    mode: RunMode,
) -> Result<PhaseResult, RecipeError> {
    require_atoms(document, 2)?;
    let drive = drive_template(document)?.drive.clone();
    if drive.rabi <= 0.0 {
        return Err(RecipeError::ZeroRabi);
    }
    let beam_template = address_template(document)?.beam.clone();
    let shifts = if shifts.is_empty() {
        vec![beam_template.peak_shift]
    } else {
        shifts.to_vec()
    };
    // Collective pi pulse on the |gg> <-> |s> transition at sqrt(2) Omega.
    let tau_pi = 1.0 / (2.0 * SQRT2 * drive.rabi);

    let mut curves = Vec::with_capacity(shifts.len());
    for &shift in &shifts {
        let scan = scan_or_default(document, "address.duration_us", default_phase_scan(shift))?;
        let beam = AddressingBeam::with_axis(
            beam_template.center,
            shift,
            beam_template.waist,
            beam_template.axis,
        )
        .map_err(|_| RecipeError::Fit(FitError::NonFinite))?;

        let mut table = ResultTable::new(meta_for(document, "phase", mode, &scan.parameter), 2);
        for (point, t_address) in scan.values().into_iter().enumerate() {
            let mut items = vec![TimedItem::drive(0.0, tau_pi, drive.clone())];
            let mut t_deexcite = tau_pi;
            if t_address > 0.0 {
                items.push(TimedItem::address(tau_pi, t_address, beam.clone()));
                t_deexcite += t_address;
            }
            items.push(TimedItem::drive(t_deexcite, tau_pi, drive.clone()));
            let populations = point_populations(document, items, mode, point)?;
            table.push(t_address, &populations);
        }

        let fit_result = fit(&phase_fit_model(), &phase_fit_series(&table))?;
        curves.push(PhaseCurve {
            shift,
            table,
            fit: fit_result,
        });
    }

    let frequency_law = if curves.len() >= 3 {
        let points: Vec<(f64, f64)> = curves
            .iter()
            .map(|c| (c.shift, c.fit.params[3].abs()))
            .collect();
        Some(linear_fit(&points)?)
    } else {
        None
    };
    Ok(PhaseResult {
        curves,
        frequency_law,
    })
}

/// Three oscillation periods, 61 points.
fn default_phase_scan(shift: f64) -> ScanBlock {
    let stop = if shift > 0.0 { 3.0 / shift } else { 0.3 };
    ScanBlock {
        parameter: "address.duration_us".into(),
        start: 0.0,
        stop,
        step: stop / 60.0,
    }
}

// ---------------------------------------------------------------------------
// Addressing-beam spectroscopy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SpectroscopyRow {
    /// Beam displacement from the atom along x, um.
    pub dx: f64,
    /// Fitted resonance shift, MHz.
    pub shift: f64,
    /// 1-sigma uncertainty of the resonance center.
    pub shift_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectroscopyResult {
    pub meta: TableMeta,
    pub rows: Vec<SpectroscopyRow>,
    /// 1/e^2 Gaussian fit of shift versus displacement: `[a, x0, w, c]`.
    pub fit: FitResult,
}

impl SpectroscopyResult {
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "# rydsim {}", self.meta.version);
        let _ = writeln!(out, "# recipe = {}", self.meta.recipe);
        let _ = writeln!(out, "# mode = {}", self.meta.mode);
        match self.meta.seed {
            Some(seed) => drop(writeln!(out, "# seed = {seed}")),
            None => drop(writeln!(out, "# seed = none")),
        }
        let _ = writeln!(out, "# model_hash = {}", self.meta.model_hash);
        let _ = writeln!(out, "# scan = {}", self.meta.scan_path);
        let _ = writeln!(
            out,
            "# gaussian_fit: a = {}, x0 = {}, w = {}, c = {}",
            self.fit.params[0], self.fit.params[1], self.fit.params[2], self.fit.params[3]
        );
        out.push_str("dx_um,shift_mhz,se_mhz\n");
        for row in &self.rows {
            let _ = writeln!(out, "{},{},{}", row.dx, row.shift, row.shift_se);
        }
        out
    }
}

/// In-silico addressing-beam profilometry: for each beam displacement, a
/// detuning scan of the excitation pulse locates the shifted resonance;
/// the shifts trace the beam's transverse intensity profile and a 1/e^2
/// Gaussian fit recovers its waist.
///
/// The laser must climb by the ground-state light shift to stay resonant,
/// so the reported shift equals the fitted resonance center.
pub fn experiment_spectroscopy(
    document: &ExperimentDocument,
    mode: RunMode,
    detuning_scan: Option<ScanBlock>,
) -> Result<SpectroscopyResult, RecipeError> {
    require_atoms(document, 1)?;
    let drive_block = drive_template(document)?;
    let drive = drive_block.drive.clone();
    if drive.rabi <= 0.0 {
        return Err(RecipeError::ZeroRabi);
    }
    let beam_template = address_template(document)?.beam.clone();
    // Pi pulse unless the template schedules an explicit duration.
    let tau = drive_block.duration.unwrap_or(1.0 / (2.0 * drive.rabi));

    let outer = scan_or_default(
        document,
        "address.center_um.x",
        ScanBlock {
            parameter: "address.center_um.x".into(),
            start: -4.0,
            stop: 4.0,
            step: 0.25,
        },
    )?;
    let inner = detuning_scan.unwrap_or(ScanBlock {
        parameter: "drive.detuning_mhz".into(),
        start: -2.0,
        stop: beam_template.peak_shift + 2.0,
        step: 0.25,
    });

    let atom = document.model.geometry.positions()[0];
    let mut rows = Vec::new();
    for (outer_idx, center_x) in outer.values().into_iter().enumerate() {
        let beam = AddressingBeam::with_axis(
            rydsim_core::Vec3::new(center_x, atom.y, atom.z),
            beam_template.peak_shift,
            beam_template.waist,
            beam_template.axis,
        )
        .map_err(|_| RecipeError::Fit(FitError::NonFinite))?;

        let mut scan_points = Vec::new();
        for (inner_idx, detuning) in inner.values().into_iter().enumerate() {
            let mut detuned = drive.clone();
            detuned.detuning = detuning;
            let items = vec![
                TimedItem::drive(0.0, tau, detuned),
                TimedItem::address(0.0, tau, beam.clone()),
            ];
            let point = outer_idx * inner.len() + inner_idx;
            let populations = point_populations(document, items, mode, point)?;
            scan_points.push((
                detuning,
                populations.marginal(0, rydsim_core::hilbert::Level::Rydberg)?,
            ));
        }

        let dx = center_x - atom.x;
        let (center, se) = find_resonance(&scan_points, tau)
            .map_err(|source| RecipeError::ResonanceAt { dx, source })?;
        rows.push(SpectroscopyRow {
            dx,
            shift: center,
            shift_se: se,
        });
    }

    // Unweighted Gaussian fit of the beam profile; the per-point resonance
    // errors are near zero on exact data and are reported alongside.
    let data: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.dx, r.shift, 1.0)).collect();
    let fit_result = fit(&ModelFunction::Gaussian1e2, &data)?;

    Ok(SpectroscopyResult {
        meta: meta_for(document, "spectroscopy", mode, &outer.parameter),
        rows,
        fit: fit_result,
    })
}

// ---------------------------------------------------------------------------
// Generic schedule evolution
// ---------------------------------------------------------------------------

/// Runs the document's declared schedule as-is and reports populations at
/// the requested sample times (`scan_value` column holds the time).
pub fn experiment_evolve(
    document: &ExperimentDocument,
    samples: &[f64],
    mode: RunMode,
) -> Result<ResultTable, RecipeError> {
    let atoms = document.model.atom_count();
    let mut table = ResultTable::new(meta_for(document, "evolve", mode, "time_us"), atoms);
    match mode {
        RunMode::Ideal => {
            let sequence = document.declared_sequence()?;
            let state0 = QuantumState::all_ground(atoms);
            let trajectory = run_sequence(
                &state0,
                &sequence,
                &document.model,
                document.model.geometry.positions(),
                samples,
            )?;
            for &t in samples {
                let state = trajectory
                    .iter()
                    .find(|(bt, _)| (bt - t).abs() <= 1e-9)
                    .map(|(_, s)| s)
                    .expect("sample times are trajectory boundaries");
                table.push(t, &state.populations()?);
            }
        }
        RunMode::Sampled => {
            for (t, populations) in samples.iter().zip(run_monte_carlo(document, samples)?) {
                table.push(*t, &populations);
            }
        }
    }
    Ok(table)
}
