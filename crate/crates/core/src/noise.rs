//! Shot-by-shot stochastic layer: thermal atom positions and velocities,
//! state-preparation efficiency, projective measurement sampling and the
//! per-atom state-detection error channel.
//!
//! Reproducibility contract: shot `s` of a run with seed `seed` draws from
//! an independent ChaCha8 stream (`ChaCha8Rng::seed_from_u64(seed)` with
//! `set_stream(s)`), and aggregation sums integer counts, so results are
//! bit-identical across runs and across worker counts. The generator choice
//! is part of the output format and is pinned via the lockfile.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::hamiltonian::{run_sequence_masked, EvolveError};
use crate::hilbert::{BasisConfig, HilbertError, PopulationTable, QuantumState};
use crate::model::{AtomGeometry, TrapModel};
use crate::sequence::{ExperimentDocument, ScheduleError};
use crate::Vec3;

/// `k_B * 1 uK / (h * 1 MHz)`: thermal energy over trap depth, per uK per MHz.
const KB_UK_OVER_H_MHZ: f64 = 1.380_649e-29 / 6.626_070_15e-28;

/// `k_B * 1 uK / m(87Rb)` in (um/us)^2; 87Rb mass 1.443_160_9e-25 kg.
const KB_UK_OVER_M_RB87: f64 = 1.380_649e-29 / 1.443_160_9e-25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("schedule invalid: {0}")]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("detection probability {0} outside [0,1]")]
    BadProbability(f64),
}

/// Stochastic settings of a run. The detection-error defaults are
/// placeholders, not measured values; quantitative studies should set them
/// explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Atom temperature in uK.
    pub temperature_uk: f64,
    /// Repetitions per data point.
    pub shots: u64,
    /// Probability that a ground-state atom is reported as Rydberg.
    pub eps_g_to_r: f64,
    /// Probability that a Rydberg atom is reported as ground.
    pub eps_r_to_g: f64,
    /// Per-atom probability that the intended excitation dynamics apply;
    /// with probability `1 - prep_efficiency` the atom sits frozen in `|g>`
    /// for the whole sequence. Set to about 0.9 to emulate a finite
    /// excitation efficiency.
    pub prep_efficiency: f64,
    pub rng_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            temperature_uk: 50.0,
            shots: 100,
            eps_g_to_r: 0.05,
            eps_r_to_g: 0.05,
            prep_efficiency: 1.0,
            rng_seed: 0,
        }
    }
}

/// Thermal initial conditions of one shot, drawn once per repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotContext {
    positions: Vec<Vec3>,
    velocities: Vec<Vec3>,
}

impl ShotContext {
    pub fn initial_positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    /// Ballistic positions at time `t` (traps are off during the sequence).
    pub fn positions_at(&self, t: f64) -> Vec<Vec3> {
        self.positions
            .iter()
            .zip(&self.velocities)
            .map(|(p, v)| p + v * t)
            .collect()
    }
}

/// Radial position spread in a harmonic expansion of the Gaussian trap:
/// `(w/2) sqrt(k_B T / U0)`, in um.
pub fn sigma_radial(trap: &TrapModel, temperature_uk: f64) -> f64 {
    trap.waist / 2.0 * (KB_UK_OVER_H_MHZ * temperature_uk / trap.depth).sqrt()
}

/// One-axis Maxwell-Boltzmann velocity spread `sqrt(k_B T / m)` in um/us.
pub fn sigma_velocity(temperature_uk: f64) -> f64 {
    (KB_UK_OVER_M_RB87 * temperature_uk).sqrt()
}

/// Draws positions (Gaussian around the trap centers, axial spread scaled
/// by the trap aspect ratio along z) and Maxwell-Boltzmann velocities.
/// Zero temperature yields exact trap centers and zero velocities.
pub fn sample_positions_velocities(
    noise: &NoiseModel,
    trap: &TrapModel,
    geometry: &AtomGeometry,
    rng: &mut impl Rng,
) -> ShotContext {
    let sr = sigma_radial(trap, noise.temperature_uk);
    let sa = trap.axial_aspect * sr;
    let sv = sigma_velocity(noise.temperature_uk);
    let mut normal = || -> f64 { StandardNormal.sample(rng) };

    let positions = geometry
        .positions()
        .iter()
        .map(|center| center + Vec3::new(sr * normal(), sr * normal(), sa * normal()))
        .collect();
    let velocities = (0..geometry.atom_count())
        .map(|_| Vec3::new(sv * normal(), sv * normal(), sv * normal()))
        .collect();
    ShotContext {
        positions,
        velocities,
    }
}

/// Projective measurement: one configuration drawn from the populations.
pub fn sample_measurement(
    state: &QuantumState,
    rng: &mut impl Rng,
) -> Result<BasisConfig, NoiseError> {
    let table = state.populations()?;
    let probs = table.probabilities();
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (index, &p) in probs.iter().enumerate() {
        u -= p;
        if u < 0.0 {
            return Ok(BasisConfig::from_index(index, state.atom_count()));
        }
    }
    Ok(BasisConfig::from_index(probs.len() - 1, state.atom_count()))
}

fn check_probability(p: f64) -> Result<f64, NoiseError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(NoiseError::BadProbability(p))
    }
}

/// Detection channel, sampled form: each atom's reported level flips
/// independently with the corresponding error probability.
pub fn apply_detection_sampled(
    config: BasisConfig,
    eps_g_to_r: f64,
    eps_r_to_g: f64,
    rng: &mut impl Rng,
) -> Result<BasisConfig, NoiseError> {
    check_probability(eps_g_to_r)?;
    check_probability(eps_r_to_g)?;
    let atoms = config.atom_count();
    let mut bits = 0usize;
    for atom in 0..atoms {
        let is_r = matches!(config.level(atom), crate::hilbert::Level::Rydberg);
        let flip_p = if is_r { eps_r_to_g } else { eps_g_to_r };
        let reported_r = is_r ^ (rng.random::<f64>() < flip_p);
        bits = bits << 1 | reported_r as usize;
    }
    Ok(BasisConfig::from_index(bits, atoms))
}

/// Detection channel, table form: applies the per-atom column-stochastic
/// matrix `M = [[1-e_gr, e_rg], [e_gr, 1-e_rg]]` as `M (x) ... (x) M` to the
/// population vector. Probability is conserved exactly; standard errors are
/// rebuilt from the transformed frequencies when a shot count is attached.
pub fn apply_detection_table(
    table: &PopulationTable,
    eps_g_to_r: f64,
    eps_r_to_g: f64,
) -> Result<PopulationTable, NoiseError> {
    check_probability(eps_g_to_r)?;
    check_probability(eps_r_to_g)?;
    let atoms = table.atom_count();
    let dim = 1usize << atoms;
    // M[measured][true] over {g = 0, r = 1}.
    let m = [
        [1.0 - eps_g_to_r, eps_r_to_g],
        [eps_g_to_r, 1.0 - eps_r_to_g],
    ];

    let mut measured = vec![0.0f64; dim];
    for (true_idx, &p) in table.probabilities().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (meas_idx, slot) in measured.iter_mut().enumerate() {
            let mut weight = 1.0;
            for atom in 0..atoms {
                let bit = atoms - 1 - atom;
                let t = true_idx >> bit & 1;
                let o = meas_idx >> bit & 1;
                weight *= m[o][t];
            }
            *slot += weight * p;
        }
    }

    let std_errors = match table.shots() {
        Some(n) => measured
            .iter()
            .map(|&p| (p * (1.0 - p) / n as f64).sqrt())
            .collect(),
        None => vec![0.0; dim],
    };
    Ok(PopulationTable::with_values(
        atoms,
        measured,
        std_errors,
        table.shots(),
    ))
}

/// Runs the full Monte Carlo experiment described by a document and returns
/// one sampled population table per requested observation time.
///
/// Per shot: draw thermal initial conditions, freeze each atom in `|g>`
/// with probability `1 - prep_efficiency`, propagate the declared schedule
/// with per-segment ballistic positions, then draw one projective
/// measurement per observation time and pass it through the detection
/// channel. Shots run in parallel; the result is deterministic for a fixed
/// seed regardless of the worker count.
pub fn run_monte_carlo(
    document: &ExperimentDocument,
    times: &[f64],
) -> Result<Vec<PopulationTable>, NoiseError> {
    let sequence = document.declared_sequence()?;
    let model = &document.model;
    let noise = &document.noise;
    check_probability(noise.eps_g_to_r)?;
    check_probability(noise.eps_r_to_g)?;
    check_probability(noise.prep_efficiency)?;

    let atoms = model.atom_count();
    let dim = 1usize << atoms;
    let zero = || vec![0u64; dim * times.len()];

    let counts = (0..noise.shots)
        .into_par_iter()
        .try_fold(zero, |mut acc, shot| -> Result<Vec<u64>, NoiseError> {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
            rng.set_stream(shot);

            let ctx = sample_positions_velocities(noise, &model.trap, &model.geometry, &mut rng);
            let mask: Vec<bool> = (0..atoms)
                .map(|_| rng.random::<f64>() < noise.prep_efficiency)
                .collect();

            let trajectory = run_sequence_masked(
                &QuantumState::all_ground(atoms),
                &sequence,
                model,
                &|t: f64| ctx.positions_at(t),
                times,
                Some(&mask),
            )?;

            for (slot, &t) in times.iter().enumerate() {
                let state = trajectory
                    .iter()
                    .find(|(bt, _)| (bt - t).abs() <= 1e-9)
                    .map(|(_, s)| s)
                    .expect("requested time is a trajectory boundary");
                let config = sample_measurement(state, &mut rng)?;
                let reported =
                    apply_detection_sampled(config, noise.eps_g_to_r, noise.eps_r_to_g, &mut rng)?;
                acc[slot * dim + reported.index()] += 1;
            }
            Ok(acc)
        })
        .try_reduce(zero, |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            Ok(a)
        })?;

    Ok(times
        .iter()
        .enumerate()
        .map(|(slot, _)| {
            PopulationTable::from_counts(atoms, &counts[slot * dim..(slot + 1) * dim], noise.shots)
        })
        .collect())
}
