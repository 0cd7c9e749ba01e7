//! Desk-scale simulator of few-atom Rydberg pulse-sequence experiments.
//!
//! The crate models a register of single atoms in optical microtraps driven
//! by a global ground-to-Rydberg excitation laser, with an optional tightly
//! focused addressing beam that light-shifts the ground state of one site.
//! It covers:
//!
//! - closed-form field and interaction evaluations ([`model`]),
//! - state vectors over the `{g, r}` product basis ([`hilbert`]),
//! - piecewise-constant Hamiltonians and exact segment propagation
//!   ([`hamiltonian`]),
//! - a validated text format for experiment descriptions ([`sequence`]),
//! - shot-by-shot measurement noise: thermal motion, projective sampling,
//!   state-detection errors ([`noise`]),
//! - nonlinear least-squares fits of the standard line shapes ([`fit`]).
//!
//! # Units
//!
//! All public interfaces exchange ordinary (not angular) frequencies in MHz,
//! lengths in micrometers and times in microseconds. Energies are stored as
//! `E/h` in MHz, so Planck's constant never appears numerically. Conversion
//! to angular units (rad/us, one factor of 2*pi) happens exactly once,
//! inside the Hamiltonian builder.

pub mod fit;
pub mod hamiltonian;
pub mod hilbert;
pub mod model;
pub mod noise;
pub mod sequence;

pub use num_complex::Complex64 as C64;

/// 3-vector in simulation units (micrometers for positions, rad/um for
/// wavevectors, um/us for velocities).
pub type Vec3 = nalgebra::Vector3<f64>;
