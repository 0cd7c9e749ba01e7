//! State vectors over the N-atom `{g, r}` product basis.
//!
//! Labeling convention: a basis configuration is written as a string of
//! `g`/`r` letters with atom 0 leftmost, and indexed as
//! `sum_i b_i * 2^(N-1-i)` with `b_i = 1` for `r`. For two atoms this
//! orders the basis as `gg, gr, rg, rr`, which is also lexicographic.

use num_complex::Complex64 as C64;
use thiserror::Error;

/// Norm slack tolerated on states handed to observables; evolution keeps
/// states unitary to far better than this.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HilbertError {
    #[error("basis label must contain only 'g' and 'r', got {0:?}")]
    BadLabel(String),
    #[error("label length {got} does not match atom count {expected}")]
    LabelLength { got: usize, expected: usize },
    #[error("amplitude vector length {got} is not 2^{atoms}")]
    BadDimension { got: usize, atoms: usize },
    #[error("state norm {0} deviates from 1 beyond tolerance")]
    NotNormalized(f64),
    #[error("atom index {index} out of range for {atoms} atoms")]
    AtomOutOfRange { index: usize, atoms: usize },
}

/// Single-atom level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Ground,
    Rydberg,
}

/// One product-basis configuration, stored as the bit pattern of its index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisConfig {
    bits: usize,
    atoms: usize,
}

impl BasisConfig {
    pub fn from_index(index: usize, atoms: usize) -> Self {
        debug_assert!(index < 1 << atoms);
        Self { bits: index, atoms }
    }

    pub fn index(&self) -> usize {
        self.bits
    }

    pub fn atom_count(&self) -> usize {
        self.atoms
    }

    pub fn level(&self, atom: usize) -> Level {
        if self.bits >> (self.atoms - 1 - atom) & 1 == 1 {
            Level::Rydberg
        } else {
            Level::Ground
        }
    }

    /// Number of atoms in `|r>`.
    pub fn excitation_count(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn label(&self) -> String {
        (0..self.atoms)
            .map(|i| match self.level(i) {
                Level::Ground => 'g',
                Level::Rydberg => 'r',
            })
            .collect()
    }
}

/// Index of the configuration written as a `g`/`r` string, atom 0 leftmost.
pub fn basis_index(label: &str) -> Result<usize, HilbertError> {
    if label.is_empty() {
        return Err(HilbertError::BadLabel(label.into()));
    }
    let mut index = 0usize;
    for c in label.chars() {
        index = (index << 1)
            | match c {
                'g' => 0,
                'r' => 1,
                _ => return Err(HilbertError::BadLabel(label.into())),
            };
    }
    Ok(index)
}

/// Parses a label against a fixed atom count.
pub fn basis_config(label: &str, atoms: usize) -> Result<BasisConfig, HilbertError> {
    if label.len() != atoms {
        return Err(HilbertError::LabelLength {
            got: label.len(),
            expected: atoms,
        });
    }
    Ok(BasisConfig {
        bits: basis_index(label)?,
        atoms,
    })
}

/// Label of the configuration with the given basis index.
pub fn basis_label(index: usize, atoms: usize) -> String {
    BasisConfig::from_index(index, atoms).label()
}

/// Complex amplitude vector over the 2^N product basis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amplitudes: Vec<C64>,
    atoms: usize,
}

impl QuantumState {
    /// The basis state `|config>`.
    pub fn basis_state(atoms: usize, index: usize) -> Self {
        let mut amplitudes = vec![C64::ZERO; 1 << atoms];
        amplitudes[index] = C64::ONE;
        Self { amplitudes, atoms }
    }

    /// All atoms in `|g>`.
    pub fn all_ground(atoms: usize) -> Self {
        Self::basis_state(atoms, 0)
    }

    /// Wraps an amplitude vector, checking dimension and normalization.
    pub fn from_amplitudes(amplitudes: Vec<C64>, atoms: usize) -> Result<Self, HilbertError> {
        if amplitudes.len() != 1 << atoms {
            return Err(HilbertError::BadDimension {
                got: amplitudes.len(),
                atoms,
            });
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(HilbertError::NotNormalized(norm));
        }
        Ok(Self { amplitudes, atoms })
    }

    pub(crate) fn from_amplitudes_unchecked(amplitudes: Vec<C64>, atoms: usize) -> Self {
        Self { amplitudes, atoms }
    }

    pub fn atom_count(&self) -> usize {
        self.atoms
    }

    pub fn dimension(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    fn check_norm(&self) -> Result<(), HilbertError> {
        let norm = self.norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            Err(HilbertError::NotNormalized(norm))
        } else {
            Ok(())
        }
    }

    /// `P(config) = |amplitude(config)|^2` for every configuration.
    pub fn populations(&self) -> Result<PopulationTable, HilbertError> {
        self.check_norm()?;
        let probs: Vec<f64> = self.amplitudes.iter().map(|a| a.norm_sqr()).collect();
        Ok(PopulationTable::ideal(self.atoms, probs))
    }

    /// Marginal probability of finding `atom` in `level`.
    pub fn single_atom_population(&self, atom: usize, level: Level) -> Result<f64, HilbertError> {
        if atom >= self.atoms {
            return Err(HilbertError::AtomOutOfRange {
                index: atom,
                atoms: self.atoms,
            });
        }
        self.check_norm()?;
        let bit = self.atoms - 1 - atom;
        let want = match level {
            Level::Ground => 0,
            Level::Rydberg => 1,
        };
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(idx, _)| idx >> bit & 1 == want)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }
}

/// Per-configuration probabilities, either exact or sampled. Sampled tables
/// carry the shot count and binomial standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTable {
    atoms: usize,
    probs: Vec<f64>,
    std_errors: Vec<f64>,
    shots: Option<u64>,
}

impl PopulationTable {
    /// Exact probabilities (no sampling): zero standard errors.
    pub fn ideal(atoms: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), 1 << atoms);
        let std_errors = vec![0.0; probs.len()];
        Self {
            atoms,
            probs,
            std_errors,
            shots: None,
        }
    }

    /// Frequencies from per-configuration counts over `shots` repetitions,
    /// with `sqrt(p(1-p)/shots)` standard errors.
    pub fn from_counts(atoms: usize, counts: &[u64], shots: u64) -> Self {
        debug_assert_eq!(counts.len(), 1 << atoms);
        debug_assert_eq!(counts.iter().sum::<u64>(), shots);
        let n = shots as f64;
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let std_errors = probs.iter().map(|&p| (p * (1.0 - p) / n).sqrt()).collect();
        Self {
            atoms,
            probs,
            std_errors,
            shots: Some(shots),
        }
    }

    /// Table with explicit probabilities and errors (detection-channel
    /// transforms preserve the original shot metadata).
    pub fn with_values(
        atoms: usize,
        probs: Vec<f64>,
        std_errors: Vec<f64>,
        shots: Option<u64>,
    ) -> Self {
        debug_assert_eq!(probs.len(), 1 << atoms);
        debug_assert_eq!(std_errors.len(), probs.len());
        Self {
            atoms,
            probs,
            std_errors,
            shots,
        }
    }

    pub fn atom_count(&self) -> usize {
        self.atoms
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn std_errors(&self) -> &[f64] {
        &self.std_errors
    }

    pub fn shots(&self) -> Option<u64> {
        self.shots
    }

    pub fn probability(&self, label: &str) -> Result<f64, HilbertError> {
        Ok(self.probs[basis_config(label, self.atoms)?.index()])
    }

    /// Marginal probability of `atom` being reported in `level`.
    pub fn marginal(&self, atom: usize, level: Level) -> Result<f64, HilbertError> {
        if atom >= self.atoms {
            return Err(HilbertError::AtomOutOfRange {
                index: atom,
                atoms: self.atoms,
            });
        }
        let bit = self.atoms - 1 - atom;
        let want = match level {
            Level::Ground => 0,
            Level::Rydberg => 1,
        };
        Ok(self
            .probs
            .iter()
            .enumerate()
            .filter(|(idx, _)| idx >> bit & 1 == want)
            .map(|(_, p)| p)
            .sum())
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}
