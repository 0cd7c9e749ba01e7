//! The `.ryx` experiment-description format: parsing, validation and
//! serialization, plus the validated pulse-schedule type.
//!
//! The format is a line-oriented sectioned key-value text. Sections are
//! bracketed names, entries are `key = value`, vectors are `(x,y,z)`,
//! lists are semicolon-separated and `#` starts a comment. Numeric keys
//! carry unit suffixes (`_us`, `_um`, `_mhz`, ...). The full grammar lives
//! in `docs/format.ebnf`.
//!
//! ```text
//! [atoms]
//! positions_um = (0,0,0); (3,0,0)
//! level = 59D3/2
//!
//! [drive]
//! duration_us = 0.5
//! rabi_mhz = 1.0
//!
//! [address]
//! center_um = (3,0,0)
//! peak_shift_mhz = 10
//! waist_um = 1.3
//! ```
//!
//! Unknown keys are errors by default (they usually mean a missing unit
//! suffix); lenient mode demotes them to warnings. Every diagnostic carries
//! a stable code and a 1-based line:column position.

use std::fmt;

use thiserror::Error;

use crate::model::{
    effective_wavevector, AddressingBeam, AtomGeometry, BeamGeometry, ExperimentModel, GlobalDrive,
    ModelError, RydbergLevel, TrapModel, DEFAULT_MAX_ATOMS,
};
use crate::noise::NoiseModel;
use crate::Vec3;

// ---------------------------------------------------------------------------
// Schedule types
// ---------------------------------------------------------------------------

/// One scheduled pulse: a global drive or an addressing-beam window.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceItem {
    Drive(GlobalDrive),
    Address(AddressingBeam),
}

/// A pulse with its start time and duration, both in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedItem {
    pub t_start: f64,
    pub duration: f64,
    pub item: SequenceItem,
}

impl TimedItem {
    pub fn drive(t_start: f64, duration: f64, drive: GlobalDrive) -> Self {
        Self {
            t_start,
            duration,
            item: SequenceItem::Drive(drive),
        }
    }

    pub fn address(t_start: f64, duration: f64, beam: AddressingBeam) -> Self {
        Self {
            t_start,
            duration,
            item: SequenceItem::Address(beam),
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("item {index}: start time must be >= 0, got {t_start}")]
    NegativeStart { index: usize, t_start: f64 },
    #[error("item {index}: duration must be > 0, got {duration}")]
    NonPositiveDuration { index: usize, duration: f64 },
    #[error("global drives {first} and {second} overlap")]
    OverlappingDrives { first: usize, second: usize },
}

/// Ordered, validated piecewise-constant schedule. Global-drive intervals
/// never overlap (half-open, so touching edges are fine); addressing windows
/// may overlap anything.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseSequence {
    items: Vec<TimedItem>,
}

impl PulseSequence {
    pub fn new(items: Vec<TimedItem>) -> Result<Self, ScheduleError> {
        for (index, item) in items.iter().enumerate() {
            if !item.t_start.is_finite() || item.t_start < 0.0 {
                return Err(ScheduleError::NegativeStart {
                    index,
                    t_start: item.t_start,
                });
            }
            if !item.duration.is_finite() || item.duration <= 0.0 {
                return Err(ScheduleError::NonPositiveDuration {
                    index,
                    duration: item.duration,
                });
            }
        }
        // Stable sort keeps declaration order among equal start times.
        let mut sorted = items;
        sorted.sort_by(|a, b| a.t_start.partial_cmp(&b.t_start).expect("finite times"));

        let drives: Vec<(usize, f64, f64)> = sorted
            .iter()
            .enumerate()
            .filter(|(_, it)| matches!(it.item, SequenceItem::Drive(_)))
            .map(|(i, it)| (i, it.t_start, it.t_end()))
            .collect();
        for pair in drives.windows(2) {
            let (first, _, end) = pair[0];
            let (second, start, _) = pair[1];
            if start < end {
                return Err(ScheduleError::OverlappingDrives { first, second });
            }
        }
        Ok(Self { items: sorted })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[TimedItem] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.items.iter().map(TimedItem::t_end).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Stable diagnostic codes; printed as `E_*` for errors and `W_*`-style
/// warnings in lenient mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagCode {
    Empty,
    Syntax,
    UnknownSection,
    DuplicateSection,
    MissingSection,
    UnknownKey,
    DuplicateKey,
    MissingKey,
    BadValue,
    Conflict,
    Range,
    Overlap,
    ScanPath,
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagCode::Empty => "E_EMPTY",
            DiagCode::Syntax => "E_SYNTAX",
            DiagCode::UnknownSection => "E_UNKNOWN_SECTION",
            DiagCode::DuplicateSection => "E_DUPLICATE_SECTION",
            DiagCode::MissingSection => "E_MISSING_SECTION",
            DiagCode::UnknownKey => "E_UNKNOWN_KEY",
            DiagCode::DuplicateKey => "E_DUPLICATE_KEY",
            DiagCode::MissingKey => "E_MISSING_KEY",
            DiagCode::BadValue => "E_BAD_VALUE",
            DiagCode::Conflict => "E_CONFLICT",
            DiagCode::Range => "E_RANGE",
            DiagCode::Overlap => "E_OVERLAP",
            DiagCode::ScanPath => "E_SCAN_PATH",
        }
    }
}

/// A parse or validation finding with its 1-based source position.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{} at {line}:{col}: {message}", code.as_str())]
pub struct Diagnostic {
    pub code: DiagCode,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl Diagnostic {
    fn new(code: DiagCode, line: usize, col: usize, message: impl Into<String>) -> Self {
        Self {
            code,
            line,
            col,
            message: message.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Document model
// ---------------------------------------------------------------------------

/// A drive block: parameters plus optional scheduling. Blocks without a
/// duration act as templates for the turnkey experiment recipes, which
/// control pulse timing themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedDrive {
    pub t_start: f64,
    pub duration: Option<f64>,
    pub drive: GlobalDrive,
}

/// An address block: beam geometry plus optional scheduling window.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedAddress {
    pub t_start: f64,
    pub duration: Option<f64>,
    pub beam: AddressingBeam,
}

/// Scan request over a numeric parameter path, inclusive endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanBlock {
    pub parameter: String,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl ScanBlock {
    /// Number of points: `(stop - start)/step + 1`, tolerant of float noise
    /// in the division, truncating when the range is not a whole multiple.
    /// Never zero: the start point is always included.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        let ratio = (self.stop - self.start) / self.step;
        let rounded = ratio.round();
        let steps = if (ratio - rounded).abs() < 1e-6 * rounded.abs().max(1.0) {
            rounded
        } else {
            ratio.floor()
        };
        steps.max(0.0) as usize + 1
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.start + i as f64 * self.step)
            .collect()
    }
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDocument {
    pub model: ExperimentModel,
    pub drives: Vec<TimedDrive>,
    pub addresses: Vec<TimedAddress>,
    pub noise: NoiseModel,
    pub scan: Option<ScanBlock>,
}

impl ExperimentDocument {
    /// The schedule declared by blocks that carry a duration.
    pub fn declared_sequence(&self) -> Result<PulseSequence, ScheduleError> {
        let mut items = Vec::new();
        for d in &self.drives {
            if let Some(duration) = d.duration {
                items.push(TimedItem::drive(d.t_start, duration, d.drive.clone()));
            }
        }
        for a in &self.addresses {
            if let Some(duration) = a.duration {
                items.push(TimedItem::address(a.t_start, duration, a.beam.clone()));
            }
        }
        PulseSequence::new(items)
    }

    /// Reads a numeric parameter path such as `drive.duration_us`,
    /// `address[1].center_um.x` or `noise.shots`.
    pub fn get_path(&self, path: &str) -> Result<f64, PathError> {
        let parsed = ParamPath::parse(path)?;
        match parsed.integer_field() {
            Some(IntField::Shots) => return Ok(self.noise.shots as f64),
            Some(IntField::Seed) => return Ok(self.noise.rng_seed as f64),
            None => {}
        }
        // The lookup is shared with the mutable variant through a clone;
        // the document is small and paths are resolved rarely.
        self.clone().slot_mut(&parsed).map(|slot| *slot)
    }

    /// Writes a numeric parameter path; range rules of the parser apply.
    pub fn set_path(&mut self, path: &str, value: f64) -> Result<(), PathError> {
        if !value.is_finite() {
            return Err(PathError::BadValue {
                path: path.into(),
                value,
            });
        }
        let parsed = ParamPath::parse(path)?;
        parsed.check_range(path, value)?;
        match parsed.integer_field() {
            Some(IntField::Shots) => self.noise.shots = value as u64,
            Some(IntField::Seed) => self.noise.rng_seed = value as u64,
            None => *self.slot_mut(&parsed)? = value,
        }
        Ok(())
    }

    fn slot_mut(&mut self, path: &ParamPath) -> Result<&mut f64, PathError> {
        let missing = || PathError::Unresolved(path.display());
        match path.section.as_str() {
            "drive" => {
                let item = self.drives.get_mut(path.index).ok_or_else(missing)?;
                match (path.key.as_str(), path.component) {
                    ("t_start_us", None) => Ok(&mut item.t_start),
                    ("duration_us", None) => Ok(item.duration.get_or_insert(0.0)),
                    ("rabi_mhz", None) => Ok(&mut item.drive.rabi),
                    ("detuning_mhz", None) => Ok(&mut item.drive.detuning),
                    ("phase_rad", None) => Ok(&mut item.drive.drive_phase),
                    ("k_rad_um", Some(c)) => Ok(&mut item.drive.phase_wavevector[c]),
                    _ => Err(missing()),
                }
            }
            "address" => {
                let item = self.addresses.get_mut(path.index).ok_or_else(missing)?;
                match (path.key.as_str(), path.component) {
                    ("t_start_us", None) => Ok(&mut item.t_start),
                    ("duration_us", None) => Ok(item.duration.get_or_insert(0.0)),
                    ("peak_shift_mhz", None) => Ok(&mut item.beam.peak_shift),
                    ("waist_um", None) => Ok(&mut item.beam.waist),
                    ("center_um", Some(c)) => Ok(&mut item.beam.center[c]),
                    _ => Err(missing()),
                }
            }
            "noise" if path.index == 0 => match (path.key.as_str(), path.component) {
                ("temperature_uk", None) => Ok(&mut self.noise.temperature_uk),
                ("eps_g_to_r", None) => Ok(&mut self.noise.eps_g_to_r),
                ("eps_r_to_g", None) => Ok(&mut self.noise.eps_r_to_g),
                ("prep_efficiency", None) => Ok(&mut self.noise.prep_efficiency),
                _ => Err(missing()),
            },
            "trap" if path.index == 0 => match (path.key.as_str(), path.component) {
                ("waist_um", None) => Ok(&mut self.model.trap.waist),
                ("depth_mhz", None) => Ok(&mut self.model.trap.depth),
                ("axial_aspect", None) => Ok(&mut self.model.trap.axial_aspect),
                _ => Err(missing()),
            },
            _ => Err(missing()),
        }
    }

    /// Serializes to canonical `.ryx` text; `parse` of the output
    /// reconstructs a structurally equal document.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("[atoms]\n");
        let positions = self
            .model
            .geometry
            .positions()
            .iter()
            .map(fmt_vec)
            .collect::<Vec<_>>()
            .join("; ");
        out.push_str(&format!("positions_um = {positions}\n"));
        out.push_str(&format!("level = {}\n", self.model.level.label));
        out.push_str(&format!("c6_mhz_um6 = {}\n", fmt_f64(self.model.level.c6)));

        out.push_str("\n[trap]\n");
        out.push_str(&format!("waist_um = {}\n", fmt_f64(self.model.trap.waist)));
        out.push_str(&format!("depth_mhz = {}\n", fmt_f64(self.model.trap.depth)));
        out.push_str(&format!(
            "axial_aspect = {}\n",
            fmt_f64(self.model.trap.axial_aspect)
        ));

        for d in &self.drives {
            out.push_str("\n[drive]\n");
            out.push_str(&format!("t_start_us = {}\n", fmt_f64(d.t_start)));
            if let Some(duration) = d.duration {
                out.push_str(&format!("duration_us = {}\n", fmt_f64(duration)));
            }
            out.push_str(&format!("rabi_mhz = {}\n", fmt_f64(d.drive.rabi)));
            out.push_str(&format!("detuning_mhz = {}\n", fmt_f64(d.drive.detuning)));
            out.push_str(&format!("phase_rad = {}\n", fmt_f64(d.drive.drive_phase)));
            out.push_str(&format!(
                "k_rad_um = {}\n",
                fmt_vec(&d.drive.phase_wavevector)
            ));
        }

        for a in &self.addresses {
            out.push_str("\n[address]\n");
            out.push_str(&format!("t_start_us = {}\n", fmt_f64(a.t_start)));
            if let Some(duration) = a.duration {
                out.push_str(&format!("duration_us = {}\n", fmt_f64(duration)));
            }
            out.push_str(&format!("center_um = {}\n", fmt_vec(&a.beam.center)));
            out.push_str(&format!(
                "peak_shift_mhz = {}\n",
                fmt_f64(a.beam.peak_shift)
            ));
            out.push_str(&format!("waist_um = {}\n", fmt_f64(a.beam.waist)));
            out.push_str(&format!("axis = {}\n", fmt_vec(&a.beam.axis)));
        }

        out.push_str("\n[noise]\n");
        out.push_str(&format!(
            "temperature_uk = {}\n",
            fmt_f64(self.noise.temperature_uk)
        ));
        out.push_str(&format!("shots = {}\n", self.noise.shots));
        out.push_str(&format!(
            "eps_g_to_r = {}\n",
            fmt_f64(self.noise.eps_g_to_r)
        ));
        out.push_str(&format!(
            "eps_r_to_g = {}\n",
            fmt_f64(self.noise.eps_r_to_g)
        ));
        out.push_str(&format!(
            "prep_efficiency = {}\n",
            fmt_f64(self.noise.prep_efficiency)
        ));
        out.push_str(&format!("rng_seed = {}\n", self.noise.rng_seed));

        if let Some(scan) = &self.scan {
            out.push_str("\n[scan]\n");
            out.push_str(&format!("parameter = {}\n", scan.parameter));
            out.push_str(&format!("start = {}\n", fmt_f64(scan.start)));
            out.push_str(&format!("stop = {}\n", fmt_f64(scan.stop)));
            out.push_str(&format!("step = {}\n", fmt_f64(scan.step)));
        }
        out
    }
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips exactly.
    format!("{v}")
}

fn fmt_vec(v: &Vec3) -> String {
    format!("({},{},{})", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error("malformed parameter path {0:?}")]
    Malformed(String),
    #[error("parameter path {0} does not resolve")]
    Unresolved(String),
    #[error("value {value} out of range for {path}")]
    BadValue { path: String, value: f64 },
}

/// `section[index].key(.component)` with index defaulting to 0.
struct ParamPath {
    section: String,
    index: usize,
    key: String,
    component: Option<usize>,
}

/// Paths that land on integer-typed document fields.
enum IntField {
    Shots,
    Seed,
}

impl ParamPath {
    fn parse(path: &str) -> Result<Self, PathError> {
        let malformed = || PathError::Malformed(path.into());
        let (head, rest) = path.split_once('.').ok_or_else(malformed)?;
        let (section, index) = match head.split_once('[') {
            Some((name, idx)) => {
                let idx = idx.strip_suffix(']').ok_or_else(malformed)?;
                (name, idx.parse::<usize>().map_err(|_| malformed())?)
            }
            None => (head, 0),
        };
        if section.is_empty() || rest.is_empty() {
            return Err(malformed());
        }
        let (key, component) = match rest.split_once('.') {
            Some((key, comp)) => {
                let component = match comp {
                    "x" => 0,
                    "y" => 1,
                    "z" => 2,
                    _ => return Err(malformed()),
                };
                (key, Some(component))
            }
            None => (rest, None),
        };
        Ok(Self {
            section: section.to_string(),
            index,
            key: key.to_string(),
            component,
        })
    }

    fn display(&self) -> String {
        let comp = match self.component {
            Some(0) => ".x",
            Some(1) => ".y",
            Some(2) => ".z",
            _ => "",
        };
        format!("{}[{}].{}{}", self.section, self.index, self.key, comp)
    }

    fn integer_field(&self) -> Option<IntField> {
        if self.section == "noise" && self.index == 0 && self.component.is_none() {
            match self.key.as_str() {
                "shots" => return Some(IntField::Shots),
                "rng_seed" => return Some(IntField::Seed),
                _ => {}
            }
        }
        None
    }

    fn check_range(&self, path: &str, value: f64) -> Result<(), PathError> {
        let bad = || PathError::BadValue {
            path: path.into(),
            value,
        };
        match self.key.as_str() {
            "duration_us" if value <= 0.0 => Err(bad()),
            "t_start_us" | "rabi_mhz" | "peak_shift_mhz" | "temperature_uk" if value < 0.0 => {
                Err(bad())
            }
            "waist_um" | "depth_mhz" | "step" if value <= 0.0 => Err(bad()),
            "axial_aspect" if value < 1.0 => Err(bad()),
            "eps_g_to_r" | "eps_r_to_g" | "prep_efficiency" if !(0.0..=1.0).contains(&value) => {
                Err(bad())
            }
            "shots" if value < 1.0 || value.fract() != 0.0 => Err(bad()),
            "rng_seed" if value < 0.0 || value.fract() != 0.0 => Err(bad()),
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    /// Unknown keys are errors (catches missing unit suffixes).
    Strict,
    /// Unknown keys are warnings.
    Lenient,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub strictness: Strictness,
    pub max_atoms: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            strictness: Strictness::Strict,
            max_atoms: DEFAULT_MAX_ATOMS,
        }
    }
}

/// Strict parse; the common entry point.
pub fn parse(text: &str) -> Result<ExperimentDocument, Diagnostic> {
    parse_with(text, ParseOptions::default()).map(|(doc, _)| doc)
}

/// Parse with options, returning lenient-mode warnings alongside the document.
pub fn parse_with(
    text: &str,
    options: ParseOptions,
) -> Result<(ExperimentDocument, Vec<Diagnostic>), Diagnostic> {
    let raw = RawDocument::scan(text)?;
    raw.into_document(options)
}

#[derive(Debug, Clone)]
enum RawValue {
    Scalar { value: f64, token: String },
    Word(String),
    Vector(Vec3),
    List(Vec<RawValue>),
}

impl RawValue {
    fn type_name(&self) -> &'static str {
        match self {
            RawValue::Scalar { .. } => "number",
            RawValue::Word(_) => "word",
            RawValue::Vector(_) => "vector",
            RawValue::List(_) => "list",
        }
    }
}

#[derive(Debug, Clone)]
struct RawEntry {
    key: String,
    line: usize,
    key_col: usize,
    value_col: usize,
    value: RawValue,
}

#[derive(Debug, Clone)]
struct RawSection {
    name: String,
    line: usize,
    entries: Vec<RawEntry>,
}

struct RawDocument {
    sections: Vec<RawSection>,
}

const SECTION_NAMES: &[&str] = &["atoms", "trap", "drive", "address", "noise", "scan"];

fn known_keys(section: &str) -> &'static [&'static str] {
    match section {
        "atoms" => &["positions_um", "level", "c6_mhz_um6"],
        "trap" => &["waist_um", "depth_mhz", "axial_aspect"],
        "drive" => &[
            "t_start_us",
            "duration_us",
            "rabi_mhz",
            "detuning_mhz",
            "phase_rad",
            "k_rad_um",
            "lambda_red_um",
            "lambda_blue_um",
            "geometry",
            "axis",
        ],
        "address" => &[
            "t_start_us",
            "duration_us",
            "center_um",
            "peak_shift_mhz",
            "power_mw",
            "kappa_mhz_per_mw",
            "waist_um",
            "axis",
        ],
        "noise" => &[
            "temperature_uk",
            "shots",
            "eps_g_to_r",
            "eps_r_to_g",
            "prep_efficiency",
            "rng_seed",
        ],
        "scan" => &["parameter", "start", "stop", "step"],
        _ => &[],
    }
}

impl RawDocument {
    fn scan(text: &str) -> Result<Self, Diagnostic> {
        let mut sections: Vec<RawSection> = Vec::new();
        let mut saw_content = false;

        for (line_idx, raw_line) in text.lines().enumerate() {
            let line_no = line_idx + 1;
            let without_comment = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            let trimmed = without_comment.trim_end();
            let indent = trimmed.len() - trimmed.trim_start().len();
            let content = trimmed.trim_start();
            if content.is_empty() {
                continue;
            }
            saw_content = true;
            let col0 = indent + 1;

            if let Some(body) = content.strip_prefix('[') {
                let Some(name) = body.strip_suffix(']') else {
                    return Err(Diagnostic::new(
                        DiagCode::Syntax,
                        line_no,
                        col0,
                        "section header must look like [name]",
                    ));
                };
                if !SECTION_NAMES.contains(&name) {
                    return Err(Diagnostic::new(
                        DiagCode::UnknownSection,
                        line_no,
                        col0 + 1,
                        format!("unknown section [{name}]"),
                    ));
                }
                sections.push(RawSection {
                    name: name.to_string(),
                    line: line_no,
                    entries: Vec::new(),
                });
                continue;
            }

            let Some(eq_pos) = content.find('=') else {
                return Err(Diagnostic::new(
                    DiagCode::Syntax,
                    line_no,
                    col0,
                    "expected `key = value` or a [section] header",
                ));
            };
            let key = content[..eq_pos].trim();
            let value_text = content[eq_pos + 1..].trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
            {
                return Err(Diagnostic::new(
                    DiagCode::Syntax,
                    line_no,
                    col0,
                    format!("invalid key {key:?}"),
                ));
            }
            if value_text.is_empty() {
                return Err(Diagnostic::new(
                    DiagCode::Syntax,
                    line_no,
                    col0 + eq_pos + 1,
                    format!("key {key} has no value"),
                ));
            }
            let value_col = col0
                + content[eq_pos + 1..]
                    .find(|c: char| !c.is_whitespace())
                    .map(|off| eq_pos + 1 + off)
                    .unwrap_or(eq_pos + 1);

            let Some(section) = sections.last_mut() else {
                return Err(Diagnostic::new(
                    DiagCode::Syntax,
                    line_no,
                    col0,
                    format!("key {key} appears before any [section]"),
                ));
            };
            let value = parse_value(value_text, line_no, value_col)?;
            section.entries.push(RawEntry {
                key: key.to_string(),
                line: line_no,
                key_col: col0,
                value_col,
                value,
            });
        }

        if !saw_content {
            return Err(Diagnostic::new(DiagCode::Empty, 1, 1, "document is empty"));
        }
        Ok(Self { sections })
    }

    fn into_document(
        self,
        options: ParseOptions,
    ) -> Result<(ExperimentDocument, Vec<Diagnostic>), Diagnostic> {
        let mut warnings = Vec::new();

        // Unknown / duplicate key screening.
        for section in &self.sections {
            let keys = known_keys(&section.name);
            for (i, entry) in section.entries.iter().enumerate() {
                if !keys.contains(&entry.key.as_str()) {
                    let diag = Diagnostic::new(
                        DiagCode::UnknownKey,
                        entry.line,
                        entry.key_col,
                        format!("unknown key {:?} in [{}]", entry.key, section.name),
                    );
                    match options.strictness {
                        Strictness::Strict => return Err(diag),
                        Strictness::Lenient => warnings.push(diag),
                    }
                }
                if section.entries[..i]
                    .iter()
                    .any(|prev| prev.key == entry.key)
                {
                    return Err(Diagnostic::new(
                        DiagCode::DuplicateKey,
                        entry.line,
                        entry.key_col,
                        format!("key {:?} given twice in [{}]", entry.key, section.name),
                    ));
                }
            }
        }

        let mut atoms_section: Option<&RawSection> = None;
        let mut trap_section: Option<&RawSection> = None;
        let mut noise_section: Option<&RawSection> = None;
        let mut scan_section: Option<&RawSection> = None;
        let mut drive_sections: Vec<&RawSection> = Vec::new();
        let mut address_sections: Vec<&RawSection> = Vec::new();

        for section in &self.sections {
            let unique_slot = match section.name.as_str() {
                "atoms" => Some(&mut atoms_section),
                "trap" => Some(&mut trap_section),
                "noise" => Some(&mut noise_section),
                "scan" => Some(&mut scan_section),
                "drive" => {
                    drive_sections.push(section);
                    None
                }
                "address" => {
                    address_sections.push(section);
                    None
                }
                _ => unreachable!("screened above"),
            };
            if let Some(slot) = unique_slot {
                if slot.is_some() {
                    return Err(Diagnostic::new(
                        DiagCode::DuplicateSection,
                        section.line,
                        1,
                        format!("section [{}] may appear only once", section.name),
                    ));
                }
                *slot = Some(section);
            }
        }

        let atoms = atoms_section.ok_or_else(|| {
            Diagnostic::new(
                DiagCode::MissingSection,
                1,
                1,
                "missing required [atoms] section",
            )
        })?;

        let (geometry, level) = parse_atoms(atoms, options.max_atoms)?;
        let trap = match trap_section {
            Some(section) => parse_trap(section)?,
            None => TrapModel::default(),
        };
        let noise = match noise_section {
            Some(section) => parse_noise(section)?,
            None => NoiseModel::default(),
        };

        let mut drives = Vec::new();
        let mut drive_lines = Vec::new();
        for section in drive_sections {
            drives.push(parse_drive(section)?);
            drive_lines.push(section.line);
        }
        let mut addresses = Vec::new();
        for section in address_sections {
            addresses.push(parse_address(section)?);
        }

        // Declared global drives must not overlap (half-open intervals).
        let timed: Vec<(usize, f64, f64)> = drives
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.duration.map(|dur| (i, d.t_start, d.t_start + dur)))
            .collect();
        for i in 0..timed.len() {
            for j in (i + 1)..timed.len() {
                let (a, a_start, a_end) = timed[i];
                let (b, b_start, b_end) = timed[j];
                if a_start < b_end && b_start < a_end {
                    return Err(Diagnostic::new(
                        DiagCode::Overlap,
                        drive_lines[b],
                        1,
                        format!(
                            "global drive blocks {} (line {}) and {} (line {}) overlap in time",
                            a + 1,
                            drive_lines[a],
                            b + 1,
                            drive_lines[b]
                        ),
                    ));
                }
            }
        }

        let scan = match scan_section {
            Some(section) => Some(parse_scan(section)?),
            None => None,
        };

        let document = ExperimentDocument {
            model: ExperimentModel::new(geometry, level, trap),
            drives,
            addresses,
            noise,
            scan,
        };

        if let Some(scan) = &document.scan {
            if document.get_path(&scan.parameter).is_err() {
                let section = scan_section.expect("scan parsed from section");
                let entry = section
                    .entries
                    .iter()
                    .find(|e| e.key == "parameter")
                    .expect("required");
                return Err(Diagnostic::new(
                    DiagCode::ScanPath,
                    entry.line,
                    entry.value_col,
                    format!(
                        "scan parameter {:?} does not resolve to a numeric field",
                        scan.parameter
                    ),
                ));
            }
        }

        Ok((document, warnings))
    }
}

fn parse_value(text: &str, line: usize, col: usize) -> Result<RawValue, Diagnostic> {
    let parts: Vec<&str> = text.split(';').collect();
    if parts.len() > 1 {
        let mut offset = 0usize;
        let mut items = Vec::new();
        for part in &parts {
            let lead = part.len() - part.trim_start().len();
            let item_text = part.trim();
            if item_text.is_empty() {
                return Err(Diagnostic::new(
                    DiagCode::Syntax,
                    line,
                    col + offset,
                    "empty list item",
                ));
            }
            items.push(parse_single_value(item_text, line, col + offset + lead)?);
            offset += part.len() + 1;
        }
        return Ok(RawValue::List(items));
    }
    parse_single_value(text.trim(), line, col)
}

fn parse_single_value(text: &str, line: usize, col: usize) -> Result<RawValue, Diagnostic> {
    if let Some(body) = text.strip_prefix('(') {
        let Some(inner) = body.strip_suffix(')') else {
            return Err(Diagnostic::new(
                DiagCode::Syntax,
                line,
                col,
                "unterminated vector, expected (x,y,z)",
            ));
        };
        let comps: Vec<&str> = inner.split(',').collect();
        if comps.len() != 3 {
            return Err(Diagnostic::new(
                DiagCode::Syntax,
                line,
                col,
                format!("vector needs exactly 3 components, got {}", comps.len()),
            ));
        }
        let mut values = [0.0f64; 3];
        for (i, comp) in comps.iter().enumerate() {
            values[i] = parse_number(comp.trim(), line, col)?;
        }
        return Ok(RawValue::Vector(Vec3::new(values[0], values[1], values[2])));
    }
    // Numbers first; labels like `59D3/2` fail the float parse and fall
    // through to the word rule.
    if let Ok(value) = text.parse::<f64>() {
        if !value.is_finite() {
            return Err(Diagnostic::new(
                DiagCode::BadValue,
                line,
                col,
                format!("{text:?} is not finite"),
            ));
        }
        return Ok(RawValue::Scalar {
            value,
            token: text.to_string(),
        });
    }
    if text
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '/' | '.' | '[' | ']' | '-' | '+'))
    {
        return Ok(RawValue::Word(text.to_string()));
    }
    Err(Diagnostic::new(
        DiagCode::Syntax,
        line,
        col,
        format!("unparseable value {text:?}"),
    ))
}

fn parse_number(text: &str, line: usize, col: usize) -> Result<f64, Diagnostic> {
    let value: f64 = text.parse().map_err(|_| {
        Diagnostic::new(
            DiagCode::BadValue,
            line,
            col,
            format!("{text:?} is not a number"),
        )
    })?;
    if !value.is_finite() {
        return Err(Diagnostic::new(
            DiagCode::BadValue,
            line,
            col,
            format!("{text:?} is not finite"),
        ));
    }
    Ok(value)
}

struct SectionReader<'a> {
    section: &'a RawSection,
}

impl<'a> SectionReader<'a> {
    fn new(section: &'a RawSection) -> Self {
        Self { section }
    }

    fn entry(&self, key: &str) -> Option<&'a RawEntry> {
        self.section.entries.iter().find(|e| e.key == key)
    }

    fn required(&self, key: &str) -> Result<&'a RawEntry, Diagnostic> {
        self.entry(key).ok_or_else(|| {
            Diagnostic::new(
                DiagCode::MissingKey,
                self.section.line,
                1,
                format!("[{}] is missing required key {key}", self.section.name),
            )
        })
    }

    fn scalar(&self, key: &str, default: f64) -> Result<f64, Diagnostic> {
        match self.entry(key) {
            Some(entry) => scalar_of(entry),
            None => Ok(default),
        }
    }

    fn scalar_opt(&self, key: &str) -> Result<Option<f64>, Diagnostic> {
        self.entry(key).map(scalar_of).transpose()
    }

    fn integer(&self, key: &str, default: u64) -> Result<u64, Diagnostic> {
        let Some(entry) = self.entry(key) else {
            return Ok(default);
        };
        let RawValue::Scalar { token, value } = &entry.value else {
            return Err(type_mismatch(entry, "integer"));
        };
        if let Ok(parsed) = token.parse::<u64>() {
            return Ok(parsed);
        }
        if value.fract() == 0.0 && *value >= 0.0 && *value <= u64::MAX as f64 {
            return Ok(*value as u64);
        }
        Err(Diagnostic::new(
            DiagCode::BadValue,
            entry.line,
            entry.value_col,
            format!("{} must be a non-negative integer", entry.key),
        ))
    }

    fn vector(&self, key: &str, default: Vec3) -> Result<Vec3, Diagnostic> {
        match self.entry(key) {
            Some(entry) => match &entry.value {
                RawValue::Vector(v) => Ok(*v),
                _ => Err(type_mismatch(entry, "vector (x,y,z)")),
            },
            None => Ok(default),
        }
    }

    fn word(&self, key: &str) -> Result<Option<(&'a RawEntry, &'a str)>, Diagnostic> {
        match self.entry(key) {
            Some(entry) => match &entry.value {
                RawValue::Word(w) => Ok(Some((entry, w.as_str()))),
                // A level label like `59D3/2` tokenizes as a word, but a
                // bare number would scan as a scalar; surface both.
                RawValue::Scalar { token, .. } => Ok(Some((entry, token.as_str()))),
                _ => Err(type_mismatch(entry, "word")),
            },
            None => Ok(None),
        }
    }
}

fn type_mismatch(entry: &RawEntry, expected: &str) -> Diagnostic {
    Diagnostic::new(
        DiagCode::BadValue,
        entry.line,
        entry.value_col,
        format!(
            "{} expects a {expected}, got {}",
            entry.key,
            entry.value.type_name()
        ),
    )
}

fn scalar_of(entry: &RawEntry) -> Result<f64, Diagnostic> {
    match &entry.value {
        RawValue::Scalar { value, .. } => Ok(*value),
        _ => Err(type_mismatch(entry, "number")),
    }
}

fn range_error(entry: &RawEntry, message: impl Into<String>) -> Diagnostic {
    Diagnostic::new(DiagCode::Range, entry.line, entry.value_col, message)
}

fn check_range(
    reader: &SectionReader,
    key: &str,
    value: f64,
    ok: impl Fn(f64) -> bool,
    what: &str,
) -> Result<f64, Diagnostic> {
    if ok(value) {
        Ok(value)
    } else {
        match reader.entry(key) {
            Some(entry) => Err(range_error(
                entry,
                format!("{key} must be {what}, got {value}"),
            )),
            None => Err(Diagnostic::new(
                DiagCode::Range,
                reader.section.line,
                1,
                format!("{key} must be {what}, got {value}"),
            )),
        }
    }
}

fn parse_atoms(
    section: &RawSection,
    max_atoms: usize,
) -> Result<(AtomGeometry, RydbergLevel), Diagnostic> {
    let reader = SectionReader::new(section);
    let entry = reader.required("positions_um")?;
    let vectors: Vec<Vec3> = match &entry.value {
        RawValue::Vector(v) => vec![*v],
        RawValue::List(items) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    RawValue::Vector(v) => out.push(*v),
                    _ => return Err(type_mismatch(entry, "list of vectors")),
                }
            }
            out
        }
        _ => return Err(type_mismatch(entry, "list of vectors")),
    };
    let geometry = AtomGeometry::with_max_atoms(vectors, max_atoms)
        .map_err(|e| model_error_to_diag(e, entry))?;

    let label = reader
        .word("level")?
        .map(|(_, w)| w.to_string())
        .unwrap_or_else(|| "59D3/2".to_string());
    let c6 = reader.scalar_opt("c6_mhz_um6")?;
    let level = match (RydbergLevel::preset(&label), c6) {
        (_, Some(c6)) => RydbergLevel::new(label, c6)
            .map_err(|e| model_error_to_diag(e, reader.entry("c6_mhz_um6").expect("present")))?,
        (Some(preset), None) => preset,
        (None, None) => {
            return Err(Diagnostic::new(
                DiagCode::MissingKey,
                section.line,
                1,
                format!("level {label:?} has no built-in C6; add c6_mhz_um6"),
            ))
        }
    };
    Ok((geometry, level))
}

fn model_error_to_diag(error: ModelError, entry: &RawEntry) -> Diagnostic {
    Diagnostic::new(
        DiagCode::Range,
        entry.line,
        entry.value_col,
        error.to_string(),
    )
}

fn parse_trap(section: &RawSection) -> Result<TrapModel, Diagnostic> {
    let reader = SectionReader::new(section);
    let defaults = TrapModel::default();
    let waist = check_range(
        &reader,
        "waist_um",
        reader.scalar("waist_um", defaults.waist)?,
        |v| v > 0.0,
        "positive",
    )?;
    let depth = check_range(
        &reader,
        "depth_mhz",
        reader.scalar("depth_mhz", defaults.depth)?,
        |v| v > 0.0,
        "positive",
    )?;
    let aspect = check_range(
        &reader,
        "axial_aspect",
        reader.scalar("axial_aspect", defaults.axial_aspect)?,
        |v| v >= 1.0,
        ">= 1",
    )?;
    TrapModel::new(waist, depth, aspect)
        .map_err(|e| Diagnostic::new(DiagCode::Range, section.line, 1, e.to_string()))
}

fn parse_timing(reader: &SectionReader) -> Result<(f64, Option<f64>), Diagnostic> {
    let t_start = check_range(
        reader,
        "t_start_us",
        reader.scalar("t_start_us", 0.0)?,
        |v| v >= 0.0,
        ">= 0",
    )?;
    let duration = match reader.scalar_opt("duration_us")? {
        Some(d) => Some(check_range(reader, "duration_us", d, |v| v > 0.0, "> 0")?),
        None => None,
    };
    Ok((t_start, duration))
}

fn parse_drive(section: &RawSection) -> Result<TimedDrive, Diagnostic> {
    let reader = SectionReader::new(section);
    let (t_start, duration) = parse_timing(&reader)?;
    let rabi = check_range(
        &reader,
        "rabi_mhz",
        reader.required("rabi_mhz").and_then(scalar_of)?,
        |v| v >= 0.0,
        ">= 0",
    )?;
    let detuning = reader.scalar("detuning_mhz", 0.0)?;
    let phase = reader.scalar("phase_rad", 0.0)?;

    let explicit_k = reader.entry("k_rad_um");
    let geometry_keys = ["lambda_red_um", "lambda_blue_um", "geometry", "axis"]
        .iter()
        .any(|k| reader.entry(k).is_some());
    if let Some(entry) = explicit_k {
        if geometry_keys {
            return Err(Diagnostic::new(
                DiagCode::Conflict,
                entry.line,
                entry.key_col,
                "give either k_rad_um or the lambda/geometry/axis keys, not both",
            ));
        }
    }

    let wavevector = if let Some(entry) = explicit_k {
        match &entry.value {
            RawValue::Vector(v) => *v,
            _ => return Err(type_mismatch(entry, "vector (x,y,z)")),
        }
    } else {
        let lambda_red = check_range(
            &reader,
            "lambda_red_um",
            reader.scalar("lambda_red_um", 0.795)?,
            |v| v > 0.0,
            "positive",
        )?;
        let lambda_blue = check_range(
            &reader,
            "lambda_blue_um",
            reader.scalar("lambda_blue_um", 0.474)?,
            |v| v > 0.0,
            "positive",
        )?;
        let geometry = match reader.word("geometry")? {
            None => BeamGeometry::CounterPropagating,
            Some((_, "counter")) => BeamGeometry::CounterPropagating,
            Some((_, "co")) => BeamGeometry::CoPropagating,
            Some((entry, other)) => {
                return Err(Diagnostic::new(
                    DiagCode::BadValue,
                    entry.line,
                    entry.value_col,
                    format!("geometry must be `co` or `counter`, got {other:?}"),
                ))
            }
        };
        let axis = reader.vector("axis", Vec3::x())?;
        effective_wavevector(lambda_red, lambda_blue, geometry, axis)
            .map_err(|e| Diagnostic::new(DiagCode::Range, section.line, 1, e.to_string()))?
    };

    let drive = GlobalDrive::new(rabi, detuning, wavevector, phase)
        .map_err(|e| Diagnostic::new(DiagCode::Range, section.line, 1, e.to_string()))?;
    Ok(TimedDrive {
        t_start,
        duration,
        drive,
    })
}

fn parse_address(section: &RawSection) -> Result<TimedAddress, Diagnostic> {
    let reader = SectionReader::new(section);
    let (t_start, duration) = parse_timing(&reader)?;
    let center = match &reader.required("center_um")?.value {
        RawValue::Vector(v) => *v,
        _ => {
            return Err(type_mismatch(
                reader.entry("center_um").expect("present"),
                "vector (x,y,z)",
            ))
        }
    };

    let peak_entry = reader.entry("peak_shift_mhz");
    let power = reader.scalar_opt("power_mw")?;
    let kappa = reader.scalar_opt("kappa_mhz_per_mw")?;
    let peak_shift = match (peak_entry, power, kappa) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            let entry = peak_entry.expect("checked");
            return Err(Diagnostic::new(
                DiagCode::Conflict,
                entry.line,
                entry.key_col,
                "give either peak_shift_mhz or power_mw with kappa_mhz_per_mw, not both",
            ));
        }
        (Some(_), None, None) => check_range(
            &reader,
            "peak_shift_mhz",
            reader.scalar("peak_shift_mhz", 0.0)?,
            |v| v >= 0.0,
            ">= 0",
        )?,
        (None, Some(p), Some(k)) => {
            let p = check_range(&reader, "power_mw", p, |v| v >= 0.0, ">= 0")?;
            let k = check_range(&reader, "kappa_mhz_per_mw", k, |v| v >= 0.0, ">= 0")?;
            p * k
        }
        (None, _, _) => {
            return Err(Diagnostic::new(
                DiagCode::MissingKey,
                section.line,
                1,
                "[address] needs peak_shift_mhz, or power_mw together with kappa_mhz_per_mw",
            ))
        }
    };

    let waist = check_range(
        &reader,
        "waist_um",
        reader.scalar("waist_um", 1.3)?,
        |v| v > 0.0,
        "positive",
    )?;
    let axis = reader.vector("axis", Vec3::z())?;
    let beam = AddressingBeam::with_axis(center, peak_shift, waist, axis)
        .map_err(|e| Diagnostic::new(DiagCode::Range, section.line, 1, e.to_string()))?;
    Ok(TimedAddress {
        t_start,
        duration,
        beam,
    })
}

fn parse_noise(section: &RawSection) -> Result<NoiseModel, Diagnostic> {
    let reader = SectionReader::new(section);
    let defaults = NoiseModel::default();
    let temperature = check_range(
        &reader,
        "temperature_uk",
        reader.scalar("temperature_uk", defaults.temperature_uk)?,
        |v| v >= 0.0,
        ">= 0",
    )?;
    let shots = reader.integer("shots", defaults.shots)?;
    if shots == 0 {
        let entry = reader.entry("shots").expect("default is nonzero");
        return Err(range_error(entry, "shots must be >= 1"));
    }
    let prob = |v: f64| (0.0..=1.0).contains(&v);
    let eps_g_to_r = check_range(
        &reader,
        "eps_g_to_r",
        reader.scalar("eps_g_to_r", defaults.eps_g_to_r)?,
        prob,
        "a probability in [0,1]",
    )?;
    let eps_r_to_g = check_range(
        &reader,
        "eps_r_to_g",
        reader.scalar("eps_r_to_g", defaults.eps_r_to_g)?,
        prob,
        "a probability in [0,1]",
    )?;
    let prep_efficiency = check_range(
        &reader,
        "prep_efficiency",
        reader.scalar("prep_efficiency", defaults.prep_efficiency)?,
        prob,
        "a probability in [0,1]",
    )?;
    let rng_seed = reader.integer("rng_seed", defaults.rng_seed)?;
    Ok(NoiseModel {
        temperature_uk: temperature,
        shots,
        eps_g_to_r,
        eps_r_to_g,
        prep_efficiency,
        rng_seed,
    })
}

fn parse_scan(section: &RawSection) -> Result<ScanBlock, Diagnostic> {
    let reader = SectionReader::new(section);
    let (_, parameter) = reader.word("parameter")?.ok_or_else(|| {
        Diagnostic::new(
            DiagCode::MissingKey,
            section.line,
            1,
            "[scan] is missing key parameter",
        )
    })?;
    let start = reader.required("start").and_then(scalar_of)?;
    let stop = reader.required("stop").and_then(scalar_of)?;
    let step = check_range(
        &reader,
        "step",
        reader.required("step").and_then(scalar_of)?,
        |v| v > 0.0,
        "> 0",
    )?;
    if stop < start {
        let entry = reader.entry("stop").expect("required above");
        return Err(range_error(
            entry,
            format!("stop ({stop}) must be >= start ({start})"),
        ));
    }
    Ok(ScanBlock {
        parameter: parameter.to_string(),
        start,
        stop,
        step,
    })
}

impl fmt::Display for ExperimentDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}
