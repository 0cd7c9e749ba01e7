//! Result tables and their CSV schema.
//!
//! Column contract: `scan_value`, then one `P_<label>` per basis
//! configuration in index (lexicographic) order, then the matching
//! `se_<label>` columns, then `shots`. A mandatory header row follows
//! `#`-prefixed metadata lines carrying the artifact version, run mode,
//! seed and a hash of the resolved configuration. Numbers are printed in
//! the shortest form that round-trips exactly, so re-reading a CSV
//! reproduces the in-memory values bit for bit.

use std::fmt::Write as _;

use thiserror::Error;

use rydsim_core::hilbert::{basis_label, PopulationTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("CSV line {0}: {1}")]
    Malformed(usize, String),
    #[error("CSV is missing the header row")]
    MissingHeader,
}

/// Run provenance recorded in the CSV preamble.
#[derive(Debug, Clone, PartialEq)]
pub struct TableMeta {
    pub recipe: String,
    pub version: String,
    pub mode: String,
    pub seed: Option<u64>,
    pub model_hash: String,
    pub scan_path: String,
}

impl TableMeta {
    pub fn new(
        recipe: &str,
        mode: &str,
        seed: Option<u64>,
        model_hash: String,
        scan_path: &str,
    ) -> Self {
        Self {
            recipe: recipe.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            mode: mode.to_string(),
            seed,
            model_hash,
            scan_path: scan_path.to_string(),
        }
    }
}

/// One scan point: populations, their standard errors, and the shot count
/// (0 in ideal mode, where values are exact).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scan_value: f64,
    pub probs: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub shots: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub meta: TableMeta,
    /// Basis labels in index order (`gg, gr, rg, rr` for two atoms).
    pub labels: Vec<String>,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(meta: TableMeta, atoms: usize) -> Self {
        let labels = (0..1usize << atoms)
            .map(|i| basis_label(i, atoms))
            .collect();
        Self {
            meta,
            labels,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, scan_value: f64, table: &PopulationTable) {
        debug_assert_eq!(table.probabilities().len(), self.labels.len());
        self.rows.push(ResultRow {
            scan_value,
            probs: table.probabilities().to_vec(),
            std_errors: table.std_errors().to_vec(),
            shots: table.shots().unwrap_or(0),
        });
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// `(scan_value, P_label, sigma)` triples ready for fitting; sampled
    /// standard errors are floored at `1/(2 shots)` so exact 0/1
    /// frequencies keep a finite weight, and ideal rows weigh uniformly.
    pub fn fit_series(&self, label: &str) -> Vec<(f64, f64, f64)> {
        let idx = self.column_index(label).expect("known label");
        self.rows
            .iter()
            .map(|row| {
                let sigma = if row.shots > 0 {
                    row.std_errors[idx].max(0.5 / row.shots as f64)
                } else {
                    1.0
                };
                (row.scan_value, row.probs[idx], sigma)
            })
            .collect()
    }

    /// As [`fit_series`](Self::fit_series) for a sum of population columns
    /// (marginals and the symmetric single-excitation signal).
    pub fn fit_series_sum(&self, labels: &[&str]) -> Vec<(f64, f64, f64)> {
        let idxs: Vec<usize> = labels
            .iter()
            .map(|l| self.column_index(l).expect("known label"))
            .collect();
        self.rows
            .iter()
            .map(|row| {
                let value: f64 = idxs.iter().map(|&i| row.probs[i]).sum();
                let var: f64 = idxs.iter().map(|&i| row.std_errors[i].powi(2)).sum();
                let sigma = if row.shots > 0 {
                    var.sqrt().max(0.5 / row.shots as f64)
                } else {
                    1.0
                };
                (row.scan_value, value, sigma)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
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

        out.push_str("scan_value");
        for label in &self.labels {
            let _ = write!(out, ",P_{label}");
        }
        for label in &self.labels {
            let _ = write!(out, ",se_{label}");
        }
        out.push_str(",shots\n");

        for row in &self.rows {
            let _ = write!(out, "{}", row.scan_value);
            for p in &row.probs {
                let _ = write!(out, ",{p}");
            }
            for se in &row.std_errors {
                let _ = write!(out, ",{se}");
            }
            let _ = writeln!(out, ",{}", row.shots);
        }
        out
    }

    /// Parses the CSV schema back into a table (metadata lines are
    /// restored into [`TableMeta`], unknown metadata is ignored).
    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let mut meta = TableMeta::new("unknown", "unknown", None, String::new(), "");
        let mut labels: Option<Vec<String>> = None;
        let mut rows = Vec::new();

        for (line_idx, line) in text.lines().enumerate() {
            let line_no = line_idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                let comment = comment.trim();
                if let Some((key, value)) = comment.split_once('=') {
                    let (key, value) = (key.trim(), value.trim());
                    match key {
                        "recipe" => meta.recipe = value.to_string(),
                        "mode" => meta.mode = value.to_string(),
                        "seed" => meta.seed = value.parse().ok(),
                        "model_hash" => meta.model_hash = value.to_string(),
                        "scan" => meta.scan_path = value.to_string(),
                        _ => {}
                    }
                } else if let Some(version) = comment.strip_prefix("rydsim ") {
                    meta.version = version.to_string();
                }
                continue;
            }
            if labels.is_none() {
                let cols: Vec<&str> = trimmed.split(',').collect();
                if cols.first() != Some(&"scan_value") || cols.last() != Some(&"shots") {
                    return Err(TableError::Malformed(line_no, "unexpected header".into()));
                }
                let p_cols: Vec<String> = cols
                    .iter()
                    .filter_map(|c| c.strip_prefix("P_"))
                    .map(str::to_string)
                    .collect();
                if p_cols.is_empty() || cols.len() != 2 + 2 * p_cols.len() {
                    return Err(TableError::Malformed(line_no, "bad column layout".into()));
                }
                labels = Some(p_cols);
                continue;
            }
            let labels_ref = labels.as_ref().expect("header parsed");
            let n = labels_ref.len();
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 2 + 2 * n {
                return Err(TableError::Malformed(
                    line_no,
                    format!("expected {} fields", 2 + 2 * n),
                ));
            }
            let parse_f64 = |s: &str| -> Result<f64, TableError> {
                s.parse()
                    .map_err(|_| TableError::Malformed(line_no, format!("bad number {s:?}")))
            };
            let scan_value = parse_f64(fields[0])?;
            let probs = fields[1..1 + n]
                .iter()
                .map(|s| parse_f64(s))
                .collect::<Result<_, _>>()?;
            let std_errors = fields[1 + n..1 + 2 * n]
                .iter()
                .map(|s| parse_f64(s))
                .collect::<Result<_, _>>()?;
            let shots = fields[1 + 2 * n]
                .parse()
                .map_err(|_| TableError::Malformed(line_no, "bad shot count".into()))?;
            rows.push(ResultRow {
                scan_value,
                probs,
                std_errors,
                shots,
            });
        }

        let labels = labels.ok_or(TableError::MissingHeader)?;
        Ok(Self { meta, labels, rows })
    }
}

/// FNV-1a hash of the resolved configuration text, hex-encoded; stable
/// across runs and platforms.
pub fn model_hash(serialized: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in serialized.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
