//! Parsing of command-line override arguments: `--set path=value`,
//! `--scan path=start:stop:step`, and bare `start:stop:step` ranges.

use rydsim_core::sequence::{ExperimentDocument, ScanBlock};

/// `path=start:stop:step` into a scan block (not yet validated against a
/// document).
pub fn parse_scan_arg(arg: &str) -> Result<ScanBlock, String> {
    let (path, range) = arg
        .split_once('=')
        .ok_or_else(|| format!("--scan expects path=start:stop:step, got {arg:?}"))?;
    let (start, stop, step) = parse_range(range)?;
    if step <= 0.0 {
        return Err(format!("scan step must be > 0, got {step}"));
    }
    if stop < start {
        return Err(format!("scan stop ({stop}) must be >= start ({start})"));
    }
    Ok(ScanBlock {
        parameter: path.trim().to_string(),
        start,
        stop,
        step,
    })
}

/// `start:stop:step` into the inclusive list of values.
pub fn parse_range(range: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected start:stop:step, got {range:?}"));
    }
    let mut values = [0.0f64; 3];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("{part:?} is not a number in {range:?}"))?;
    }
    Ok((values[0], values[1], values[2]))
}

/// Applies one `path=value` override to the document.
pub fn apply_set_arg(document: &mut ExperimentDocument, arg: &str) -> Result<(), String> {
    let (path, value) = arg
        .split_once('=')
        .ok_or_else(|| format!("--set expects path=value, got {arg:?}"))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("{value:?} is not a number in {arg:?}"))?;
    document
        .set_path(path.trim(), value)
        .map_err(|e| e.to_string())
}

/// Comma-separated list of numbers (`--shifts 5,10,15,20`).
pub fn parse_list(arg: &str) -> Result<Vec<f64>, String> {
    arg.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| format!("{part:?} is not a number in {arg:?}"))
        })
        .collect()
}
