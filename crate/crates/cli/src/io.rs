//! Sample ingestion and export.
//!
//! Samples travel as comma-separated text with a required header naming the
//! columns y, t, z and optionally cell; '#' lines are metadata and are
//! skipped. Exported files start with a format tag and a metadata block so a
//! run can be replayed exactly.

use std::path::Path;

use misiv::{Observation, Sample};

use crate::CliError;

pub const SAMPLE_FORMAT_TAG: &str = "misiv-sample-v1";

pub fn ingest(path: &Path) -> Result<Sample, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut header: Option<(usize, usize, usize, Option<usize>)> = None;
    let mut obs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if header.is_none() {
            let pos = |name: &str| fields.iter().position(|&f| f == name);
            let (Some(y), Some(t), Some(z)) = (pos("y"), pos("t"), pos("z")) else {
                return Err(CliError::input(format!(
                    "line {lineno}: header must contain columns y,t,z (got '{line}')"
                )));
            };
            header = Some((y, t, z, pos("cell")));
            continue;
        }
        let (yi, ti, zi, ci) = header.unwrap();
        let need = [yi, ti, zi].into_iter().chain(ci).max().unwrap() + 1;
        if fields.len() < need {
            return Err(CliError::input(format!(
                "line {lineno}: expected at least {need} fields, got {}",
                fields.len()
            )));
        }
        let y: f64 = fields[yi].parse().map_err(|_| {
            CliError::input(format!("line {lineno}: unparseable y '{}'", fields[yi]))
        })?;
        if !y.is_finite() {
            return Err(CliError::input(format!("line {lineno}: y not finite")));
        }
        let parse_bin = |s: &str, name: &str| -> Result<u8, CliError> {
            match s {
                "0" => Ok(0),
                "1" => Ok(1),
                _ => Err(CliError::input(format!(
                    "{name} not binary at line {lineno}: '{s}'"
                ))),
            }
        };
        let t = parse_bin(fields[ti], "t")?;
        let z = parse_bin(fields[zi], "z")?;
        let cell: u32 = match ci {
            None => 0,
            Some(i) => fields[i].parse().map_err(|_| {
                CliError::input(format!("line {lineno}: unparseable cell '{}'", fields[i]))
            })?,
        };
        obs.push(Observation { y, t, z, cell });
    }
    if header.is_none() {
        return Err(CliError::input(format!(
            "{}: no header row found",
            path.display()
        )));
    }
    Sample::new(obs).map_err(CliError::from_lib)
}

pub fn export_sample(sample: &Sample, metadata: &[(String, String)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {SAMPLE_FORMAT_TAG}\n"));
    for (k, v) in metadata {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str("y,t,z,cell\n");
    for o in sample.observations() {
        // Shortest round-trip float representation keeps moments bit-stable
        // across export / ingest.
        out.push_str(&format!("{},{},{},{}\n", o.y, o.t, o.z, o.cell));
    }
    out
}

/// Metadata block shared by all report files.
pub fn metadata_block(tag: &str, entries: &[(String, String)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {tag}\n"));
    out.push_str(&format!("# version = {}\n", env!("CARGO_PKG_VERSION")));
    for (k, v) in entries {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out
}

pub fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::input(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, content)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}
