//! Flat key = value configuration files describing a data-generating
//! process. The first line is a format tag. Distribution overrides are
//! optional; when present they bypass the moment solver so that deliberately
//! broken processes can be expressed and diagnosed.

use std::collections::BTreeMap;
use std::path::Path;

use misiv::dgp::{build_spec, DgpSpec, ThreePoint};
use misiv::StructuralParams;

use crate::CliError;

pub const DGP_FORMAT_TAG: &str = "misiv-dgp-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Discrete,
    Continuous,
}

pub struct DgpConfig {
    pub spec: DgpSpec,
    pub mode: Mode,
}

fn parse_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64, CliError> {
    let raw = map
        .get(key)
        .ok_or_else(|| CliError::input(format!("dgp config missing key '{key}'")))?;
    raw.parse().map_err(|_| {
        CliError::input(format!(
            "dgp config key '{key}': unparseable number '{raw}'"
        ))
    })
}

fn parse_f64_or(map: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64, CliError> {
    match map.get(key) {
        None => Ok(default),
        Some(_) => parse_f64(map, key),
    }
}

fn parse_list(raw: &str, key: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::input(format!("dgp config key '{key}': bad number '{s}'")))
        })
        .collect()
}

pub fn read_dgp_config(path: &Path, mode_override: Option<Mode>) -> Result<DgpConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    let mut format_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::input(format!(
                "{}:{}: expected 'key = value'",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
        if key.trim() == "format" {
            format_seen = true;
            if value.trim() != DGP_FORMAT_TAG {
                return Err(CliError::input(format!(
                    "unsupported dgp config format '{}', expected {DGP_FORMAT_TAG}",
                    value.trim()
                )));
            }
        }
    }
    if !format_seen {
        return Err(CliError::input(format!(
            "dgp config {} missing 'format = {DGP_FORMAT_TAG}' line",
            path.display()
        )));
    }
    let mode = match mode_override {
        Some(m) => m,
        None => match map.get("mode").map(String::as_str) {
            None | Some("discrete") => Mode::Discrete,
            Some("continuous") => Mode::Continuous,
            Some(other) => {
                return Err(CliError::input(format!(
                    "dgp config mode must be discrete or continuous, got '{other}'"
                )))
            }
        },
    };
    let q = parse_f64(&map, "q")?;
    let p_star_0 = parse_f64(&map, "p_star_0")?;
    let p_star_1 = parse_f64(&map, "p_star_1")?;
    let c = parse_f64(&map, "c")?;
    let beta = parse_f64(&map, "beta")?;
    let alpha0 = parse_f64(&map, "alpha0")?;
    let alpha1 = parse_f64(&map, "alpha1")?;
    let m_10 = parse_f64_or(&map, "m_10", 0.0)?;
    let m_11 = parse_f64_or(&map, "m_11", 0.0)?;
    let second_raw = parse_f64_or(&map, "second_raw", 0.0)?;
    let third_raw = parse_f64_or(&map, "third_raw", 0.0)?;
    let jitter = match mode {
        Mode::Discrete => 0.0,
        Mode::Continuous => {
            let j = parse_f64_or(&map, "jitter", 0.5)?;
            if j <= 0.0 {
                return Err(CliError::input(
                    "continuous mode requires jitter > 0".to_string(),
                ));
            }
            j
        }
    };
    let structural = StructuralParams::new(c, beta, alpha0, alpha1).map_err(CliError::from_lib)?;

    let has_overrides =
        (0..2).any(|t| (0..2).any(|k| map.contains_key(&format!("dist_{t}_{k}_points"))));
    let spec = if has_overrides {
        // Explicit laws: every cell must be given.
        let mut dists: Vec<ThreePoint> = Vec::with_capacity(4);
        for t in 0..2 {
            for k in 0..2 {
                let pk = format!("dist_{t}_{k}_points");
                let wk = format!("dist_{t}_{k}_probs");
                let points = parse_list(
                    map.get(&pk)
                        .ok_or_else(|| CliError::input(format!("missing '{pk}'")))?,
                    &pk,
                )?;
                let probs = parse_list(
                    map.get(&wk)
                        .ok_or_else(|| CliError::input(format!("missing '{wk}'")))?,
                    &wk,
                )?;
                if points.len() != probs.len() {
                    return Err(CliError::input(format!(
                        "'{pk}' and '{wk}' must have equal length"
                    )));
                }
                let atoms: Vec<(f64, f64)> = points.into_iter().zip(probs).collect();
                dists.push(ThreePoint::from_atoms(atoms).map_err(CliError::from_lib)?);
            }
        }
        let d11 = dists.pop().unwrap();
        let d10 = dists.pop().unwrap();
        let d01 = dists.pop().unwrap();
        let d00 = dists.pop().unwrap();
        let endogeneity = [
            [d00.raw_moment(1), d01.raw_moment(1)],
            [d10.raw_moment(1), d11.raw_moment(1)],
        ];
        DgpSpec::with_distributions(
            q,
            [p_star_0, p_star_1],
            structural,
            endogeneity,
            second_raw,
            third_raw,
            jitter,
            [[d00, d01], [d10, d11]],
        )
        .map_err(CliError::from_lib)?
    } else {
        build_spec(
            q,
            p_star_0,
            p_star_1,
            structural,
            [m_10, m_11],
            second_raw,
            third_raw,
            jitter,
        )
        .map_err(CliError::from_lib)?
    };
    Ok(DgpConfig { spec, mode })
}

/// Serializes a spec back to the flat format (used by `--emit-config`).
pub fn write_dgp_config(spec: &DgpSpec, mode: Mode) -> String {
    use crate::fmt::sig9;
    let mut out = String::new();
    out.push_str(&format!("format = {DGP_FORMAT_TAG}\n"));
    out.push_str(&format!("q = {}\n", sig9(spec.q)));
    out.push_str(&format!("p_star_0 = {}\n", sig9(spec.p_star[0])));
    out.push_str(&format!("p_star_1 = {}\n", sig9(spec.p_star[1])));
    out.push_str(&format!("c = {}\n", sig9(spec.structural.c)));
    out.push_str(&format!("beta = {}\n", sig9(spec.structural.beta)));
    out.push_str(&format!("alpha0 = {}\n", sig9(spec.structural.alpha0)));
    out.push_str(&format!("alpha1 = {}\n", sig9(spec.structural.alpha1)));
    out.push_str(&format!("m_10 = {}\n", sig9(spec.endogeneity[1][0])));
    out.push_str(&format!("m_11 = {}\n", sig9(spec.endogeneity[1][1])));
    out.push_str(&format!("second_raw = {}\n", sig9(spec.second_raw)));
    out.push_str(&format!("third_raw = {}\n", sig9(spec.third_raw)));
    out.push_str(&format!(
        "mode = {}\n",
        match mode {
            Mode::Discrete => "discrete",
            Mode::Continuous => "continuous",
        }
    ));
    if mode == Mode::Continuous {
        out.push_str(&format!("jitter = {}\n", sig9(spec.jitter)));
    }
    out
}
