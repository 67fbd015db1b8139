//! Plain-text family cache.
//!
//! A profile file starts with `#`-prefixed `key = value` header lines
//! (parameters, orbit spec, shooting nodes) followed by one row per grid
//! point with columns `x tau tau_x u`, all written with 17 significant
//! digits so that a round trip is exact. The index file has one row per
//! member with columns `X c q amplitude file`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{OrbitFamily, OrbitSpec, PeriodicProfile};
use crate::error::{Error, Result};
use crate::model::ModelParams;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_profile(path: &Path, profile: &PeriodicProfile) -> Result<()> {
    let p = &profile.params;
    let s = &profile.spec;
    let mut out = String::new();
    writeln!(out, "# froude = {}", num(p.froude)).unwrap();
    writeln!(out, "# nu = {}", num(p.nu)).unwrap();
    writeln!(out, "# r = {}", num(p.r)).unwrap();
    writeln!(out, "# s = {}", num(p.s)).unwrap();
    writeln!(out, "# period = {}", num(s.period)).unwrap();
    writeln!(out, "# c = {}", num(s.c)).unwrap();
    writeln!(out, "# q = {}", num(s.q)).unwrap();
    writeln!(out, "# b = {} {}", num(s.b[0]), num(s.b[1])).unwrap();
    writeln!(out, "# periodicity_defect = {}", num(profile.periodicity_defect)).unwrap();
    for n in &profile.nodes {
        writeln!(out, "# node = {} {}", num(n[0]), num(n[1])).unwrap();
    }
    writeln!(out, "# columns: x tau tau_x u").unwrap();
    for (j, x) in profile.x().iter().enumerate() {
        writeln!(out, "{} {} {} {}", num(*x), num(profile.tau[j]), num(profile.tau_x[j]), num(profile.u[j])).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse(format!("bad number for {what}: {s:?}")))
}

pub fn read_profile(path: &Path) -> Result<PeriodicProfile> {
    let text = fs::read_to_string(path)?;
    let mut header = std::collections::HashMap::new();
    let mut nodes = Vec::new();
    let (mut tau, mut tau_x, mut u) = (Vec::new(), Vec::new(), Vec::new());
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            let Some((key, value)) = rest.split_once('=') else { continue };
            let key = key.trim();
            if key == "node" {
                let v: Vec<f64> = value.split_whitespace().map(|t| parse_f64(t, "node")).collect::<Result<_>>()?;
                if v.len() != 2 {
                    return Err(Error::Parse("node needs two values".into()));
                }
                nodes.push([v[0], v[1]]);
            } else {
                header.insert(key.to_string(), value.trim().to_string());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line.split_whitespace().map(|t| parse_f64(t, "sample")).collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(Error::Parse(format!("expected 4 columns, found {}", v.len())));
        }
        tau.push(v[1]);
        tau_x.push(v[2]);
        u.push(v[3]);
    }
    let get = |k: &str| -> Result<f64> {
        let v = header.get(k).ok_or_else(|| Error::Parse(format!("missing header `{k}`")))?;
        parse_f64(v, k)
    };
    let params = ModelParams::new(get("froude")?, get("nu")?, get("r")?, get("s")?)?;
    let b: Vec<f64> = header
        .get("b")
        .ok_or_else(|| Error::Parse("missing header `b`".into()))?
        .split_whitespace()
        .map(|t| parse_f64(t, "b"))
        .collect::<Result<_>>()?;
    if b.len() != 2 || nodes.is_empty() || tau.is_empty() {
        return Err(Error::Parse("incomplete profile file".into()));
    }
    let spec = OrbitSpec { period: get("period")?, c: get("c")?, q: get("q")?, b: [b[0], b[1]] };
    Ok(PeriodicProfile { spec, params, nodes, tau, tau_x, u, periodicity_defect: get("periodicity_defect")? })
}

/// One row of the family index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub period: f64,
    pub c: f64,
    pub q: f64,
    pub amplitude: f64,
    pub file: String,
}

/// Writes every member as `profile_NNNN.txt` plus `index.txt` into `dir`.
pub fn write_family(dir: &Path, family: &OrbitFamily) -> Result<Vec<IndexEntry>> {
    fs::create_dir_all(dir)?;
    let mut index = String::from("# columns: X c q amplitude file\n");
    let mut entries = Vec::new();
    for (i, profile) in family.profiles.iter().enumerate() {
        let file = format!("profile_{i:04}.txt");
        write_profile(&dir.join(&file), profile)?;
        let e = IndexEntry {
            period: profile.period(),
            c: profile.spec.c,
            q: profile.spec.q,
            amplitude: profile.amplitude(),
            file,
        };
        writeln!(index, "{} {} {} {} {}", num(e.period), num(e.c), num(e.q), num(e.amplitude), e.file).unwrap();
        entries.push(e);
    }
    fs::write(dir.join("index.txt"), index)?;
    Ok(entries)
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexEntry>> {
    let text = fs::read_to_string(dir.join("index.txt"))?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!("bad index row: {line:?}")));
            }
            Ok(IndexEntry {
                period: parse_f64(f[0], "X")?,
                c: parse_f64(f[1], "c")?,
                q: parse_f64(f[2], "q")?,
                amplitude: parse_f64(f[3], "amplitude")?,
                file: f[4].to_string(),
            })
        })
        .collect()
}
