//! Key-value run configuration.
//!
//! Plain `key = value` lines with `#` comments. Every run directory gets
//! the fully resolved configuration written back, so any output can be
//! regenerated from its directory alone.

use std::collections::BTreeMap;
use std::path::Path;

use crate::deadleaves::{Palette, SourceSpec};
use crate::error::{Error, Result};

/// Simulator settings, one field per config key.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub side: usize,
    pub source: SourceSpec,
    pub palette: Palette,
    pub probe_l: usize,
    pub probe_count: usize,
    pub tol: f64,
    pub step_cap: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            side: 512,
            source: SourceSpec::PowerLaw {
                gamma: 3.0,
                n_min: 1,
                n_max: 256,
            },
            palette: Palette::Grayscale { i_max: 255 },
            probe_l: 128,
            probe_count: 30,
            tol: 0.05,
            step_cap: 100_000_000,
            seed: 1,
        }
    }
}

/// Splits config text into a key → value map. Blank lines and `#`
/// comments are skipped; duplicate keys are refused.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value, got {raw:?}",
                index + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate key {key}")));
        }
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(
    map: &mut BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match map.remove(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("key {key}: cannot parse {raw:?}"))),
    }
}

fn forbid(map: &BTreeMap<String, String>, key: &str, reason: &str) -> Result<()> {
    if map.contains_key(key) {
        return Err(Error::Config(format!("key {key} not allowed {reason}")));
    }
    Ok(())
}

impl SimConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = parse_kv(text)?;
        let defaults = SimConfig::default();
        let side = take(&mut map, "side")?.unwrap_or(defaults.side);

        let kind: String = take(&mut map, "source.kind")?.unwrap_or_else(|| "power_law".into());
        let source = match kind.as_str() {
            "power_law" => {
                forbid(&map, "fixed_size", "for a power_law source")?;
                SourceSpec::PowerLaw {
                    gamma: take(&mut map, "gamma")?.unwrap_or(3.0),
                    n_min: take(&mut map, "n_min")?.unwrap_or(1),
                    n_max: take(&mut map, "n_max")?.unwrap_or(side / 2),
                }
            }
            "delta" => {
                for key in ["gamma", "n_min", "n_max"] {
                    forbid(&map, key, "for a delta source")?;
                }
                let fixed_size = take(&mut map, "fixed_size")?
                    .ok_or_else(|| Error::Config("delta source needs fixed_size".into()))?;
                SourceSpec::Delta { fixed_size }
            }
            other => {
                return Err(Error::Config(format!(
                    "source.kind must be power_law or delta, got {other:?}"
                )))
            }
        };
        source.validate_for(side)?;

        let kind: String = take(&mut map, "palette.kind")?.unwrap_or_else(|| "grayscale".into());
        let palette = match kind.as_str() {
            "grayscale" => Palette::Grayscale {
                i_max: take(&mut map, "i_max")?.unwrap_or(255),
            },
            "binary" => {
                forbid(&map, "i_max", "for a binary palette")?;
                Palette::Binary
            }
            other => {
                return Err(Error::Config(format!(
                    "palette.kind must be grayscale or binary, got {other:?}"
                )))
            }
        };

        let config = Self {
            side,
            source,
            palette,
            probe_l: take(&mut map, "probe.l")?.unwrap_or(defaults.probe_l.min(side)),
            probe_count: take(&mut map, "probe.count")?.unwrap_or(defaults.probe_count),
            tol: take(&mut map, "tol")?.unwrap_or(defaults.tol),
            step_cap: take(&mut map, "step_cap")?.unwrap_or(defaults.step_cap),
            seed: take(&mut map, "seed")?.unwrap_or(defaults.seed),
        };
        if let Some(stray) = map.keys().next() {
            return Err(Error::Config(format!("unknown key {stray}")));
        }
        if config.probe_l > config.side {
            return Err(Error::Config(format!(
                "probe.l {} exceeds side {}",
                config.probe_l, config.side
            )));
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Fully resolved text form; parsing it back reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("side = {}\n", self.side));
        match self.source {
            SourceSpec::PowerLaw { gamma, n_min, n_max } => {
                out.push_str("source.kind = power_law\n");
                out.push_str(&format!("gamma = {gamma}\n"));
                out.push_str(&format!("n_min = {n_min}\n"));
                out.push_str(&format!("n_max = {n_max}\n"));
            }
            SourceSpec::Delta { fixed_size } => {
                out.push_str("source.kind = delta\n");
                out.push_str(&format!("fixed_size = {fixed_size}\n"));
            }
        }
        match self.palette {
            Palette::Grayscale { i_max } => {
                out.push_str("palette.kind = grayscale\n");
                out.push_str(&format!("i_max = {i_max}\n"));
            }
            Palette::Binary => out.push_str("palette.kind = binary\n"),
        }
        out.push_str(&format!("probe.l = {}\n", self.probe_l));
        out.push_str(&format!("probe.count = {}\n", self.probe_count));
        out.push_str(&format!("tol = {}\n", self.tol));
        out.push_str(&format!("step_cap = {}\n", self.step_cap));
        out.push_str(&format!("seed = {}\n", self.seed));
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Writes an arbitrary resolved configuration as `key = value` lines.
pub fn write_resolved(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut out = String::new();
    for (key, value) in pairs {
        out.push_str(&format!("{key} = {value}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
