//! Feature grids for training-data generation.
//!
//! ```toml
//! duration_s = 5            # per mode and grid point
//! threads = [1, 8, 57]
//! size = [1_000, 1_000_000]
//! key_range = [2_000, 20_000_000]
//! insert_pct = [0.0, 0.5, 1.0]
//! ```
//!
//! Points are enumerated threads-major, then size, key range and insert
//! fraction. Repeated values give repeated points. A size above the key range
//! is clamped to the key range.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use crate::phases::MAX_KEY_RANGE;

pub const FULL_GRID: &str = include_str!("../presets/full_grid.toml");
pub const DESK_GRID: &str = include_str!("../presets/desk_grid.toml");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    pub threads: Vec<usize>,
    pub size: Vec<u64>,
    pub key_range: Vec<u64>,
    pub insert_pct: Vec<f64>,
}

fn default_duration() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub threads: usize,
    pub size: u64,
    pub key_range: u64,
    pub insert_pct: f64,
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let g: GridSpec = toml::from_str(text).context("invalid grid spec")?;
        g.validate()?;
        Ok(g)
    }

    /// `full`, `desk`, or a path to a grid file.
    pub fn load(arg: &str) -> Result<Self> {
        match arg {
            "full" => Self::parse(FULL_GRID),
            "desk" => Self::parse(DESK_GRID),
            _ => {
                let text = std::fs::read_to_string(Path::new(arg)).with_context(|| format!("reading {arg}"))?;
                Self::parse(&text).with_context(|| format!("in {arg}"))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            bail!("duration_s must be > 0");
        }
        if self.threads.is_empty() || self.size.is_empty() || self.key_range.is_empty() || self.insert_pct.is_empty() {
            bail!("every feature list needs at least one value");
        }
        if self.threads.contains(&0) {
            bail!("threads must be >= 1");
        }
        if self.key_range.iter().any(|&k| k == 0 || k > MAX_KEY_RANGE) {
            bail!("key_range values must be in 1..={MAX_KEY_RANGE}");
        }
        if self.insert_pct.iter().any(|p| !(0.0..=1.0).contains(p)) {
            bail!("insert_pct values must be in [0, 1]");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.threads.len() * self.size.len() * self.key_range.len() * self.insert_pct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &threads in &self.threads {
            for &size in &self.size {
                for &key_range in &self.key_range {
                    for &insert_pct in &self.insert_pct {
                        out.push(GridPoint {
                            threads,
                            size: size.min(key_range),
                            key_range,
                            insert_pct,
                        });
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_has_5525_points() {
        let g = GridSpec::load("full").unwrap();
        assert_eq!(g.len(), 5525);
        assert_eq!(g.points().len(), 5525);
        assert_eq!(g.duration_s, 5.0);
        assert_eq!(g.insert_pct.len(), 17);
    }

    #[test]
    fn small_grid_arithmetic() {
        let g =
            GridSpec::parse("threads = [1, 2]\nsize = [10, 500]\nkey_range = [100, 1000]\ninsert_pct = [0.25, 0.75]\n")
                .unwrap();
        let p = g.points();
        assert_eq!(p.len(), 16);
        assert_eq!(g.duration_s, 1.0);
        assert_eq!(
            p[0],
            GridPoint {
                threads: 1,
                size: 10,
                key_range: 100,
                insert_pct: 0.25
            }
        );
        // 500 > 100: clamped.
        assert_eq!(p[4].size, 100);
        assert_eq!(
            p[15],
            GridPoint {
                threads: 2,
                size: 500,
                key_range: 1000,
                insert_pct: 0.75
            }
        );
    }

    #[test]
    fn duplicates_are_kept() {
        let g = GridSpec::parse("threads = [2, 2]\nsize = [1]\nkey_range = [10]\ninsert_pct = [0.5]\n").unwrap();
        assert_eq!(g.points().len(), 2);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(GridSpec::parse("threads = []\nsize = [1]\nkey_range = [10]\ninsert_pct = [0.5]\n").is_err());
        assert!(GridSpec::parse("threads = [1]\nsize = [1]\nkey_range = [10]\ninsert_pct = [2.0]\n").is_err());
        assert!(GridSpec::parse("threads = [0]\nsize = [1]\nkey_range = [10]\ninsert_pct = [0.5]\n").is_err());
    }
}
