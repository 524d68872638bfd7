//! Phase files: a TOML list of `[[phase]]` tables.
//!
//! ```toml
//! [[phase]]
//! duration_s = 25      # > 0
//! size = 1_000_000     # initial size; read from the first phase only
//! key_range = 10_000_000
//! threads = 57
//! insert_pct = 0.5     # fraction of inserts, in [0, 1]
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

/// Largest usable key range: keys are drawn from `1..=key_range` and the
/// top value is reserved.
pub const MAX_KEY_RANGE: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadPhase {
    pub duration_s: f64,
    #[serde(default)]
    pub size: Option<u64>,
    pub key_range: u64,
    pub threads: usize,
    pub insert_pct: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseFile {
    phase: Vec<WorkloadPhase>,
}

pub const PRESETS: [(&str, &str); 4] = [
    ("dynamic_range", include_str!("../presets/dynamic_range.toml")),
    ("dynamic_threads", include_str!("../presets/dynamic_threads.toml")),
    ("dynamic_operation", include_str!("../presets/dynamic_operation.toml")),
    ("dynamic_total", include_str!("../presets/dynamic_total.toml")),
];

/// Thread count the presets were written for.
pub const REFERENCE_CONTEXTS: usize = 64;

impl WorkloadPhase {
    pub fn new(duration_s: f64, threads: usize, key_range: u64, insert_pct: f64) -> Self {
        Self {
            duration_s,
            size: None,
            key_range,
            threads,
            insert_pct,
        }
    }

    pub fn with_size(mut self, size: u64) -> Self {
        self.size = Some(size);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            bail!("duration_s must be > 0 (got {})", self.duration_s);
        }
        if !(0.0..=1.0).contains(&self.insert_pct) {
            bail!("insert_pct must be in [0, 1] (got {})", self.insert_pct);
        }
        if self.threads == 0 {
            bail!("threads must be >= 1");
        }
        if self.key_range == 0 || self.key_range > MAX_KEY_RANGE {
            bail!("key_range must be in 1..={MAX_KEY_RANGE} (got {})", self.key_range);
        }
        Ok(())
    }
}

pub fn parse_phases(text: &str) -> Result<Vec<WorkloadPhase>> {
    let file: PhaseFile = toml::from_str(text).context("invalid phase file")?;
    if file.phase.is_empty() {
        bail!("phase file has no [[phase]] entries");
    }
    for (i, p) in file.phase.iter().enumerate() {
        p.validate().with_context(|| format!("phase {}", i + 1))?;
    }
    Ok(file.phase)
}

pub fn preset(name: &str) -> Option<Vec<WorkloadPhase>> {
    let name = name.trim_end_matches(".toml");
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_phases(text).expect("shipped preset parses"))
}

/// Loads a phase file, or a shipped preset when `arg` names one and no such
/// file exists.
pub fn load_phases(arg: &str) -> Result<Vec<WorkloadPhase>> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(p) = preset(path.file_name().and_then(|n| n.to_str()).unwrap_or(arg)) {
            return Ok(p);
        }
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_phases(&text).with_context(|| format!("in {}", path.display()))
}

/// Rescales thread counts from the 64 contexts the presets were written for to `max_threads`
/// (at least 1 each) and sets every phase to `duration_s`.
pub fn desk_scale(phases: &[WorkloadPhase], max_threads: usize, duration_s: f64) -> Vec<WorkloadPhase> {
    phases
        .iter()
        .map(|p| WorkloadPhase {
            duration_s,
            threads: ((p.threads * max_threads) as f64 / REFERENCE_CONTEXTS as f64)
                .round()
                .max(1.0) as usize,
            ..p.clone()
        })
        .collect()
}

/// Shorthand for the phase boundaries, in seconds from the start.
pub fn boundaries(phases: &[WorkloadPhase]) -> Vec<f64> {
    phases
        .iter()
        .scan(0.0, |t, p| {
            *t += p.duration_s;
            Some(*t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_transcribe_tables() {
        let r = preset("dynamic_range").unwrap();
        assert_eq!(r.len(), 5);
        assert_eq!(r[0].size, Some(1149));
        assert_eq!(
            r.iter().map(|p| p.key_range).collect::<Vec<_>>(),
            vec![100_000, 2_000, 1_000_000, 10_000, 50_000_000]
        );
        let t = preset("dynamic_threads").unwrap();
        assert_eq!(
            t.iter().map(|p| p.threads).collect::<Vec<_>>(),
            vec![57, 29, 15, 43, 15]
        );
        let o = preset("dynamic_operation.toml").unwrap();
        assert_eq!(
            o.iter().map(|p| p.insert_pct).collect::<Vec<_>>(),
            vec![0.5, 1.0, 0.3, 1.0, 0.0]
        );
        let total = preset("dynamic_total").unwrap();
        assert_eq!(total.len(), 15);
        assert_eq!(boundaries(&total).last().copied(), Some(375.0));
        assert!(total.iter().all(|p| p.duration_s == 25.0));
        assert_eq!(total[0].size, Some(1_000_000));
        assert!(total[1..].iter().all(|p| p.size.is_none()));
        assert!(preset("nope").is_none());
    }

    #[test]
    fn rejects_bad_phases() {
        let bad = [
            "[[phase]]\nduration_s = 0\nkey_range = 10\nthreads = 1\ninsert_pct = 0.5\n",
            "[[phase]]\nduration_s = 1\nkey_range = 10\nthreads = 1\ninsert_pct = 1.5\n",
            "[[phase]]\nduration_s = 1\nkey_range = 0\nthreads = 1\ninsert_pct = 0.5\n",
            "[[phase]]\nduration_s = 1\nkey_range = 10\nthreads = 0\ninsert_pct = 0.5\n",
            "[[phase]]\nduration_s = 1\nkey_range = 10\nthreads = 1\ninsert_pct = 0.5\ncolour = 1\n",
            "phase = []\n",
        ];
        for text in bad {
            assert!(parse_phases(text).is_err(), "{text}");
        }
    }

    #[test]
    fn desk_scaling() {
        let t = preset("dynamic_threads").unwrap();
        let d = desk_scale(&t, 4, 1.0);
        assert_eq!(d.iter().map(|p| p.threads).collect::<Vec<_>>(), vec![4, 2, 1, 3, 1]);
        assert!(d.iter().all(|p| p.duration_s == 1.0));
        assert_eq!(d[0].size, Some(1166));
    }
}
