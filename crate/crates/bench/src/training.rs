//! Training samples: generation, CSV I/O, holdout evaluation.
//!
//! CSV header: `n_threads,size,key_range,insert_pct,thr_obl,thr_aware,label`.
//! Throughputs are operations per second; `label` is the class code
//! (0 neutral, 1 oblivious, 2 aware).

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use adaptivepq::classify::{self, Features, Mode, Sample, Tree};
use anyhow::{bail, Context, Result};
use rand::rngs::SmallRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::grid::{GridPoint, GridSpec};
use crate::phases::WorkloadPhase;
use crate::run::{run, Impl, RunConfig};

pub const CSV_HEADER: &str = "n_threads,size,key_range,insert_pct,thr_obl,thr_aware,label";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    n_threads: f64,
    size: f64,
    key_range: f64,
    insert_pct: f64,
    thr_obl: f64,
    thr_aware: f64,
    label: u8,
}

impl From<&Sample<f64>> for Row {
    fn from(s: &Sample<f64>) -> Self {
        Row {
            n_threads: s.features.n_threads,
            size: s.features.size,
            key_range: s.features.key_range,
            insert_pct: s.features.insert_pct,
            thr_obl: s.thr_oblivious,
            thr_aware: s.thr_aware,
            label: s.label.code(),
        }
    }
}

fn writer_for<W: Write>(w: W, header: bool) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(header).from_writer(w)
}

pub fn write_samples<W: Write>(w: W, samples: &[Sample<f64>]) -> Result<()> {
    let mut out = writer_for(w, true);
    for s in samples {
        out.serialize(Row::from(s))?;
    }
    out.flush()?;
    Ok(())
}

/// Opens `path` for appending, writing the header if the file is new or
/// empty and checking it otherwise.
pub fn open_for_append(path: &Path) -> Result<csv::Writer<File>> {
    let existing = match File::open(path) {
        Ok(f) => {
            let mut first = String::new();
            BufReader::new(f)
                .read_line(&mut first)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(first)
        }
        Err(_) => None,
    };
    let needs_header = match existing.as_deref().map(str::trim_end) {
        None | Some("") => true,
        Some(CSV_HEADER) => false,
        Some(other) => bail!("{} has header `{other}`, expected `{CSV_HEADER}`", path.display()),
    };
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = writer_for(file, false);
    if needs_header {
        w.write_record(CSV_HEADER.split(','))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(w)
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample<f64>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_samples(file).with_context(|| format!("in {}", path.display()))
}

pub fn parse_samples<R: std::io::Read>(r: R) -> Result<Vec<Sample<f64>>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        bail!("expected header `{CSV_HEADER}`, found `{}`", header.join(","));
    }
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.with_context(|| format!("line {line}"))?;
        let features = Features::new(row.n_threads, row.size, row.key_range, row.insert_pct)
            .with_context(|| format!("line {line}"))?;
        let label = Mode::from_code(row.label).with_context(|| format!("line {line}: bad label {}", row.label))?;
        out.push(Sample {
            features,
            thr_oblivious: row.thr_obl,
            thr_aware: row.thr_aware,
            label,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Per-mode measurement time; `None` uses the grid's `duration_s`.
    pub duration_s: Option<f64>,
    /// Tie threshold in ops/s.
    pub threshold: f64,
    /// Runner settings shared by both modes. `imp` is ignored.
    pub run: RunConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            duration_s: None,
            threshold: classify::DEFAULT_TIE_THRESHOLD,
            run: RunConfig::default(),
        }
    }
}

/// Measures one grid point in both modes and labels it.
pub fn measure_point(point: &GridPoint, duration_s: f64, cfg: &GenConfig, index: usize) -> Result<Sample<f64>> {
    let phase = WorkloadPhase::new(duration_s, point.threads, point.key_range, point.insert_pct).with_size(point.size);
    let mut thr = [0.0; 2];
    for (slot, imp) in [Impl::Oblivious, Impl::Nuddle].into_iter().enumerate() {
        let rc = RunConfig {
            imp,
            seed: cfg.run.seed.wrapping_add(index as u64),
            sample_interval: Duration::from_secs_f64(duration_s),
            tree: None,
            ..cfg.run.clone()
        };
        thr[slot] = run(std::slice::from_ref(&phase), &rc)?.mean_throughput();
    }
    let features = Features::new(
        point.threads as f64,
        point.size as f64,
        point.key_range as f64,
        point.insert_pct,
    )?;
    Ok(Sample::measured(features, thr[0], thr[1], cfg.threshold)?)
}

/// Runs every grid point and appends one row per point to `out`. Returns the
/// number of rows written.
pub fn gen_training(
    grid: &GridSpec,
    out: &Path,
    cfg: &GenConfig,
    mut progress: impl FnMut(usize, usize, &Sample<f64>),
) -> Result<usize> {
    let duration = cfg.duration_s.unwrap_or(grid.duration_s);
    if !(duration.is_finite() && duration > 0.0) {
        bail!("duration must be > 0");
    }
    let mut w = open_for_append(out)?;
    let points = grid.points();
    for (i, p) in points.iter().enumerate() {
        let s = measure_point(p, duration, cfg, i)?;
        w.serialize(Row::from(&s))
            .with_context(|| format!("writing {}", out.display()))?;
        w.flush().with_context(|| format!("writing {}", out.display()))?;
        progress(i + 1, points.len(), &s);
    }
    Ok(points.len())
}

/// Shuffles with `seed` and puts `test_frac` of the samples (rounded, at
/// least one when there are two or more) in the second half.
pub fn holdout_split(samples: &[Sample<f64>], test_frac: f64, seed: u64) -> (Vec<Sample<f64>>, Vec<Sample<f64>>) {
    let mut all = samples.to_vec();
    all.shuffle(&mut SmallRng::seed_from_u64(seed));
    let n = all.len();
    let mut n_test = (n as f64 * test_frac.clamp(0.0, 1.0)).round() as usize;
    if n >= 2 && test_frac > 0.0 {
        n_test = n_test.clamp(1, n - 1);
    }
    let test = all.split_off(n - n_test.min(n));
    (all, test)
}

pub fn accuracy(tree: &Tree<f64>, samples: &[Sample<f64>]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples.iter().filter(|s| tree.predict(&s.features) == s.label).count();
    hits as f64 / samples.len() as f64
}

/// Most frequent label (lowest code on ties).
pub fn majority_label(samples: &[Sample<f64>]) -> Mode {
    let mut counts = [0usize; 3];
    for s in samples {
        counts[s.label.code() as usize] += 1;
    }
    let best = (0..3).fold(0, |b, k| if counts[k] > counts[b] { k } else { b });
    Mode::from_code(best as u8).expect("class index")
}

/// Accuracy on `test` of always predicting the majority label of `train`.
pub fn majority_baseline(train: &[Sample<f64>], test: &[Sample<f64>]) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let m = majority_label(train);
    test.iter().filter(|s| s.label == m).count() as f64 / test.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(t: f64, label: Mode) -> Sample<f64> {
        Sample {
            features: Features::new(t, 10.0, 100.0, 0.5).unwrap(),
            thr_oblivious: 1.0,
            thr_aware: 2.5,
            label,
        }
    }

    #[test]
    fn csv_round_trip() {
        let data = vec![s(1.0, Mode::Aware), s(2.0, Mode::Neutral), s(3.0, Mode::Oblivious)];
        let mut buf = Vec::new();
        write_samples(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
        assert_eq!(text.lines().nth(1), Some("1.0,10.0,100.0,0.5,1.0,2.5,2"));
        assert_eq!(parse_samples(&buf[..]).unwrap(), data);
    }

    #[test]
    fn rejects_bad_csv() {
        assert!(parse_samples("a,b\n1,2\n".as_bytes()).is_err());
        let bad_label = format!("{CSV_HEADER}\n1,1,1,0.5,1,1,7\n");
        assert!(parse_samples(bad_label.as_bytes()).is_err());
        let bad_pct = format!("{CSV_HEADER}\n1,1,1,1.5,1,1,0\n");
        assert!(parse_samples(bad_pct.as_bytes()).is_err());
    }

    #[test]
    fn append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        for _ in 0..2 {
            let mut w = open_for_append(&path).unwrap();
            w.serialize(Row::from(&s(1.0, Mode::Aware))).unwrap();
            w.flush().unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("n_threads").count(), 1);
        assert_eq!(read_samples(&path).unwrap().len(), 2);
        std::fs::write(&path, "x,y\n").unwrap();
        assert!(open_for_append(&path).is_err());
    }

    #[test]
    fn split_sizes() {
        let data: Vec<_> = (0..100).map(|i| s(i as f64, Mode::Aware)).collect();
        let (train, test) = holdout_split(&data, 0.25, 3);
        assert_eq!((train.len(), test.len()), (75, 25));
        let (a, _) = holdout_split(&data, 0.25, 3);
        assert_eq!(a, train);
        let (train, test) = holdout_split(&data[..2], 0.25, 3);
        assert_eq!((train.len(), test.len()), (1, 1));
    }

    #[test]
    fn baseline() {
        let train = vec![s(1.0, Mode::Aware), s(2.0, Mode::Aware), s(3.0, Mode::Oblivious)];
        let test = vec![s(1.0, Mode::Aware), s(2.0, Mode::Neutral)];
        assert_eq!(majority_label(&train), Mode::Aware);
        assert_eq!(majority_baseline(&train, &test), 0.5);
        assert_eq!(
            majority_label(&[s(1.0, Mode::Aware), s(1.0, Mode::Oblivious)]),
            Mode::Oblivious
        );
    }
}
