//! Decision-tree mode selector.
//!
//! Workloads are described by four features (running threads, queue size,
//! key range, insert fraction). Training samples are labeled by comparing the
//! throughput of the two modes: a difference below the tie threshold gives the
//! neutral class, otherwise the faster mode wins. Trees are grown with CART
//! (Gini impurity, midpoint thresholds) and stored in a small text format.
//!
//! Everything here is generic over the float type `T` used for feature values
//! and split thresholds; the crate root exports `f64` aliases.

mod format;
mod train;
mod tree;

pub use format::{deserialize, serialize, TreeParseError, FORMAT_VERSION};
pub use train::{train, Criterion, TrainConfig};
pub use tree::{Tree, TreeNode};

use std::fmt::{self, Debug, Display};
use std::str::FromStr;

use num_traits::Float;
use thiserror::Error;

/// Default tie threshold in operations per second.
pub const DEFAULT_TIE_THRESHOLD: f64 = 1.5e6;

/// Number of features in a [`Features`] vector.
pub const N_FEATURES: usize = 4;

/// Feature names, in index order. Also used by the tree file format.
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["threads", "size", "key_range", "insert_pct"];

/// Float types usable as feature values and split thresholds.
pub trait Scalar: Float + FromStr + Display + Debug + Send + Sync + 'static {}

impl<T> Scalar for T where T: Float + FromStr + Display + Debug + Send + Sync + 'static {}

/// Classifier output and algorithmic mode. Only `Oblivious` and `Aware`
/// are ever stored as the live mode of a queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Mode {
    /// The two modes tie; keep the current one.
    Neutral = 0,
    /// Threads operate directly on the shared base queue.
    Oblivious = 1,
    /// Operations are delegated to server threads.
    Aware = 2,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Neutral, Mode::Oblivious, Mode::Aware];

    pub fn from_code(code: u8) -> Option<Mode> {
        match code {
            0 => Some(Mode::Neutral),
            1 => Some(Mode::Oblivious),
            2 => Some(Mode::Aware),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Neutral => "neutral",
            Mode::Oblivious => "numa-oblivious",
            Mode::Aware => "numa-aware",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("throughput must be finite and non-negative (got {obl}, {aware})")]
    InvalidThroughput { obl: f64, aware: f64 },
    #[error("tie threshold must be finite and non-negative (got {0})")]
    InvalidThreshold(f64),
    #[error("feature `{name}` is invalid: {value}")]
    InvalidFeature { name: &'static str, value: String },
    #[error("cannot train on an empty sample set")]
    EmptySamples,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("malformed tree: {0}")]
    MalformedTree(String),
}

/// Contention-workload description used as classifier input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Features<T> {
    pub n_threads: T,
    pub size: T,
    pub key_range: T,
    /// Fraction of operations that are inserts, in `[0, 1]`.
    pub insert_pct: T,
}

impl<T: Scalar> Features<T> {
    pub fn new(n_threads: T, size: T, key_range: T, insert_pct: T) -> Result<Self, ClassifyError> {
        Self::from_array([n_threads, size, key_range, insert_pct])
    }

    pub fn from_array(values: [T; N_FEATURES]) -> Result<Self, ClassifyError> {
        for (i, v) in values.iter().enumerate() {
            let bad = !v.is_finite() || *v < T::zero() || (i == 3 && *v > T::one());
            if bad {
                return Err(ClassifyError::InvalidFeature {
                    name: FEATURE_NAMES[i],
                    value: v.to_string(),
                });
            }
        }
        Ok(Self {
            n_threads: values[0],
            size: values[1],
            key_range: values[2],
            insert_pct: values[3],
        })
    }

    pub fn to_array(&self) -> [T; N_FEATURES] {
        [self.n_threads, self.size, self.key_range, self.insert_pct]
    }

    pub fn get(&self, feature: usize) -> T {
        self.to_array()[feature]
    }
}

/// A measured workload with the throughput of both modes and its label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T> {
    pub features: Features<T>,
    pub thr_oblivious: T,
    pub thr_aware: T,
    pub label: Mode,
}

impl<T: Scalar> Sample<T> {
    /// Builds a sample and labels it with [`label`].
    pub fn measured(
        features: Features<T>,
        thr_oblivious: T,
        thr_aware: T,
        threshold: f64,
    ) -> Result<Self, ClassifyError> {
        let label = label(
            thr_oblivious.to_f64().unwrap_or(f64::NAN),
            thr_aware.to_f64().unwrap_or(f64::NAN),
            threshold,
        )?;
        Ok(Self {
            features,
            thr_oblivious,
            thr_aware,
            label,
        })
    }
}

/// Labels a pair of throughputs: neutral when they differ by less than
/// `threshold`, otherwise the mode with the higher throughput.
pub fn label(thr_oblivious: f64, thr_aware: f64, threshold: f64) -> Result<Mode, ClassifyError> {
    let ok = |x: f64| x.is_finite() && x >= 0.0;
    if !ok(thr_oblivious) || !ok(thr_aware) {
        return Err(ClassifyError::InvalidThroughput {
            obl: thr_oblivious,
            aware: thr_aware,
        });
    }
    if !ok(threshold) {
        return Err(ClassifyError::InvalidThreshold(threshold));
    }
    Ok(if (thr_oblivious - thr_aware).abs() < threshold {
        Mode::Neutral
    } else if thr_oblivious > thr_aware {
        Mode::Oblivious
    } else {
        Mode::Aware
    })
}
