#![allow(dead_code)]

use std::collections::HashMap;

/// Keys one thread successfully inserted and deleted.
#[derive(Debug, Default, Clone)]
pub struct OpLog {
    pub inserted: Vec<u64>,
    pub deleted: Vec<u64>,
}

impl OpLog {
    pub fn merge(logs: impl IntoIterator<Item = OpLog>) -> OpLog {
        let mut all = OpLog::default();
        for l in logs {
            all.inserted.extend(l.inserted);
            all.deleted.extend(l.deleted);
        }
        all
    }
}

/// Checks that deleted ∪ remaining equals inserted as multisets, and that no
/// key was deleted more often than it was inserted.
pub fn check_conservation(log: &OpLog, remaining: &[u64]) -> Result<(), String> {
    let mut balance: HashMap<u64, i64> = HashMap::new();
    for &k in &log.inserted {
        *balance.entry(k).or_default() += 1;
    }
    for &k in log.deleted.iter().chain(remaining) {
        let e = balance.entry(k).or_default();
        *e -= 1;
        if *e < 0 {
            return Err(format!("key {k} came out more often than it went in"));
        }
    }
    match balance.iter().find(|(_, &v)| v != 0) {
        Some((k, v)) => Err(format!("key {k} lost ({v} unaccounted)")),
        None => Ok(()),
    }
}
