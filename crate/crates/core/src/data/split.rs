// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Provenance};

/// How segments are divided into train and test sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Protocol {
    /// One split per subject; that subject is the whole test set.
    Loso,
    /// Per subject, the first `train_sessions` sessions train and the rest test.
    FixedSession { train_sessions: usize },
    /// Per subject, `folds` contiguous blocks in temporal order.
    Kfold { folds: usize },
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Loso => write!(f, "loso"),
            Protocol::FixedSession { train_sessions } => write!(f, "fixed-session({train_sessions})"),
            Protocol::Kfold { folds } => write!(f, "kfold({folds})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub name: String,
    /// Subject the split evaluates on; for LOSO this is the held-out subject.
    pub subject: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Serializable split manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub protocol: Protocol,
    pub splits: Vec<Split>,
}

impl SplitSet {
    pub fn to_json(&self) -> Result<String, DataError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        Ok(serde_json::from_str(text)?)
    }
}

fn by_subject(prov: &[Provenance]) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in prov.iter().enumerate() {
        out.entry(p.subject).or_default().push(i);
    }
    for idx in out.values_mut() {
        idx.sort_by_key(|&i| (prov[i].session, prov[i].index, i));
    }
    out
}

fn protocol_error(protocol: Protocol, reason: String) -> DataError {
    DataError::Protocol {
        protocol: protocol.to_string(),
        reason,
    }
}

/// Builds train/test index sets. Within each set indices are ascending.
pub fn make_splits(prov: &[Provenance], protocol: Protocol) -> Result<SplitSet, DataError> {
    if prov.is_empty() {
        return Err(protocol_error(protocol, "no segments".into()));
    }
    let subjects = by_subject(prov);
    let all: Vec<usize> = (0..prov.len()).collect();
    let mut splits = Vec::new();
    match protocol {
        Protocol::Loso => {
            if subjects.len() < 2 {
                return Err(protocol_error(protocol, "needs at least two subjects".into()));
            }
            for (&s, idx) in &subjects {
                let held: BTreeSet<usize> = idx.iter().copied().collect();
                splits.push(Split {
                    name: format!("subject{s}"),
                    subject: s,
                    train: all.iter().copied().filter(|i| !held.contains(i)).collect(),
                    test: held.into_iter().collect(),
                });
            }
        }
        Protocol::FixedSession { train_sessions } => {
            for (&s, idx) in &subjects {
                let sessions: BTreeSet<usize> = idx.iter().map(|&i| prov[i].session).collect();
                if train_sessions == 0 || sessions.len() <= train_sessions {
                    return Err(protocol_error(
                        protocol,
                        format!("subject {s} has {} sessions, need more than {train_sessions}", sessions.len()),
                    ));
                }
                let train_set: BTreeSet<usize> = sessions.iter().copied().take(train_sessions).collect();
                let (mut train, mut test): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| train_set.contains(&prov[i].session));
                train.sort_unstable();
                test.sort_unstable();
                splits.push(Split {
                    name: format!("subject{s}"),
                    subject: s,
                    train,
                    test,
                });
            }
        }
        Protocol::Kfold { folds } => {
            if folds < 2 {
                return Err(protocol_error(protocol, "needs at least two folds".into()));
            }
            for (&s, idx) in &subjects {
                if idx.len() < folds {
                    return Err(protocol_error(
                        protocol,
                        format!("subject {s} has {} segments, fewer than {folds} folds", idx.len()),
                    ));
                }
                let (base, extra) = (idx.len() / folds, idx.len() % folds);
                let mut start = 0;
                for f in 0..folds {
                    let len = base + usize::from(f < extra);
                    let mut test = idx[start..start + len].to_vec();
                    let mut train: Vec<usize> = idx[..start].iter().chain(&idx[start + len..]).copied().collect();
                    test.sort_unstable();
                    train.sort_unstable();
                    splits.push(Split {
                        name: format!("subject{s}_fold{f}"),
                        subject: s,
                        train,
                        test,
                    });
                    start += len;
                }
            }
        }
    }
    Ok(SplitSet { protocol, splits })
}

/// Seeded subset of `indices` holding `round(fraction * n)` entries (at
/// least one), returned in ascending order. A fraction of 1 returns the
/// input unchanged.
pub fn sample_fraction(indices: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::InvalidSpec(format!("fraction {fraction} outside (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(indices.to_vec());
    }
    let keep = ((fraction * indices.len() as f64).round() as usize).clamp(1, indices.len().max(1));
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    shuffled.truncate(keep);
    shuffled.sort_unstable();
    Ok(shuffled)
}
