// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::capsnet::Head;
use crate::signal::{read_ftz, write_ftz, FtzFile, FtzSegment, Label, LabelKind};
use crate::tensorcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Class(usize),
    Scalar(f64),
}

impl Target {
    pub fn task(&self) -> Head {
        match self {
            Target::Class(_) => Head::Classification,
            Target::Scalar(_) => Head::Regression,
        }
    }

    pub fn class(&self) -> Option<usize> {
        match *self {
            Target::Class(c) => Some(c),
            Target::Scalar(_) => None,
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match *self {
            Target::Scalar(v) => Some(v),
            Target::Class(_) => None,
        }
    }
}

/// Where a segment came from. `index` is its position within the session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub subject: usize,
    pub session: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRecord {
    /// `[windows, features]`.
    pub features: Tensor,
    pub target: Target,
    pub provenance: Provenance,
}

/// Segments sharing one feature shape and one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Head,
    pub windows: usize,
    pub features: usize,
    pub records: Vec<SegmentRecord>,
}

impl Dataset {
    pub fn new(task: Head, windows: usize, features: usize, records: Vec<SegmentRecord>) -> Result<Self, DataError> {
        let ds = Self {
            task,
            windows,
            features,
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (i, r) in self.records.iter().enumerate() {
            if r.features.shape() != [self.windows, self.features] {
                return Err(DataError::Inconsistent(format!(
                    "segment {i} has shape {:?}, expected [{}, {}]",
                    r.features.shape(),
                    self.windows,
                    self.features
                )));
            }
            if r.target.task() != self.task {
                return Err(DataError::Inconsistent(format!("segment {i} label does not match the {:?} task", self.task)));
            }
            if let Target::Scalar(v) = r.target {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DataError::Inconsistent(format!("segment {i} target {v} outside [0, 1]")));
                }
            }
            if !r.features.all_finite() {
                return Err(DataError::Inconsistent(format!("segment {i} has non-finite features")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn provenance(&self) -> Vec<Provenance> {
        self.records.iter().map(|r| r.provenance).collect()
    }

    pub fn class_count(&self) -> usize {
        self.records
            .iter()
            .filter_map(|r| r.target.class())
            .max()
            .map_or(0, |c| c + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            task: self.task,
            windows: self.windows,
            features: self.features,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Writes one FTZ file per (subject, session), named `sSSS_rRRR.ftz`.
    ///
    /// Features are stored as 32-bit floats.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<PathBuf>, DataError> {
        fs::create_dir_all(dir)?;
        let kind = match self.task {
            Head::Classification => LabelKind::Class,
            Head::Regression => LabelKind::Scalar,
        };
        let mut groups: BTreeMap<(usize, usize), Vec<&SegmentRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry((r.provenance.subject, r.provenance.session)).or_default().push(r);
        }
        let mut written = Vec::new();
        for ((subject, session), mut recs) in groups {
            recs.sort_by_key(|r| r.provenance.index);
            let mut file = FtzFile::new(self.windows, self.features, kind);
            for r in recs {
                let label = match r.target {
                    Target::Class(c) => Label::Class(c as u32),
                    Target::Scalar(v) => Label::Scalar(v as f32),
                };
                file.push(FtzSegment {
                    values: r.features.data().iter().map(|&v| v as f32).collect(),
                    label,
                })?;
            }
            let path = dir.join(ftz_name(subject, session));
            write_ftz(&path, &file)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Loads every `*.ftz` file in `dir`, in file-name order. Names of the
    /// form `sSSS_rRRR.ftz` supply subject and session; any other file is
    /// treated as its own subject with session 0.
    pub fn load_dir(dir: &Path) -> Result<Self, DataError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "ftz"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(DataError::Empty(dir.display().to_string()));
        }
        let mut shape = None;
        let mut records = Vec::new();
        for (file_index, path) in paths.iter().enumerate() {
            let file = read_ftz(path)?;
            let this = (file.windows, file.features, file.label_kind);
            if *shape.get_or_insert(this) != this {
                return Err(DataError::Inconsistent(format!(
                    "{} has shape {}x{} {:?}, earlier files differ",
                    path.display(),
                    file.windows,
                    file.features,
                    file.label_kind
                )));
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let (subject, session) = parse_ftz_stem(stem).unwrap_or((file_index, 0));
            for (index, seg) in file.segments.into_iter().enumerate() {
                let target = match seg.label {
                    Label::Class(c) => Target::Class(c as usize),
                    Label::Scalar(v) => Target::Scalar(v as f64),
                };
                records.push(SegmentRecord {
                    features: Tensor::new(&[file.windows, file.features], seg.values.iter().map(|&v| v as f64).collect())
                        .expect("FTZ segment length checked on read"),
                    target,
                    provenance: Provenance { subject, session, index },
                });
            }
        }
        let (windows, features, kind) = shape.expect("at least one file");
        let task = match kind {
            LabelKind::Class => Head::Classification,
            LabelKind::Scalar => Head::Regression,
        };
        Self::new(task, windows, features, records)
    }
}

pub(crate) fn ftz_name(subject: usize, session: usize) -> String {
    format!("s{subject:03}_r{session:03}.ftz")
}

fn parse_ftz_stem(stem: &str) -> Option<(usize, usize)> {
    let (s, r) = stem.strip_prefix('s')?.split_once("_r")?;
    Some((s.parse().ok()?, r.parse().ok()?))
}
