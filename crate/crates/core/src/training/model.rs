// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::TrainError;
use crate::capsnet::{ArchSpec, ModelParams};
use crate::data::Dataset;
use crate::tensorcore::{read_checkpoint, write_checkpoint, Tensor};

/// Per-feature affine normalization fitted on a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn identity(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            sd: vec![1.0; features],
        }
    }

    /// Mean and population standard deviation of every feature over all
    /// windows of the given segments. Constant features keep unit scale.
    pub fn fit(data: &Dataset, indices: &[usize]) -> Self {
        let f = data.features;
        let mut sum = vec![0.0; f];
        let mut count = 0usize;
        for &i in indices {
            for row in data.records[i].features.data().chunks_exact(f) {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Self::identity(f);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; f];
        for &i in indices {
            for row in data.records[i].features.data().chunks_exact(f) {
                for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m).powi(2);
                }
            }
        }
        let sd = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let f = self.mean.len();
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % f]) / self.sd[i % f])
            .collect()
    }
}

/// Trained parameters together with the input normalization they expect.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub standardizer: Standardizer,
}

impl TrainedModel {
    pub fn spec(&self) -> &ArchSpec {
        &self.params.spec
    }

    /// Model checkpoint followed by a second tensor block holding the
    /// normalization (`input.mean`, `input.sd`).
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), TrainError> {
        self.params.save(&mut w)?;
        let f = self.standardizer.mean.len();
        let block = vec![
            ("input.mean".to_string(), Tensor::new(&[f], self.standardizer.mean.clone())?),
            ("input.sd".to_string(), Tensor::new(&[f], self.standardizer.sd.clone())?),
        ];
        write_checkpoint(&mut w, &block)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, TrainError> {
        let params = ModelParams::load(&mut r)?;
        Self::finish_read(params, r)
    }

    /// Like [`read`](Self::read) but rejects an architecture other than `spec`.
    pub fn read_expecting<R: Read>(mut r: R, spec: &ArchSpec) -> Result<Self, TrainError> {
        let params = ModelParams::load_expecting(&mut r, spec)?;
        Self::finish_read(params, r)
    }

    fn finish_read<R: Read>(params: ModelParams, r: R) -> Result<Self, TrainError> {
        let block = read_checkpoint(r)?;
        let get = |name: &str| {
            block
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.data().to_vec())
                .ok_or_else(|| TrainError::Config(format!("checkpoint lacks {name}")))
        };
        let standardizer = Standardizer {
            mean: get("input.mean")?,
            sd: get("input.sd")?,
        };
        let f = params.spec.features;
        if standardizer.mean.len() != f || standardizer.sd.len() != f {
            return Err(TrainError::Config(format!(
                "normalization covers {} features, model expects {f}",
                standardizer.mean.len()
            )));
        }
        Ok(Self { params, standardizer })
    }

    pub fn save(&self, path: &Path) -> Result<String, TrainError> {
        let mut bytes = Vec::new();
        self.write(&mut bytes)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn load_expecting(path: &Path, spec: &ArchSpec) -> Result<Self, TrainError> {
        Self::read_expecting(BufReader::new(File::open(path)?), spec)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn digest(&self) -> Result<String, TrainError> {
        let mut bytes = Vec::new();
        self.write(&mut bytes)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}
