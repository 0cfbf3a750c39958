// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;

use super::{FeatureTensor, RawRecording, SignalError};

pub const FTZ_MAGIC: [u8; 4] = *b"FTZ\0";
pub const FTZ_VERSION: u32 = 1;
pub const RAW_MAGIC: [u8; 4] = *b"CDRW";
pub const RAW_VERSION: u32 = 1;

const FTZ_HEADER: usize = 24;
const RAW_HEADER: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Class,
    Scalar,
}

impl LabelKind {
    fn code(self) -> u32 {
        match self {
            LabelKind::Class => 0,
            LabelKind::Scalar => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self, SignalError> {
        match code {
            0 => Ok(LabelKind::Class),
            1 => Ok(LabelKind::Scalar),
            other => Err(SignalError::Format(format!("unknown label kind {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Class(u32),
    Scalar(f32),
}

impl Label {
    pub fn kind(&self) -> LabelKind {
        match self {
            Label::Class(_) => LabelKind::Class,
            Label::Scalar(_) => LabelKind::Scalar,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FtzSegment {
    pub values: Vec<f32>,
    pub label: Label,
}

impl FtzSegment {
    pub fn from_features(features: &FeatureTensor, label: Label) -> Self {
        Self {
            values: features.values.iter().map(|&v| v as f32).collect(),
            label,
        }
    }
}

/// Labelled feature segments sharing one `windows x features` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct FtzFile {
    pub windows: usize,
    pub features: usize,
    pub label_kind: LabelKind,
    pub segments: Vec<FtzSegment>,
}

fn u32_field(name: &str, v: usize) -> Result<u32, SignalError> {
    u32::try_from(v).map_err(|_| SignalError::Format(format!("{name} {v} does not fit in 32 bits")))
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

impl FtzFile {
    pub fn new(windows: usize, features: usize, label_kind: LabelKind) -> Self {
        Self {
            windows,
            features,
            label_kind,
            segments: Vec::new(),
        }
    }

    pub fn push(&mut self, segment: FtzSegment) -> Result<(), SignalError> {
        if segment.values.len() != self.windows * self.features {
            return Err(SignalError::Format(format!(
                "segment has {} values, expected {}x{}",
                segment.values.len(),
                self.windows,
                self.features
            )));
        }
        if segment.label.kind() != self.label_kind {
            return Err(SignalError::Format(format!(
                "{:?} label in a {:?} file",
                segment.label.kind(),
                self.label_kind
            )));
        }
        self.segments.push(segment);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SignalError> {
        let per = self.windows * self.features;
        let mut out = Vec::with_capacity(FTZ_HEADER + self.segments.len() * (per + 1) * 4);
        out.extend_from_slice(&FTZ_MAGIC);
        out.extend_from_slice(&FTZ_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_field("window count", self.windows)?.to_le_bytes());
        out.extend_from_slice(&u32_field("feature count", self.features)?.to_le_bytes());
        out.extend_from_slice(&u32_field("segment count", self.segments.len())?.to_le_bytes());
        out.extend_from_slice(&self.label_kind.code().to_le_bytes());
        for seg in &self.segments {
            if seg.values.len() != per || seg.label.kind() != self.label_kind {
                return Err(SignalError::Format("segment does not match file header".into()));
            }
            for v in &seg.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
            match seg.label {
                Label::Class(c) => out.extend_from_slice(&c.to_le_bytes()),
                Label::Scalar(s) => out.extend_from_slice(&s.to_le_bytes()),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SignalError> {
        if bytes.len() < FTZ_HEADER || bytes[..4] != FTZ_MAGIC {
            return Err(SignalError::Format("not an FTZ feature file".into()));
        }
        let version = read_u32(bytes, 4);
        if version != FTZ_VERSION {
            return Err(SignalError::Format(format!("unsupported FTZ version {version}")));
        }
        let windows = read_u32(bytes, 8) as usize;
        let features = read_u32(bytes, 12) as usize;
        let count = read_u32(bytes, 16) as usize;
        let label_kind = LabelKind::from_code(read_u32(bytes, 20))?;
        let per = windows * features;
        let expected = (per + 1)
            .checked_mul(4)
            .and_then(|s| s.checked_mul(count))
            .and_then(|s| s.checked_add(FTZ_HEADER));
        if expected != Some(bytes.len()) {
            return Err(SignalError::Format(format!(
                "FTZ body is {} bytes, header promises {count} segments of {windows}x{features}",
                bytes.len() - FTZ_HEADER
            )));
        }
        let mut segments = Vec::with_capacity(count);
        let mut at = FTZ_HEADER;
        for _ in 0..count {
            let values = (0..per).map(|i| read_f32(bytes, at + 4 * i)).collect();
            at += 4 * per;
            let label = match label_kind {
                LabelKind::Class => Label::Class(read_u32(bytes, at)),
                LabelKind::Scalar => Label::Scalar(read_f32(bytes, at)),
            };
            at += 4;
            segments.push(FtzSegment { values, label });
        }
        Ok(Self {
            windows,
            features,
            label_kind,
            segments,
        })
    }
}

pub fn write_ftz(path: &Path, file: &FtzFile) -> Result<(), SignalError> {
    fs::write(path, file.to_bytes()?)?;
    Ok(())
}

pub fn read_ftz(path: &Path) -> Result<FtzFile, SignalError> {
    FtzFile::from_bytes(&fs::read(path)?)
}

/// Reads a CSV with one header row of channel names and one row per sample.
pub fn read_raw_csv(path: &Path, sample_rate: f64) -> Result<RawRecording, SignalError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| SignalError::Format(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| SignalError::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    if names.is_empty() {
        return Err(SignalError::Format(format!("{}: no channel columns", path.display())));
    }
    let mut channels = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SignalError::Format(format!("{}: {e}", path.display())))?;
        if record.len() != names.len() {
            return Err(SignalError::Format(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                row + 1,
                record.len(),
                names.len()
            )));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                SignalError::Format(format!("{}: row {}: cannot parse {field:?}", path.display(), row + 1))
            })?;
            channels[c].push(v);
        }
    }
    RawRecording::with_names(channels, sample_rate, names)
}

/// Header `CDRW | version u32 | channels u32 | sample_rate f32`, followed by
/// little-endian f32 samples, channel-major.
pub fn write_raw_binary(path: &Path, rec: &RawRecording) -> Result<(), SignalError> {
    let mut out = Vec::with_capacity(RAW_HEADER + 4 * rec.channel_count() * rec.len());
    out.extend_from_slice(&RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_field("channel count", rec.channel_count())?.to_le_bytes());
    out.extend_from_slice(&(rec.sample_rate as f32).to_le_bytes());
    for ch in &rec.channels {
        for &v in ch {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_raw_binary(path: &Path) -> Result<RawRecording, SignalError> {
    let bytes = fs::read(path)?;
    if bytes.len() < RAW_HEADER || bytes[..4] != RAW_MAGIC {
        return Err(SignalError::Format(format!("{}: not a raw recording", path.display())));
    }
    let version = read_u32(&bytes, 4);
    if version != RAW_VERSION {
        return Err(SignalError::Format(format!("unsupported raw version {version}")));
    }
    let channels = read_u32(&bytes, 8) as usize;
    let sample_rate = read_f32(&bytes, 12) as f64;
    let body = bytes.len() - RAW_HEADER;
    if channels == 0 || body % (4 * channels) != 0 {
        return Err(SignalError::Format(format!(
            "{}: {body} data bytes do not divide into {channels} f32 channels",
            path.display()
        )));
    }
    let n = body / (4 * channels);
    let data = (0..channels)
        .map(|c| {
            (0..n)
                .map(|i| read_f32(&bytes, RAW_HEADER + 4 * (c * n + i)) as f64)
                .collect()
        })
        .collect();
    RawRecording::new(data, sample_rate)
}
