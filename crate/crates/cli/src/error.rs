// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use capsdistill::capsnet::CapsError;
use capsdistill::data::DataError;
use capsdistill::signal::SignalError;
use capsdistill::tensorcore::TensorError;
use capsdistill::training::TrainError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_EXISTS: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

/// Invalid or inconsistent configuration, including shape mismatches.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Output already present and `--force` not given.
#[derive(Debug)]
pub struct ExistsError(pub String);

impl fmt::Display for ExistsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} already exists; pass --force to overwrite", self.0)
    }
}

impl std::error::Error for ExistsError {}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::InvalidSpec(_) | DataError::Protocol { .. } => EXIT_CONFIG,
        _ => EXIT_INPUT,
    }
}

fn signal_code(e: &SignalError) -> i32 {
    match e {
        SignalError::InvalidConfig(_) => EXIT_CONFIG,
        _ => EXIT_INPUT,
    }
}

fn tensor_code(e: &TensorError) -> i32 {
    match e {
        TensorError::Format(_) | TensorError::Io(_) => EXIT_INPUT,
        _ => EXIT_CONFIG,
    }
}

fn caps_code(e: &CapsError) -> i32 {
    match e {
        CapsError::Tensor(t) => tensor_code(t),
        CapsError::Io(_) | CapsError::Json(_) => EXIT_INPUT,
        _ => EXIT_CONFIG,
    }
}

/// Maps an error chain onto the documented exit codes.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ExistsError>() {
            return EXIT_EXISTS;
        }
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Data(d) => data_code(d),
                TrainError::Caps(c) => caps_code(c),
                TrainError::Tensor(t) => tensor_code(t),
                TrainError::Io(_) | TrainError::Csv(_) | TrainError::Json(_) => EXIT_INPUT,
                _ => EXIT_CONFIG,
            };
        }
        if let Some(e) = cause.downcast_ref::<CapsError>() {
            return caps_code(e);
        }
        if let Some(e) = cause.downcast_ref::<TensorError>() {
            return tensor_code(e);
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return data_code(e);
        }
        if let Some(e) = cause.downcast_ref::<SignalError>() {
            return signal_code(e);
        }
    }
    EXIT_INPUT
}
