// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::CapsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Classification,
    Regression,
}

/// Hidden units of the regression head's dense layer.
pub const REGRESSION_HIDDEN: usize = 10;

pub const DEFAULT_ROUTING_ITERS: usize = 3;

/// Shape parameters of one LSTM-CapsNet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    /// Input features per window.
    pub features: usize,
    /// Windows per segment, also the LSTM sequence length.
    pub windows: usize,
    /// Stacked LSTM layers.
    pub lstm_layers: usize,
    /// LSTM hidden units; must be a perfect square.
    pub hidden: usize,
    /// Channel groups that split each spatial position into lower capsules.
    pub groups: usize,
    /// Higher-level capsule count.
    pub higher_count: usize,
    /// Higher-level capsule dimension.
    pub higher_dim: usize,
    pub head: Head,
    #[serde(default = "default_iters")]
    pub routing_iters: usize,
}

fn default_iters() -> usize {
    DEFAULT_ROUTING_ITERS
}

fn isqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

impl ArchSpec {
    /// Teacher used for the three-class emotion task: 62 channels x 5 bands.
    pub fn classification_teacher() -> Self {
        Self {
            features: 620,
            windows: 8,
            lstm_layers: 3,
            hidden: 256,
            groups: 2,
            higher_count: 3,
            higher_dim: 16,
            head: Head::Classification,
            routing_iters: DEFAULT_ROUTING_ITERS,
        }
    }

    /// Teacher used for the vigilance regression task: 17 channels x 25 bands.
    pub fn regression_teacher() -> Self {
        Self {
            features: 850,
            higher_count: 10,
            head: Head::Regression,
            ..Self::classification_teacher()
        }
    }

    /// Single-layer student with `hidden` units sharing everything else.
    pub fn student_of(&self, hidden: usize) -> Self {
        Self {
            lstm_layers: 1,
            hidden,
            ..self.clone()
        }
    }

    pub fn with_layers(&self, lstm_layers: usize, hidden: usize) -> Self {
        Self {
            lstm_layers,
            hidden,
            ..self.clone()
        }
    }

    /// Side of the square map each LSTM output is folded into.
    pub fn side(&self) -> usize {
        isqrt(self.hidden)
    }

    /// Side of the map after the 3x3 valid convolution.
    pub fn conv_side(&self) -> usize {
        self.side().saturating_sub(2)
    }

    pub fn positions(&self) -> usize {
        self.conv_side() * self.conv_side()
    }

    /// Lower-capsule dimension `L / C`.
    pub fn lower_dim(&self) -> usize {
        self.windows / self.groups.max(1)
    }

    /// Lower-capsule count `C * (sqrt(M) - 2)^2`.
    pub fn lower_count(&self) -> usize {
        self.groups * self.positions()
    }

    pub fn validate(&self) -> Result<(), CapsError> {
        let bad = |m: String| Err(CapsError::InvalidSpec(m));
        if self.features == 0 || self.windows == 0 || self.lstm_layers == 0 {
            return bad("features, windows and lstm_layers must be positive".into());
        }
        let side = self.side();
        if side * side != self.hidden {
            return bad(format!("hidden units {} is not a perfect square", self.hidden));
        }
        if side < 3 {
            return bad(format!("hidden units {} too small for a 3x3 convolution", self.hidden));
        }
        if self.groups == 0 || self.windows % self.groups != 0 {
            return bad(format!("windows {} not divisible by groups {}", self.windows, self.groups));
        }
        if self.higher_count == 0 {
            return bad("higher_count must be at least 1".into());
        }
        if self.higher_dim <= self.lower_dim() {
            return bad(format!(
                "higher_dim {} must exceed lower capsule dim {}",
                self.higher_dim,
                self.lower_dim()
            ));
        }
        if self.routing_iters == 0 {
            return bad("routing_iters must be at least 1".into());
        }
        Ok(())
    }

    /// Exact number of trainable scalars in the assembled model.
    pub fn param_count(&self) -> usize {
        let m = self.hidden;
        let l = self.windows;
        let mut total = 0;
        for layer in 0..self.lstm_layers {
            let input = if layer == 0 { self.features } else { m };
            total += 4 * m * (input + m) + 4 * m; // lstm
            total += 2 * m; // layer norm
        }
        total += l * l * 9 + l; // 3x3 conv
        total += l * l + l; // capsule-forming 1x1 conv
        total += self.lower_count() * self.higher_count * self.lower_dim() * self.higher_dim;
        if self.head == Head::Regression {
            total += self.higher_count * self.higher_dim * REGRESSION_HIDDEN + REGRESSION_HIDDEN;
            total += REGRESSION_HIDDEN + 1;
        }
        total
    }
}

/// The student ladder used for model-size sweeps, as `(layers, hidden)`.
pub const STUDENT_LADDER: [(usize, usize); 4] = [(1, 256), (1, 144), (1, 64), (1, 16)];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_shapes() {
        let t = ArchSpec::classification_teacher();
        t.validate().unwrap();
        assert_eq!(t.lower_count(), 392);
        assert_eq!(t.lower_dim(), 4);
        assert_eq!(ArchSpec::regression_teacher().lower_count(), 392);
    }

    #[test]
    fn ladder_capsule_counts() {
        let t = ArchSpec::classification_teacher();
        let counts: Vec<usize> = STUDENT_LADDER
            .iter()
            .map(|&(n, m)| t.with_layers(n, m).lower_count())
            .collect();
        assert_eq!(counts, vec![392, 200, 72, 8]);
    }

    #[test]
    fn ladder_params_strictly_decrease() {
        let t = ArchSpec::classification_teacher();
        let mut prev = t.param_count();
        for &(n, m) in &STUDENT_LADDER {
            let p = t.with_layers(n, m).param_count();
            assert!(p < prev, "{p} !< {prev}");
            prev = p;
        }
    }

    #[test]
    fn student_counts_near_published_values() {
        let t = ArchSpec::classification_teacher();
        let published = [0.97e6, 0.48e6, 0.19e6, 0.04e6];
        let tol = [0.10, 0.10, 0.10, 0.25];
        for ((&(n, m), p), tol) in STUDENT_LADDER.iter().zip(published).zip(tol) {
            let got = t.with_layers(n, m).param_count() as f64;
            assert!((got - p).abs() / p <= tol, "M={m}: {got} vs {p}");
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let t = ArchSpec::classification_teacher();
        assert!(t.student_of(15).validate().is_err());
        assert!(t.student_of(4).validate().is_err());
        assert!(ArchSpec { groups: 3, ..t.clone() }.validate().is_err());
        assert!(ArchSpec { higher_dim: 4, ..t.clone() }.validate().is_err());
        assert!(ArchSpec { higher_count: 0, ..t }.validate().is_err());
    }
}
