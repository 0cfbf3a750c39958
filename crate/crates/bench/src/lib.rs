// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! Benchmarks live in `benches/`; run them with `cargo bench -p capsdistill-bench`.
