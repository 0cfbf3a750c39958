// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::hint::black_box;

use capsdistill::capsnet::{dynamic_routing, forward, ModelParams};
use capsdistill::distill::margin_loss;
use capsdistill::tensorcore::{init, Graph};
use capsdistill::ArchSpec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(10);
    let teacher = ArchSpec::classification_teacher();
    for (label, spec) in [("student_m16", teacher.student_of(16)), ("student_m64", teacher.student_of(64))] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ModelParams::init(&spec, &mut rng).unwrap();
        let x = init::uniform(&[8, spec.windows, spec.features], 1.0, &mut rng);
        let labels: Vec<usize> = (0..8).map(|i| i % spec.higher_count).collect();
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let bound = params.bind(&mut g, true);
                let xv = g.constant(x.clone());
                let out = forward(&mut g, xv, &bound).unwrap();
                let loss = margin_loss(&mut g, out.lengths, &labels).unwrap();
                g.backward(loss).unwrap();
                black_box(g.value(loss).data()[0])
            })
        });
    }
    group.finish();
}

fn routing(c: &mut Criterion) {
    let mut group = c.benchmark_group("dynamic_routing");
    for a in [8usize, 72, 392] {
        let u_hat = init::uniform(&[a, 3, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        group.bench_with_input(BenchmarkId::from_parameter(a), &u_hat, |b, u| {
            b.iter(|| black_box(dynamic_routing(u, 3).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward, routing);
criterion_main!(benches);
