// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::capsnet::{ArchSpec, Head};
use crate::data::{make_splits, synthesize_dataset, Dataset, Protocol, Split, SynthSpec, Target};
use crate::signal::DeMethod;
use crate::tensorcore::Tensor;

fn small_synth(subjects: usize, sessions: usize, per_session: usize, seed: u64) -> Dataset {
    let spec = SynthSpec {
        subjects,
        sessions,
        segments_per_session: per_session,
        channels: 4,
        windows: 4,
        seed,
        ..SynthSpec::classification()
    };
    synthesize_dataset(&spec, DeMethod::BandFiltered).unwrap()
}

fn tiny_arch(features: usize, windows: usize) -> ArchSpec {
    ArchSpec {
        features,
        windows,
        lstm_layers: 1,
        hidden: 16,
        groups: 2,
        higher_count: 3,
        higher_dim: 4,
        head: Head::Classification,
        routing_iters: 3,
    }
}

fn tiny_plan(data: &Dataset, phase: Phase, epochs: usize) -> ExperimentPlan {
    let arch = tiny_arch(data.features, data.windows);
    ExperimentPlan {
        epochs,
        ..ExperimentPlan::new(phase, arch.with_layers(2, 25), arch, Protocol::FixedSession { train_sessions: 2 })
    }
}

fn first_split(data: &Dataset, protocol: Protocol) -> Split {
    make_splits(&data.provenance(), protocol).unwrap().splits.remove(0)
}

fn scalar_param(v: f64) -> Tensor {
    Tensor::from_vec(vec![v])
}

// Adam

#[test]
fn adam_zero_gradient_leaves_params_and_counts_step() {
    let mut p = Tensor::from_vec(vec![0.3, -1.2, 2.0]);
    let mut adam = Adam::new(OptimConfig::default(), &[&p]);
    adam.step(&mut [&mut p], &[Tensor::zeros(&[3])], 1e-3).unwrap();
    assert_eq!(p.data(), &[0.3, -1.2, 2.0]);
    assert_eq!(adam.steps(), 1);
}

#[test]
fn adam_first_step_is_unit_normalized() {
    let mut p = scalar_param(0.5);
    let mut adam = Adam::new(OptimConfig::default(), &[&p]);
    adam.step(&mut [&mut p], &[scalar_param(1.0)], 1e-3).unwrap();
    // m = 0.1, v = 0.001; bias correction restores 1 and 1.
    let m_hat = (1.0 - ADAM_BETA1) / (1.0 - ADAM_BETA1);
    let v_hat = (1.0 - ADAM_BETA2) / (1.0 - ADAM_BETA2);
    let expected = 0.5 - 1e-3 * m_hat / (v_hat.sqrt() + ADAM_EPS);
    assert_relative_eq!(p.data()[0], expected, epsilon = 1e-15);
    assert_relative_eq!(0.5 - p.data()[0], 0.001, epsilon = 1e-10);
}

#[test]
fn adam_matches_recurrence_over_several_steps() {
    let grads = [0.7, -0.2, 1.5, 0.0, -3.0];
    let mut p = scalar_param(0.1);
    let mut adam = Adam::new(OptimConfig::default(), &[&p]);
    let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.1f64);
    for (t, &g) in grads.iter().enumerate() {
        adam.step(&mut [&mut p], &[scalar_param(g)], 0.01).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let k = (t + 1) as i32;
        w -= 0.01 * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
        assert_relative_eq!(p.data()[0], w, epsilon = 1e-14);
    }
}

#[test]
fn adam_clamps_to_weight_bound() {
    let cfg = OptimConfig {
        weight_clip: 1.0,
        ..OptimConfig::default()
    };
    let mut p = Tensor::from_vec(vec![1.0, -1.0]);
    let mut adam = Adam::new(cfg, &[&p]);
    adam.step(&mut [&mut p], &[Tensor::from_vec(vec![-1.0, 1.0])], 0.1).unwrap();
    assert_eq!(p.data(), &[1.0, -1.0]);
}

#[test]
fn adam_weight_clip_holds_after_every_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bound = 0.25;
    let mut p = Tensor::new(&[4, 5], (0..20).map(|_| rng.random_range(-0.2..0.2)).collect()).unwrap();
    let mut adam = Adam::new(
        OptimConfig {
            weight_clip: bound,
            ..OptimConfig::default()
        },
        &[&p],
    );
    for _ in 0..200 {
        let g = Tensor::new(&[4, 5], (0..20).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap();
        adam.step(&mut [&mut p], &[g], 0.05).unwrap();
        assert!(p.max_abs() <= bound);
    }
}

#[test]
fn adam_rejects_nan_gradient_without_touching_state() {
    let mut p = Tensor::from_vec(vec![0.2, 0.4]);
    let mut adam = Adam::new(OptimConfig::default(), &[&p]);
    let err = adam
        .step(&mut [&mut p], &[Tensor::from_vec(vec![1.0, f64::NAN])], 1e-3)
        .unwrap_err();
    assert!(matches!(err, TrainError::NonFiniteGradient { index: 0 }));
    assert_eq!(p.data(), &[0.2, 0.4]);
    assert_eq!(adam.steps(), 0);
}

#[test]
fn adam_gradient_norm_clip_rescales() {
    let cfg = OptimConfig {
        grad_clip_norm: Some(1.0),
        ..OptimConfig::default()
    };
    // Adam is scale invariant on the first step, so compare moments via a
    // second step with a different gradient.
    let run = |cfg: OptimConfig, g1: f64| {
        let mut p = scalar_param(0.0);
        let mut adam = Adam::new(cfg, &[&p]);
        adam.step(&mut [&mut p], &[scalar_param(g1)], 1e-2).unwrap();
        adam.step(&mut [&mut p], &[scalar_param(1.0)], 1e-2).unwrap();
        p.data()[0]
    };
    assert_eq!(run(cfg.clone(), 100.0), run(OptimConfig::default(), 1.0));
    assert_ne!(run(OptimConfig::default(), 100.0), run(OptimConfig::default(), 1.0));
}

// Schedule

#[test]
fn pretrain_schedule_steps_down() {
    assert_eq!(lr_at(1, Phase::Pretrain), 1e-3);
    assert_eq!(lr_at(50, Phase::Pretrain), 1e-3);
    assert_eq!(lr_at(100, Phase::Pretrain), 1e-3);
    assert_eq!(lr_at(101, Phase::Pretrain), 1e-4);
    assert_eq!(lr_at(120, Phase::Pretrain), 1e-4);
    assert_eq!(lr_at(151, Phase::Pretrain), 2e-5);
    assert_eq!(lr_at(180, Phase::Pretrain), 2e-5);
    assert_eq!(lr_at(500, Phase::Pretrain), 2e-5);
}

#[test]
fn other_phases_use_fixed_rate() {
    for phase in [Phase::Finetune, Phase::Distill, Phase::Scratch] {
        for epoch in [1, 50, 120, 400] {
            assert_eq!(lr_at(epoch, phase), 1e-3);
        }
        assert_eq!(phase.default_epochs(), 50);
        assert_eq!(phase.default_batch(), 8);
    }
    assert_eq!(Phase::Pretrain.default_epochs(), 200);
    assert_eq!(Phase::Pretrain.default_batch(), 64);
}

// Metrics

#[test]
fn accuracy_example() {
    let p = [0, 1, 1].map(Target::Class);
    let l = [0, 1, 0].map(Target::Class);
    let r = metrics(&p, &l, Head::Classification).unwrap();
    assert_relative_eq!(r.accuracy.unwrap(), 2.0 / 3.0, epsilon = 1e-15);
    assert!(r.rmse.is_none());
}

#[test]
fn perfect_regression() {
    let v = [0.1, 0.5, 0.3, 0.9].map(Target::Scalar);
    let r = metrics(&v, &v, Head::Regression).unwrap();
    assert_eq!(r.rmse.unwrap(), 0.0);
    assert_relative_eq!(r.pcc.unwrap(), 1.0, epsilon = 1e-12);
    assert!(!r.pcc_undefined);
}

#[test]
fn negated_predictions_anticorrelate() {
    let labels = [-1.0, 0.5, 0.25, 0.25];
    let r = metrics(
        &labels.map(|v| Target::Scalar(-v)),
        &labels.map(Target::Scalar),
        Head::Regression,
    )
    .unwrap();
    assert_relative_eq!(r.pcc.unwrap(), -1.0, epsilon = 1e-12);
    // sqrt(mean((2y)^2)) with sum y^2 = 1.375
    assert_relative_eq!(r.rmse.unwrap(), (4.0 * 1.375 / 4.0f64).sqrt(), epsilon = 1e-12);
}

#[test]
fn constant_predictions_flag_pcc() {
    let r = metrics(
        &[0.5; 3].map(Target::Scalar),
        &[0.1, 0.2, 0.9].map(Target::Scalar),
        Head::Regression,
    )
    .unwrap();
    assert_eq!(r.pcc, Some(0.0));
    assert!(r.pcc_undefined);
}

#[test]
fn metrics_reject_length_mismatch() {
    assert!(metrics(&[Target::Class(0)], &[], Head::Classification).is_err());
}

#[test]
fn summary_uses_sample_deviation() {
    let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(s.mean, 2.5);
    assert_relative_eq!(s.sd, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    assert_eq!(s.n, 4);
    assert_eq!(Summary::of(&[7.0]).sd, 0.0);
}

// Standardizer and checkpoints

#[test]
fn standardizer_centres_training_features() {
    let data = small_synth(2, 2, 3, 1);
    let idx: Vec<usize> = (0..data.len()).collect();
    let s = Standardizer::fit(&data, &idx);
    let f = data.features;
    let mut sum = vec![0.0; f];
    let mut sq = vec![0.0; f];
    let mut n = 0.0;
    for r in &data.records {
        for row in s.apply(r.features.data()).chunks(f) {
            for j in 0..f {
                sum[j] += row[j];
                sq[j] += row[j] * row[j];
            }
            n += 1.0;
        }
    }
    for j in 0..f {
        assert!((sum[j] / n).abs() < 1e-10);
        assert_relative_eq!(sq[j] / n, 1.0, epsilon = 1e-9);
    }
}

#[test]
fn trained_model_round_trips_bit_exactly() {
    let data = small_synth(2, 3, 2, 2);
    let plan = tiny_plan(&data, Phase::Scratch, 1);
    let out = run_phase(&plan, &data, &first_split(&data, plan.protocol), None, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let digest = out.model.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back, out.model);
    assert_eq!(back.digest().unwrap(), digest);
    let other = plan.student.with_layers(1, 25);
    let err = TrainedModel::load_expecting(&path, &other).unwrap_err().to_string();
    assert!(err.contains("16") && err.contains("25"), "{err}");
}

// Phases

#[test]
fn scratch_and_distill_share_step_zero_task_loss() {
    let data = small_synth(2, 3, 3, 4);
    let split = first_split(&data, Protocol::FixedSession { train_sessions: 2 });
    let teacher_plan = tiny_plan(&data, Phase::Pretrain, 2);
    let teacher = run_phase(&teacher_plan, &data, &split, None, None).unwrap();
    let outputs = TeacherOutputs::compute(&teacher.model, &data, &split.train).unwrap();

    let scratch = run_phase(&tiny_plan(&data, Phase::Scratch, 1), &data, &split, None, None).unwrap();
    let distill = run_phase(&tiny_plan(&data, Phase::Distill, 1), &data, &split, None, Some(&outputs)).unwrap();
    assert_eq!(scratch.first_task_loss.to_bits(), distill.first_task_loss.to_bits());
    assert_eq!(scratch.log[0].l_u, 0.0);
    assert!(distill.log[0].l_u > 0.0 && distill.log[0].l_v > 0.0);
    assert_ne!(scratch.model.params, distill.model.params);
}

#[test]
fn distill_without_teacher_is_rejected() {
    let data = small_synth(2, 3, 2, 5);
    let plan = tiny_plan(&data, Phase::Distill, 1);
    let err = run_phase(&plan, &data, &first_split(&data, plan.protocol), None, None).unwrap_err();
    assert!(matches!(err, TrainError::MissingTeacher(_)));
}

#[test]
fn finetune_without_initial_model_is_rejected() {
    let data = small_synth(2, 3, 2, 5);
    let plan = tiny_plan(&data, Phase::Finetune, 1);
    let err = run_phase(&plan, &data, &first_split(&data, plan.protocol), None, None).unwrap_err();
    assert!(matches!(err, TrainError::MissingTeacher(_)));
}

#[test]
fn finetune_starts_from_given_weights() {
    let data = small_synth(2, 3, 2, 5);
    let split = first_split(&data, Protocol::FixedSession { train_sessions: 2 });
    let pre = run_phase(&tiny_plan(&data, Phase::Pretrain, 1), &data, &split, None, None).unwrap();
    let plan = tiny_plan(&data, Phase::Finetune, 1);
    let ft = run_phase(&plan, &data, &split, Some(&pre.model), None).unwrap();
    assert_eq!(ft.model.standardizer, pre.model.standardizer);
    let (_, _, loss) = evaluate(&pre.model, &data, &split.train).unwrap();
    // A single step cannot move far from the starting point.
    assert!((ft.first_task_loss - loss).abs() < 0.2);
}

#[test]
fn empty_split_is_rejected() {
    let data = small_synth(1, 2, 2, 6);
    let plan = tiny_plan(&data, Phase::Scratch, 1);
    let split = Split {
        name: "empty".into(),
        subject: 0,
        train: vec![0, 1],
        test: vec![],
    };
    assert!(matches!(
        run_phase(&plan, &data, &split, None, None),
        Err(TrainError::EmptySplit(_))
    ));
}

#[test]
fn loso_rejects_held_out_subject_in_training() {
    let data = small_synth(3, 2, 2, 7);
    let plan = ExperimentPlan {
        protocol: Protocol::Loso,
        ..tiny_plan(&data, Phase::Pretrain, 1)
    };
    let mut split = first_split(&data, Protocol::Loso);
    for &i in &split.train {
        assert_ne!(data.records[i].provenance.subject, split.subject);
    }
    split.train.push(split.test[0]);
    assert!(matches!(
        run_phase(&plan, &data, &split, None, None),
        Err(TrainError::Protocol(_))
    ));
}

#[test]
fn distill_rejects_mismatched_capsule_shapes() {
    let data = small_synth(2, 3, 2, 8);
    let mut plan = tiny_plan(&data, Phase::Distill, 1);
    plan.teacher.groups = 1;
    plan.teacher.higher_dim = 5;
    assert!(matches!(plan.validate(), Err(TrainError::Config(_))));
    assert!(tiny_plan(&data, Phase::Distill, 1).validate().is_ok());
}

#[test]
fn phase_is_deterministic() {
    let data = small_synth(2, 3, 3, 9);
    let split = first_split(&data, Protocol::FixedSession { train_sessions: 2 });
    let plan = tiny_plan(&data, Phase::Scratch, 3);
    let a = run_phase(&plan, &data, &split, None, None).unwrap();
    let b = run_phase(&plan, &data, &split, None, None).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
    assert_eq!(a.report, b.report);
    let c = run_phase(&ExperimentPlan { seed: 1, ..plan }, &data, &split, None, None).unwrap();
    assert_ne!(a.model.params, c.model.params);
}

#[test]
fn teacher_task_loss_halves_within_fifty_epochs() {
    // 200 segments: 5 subjects x 10 sessions x 4.
    let data = small_synth(5, 10, 4, 10);
    assert_eq!(data.len(), 200);
    let all: Vec<usize> = (0..data.len()).collect();
    let split = Split {
        name: "all".into(),
        subject: 0,
        train: all.clone(),
        test: all,
    };
    let arch = ArchSpec {
        lstm_layers: 3,
        hidden: 64,
        ..tiny_arch(data.features, data.windows)
    };
    let plan = ExperimentPlan {
        epochs: 50,
        ..ExperimentPlan::new(Phase::Pretrain, arch.clone(), arch, Protocol::Kfold { folds: 5 })
    };
    let out = run_phase(&plan, &data, &split, None, None).unwrap();
    let first = out.log.iter().find(|r| r.split == "train" && r.epoch == 1).unwrap().l_task;
    let last = out.log.iter().find(|r| r.split == "train" && r.epoch == 50).unwrap().l_task;
    assert!(last < 0.5 * first, "epoch 1 {first}, epoch 50 {last}");
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let data = small_synth(4, 6, 15, 11);
    let split = first_split(&data, Protocol::FixedSession { train_sessions: 3 });
    let mut accs = Vec::new();
    for seed in 0..5 {
        let mut shuffled = data.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut labels: Vec<Target> = split.train.iter().map(|&i| data.records[i].target).collect();
        rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
        for (&i, l) in split.train.iter().zip(labels) {
            shuffled.records[i].target = l;
        }
        let plan = ExperimentPlan {
            seed,
            ..tiny_plan(&data, Phase::Scratch, 10)
        };
        accs.push(run_phase(&plan, &shuffled, &split, None, None).unwrap().report.accuracy.unwrap());
    }
    let mean = Summary::of(&accs).mean;
    assert!((mean - 1.0 / 3.0).abs() <= 0.05, "{accs:?}");
}

#[test]
fn metrics_log_has_train_rows_and_final_test_row() {
    let data = small_synth(2, 3, 2, 12);
    let plan = ExperimentPlan {
        eval_every: 2,
        ..tiny_plan(&data, Phase::Scratch, 4)
    };
    let out = run_phase(&plan, &data, &first_split(&data, plan.protocol), None, None).unwrap();
    let tests: Vec<usize> = out.log.iter().filter(|r| r.split == "test").map(|r| r.epoch).collect();
    assert_eq!(tests, vec![2, 4]);
    assert_eq!(out.log.iter().filter(|r| r.split == "train").count(), 4);
    let last = out.log.last().unwrap();
    assert_eq!(last.accuracy, out.report.accuracy);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics_csv(&path, &out.log).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "epoch,split,lr,l_u,l_v,l_task,l_total,accuracy,rmse,pcc");
    assert_eq!(lines.count(), out.log.len());
}

#[test]
fn regression_phase_reports_rmse_and_pcc() {
    let spec = SynthSpec {
        subjects: 2,
        sessions: 3,
        segments_per_session: 3,
        channels: 2,
        windows: 4,
        bands: crate::signal::BandSpec::two_hz(8),
        ..SynthSpec::regression()
    };
    let data = synthesize_dataset(&spec, DeMethod::BandFiltered).unwrap();
    let arch = ArchSpec {
        head: Head::Regression,
        ..tiny_arch(data.features, data.windows)
    };
    let plan = ExperimentPlan {
        epochs: 2,
        ..ExperimentPlan::new(Phase::Scratch, arch.clone(), arch, Protocol::Kfold { folds: 3 })
    };
    let out = run_phase(&plan, &data, &first_split(&data, plan.protocol), None, None).unwrap();
    assert!(out.report.rmse.unwrap() >= 0.0);
    assert!(out.report.pcc.unwrap().abs() <= 1.0);
    assert!(out.report.accuracy.is_none());
}

#[test]
fn parallel_map_preserves_order() {
    let out = parallel_map(3, 17, |i| i * i);
    assert_eq!(out, (0..17).map(|i| i * i).collect::<Vec<_>>());
    assert_eq!(parallel_map(1, 4, |i| i + 1), vec![1, 2, 3, 4]);
}

// Sweeps and output

fn sweep_fixture() -> (Dataset, ExperimentPlan, Vec<SweepJob>) {
    let data = small_synth(2, 3, 3, 13);
    let plan = tiny_plan(&data, Phase::Distill, 1);
    let splits = make_splits(&data.provenance(), plan.protocol).unwrap().splits;
    let jobs = splits
        .into_iter()
        .map(|split| {
            let t = run_phase(&plan.for_phase(Phase::Pretrain), &data, &split, None, None).unwrap();
            let teacher = TeacherOutputs::compute(&t.model, &data, &split.train).unwrap();
            SweepJob { split, teacher }
        })
        .collect();
    (data, plan, jobs)
}

#[test]
fn size_sweep_emits_two_arms_per_rung() {
    let (data, plan, jobs) = sweep_fixture();
    let ladder = [(2, 25), (1, 16), (1, 9)];
    let rows = sweep_model_size(&plan, &data, &jobs, &ladder, 2).unwrap();
    assert_eq!(rows.len(), 2 * ladder.len());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.rung, i / 2);
        assert_eq!(r.arm, if i % 2 == 0 { "distill" } else { "scratch" });
        assert_eq!(r.n, jobs.len());
        assert_eq!(r.metric, "accuracy");
    }
    assert_eq!(rows[0].compression_ratio, 1.0);
    assert!(rows[2].params > rows[4].params);
    assert_eq!(
        rows[4].compression_ratio,
        plan.student.with_layers(1, 9).param_count() as f64 / plan.teacher.param_count() as f64
    );
    let again = sweep_model_size(&plan, &data, &jobs, &ladder, 1).unwrap();
    assert_eq!(rows, again);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("size.csv");
    write_sweep_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("rung,layers,hidden,params,compression_ratio,fraction,arm,metric,mean,sd,n,pcc_mean,pcc_sd\n"));
    assert_eq!(text.lines().count(), 1 + rows.len());
}

#[test]
fn fraction_sweep_full_fraction_matches_standard_run() {
    let (data, plan, jobs) = sweep_fixture();
    let rows = sweep_data_fraction(&plan, &data, &jobs, &[0.5, 1.0], 1).unwrap();
    assert_eq!(rows.len(), 4);
    let standard = run_phase(&plan, &data, &jobs[0].split, None, Some(&jobs[0].teacher)).unwrap();
    let single = sweep_data_fraction(&plan, &data, &jobs[..1], &[1.0], 1).unwrap();
    assert_eq!(single[0].mean.to_bits(), standard.report.accuracy.unwrap().to_bits());
    assert_eq!(rows[2].fraction, 1.0);
    assert_eq!(rows[2].arm, "distill");
}

#[test]
fn fraction_subsets_are_fixed_draws() {
    let data = small_synth(2, 4, 5, 14);
    let split = first_split(&data, Protocol::FixedSession { train_sessions: 3 });
    let plan = ExperimentPlan {
        data_fraction: 0.2,
        ..tiny_plan(&data, Phase::Scratch, 1)
    };
    let a = run_phase(&plan, &data, &split, None, None).unwrap();
    let b = run_phase(&plan, &data, &split, None, None).unwrap();
    assert_eq!(a.train_indices, b.train_indices);
    assert_eq!(a.train_indices.len(), (split.train.len() as f64 * 0.2).round() as usize);
}

#[test]
fn manifest_round_trips_and_summarizes() {
    let data = small_synth(2, 3, 2, 15);
    let plan = tiny_plan(&data, Phase::Scratch, 1);
    let report = |acc: f64| MetricReport {
        task: Head::Classification,
        count: 4,
        accuracy: Some(acc),
        rmse: None,
        pcc: None,
        pcc_undefined: false,
    };
    let outcome = |split: &str, subject, acc| SplitOutcome {
        split: split.into(),
        subject,
        checkpoint: format!("{split}.ckpt"),
        sha256: "00".into(),
        report: report(acc),
        skipped_steps: 0,
    };
    let m = RunManifest::new(
        plan,
        serde_json::json!({"k": 1}),
        vec![outcome("a", 0, 0.5), outcome("b", 0, 1.0), outcome("c", 1, 0.25)],
    );
    assert_relative_eq!(m.across_splits.mean, 1.75 / 3.0, epsilon = 1e-15);
    assert_eq!(m.across_subjects.n, 2);
    assert_relative_eq!(m.across_subjects.mean, (0.75 + 0.25) / 2.0, epsilon = 1e-15);
    assert_eq!(RunManifest::from_json(&m.to_json().unwrap()).unwrap(), m);
}

#[test]
fn manifest_without_outcomes_round_trips() {
    let data = small_synth(1, 2, 2, 17);
    let m = RunManifest::new(tiny_plan(&data, Phase::Scratch, 1), serde_json::json!({}), Vec::new());
    assert!(m.across_splits.mean.is_nan());
    let back = RunManifest::from_json(&m.to_json().unwrap()).unwrap();
    assert!(back.across_splits.mean.is_nan() && back.across_subjects.sd.is_nan());
    assert_eq!(back.plan, m.plan);
}

#[test]
fn plan_rejects_bad_fraction_and_unknown_keys() {
    let data = small_synth(1, 2, 2, 16);
    let plan = ExperimentPlan {
        data_fraction: 0.0,
        ..tiny_plan(&data, Phase::Scratch, 1)
    };
    assert!(plan.validate().is_err());
    let mut v = serde_json::to_value(tiny_plan(&data, Phase::Scratch, 1)).unwrap();
    v["bogus"] = serde_json::json!(1);
    assert!(serde_json::from_value::<ExperimentPlan>(v).is_err());
}
