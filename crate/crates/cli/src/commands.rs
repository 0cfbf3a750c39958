// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use capsdistill::capsnet::STUDENT_LADDER;
use capsdistill::data::{make_splits, DataError, Dataset, Split};
use capsdistill::signal::{
    preprocess, read_raw_binary, read_raw_csv, segment_features, write_raw_binary, FtzFile, FtzSegment, Label,
    LabelKind,
};
use capsdistill::training::{
    evaluate, parallel_map, run_phase, sweep_data_fraction, sweep_model_size, write_metrics_csv, write_sweep_csv,
    RunManifest, SplitOutcome, SweepJob, SweepRow, TeacherOutputs,
};
use capsdistill::{ArchSpec, BandSpec, DeMethod, ExperimentPlan, Head, Phase, Protocol, SynthSpec, Target, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{ConfigError, ExistsError};
use crate::{BandPreset, DeArg, EvalArgs, FeaturesArgs, PhaseArg, PlanFlags, SweepArgs, SweepKind, SynthArgs, TaskArg, TrainArgs};

pub struct Context {
    pub output_root: PathBuf,
    pub jobs: usize,
    pub force: bool,
}

impl Context {
    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.output_root.join(path)
        }
    }

    /// Refuses to overwrite `path` unless `--force` was given.
    fn guard(&self, path: &Path) -> anyhow::Result<()> {
        if !self.force && path.exists() {
            bail!(ExistsError(path.display().to_string()));
        }
        Ok(())
    }
}

fn de_method(arg: DeArg) -> DeMethod {
    match arg {
        DeArg::BandFiltered => DeMethod::BandFiltered,
        DeArg::Spectral => DeMethod::Spectral,
    }
}

fn phase(arg: PhaseArg) -> Phase {
    match arg {
        PhaseArg::Pretrain => Phase::Pretrain,
        PhaseArg::Finetune => Phase::Finetune,
        PhaseArg::Distill => Phase::Distill,
        PhaseArg::Scratch => Phase::Scratch,
    }
}

fn parse_protocol(text: &str) -> anyhow::Result<Protocol> {
    let bad = || ConfigError(format!("unknown protocol {text:?}; use loso, fixed-session:N or kfold:K"));
    let (kind, arg) = text.split_once(':').unwrap_or((text, ""));
    let n = || arg.parse::<usize>().map_err(|_| bad());
    Ok(match kind {
        "loso" if arg.is_empty() => Protocol::Loso,
        "fixed-session" => Protocol::FixedSession { train_sessions: n()? },
        "kfold" => Protocol::Kfold { folds: n()? },
        _ => return Err(bad().into()),
    })
}

fn labels_sidecar(path: &Path) -> PathBuf {
    path.with_extension("labels.json")
}

// features

fn recording_paths(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let is_recording = |p: &Path| p.extension().is_some_and(|e| e == "csv" || e == "cdrw");
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(input)
            .with_context(|| format!("listing {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_recording(p))
            .collect();
        paths.sort();
        if paths.is_empty() {
            bail!(DataError::Empty(input.display().to_string()));
        }
        Ok(paths)
    } else if input.is_file() {
        Ok(vec![input.to_path_buf()])
    } else {
        bail!(DataError::Empty(input.display().to_string()))
    }
}

pub fn features(ctx: &Context, a: FeaturesArgs) -> anyhow::Result<()> {
    let paths = recording_paths(&a.input)?;
    let out = ctx.resolve(&a.out);
    let targets: Vec<PathBuf> = paths
        .iter()
        .map(|p| out.join(Path::new(p.file_stem().expect("file name")).with_extension("ftz")))
        .collect();
    for t in &targets {
        ctx.guard(t)?;
    }
    fs::create_dir_all(&out)?;
    let bands = match a.bands {
        BandPreset::Five => BandSpec::five_band(),
        BandPreset::TwoHz => BandSpec::two_hz(25),
    };
    let (mut shape, mut segments, mut floored) = (None, 0, 0);
    for (path, target) in paths.iter().zip(&targets) {
        let raw = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => read_raw_csv(path, a.sample_rate)?,
            _ => read_raw_binary(path)?,
        };
        let rec = if a.no_preprocess {
            raw
        } else {
            preprocess(&raw, a.target_rate, (a.bandpass[0], a.bandpass[1]), a.notch)?
        };
        let (tensors, f) = segment_features(&rec, a.windows, &bands, de_method(a.de_method))
            .with_context(|| format!("extracting features from {}", path.display()))?;
        floored += f;
        let sidecar = labels_sidecar(path);
        let labels: Vec<Target> = if sidecar.exists() {
            serde_json::from_str(&fs::read_to_string(&sidecar)?)
                .with_context(|| format!("reading labels from {}", sidecar.display()))?
        } else {
            log::warn!("{} has no label file; labelling every segment class 0", path.display());
            vec![Target::Class(0); tensors.len()]
        };
        if labels.len() < tensors.len() {
            bail!(DataError::Inconsistent(format!(
                "{} holds {} segments but {} labels",
                path.display(),
                tensors.len(),
                labels.len()
            )));
        }
        let kind = match labels.first().map_or(Head::Classification, Target::task) {
            Head::Classification => LabelKind::Class,
            Head::Regression => LabelKind::Scalar,
        };
        let features = tensors.first().map_or(2 * bands.len() * rec.channel_count(), |t| t.features);
        let mut file = FtzFile::new(a.windows, features, kind);
        for (t, label) in tensors.iter().zip(labels) {
            let label = match label {
                Target::Class(c) => Label::Class(c as u32),
                Target::Scalar(v) => Label::Scalar(v as f32),
            };
            file.push(FtzSegment::from_features(t, label))?;
        }
        fs::write(target, file.to_bytes()?)?;
        segments += tensors.len();
        shape.get_or_insert((a.windows, features));
    }
    let (l, f) = shape.unwrap_or((a.windows, 0));
    if floored > 0 {
        log::warn!("{floored} band values hit the variance floor");
    }
    println!(
        "wrote {segments} segments from {} recordings to {}: L = {l}, F = {f}",
        paths.len(),
        out.display()
    );
    Ok(())
}

// synth

pub fn synth(ctx: &Context, a: SynthArgs) -> anyhow::Result<()> {
    let mut spec = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        }
        None => match a.task {
            Some(TaskArg::Regression) => SynthSpec::regression(),
            _ => SynthSpec::classification(),
        },
    };
    if a.config.is_some() {
        if let Some(task) = a.task {
            let wanted = match task {
                TaskArg::Classification => Head::Classification,
                TaskArg::Regression => Head::Regression,
            };
            if wanted != spec.task {
                bail!(ConfigError("--task contradicts the config file".into()));
            }
        }
    }
    spec.subjects = a.subjects.unwrap_or(spec.subjects);
    spec.sessions = a.sessions.unwrap_or(spec.sessions);
    spec.segments_per_session = a.segments.unwrap_or(spec.segments_per_session);
    spec.channels = a.channels.unwrap_or(spec.channels);
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.validate()?;

    let out = ctx.resolve(&a.out);
    ctx.guard(&out.join("synth.json"))?;
    fs::create_dir_all(&out)?;
    if a.raw {
        let recordings = capsdistill::data::generate_synthetic(&spec)?;
        for r in &recordings {
            let path = out.join(format!("s{:03}_r{:03}.cdrw", r.subject, r.session));
            write_raw_binary(&path, &r.recording)?;
            fs::write(labels_sidecar(&path), serde_json::to_string(&r.targets)?)?;
        }
        println!(
            "wrote {} raw recordings ({} segments, {} channels at {} Hz) to {}",
            recordings.len(),
            spec.segment_count(),
            spec.channels,
            spec.sample_rate,
            out.display()
        );
    } else {
        let data = capsdistill::data::synthesize_dataset(&spec, de_method(a.de_method))?;
        let files = data.save_dir(&out)?;
        println!(
            "wrote {} segments in {} files to {}: L = {}, F = {}",
            data.len(),
            files.len(),
            out.display(),
            data.windows,
            data.features
        );
    }
    fs::write(out.join("synth.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
    Ok(())
}

// train and sweep

/// Configuration snapshot stored in the manifest; enough to repeat a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Snapshot {
    config: RunConfig,
    teacher: Option<PathBuf>,
    init: Option<PathBuf>,
}

fn absolute(path: &Path) -> anyhow::Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))
}

fn apply_flags(config: &mut RunConfig, flags: &PlanFlags) -> anyhow::Result<()> {
    if let Some(dir) = &flags.data {
        config.data.dir = Some(dir.clone());
        config.data.synth = None;
    }
    if let Some(dir) = config.data.dir.take() {
        config.data.dir = Some(absolute(&dir).map_err(|_| DataError::Empty(dir.display().to_string()))?);
    }
    config.epochs = flags.epochs.or(config.epochs);
    config.batch_size = flags.batch.or(config.batch_size);
    config.seed = flags.seed.unwrap_or(config.seed);
    config.data_fraction = flags.fraction.or(config.data_fraction);
    if let Some(p) = &flags.protocol {
        config.protocol = Some(parse_protocol(p)?);
    }
    if let Some(m) = flags.student_hidden {
        let base = config.student.clone().or_else(|| config.teacher.clone());
        config.student = Some(match base {
            Some(s) => s.with_layers(1, m),
            None => bail!(ConfigError("--student-hidden needs a teacher or student architecture (from the config or --teacher)".into())),
        });
    }
    config.output = flags.out.clone().or(config.output.take());
    Ok(())
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<RunConfig> {
    path.map_or(Ok(RunConfig::default()), |p| RunConfig::from_file(p))
}

/// Checkpoint for `split` from a file or a directory of `<split>.ckpt`.
fn checkpoint_for(source: &Path, split: &str) -> anyhow::Result<PathBuf> {
    if source.is_dir() {
        let path = source.join(format!("{split}.ckpt"));
        if !path.is_file() {
            bail!(DataError::Empty(format!("{} (no checkpoint for {split})", source.display())));
        }
        Ok(path)
    } else {
        Ok(source.to_path_buf())
    }
}

/// Architecture of any checkpoint in `source`.
fn peek_arch(source: &Path) -> anyhow::Result<ArchSpec> {
    let path = if source.is_dir() {
        let mut found: Vec<PathBuf> = fs::read_dir(source)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
            .collect();
        found.sort();
        match found.into_iter().next() {
            Some(p) => p,
            None => bail!(DataError::Empty(source.display().to_string())),
        }
    } else {
        source.to_path_buf()
    };
    let model = TrainedModel::load(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(model.params.spec)
}

fn load_for_split(source: &Path, split: &str, spec: &ArchSpec) -> anyhow::Result<TrainedModel> {
    let path = checkpoint_for(source, split)?;
    TrainedModel::load_expecting(&path, spec).with_context(|| format!("loading {}", path.display()))
}

fn split_seed(plan: &ExperimentPlan, index: usize) -> ExperimentPlan {
    ExperimentPlan {
        seed: plan.seed + index as u64,
        ..plan.clone()
    }
}

fn summarize(label: &str, outcomes: &[SplitOutcome], manifest: &RunManifest) {
    let metric = match outcomes.first().map(|o| o.report.task) {
        Some(Head::Regression) => "rmse",
        _ => "accuracy",
    };
    println!(
        "{label}: {metric} {:.4} ± {:.4} over {} splits ({:.4} ± {:.4} over {} subjects)",
        manifest.across_splits.mean,
        manifest.across_splits.sd,
        manifest.across_splits.n,
        manifest.across_subjects.mean,
        manifest.across_subjects.sd,
        manifest.across_subjects.n
    );
}

pub fn train(ctx: &Context, a: TrainArgs) -> anyhow::Result<()> {
    let mut snap = match &a.manifest {
        Some(path) => {
            let m = RunManifest::load(path).with_context(|| format!("reading manifest {}", path.display()))?;
            serde_json::from_value::<Snapshot>(m.config)
                .map_err(|e| ConfigError(format!("{}: unusable configuration snapshot: {e}", path.display())))?
        }
        None => Snapshot {
            config: load_config(a.plan.config.as_ref())?,
            teacher: None,
            init: None,
        },
    };
    if let Some(p) = a.phase {
        snap.config.phase = Some(phase(p));
    }
    if let Some(t) = &a.teacher {
        snap.teacher = Some(absolute(t)?);
    }
    if let Some(i) = &a.init {
        snap.init = Some(absolute(i)?);
    }
    let Some(run_phase_kind) = snap.config.phase else {
        bail!(ConfigError("no phase given: set phase or pass --phase".into()));
    };
    let source = match run_phase_kind {
        Phase::Distill => Some(
            snap.teacher
                .clone()
                .ok_or_else(|| ConfigError("the distill phase needs --teacher".into()))?,
        ),
        Phase::Finetune => Some(
            snap.init
                .clone()
                .ok_or_else(|| ConfigError("the finetune phase needs --init".into()))?,
        ),
        _ => None,
    };
    if snap.config.teacher.is_none() {
        if let Some(src) = &source {
            snap.config.teacher = Some(peek_arch(src)?);
        }
    }
    apply_flags(&mut snap.config, &a.plan)?;

    let out = ctx.resolve(
        &snap
            .config
            .output
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("runs/{run_phase_kind}"))),
    );
    ctx.guard(&out.join("manifest.json"))?;
    let data = snap.config.data.load()?;
    let plan = snap.config.plan(&data)?;
    let splits = make_splits(&data.provenance(), plan.protocol)?.splits;
    fs::create_dir_all(&out)?;

    let results = parallel_map(ctx.jobs, splits.len(), |i| -> anyhow::Result<SplitOutcome> {
        let split = &splits[i];
        let plan = split_seed(&plan, i);
        let loaded = match &source {
            Some(src) => Some(load_for_split(src, &split.name, &plan.teacher)?),
            None => None,
        };
        let (init, teacher) = match plan.phase {
            Phase::Finetune => (loaded.as_ref(), None),
            Phase::Distill => {
                let model = loaded.as_ref().expect("teacher loaded");
                (None, Some(TeacherOutputs::compute(model, &data, &split.train)?))
            }
            _ => (None, None),
        };
        let outcome = run_phase(&plan, &data, split, init, teacher.as_ref())?;
        let ckpt = format!("{}.ckpt", split.name);
        let sha256 = outcome.model.save(&out.join(&ckpt))?;
        write_metrics_csv(&out.join(format!("metrics_{}.csv", split.name)), &outcome.log)?;
        Ok(SplitOutcome {
            split: split.name.clone(),
            subject: split.subject,
            checkpoint: ckpt,
            sha256,
            report: outcome.report,
            skipped_steps: outcome.skipped_steps,
        })
    });
    let outcomes = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let manifest = RunManifest::new(plan, serde_json::to_value(&snap)?, outcomes);
    manifest.save(&out.join("manifest.json"))?;
    summarize(&format!("{run_phase_kind} -> {}", out.display()), &manifest.outcomes, &manifest);
    Ok(())
}

fn build_jobs(ctx: &Context, data: &Dataset, splits: Vec<Split>, source: &Path, spec: &ArchSpec) -> anyhow::Result<Vec<SweepJob>> {
    let jobs = parallel_map(ctx.jobs, splits.len(), |i| -> anyhow::Result<SweepJob> {
        let split = splits[i].clone();
        let teacher = load_for_split(source, &split.name, spec)?;
        let outputs = TeacherOutputs::compute(&teacher, data, &split.train)?;
        Ok(SweepJob { split, teacher: outputs })
    });
    jobs.into_iter().collect()
}

pub fn sweep(ctx: &Context, a: SweepArgs) -> anyhow::Result<()> {
    let mut config = load_config(a.plan.config.as_ref())?;
    config.phase = Some(Phase::Distill);
    let teacher_src = absolute(&a.teacher)?;
    if config.teacher.is_none() {
        config.teacher = Some(peek_arch(&teacher_src)?);
    }
    apply_flags(&mut config, &a.plan)?;
    let name = match a.kind {
        SweepKind::Size => "sweep_size.csv",
        SweepKind::Fraction => "sweep_fraction.csv",
    };
    let out = ctx.resolve(&config.output.clone().unwrap_or_else(|| PathBuf::from("sweeps")));
    ctx.guard(&out.join(name))?;
    let data = config.data.load()?;
    let plan = config.plan(&data)?;
    let splits = make_splits(&data.provenance(), plan.protocol)?.splits;
    let jobs = build_jobs(ctx, &data, splits, &teacher_src, &plan.teacher)?;
    let rows = match a.kind {
        SweepKind::Size => {
            let ladder = config.sweep.ladder.clone().unwrap_or_else(|| STUDENT_LADDER.to_vec());
            sweep_model_size(&plan, &data, &jobs, &ladder, ctx.jobs)?
        }
        SweepKind::Fraction => {
            let fractions = config
                .sweep
                .fractions
                .clone()
                .unwrap_or_else(|| (1..=9).map(|k| k as f64 / 10.0).collect());
            sweep_data_fraction(&plan, &data, &jobs, &fractions, ctx.jobs)?
        }
    };
    fs::create_dir_all(&out)?;
    write_sweep_csv(&out.join(name), &rows)?;
    print_sweep(&rows);
    println!("wrote {}", out.join(name).display());
    Ok(())
}

fn print_sweep(rows: &[SweepRow]) {
    println!("{:>4} {:>3} {:>5} {:>9} {:>6} {:>5}  {:>8}  {:>8}", "rung", "N", "M", "params", "ratio", "frac", "distill", "scratch");
    for pair in rows.chunks(2) {
        let (d, s) = (&pair[0], &pair[pair.len() - 1]);
        println!(
            "{:>4} {:>3} {:>5} {:>9} {:>6.2} {:>5.2}  {:>8.4}  {:>8.4}",
            d.rung, d.layers, d.hidden, d.params, d.compression_ratio, d.fraction, d.mean, s.mean
        );
    }
}

// eval

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = TrainedModel::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let data = Dataset::load_dir(&a.data)?;
    let indices: Vec<usize> = (0..data.len())
        .filter(|&i| a.subject.is_none_or(|s| data.records[i].provenance.subject == s))
        .collect();
    if indices.is_empty() {
        bail!(DataError::Empty(format!("{} for the requested subject", a.data.display())));
    }
    let (_, report, loss) = evaluate(&model, &data, &indices)?;
    let mut value = serde_json::to_value(&report)?;
    value["task_loss"] = serde_json::json!(loss);
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}
