//! The six commands. Each reads a [`RunConfig`], validates its inputs before
//! doing any long-running work, and writes artifacts under `out`.

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use qprune::autodiff::OptimizerKind;
use qprune::distill::{distill_train, make_student_from_plan, prune_kd, KdConfig, DEFAULT_ALPHA, DEFAULT_TEMPERATURE};
use qprune::features::{
    encode_quaternion_features, load_dataset_dir, read_wav, save_dataset_dir, save_feature_array, synth_dataset,
    wav_to_mel, FeatureArray, MelConfig, SynthSpec,
};
use qprune::metrics::{count_macs, count_params, read_csv, timed_inference, write_csv, EvalReport, ReportRow};
use qprune::nn::checkpoint;
use qprune::nn::zoo;
use qprune::nn::{InputSpec, ModelGraph};
use qprune::pruning::{apply_prune, build_prune_plan, finetune, LayerSelector, Method, PrunePlan};
use qprune::train::{evaluate, train, Dataset, TrainConfig, TrainLog};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_FILE: &str = "model.qprs";
pub const PRUNED_FILE: &str = "pruned.qprs";
pub const FINETUNED_FILE: &str = "finetuned.qprs";
pub const STUDENT_FILE: &str = "student.qprs";
pub const PLAN_FILE: &str = "plan.txt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const FINETUNE_LOG: &str = "finetune_log.csv";
pub const DISTILL_LOG: &str = "distill_log.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_TEXT: &str = "eval.txt";
pub const COMPARE_CSV: &str = "compare.csv";
pub const PRUNE_REPORT: &str = "prune_report.txt";

fn train_config(cfg: &RunConfig, default_iterations: usize) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        iterations: cfg.parsed_or("iterations", default_iterations)?,
        batch_size: cfg.parsed_or("batch_size", d.batch_size)?,
        lr: cfg.parsed_or("lr", d.lr)?,
        optimizer: cfg.parsed::<OptimizerKind>("optimizer")?.unwrap_or(d.optimizer),
        seed: cfg.parsed_or("seed", d.seed)?,
        mixup: cfg.flag("mixup")?,
        eval_every: cfg.parsed_or("eval_every", d.eval_every)?,
    })
}

fn kd_config(cfg: &RunConfig) -> CliResult<KdConfig> {
    let kd = KdConfig {
        alpha: cfg.parsed_or("alpha", DEFAULT_ALPHA)?,
        temperature: cfg.parsed_or("temperature", DEFAULT_TEMPERATURE)?,
        t2_scaling: cfg.flag("t2_scaling")?,
    };
    kd.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(kd)
}

fn method(cfg: &RunConfig) -> CliResult<Method> {
    Ok(cfg.parsed::<Method>("method")?.unwrap_or(Method::L1))
}

fn ratio(cfg: &RunConfig) -> CliResult<f64> {
    let p = cfg.parsed_or("ratio", 0.5)?;
    if !(0.0..1.0).contains(&p) {
        return Err(CliError::Usage(format!("ratio {p} is outside [0, 1)")));
    }
    Ok(p)
}

fn selector(cfg: &RunConfig) -> CliResult<LayerSelector> {
    cfg.str_or("layers", "default").parse().map_err(|e: qprune::Error| CliError::Usage(e.to_string()))
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    Ok(load_dataset_dir(path)?)
}

fn input_spec(data: &Dataset) -> InputSpec {
    InputSpec { channels: data.inputs.c, height: data.inputs.h, width: data.inputs.w }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Run(e.into()))
}

fn check_compatible(model: &ModelGraph<f32>, data: &Dataset, what: &str) -> CliResult<()> {
    if model.input != input_spec(data) || model.classes != data.classes() || model.task != data.task {
        return Err(CliError::Run(qprune::Error::InvalidArgument(format!(
            "{what} expects {:?} inputs with {} {:?} classes, dataset has {:?} with {} {:?} classes",
            model.input,
            model.classes,
            model.task,
            input_spec(data),
            data.classes(),
            data.task
        ))));
    }
    Ok(())
}

/// `features`: writes a synthetic dataset directory, or per-clip log-mel and
/// quaternion feature files for WAV input.
pub fn cmd_features(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let out = cfg.out_dir()?;
    match cfg.str_or("source", "synth") {
        "synth" => {
            let d = SynthSpec::default();
            let spec = SynthSpec {
                classes: cfg.parsed_or("classes", d.classes)?,
                samples: cfg.parsed_or("samples", d.samples)?,
                seed: cfg.parsed_or("seed", d.seed)?,
                frames: cfg.parsed_or("frames", d.frames)?,
                bins: cfg.parsed_or("bins", d.bins)?,
                multi_label: cfg.flag("multi_label")?,
                noise: cfg.parsed_or("noise", d.noise)?,
            };
            let data = synth_dataset(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
            save_dataset_dir(&out, &data)?;
            log::info!("wrote {} synthetic examples to {}", data.len(), out.display());
            Ok(vec![out])
        }
        "wav" => {
            let files = cfg.list("wav");
            if files.is_empty() {
                return Err(CliError::Usage("source=wav needs `wav` files".into()));
            }
            if let Some(missing) = files.iter().find(|f| !Path::new(f).exists()) {
                return Err(CliError::Usage(format!("wav file {missing} does not exist")));
            }
            let mel_cfg = MelConfig { allow_rate_override: cfg.flag("allow_rate_override")?, ..MelConfig::default() };
            let mut written = Vec::new();
            for f in &files {
                let (pcm, rate) = read_wav(f)?;
                let mel = wav_to_mel(&pcm, rate, &mel_cfg)?;
                let quat = encode_quaternion_features(&mel)?;
                let stem = Path::new(f).file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
                let mel_path = out.join(format!("{stem}.mel.qfea"));
                let quat_path = out.join(format!("{stem}.quat.qfea"));
                save_feature_array(&mel_path, &FeatureArray::from(&mel))?;
                save_feature_array(&quat_path, &FeatureArray::from(&quat))?;
                log::info!("{f}: {} frames x {} bins", mel.frames, mel.bins);
                written.extend([mel_path, quat_path]);
            }
            Ok(written)
        }
        other => Err(CliError::Usage(format!("unknown feature source `{other}` (expected synth or wav)"))),
    }
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub model: ModelGraph<f32>,
    pub log: TrainLog,
}

/// `train`: builds the configured architecture for the dataset's shape and
/// trains it. Validation defaults to the training set.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainOutcome> {
    let data_path = cfg.existing_path("data")?;
    let val_path = cfg.optional_existing_path("val_data")?;
    let tc = train_config(cfg, TrainConfig::default().iterations)?;
    let arch = cfg.str_or("model", zoo::QCNN_MINI).to_string();
    let out = cfg.out_dir()?;
    let data = load_data(&data_path)?;
    let val = val_path.map(|p| load_data(&p)).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut model = zoo::build(&arch, input_spec(&data), data.classes(), data.task, &mut rng)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let log = train(&mut model, &data, &tc, Some(val.as_ref().unwrap_or(&data)))?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    checkpoint::save(&checkpoint, &model, None)?;
    write(&out.join(TRAIN_LOG), &log.to_csv()?)?;
    if let Some(e) = log.evals.last() {
        log::info!("trained {arch} for {} iterations; final metric {:.4}", tc.iterations, e.metric);
    }
    Ok(TrainOutcome { checkpoint, model, log })
}

pub struct PruneOutcome {
    pub plan: PrunePlan,
    pub pruned: ModelGraph<f32>,
    pub finetuned: Option<(ModelGraph<f32>, TrainLog)>,
    pub report: String,
}

/// One-line before/after cost summary.
pub fn cost_line(before: &ModelGraph<f32>, after: &ModelGraph<f32>) -> CliResult<String> {
    let (pb, pa) = (count_params(before), count_params(after));
    let (mb, ma) = (count_macs(before)?, count_macs(after)?);
    Ok(format!(
        "params {pb} -> {pa} (-{}), macs {mb} -> {ma} (-{})",
        pb - pa,
        mb - ma
    ))
}

/// `prune`: scores and cuts (or replays `plan`), then fine-tunes when
/// `iterations` > 0 and `data` is set.
pub fn cmd_prune(cfg: &RunConfig) -> CliResult<PruneOutcome> {
    let ckpt = cfg.existing_path("checkpoint")?;
    let replay = cfg.optional_existing_path("plan")?;
    let data_path = cfg.optional_existing_path("data")?;
    let val_path = cfg.optional_existing_path("val_data")?;
    let tc = train_config(cfg, 0)?;
    if tc.iterations > 0 && data_path.is_none() {
        return Err(CliError::Usage("fine-tuning needs `data`".into()));
    }
    let (m, sel, p) = (method(cfg)?, selector(cfg)?, ratio(cfg)?);
    let out = cfg.out_dir()?;

    let (model, _) = checkpoint::load(&ckpt)?;
    let plan = match replay {
        Some(path) => PrunePlan::load(path)?,
        None => build_prune_plan(&model, m, p, &sel)?,
    };
    let pruned = apply_prune(&model, &plan)?;
    plan.save(out.join(PLAN_FILE))?;
    checkpoint::save(out.join(PRUNED_FILE), &pruned, None)?;
    let mut report = format!("method {} p {}: {}\n", plan.method, plan.ratio, cost_line(&model, &pruned)?);
    for l in &plan.layers {
        report += &format!("layer {}: removed {} of {} filters\n", l.layer, l.remove.len(), l.filters);
    }
    print!("{report}");

    let finetuned = match data_path {
        Some(dp) if tc.iterations > 0 => {
            let data = load_data(&dp)?;
            check_compatible(&pruned, &data, "pruned model")?;
            let val = val_path.map(|p| load_data(&p)).transpose()?;
            let (ft, log) = finetune(&pruned, &data, val.as_ref(), &tc)?;
            checkpoint::save(out.join(FINETUNED_FILE), &ft, None)?;
            write(&out.join(FINETUNE_LOG), &log.to_csv()?)?;
            Some((ft, log))
        }
        _ => None,
    };
    write(&out.join(PRUNE_REPORT), &report)?;
    Ok(PruneOutcome { plan, pruned, finetuned, report })
}

pub struct DistillOutcome {
    pub student: ModelGraph<f32>,
    pub log: TrainLog,
    pub plan: PrunePlan,
}

/// `distill`: trains a student against the teacher checkpoint.
///
/// `student=from-plan` (default) starts from fresh weights in the pruned
/// shape; `student=prune-kd` keeps the teacher's surviving weights. The
/// shape comes from `plan`, or from `method`/`ratio`/`layers` (default
/// `ratio=0`: the teacher's own architecture).
pub fn cmd_distill(cfg: &RunConfig) -> CliResult<DistillOutcome> {
    let teacher_path = cfg.existing_path("teacher")?;
    let data_path = cfg.existing_path("data")?;
    let val_path = cfg.optional_existing_path("val_data")?;
    let replay = cfg.optional_existing_path("plan")?;
    let tc = train_config(cfg, TrainConfig::default().iterations)?;
    let kd = kd_config(cfg)?;
    let mode = cfg.str_or("student", "from-plan").to_string();
    if mode != "from-plan" && mode != "prune-kd" {
        return Err(CliError::Usage(format!("unknown student `{mode}` (expected from-plan or prune-kd)")));
    }
    let p = cfg.parsed_or("ratio", 0.0)?;
    let (m, sel) = (method(cfg)?, selector(cfg)?);
    let out = cfg.out_dir()?;

    let (teacher, _) = checkpoint::load(&teacher_path)?;
    let data = load_data(&data_path)?;
    check_compatible(&teacher, &data, "teacher")?;
    let val = val_path.map(|p| load_data(&p)).transpose()?;
    let val = val.as_ref().unwrap_or(&data);
    let plan = match replay {
        Some(path) => PrunePlan::load(path)?,
        None if p == 0.0 => PrunePlan::empty(m),
        None => build_prune_plan(&teacher, m, p, &sel)?,
    };
    let (student, log) = if mode == "prune-kd" {
        prune_kd(&teacher, &plan, &data, Some(val), &tc, &kd)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let mut student = make_student_from_plan(&teacher, &plan, &mut rng)?;
        let log = distill_train(&teacher, &mut student, &data, Some(val), &tc, &kd)?;
        (student, log)
    };
    checkpoint::save(out.join(STUDENT_FILE), &student, None)?;
    write(&out.join(DISTILL_LOG), &log.to_csv()?)?;
    plan.save(out.join(PLAN_FILE))?;
    Ok(DistillOutcome { student, log, plan })
}

/// `eval`: metric, cost and timing of a checkpoint on a dataset.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<EvalReport> {
    let ckpt = cfg.existing_path("checkpoint")?;
    let data_path = cfg.existing_path("data")?;
    let repeats = cfg.parsed_or("repeats", 5usize)?;
    if repeats < 3 {
        return Err(CliError::Usage(format!("repeats must be at least 3, got {repeats}")));
    }
    let method = cfg.str_or("method", "none").to_string();
    let p = cfg.parsed_or("ratio", 0.0f64)?;
    let out = cfg.out_dir()?;

    let (model, _) = checkpoint::load(&ckpt)?;
    let data = load_data(&data_path)?;
    check_compatible(&model, &data, "checkpoint")?;
    let metric = evaluate(&model, &data)?;
    let batch = data.inputs.slice_batch(0, data.len().min(32));
    let report = EvalReport {
        model: cfg.get("name").map_or_else(|| model.arch.clone(), String::from),
        method,
        p,
        metric,
        params: count_params(&model),
        macs: count_macs(&model)?,
        time_s: timed_inference(&model, &batch, repeats)?,
    };
    let mut csv = Vec::new();
    write_csv(&mut csv, &[report.row()])?;
    std::fs::write(out.join(EVAL_CSV), csv).map_err(|e| CliError::Run(e.into()))?;
    write(&out.join(EVAL_TEXT), &report.to_text())?;
    print!("{}", report.to_text());
    Ok(report)
}

/// Fixed-width text rendering of report rows.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut s = format!(
        "{:<16} {:<10} {:>5} {:<9} {:>8} {:>10} {:>12} {:>10}\n",
        "model", "method", "p", "metric", "value", "params", "macs", "time_s"
    );
    for r in rows {
        s += &format!(
            "{:<16} {:<10} {:>5.2} {:<9} {:>8.4} {:>10} {:>12} {:>10.6}\n",
            r.model, r.method, r.p, r.metric, r.value, r.params, r.macs, r.time_s
        );
    }
    s
}

/// `compare`: merges metrics CSVs into one table sorted by (model, method, p).
pub fn cmd_compare(cfg: &RunConfig) -> CliResult<Vec<ReportRow>> {
    let inputs = cfg.list("inputs");
    if inputs.is_empty() {
        return Err(CliError::Usage("compare needs `inputs` (comma-separated metrics CSV files)".into()));
    }
    if let Some(missing) = inputs.iter().find(|f| !Path::new(f).exists()) {
        return Err(CliError::Usage(format!("metrics file {missing} does not exist")));
    }
    let out = cfg.out_dir()?;
    let mut rows = Vec::new();
    for f in &inputs {
        let file = std::fs::File::open(f).map_err(|e| CliError::Run(e.into()))?;
        rows.extend(read_csv(file).map_err(|e| CliError::Run(qprune::Error::Format(format!("{f}: {e}"))))?);
    }
    rows.sort_by(|a, b| {
        (a.model.as_str(), a.method.as_str())
            .cmp(&(b.model.as_str(), b.method.as_str()))
            .then(a.p.total_cmp(&b.p))
    });
    let mut csv = Vec::new();
    write_csv(&mut csv, &rows)?;
    std::fs::write(out.join(COMPARE_CSV), csv).map_err(|e| CliError::Run(e.into()))?;
    print!("{}", render_table(&rows));
    Ok(rows)
}
