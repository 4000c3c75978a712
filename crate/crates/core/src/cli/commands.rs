use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::ArgMatches;
use serde::Serialize;

use crate::degrade::{load_corpus, load_image, resample, save_image, synth_corpus, Direction};
use crate::inference::{evaluate, restore_image, EvalReport, Realism, Table};
use crate::par::Parallelism;
use crate::trainer::{
    checkpoint, train_mem, train_rcod, train_teacher, Dataset, FileObserver, MemModel, StudentModel, TeacherModel,
    TrainConfig,
};
use crate::{Error, Result};

use super::{given, Command, CommonTrain, EvalArgs, InferArgs, MemArgs, ReportArgs, StudentArgs, SynthArgs, TeacherArgs};

pub fn run(cmd: Command, m: &ArgMatches) -> Result<()> {
    match cmd {
        Command::SynthData(a) => synth(a),
        Command::TrainTeacher(a) => teacher(a, m),
        Command::Train(a) => student(a, m),
        Command::TrainMem(a) => mem(a, m),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn parse_name<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown {what} {s:?}")))
}

fn load_student(path: &Path) -> Result<StudentModel> {
    StudentModel::from_checkpoint(&checkpoint::load(path)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let records = synth_corpus(&a.out, a.count, a.patch, a.scale, a.seed, Parallelism::Parallel)?;
    println!("wrote {} pairs to {}", records.len(), a.out.display());
    Ok(())
}

/// Config file, then command-line overrides.
fn base_config(c: &CommonTrain, m: &ArgMatches) -> Result<TrainConfig> {
    let mut cfg = match &c.config {
        Some(p) => TrainConfig::from_json_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(p) = &c.manifest {
        cfg.train_manifest = Some(p.clone());
    }
    if given(m, "seed") {
        cfg.seed = c.seed;
    }
    if given(m, "batch_size") {
        cfg.batch_size = c.batch_size;
    }
    if given(m, "holdout_fraction") {
        cfg.holdout_fraction = c.holdout_fraction;
    }
    if given(m, "checkpoint_every") {
        cfg.checkpoint_every = c.checkpoint_every;
    }
    if cfg.train_manifest.is_none() {
        return Err(Error::Config("no corpus: pass --manifest or set train_manifest in --config".into()));
    }
    Ok(cfg)
}

/// Saves the checkpoint plus `<out>.config.json` and `<out>.report.json`.
fn finish(out: &Path, store: &crate::ParamStore<f32>, cfg: &TrainConfig, report: &impl Serialize, obs: FileObserver) -> Result<()> {
    obs.finish()?;
    checkpoint::save(store, out)?;
    write_json(&suffixed(out, ".config.json"), cfg)?;
    write_json(&suffixed(out, ".report.json"), report)
}

fn teacher(a: TeacherArgs, m: &ArgMatches) -> Result<()> {
    let mut cfg = base_config(&a.common, m)?;
    if given(m, "steps") {
        cfg.teacher_steps = a.steps;
    }
    if given(m, "lr") {
        cfg.learning_rate = a.lr;
    }
    cfg.validate()?;
    let data = Dataset::from_config(&cfg)?;
    let mut obs = FileObserver::new(&a.common.out)?;
    let (model, rep) = train_teacher(&cfg, &data, &mut obs)?;
    finish(&a.common.out, &model.to_checkpoint()?, &cfg, &rep, obs)?;
    println!(
        "teacher: val eps-MSE {:.4} -> {:.4}",
        rep.initial_val_mse, rep.final_val_mse
    );
    Ok(())
}

fn student(a: StudentArgs, m: &ArgMatches) -> Result<()> {
    let mut cfg = base_config(&a.common, m)?;
    if given(m, "steps") {
        cfg.student_steps = a.steps;
    }
    if given(m, "lr") {
        cfg.learning_rate = a.lr;
    }
    if given(m, "lambda_eps") {
        cfg.lambda_eps = a.lambda_eps;
    }
    if given(m, "lambda_pix") {
        cfg.lambda_pix = a.lambda_pix;
    }
    if given(m, "lambda_das") {
        cfg.lambda_das = a.lambda_das;
    }
    if given(m, "metric") {
        cfg.metric = parse_name("metric", &a.metric)?;
    }
    if given(m, "noise_injection") {
        cfg.noise_injection = a.noise_injection;
    }
    if given(m, "groups") {
        cfg.grouping.n = a.groups;
    }
    if given(m, "group_step") {
        cfg.grouping.k = a.group_step;
    }
    if given(m, "val_every") {
        cfg.val_every = a.val_every;
    }
    cfg.validate()?;
    let teacher = a
        .teacher
        .as_deref()
        .map(|p| TeacherModel::from_checkpoint(&checkpoint::load(p)?))
        .transpose()?;
    let data = Dataset::from_config(&cfg)?;
    let mut obs = FileObserver::new(&a.common.out)?;
    let (model, rep) = train_rcod(&cfg, &data, teacher.as_ref(), &mut obs)?;
    finish(&a.common.out, &model.to_checkpoint()?, &cfg, &rep, obs)?;
    println!(
        "student: matched latent MSE {:.4} -> {:.4}",
        rep.initial.latent_mse_matched, rep.final_val.latent_mse_matched
    );
    Ok(())
}

fn mem(a: MemArgs, m: &ArgMatches) -> Result<()> {
    let mut cfg = base_config(&a.common, m)?;
    if given(m, "steps") {
        cfg.mem_steps = a.steps;
    }
    if given(m, "lr") {
        cfg.mem_learning_rate = a.lr;
    }
    if given(m, "features") {
        cfg.mem.features = parse_name("feature set", &a.features)?;
    }
    cfg.validate()?;
    let student = a.student.as_deref().map(load_student).transpose()?;
    let data = Dataset::from_config(&cfg)?;
    let mut obs = FileObserver::new(&a.common.out)?;
    let (model, rep) = train_mem(&cfg, &data, student.as_ref(), &mut obs)?;
    finish(&a.common.out, &model.to_checkpoint()?, &cfg, &rep, obs)?;
    println!(
        "mem: held-out Spearman {:.4} over {} pairs",
        rep.held_out_spearman, rep.held_out_count
    );
    Ok(())
}

fn load_mem(path: Option<&Path>) -> Result<Option<MemModel>> {
    path.map(|p| MemModel::from_checkpoint(&checkpoint::load(p)?)).transpose()
}

fn infer(a: InferArgs) -> Result<()> {
    let realism: Realism = a.realism.parse()?;
    if realism == Realism::Adaptive && a.mem_ckpt.is_none() {
        return Err(Error::Config("--realism adaptive needs --mem-ckpt".into()));
    }
    let student = load_student(&a.ckpt)?;
    let mem = load_mem(a.mem_ckpt.as_deref())?;
    let lr = resample(&load_image(&a.input)?, a.scale, Direction::Up)?;
    let (out, side) = restore_image(&student, mem.as_ref(), &lr, realism, a.seed)?;
    save_image(&out, &a.output)?;
    write_json(&suffixed(&a.output, ".json"), &side)?;
    println!("t_used {} -> {}", side.t_used, a.output.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let modes = a.realism.iter().map(|s| s.parse()).collect::<Result<Vec<Realism>>>()?;
    if modes.contains(&Realism::Adaptive) && a.mem_ckpt.is_none() {
        return Err(Error::Config("adaptive realism needs --mem-ckpt".into()));
    }
    let student = load_student(&a.ckpt)?;
    let mem = load_mem(a.mem_ckpt.as_deref())?;
    let pairs = load_corpus(&a.manifest)?;
    let rep = evaluate(&student, mem.as_ref(), &pairs, &modes, a.seed)?;
    write_json(&a.report_path, &rep)?;
    print!("{}", Table::build(&[("eval".into(), rep)])?.to_text());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for p in &a.eval_jsons {
        let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
        let rep: EvalReport = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{} is not an evaluation report: {e}", p.display())))?;
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        reports.push((name, rep));
    }
    let table = Table::build(&reports)?;
    print!("{}", table.to_text());
    if let Some(csv) = &a.csv {
        std::fs::write(csv, table.to_csv()).map_err(|e| io_error(csv, e))?;
    }
    Ok(())
}
