use std::fmt;
use std::path::{Path, PathBuf};

use tdsnn_core::bounds::{verify_on_model, verify_random, BoundReport, TrialConfig};
use tdsnn_core::checkpoint::{load_checkpoint, load_teacher, save_checkpoint, save_teacher, StudentMeta};
use tdsnn_core::config::RunConfig;
use tdsnn_core::data::{gen_spiral_split, load_csv_dataset, load_teacher_logits, Dataset, LogitsTable, Split};
use tdsnn_core::eval::{
    dump_logits, early_exit_csv, early_exit_eval, firing_rate_stats, firing_rates_csv, full_range_sweep, sweep_csv,
};
use tdsnn_core::gradcheck::{gradcheck, GradcheckConfig, GradcheckResult};
use tdsnn_core::trainer::{losses_csv, train_student_with, train_teacher, TeacherSource};
use tdsnn_core::{LossMode, TeacherModel, Tensor};

use crate::{
    Command, Common, DataArgs, DumpLogitsArgs, EarlyExitArgs, EvalSweepArgs, GenDataArgs, GradcheckArgs, TrainArgs,
    TrainTeacherArgs, VerifyBoundsArgs,
};

#[derive(Debug)]
pub enum CliError {
    Core(tdsnn_core::Error),
    BoundViolation(Vec<String>),
    Gradcheck { worst: f64, threshold: f64 },
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::BoundViolation(_) => "bound-violation",
            CliError::Gradcheck { .. } => "gradcheck",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::BoundViolation(rows) => write!(f, "violated: {}", rows.join(", ")),
            CliError::Gradcheck { worst, threshold } => {
                write!(f, "max relative error {worst:e} is not below {threshold:e}")
            }
        }
    }
}

impl From<tdsnn_core::Error> for CliError {
    fn from(e: tdsnn_core::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::TrainTeacher(a) => train_teacher_cmd(a),
        Command::Train(a) => train(a),
        Command::EvalSweep(a) => eval_sweep(a),
        Command::EarlyExit(a) => early_exit(a),
        Command::VerifyBounds(a) => verify_bounds(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::DumpLogits(a) => dump(a),
    }
}

/// Defaults, then the config file, then `--set` overrides, then `--seed`.
fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| tdsnn_core::Error::Contract(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn set<T: ToString>(cfg: &mut RunConfig, key: &str, value: &Option<T>) -> Result<()> {
    if let Some(v) = value {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

fn out_dir(common: &Common) -> Result<&Path> {
    let dir = common.out.as_path();
    std::fs::create_dir_all(dir).map_err(|e| tdsnn_core::Error::io(dir, e))?;
    Ok(dir)
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| tdsnn_core::Error::io(path, e))?;
    Ok(())
}

fn load_data(cfg: &RunConfig, data: &DataArgs) -> Result<(Dataset, Dataset)> {
    match (&data.train_csv, &data.test_csv) {
        (Some(train), Some(test)) => {
            let train = load_csv_dataset(train, "label", None, Split::Train)?;
            let test = load_csv_dataset(test, "label", Some(train.classes), Split::Test)?;
            Ok((train, test))
        }
        _ => {
            let d = &cfg.data;
            Ok(gen_spiral_split(
                d.classes,
                d.train_per_class,
                d.test_per_class,
                d.noise,
                cfg.train.seed,
            )?)
        }
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    set(&mut cfg, "classes", &a.classes)?;
    set(&mut cfg, "train_per_class", &a.train_per_class)?;
    set(&mut cfg, "test_per_class", &a.test_per_class)?;
    set(&mut cfg, "noise", &a.noise)?;
    let d = &cfg.data;
    let (train, test) = gen_spiral_split(d.classes, d.train_per_class, d.test_per_class, d.noise, cfg.train.seed)?;
    let dir = out_dir(&a.common)?;
    train.write_csv(&dir.join("train.csv"))?;
    test.write_csv(&dir.join("test.csv"))?;
    println!("wrote {} train and {} test samples to {}", train.len(), test.len(), dir.display());
    Ok(())
}

fn fit_teacher(cfg: &RunConfig, train: &Dataset, test: &Dataset, dir: &Path) -> Result<TeacherModel> {
    let (teacher, acc) = train_teacher(train, test, &cfg.teacher)?;
    save_teacher(&teacher, cfg.teacher.seed, &dir.join("teacher.ckpt"))?;
    let table = LogitsTable {
        ids: (0..train.len()).collect(),
        logits: teacher.logits(&train.features()?)?,
    };
    table.write_csv(&dir.join("teacher_logits.csv"))?;
    println!("teacher test_acc={acc:.4}");
    Ok(teacher)
}

fn train_teacher_cmd(a: TrainTeacherArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    set(&mut cfg, "teacher_epochs", &a.epochs)?;
    set(&mut cfg, "teacher_hidden", &a.hidden)?;
    cfg.teacher.validate()?;
    let (train, test) = load_data(&cfg, &a.data)?;
    let dir = out_dir(&a.common)?;
    fit_teacher(&cfg, &train, &test, dir)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    set(&mut cfg, "epochs", &a.epochs)?;
    set(&mut cfg, "T", &a.timesteps)?;
    set(&mut cfg, "loss_mode", &a.loss_mode)?;
    set(&mut cfg, "alpha", &a.alpha)?;
    set(&mut cfg, "beta", &a.beta)?;
    set(&mut cfg, "tau", &a.tau)?;
    set(&mut cfg, "lr0", &a.lr0)?;
    set(&mut cfg, "batch_size", &a.batch_size)?;
    set(&mut cfg, "hidden", &a.hidden)?;
    cfg.train.validate()?;
    cfg.teacher.validate()?;

    let (train, test) = load_data(&cfg, &a.data)?;
    let dir = out_dir(&a.common)?;
    let model;
    let logits;
    let source = if let Some(path) = &a.teacher {
        model = load_teacher(path)?;
        TeacherSource::Model(&model)
    } else if let Some(path) = &a.teacher_logits {
        logits = load_teacher_logits(path, train.classes)?.aligned(train.len())?;
        TeacherSource::Logits(&logits)
    } else {
        model = fit_teacher(&cfg, &train, &test, dir)?;
        TeacherSource::Model(&model)
    };

    let outcome = train_student_with(&train, &test, source, &cfg.train, |e| {
        println!(
            "epoch {:>3} lr={:.5} {}={:.5} train_acc={:.4} test_acc={:.4}",
            e.epoch,
            e.lr,
            cfg.train.loss_mode,
            objective_value(cfg.train.loss_mode, &e.losses),
            e.train_acc,
            e.test_acc
        );
    })?;
    let meta = StudentMeta {
        trained_t: cfg.train.timesteps,
        weights: cfg.train.weights,
        seed: cfg.train.seed,
        loss_mode: cfg.train.loss_mode,
    };
    save_checkpoint(&outcome.network, &meta, &dir.join("model.ckpt"))?;
    write(dir.join("losses.csv"), &losses_csv(&outcome.log))?;
    Ok(())
}

fn objective_value(mode: LossMode, l: &tdsnn_core::LossBreakdown) -> f64 {
    match mode {
        LossMode::StandardKd => l.skd,
        LossMode::TemporalKdFull => l.final_loss,
        LossMode::TwceOnly => l.twce,
        LossMode::TwceTwsd => l.twce + (l.final_loss - l.twkd),
        LossMode::TwceTwkl => l.twkd,
    }
}

fn eval_sweep(a: EvalSweepArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let (_, test) = load_data(&cfg, &a.data)?;
    let mut rows = Vec::with_capacity(a.model.len());
    let mut rates = None;
    for path in &a.model {
        let (net, meta) = load_checkpoint(path)?;
        let r = full_range_sweep(&net, &test, meta.trained_t)?;
        let cells: Vec<String> = r.accuracy.iter().map(|x| format!("{x:.4}")).collect();
        println!("trained T={}: {}", r.trained_t, cells.join(" "));
        if rates.is_none() {
            rates = Some(firing_rate_stats(&net, &test, meta.trained_t)?);
        }
        rows.push(r);
    }
    let dir = out_dir(&a.common)?;
    write(dir.join("sweep.csv"), &sweep_csv(&rows))?;
    if let Some(r) = rates {
        write(dir.join("firing_rates.csv"), &firing_rates_csv(&r))?;
    }
    Ok(())
}

fn early_exit(a: EarlyExitArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let (_, test) = load_data(&cfg, &a.data)?;
    let (net, meta) = load_checkpoint(&a.model)?;
    let t = a.timesteps.unwrap_or(meta.trained_t);
    let rows = a
        .cs
        .iter()
        .map(|&cs| early_exit_eval(&net, &test, t, cs))
        .collect::<tdsnn_core::Result<Vec<_>>>()?;
    for r in &rows {
        println!("cs={} acc={:.4} T_avg={:.3}", r.cs_threshold, r.accuracy, r.avg_timesteps);
    }
    let dir = out_dir(&a.common)?;
    write(dir.join("early_exit.csv"), &early_exit_csv(&rows))?;
    Ok(())
}

fn verify_bounds(a: VerifyBoundsArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    cfg.train.weights.validate()?;
    let report: BoundReport = match (&a.model, &a.teacher) {
        (Some(model), Some(teacher)) => {
            let (net, meta) = load_checkpoint(model)?;
            let teacher = load_teacher(teacher)?;
            let (_, test) = load_data(&cfg, &a.data)?;
            let zt: Tensor = teacher.logits(&test.features()?)?;
            verify_on_model(&net, &test, &zt, &meta.weights, meta.trained_t, None)?
        }
        _ => verify_random(&TrialConfig {
            trials: a.trials,
            seed: cfg.train.seed,
            alpha: cfg.train.weights.alpha,
            beta: cfg.train.weights.beta,
            ..TrialConfig::default()
        })?,
    };
    let dir = out_dir(&a.common)?;
    report.write(&dir.join("bounds.csv"), &dir.join("bounds.txt"))?;
    print!("{}", report.to_text());
    if report.passed() {
        return Ok(());
    }
    let mut failed: Vec<String> = report
        .inequalities
        .iter()
        .filter(|s| s.violations > 0)
        .map(|s| s.name.to_string())
        .collect();
    failed.extend(
        report
            .equalities
            .iter()
            .filter(|e| e.max_residual > tdsnn_core::bounds::EQUALITY_TOLERANCE)
            .map(|e| e.name.to_string()),
    );
    Err(CliError::BoundViolation(failed))
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let modes = if a.loss_mode.is_empty() {
        LossMode::ALL.to_vec()
    } else {
        a.loss_mode
            .iter()
            .map(|m| m.parse())
            .collect::<tdsnn_core::Result<Vec<LossMode>>>()?
    };
    let gc = GradcheckConfig {
        step: a.step,
        seed: cfg.train.seed,
        weights: cfg.train.weights,
        ..GradcheckConfig::default()
    };
    let results = modes
        .iter()
        .map(|&m| gradcheck(&gc, m))
        .collect::<tdsnn_core::Result<Vec<GradcheckResult>>>()?;
    let mut csv = String::from("loss_mode,params,max_rel_error,max_abs_error\n");
    for r in &results {
        println!("{:<17} params={} max_rel_error={:.3e}", r.mode, r.params, r.max_rel_error);
        csv.push_str(&format!("{},{},{:e},{:e}\n", r.mode, r.params, r.max_rel_error, r.max_abs_error));
    }
    let dir = out_dir(&a.common)?;
    write(dir.join("gradcheck.csv"), &csv)?;
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    if worst < a.max_rel_error {
        Ok(())
    } else {
        Err(CliError::Gradcheck {
            worst,
            threshold: a.max_rel_error,
        })
    }
}

fn dump(a: DumpLogitsArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let (train, test) = load_data(&cfg, &a.data)?;
    let (net, meta) = load_checkpoint(&a.model)?;
    let data = if a.train_split { &train } else { &test };
    let dir = out_dir(&a.common)?;
    dump_logits(&net, data, a.timesteps.unwrap_or(meta.trained_t), &dir.join("logits.csv"))?;
    Ok(())
}
