//! The `seisinv` command line. [`run`] parses argv, performs one subcommand
//! and returns the process exit code.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::info;
use seisinv_core::error::Category;
use seisinv_core::geodata::{build_dataset, synthesize};
use seisinv_core::segy::{read_segy, segy_to_grid};
use seisinv_core::training::{
    evaluate_columns, evaluate_section, init_model, load_checkpoint, predict_section,
    save_checkpoint, train,
};
use seisinv_core::verify::{gradient_suite, GRADIENT_TOLERANCE};
use seisinv_core::{Checkpoint, Error, GridKind, SectionGrid, TrainedModel, Variant};

use config::RunConfig;
use output::{read_wells, traces_csv, write_pgm, write_wells, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const AI_FILE: &str = "ai.sgrd";
pub const SEISMIC_FILE: &str = "seismic.sgrd";
pub const WELLS_FILE: &str = "wells.csv";
pub const PREDICTION_FILE: &str = "prediction.sgrd";

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e.category() {
            Category::Data => CliError::data(e.to_string()),
            Category::Runtime => CliError::runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "seisinv", version, about = "Acoustic-impedance inversion with spatiotemporal TCNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark: ai.sgrd, seismic.sgrd, wells.csv and PGM previews.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides synth.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a network on the wells of a data directory and write a checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Directory holding seismic.sgrd, ai.sgrd and wells.csv.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides model.variant.
        #[arg(long)]
        variant: Option<Variant>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict impedance for every column of the seismic in a data directory.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for prediction.sgrd, prediction.pgm and traces.csv.
        #[arg(long)]
        out: PathBuf,
        /// Columns to write to traces.csv (depth, truth, prediction).
        #[arg(long, value_delimiter = ',')]
        columns: Vec<usize>,
    },
    /// Score a checkpoint against ai.sgrd and write a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Convert a SEG-Y file (formats 1 and 5) to SGRD.
    SegyConvert {
        /// Input SEG-Y file.
        input: PathBuf,
        /// Output SGRD file.
        #[arg(long)]
        out: PathBuf,
        /// Trace spacing in meters.
        #[arg(long, default_value_t = 1.0)]
        dx: f32,
        /// Vertical spacing in meters; without it the header sample interval
        /// is kept and the axis is marked as time.
        #[arg(long)]
        dz: Option<f32>,
        #[arg(long, default_value = "seismic")]
        kind: GridKind,
    },
    /// Run the randomized gradient verification suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Optional JSON summary.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// JSON run config with optional `synth`, `model` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn defaults_help() -> String {
    format!(
        "Run config defaults (every field optional, unknown keys rejected):\n{}",
        RunConfig::default().pretty()
    )
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let help = defaults_help();
    let mut command = Cli::command().after_help(help.clone());
    for name in ["synth", "train"] {
        command = command.mut_subcommand(name, |c| c.after_help(help.clone()));
    }
    let parsed = command
        .try_get_matches_from(argv)
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut cfg = RunConfig::load(config.config.as_deref())?;
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            cmd_synth(&cfg, &out)
        }
        Command::Train {
            config,
            data,
            out,
            variant,
            seed,
        } => {
            let mut cfg = RunConfig::load(config.config.as_deref())?;
            if let Some(v) = variant {
                cfg.model.variant = v;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cmd_train(&cfg, &data, &out)
        }
        Command::Predict {
            ckpt,
            data,
            out,
            columns,
        } => cmd_predict(&ckpt, &data, &out, &columns),
        Command::Eval { ckpt, data, report } => cmd_eval(&ckpt, &data, &report),
        Command::SegyConvert {
            input,
            out,
            dx,
            dz,
            kind,
        } => {
            let parsed = read_segy(&input)
                .map_err(|e| CliError::from(e).context(&input))?;
            let grid = segy_to_grid(&parsed, dz, dx, kind)?;
            grid.write_sgrd(&out)?;
            info!(
                "{}: {} traces x {} samples -> {}",
                input.display(),
                grid.width(),
                grid.depth(),
                out.display()
            );
            Ok(())
        }
        Command::Gradcheck {
            seed,
            trials,
            report,
        } => cmd_gradcheck(seed, trials, report.as_deref()),
    }
}

impl CliError {
    fn context(mut self, path: &Path) -> Self {
        let shown = path.display().to_string();
        if !self.message.contains(&shown) {
            self.message = format!("{shown}: {}", self.message);
        }
        self
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn read_grid(path: &Path) -> Result<SectionGrid, CliError> {
    SectionGrid::read_sgrd(path).map_err(|e| CliError::from(e).context(path))
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    config::scoped("synth", cfg.synth.validate())?;
    create_dir(out)?;
    let s = synthesize(&cfg.synth)?;
    s.impedance.write_sgrd(out.join(AI_FILE))?;
    s.seismic.write_sgrd(out.join(SEISMIC_FILE))?;
    write_wells(&out.join(WELLS_FILE), &s.wells, s.impedance.dx)?;
    write_pgm(&out.join("ai.pgm"), &s.impedance)?;
    write_pgm(&out.join("seismic.pgm"), &s.seismic)?;
    cfg.echo(out)?;
    info!(
        "wrote {} x {} section with {} wells to {}",
        s.impedance.depth(),
        s.impedance.width(),
        s.wells.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    config::scoped("model", cfg.model.validate())?;
    config::scoped("train", cfg.train.validate())?;
    let seismic = read_grid(&data.join(SEISMIC_FILE))?;
    let impedance = read_grid(&data.join(AI_FILE))?;
    let wells = read_wells(&data.join(WELLS_FILE), seismic.width())?;
    let dataset = build_dataset(&seismic, &impedance, &wells, cfg.model.patch_width)?;
    if let Some(d) = cfg.model.depth {
        if d != dataset.depth() {
            return Err(CliError::data(format!(
                "model.depth is {d} but {} has {} samples per trace",
                data.join(SEISMIC_FILE).display(),
                dataset.depth()
            )));
        }
    }
    let mut params = init_model(&cfg.model, &cfg.train)?;
    info!(
        "training {} ({} parameters) on {} wells for {} epochs",
        cfg.model.variant,
        params.param_count(),
        wells.len(),
        cfg.train.epochs
    );
    let every = (cfg.train.epochs / 10).max(1);
    let outcome = train(&mut params, &cfg.model, &dataset, &cfg.train, |s| {
        if s.epoch % every == 0 || s.epoch == 1 {
            info!(
                "epoch {:>5}  loss {:.6}  loss_y {:.6}  loss_x {:.6}",
                s.epoch, s.loss, s.loss_y, s.loss_x
            );
        }
    })?;
    create_dir(out)?;
    let ckpt = Checkpoint {
        trained: TrainedModel {
            model: cfg.model.clone(),
            params,
            seismic_norm: dataset.seismic_norm,
            impedance_norm: dataset.impedance_norm,
        },
        train: cfg.train.clone(),
        epoch: outcome.history.len(),
        adam: Some(outcome.adam),
        history: outcome.history,
    };
    save_checkpoint(&ckpt, out)?;
    cfg.echo(out)?;
    info!("checkpoint written to {}", out.display());
    Ok(())
}

fn load(ckpt: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(ckpt).map_err(|e| CliError::from(e).context(ckpt))
}

/// The resolved config of a checkpoint, with the synth section taken from
/// the data directory's echo when there is one.
fn checkpoint_config(ck: &Checkpoint, data: &Path) -> RunConfig {
    let synth = RunConfig::load(Some(&data.join(config::RESOLVED_CONFIG)))
        .map(|c| c.synth)
        .unwrap_or_default();
    RunConfig {
        synth,
        model: ck.trained.model.clone(),
        train: ck.train.clone(),
    }
}

fn cmd_predict(ckpt: &Path, data: &Path, out: &Path, columns: &[usize]) -> Result<(), CliError> {
    let ck = load(ckpt)?;
    let seismic = read_grid(&data.join(SEISMIC_FILE))?;
    if let Some(&c) = columns.iter().find(|&&c| c >= seismic.width()) {
        return Err(CliError::data(format!(
            "--columns: column {c} outside 0..{}",
            seismic.width()
        )));
    }
    let pred = predict_section(&ck.trained, &seismic)?;
    create_dir(out)?;
    pred.write_sgrd(out.join(PREDICTION_FILE))?;
    write_pgm(&out.join("prediction.pgm"), &pred)?;
    if !columns.is_empty() {
        let ai_path = data.join(AI_FILE);
        let truth = if ai_path.is_file() {
            Some(read_grid(&ai_path)?)
        } else {
            None
        };
        let path = out.join("traces.csv");
        fs::write(&path, traces_csv(&pred, truth.as_ref(), columns))
            .map_err(|e| Error::io(&path, e))?;
    }
    checkpoint_config(&ck, data).echo(out)?;
    info!("prediction written to {}", out.display());
    Ok(())
}

fn cmd_eval(ckpt: &Path, data: &Path, report_path: &Path) -> Result<(), CliError> {
    let ck = load(ckpt)?;
    let seismic = read_grid(&data.join(SEISMIC_FILE))?;
    let truth = read_grid(&data.join(AI_FILE))?;
    let pred = predict_section(&ck.trained, &seismic)?;
    let all = evaluate_section(&pred, &truth)?;
    let wells_path = data.join(WELLS_FILE);
    let heldout = if wells_path.is_file() {
        let wells = read_wells(&wells_path, truth.width())?;
        let rest: Vec<usize> = (0..truth.width()).filter(|c| !wells.contains(c)).collect();
        if rest.is_empty() {
            None
        } else {
            Some(evaluate_columns(&pred, &truth, &rest)?)
        }
    } else {
        None
    };
    let report = Report::new(ck.trained.model.variant, &all, heldout.as_ref());
    let dir = report_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    create_dir(dir)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    fs::write(report_path, text).map_err(|e| Error::io(report_path, e))?;
    checkpoint_config(&ck, data).echo(dir)?;
    info!(
        "{}: avg r2 {:.4}, avg pcc {:.4} over {} traces",
        report.variant, report.avg_r2, report.avg_pcc, report.n_traces
    );
    Ok(())
}

fn cmd_gradcheck(seed: u64, trials: usize, report: Option<&Path>) -> Result<(), CliError> {
    let checks = gradient_suite(seed, trials)?;
    let mut failed = Vec::new();
    for c in &checks {
        println!(
            "{} {:<20} trials {:>3}  partials {:>6}  max rel err {:.3e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.op,
            c.trials,
            c.checked,
            c.max_rel_error
        );
        if !c.passed {
            failed.push(c.op);
        }
    }
    if let Some(path) = report {
        let rows: Vec<serde_json::Value> = checks
            .iter()
            .map(|c| {
                serde_json::json!({
                    "op": c.op,
                    "trials": c.trials,
                    "partials": c.checked,
                    "max_rel_error": c.max_rel_error,
                    "passed": c.passed,
                })
            })
            .collect();
        let doc = serde_json::json!({ "seed": seed, "tolerance": GRADIENT_TOLERANCE, "ops": rows });
        fs::write(path, serde_json::to_string_pretty(&doc).expect("json") + "\n")
            .map_err(|e| Error::io(path, e))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::runtime(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}
