use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use radunc_core::scenegen::save_transforms_dataset;
use radunc_core::Scalar;

use crate::config::{ExperimentConfig, Precision};
use crate::data::{base_dataset, clean_dataset};
use crate::eval::evaluate_view;
use crate::methods::{fit_method, FittedMethod};
use crate::protocols::{std_map, run_protocol_aleatoric, run_protocol_clutter, run_protocol_pose, run_protocol_views};
use crate::report::{emit_report, write_artifacts, Artifact, ResultRow, ResultsTable};
use crate::{HarnessError, Result};

#[derive(Debug, Parser)]
#[command(name = "radunc", version, about = "Uncertainty experiments on radiance fields and Gaussian splats")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the configured scene and write it as a transforms.json dataset.
    Generate(Common),
    /// Train every configured method on the clean split and save the models.
    Train(Common),
    /// Render the test views with saved models.
    Render(Common),
    /// Evaluate saved models on the test views and write results.csv.
    Eval(Common),
    /// Run a protocol end to end and write results.csv plus images.
    Experiment {
        protocol: ProtocolArg,
        #[command(flatten)]
        common: Common,
    },
    /// Print the summary of a results.csv (file or output directory).
    Report {
        path: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    Aleatoric,
    Views,
    Clutter,
    Pose,
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(c) => {
            let (cfg, out) = load_config(&c)?;
            let (base, _) = base_dataset::<f64>(&cfg)?;
            save_transforms_dataset(&clean_dataset(&cfg, &base)?, &out)?;
            println!("wrote {} views to {}", base.views.len(), out.display());
            Ok(())
        }
        Command::Train(c) => {
            let (cfg, out) = load_config(&c)?;
            by_precision(&cfg, &out, train_cmd::<f32>, train_cmd::<f64>)
        }
        Command::Render(c) => {
            let (cfg, out) = load_config(&c)?;
            by_precision(&cfg, &out, render_cmd::<f32>, render_cmd::<f64>)
        }
        Command::Eval(c) => {
            let (cfg, out) = load_config(&c)?;
            by_precision(&cfg, &out, eval_cmd::<f32>, eval_cmd::<f64>)
        }
        Command::Experiment { protocol, common } => {
            let (cfg, out) = load_config(&common)?;
            let table = match protocol {
                ProtocolArg::Aleatoric => run_protocol_aleatoric(&cfg)?,
                ProtocolArg::Views => run_protocol_views(&cfg)?,
                ProtocolArg::Clutter => run_protocol_clutter(&cfg)?,
                ProtocolArg::Pose => run_protocol_pose(&cfg)?,
            };
            emit_report(&table, Some(&cfg.to_json()), &out)?;
            print!("{}", table.summary());
            Ok(())
        }
        Command::Report { path, common } => {
            let path = match path {
                Some(p) => p,
                None => load_config(&common)?.1,
            };
            let file = if path.is_dir() { path.join("results.csv") } else { path };
            let text = fs::read_to_string(&file).map_err(|e| HarnessError::io(&file, e))?;
            print!("{}", ResultsTable::from_csv(&text)?.summary());
            Ok(())
        }
    }
}

fn by_precision(
    cfg: &ExperimentConfig,
    out: &Path,
    f32_cmd: fn(&ExperimentConfig, &Path) -> Result<()>,
    f64_cmd: fn(&ExperimentConfig, &Path) -> Result<()>,
) -> Result<()> {
    match cfg.precision {
        Precision::F32 => f32_cmd(cfg, out),
        Precision::F64 => f64_cmd(cfg, out),
    }
}

fn model_dir(out: &Path, method: &str) -> PathBuf {
    out.join("models").join(method)
}

fn train_cmd<T: Scalar>(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (base, _) = base_dataset::<T>(cfg)?;
    let data = clean_dataset(cfg, &base)?;
    for &m in &cfg.methods {
        let (fitted, reports) = fit_method(m, &data, cfg)?;
        let dir = model_dir(out, m.as_str());
        fitted.save(&dir)?;
        let last = reports.iter().filter_map(|r| r.losses.last()).fold(0.0, |a, &b| a + b) / reports.len().max(1) as f64;
        println!("{}: final loss {last:.5}, saved to {}", m.as_str(), dir.display());
    }
    fs::write(out.join("config.json"), cfg.to_json()).map_err(|e| HarnessError::io(out, e))
}

fn load_fitted<T: Scalar>(out: &Path, method: &str) -> Result<FittedMethod<T>> {
    let dir = model_dir(out, method);
    if !dir.join("method.json").exists() {
        return Err(HarnessError::Config(format!("no trained {method} model in {}; run `radunc train` first", dir.display())));
    }
    FittedMethod::load(&dir)
}

fn render_cmd<T: Scalar>(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (base, _) = base_dataset::<T>(cfg)?;
    let data = clean_dataset(cfg, &base)?;
    let render = radunc_core::volrend::RenderConfig {
        stratified: false,
        ..cfg.train.render.clone()
    };
    let mut table = ResultsTable::default();
    for &m in &cfg.methods {
        let fitted = load_fitted::<T>(out, m.as_str())?;
        let dir = PathBuf::from("renders").join(m.as_str());
        for (k, view) in data.test_views().enumerate() {
            let pred = fitted.predict(&view.camera, &render)?;
            table.artifacts.push(Artifact::Rgb {
                path: dir.join(format!("view{k:02}_render.png")),
                image: pred.mean.convert(),
            });
            let pixel_std = std_map(&pred.variance);
            table.artifacts.push(Artifact::Heatmap {
                path: dir.join(format!("view{k:02}_std.png")),
                map: pixel_std,
                max: cfg.eval.heatmap_max_std,
            });
            table.artifacts.push(Artifact::Heatmap {
                path: dir.join(format!("view{k:02}_depth.png")),
                map: pred.depth.convert(),
                max: render.far,
            });
        }
    }
    write_artifacts(&table.artifacts, out, "renders/heatmaps.json")?;
    println!("wrote {} images under {}", table.artifacts.len(), out.join("renders").display());
    Ok(())
}

fn eval_cmd<T: Scalar>(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (base, _) = base_dataset::<T>(cfg)?;
    let data = clean_dataset(cfg, &base)?;
    let render = radunc_core::volrend::RenderConfig {
        stratified: false,
        ..cfg.train.render.clone()
    };
    let tests: Vec<_> = data.test_views().collect();
    let mut table = ResultsTable::default();
    for &m in &cfg.methods {
        let fitted = load_fitted::<T>(out, m.as_str())?;
        let scores = tests
            .iter()
            .map(|v| evaluate_view(&fitted.predict(&v.camera, &render)?, v, &cfg.eval))
            .collect::<Result<Vec<_>>>()?;
        let mut row = ResultRow::new("clean", "none", 0.0, m.as_str()).with_scores(&crate::eval::mean_scores(&scores));
        row.train_views = data.train_views().count();
        row.test_views = tests.len();
        table.push(row);
    }
    let csv = out.join("results.csv");
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    fs::write(&csv, table.to_csv()?).map_err(|e| HarnessError::io(&csv, e))?;
    print!("{}", table.summary());
    Ok(())
}
