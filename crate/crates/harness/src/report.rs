use std::fs;
use std::path::{Path, PathBuf};

use radunc_core::volrend::save_heatmap_png;
use radunc_core::Image;
use serde::{Deserialize, Serialize};

use crate::eval::ViewScores;
use crate::{HarnessError, Result};

/// One (protocol point, method) cell of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub protocol: String,
    /// What is varied at this point (`noise`, `blur`, `fraction`, `proportion`, `shift`, ...).
    pub factor: String,
    pub level: f64,
    pub method: String,
    /// `ok`, or the failure message when training or evaluation failed.
    pub status: String,
    pub train_views: usize,
    pub test_views: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub nll: f64,
    pub ause: f64,
    pub auce: f64,
    pub mean_variance: f64,
    pub depth_rmse: Option<f64>,
    pub depth_nll: Option<f64>,
    /// Mean predicted standard deviation on pixels changed by distractors.
    pub distractor_std: Option<f64>,
    /// Mean predicted standard deviation on the other pixels of the cluttered views.
    pub clean_std: Option<f64>,
    /// Mean `|g(0) − g(δ)|` of the pose gradient-norm maps.
    pub grad_diff_mean: Option<f64>,
    /// Nonzero pixels of the thresholded difference map.
    pub grad_diff_nonzero: Option<usize>,
}

impl ResultRow {
    pub fn new(protocol: &str, factor: &str, level: f64, method: &str) -> Self {
        ResultRow {
            protocol: protocol.into(),
            factor: factor.into(),
            level,
            method: method.into(),
            status: "ok".into(),
            train_views: 0,
            test_views: 0,
            psnr: f64::NAN,
            ssim: f64::NAN,
            nll: f64::NAN,
            ause: f64::NAN,
            auce: f64::NAN,
            mean_variance: f64::NAN,
            depth_rmse: None,
            depth_nll: None,
            distractor_std: None,
            clean_std: None,
            grad_diff_mean: None,
            grad_diff_nonzero: None,
        }
    }

    pub fn with_scores(mut self, s: &ViewScores) -> Self {
        self.psnr = s.psnr;
        self.ssim = s.ssim;
        self.nll = s.nll;
        self.ause = s.ause;
        self.auce = s.auce;
        self.mean_variance = s.mean_variance;
        self.depth_rmse = s.depth_rmse;
        self.depth_nll = s.depth_nll;
        self
    }

    pub fn failed(mut self, message: impl std::fmt::Display) -> Self {
        self.status = format!("failed: {message}");
        self
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// A file produced next to the results table.
#[derive(Clone, Debug, PartialEq)]
pub enum Artifact {
    /// RGB image with values in `[0, 1]`.
    Rgb { path: PathBuf, image: Image<f64> },
    /// Single-channel map drawn with the jet colormap over `[0, max]`.
    Heatmap { path: PathBuf, map: Image<f64>, max: f64 },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    /// Images to write, paths relative to the output directory.
    pub artifacts: Vec<Artifact>,
}

pub const CSV_COLUMNS: [&str; 19] = [
    "protocol",
    "factor",
    "level",
    "method",
    "status",
    "train_views",
    "test_views",
    "psnr",
    "ssim",
    "nll",
    "ause",
    "auce",
    "mean_variance",
    "depth_rmse",
    "depth_nll",
    "distractor_std",
    "clean_std",
    "grad_diff_mean",
    "grad_diff_nonzero",
];

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn parse_num(s: &str) -> std::result::Result<f64, String> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|e| format!("bad number {s:?}: {e}")),
    }
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_num(s).map(Some)
    }
}

impl ResultsTable {
    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: ResultsTable) {
        self.rows.extend(other.rows);
        self.artifacts.extend(other.artifacts);
    }

    /// Rows of one method, in table order.
    pub fn method_rows<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// CSV text with the fixed column order; absent values are empty cells, failures `nan`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.protocol.clone(),
                r.factor.clone(),
                num(r.level),
                r.method.clone(),
                r.status.clone(),
                r.train_views.to_string(),
                r.test_views.to_string(),
                num(r.psnr),
                num(r.ssim),
                num(r.nll),
                num(r.ause),
                num(r.auce),
                num(r.mean_variance),
                opt(r.depth_rmse),
                opt(r.depth_nll),
                opt(r.distractor_std),
                opt(r.clean_std),
                opt(r.grad_diff_mean),
                r.grad_diff_nonzero.map(|n| n.to_string()).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
            return Err(HarnessError::Config("results.csv has unexpected columns".into()));
        }
        let mut table = ResultsTable::default();
        for rec in rd.records() {
            let rec = rec?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            let bad = |e: String| HarnessError::Config(format!("results.csv: {e}"));
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
            let mut row = ResultRow::new(f(0), f(1), parse_num(f(2)).map_err(bad)?, f(3));
            row.status = f(4).into();
            row.train_views = int(f(5))?;
            row.test_views = int(f(6))?;
            row.psnr = parse_num(f(7)).map_err(bad)?;
            row.ssim = parse_num(f(8)).map_err(bad)?;
            row.nll = parse_num(f(9)).map_err(bad)?;
            row.ause = parse_num(f(10)).map_err(bad)?;
            row.auce = parse_num(f(11)).map_err(bad)?;
            row.mean_variance = parse_num(f(12)).map_err(bad)?;
            row.depth_rmse = parse_opt(f(13)).map_err(bad)?;
            row.depth_nll = parse_opt(f(14)).map_err(bad)?;
            row.distractor_std = parse_opt(f(15)).map_err(bad)?;
            row.clean_std = parse_opt(f(16)).map_err(bad)?;
            row.grad_diff_mean = parse_opt(f(17)).map_err(bad)?;
            row.grad_diff_nonzero = if f(18).is_empty() { None } else { Some(int(f(18))?) };
            table.push(row);
        }
        Ok(table)
    }

    /// Plain-text summary, one line per row.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:<10} {:<11} {:>9} {:<11} {:>8} {:>7} {:>8} {:>7} {:>7} {:>10}\n",
            "protocol", "factor", "level", "method", "psnr", "ssim", "nll", "ause", "auce", "mean_var"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<10} {:<11} {:>9} {:<11} {:>8.3} {:>7.4} {:>8.3} {:>7.4} {:>7.4} {:>10.3e}",
                r.protocol, r.factor, num(r.level), r.method, r.psnr, r.ssim, r.nll, r.ause, r.auce, r.mean_variance
            ));
            if let (Some(d), Some(c)) = (r.distractor_std, r.clean_std) {
                s.push_str(&format!("  std distractor {d:.4} clean {c:.4}"));
            }
            if let Some(g) = r.grad_diff_mean {
                s.push_str(&format!("  grad diff {g:.3e}"));
            }
            if !r.is_ok() {
                s.push_str(&format!("  [{}]", r.status));
            }
            s.push('\n');
        }
        s
    }
}

/// Writes `results.csv`, `config.json` (when given) and every artifact under `out_dir`.
/// The value range of every heatmap is listed in `heatmaps.json`.
pub fn emit_report(results: &ResultsTable, config_json: Option<&str>, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let csv_path = out_dir.join("results.csv");
    fs::write(&csv_path, results.to_csv()?).map_err(|e| HarnessError::io(&csv_path, e))?;
    if let Some(text) = config_json {
        let p = out_dir.join("config.json");
        fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))?;
    }
    write_artifacts(&results.artifacts, out_dir, "heatmaps.json")
}

/// Writes artifacts under `out_dir` and lists each heatmap's value range in `ranges_file`
/// (relative to `out_dir`) when there is any.
pub fn write_artifacts(artifacts: &[Artifact], out_dir: &Path, ranges_file: &str) -> Result<()> {
    let mut ranges = serde_json::Map::new();
    for a in artifacts {        let rel = match a {
            Artifact::Rgb { path, .. } | Artifact::Heatmap { path, .. } => path,
        };
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        match a {
            Artifact::Rgb { image, .. } => image.save_png(&path)?,
            Artifact::Heatmap { map, max, .. } => {
                save_heatmap_png(map, *max, &path)?;
                ranges.insert(rel.to_string_lossy().into_owned(), serde_json::json!([0.0, max]));
            }
        }
    }
    if !ranges.is_empty() {
        let p = out_dir.join(ranges_file);
        let text = serde_json::to_string_pretty(&serde_json::Value::Object(ranges))?;
        fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))?;
    }
    Ok(())
}
