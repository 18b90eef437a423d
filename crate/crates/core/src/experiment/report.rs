use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Metric, Variant};
use super::store::{RunKey, RunRecord};
use crate::error::{Error, Result};

/// Mean metrics of one (lr, weight decay) pair over its successful seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lr: f64,
    pub weight_decay: f64,
    /// `None` when every run failed.
    pub mean_ood: Option<f64>,
    pub successful_runs: usize,
    pub failed_runs: usize,
}

/// One (variant, fraction) cell at the selected hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: Variant,
    pub fraction: f64,
    /// `None` for the no-training column.
    pub selected_lr: Option<f64>,
    pub selected_weight_decay: Option<f64>,
    pub runs: usize,
    pub mean_id: f64,
    pub std_id: f64,
    pub mean_ood: f64,
    pub std_ood: f64,
    pub candidates: Vec<Candidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metric: Metric,
    pub seeds: usize,
    pub variants: Vec<Variant>,
    pub fractions: Vec<f64>,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, variant: Variant, fraction: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.variant == variant && r.fraction.to_bits() == fraction.to_bits())
    }

    pub fn is_complete(&self) -> bool {
        self.variants.iter().all(|&v| self.fractions.iter().all(|&f| self.row(v, f).is_some()))
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Picks the candidate with the highest mean OOD metric; ties go to the
/// smaller learning rate, then the smaller weight decay.
pub fn select_best_lr(candidates: &[Candidate]) -> Result<&Candidate> {
    candidates
        .iter()
        .filter_map(|c| c.mean_ood.filter(|m| m.is_finite()).map(|m| (c, m)))
        .min_by(|(a, ma), (b, mb)| {
            mb.total_cmp(ma)
                .then(a.lr.total_cmp(&b.lr))
                .then(a.weight_decay.total_cmp(&b.weight_decay))
        })
        .map(|(c, _)| c)
        .ok_or_else(|| Error::AllRunsFailed("every learning rate".into()))
}

/// Aggregates stored runs into cells. Cells without a successful run are
/// left out and show up as missing when emitted.
pub fn build_report(config: &ExperimentConfig, records: &[RunRecord]) -> ExperimentReport {
    let metric = config.metric;
    let by_key: HashMap<_, &RunRecord> = records.iter().map(|r| (r.key.bits(), r)).collect();
    let lookup = |key: RunKey| by_key.get(&key.bits()).copied();
    let mut rows = Vec::new();
    for &variant in &config.variants {
        for &fraction in &config.fractions {
            let grid: Vec<(f64, f64)> = if fraction == 0.0 {
                vec![(0.0, 0.0)]
            } else {
                config
                    .lr_grid
                    .iter()
                    .flat_map(|&lr| config.weight_decay_grid.iter().map(move |&wd| (lr, wd)))
                    .collect()
            };
            let mut candidates = Vec::with_capacity(grid.len());
            let mut per_seed = Vec::with_capacity(grid.len());
            for (lr, weight_decay) in grid {
                let (mut ok, mut failed) = (Vec::new(), 0);
                for seed in 0..config.seeds as u64 {
                    match lookup(RunKey { variant, fraction, lr, weight_decay, seed }).map(RunRecord::metrics) {
                        Some(Some(m)) => ok.push((m.id_metric(metric), m.ood_metric(metric))),
                        Some(None) => failed += 1,
                        None => {}
                    }
                }
                if failed > 0 {
                    warn!("{variant} {fraction} lr={lr} wd={weight_decay}: {failed} failed run(s) excluded");
                }
                let mean_ood = (!ok.is_empty()).then(|| mean_std(&ok.iter().map(|p| p.1).collect::<Vec<_>>()).0);
                candidates.push(Candidate { lr, weight_decay, mean_ood, successful_runs: ok.len(), failed_runs: failed });
                per_seed.push(ok);
            }
            let Ok(best) = select_best_lr(&candidates) else { continue };
            let idx = candidates.iter().position(|c| std::ptr::eq(c, best)).expect("best is a candidate");
            let ids: Vec<f64> = per_seed[idx].iter().map(|p| p.0).collect();
            let oods: Vec<f64> = per_seed[idx].iter().map(|p| p.1).collect();
            let (mean_id, std_id) = mean_std(&ids);
            let (mean_ood, std_ood) = mean_std(&oods);
            let trained = fraction > 0.0;
            if trained {
                info!(
                    "{variant} {:>5.1}%: selected lr={} wd={} (mean OOD {:.2} over {} runs)",
                    fraction * 100.0,
                    best.lr,
                    best.weight_decay,
                    mean_ood,
                    best.successful_runs
                );
            }
            rows.push(ReportRow {
                variant,
                fraction,
                selected_lr: trained.then_some(best.lr),
                selected_weight_decay: trained.then_some(best.weight_decay),
                runs: ids.len(),
                mean_id,
                std_id,
                mean_ood,
                std_ood,
                candidates: if trained { candidates } else { Vec::new() },
            });
        }
    }
    ExperimentReport {
        metric,
        seeds: config.seeds,
        variants: config.variants.clone(),
        fractions: config.fractions.clone(),
        rows,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "plotdata" => Ok(Self::PlotData),
            other => Err(Error::config(format!("unknown report format {other:?}"))),
        }
    }
}

pub const MISSING: &str = "NA";

fn percent_label(f: f64) -> String {
    format!("{}%", (f * 1000.0).round() / 10.0)
}

fn cell(mean: f64, std: f64, fraction: f64) -> String {
    if fraction == 0.0 {
        format!("{mean:.1}")
    } else {
        format!("{mean:.1}±{std:.1}")
    }
}

/// Table with one row per (variant, split) and one column per fraction.
pub fn report_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("variant,split");
    for &f in &report.fractions {
        let _ = write!(out, ",{}", percent_label(f));
    }
    out.push('\n');
    for &v in &report.variants {
        for split in ["id", "ood"] {
            let _ = write!(out, "{v},{split}");
            for &f in &report.fractions {
                let text = match report.row(v, f) {
                    Some(r) if split == "id" => cell(r.mean_id, r.std_id, f),
                    Some(r) => cell(r.mean_ood, r.std_ood, f),
                    None => MISSING.to_string(),
                };
                let _ = write!(out, ",{text}");
            }
            out.push('\n');
        }
    }
    out
}

/// Every (lr, weight decay) candidate of each trained cell, with the chosen one flagged.
pub fn selection_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("variant,fraction,lr,weight_decay,mean_ood,successful_runs,failed_runs,selected\n");
    for r in &report.rows {
        for c in &r.candidates {
            let selected = r.selected_lr == Some(c.lr) && r.selected_weight_decay == Some(c.weight_decay);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.variant,
                r.fraction,
                c.lr,
                c.weight_decay,
                c.mean_ood.map_or_else(|| MISSING.to_string(), |v| v.to_string()),
                c.successful_runs,
                c.failed_runs,
                selected
            );
        }
    }
    out
}

/// One row per fraction: `fraction,mean_id,std_id,mean_ood,std_ood`.
pub fn plot_data_csv(report: &ExperimentReport, variant: Variant) -> String {
    let mut out = String::from("fraction,mean_id,std_id,mean_ood,std_ood\n");
    for &f in &report.fractions {
        match report.row(variant, f) {
            Some(r) => {
                let _ = writeln!(out, "{f},{},{},{},{}", r.mean_id, r.std_id, r.mean_ood, r.std_ood);
            }
            None => {
                let _ = writeln!(out, "{f},{MISSING},{MISSING},{MISSING},{MISSING}");
            }
        }
    }
    out
}

pub fn report_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

/// Writes the report into `dir` and returns the files created.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    if !report.is_complete() {
        warn!("report is incomplete; missing cells are written as {MISSING}");
    }
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    match format {
        ReportFormat::Csv => {
            files.push((dir.join("report.csv"), report_csv(report)));
            files.push((dir.join("selection.csv"), selection_csv(report)));
        }
        ReportFormat::Json => files.push((dir.join("report.json"), report_json(report)?)),
        ReportFormat::PlotData => {
            for &v in &report.variants {
                files.push((dir.join(format!("plot_{v}.csv")), plot_data_csv(report, v)));
            }
        }
    }
    for (path, text) in &files {
        std::fs::write(path, text)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
