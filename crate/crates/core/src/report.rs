//! CSV artifacts.
//!
//! Every file starts with a comment line `# config_hash=…,seed=…` followed by
//! a header row. Rows are written in stream order so reruns of the same
//! configuration produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    comparison_ratio_f, comparison_ratio_g, default_window, exact_rate_statistic, final_decade,
    log_martingale_diag, loglog_slope, oscillation_records,
};
use crate::config::{ExperimentConfig, Statistic};
use crate::engine::{median, EnsembleSummary, PathRecord};
use crate::error::{LabError, Result};
use crate::model::{
    RegimeReport, CITE_COMPARISON_F, CITE_COMPARISON_G, CITE_DECAY, CITE_EXACT, CITE_INSTABILITY,
    CITE_OSCILLATION, CITE_STABILITY,
};
use crate::noise::NoiseSource;
use crate::oracle::{ItoReport, MemoizedMoments};

/// Provenance stamped on every CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvMeta {
    pub config_hash: String,
    pub seed: u64,
}

impl CsvMeta {
    pub fn line(&self) -> String {
        format!("# config_hash={},seed={}", self.config_hash, self.seed)
    }
}

fn open(path: &Path, meta: &CsvMeta) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{}", meta.line())?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<BufWriter<File>>) -> Result<()> {
    w.flush()?;
    Ok(())
}

/// Checkpoints of one path: `n,sign,log_abs_x,acc_g2,acc_absf,acc_xlam`.
pub fn write_path_csv(path: &Path, record: &PathRecord, meta: &CsvMeta) -> Result<()> {
    let mut w = open(path, meta)?;
    w.write_record(["n", "sign", "log_abs_x", "acc_g2", "acc_absf", "acc_xlam"])?;
    for c in &record.checkpoints {
        w.write_record(&[
            c.n.to_string(),
            c.sign.to_string(),
            c.log_abs_x.to_string(),
            c.acc_g2.to_string(),
            c.acc_absf.to_string(),
            c.acc_xlam.to_string(),
        ])?;
    }
    finish(w)
}

/// Per-decade extremes of `|x_n| n^{1/μ}`, with their logarithms since the
/// linear values can leave the `f64` range.
pub fn write_decade_csv(path: &Path, record: &PathRecord, meta: &CsvMeta) -> Result<()> {
    let mut w = open(path, meta)?;
    w.write_record([
        "decade",
        "max_stat",
        "min_stat",
        "log_max_stat",
        "log_min_stat",
    ])?;
    for d in &record.decade_extremes {
        w.write_record(&[
            d.decade.to_string(),
            d.log_max.exp().to_string(),
            d.log_min.exp().to_string(),
            d.log_max.to_string(),
            d.log_min.to_string(),
        ])?;
    }
    finish(w)
}

/// Terminal statistics of every path, in stream order.
pub fn write_summary_csv(path: &Path, summary: &EnsembleSummary, meta: &CsvMeta) -> Result<()> {
    let mut w = open(path, meta)?;
    w.write_record([
        "stream",
        "n",
        "sign",
        "log_abs_x",
        "acc_g2",
        "acc_absf",
        "acc_xlam",
    ])?;
    for t in summary.terminals() {
        w.write_record(&[
            t.stream.to_string(),
            t.n.to_string(),
            t.sign.to_string(),
            t.log_abs_x.to_string(),
            t.acc_g2.to_string(),
            t.acc_absf.to_string(),
            t.acc_xlam.to_string(),
        ])?;
    }
    finish(w)
}

/// One Itô-scan row per report.
pub fn write_ito_csv(path: &Path, reports: &[ItoReport], meta: &CsvMeta) -> Result<()> {
    let mut w = open(path, meta)?;
    w.write_record([
        "phi", "alpha", "f", "g", "h", "lhs", "rhs", "err", "norm_err",
    ])?;
    for r in reports {
        w.write_record(&[
            r.phi.kind.as_str().to_string(),
            r.phi.alpha.map(|a| a.to_string()).unwrap_or_default(),
            r.f.to_string(),
            r.g.to_string(),
            r.h.to_string(),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.err.to_string(),
            r.norm_err.to_string(),
        ])?;
    }
    finish(w)
}

/// One measured statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub experiment: String,
    /// `None` for ensemble aggregates.
    pub stream: Option<u64>,
    pub statistic: String,
    pub window_lo: u64,
    pub window_hi: u64,
    pub value: f64,
    pub predicted: Option<f64>,
    pub citation: String,
}

pub fn write_report_csv(path: &Path, rows: &[StatRow], meta: &CsvMeta) -> Result<()> {
    let mut w = open(path, meta)?;
    w.write_record([
        "experiment",
        "stream",
        "statistic",
        "window_lo",
        "window_hi",
        "value",
        "predicted",
        "citation",
    ])?;
    for r in rows {
        w.write_record(&[
            r.experiment.clone(),
            r.stream
                .map(|s| s.to_string())
                .unwrap_or_else(|| "all".into()),
            r.statistic.clone(),
            r.window_lo.to_string(),
            r.window_hi.to_string(),
            r.value.to_string(),
            r.predicted.map(|p| p.to_string()).unwrap_or_default(),
            r.citation.clone(),
        ])?;
    }
    finish(w)
}

/// Evaluate the configured statistics on an ensemble. Per-path rows come
/// first in stream order, each statistic followed by its ensemble median
/// (or fraction, for [`Statistic::FractionBelow`]).
pub fn compute_statistics(
    cfg: &ExperimentConfig,
    regime: &RegimeReport,
    paths: &[PathRecord],
    source: &NoiseSource,
) -> Result<Vec<StatRow>> {
    let n = cfg.n_steps;
    let mut rows = Vec::new();
    let row = |stream: Option<u64>,
               stat: &str,
               window: (u64, u64),
               value: f64,
               predicted: Option<f64>,
               cite: &str| StatRow {
        experiment: cfg.name.clone(),
        stream,
        statistic: stat.to_string(),
        window_lo: window.0,
        window_hi: window.1,
        value,
        predicted,
        citation: cite.to_string(),
    };
    let push_stat = |rows: &mut Vec<StatRow>,
                     name: &str,
                     window: (u64, u64),
                     per_path: Vec<(u64, f64)>,
                     predicted,
                     cite| {
        let values: Vec<f64> = per_path
            .iter()
            .map(|p| p.1)
            .filter(|v| v.is_finite())
            .collect();
        for (s, v) in per_path {
            rows.push(row(Some(s), name, window, v, predicted, cite));
        }
        rows.push(row(
            None,
            &format!("{name}_median"),
            window,
            median(&values),
            predicted,
            cite,
        ));
    };
    let mut stats = cfg.statistics.clone();
    stats.sort();
    stats.dedup();
    for stat in stats {
        match stat {
            Statistic::FractionBelow => {
                let summary = EnsembleSummary::from_paths(paths);
                let cite = if regime.case_tag == crate::model::CaseTag::Unstable {
                    CITE_INSTABILITY
                } else {
                    CITE_STABILITY
                };
                rows.push(row(
                    None,
                    "fraction_below",
                    (n, n),
                    summary.frac_below(cfg.threshold),
                    None,
                    cite,
                ));
            }
            Statistic::LoglogSlope => {
                let window = default_window(n);
                let per: Vec<(u64, f64)> = paths
                    .iter()
                    .map(|p| {
                        (
                            p.meta.stream,
                            loglog_slope(p, None).map(|e| e.slope).unwrap_or(f64::NAN),
                        )
                    })
                    .collect();
                push_stat(
                    &mut rows,
                    "loglog_slope",
                    window,
                    per,
                    regime.lambda.map(|l| -1.0 / l),
                    CITE_DECAY,
                );
            }
            Statistic::ComparisonRatioG => {
                let per = paths
                    .iter()
                    .map(|p| (p.meta.stream, comparison_ratio_g(p).unwrap_or(f64::NAN)))
                    .collect();
                push_stat(
                    &mut rows,
                    "comparison_ratio_g",
                    (n, n),
                    per,
                    regime.ratio_g_limit,
                    CITE_COMPARISON_G,
                );
            }
            Statistic::ComparisonRatioF => {
                let per = paths
                    .iter()
                    .map(|p| (p.meta.stream, comparison_ratio_f(p).unwrap_or(f64::NAN)))
                    .collect();
                push_stat(
                    &mut rows,
                    "comparison_ratio_f",
                    (n, n),
                    per,
                    regime.ratio_f_limit,
                    CITE_COMPARISON_F,
                );
            }
            Statistic::ExactRate => {
                let constant = regime.exact_constant.ok_or_else(|| {
                    LabError::analysis(
                        "exact_rate requested but the regime has no exact-rate constant",
                    )
                })?;
                let per = paths
                    .iter()
                    .map(|p| {
                        let v = exact_rate_statistic(p, cfg.model.mu_f, constant)
                            .last()
                            .map(|x| x.1)
                            .unwrap_or(f64::NAN);
                        (p.meta.stream, v)
                    })
                    .collect();
                push_stat(&mut rows, "exact_rate", (n, n), per, Some(1.0), CITE_EXACT);
            }
            Statistic::Oscillation => {
                let recs: Vec<_> = paths
                    .iter()
                    .map(|p| (p.meta.stream, oscillation_records(p)))
                    .collect();
                let last = final_decade(n);
                let window = (10u64.pow(last - 1), (10u64.saturating_pow(last) - 1).min(n));
                let per_max = recs
                    .iter()
                    .map(|(s, r)| (*s, r.final_record(n).map(|d| d.log_max).unwrap_or(f64::NAN)))
                    .collect();
                push_stat(
                    &mut rows,
                    "oscillation_final_decade_log_max",
                    window,
                    per_max,
                    None,
                    CITE_OSCILLATION,
                );
                let per_min = recs
                    .iter()
                    .map(|(s, r)| (*s, r.final_record(n).map(|d| d.log_min).unwrap_or(f64::NAN)))
                    .collect();
                push_stat(
                    &mut rows,
                    "oscillation_final_decade_log_min",
                    window,
                    per_min,
                    None,
                    CITE_OSCILLATION,
                );
                let frac = |f: &dyn Fn(&crate::analysis::DecadeRecord) -> bool| {
                    recs.iter()
                        .filter(|(_, r)| r.final_record(n).map(f).unwrap_or(false))
                        .count() as f64
                        / recs.len().max(1) as f64
                };
                rows.push(row(
                    None,
                    "oscillation_new_max_fraction",
                    window,
                    frac(&|d| d.new_max),
                    None,
                    CITE_OSCILLATION,
                ));
                rows.push(row(
                    None,
                    "oscillation_new_min_fraction",
                    window,
                    frac(&|d| d.new_min),
                    None,
                    CITE_OSCILLATION,
                ));
            }
            Statistic::Martingale => {
                let spec = source.spec().clone();
                let diags: Vec<(u64, _)> = paths
                    .par_iter()
                    .map(|p| {
                        let mut m = MemoizedMoments::new(spec.clone(), 8.0);
                        log_martingale_diag(&cfg.model, source, p.meta.stream, n, &mut m)
                            .map(|d| (p.meta.stream, d))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let cite = "martingale strong law: sum d / <M> -> 0";
                let per = diags.iter().map(|(s, d)| (*s, d.m_over_qv)).collect();
                push_stat(
                    &mut rows,
                    "martingale_m_over_qv",
                    (1, n),
                    per,
                    Some(0.0),
                    cite,
                );
                let per = diags
                    .iter()
                    .map(|(s, d)| (*s, d.qv_over_h_acc_g2))
                    .collect();
                push_stat(
                    &mut rows,
                    "martingale_qv_over_h_acc_g2",
                    (1, n),
                    per,
                    Some(1.0),
                    cite,
                );
            }
        }
    }
    Ok(rows)
}
