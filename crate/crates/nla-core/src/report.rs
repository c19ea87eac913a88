//! Human-readable and CSV renderings of the analysis reports.
//!
//! Every renderer is a pure function from a report value to a string, so
//! emitted bytes depend only on the report contents. Text tables carry
//! their configuration in headers and footers (JSD base and aggregation,
//! ridge alpha, quadrature tolerance); CSVs carry full-precision values
//! for machine consumption.

use std::fmt::Write as _;

use crate::bank::AspectId;
use crate::bias::{BiasAggregation, BiasReport};
use crate::corpus::Split;
use crate::error::{NlaError, Result};
use crate::pipeline::{EvalRow, EvaluationReport, FitReport, StatsReport};
use crate::regression::BetaReport;
use crate::stats::dist::QUADRATURE_EPS;

/// Significance threshold for flagging Nemenyi pairs.
pub const SIGNIFICANCE_ALPHA: f64 = 0.05;

fn pad(s: &str, width: usize) -> String {
    format!("{s:<width$}")
}

fn pad_right(s: &str, width: usize) -> String {
    format!("{s:>width$}")
}

/// Mean-JSD-per-aspect table: one row per aspect, columns for the aspect
/// name, the mean divergence, and the response count.
pub fn bias_table_text(report: &BiasReport) -> String {
    let aggregation = match report.aggregation {
        BiasAggregation::PairwiseMean => "pairwise mean",
        BiasAggregation::Generalized => "generalized n-way",
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Average JSD per aspect (base-2 logarithm, {aggregation})"
    );
    let _ = writeln!(
        out,
        "{} {} {}",
        pad("Aspect", 32),
        pad_right("JSD", 8),
        pad_right("n", 6)
    );
    for (aspect, bias) in &report.per_aspect {
        let _ = writeln!(
            out,
            "{} {} {}",
            pad(aspect.display_name(), 32),
            pad_right(&format!("{:.4}", bias.mean_jsd), 8),
            pad_right(&bias.n_responses.to_string(), 6),
        );
    }
    out
}

/// CSV twin of [`bias_table_text`] with full-precision values.
pub fn bias_table_csv(report: &BiasReport) -> String {
    let mut out = String::from("aspect,mean_jsd,n_responses\n");
    for (aspect, bias) in &report.per_aspect {
        let _ = writeln!(
            out,
            "{},{},{}",
            aspect.code(),
            bias.mean_jsd,
            bias.n_responses
        );
    }
    out
}

/// Ridge-coefficient table: one row per aspect, one column per part, the
/// three largest values in each row marked with `*`.
pub fn beta_table_text(report: &BetaReport, alpha: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Ridge coefficients per part (alpha = {alpha})");
    let mut header = pad("Aspect", 32);
    for part in &report.parts {
        header.push(' ');
        header.push_str(&pad_right(&format!("Part {part}"), 9));
    }
    let _ = writeln!(out, "{header}");
    for row in &report.rows {
        let mut line = pad(row.aspect.display_name(), 32);
        for (beta, flagged) in row.betas.iter().zip(&row.flags) {
            let cell = if *flagged {
                format!("{beta:.3}*")
            } else {
                format!("{beta:.3}")
            };
            line.push(' ');
            line.push_str(&pad_right(&cell, 9));
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "* three largest values in the row");
    out
}

/// CSV twin of [`beta_table_text`]: per-part value columns followed by a
/// `top3` column listing the flagged parts.
pub fn beta_table_csv(report: &BetaReport) -> String {
    let mut out = String::from("aspect");
    for part in &report.parts {
        let _ = write!(out, ",beta_p{part}");
    }
    out.push_str(",top3\n");
    for row in &report.rows {
        let mut line = row.aspect.code().to_string();
        for beta in &row.betas {
            let _ = write!(line, ",{beta}");
        }
        let flagged: Vec<String> = report
            .parts
            .iter()
            .zip(&row.flags)
            .filter(|(_, f)| **f)
            .map(|(p, _)| format!("p{p}"))
            .collect();
        let _ = writeln!(out, "{line},{}", flagged.join(";"));
    }
    out
}

fn split_label(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::Eval => "eval",
    }
}

fn overall_cell(rows: &[EvalRow], split: Split, pick: impl Fn(&EvalRow) -> f64) -> String {
    rows.iter()
        .find(|r| r.split == split && r.part.is_none())
        .map(|r| format!("{:.3}", pick(r)))
        .unwrap_or_else(|| "-".to_string())
}

/// Correlation summary: one row per system, PCC and SRC columns split by
/// dev and eval, followed by the per-part detail rows.
pub fn evaluation_table_text(holistic: &EvaluationReport, ridge: Option<&FitReport>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Correlation with reference scores");
    let _ = writeln!(
        out,
        "{} {} {} {} {}",
        pad("System", 12),
        pad_right("PCC dev", 9),
        pad_right("PCC eval", 9),
        pad_right("SRC dev", 9),
        pad_right("SRC eval", 9),
    );
    let mut systems: Vec<(&str, &[EvalRow])> = vec![("Q+NLA", &holistic.rows)];
    if let Some(fit) = ridge {
        systems.push(("Q+NLA+RR", &fit.rows));
    }
    for (name, rows) in systems {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            pad(name, 12),
            pad_right(&overall_cell(rows, Split::Dev, |r| r.pcc), 9),
            pad_right(&overall_cell(rows, Split::Eval, |r| r.pcc), 9),
            pad_right(&overall_cell(rows, Split::Dev, |r| r.src), 9),
            pad_right(&overall_cell(rows, Split::Eval, |r| r.src), 9),
        );
    }
    let per_part: Vec<&EvalRow> = holistic.rows.iter().filter(|r| r.part.is_some()).collect();
    if !per_part.is_empty() {
        let _ = writeln!(out, "Per part (Q+NLA):");
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            pad("Part", 12),
            pad_right("Split", 9),
            pad_right("PCC", 9),
            pad_right("SRC", 9),
            pad_right("n", 6),
        );
        for row in per_part {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                pad(&format!("Part {}", row.part.unwrap()), 12),
                pad_right(split_label(row.split), 9),
                pad_right(&format!("{:.3}", row.pcc), 9),
                pad_right(&format!("{:.3}", row.src), 9),
                pad_right(&row.n.to_string(), 6),
            );
        }
    }
    out
}

/// CSV twin of [`evaluation_table_text`]: one row per (system, split,
/// scope) with full-precision correlations.
pub fn evaluation_table_csv(holistic: &EvaluationReport, ridge: Option<&FitReport>) -> String {
    let mut out = String::from("system,split,scope,pcc,src,n\n");
    let mut emit = |system: &str, rows: &[EvalRow]| {
        for row in rows {
            let scope = row
                .part
                .map(|p| format!("part{p}"))
                .unwrap_or_else(|| "overall".to_string());
            let _ = writeln!(
                out,
                "{system},{},{scope},{},{},{}",
                split_label(row.split),
                row.pcc,
                row.src,
                row.n
            );
        }
    };
    emit("Q+NLA", &holistic.rows);
    if let Some(fit) = ridge {
        emit("Q+NLA+RR", &fit.rows);
    }
    out
}

/// Coefficient table plus the ridge-aggregated correlation rows, for the
/// fit command's standalone output.
pub fn fit_summary_text(report: &FitReport) -> String {
    let mut out = beta_table_text(&report.beta, report.alpha);
    let _ = writeln!(out, "Ridge-aggregated overall correlations:");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            pad(split_label(row.split), 12),
            pad_right(&format!("PCC {:.3}", row.pcc), 11),
            pad_right(&format!("SRC {:.3}", row.src), 11),
            pad_right(&format!("n {}", row.n), 7),
        );
    }
    out
}

/// Index pairs (i < j) whose Nemenyi p-value is below
/// [`SIGNIFICANCE_ALPHA`].
pub fn significant_pairs(report: &StatsReport) -> Vec<(usize, usize)> {
    let k = report.nemenyi.k;
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            if report.nemenyi.p_values[i][j] < SIGNIFICANCE_ALPHA {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Friedman summary line plus the pairwise Nemenyi grid. Cells carry the
/// p-value with `*` marking pairs below the significance threshold; the
/// non-significant pairs are then listed explicitly, and the footer
/// records the quadrature tolerance behind the p-values.
pub fn stats_report_text(report: &StatsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Friedman test over {} candidates ({} split), k = {} columns:",
        report.n_rows,
        split_label(report.split),
        report.friedman.k,
    );
    let _ = writeln!(
        out,
        "  chi2 = {:.4}, df = {}, p = {:.3e}",
        report.friedman.statistic, report.friedman.df, report.friedman.p_value
    );
    let _ = writeln!(
        out,
        "Pairwise Nemenyi p-values (* marks p < {SIGNIFICANCE_ALPHA}):"
    );
    let width = report
        .columns
        .iter()
        .map(|c| c.len())
        .max()
        .unwrap_or(4)
        .max(9);
    let mut header = pad("", width);
    for column in &report.columns {
        header.push(' ');
        header.push_str(&pad_right(column, width));
    }
    let _ = writeln!(out, "{header}");
    let k = report.nemenyi.k;
    for i in 0..k {
        let mut line = pad(&report.columns[i], width);
        for j in 0..k {
            let cell = if i == j {
                "-".to_string()
            } else {
                let p = report.nemenyi.p_values[i][j];
                if p < SIGNIFICANCE_ALPHA {
                    format!("{p:.3}*")
                } else {
                    format!("{p:.3}")
                }
            };
            line.push(' ');
            line.push_str(&pad_right(&cell, width));
        }
        let _ = writeln!(out, "{line}");
    }
    let significant = significant_pairs(report);
    let mut non_significant = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            if !significant.contains(&(i, j)) {
                non_significant.push(format!("{}/{}", report.columns[i], report.columns[j]));
            }
        }
    }
    let _ = writeln!(
        out,
        "Non-significant pairs at alpha = {SIGNIFICANCE_ALPHA}: {}",
        if non_significant.is_empty() {
            "none".to_string()
        } else {
            non_significant.join(", ")
        }
    );
    let _ = writeln!(
        out,
        "Survival-integral quadrature tolerance: {QUADRATURE_EPS:.1e} absolute"
    );
    out
}

/// CSV twin of the Nemenyi grid: full-precision p-values, diagonal empty.
pub fn stats_report_csv(report: &StatsReport) -> String {
    let mut out = String::from("column");
    for column in &report.columns {
        let _ = write!(out, ",{column}");
    }
    out.push('\n');
    let k = report.nemenyi.k;
    for i in 0..k {
        let mut line = report.columns[i].clone();
        for j in 0..k {
            if i == j {
                line.push(',');
            } else {
                let _ = write!(line, ",{}", report.nemenyi.p_values[i][j]);
            }
        }
        let _ = writeln!(out, "{line}");
    }
    out
}

/// Everything the bundled run report needs, collected by the caller.
#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    pub model_id: &'a str,
    pub seed: u64,
    pub n_orderings: u32,
    pub bank_version: &'a str,
    pub evaluation: &'a EvaluationReport,
    pub bias: &'a BiasReport,
    pub fit: Option<&'a FitReport>,
    pub stats: Option<&'a StatsReport>,
}

/// One text document bundling the correlation, bias, coefficient, and
/// rank-test tables for a scored run.
pub fn run_report_text(inputs: &ReportInputs<'_>) -> Result<String> {
    if AspectId::ALL.len() != inputs.bias.per_aspect.len() {
        return Err(NlaError::Validation(format!(
            "bias report covers {} aspects, expected {}",
            inputs.bias.per_aspect.len(),
            AspectId::ALL.len()
        )));
    }
    let mut out = String::new();
    let _ = writeln!(out, "Run report");
    let _ = writeln!(out, "model: {}", inputs.model_id);
    let _ = writeln!(
        out,
        "seed: {}, orderings per aspect: {}, bank: {}",
        inputs.seed, inputs.n_orderings, inputs.bank_version
    );
    out.push('\n');
    out.push_str(&evaluation_table_text(inputs.evaluation, inputs.fit));
    out.push('\n');
    out.push_str(&bias_table_text(inputs.bias));
    if let Some(fit) = inputs.fit {
        out.push('\n');
        out.push_str(&beta_table_text(&fit.beta, fit.alpha));
    }
    if let Some(stats) = inputs.stats {
        out.push('\n');
        out.push_str(&stats_report_text(stats));
    }
    Ok(out)
}
