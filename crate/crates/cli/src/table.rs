//! Aligned text tables for stdout. Values are percentages with two decimals,
//! matching the usual clustering-benchmark convention.

use revclust_core::metrics::MetricsReport;
use revclust_core::pipeline::{MetricStats, RunSummary};

fn cell(stats: &MetricStats) -> String {
    format!("{:.2}±{:.2}", 100.0 * stats.mean, 100.0 * stats.std)
}

pub fn metrics_line(report: &MetricsReport) -> String {
    format!(
        "acc {:.2}  nmi {:.2}  ari {:.2}  f1 {:.2}",
        100.0 * report.acc,
        100.0 * report.nmi,
        100.0 * report.ari,
        100.0 * report.f1
    )
}

pub fn summary_table(summary: &RunSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8}{:>14}{:>14}{:>14}{:>14}\n",
        "metric", "acc", "nmi", "ari", "f1"
    ));
    out.push_str(&format!(
        "{:<8}{:>14}{:>14}{:>14}{:>14}",
        "mean±std",
        cell(&summary.summary.acc),
        cell(&summary.summary.nmi),
        cell(&summary.summary.ari),
        cell(&summary.summary.f1),
    ));
    out
}

pub fn ablation_table(rows: &[(String, RunSummary)]) -> String {
    let name_width = rows
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(8)
        .max("variant".len())
        + 2;
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$}{:>14}{:>14}{:>14}{:>14}\n",
        "variant", "acc", "nmi", "ari", "f1"
    ));
    for (name, summary) in rows {
        out.push_str(&format!(
            "{:<name_width$}{:>14}{:>14}{:>14}{:>14}\n",
            name,
            cell(&summary.summary.acc),
            cell(&summary.summary.nmi),
            cell(&summary.summary.ari),
            cell(&summary.summary.f1),
        ));
    }
    out.pop();
    out
}

pub fn sweep_table(parameter: &str, rows: &[(f64, RunSummary)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10}{:>14}{:>14}{:>14}{:>14}\n",
        parameter, "acc", "nmi", "ari", "f1"
    ));
    for (value, summary) in rows {
        out.push_str(&format!(
            "{:<10}{:>14}{:>14}{:>14}{:>14}\n",
            value,
            cell(&summary.summary.acc),
            cell(&summary.summary.nmi),
            cell(&summary.summary.ari),
            cell(&summary.summary.f1),
        ));
    }
    out.pop();
    out
}
