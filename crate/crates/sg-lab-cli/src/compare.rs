//! Side-by-side runs of configurations that differ only in the
//! conditioning exponent, so regime changes show up against a fixed
//! channel, noise law, and seed rather than against incidental config
//! drift.

use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use crate::config::{CliError, CliResult, ExperimentConfig};
use crate::experiment::{run_experiment, write_lines_in, write_outputs, RunArtifacts, RunOptions};

/// One line of the comparison table.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub label: String,
    pub alpha: f64,
    pub final_r: f64,
    pub final_error: f64,
    pub final_norm: Option<f64>,
    pub checkpoint_norm: Option<f64>,
    pub envelope_m: Option<f64>,
    pub blocks: Option<usize>,
    pub general_final: Option<f64>,
    pub log_gap_final: Option<f64>,
    pub certified_final: Option<f64>,
}

/// Rejects comparison sets that differ in anything but `alpha` and `label`,
/// or that reuse a label (run outputs land in per-label directories).
pub fn assert_comparable(cfgs: &[ExperimentConfig]) -> CliResult<()> {
    if cfgs.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two configurations".into(),
        ));
    }
    let mut labels: Vec<String> = cfgs.iter().map(|c| c.label()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() != cfgs.len() {
        return Err(CliError::Config(
            "compared configurations must carry distinct labels".into(),
        ));
    }
    let strip = |cfg: &ExperimentConfig| -> CliResult<Value> {
        let mut v = serde_json::to_value(cfg)
            .map_err(|e| CliError::Runtime(format!("config serialization: {e}")))?;
        let obj = v
            .as_object_mut()
            .expect("configs serialize to JSON objects");
        obj.remove("alpha");
        obj.remove("label");
        Ok(v)
    };
    let reference = strip(&cfgs[0])?;
    for (i, cfg) in cfgs.iter().enumerate().skip(1) {
        if strip(cfg)? != reference {
            return Err(CliError::Config(format!(
                "configuration {} differs from the first in more than alpha/label; \
                 comparisons isolate the conditioning exponent",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Runs every configuration (in parallel) with full tracking.
pub fn compare_regimes(cfgs: &[ExperimentConfig]) -> CliResult<Vec<RunArtifacts>> {
    assert_comparable(cfgs)?;
    cfgs.par_iter()
        .map(|cfg| run_experiment(cfg, &RunOptions::default()))
        .collect()
}

/// Extracts the table rows from finished runs.
pub fn comparison_rows(arts: &[RunArtifacts]) -> Vec<CompareRow> {
    arts.iter()
        .map(|a| {
            let s = &a.summary;
            CompareRow {
                label: s.label.clone(),
                alpha: s.alpha,
                final_r: s.final_r,
                final_error: s.final_estimation_error,
                final_norm: s.transition.as_ref().map(|t| t.final_norm),
                checkpoint_norm: s.transition.as_ref().map(|t| t.checkpoint_norm),
                envelope_m: s.conditioning.as_ref().and_then(|c| c.envelope_m),
                blocks: s.schedule.as_ref().map(|b| b.blocks),
                general_final: s.criterion.as_ref().and_then(|c| c.general_final),
                log_gap_final: s.criterion.as_ref().and_then(|c| c.log_gap_final),
                certified_final: s.criterion.as_ref().and_then(|c| c.certified_final),
            }
        })
        .collect()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into())
}

fn opt_count(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

/// Renders an aligned text table of the comparison.
pub fn render_table(rows: &[CompareRow]) -> String {
    let headers = [
        "label",
        "alpha",
        "final_err",
        "final_norm",
        "norm@1e3",
        "envelope_m",
        "blocks",
        "sum_general",
        "sum_log_gap",
        "sum_certified",
    ];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                format!("{}", r.alpha),
                format!("{:.4e}", r.final_error),
                opt_num(r.final_norm),
                opt_num(r.checkpoint_norm),
                opt_num(r.envelope_m),
                opt_count(r.blocks),
                opt_num(r.general_final),
                opt_num(r.log_gap_final),
                opt_num(r.certified_final),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let render_row = |cols: &[String]| -> String {
        cols.iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let header_row = render_row(&headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    let mut out = header_row.clone();
    out.push('\n');
    out.push_str(&"-".repeat(header_row.len()));
    out.push('\n');
    for row in &cells {
        out.push_str(&render_row(row));
        out.push('\n');
    }
    out
}

/// Writes per-run outputs into `dir/<label>/` and the comparison table as
/// `dir/compare.csv`. Returns the relative paths written at the top level.
pub fn write_compare(
    arts: &mut [RunArtifacts],
    rows: &[CompareRow],
    dir: &Path,
    emit_plots: bool,
) -> CliResult<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    for art in arts.iter_mut() {
        let sub = dir.join(&art.summary.label);
        write_outputs(art, &sub, emit_plots)?;
    }
    let lines = std::iter::once(
        "label,alpha,final_r,final_err,final_norm,checkpoint_norm,envelope_m,blocks,\
         general_final,log_gap_final,certified_final"
            .to_string(),
    )
    .chain(rows.iter().map(|r| {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.alpha,
            r.final_r,
            r.final_error,
            r.final_norm.map(|v| v.to_string()).unwrap_or_default(),
            r.checkpoint_norm.map(|v| v.to_string()).unwrap_or_default(),
            r.envelope_m.map(|v| v.to_string()).unwrap_or_default(),
            r.blocks.map(|v| v.to_string()).unwrap_or_default(),
            r.general_final.map(|v| v.to_string()).unwrap_or_default(),
            r.log_gap_final.map(|v| v.to_string()).unwrap_or_default(),
            r.certified_final.map(|v| v.to_string()).unwrap_or_default(),
        )
    }));
    write_lines_in(dir, "compare.csv", lines)?;
    Ok(vec!["compare.csv".into()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(alpha: f64, label: &str) -> ExperimentConfig {
        serde_json::from_str(&format!(
            r#"{{"mode": "direct", "dim": 2, "alpha": {alpha}, "horizon": 150, "label": "{label}"}}"#
        ))
        .expect("valid config")
    }

    #[test]
    fn rejects_single_and_mismatched_sets() {
        let one = vec![cfg(0.5, "a")];
        assert!(matches!(
            assert_comparable(&one),
            Err(CliError::Config(_))
        ));

        let mut mismatched = vec![cfg(0.5, "a"), cfg(1.5, "b")];
        mismatched[1].horizon = 200;
        assert!(matches!(
            assert_comparable(&mismatched),
            Err(CliError::Config(_))
        ));

        let dup = vec![cfg(0.5, "same"), cfg(1.5, "same")];
        assert!(matches!(assert_comparable(&dup), Err(CliError::Config(_))));
    }

    #[test]
    fn runs_and_tabulates_two_regimes() {
        let cfgs = vec![cfg(0.0, "flat"), cfg(2.0, "steep")];
        let mut arts = compare_regimes(&cfgs).expect("both run");
        let rows = comparison_rows(&arts);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].label, "flat");
        assert!(rows.iter().all(|r| r.final_error.is_finite()));

        let table = render_table(&rows);
        assert!(table.contains("flat") && table.contains("steep"));

        let dir = tempfile::tempdir().expect("tempdir");
        write_compare(&mut arts, &rows, dir.path(), false).expect("write");
        assert!(dir.path().join("compare.csv").exists());
        assert!(dir.path().join("flat/summary.json").exists());
        assert!(dir.path().join("steep/summary.json").exists());
    }
}
