//! Randomized re-verification of the algebraic machinery: window bounds
//! against exact product norms, certificate replays, and the closed-form
//! overlap estimate, on freshly drawn instances rather than the fixtures
//! the unit tests pin.
//!
//! Every instance derives its generator from the sweep seed and its own
//! index, so runs are reproducible and instances are independent; the
//! sweep is embarrassingly parallel.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rayon::prelude::*;

use sg_lab::bounds::{
    audited_block_bound, contraction_certificate, integral_estimate, WeightScheme, BOUND_SLACK,
};

use crate::config::{CliError, CliResult, VerifyConfig};
use crate::experiment::write_lines_in;

/// One verified instance.
#[derive(Debug, Clone)]
pub struct VerifyRow {
    /// `window_bound`, `certificate`, or `integral_estimate`.
    pub kind: &'static str,
    pub index: usize,
    pub dim: usize,
    pub len: usize,
    /// Weight scheme, where one applies.
    pub scheme: &'static str,
    /// Measured side of the headline inequality.
    pub lhs: f64,
    /// Bounding side.
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: f64,
    pub pass: bool,
}

/// Outcome of a full sweep.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    pub violations: usize,
}

const STREAM_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

fn instance_rng(seed: u64, stream: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_add(stream.wrapping_mul(STREAM_MIX))
            .wrapping_add((index as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)),
    )
}

/// Draws a random window: regressors with entries in `[-1, 1]` and an
/// energy curve that starts above the unit normalizer and absorbs each
/// step's energy, so the contraction precondition holds by construction.
fn random_window<R: Rng>(
    rng: &mut R,
    max_dim: usize,
    max_len: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let dim = rng.random_range(1..=max_dim);
    let len = rng.random_range(2..=max_len.max(2));
    let mut r = 1.0 + rng.random_range(0.0..4.0);
    let mut phis = Vec::with_capacity(len);
    let mut rs = Vec::with_capacity(len);
    for _ in 0..len {
        let phi: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        r += phi.iter().map(|v| v * v).sum::<f64>();
        phis.push(phi);
        rs.push(r);
    }
    (phis, rs)
}

fn scheme_for(index: usize) -> WeightScheme {
    if index % 2 == 0 {
        WeightScheme::Unit
    } else {
        WeightScheme::RWeighted
    }
}

fn bound_instance(cfg: &VerifyConfig, index: usize) -> CliResult<VerifyRow> {
    let mut rng = instance_rng(cfg.seed, 1, index);
    let (phis, rs) = random_window(&mut rng, cfg.max_dim, cfg.max_len);
    let scheme = scheme_for(index);
    let report = audited_block_bound(&phis, &rs, 0, phis.len(), &scheme)?;
    let exact = report.exact_norm_sq.expect("audited report carries the exact norm");
    Ok(VerifyRow {
        kind: "window_bound",
        index,
        dim: phis[0].len(),
        len: phis.len(),
        scheme: report.scheme,
        lhs: exact,
        rhs: report.bound_sq,
        margin: report.bound_sq - exact,
        pass: exact <= report.bound_sq + BOUND_SLACK,
    })
}

fn certificate_instance(cfg: &VerifyConfig, index: usize) -> CliResult<VerifyRow> {
    let mut rng = instance_rng(cfg.seed, 2, index);
    let (phis, rs) = random_window(&mut rng, cfg.max_dim, cfg.cert_max_len);
    let dim = phis[0].len();
    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let scheme = scheme_for(index);
    let report = contraction_certificate(&phis, &rs, 0, phis.len(), &x, &scheme)?;
    Ok(VerifyRow {
        kind: "certificate",
        index,
        dim,
        len: phis.len(),
        scheme: scheme.label(),
        lhs: report.quad_form,
        rhs: report.cauchy_ceiling,
        margin: report.cauchy_ceiling - report.quad_form,
        pass: report.pass,
    })
}

fn estimate_instance(cfg: &VerifyConfig, index: usize) -> CliResult<VerifyRow> {
    let mut rng = instance_rng(cfg.seed, 3, index);
    let (phis, rs) = random_window(&mut rng, cfg.max_dim, cfg.max_len);
    let report = integral_estimate(&phis, &rs, 0, phis.len())?;
    Ok(VerifyRow {
        kind: "integral_estimate",
        index,
        dim: phis[0].len(),
        len: phis.len(),
        scheme: "energy",
        lhs: report.lhs,
        rhs: report.rhs,
        margin: report.slack,
        pass: report.pass,
    })
}

/// Runs the three sweeps in parallel and collects every instance.
pub fn run_verification(cfg: &VerifyConfig) -> CliResult<VerifyReport> {
    let bounds: Vec<VerifyRow> = (0..cfg.instances)
        .into_par_iter()
        .map(|i| bound_instance(cfg, i))
        .collect::<CliResult<_>>()?;
    let certs: Vec<VerifyRow> = (0..cfg.certificates)
        .into_par_iter()
        .map(|i| certificate_instance(cfg, i))
        .collect::<CliResult<_>>()?;
    let estimates: Vec<VerifyRow> = (0..cfg.estimates)
        .into_par_iter()
        .map(|i| estimate_instance(cfg, i))
        .collect::<CliResult<_>>()?;

    let mut rows = bounds;
    rows.extend(certs);
    rows.extend(estimates);
    let violations = rows.iter().filter(|r| !r.pass).count();
    Ok(VerifyReport { rows, violations })
}

/// Writes the sweep outcomes as `verify.csv` in `dir`.
pub fn write_verify_csv(report: &VerifyReport, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let lines = std::iter::once("kind,index,dim,len,scheme,lhs,rhs,margin,pass".to_string())
        .chain(report.rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.kind, r.index, r.dim, r.len, r.scheme, r.lhs, r.rhs, r.margin, r.pass
            )
        }));
    write_lines_in(dir, "verify.csv", lines)
}

/// Human-readable sweep summary, one line per kind.
pub fn summarize(report: &VerifyReport) -> String {
    let mut out = String::new();
    for kind in ["window_bound", "certificate", "integral_estimate"] {
        let total = report.rows.iter().filter(|r| r.kind == kind).count();
        let passed = report
            .rows
            .iter()
            .filter(|r| r.kind == kind && r.pass)
            .count();
        let min_margin = report
            .rows
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.margin)
            .fold(f64::INFINITY, f64::min);
        out.push_str(&format!(
            "{kind}: {passed}/{total} passed, smallest margin {min_margin:.3e}\n"
        ));
    }
    out.push_str(&format!("violations: {}\n", report.violations));
    out
}

/// Folds a sweep into an exit decision: any violation is a runtime failure.
pub fn require_clean(report: &VerifyReport) -> CliResult<()> {
    if report.violations > 0 {
        return Err(CliError::Runtime(format!(
            "{} of {} randomized instances violated their inequality",
            report.violations,
            report.rows.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> VerifyConfig {
        serde_json::from_str(
            r#"{"instances": 60, "certificates": 40, "estimates": 40,
                "max_dim": 4, "max_len": 40, "cert_max_len": 25, "seed": 11}"#,
        )
        .expect("valid verify config")
    }

    #[test]
    fn randomized_sweep_is_clean_and_deterministic() {
        let cfg = small_config();
        let a = run_verification(&cfg).expect("sweep runs");
        assert_eq!(a.rows.len(), 140);
        assert_eq!(a.violations, 0, "{}", summarize(&a));
        require_clean(&a).expect("clean sweep");

        let b = run_verification(&cfg).expect("second sweep");
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.kind, y.kind);
            assert_eq!(x.lhs.to_bits(), y.lhs.to_bits());
            assert_eq!(x.rhs.to_bits(), y.rhs.to_bits());
        }
    }

    #[test]
    fn csv_has_one_line_per_instance() {
        let cfg = small_config();
        let report = run_verification(&cfg).expect("sweep runs");
        let dir = tempfile::tempdir().expect("tempdir");
        write_verify_csv(&report, dir.path()).expect("write");
        let text = std::fs::read_to_string(dir.path().join("verify.csv")).expect("read");
        assert_eq!(text.lines().count(), 1 + 140);
        assert!(text.starts_with("kind,index,dim,len,scheme"));
    }
}
