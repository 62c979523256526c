//! Acceptance suite: ten end-to-end checks covering the bound machinery,
//! the factorial schedule, the audit ledger, both convergence regimes, the
//! scalar oracle, the persistently exciting baseline, and output
//! determinism. Each test prints one summary line on success; tolerances
//! and runtime budgets are pinned next to the assertions.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sg_lab::schedule::{factorial_schedule, max_step_ratio, minimality_certificates, ratio_certificates};
use sg_lab::transition::TransitionTracker;
use sg_lab_cli::config::{ExperimentConfig, VerifyConfig};
use sg_lab_cli::experiment::{run_experiment, write_outputs, RunOptions};
use sg_lab_cli::verify::run_verification;

fn parse_experiment(text: &str) -> ExperimentConfig {
    let cfg: ExperimentConfig = serde_json::from_str(text).expect("config parses");
    cfg.validate().expect("config validates");
    cfg
}

fn parse_verify(text: &str) -> VerifyConfig {
    let cfg: VerifyConfig = serde_json::from_str(text).expect("verify config parses");
    cfg.validate().expect("verify config validates");
    cfg
}

fn assert_budget(start: Instant, budget: Duration, what: &str) -> Duration {
    let elapsed = start.elapsed();
    assert!(
        elapsed < budget,
        "{what} took {elapsed:?}, budget {budget:?}"
    );
    elapsed
}

#[test]
fn acceptance_01_window_bounds_dominate_exact_norms() {
    let start = Instant::now();
    let cfg = parse_verify(
        r#"{"instances": 1000, "certificates": 0, "estimates": 0,
            "max_dim": 5, "max_len": 200, "seed": 20240101}"#,
    );
    let report = run_verification(&cfg).expect("sweep runs");
    assert_eq!(report.rows.len(), 1000);
    // Exact |Phi|^2 <= bound + 1e-9 on every randomized window, both
    // weight schemes.
    assert_eq!(report.violations, 0, "window-bound violations");
    let elapsed = assert_budget(start, Duration::from_secs(30), "window-bound sweep");
    println!(
        "acceptance 01 window bounds: pass (1000 instances, dims 1..=5, lens <= 200, {:.2?})",
        elapsed
    );
}

#[test]
fn acceptance_02_certificate_chain_replays() {
    let start = Instant::now();
    let cfg = parse_verify(
        r#"{"instances": 0, "certificates": 500, "estimates": 0,
            "max_dim": 5, "cert_max_len": 60, "seed": 20240202}"#,
    );
    let report = run_verification(&cfg).expect("sweep runs");
    assert_eq!(report.rows.len(), 500);
    // Reconstruction, quadratic-form identity, and the overlap ceiling each
    // verified to 1e-10 inside the certificate report.
    assert_eq!(report.violations, 0, "certificate violations");
    let elapsed = assert_budget(start, Duration::from_secs(30), "certificate sweep");
    println!(
        "acceptance 02 certificate chain: pass (500 replays at 1e-10, {:.2?})",
        elapsed
    );
}

#[test]
fn acceptance_03_closed_form_overlap_estimate() {
    let start = Instant::now();
    let cfg = parse_verify(
        r#"{"instances": 0, "certificates": 0, "estimates": 500,
            "max_dim": 5, "max_len": 200, "seed": 20240303}"#,
    );
    let report = run_verification(&cfg).expect("sweep runs");
    assert_eq!(report.rows.len(), 500);
    // Energy-weighted overlap sum <= its logarithmic closed form, 1e-9
    // relative.
    assert_eq!(report.violations, 0, "overlap-estimate violations");
    let elapsed = assert_budget(start, Duration::from_secs(30), "overlap-estimate sweep");
    println!(
        "acceptance 03 overlap estimate: pass (500 instances at 1e-9 relative, {:.2?})",
        elapsed
    );
}

#[test]
fn acceptance_04_unit_energy_schedule_hits_factorials() {
    let start = Instant::now();
    let horizon = 100_000usize;
    let rs: Vec<f64> = (0..=horizon).map(|n| (n + 1) as f64).collect();
    let schedule = factorial_schedule(&rs).expect("schedule exists");

    // Every reachable boundary is exactly t_k = k! - 1 on the unit-energy
    // curve r_n = n + 1.
    let mut expected = Vec::new();
    let mut fact = 1u64;
    let mut k = 1u64;
    while fact <= (horizon as u64) + 1 {
        expected.push((fact - 1) as usize);
        k += 1;
        fact *= k;
    }
    assert_eq!(schedule.t, expected, "boundaries are k! - 1");
    assert_eq!(schedule.max_block(), 8);

    let jump = max_step_ratio(&rs).expect("jump constant");
    let ratio = ratio_certificates(&rs, &schedule, jump).expect("ratio certificates");
    assert!(!ratio.is_empty());
    assert!(ratio.iter().all(|c| c.pass), "all ratio certificates pass");
    let minimal = minimality_certificates(&rs, &schedule).expect("minimality certificates");
    assert!(minimal.iter().all(|c| c.pass), "all boundaries are first crossings");

    let elapsed = assert_budget(start, Duration::from_secs(5), "schedule check");
    println!(
        "acceptance 04 factorial schedule: pass (t_k = k!-1 through k = {}, {:.2?})",
        schedule.max_block(),
        elapsed
    );
}

#[test]
fn acceptance_05_audit_ledger_and_term_floor() {
    let start = Instant::now();
    let cfg = parse_experiment(
        r#"{"mode": "direct", "dim": 2, "alpha": 0.5, "horizon": 100000,
            "seed": 5, "label": "ledger-run"}"#,
    );
    let art = run_experiment(&cfg, &RunOptions::default()).expect("run succeeds");

    let k_max = art
        .schedule
        .as_ref()
        .expect("schedule exists")
        .max_block();
    assert!(k_max >= 6, "horizon reaches at least block 6, got {k_max}");
    // Six audit rows per block from k = 3 on, every one passing.
    assert_eq!(art.ledger.len(), 6 * (k_max - 2));
    for row in &art.ledger {
        assert!(
            row.pass,
            "ledger row {} failed at block {}: lhs {} rhs {}",
            row.name, row.block, row.lhs, row.rhs
        );
    }

    // Measured criterion terms stay above a fitted c / (k^0.5 (log k)^1.5)
    // floor over k in [5, K]: the fitted constant must come out positive.
    let general = art.general.as_ref().expect("measured series");
    let mut fitted_c = f64::INFINITY;
    let mut fitted_over = 0usize;
    for term in &general.terms {
        if term.k < 5 {
            continue;
        }
        let weight = (term.k as f64).sqrt() * (term.k as f64).ln().powf(1.5);
        fitted_c = fitted_c.min(term.term * weight);
        fitted_over += 1;
    }
    assert!(fitted_over >= 3, "enough blocks in [5, K]");
    assert!(
        fitted_c > 0.0,
        "fitted floor constant must be positive, got {fitted_c}"
    );

    let elapsed = assert_budget(start, Duration::from_secs(120), "ledger run");
    println!(
        "acceptance 05 audit ledger: pass ({} rows across blocks 3..={k_max}, fitted c = {fitted_c:.4}, {:.2?})",
        art.ledger.len(),
        elapsed
    );
}

#[test]
fn acceptance_06_convergence_regime_across_benign_exponents() {
    let start = Instant::now();
    let alphas = [0.0, 0.3, 0.5, 0.8];
    let mut norm_report = Vec::new();
    let mut seed_report = Vec::new();

    for &alpha in &alphas {
        // Deterministic run: the product norm must shrink monotonically and
        // end below 0.2.
        let cfg = parse_experiment(&format!(
            r#"{{"mode": "direct", "dim": 2, "alpha": {alpha}, "horizon": 100000}}"#
        ));
        let art = run_experiment(&cfg, &RunOptions::default()).expect("run succeeds");
        let t = art.summary.transition.as_ref().expect("tracked run");
        assert!(t.monotone, "alpha {alpha}: norm increased along the run");
        assert!(
            t.final_norm < 0.2,
            "alpha {alpha}: final norm {} not below 0.2",
            t.final_norm
        );
        norm_report.push(format!("{alpha}:{:.3}", t.final_norm));

        // Noisy replicas: bounded noise with variance 0.01; the estimation
        // error must end below 0.1 in at least 18 of 20 seeds.
        let noisy = parse_experiment(&format!(
            r#"{{"mode": "direct", "dim": 2, "alpha": {alpha}, "horizon": 100000,
                "noise": {{"kind": "bounded", "c0": 0.01}}}}"#
        ));
        let mut below = 0;
        for seed in 1..=20u64 {
            let mut opts = RunOptions::light();
            opts.seed = Some(seed);
            let art = run_experiment(&noisy, &opts).expect("noisy run succeeds");
            if art.summary.final_estimation_error < 0.1 {
                below += 1;
            }
        }
        assert!(
            below >= 18,
            "alpha {alpha}: only {below}/20 noisy seeds ended below 0.1"
        );
        seed_report.push(format!("{alpha}:{below}/20"));
    }

    let elapsed = assert_budget(start, Duration::from_secs(300), "convergence regime");
    println!(
        "acceptance 06 convergence regime: pass (final norms {}; noisy seeds {}; {:.2?})",
        norm_report.join(" "),
        seed_report.join(" "),
        elapsed
    );
}

#[test]
fn acceptance_07_divergence_regime_plateaus() {
    let start = Instant::now();
    let cfg = parse_experiment(
        r#"{"mode": "direct", "dim": 2, "alpha": 2.0, "horizon": 1000000,
            "seed": 7, "label": "starved-run"}"#,
    );
    let art = run_experiment(&cfg, &RunOptions::default()).expect("run succeeds");

    // The certified partial sums plateau: the last increment is below 1e-4.
    let crit = art.summary.criterion.as_ref().expect("criterion summary");
    let last_inc = crit
        .certified_last_increment
        .expect("certified series present");
    assert!(
        last_inc < 1e-4,
        "certified series still climbing: last increment {last_inc}"
    );

    // The measured increments decay down the tail of the schedule.
    let log_gap = art.log_gap.as_ref().expect("measured series");
    let tail: Vec<f64> = log_gap
        .terms
        .iter()
        .filter(|t| t.k >= 6)
        .map(|t| t.term)
        .collect();
    assert!(tail.len() >= 3);
    for pair in tail.windows(2) {
        assert!(
            pair[1] < pair[0],
            "measured increments not decreasing along the tail: {tail:?}"
        );
    }

    // The product norm stalls: still above half its value at step 1000.
    let t = art.summary.transition.as_ref().expect("tracked run");
    assert_eq!(t.checkpoint_step, 1000);
    assert!(
        t.final_norm >= 0.5 * t.checkpoint_norm,
        "norm kept shrinking: final {} vs checkpoint {}",
        t.final_norm,
        t.checkpoint_norm
    );

    let elapsed = assert_budget(start, Duration::from_secs(300), "divergence run");
    println!(
        "acceptance 07 divergence regime: pass (certified increment {last_inc:.1e}, final norm {:.3} vs checkpoint {:.3}, {:.2?})",
        t.final_norm, t.checkpoint_norm, elapsed
    );
}

#[test]
fn acceptance_08_scalar_product_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for case in 0..100 {
        let len = rng.random_range(50..=200);
        let mut r = 1.0f64;
        let mut tracker = TransitionTracker::new(1).expect("tracker");
        tracker.add_anchor(0).expect("anchor");
        let mut product = 1.0f64;
        for _ in 0..len {
            let phi = rng.random_range(-1.5..=1.5);
            r += phi * phi;
            product *= 1.0 - phi * phi / r;
            tracker.step(&[phi], r).expect("contraction step");
        }
        let tracked = tracker.exact_norm(0).expect("norm");
        assert!(
            (tracked - product.abs()).abs() <= 1e-12,
            "case {case}: tracked {tracked} vs oracle {product}"
        );
    }
    let elapsed = assert_budget(start, Duration::from_secs(5), "scalar oracle");
    println!(
        "acceptance 08 scalar oracle: pass (100 sequences matched to 1e-12, {:.2?})",
        elapsed
    );
}

#[test]
fn acceptance_09_persistently_exciting_baseline() {
    let start = Instant::now();
    // Scalar channel, iid sign regressors, true parameter 2, noise
    // variance 0.01.
    let cfg = parse_experiment(
        r#"{"mode": "direct", "dim": 1, "alpha": 0.0, "horizon": 100000,
            "excitation": "persistently_exciting", "truth": [2.0],
            "noise": {"kind": "gaussian", "c0": 0.01}}"#,
    );
    let mut below = 0;
    let mut worst = 0.0f64;
    for seed in 1..=20u64 {
        let mut opts = RunOptions::light();
        opts.seed = Some(seed);
        let art = run_experiment(&cfg, &opts).expect("baseline run succeeds");
        let err = art.summary.final_estimation_error;
        worst = worst.max(err);
        if err < 0.05 {
            below += 1;
        }
    }
    assert!(below >= 18, "only {below}/20 seeds ended below 0.05");
    let elapsed = assert_budget(start, Duration::from_secs(60), "baseline sweep");
    println!(
        "acceptance 09 persistently exciting baseline: pass ({below}/20 seeds below 0.05, worst {worst:.2e}, {:.2?})",
        elapsed
    );
}

#[test]
fn acceptance_10_reruns_write_identical_files() {
    let start = Instant::now();
    let cfg = parse_experiment(
        r#"{"mode": "direct", "dim": 2, "alpha": 0.5, "horizon": 2000,
            "seed": 10, "noise": {"kind": "gaussian", "c0": 0.02},
            "label": "determinism"}"#,
    );
    let dirs = [
        tempfile::tempdir().expect("tempdir"),
        tempfile::tempdir().expect("tempdir"),
    ];
    let mut listings = Vec::new();
    for dir in &dirs {
        let mut art = run_experiment(&cfg, &RunOptions::default()).expect("run succeeds");
        let outputs = write_outputs(&mut art, dir.path(), true).expect("write outputs");
        listings.push(outputs);
    }
    assert_eq!(listings[0], listings[1], "file listings differ");

    let mut compared = 0;
    for name in &listings[0] {
        // summary.json carries wall-clock time; every data file must be
        // byte-identical.
        if name == "summary.json" {
            continue;
        }
        let a = std::fs::read(dirs[0].path().join(name)).expect("read first");
        let b = std::fs::read(dirs[1].path().join(name)).expect("read second");
        assert_eq!(a, b, "{name} differs between reruns");
        compared += 1;
    }
    assert!(compared >= 8, "expected a full artifact set, compared {compared}");
    let elapsed = assert_budget(start, Duration::from_secs(60), "determinism check");
    println!(
        "acceptance 10 determinism: pass ({compared} files byte-identical across reruns, {:.2?})",
        elapsed
    );
}
