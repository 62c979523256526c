//! One experiment, end to end: simulate the channel, run the gradient
//! recursion, and audit everything the run claims.
//!
//! A run has three phases.
//!
//! 1. **Core recursion** — generate data (a designed regressor sequence or
//!    a simulated ARMAX plant), drive the estimator, and record the global
//!    step-indexed arrays `phis[n] = phi_n`, `rs[n] = r_n` (step 0 is the
//!    silent zero regressor with unit normalizer).
//! 2. **Spectral pass** — one sweep over those arrays maintaining the
//!    deflated transition products (per-step norm from step 0, one anchor
//!    per block boundary), the raw information matrix (boundary snapshots,
//!    condition-number profile, measured conditioning envelope), and the
//!    exact norm of every completed block.
//! 3. **Block analysis** — factorial schedule certificates, the measured
//!    and certified divergence-criterion series, per-block window bounds
//!    against the exact norms captured in phase 2, and the audit ledger
//!    tying the certified series to the measured spectra.
//!
//! `run_experiment` computes everything in memory; `write_outputs` turns
//! the artifacts into CSV files, a JSON summary, and plot scripts.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use sg_lab::bounds::{
    self, criterion_partial_sums, certified_partial_sums, ledger_rows, BlockBoundReport,
    BlockSnapshot, CriterionSeries, CriterionVariant, LedgerRow, WeightScheme,
};
use sg_lab::estimator::{noise_tail_diagnostic, SgEstimator, StepSnapshot, MIN_DIAGNOSTIC_STEPS};
use sg_lab::excitation::{design_regressors, ExcitationMode, ExcitationSpec};
use sg_lab::model::{
    generate_noise, simulate_step, NoiseKind, Orders, SimulationTrace,
};
use sg_lab::schedule::{
    factorial_schedule, max_step_ratio, minimality_certificates, ratio_certificates,
    BlockSchedule, MinimalityCert, RatioCert,
};
use sg_lab::spectral::{condition_number, eig_extremes, Matrix, SymmetricMatrix};
use sg_lab::transition::TransitionTracker;
use sg_lab::Error;

use crate::config::{
    CliError, CliResult, ExcitationSource, ExperimentConfig, NoiseConfig, RunMode,
};

/// Absolute tolerance on the per-step norm monotonicity check.
const MONOTONE_TOL: f64 = 1e-12;

/// Step at which the early product norm is recorded for plateau comparisons
/// (clamped to the horizon for short runs).
const CHECKPOINT_STEP: usize = 1000;

/// Longest run for which the weighted-noise tail diagnostic is evaluated;
/// it stores one regressor snapshot per step.
const TAIL_DIAGNOSTIC_MAX_STEPS: usize = 200_000;

// ======================================================================
// Options and artifacts
// ======================================================================

/// What a run should compute beyond the core recursion.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides the config seed when set.
    pub seed: Option<u64>,
    /// Overrides the sampling stride when set.
    pub stride: Option<usize>,
    /// Maintain transition products (per-step norm, block exact norms).
    pub track_transition: bool,
    /// Run the schedule / bound / criterion / ledger analysis.
    pub analyze_blocks: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: None,
            stride: None,
            track_transition: true,
            analyze_blocks: true,
        }
    }
}

impl RunOptions {
    /// Core recursion only — what seed sweeps need.
    pub fn light() -> Self {
        Self {
            seed: None,
            stride: None,
            track_transition: false,
            analyze_blocks: false,
        }
    }
}

/// Sampled raw data row.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub n: usize,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

/// Sampled estimator state.
#[derive(Debug, Clone)]
pub struct EstimatorRow {
    pub n: usize,
    pub r: f64,
    pub error: f64,
    pub residual_norm: f64,
}

/// Sampled transition-product norm from step 0.
#[derive(Debug, Clone, Copy)]
pub struct NormRow {
    pub n: usize,
    pub r: f64,
    pub norm: f64,
}

/// Sampled conditioning of the raw information matrix.
#[derive(Debug, Clone, Copy)]
pub struct KappaRow {
    pub n: usize,
    pub r: f64,
    pub kappa: f64,
    pub ratio: f64,
}

/// Transition-product facts of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionSummary {
    /// `|Phi(N, 0)|` at the horizon.
    pub final_norm: f64,
    /// Step the early checkpoint was taken at.
    pub checkpoint_step: usize,
    /// `|Phi(checkpoint, 0)|`.
    pub checkpoint_norm: f64,
    /// Whether the norm never increased (within `1e-12`) step over step.
    pub monotone: bool,
}

/// Measured conditioning envelope of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditioningSummary {
    /// Largest finite `kappa / (log r)^alpha` over samples with `r >= e`,
    /// including every block-end information matrix.
    pub envelope_m: Option<f64>,
    /// Number of samples the envelope was measured over.
    pub samples: usize,
}

/// Factorial-schedule facts of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleSummary {
    /// Largest block index with a boundary.
    pub blocks: usize,
    /// Boundaries `t_1 ..= t_K`.
    pub boundaries: Vec<usize>,
    /// Measured one-step energy jump constant.
    pub jump_l: f64,
    /// All boundary-ratio certificates passed.
    pub ratio_pass: bool,
    /// All first-crossing certificates passed.
    pub minimality_pass: bool,
}

/// Final divergence-criterion partial sums.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionSummary {
    pub general_final: Option<f64>,
    pub log_gap_final: Option<f64>,
    pub certified_final: Option<f64>,
    /// Last term of the certified series (its increment at `K`).
    pub certified_last_increment: Option<f64>,
}

/// Everything a run reports, serialized as `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub mode: String,
    pub dim: usize,
    pub alpha: f64,
    pub horizon: usize,
    pub seed: u64,
    pub stride: usize,
    pub noise: NoiseConfig,
    pub final_r: f64,
    pub final_estimation_error: f64,
    pub final_residual_norm: f64,
    /// Fitted decay exponent of the weighted-noise tail (when measured).
    pub noise_tail_decay: Option<f64>,
    pub transition: Option<TransitionSummary>,
    pub conditioning: Option<ConditioningSummary>,
    pub schedule: Option<ScheduleSummary>,
    pub criterion: Option<CriterionSummary>,
    /// All audit-ledger rows passed (absent when the ledger was not built).
    pub ledger_all_pass: Option<bool>,
    pub outputs: Vec<String>,
    pub wall_time_ms: u64,
}

/// In-memory results of one run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    /// Global step-indexed regressors, `phis[0]` the silent zero step.
    pub phis: Vec<Vec<f64>>,
    /// Matching energy normalizers, `rs[0] = 1`.
    pub rs: Vec<f64>,
    pub trace_rows: Vec<TraceRow>,
    pub estimator_rows: Vec<EstimatorRow>,
    pub norm_rows: Vec<NormRow>,
    pub kappa_rows: Vec<KappaRow>,
    pub schedule: Option<BlockSchedule>,
    pub ratio_certs: Vec<RatioCert>,
    pub minimality_certs: Vec<MinimalityCert>,
    /// `(block index, window bound report)` per nonempty block.
    pub block_reports: Vec<(usize, BlockBoundReport)>,
    pub general: Option<CriterionSeries>,
    pub log_gap: Option<CriterionSeries>,
    pub certified: Option<CriterionSeries>,
    pub ledger: Vec<LedgerRow>,
}

// ======================================================================
// Core recursion
// ======================================================================

struct CoreRun {
    phis: Vec<Vec<f64>>,
    rs: Vec<f64>,
    trace_rows: Vec<TraceRow>,
    estimator_rows: Vec<EstimatorRow>,
    final_error: f64,
    final_residual_norm: f64,
    noise_tail_decay: Option<f64>,
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Persistently exciting baseline: every component carries a random sign
/// and the same share of the step energy, so the information matrix is
/// well conditioned from the first steps on.
fn pe_regressors<R: Rng>(
    dim: usize,
    step_energy: f64,
    horizon: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let amp = (step_energy / dim as f64).sqrt();
    (0..horizon)
        .map(|_| {
            (0..dim)
                .map(|_| if rng.random::<bool>() { amp } else { -amp })
                .collect()
        })
        .collect()
}

/// Whether the tail diagnostic is worth collecting snapshots for.
fn wants_tail_diagnostic(kind: NoiseKind, horizon: usize) -> bool {
    kind != NoiseKind::Zero
        && horizon + 1 >= MIN_DIAGNOSTIC_STEPS
        && horizon <= TAIL_DIAGNOSTIC_MAX_STEPS
}

/// Linear regression channel: the designed vectors are the regressors and
/// the observation is `y_{n+1} = truth^T phi_n + w_{n+1}`.
fn run_direct(cfg: &ExperimentConfig, seed: u64, stride: usize) -> CliResult<CoreRun> {
    let dim = cfg.dim.expect("validated: direct mode has dim");
    let truth = cfg.truth_vector(dim);
    let truth_block = Matrix::new(dim, 1, truth.clone()).map_err(CliError::from)?;
    let h = cfg.horizon;

    let mut sign_rng = ChaCha8Rng::seed_from_u64(seed);
    let design = match cfg.excitation {
        ExcitationSource::Designed => {
            let spec = ExcitationSpec::new(
                dim,
                cfg.alpha,
                cfg.step_energy,
                h,
                ExcitationMode::DirectRegressor,
            )?;
            design_regressors(&spec, &mut sign_rng)?
        }
        ExcitationSource::PersistentlyExciting => {
            pe_regressors(dim, cfg.step_energy, h, &mut sign_rng)
        }
    };

    let noise = cfg.noise.model(seed.wrapping_add(1))?;
    let mut noise_rng = noise.rng();
    let collect_tail = wants_tail_diagnostic(noise.kind, h);

    // The estimator sees the designed vectors as its inputs: with a single
    // input lag and no output or residual lags the regressor is exactly the
    // current input, so the library recursion runs unmodified.
    let orders = Orders {
        d: 1,
        l: dim,
        p: 0,
        q: 1,
        r: 0,
    };
    let mut est = SgEstimator::new(orders)?;

    let mut phis = Vec::with_capacity(h + 1);
    let mut rs = Vec::with_capacity(h + 1);
    let mut trace_rows = Vec::new();
    let mut estimator_rows = Vec::new();
    let mut snapshots: Vec<StepSnapshot> = Vec::new();
    let mut eps_next: Vec<Vec<f64>> = Vec::new();
    let zero = vec![0.0; dim];
    let mut final_residual = 0.0;

    for n in 0..=h {
        let snap = est.snapshot();
        debug_assert_eq!(snap.n, n);
        let w = generate_noise(&noise, 1, snap.r, &mut noise_rng)?[0];
        let y: f64 = truth
            .iter()
            .zip(&snap.phi)
            .map(|(t, p)| t * p)
            .sum::<f64>()
            + w;
        let u_next = if n < h { design[n].as_slice() } else { &zero };
        let residual = est.sg_update(&[y], u_next)?;
        final_residual = residual[0].abs();

        if n % stride == 0 || n == h {
            estimator_rows.push(EstimatorRow {
                n,
                r: snap.r,
                error: est.estimation_error(&truth_block)?,
                residual_norm: final_residual,
            });
            trace_rows.push(TraceRow {
                n: n + 1,
                y: vec![y],
                u: Vec::new(),
                w: vec![w],
            });
        }
        if collect_tail {
            eps_next.push(vec![w]);
        }
        phis.push(snap.phi.clone());
        rs.push(snap.r);
        if collect_tail {
            snapshots.push(snap);
        }
    }

    let noise_tail_decay = if collect_tail {
        noise_tail_diagnostic(&snapshots, &eps_next)
            .ok()
            .and_then(|d| d.delta_fit)
    } else {
        None
    };
    let final_error = est.estimation_error(&truth_block)?;
    Ok(CoreRun {
        phis,
        rs,
        trace_rows,
        estimator_rows,
        final_error,
        final_residual_norm: final_residual,
        noise_tail_decay,
    })
}

/// Simulated plant: the estimator forms regressors from outputs, inputs,
/// and its own residuals while the trace is generated alongside.
fn run_armax(cfg: &ExperimentConfig, seed: u64, stride: usize) -> CliResult<CoreRun> {
    let sys = cfg
        .system
        .as_ref()
        .expect("validated: armax mode has a system")
        .build()?;
    let orders = sys.orders();
    let truth = sys.stacked_parameters();
    let h = cfg.horizon;

    let amplitude = cfg.input.as_ref().map_or(1.0, |i| i.amplitude);
    let mut input_rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = cfg.noise.model(seed.wrapping_add(1))?;
    let mut noise_rng = noise.rng();
    let collect_tail = wants_tail_diagnostic(noise.kind, h);

    let mut est = SgEstimator::new(orders)?;
    let mut trace = SimulationTrace::new(orders.d, orders.l);

    let mut phis = Vec::with_capacity(h + 1);
    let mut rs = Vec::with_capacity(h + 1);
    let mut trace_rows = Vec::new();
    let mut estimator_rows = Vec::new();
    let mut snapshots: Vec<StepSnapshot> = Vec::new();
    let mut eps_next: Vec<Vec<f64>> = Vec::new();
    let mut final_residual = 0.0;

    for n in 0..=h {
        let snap = est.snapshot();
        let w_next = generate_noise(&noise, orders.d, snap.r, &mut noise_rng)?;
        let u_next: Vec<f64> = (0..orders.l)
            .map(|_| input_rng.random_range(-amplitude..=amplitude))
            .collect();
        let y_next = simulate_step(&sys, &mut trace, &u_next, &w_next)?;
        let residual = est.sg_update(&y_next, &u_next)?;
        final_residual = l2_norm(&residual);

        if n % stride == 0 || n == h {
            estimator_rows.push(EstimatorRow {
                n,
                r: snap.r,
                error: est.estimation_error(&truth)?,
                residual_norm: final_residual,
            });
            trace_rows.push(TraceRow {
                n: n + 1,
                y: y_next,
                u: u_next,
                w: w_next,
            });
        }
        if collect_tail {
            eps_next.push(trace.eps_at((n + 1) as isize).to_vec());
        }
        phis.push(snap.phi.clone());
        rs.push(snap.r);
        if collect_tail {
            snapshots.push(snap);
        }
    }

    let noise_tail_decay = if collect_tail {
        noise_tail_diagnostic(&snapshots, &eps_next)
            .ok()
            .and_then(|d| d.delta_fit)
    } else {
        None
    };
    let final_error = est.estimation_error(&truth)?;
    Ok(CoreRun {
        phis,
        rs,
        trace_rows,
        estimator_rows,
        final_error,
        final_residual_norm: final_residual,
        noise_tail_decay,
    })
}

// ======================================================================
// Spectral pass
// ======================================================================

/// Per-boundary snapshot of the raw information matrix `F(t_k)`.
struct BoundaryInfo {
    step: usize,
    r_before: f64,
    matrix: SymmetricMatrix,
    eigs: (f64, f64),
    trace: f64,
}

struct PassData {
    norm_rows: Vec<NormRow>,
    kappa_rows: Vec<KappaRow>,
    /// Exact `|Phi(t_k, t_{k-1})|^2` per completed block.
    block_exact: BTreeMap<usize, f64>,
    /// `k -> F(t_k)` snapshot.
    boundaries: BTreeMap<usize, BoundaryInfo>,
    transition: Option<TransitionSummary>,
    envelope_m: Option<f64>,
    envelope_samples: usize,
}

/// Normalized conditioning ratio `kappa / (log r)^alpha`.
fn kappa_ratio(kappa: f64, r: f64, alpha: f64) -> f64 {
    if r <= 1.0 {
        return f64::INFINITY;
    }
    kappa / r.ln().powf(alpha)
}

/// One sweep over the recorded steps maintaining the transition products
/// and the information matrix.
fn spectral_pass(
    phis: &[Vec<f64>],
    rs: &[f64],
    boundary_steps: &[usize],
    alpha: f64,
    stride: usize,
    track: bool,
) -> CliResult<PassData> {
    let dim = phis[0].len();
    let last = phis.len() - 1;
    let checkpoint_step = CHECKPOINT_STEP.min(last);

    let mut tracker = if track {
        let mut t = TransitionTracker::new(dim)?;
        t.add_anchor(0)?;
        Some(t)
    } else {
        None
    };
    let mut s = SymmetricMatrix::zeros(dim);
    let mut norm_rows = Vec::new();
    let mut kappa_rows = Vec::new();
    let mut block_exact = BTreeMap::new();
    let mut boundaries = BTreeMap::new();
    let mut prev_norm = 1.0_f64;
    let mut monotone = true;
    let mut checkpoint_norm = 1.0_f64;
    let mut envelope_m: Option<f64> = None;
    let mut envelope_samples = 0usize;
    let mut bp = 0usize;

    for n in 0..=last {
        // Block boundaries arriving at this step: snapshot F(t_k) before
        // the step's own regressor enters, capture the finished block's
        // exact product norm, and open the next block's anchor.
        while bp < boundary_steps.len() && boundary_steps[bp] == n {
            let k = bp + 1;
            let eigs = eig_extremes(&s)?;
            boundaries.insert(
                k,
                BoundaryInfo {
                    step: n,
                    r_before: bounds::r_before(rs, n),
                    matrix: s.clone(),
                    eigs,
                    trace: s.trace(),
                },
            );
            if let Some(t) = tracker.as_mut() {
                if k >= 2 {
                    let norm = t.exact_norm(boundary_steps[bp - 1])?;
                    block_exact.insert(k, norm * norm);
                }
                t.add_anchor(n)?;
            }
            bp += 1;
        }

        if let Some(t) = tracker.as_mut() {
            t.step(&phis[n], rs[n])?;
            let norm = t.exact_norm(0)?;
            if norm > prev_norm + MONOTONE_TOL {
                monotone = false;
            }
            prev_norm = norm;
            if n == checkpoint_step {
                checkpoint_norm = norm;
            }
            if n % stride == 0 || n == last {
                norm_rows.push(NormRow {
                    n,
                    r: rs[n],
                    norm,
                });
            }
        }

        s.add_outer(&phis[n], 1.0);
        if n % stride == 0 || n == last {
            let kappa = match condition_number(&s) {
                Ok(k) => k,
                Err(Error::SingularMatrix(_)) => f64::INFINITY,
                Err(e) => return Err(e.into()),
            };
            let ratio = kappa_ratio(kappa, rs[n], alpha);
            if rs[n] >= std::f64::consts::E && ratio.is_finite() {
                envelope_m = Some(envelope_m.map_or(ratio, |m| m.max(ratio)));
                envelope_samples += 1;
            }
            kappa_rows.push(KappaRow {
                n,
                r: rs[n],
                kappa,
                ratio,
            });
        }
    }

    // Every block-end information matrix joins the envelope measurement, so
    // the certified floor `lambda_min >= (r - 1) / (dim M (log r)^alpha)`
    // holds at the points the certified series uses it.
    for info in boundaries.values() {
        if info.r_before < std::f64::consts::E {
            continue;
        }
        let kappa = match condition_number(&info.matrix) {
            Ok(k) => k,
            Err(Error::SingularMatrix(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let ratio = kappa_ratio(kappa, info.r_before, alpha);
        if ratio.is_finite() {
            envelope_m = Some(envelope_m.map_or(ratio, |m| m.max(ratio)));
            envelope_samples += 1;
        }
    }

    let transition = tracker.is_some().then_some(TransitionSummary {
        final_norm: prev_norm,
        checkpoint_step,
        checkpoint_norm,
        monotone,
    });
    Ok(PassData {
        norm_rows,
        kappa_rows,
        block_exact,
        boundaries,
        transition,
        envelope_m,
        envelope_samples,
    })
}

// ======================================================================
// Run driver
// ======================================================================

/// Runs one experiment and returns everything it measured.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<RunArtifacts> {
    let start = Instant::now();
    let seed = opts.seed.unwrap_or(cfg.seed);
    let stride = opts.stride.unwrap_or_else(|| cfg.effective_stride());
    if stride == 0 {
        return Err(CliError::Config("stride must be positive".into()));
    }

    let core = match cfg.mode {
        RunMode::Direct => run_direct(cfg, seed, stride)?,
        RunMode::Armax => run_armax(cfg, seed, stride)?,
    };
    let dim = core.phis[0].len();

    let schedule = match factorial_schedule(&core.rs) {
        Ok(s) => Some(s),
        Err(Error::InsufficientHorizon(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let boundary_steps: Vec<usize> = schedule.as_ref().map(|s| s.t.clone()).unwrap_or_default();

    let need_pass = opts.track_transition || opts.analyze_blocks;
    let pass = if need_pass {
        spectral_pass(
            &core.phis,
            &core.rs,
            &boundary_steps,
            cfg.alpha,
            stride,
            opts.track_transition,
        )?
    } else {
        PassData {
            norm_rows: Vec::new(),
            kappa_rows: Vec::new(),
            block_exact: BTreeMap::new(),
            boundaries: BTreeMap::new(),
            transition: None,
            envelope_m: None,
            envelope_samples: 0,
        }
    };

    let mut ratio_certs = Vec::new();
    let mut minimality_certs = Vec::new();
    let mut block_reports = Vec::new();
    let mut general = None;
    let mut log_gap = None;
    let mut certified = None;
    let mut ledger = Vec::new();
    let mut schedule_summary = None;

    if opts.analyze_blocks {
        if let Some(sched) = schedule.as_ref() {
            let jump_l = max_step_ratio(&core.rs)?;
            ratio_certs = ratio_certificates(&core.rs, sched, jump_l)?;
            minimality_certs = minimality_certificates(&core.rs, sched)?;
            schedule_summary = Some(ScheduleSummary {
                blocks: sched.max_block(),
                boundaries: sched.t.clone(),
                jump_l,
                ratio_pass: ratio_certs.iter().all(|c| c.pass),
                minimality_pass: minimality_certs.iter().all(|c| c.pass),
            });

            if sched.max_block() >= 2 {
                general = Some(criterion_partial_sums(
                    &core.phis,
                    &core.rs,
                    sched,
                    &CriterionVariant::General(WeightScheme::RWeighted),
                )?);
                log_gap = Some(criterion_partial_sums(
                    &core.phis,
                    &core.rs,
                    sched,
                    &CriterionVariant::LogGap,
                )?);
                if let Some(m) = pass.envelope_m {
                    certified = Some(certified_partial_sums(
                        &core.rs,
                        sched,
                        dim,
                        m,
                        cfg.alpha,
                    )?);
                }

                for (k, win_start, win_end) in sched.blocks() {
                    if win_start == win_end {
                        continue;
                    }
                    let mut report = if opts.track_transition {
                        bounds::block_bound(
                            &core.phis,
                            &core.rs,
                            win_start,
                            win_end,
                            &WeightScheme::RWeighted,
                        )?
                    } else {
                        bounds::audited_block_bound(
                            &core.phis,
                            &core.rs,
                            win_start,
                            win_end,
                            &WeightScheme::RWeighted,
                        )?
                    };
                    if let Some(&exact) = pass.block_exact.get(&k) {
                        report.exact_norm_sq = Some(exact);
                    }
                    block_reports.push((k, report));
                }

                if let Some(m) = pass.envelope_m {
                    for k in 3..=sched.max_block() {
                        let (Some(start), Some(end)) =
                            (pass.boundaries.get(&(k - 1)), pass.boundaries.get(&k))
                        else {
                            continue;
                        };
                        let diff = end.matrix.sub(&start.matrix)?;
                        let (block_lambda_min, _) = eig_extremes(&diff)?;
                        let snap = BlockSnapshot {
                            k,
                            r_start: start.r_before,
                            r_end: end.r_before,
                            start_eigs: start.eigs,
                            end_eigs: end.eigs,
                            start_trace: start.trace,
                            end_trace: end.trace,
                            block_lambda_min,
                        };
                        ledger.extend(ledger_rows(&snap, dim, m, cfg.alpha, jump_l)?);
                        let _ = (start.step, end.step);
                    }
                }
            }
        }
    }

    let criterion_summary = if general.is_some() || log_gap.is_some() || certified.is_some() {
        let last_sum = |s: &Option<CriterionSeries>| {
            s.as_ref().and_then(|s| s.partial_sums.last().copied())
        };
        Some(CriterionSummary {
            general_final: last_sum(&general),
            log_gap_final: last_sum(&log_gap),
            certified_final: last_sum(&certified),
            certified_last_increment: certified
                .as_ref()
                .and_then(|s| s.terms.last().map(|t| t.term)),
        })
    } else {
        None
    };
    let ledger_all_pass = if ledger.is_empty() {
        None
    } else {
        Some(ledger.iter().all(|row| row.pass))
    };
    let conditioning = if need_pass {
        Some(ConditioningSummary {
            envelope_m: pass.envelope_m,
            samples: pass.envelope_samples,
        })
    } else {
        None
    };

    let summary = RunSummary {
        label: cfg.label(),
        mode: cfg.mode.label().to_string(),
        dim,
        alpha: cfg.alpha,
        horizon: cfg.horizon,
        seed,
        stride,
        noise: cfg.noise.clone(),
        final_r: *core.rs.last().expect("nonempty energy curve"),
        final_estimation_error: core.final_error,
        final_residual_norm: core.final_residual_norm,
        noise_tail_decay: core.noise_tail_decay,
        transition: pass.transition,
        conditioning,
        schedule: schedule_summary,
        criterion: criterion_summary,
        ledger_all_pass,
        outputs: Vec::new(),
        wall_time_ms: start.elapsed().as_millis() as u64,
    };

    Ok(RunArtifacts {
        summary,
        phis: core.phis,
        rs: core.rs,
        trace_rows: core.trace_rows,
        estimator_rows: core.estimator_rows,
        norm_rows: pass.norm_rows,
        kappa_rows: pass.kappa_rows,
        schedule,
        ratio_certs,
        minimality_certs,
        block_reports,
        general,
        log_gap,
        certified,
        ledger,
    })
}

// ======================================================================
// Output writers
// ======================================================================

/// Writes one text line per item into `dir/name`.
pub fn write_lines_in(
    dir: &Path,
    name: &str,
    lines: impl IntoIterator<Item = String>,
) -> CliResult<()> {
    let mut file = BufWriter::new(fs::File::create(dir.join(name))?);
    for line in lines {
        writeln!(file, "{line}")?;
    }
    Ok(())
}

fn csv_cells(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes the run's CSV files, summary, and (optionally) plot scripts into
/// `dir`, records the file list in the summary, and returns it.
pub fn write_outputs(
    artifacts: &mut RunArtifacts,
    dir: &Path,
    emit_plots: bool,
) -> CliResult<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut outputs: Vec<String> = Vec::new();

    if !artifacts.trace_rows.is_empty() {
        let first = &artifacts.trace_rows[0];
        let mut header = String::from("n");
        for i in 0..first.y.len() {
            header.push_str(&format!(",y{i}"));
        }
        for i in 0..first.u.len() {
            header.push_str(&format!(",u{i}"));
        }
        for i in 0..first.w.len() {
            header.push_str(&format!(",w{i}"));
        }
        let lines = std::iter::once(header).chain(artifacts.trace_rows.iter().map(|row| {
            let mut cells = vec![row.n.to_string()];
            cells.extend(row.y.iter().map(|v| v.to_string()));
            cells.extend(row.u.iter().map(|v| v.to_string()));
            cells.extend(row.w.iter().map(|v| v.to_string()));
            cells.join(",")
        }));
        write_lines_in(dir, "trace.csv", lines)?;
        outputs.push("trace.csv".into());
    }

    if !artifacts.estimator_rows.is_empty() {
        let lines = std::iter::once("n,r,theta_err,residual_norm".to_string()).chain(
            artifacts.estimator_rows.iter().map(|row| {
                format!(
                    "{},{}",
                    row.n,
                    csv_cells(&[row.r, row.error, row.residual_norm])
                )
            }),
        );
        write_lines_in(dir, "estimator.csv", lines)?;
        outputs.push("estimator.csv".into());
    }

    if !artifacts.norm_rows.is_empty() {
        let lines = std::iter::once("n,r,norm".to_string()).chain(
            artifacts
                .norm_rows
                .iter()
                .map(|row| format!("{},{}", row.n, csv_cells(&[row.r, row.norm]))),
        );
        write_lines_in(dir, "phi_norms.csv", lines)?;
        outputs.push("phi_norms.csv".into());
    }

    if !artifacts.kappa_rows.is_empty() {
        let lines = std::iter::once("n,r,kappa,ratio".to_string()).chain(
            artifacts
                .kappa_rows
                .iter()
                .map(|row| format!("{},{}", row.n, csv_cells(&[row.r, row.kappa, row.ratio]))),
        );
        write_lines_in(dir, "kappa.csv", lines)?;
        outputs.push("kappa.csv".into());
    }

    if let Some(lines) = schedule_csv_lines(artifacts) {
        write_lines_in(dir, "schedule.csv", lines)?;
        outputs.push("schedule.csv".into());
    }

    if !artifacts.block_reports.is_empty() {
        let mut lines = vec![
            "k,start,end,lambda_min,max_mu,sum_mu_b,criterion_term,bound_sq,exact_norm_sq"
                .to_string(),
        ];
        for (k, rep) in &artifacts.block_reports {
            lines.push(format!(
                "{k},{},{},{}",
                rep.start,
                rep.end,
                csv_cells(&[
                    rep.lambda_min,
                    rep.max_mu,
                    rep.sum_mu_b,
                    rep.criterion_term,
                    rep.bound_sq,
                    rep.exact_norm_sq.unwrap_or(f64::NAN),
                ])
            ));
        }
        write_lines_in(dir, "block_bounds.csv", lines)?;
        outputs.push("block_bounds.csv".into());
    }

    if artifacts.general.is_some() || artifacts.log_gap.is_some() || artifacts.certified.is_some()
    {
        let term_cells = |series: &Option<CriterionSeries>, i: usize| -> (String, String) {
            match series {
                Some(s) if i < s.terms.len() => (
                    s.terms[i].term.to_string(),
                    s.partial_sums[i].to_string(),
                ),
                _ => (String::new(), String::new()),
            }
        };
        let skeleton = artifacts
            .general
            .as_ref()
            .or(artifacts.log_gap.as_ref())
            .or(artifacts.certified.as_ref())
            .expect("one series present");
        let mut lines = vec![
            "k,start,end,general_term,general_sum,log_gap_term,log_gap_sum,certified_term,certified_sum"
                .to_string(),
        ];
        for (i, term) in skeleton.terms.iter().enumerate() {
            let (gt, gs) = term_cells(&artifacts.general, i);
            let (lt, ls) = term_cells(&artifacts.log_gap, i);
            let (ct, cs) = term_cells(&artifacts.certified, i);
            lines.push(format!(
                "{},{},{},{gt},{gs},{lt},{ls},{ct},{cs}",
                term.k, term.start, term.end
            ));
        }
        write_lines_in(dir, "criterion.csv", lines)?;
        outputs.push("criterion.csv".into());
    }

    if !artifacts.ledger.is_empty() {
        let lines = std::iter::once("k,check,lhs,rhs,slack,pass".to_string()).chain(
            artifacts.ledger.iter().map(|row| {
                format!(
                    "{},{},{},{}",
                    row.block,
                    row.name,
                    csv_cells(&[row.lhs, row.rhs, row.slack]),
                    row.pass
                )
            }),
        );
        write_lines_in(dir, "ledger.csv", lines)?;
        outputs.push("ledger.csv".into());
    }

    if emit_plots {
        outputs.extend(write_plots(dir, &outputs)?);
    }

    outputs.push("summary.json".into());
    artifacts.summary.outputs = outputs.clone();
    let json = serde_json::to_string_pretty(&artifacts.summary)
        .map_err(|e| CliError::Runtime(format!("summary serialization: {e}")))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(outputs)
}

/// Schedule table lines (header plus one row per boundary), when the run
/// produced a schedule.
pub fn schedule_csv_lines(artifacts: &RunArtifacts) -> Option<Vec<String>> {
    let sched = artifacts.schedule.as_ref()?;
    if sched.t.is_empty() {
        return None;
    }
    let ratio_by_k: BTreeMap<usize, &RatioCert> =
        artifacts.ratio_certs.iter().map(|c| (c.k, c)).collect();
    let minimal_by_k: BTreeMap<usize, &MinimalityCert> = artifacts
        .minimality_certs
        .iter()
        .map(|c| (c.k, c))
        .collect();
    let mut lines =
        vec!["k,t_k,r_at,ratio,ratio_lower,ratio_upper,ratio_pass,minimal_pass".to_string()];
    for (i, &t_k) in sched.t.iter().enumerate() {
        let k = i + 1;
        let r_at = artifacts.rs[t_k];
        let (ratio, lower, upper, rpass) = match ratio_by_k.get(&k) {
            Some(c) => (
                c.ratio.to_string(),
                c.lower.to_string(),
                c.upper.to_string(),
                c.pass.to_string(),
            ),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        let minimal = minimal_by_k
            .get(&k)
            .map(|c| c.pass.to_string())
            .unwrap_or_default();
        lines.push(format!(
            "{k},{t_k},{r_at},{ratio},{lower},{upper},{rpass},{minimal}"
        ));
    }
    Some(lines)
}

/// Gnuplot scripts for whichever CSV files exist. Every path inside a
/// script is relative, so a copied output directory still plots.
fn write_plots(dir: &Path, csvs: &[String]) -> CliResult<Vec<String>> {
    let has = |name: &str| csvs.iter().any(|c| c == name);
    let mut written = Vec::new();

    if has("phi_norms.csv") {
        write_lines_in(
            dir,
            "phi_norms.gp",
            [
                "set datafile separator ','".to_string(),
                "set terminal pngcairo size 900,600".to_string(),
                "set output 'phi_norms.png'".to_string(),
                "set logscale x".to_string(),
                "set xlabel 'step n'".to_string(),
                "set ylabel 'product norm from step 0'".to_string(),
                "set key left bottom".to_string(),
                "plot 'phi_norms.csv' using ($1 > 0 ? $1 : 1/0):3 with lines lw 2 title 'measured'"
                    .to_string(),
            ],
        )?;
        written.push("phi_norms.gp".into());
    }
    if has("kappa.csv") {
        write_lines_in(
            dir,
            "kappa.gp",
            [
                "set datafile separator ','".to_string(),
                "set terminal pngcairo size 900,600".to_string(),
                "set output 'kappa.png'".to_string(),
                "set logscale xy".to_string(),
                "set xlabel 'step n'".to_string(),
                "set ylabel 'conditioning'".to_string(),
                "set key left top".to_string(),
                "plot 'kappa.csv' using ($1 > 0 ? $1 : 1/0):3 with lines lw 2 title 'condition number', \\"
                    .to_string(),
                "     '' using ($1 > 0 ? $1 : 1/0):4 with lines lw 2 title 'ratio to (log r)^alpha'"
                    .to_string(),
            ],
        )?;
        written.push("kappa.gp".into());
    }
    if has("criterion.csv") {
        write_lines_in(
            dir,
            "criterion.gp",
            [
                "set datafile separator ','".to_string(),
                "set terminal pngcairo size 900,600".to_string(),
                "set output 'criterion.png'".to_string(),
                "set xlabel 'block k'".to_string(),
                "set ylabel 'criterion partial sum'".to_string(),
                "set key left top".to_string(),
                "plot 'criterion.csv' using 1:5 with linespoints lw 2 title 'measured, energy weights', \\"
                    .to_string(),
                "     '' using 1:7 with linespoints lw 2 title 'log-gap denominator', \\".to_string(),
                "     '' using 1:9 with linespoints lw 2 title 'certified floor'".to_string(),
            ],
        )?;
        written.push("criterion.gp".into());
    }
    if has("estimator.csv") {
        write_lines_in(
            dir,
            "error.gp",
            [
                "set datafile separator ','".to_string(),
                "set terminal pngcairo size 900,600".to_string(),
                "set output 'error.png'".to_string(),
                "set logscale x".to_string(),
                "set xlabel 'step n'".to_string(),
                "set ylabel 'estimation error'".to_string(),
                "set key left bottom".to_string(),
                "plot 'estimator.csv' using ($1 > 0 ? $1 : 1/0):3 with lines lw 2 title 'parameter error', \\"
                    .to_string(),
                "     '' using ($1 > 0 ? $1 : 1/0):4 with lines lw 1 title 'residual norm'".to_string(),
            ],
        )?;
        written.push("error.gp".into());
    }
    Ok(written)
}

// ======================================================================
// Tests
// ======================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn direct_config(dim: usize, alpha: f64, horizon: usize) -> ExperimentConfig {
        serde_json::from_str(&format!(
            r#"{{"mode": "direct", "dim": {dim}, "alpha": {alpha}, "horizon": {horizon}}}"#
        ))
        .expect("valid config")
    }

    #[test]
    fn direct_run_reports_consistent_energy_and_schedule() {
        let cfg = direct_config(2, 0.5, 120);
        let art = run_experiment(&cfg, &RunOptions::default()).expect("run succeeds");

        assert_eq!(art.phis.len(), 121);
        assert_eq!(art.rs[0], 1.0);
        // Unit step energy: r_n = n + 1 exactly.
        assert!((art.summary.final_r - 121.0).abs() < 1e-9);

        let sched = art.schedule.as_ref().expect("factorial schedule exists");
        assert_eq!(sched.t, vec![0, 1, 5, 23, 119]);
        let ss = art.summary.schedule.as_ref().expect("schedule summary");
        assert!(ss.ratio_pass && ss.minimality_pass);
        assert_eq!(ss.blocks, 5);

        let ts = art.summary.transition.as_ref().expect("transition summary");
        assert!(ts.monotone);
        assert!(ts.final_norm <= 1.0 + 1e-12);
        assert!(ts.final_norm <= ts.checkpoint_norm + 1e-12);

        // Zero noise and exciting regressors: the estimate is converging.
        assert!(art.summary.final_estimation_error < 1.0);
    }

    #[test]
    fn block_bounds_dominate_exact_norms_with_online_capture() {
        let cfg = direct_config(2, 0.8, 200);
        let art = run_experiment(&cfg, &RunOptions::default()).expect("run succeeds");
        assert!(!art.block_reports.is_empty());
        for (_, rep) in &art.block_reports {
            let exact = rep.exact_norm_sq.expect("captured online");
            assert!(
                exact <= rep.bound_sq + 1e-9,
                "window [{}, {}): exact {exact} above bound {}",
                rep.start,
                rep.end,
                rep.bound_sq
            );
        }
    }

    #[test]
    fn ledger_and_series_cover_all_blocks() {
        let cfg = direct_config(2, 0.5, 150);
        let art = run_experiment(&cfg, &RunOptions::default()).expect("run succeeds");
        let sched = art.schedule.as_ref().expect("schedule");
        let k_max = sched.max_block();
        assert!(k_max >= 5);

        let general = art.general.as_ref().expect("measured series");
        assert_eq!(general.terms.len(), k_max - 1);
        let certified = art.certified.as_ref().expect("certified series");
        assert_eq!(certified.terms.len(), k_max - 1);
        for (g, c) in general.terms.iter().zip(&certified.terms) {
            assert_eq!(g.k, c.k);
        }

        // Audit rows exist for every block from 3 on and all pass here.
        assert_eq!(art.ledger.len(), 6 * (k_max - 2));
        assert_eq!(art.summary.ledger_all_pass, Some(true));
    }

    #[test]
    fn light_options_skip_spectral_work() {
        let cfg = direct_config(3, 0.0, 150);
        let art = run_experiment(&cfg, &RunOptions::light()).expect("run succeeds");
        assert!(art.norm_rows.is_empty());
        assert!(art.kappa_rows.is_empty());
        assert!(art.block_reports.is_empty());
        assert!(art.summary.transition.is_none());
        assert!(art.summary.ledger_all_pass.is_none());
        assert!(art.summary.final_estimation_error.is_finite());
    }

    #[test]
    fn reruns_are_bitwise_deterministic() {
        let mut cfg = direct_config(2, 0.5, 300);
        cfg.noise = serde_json::from_str(r#"{"kind": "gaussian", "c0": 0.05}"#).unwrap();
        cfg.validate().expect("valid");
        let a = run_experiment(&cfg, &RunOptions::default()).expect("first run");
        let b = run_experiment(&cfg, &RunOptions::default()).expect("second run");
        assert_eq!(a.rs, b.rs);
        assert_eq!(a.phis, b.phis);
        assert_eq!(
            a.summary.final_estimation_error,
            b.summary.final_estimation_error
        );
    }

    #[test]
    fn armax_run_tracks_regressor_energy() {
        let text = r#"{
            "mode": "armax",
            "alpha": 0.0,
            "horizon": 400,
            "seed": 7,
            "noise": {"kind": "gaussian", "c0": 0.1},
            "input": {"kind": "white", "amplitude": 1.0},
            "system": {
                "d": 1, "l": 1,
                "a": [[[0.5]]],
                "b": [[[1.0]]],
                "c": [[[0.3]]]
            }
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).expect("parse");
        cfg.validate().expect("valid");
        let art = run_experiment(&cfg, &RunOptions::default()).expect("run succeeds");
        assert_eq!(art.summary.dim, 3);
        assert_eq!(art.summary.mode, "armax");
        assert!(art.summary.final_r > 1.0);
        assert!(art.summary.final_estimation_error.is_finite());
        assert!(art.summary.noise_tail_decay.is_some());
        let ts = art.summary.transition.as_ref().expect("tracked");
        assert!(ts.monotone);
    }

    #[test]
    fn outputs_round_trip_through_disk() {
        let cfg = direct_config(2, 0.5, 150);
        let mut art = run_experiment(&cfg, &RunOptions::default()).expect("run succeeds");
        let dir = tempfile::tempdir().expect("tempdir");
        let outputs = write_outputs(&mut art, dir.path(), true).expect("write");

        assert!(outputs.iter().any(|f| f == "summary.json"));
        assert!(outputs.iter().any(|f| f == "criterion.csv"));
        assert!(outputs.iter().any(|f| f == "phi_norms.gp"));
        for name in &outputs {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }

        let text = fs::read_to_string(dir.path().join("summary.json")).expect("read summary");
        let parsed: RunSummary = serde_json::from_str(&text).expect("summary parses back");
        assert_eq!(parsed.outputs, outputs);

        let criterion = fs::read_to_string(dir.path().join("criterion.csv")).expect("read");
        let rows = criterion.lines().count();
        let k_max = art.schedule.as_ref().unwrap().max_block();
        assert_eq!(rows, k_max); // header + (K - 1) blocks
    }
}
