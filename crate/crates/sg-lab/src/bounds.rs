//! Algebraic contraction bounds for windows of the error recursion.
//!
//! For a window of steps `j in [k, n)` with normalized regressors
//! `phihat_j = phi_j / sqrt(r_j)`, weights `mu_j >= 0`, weighted information
//! matrix `S = sum_j mu_j phihat_j phihat_j^T` and overlap energies
//! `B_j = sum_{l in [k, j)} (phihat_j^T phihat_l)^2`, the transition product
//! obeys
//!
//! ```text
//! |Phi(n, k)|^2  <=  1 - lambda_min(S) / (sqrt(max_j mu_j) + sqrt(sum_j mu_j B_j))^2.
//! ```
//!
//! The derivation is a short chain of checkable identities and inequalities.
//! Seed the recursion with any `x_k` and let `u_j = phihat_j^T x_j`,
//! `v_j = phihat_j^T x_k`. Unrolling `x_j = x_k - sum_{l<j} phihat_l u_l`
//! gives `v = (I - C) u` with the strictly lower-triangular coupling
//! `C[j][l] = -(phihat_j^T phihat_l)`; then
//! `x_k^T S x_k = sum_j mu_j v_j^2`, the triangle and Cauchy-Schwarz
//! inequalities give `sum mu v^2 <= (sqrt(max mu) + sqrt(sum mu B))^2 |u|^2`,
//! and each step sheds at least `u_j^2` of squared norm, so
//! `|u|^2 <= |x_k|^2 - |x_n|^2`. [`contraction_certificate`] replays this
//! chain numerically on a concrete window and vector.
//!
//! With energy weights `mu_j = r_j` the overlap sum telescopes against the
//! energy curve ([`integral_estimate`]) and the whole denominator collapses
//! to the closed-form log gap [`log_gap_denominator`], which only needs the
//! boundary energies — that is what makes divergence criteria over factorial
//! block schedules computable at any horizon.

use crate::error::{Error, Result};
use crate::schedule::{log_factorial, BlockSchedule};
use crate::spectral::{eig_extremes, SymmetricMatrix};

/// Slack allowed when comparing an exact norm against its bound.
pub const BOUND_SLACK: f64 = 1e-9;
/// Absolute-plus-relative tolerance scale for certificate identities.
pub const CERT_TOL: f64 = 1e-10;
/// Relative tolerance for the integral overlap estimate.
pub const ESTIMATE_TOL: f64 = 1e-9;

/// Weighting of the window steps.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    /// `mu_j = 1`.
    Unit,
    /// `mu_j = r_j`: the weighted information matrix coincides with the raw
    /// (unnormalized) one and the overlap sum admits the closed-form
    /// estimate.
    RWeighted,
    /// Explicit nonnegative weights, one per window step.
    Custom(Vec<f64>),
}

impl WeightScheme {
    /// Descriptive label for reports.
    pub fn label(&self) -> &'static str {
        match self {
            WeightScheme::Unit => "unit",
            WeightScheme::RWeighted => "r-weighted",
            WeightScheme::Custom(_) => "custom",
        }
    }

    fn weights(&self, rs: &[f64], k: usize, n: usize) -> Result<Vec<f64>> {
        let mus = match self {
            WeightScheme::Unit => vec![1.0; n - k],
            WeightScheme::RWeighted => rs[k..n].to_vec(),
            WeightScheme::Custom(v) => {
                if v.len() != n - k {
                    return Err(Error::DimensionError(format!(
                        "{} custom weights for a {}-step window",
                        v.len(),
                        n - k
                    )));
                }
                if v.iter().any(|&m| m < 0.0 || !m.is_finite()) {
                    return Err(Error::ConfigError(
                        "custom weights must be finite and nonnegative".into(),
                    ));
                }
                v.clone()
            }
        };
        if mus.iter().all(|&m| m == 0.0) {
            return Err(Error::DegenerateWeights(
                "all window weights are zero; the bound denominator is empty".into(),
            ));
        }
        Ok(mus)
    }
}

fn validate_window(phis: &[Vec<f64>], rs: &[f64], k: usize, n: usize) -> Result<usize> {
    if phis.len() != rs.len() {
        return Err(Error::DimensionError(format!(
            "{} regressors but {} normalizers",
            phis.len(),
            rs.len()
        )));
    }
    if k >= n || n > phis.len() {
        return Err(Error::ConfigError(format!(
            "window [{k}, {n}) is empty or outside the recorded {} steps",
            phis.len()
        )));
    }
    let dim = phis[k].len();
    for j in k..n {
        if phis[j].len() != dim {
            return Err(Error::DimensionError(format!(
                "regressor {j} has length {}, expected {dim}",
                phis[j].len()
            )));
        }
        if rs[j] <= 0.0 || !rs[j].is_finite() {
            return Err(Error::DataError(format!(
                "normalizer at step {j} must be positive, got {}",
                rs[j]
            )));
        }
    }
    Ok(dim)
}

/// Normalizes the window regressors to `phihat_j = phi_j / sqrt(r_j)`;
/// fails if any normalized vector exceeds unit length, which signals a
/// normalizer that lags its own step.
pub fn normalize_regressors(phis: &[Vec<f64>], rs: &[f64], k: usize, n: usize) -> Result<Vec<Vec<f64>>> {
    validate_window(phis, rs, k, n)?;
    let mut out = Vec::with_capacity(n - k);
    for j in k..n {
        let inv = 1.0 / rs[j].sqrt();
        let hat: Vec<f64> = phis[j].iter().map(|v| v * inv).collect();
        let len_sq: f64 = hat.iter().map(|v| v * v).sum();
        if len_sq > 1.0 + 1e-12 {
            return Err(Error::ContractionViolation(format!(
                "step {j}: |phi|^2 / r = {len_sq} exceeds 1 after normalization"
            )));
        }
        out.push(hat);
    }
    Ok(out)
}

/// Overlap energy of window position `j` against everything before it:
/// `sum_{l in [0, j)} (phihats[j]^T phihats[l])^2`. Direct quadratic-cost
/// reference; the report builders use the running-Gram identity instead.
pub fn overlap_energy(phihats: &[Vec<f64>], j: usize) -> Result<f64> {
    if j >= phihats.len() {
        return Err(Error::ConfigError(format!(
            "position {j} outside the {}-step window",
            phihats.len()
        )));
    }
    let mut b = 0.0;
    for l in 0..j {
        let dot: f64 = phihats[j].iter().zip(&phihats[l]).map(|(a, c)| a * c).sum();
        b += dot * dot;
    }
    Ok(b)
}

/// Weighted information matrix `sum_j mus[j] phihats[j] phihats[j]^T`.
pub fn weighted_gram(phihats: &[Vec<f64>], mus: &[f64]) -> Result<SymmetricMatrix> {
    if phihats.len() != mus.len() {
        return Err(Error::DimensionError(format!(
            "{} regressors but {} weights",
            phihats.len(),
            mus.len()
        )));
    }
    let dim = phihats
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::InsufficientData("empty window".into()))?;
    let mut s = SymmetricMatrix::zeros(dim);
    for (hat, &mu) in phihats.iter().zip(mus) {
        s.add_outer(hat, mu);
    }
    Ok(s)
}

/// `max_j mu_j` and `sum_j mu_j B_j` in one pass. Uses the exact identity
/// `B_j = phihat_j^T (sum_{l<j} phihat_l phihat_l^T) phihat_j`, so the cost
/// is linear in the window length.
fn overlap_sum(phihats: &[Vec<f64>], mus: &[f64]) -> Result<(f64, f64)> {
    let dim = phihats.first().map_or(0, |p| p.len());
    let mut gram = SymmetricMatrix::zeros(dim);
    let mut max_mu = 0.0_f64;
    let mut sum = 0.0;
    for (hat, &mu) in phihats.iter().zip(mus) {
        sum += mu * gram.quad_form(hat)?;
        gram.add_outer(hat, 1.0);
        max_mu = max_mu.max(mu);
    }
    Ok((max_mu, sum))
}

/// The norm bound for one window, together with everything that went into
/// it.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBoundReport {
    /// Window start step `k`.
    pub start: usize,
    /// Window end step `n` (exclusive).
    pub end: usize,
    /// Weight scheme label.
    pub scheme: &'static str,
    /// `lambda_min(S)` of the weighted information matrix.
    pub lambda_min: f64,
    /// `max_j mu_j`.
    pub max_mu: f64,
    /// `sum_j mu_j B_j`.
    pub sum_mu_b: f64,
    /// `lambda_min / (sqrt(max_mu) + sqrt(sum_mu_b))^2` — the amount the
    /// squared norm provably drops by over this window.
    pub criterion_term: f64,
    /// Bound on `|Phi(n, k)|^2`, clamped to `[0, 1]`.
    pub bound_sq: f64,
    /// Exact `|Phi(n, k)|^2` when the caller audited the window.
    pub exact_norm_sq: Option<f64>,
}

impl BlockBoundReport {
    /// Bound on the norm itself.
    pub fn bound(&self) -> f64 {
        self.bound_sq.sqrt()
    }
}

/// Evaluates the window bound.
pub fn block_bound(
    phis: &[Vec<f64>],
    rs: &[f64],
    k: usize,
    n: usize,
    scheme: &WeightScheme,
) -> Result<BlockBoundReport> {
    validate_window(phis, rs, k, n)?;
    let phihats = normalize_regressors(phis, rs, k, n)?;
    let mus = scheme.weights(rs, k, n)?;
    let s = weighted_gram(&phihats, &mus)?;
    let (lambda_min, _) = eig_extremes(&s)?;
    let lambda_min = lambda_min.max(0.0);
    let (max_mu, sum_mu_b) = overlap_sum(&phihats, &mus)?;
    let denom = (max_mu.sqrt() + sum_mu_b.sqrt()).powi(2);
    let criterion_term = lambda_min / denom;
    let bound_sq = (1.0 - criterion_term).clamp(0.0, 1.0);
    Ok(BlockBoundReport {
        start: k,
        end: n,
        scheme: scheme.label(),
        lambda_min,
        max_mu,
        sum_mu_b,
        criterion_term,
        bound_sq,
        exact_norm_sq: None,
    })
}

/// Evaluates the window bound and fills in the exact norm from an
/// independent product recomputation, so the caller can compare the two.
pub fn audited_block_bound(
    phis: &[Vec<f64>],
    rs: &[f64],
    k: usize,
    n: usize,
    scheme: &WeightScheme,
) -> Result<BlockBoundReport> {
    let mut report = block_bound(phis, rs, k, n, scheme)?;
    let product = crate::transition::recompute_product(phis, rs, k, n)?;
    let norm = crate::spectral::spectral_norm(&product)?;
    report.exact_norm_sq = Some(norm * norm);
    Ok(report)
}

// ======================================================================
// Certificate
// ======================================================================

/// Numerical replay of the derivation chain on one window and seed vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    /// Window `[start, end)`.
    pub start: usize,
    pub end: usize,
    /// `|v - (I - C) u|` over the coupling reconstruction.
    pub recon_residual: f64,
    /// Tolerance the reconstruction was held to.
    pub recon_tol: f64,
    /// `x_k^T S x_k`.
    pub quad_form: f64,
    /// `sum_j mu_j v_j^2` — must equal `quad_form`.
    pub weighted_projection: f64,
    /// `lambda_min(S) |x_k|^2` — lower-bounds `quad_form`.
    pub lambda_floor: f64,
    /// `(sqrt(max mu) + sqrt(sum mu B))^2 |u|^2` — upper-bounds `quad_form`.
    pub cauchy_ceiling: f64,
    /// `|u|^2`.
    pub projected_energy: f64,
    /// `|x_k|^2 - |x_n|^2` — upper-bounds `projected_energy`.
    pub energy_budget: f64,
    /// All links of the chain hold within tolerance.
    pub pass: bool,
}

/// Replays the derivation on the window `[k, n)` seeded with `x`.
pub fn contraction_certificate(
    phis: &[Vec<f64>],
    rs: &[f64],
    k: usize,
    n: usize,
    x: &[f64],
    scheme: &WeightScheme,
) -> Result<CertificateReport> {
    let dim = validate_window(phis, rs, k, n)?;
    if x.len() != dim {
        return Err(Error::DimensionError(format!(
            "seed vector has length {}, expected {dim}",
            x.len()
        )));
    }
    let phihats = normalize_regressors(phis, rs, k, n)?;
    let mus = scheme.weights(rs, k, n)?;
    let len = n - k;

    // Evolve the recursion, recording u_j, and take v_j off the seed.
    let x0_sq: f64 = x.iter().map(|v| v * v).sum();
    let mut state = x.to_vec();
    let mut u = Vec::with_capacity(len);
    let mut v = Vec::with_capacity(len);
    for hat in &phihats {
        let uj: f64 = hat.iter().zip(&state).map(|(h, s)| h * s).sum();
        let vj: f64 = hat.iter().zip(x).map(|(h, s)| h * s).sum();
        for (s, h) in state.iter_mut().zip(hat) {
            *s -= h * uj;
        }
        u.push(uj);
        v.push(vj);
    }
    let xn_sq: f64 = state.iter().map(|s| s * s).sum();

    // v = (I - C) u with C[j][l] = -(phihat_j^T phihat_l), l < j.
    let mut recon_residual = 0.0_f64;
    for j in 0..len {
        let mut vj = u[j];
        for l in 0..j {
            let dot: f64 = phihats[j].iter().zip(&phihats[l]).map(|(a, c)| a * c).sum();
            let c_jl = -dot;
            vj -= c_jl * u[l];
        }
        recon_residual += (vj - v[j]).powi(2);
    }
    let recon_residual = recon_residual.sqrt();
    let u_norm_sq: f64 = u.iter().map(|t| t * t).sum();
    let recon_tol = CERT_TOL * (1.0 + u_norm_sq.sqrt());

    let s_mat = weighted_gram(&phihats, &mus)?;
    let quad_form = s_mat.quad_form(x)?;
    let weighted_projection: f64 = mus.iter().zip(&v).map(|(&mu, &vj)| mu * vj * vj).sum();
    let (lambda_min, _) = eig_extremes(&s_mat)?;
    let lambda_floor = lambda_min.max(0.0) * x0_sq;
    let (max_mu, sum_mu_b) = overlap_sum(&phihats, &mus)?;
    let cauchy_ceiling = (max_mu.sqrt() + sum_mu_b.sqrt()).powi(2) * u_norm_sq;
    let energy_budget = x0_sq - xn_sq;

    let scale = 1.0 + quad_form.abs().max(energy_budget.abs());
    let tol = CERT_TOL * scale;
    let pass = recon_residual <= recon_tol
        && (quad_form - weighted_projection).abs() <= tol
        && lambda_floor <= quad_form + tol
        && quad_form <= cauchy_ceiling + tol
        && u_norm_sq <= energy_budget + tol;

    Ok(CertificateReport {
        start: k,
        end: n,
        recon_residual,
        recon_tol,
        quad_form,
        weighted_projection,
        lambda_floor,
        cauchy_ceiling,
        projected_energy: u_norm_sq,
        energy_budget,
        pass,
    })
}

// ======================================================================
// Energy-weighted closed forms
// ======================================================================

/// `r_{t-1}` with the convention that the energy before step 0 is the unit
/// normalizer.
pub fn r_before(rs: &[f64], t: usize) -> f64 {
    if t == 0 {
        1.0
    } else {
        rs[t - 1]
    }
}

/// Both sides of the overlap-sum estimate for energy weights over `[k, n)`:
/// `sum_j r_j B_j <= r_{n-1} (log r_{n-1} - log r_{k-1}) - (r_{n-1} - r_{k-1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralEstimate {
    /// Exact overlap sum.
    pub lhs: f64,
    /// Closed-form majorant from the integral comparison.
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    /// `lhs <= rhs` within the relative tolerance.
    pub pass: bool,
}

/// Evaluates the estimate on a recorded window.
pub fn integral_estimate(phis: &[Vec<f64>], rs: &[f64], k: usize, n: usize) -> Result<IntegralEstimate> {
    validate_window(phis, rs, k, n)?;
    let r_start = r_before(rs, k);
    if r_start < 1.0 - 1e-12 {
        return Err(Error::DomainError(format!(
            "energy below the unit normalizer at the window start: {r_start}"
        )));
    }
    let mut prev = r_start;
    for j in k..n {
        if rs[j] < prev {
            return Err(Error::DomainError(format!(
                "energy curve decreases inside the window at step {j}: {prev} -> {}",
                rs[j]
            )));
        }
        prev = rs[j];
    }
    let phihats = normalize_regressors(phis, rs, k, n)?;
    let mus = rs[k..n].to_vec();
    let (_, lhs) = overlap_sum(&phihats, &mus)?;
    let r_end = rs[n - 1];
    let rhs = r_end * (r_end.ln() - r_start.ln()) - (r_end - r_start);
    let slack = rhs - lhs;
    let pass = lhs <= rhs + ESTIMATE_TOL * (1.0 + rhs.abs());
    Ok(IntegralEstimate { lhs, rhs, slack, pass })
}

/// Closed-form denominator for energy weights over a window with boundary
/// energies `r_end = r_{n-1}` and `r_start = r_{k-1}`:
///
/// ```text
/// D = r_end (log r_end - log r_start) + r_start,
/// ```
///
/// which equals `max_j mu_j` plus the integral majorant of `sum mu_j B_j`
/// exactly, so `(sqrt(max mu) + sqrt(sum mu B))^2 <= 2 D` and replacing the
/// measured denominator by `D` shrinks a criterion term by at most a factor
/// of two.
pub fn log_gap_denominator(r_end: f64, r_start: f64) -> Result<f64> {
    if r_start < 1.0 || r_end < r_start || !r_end.is_finite() || r_start.is_nan() {
        return Err(Error::DomainError(format!(
            "need 1 <= r_start <= r_end, got r_start = {r_start}, r_end = {r_end}"
        )));
    }
    Ok(r_end * (r_end.ln() - r_start.ln()) + r_start)
}

// ======================================================================
// Criterion series over a block schedule
// ======================================================================

/// One block's contribution to a divergence criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionTerm {
    /// Block index `k`.
    pub k: usize,
    /// Window `[start, end)` in steps.
    pub start: usize,
    pub end: usize,
    /// Smallest eigenvalue entering the numerator (measured or certified).
    pub lambda_min: f64,
    /// Denominator the block was charged.
    pub denominator: f64,
    /// `max(0, lambda_min) / denominator`.
    pub term: f64,
}

/// A divergence-criterion series over the blocks of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionSeries {
    /// Which numerator/denominator pairing produced it.
    pub label: String,
    /// Per-block terms for `k = 2..=K`.
    pub terms: Vec<CriterionTerm>,
    /// Running sums of `terms`.
    pub partial_sums: Vec<f64>,
    /// Empty blocks and other non-fatal observations.
    pub warnings: Vec<String>,
}

impl CriterionSeries {
    fn from_terms(label: String, terms: Vec<CriterionTerm>, warnings: Vec<String>) -> Self {
        let mut partial_sums = Vec::with_capacity(terms.len());
        let mut acc = 0.0;
        for t in &terms {
            acc += t.term;
            partial_sums.push(acc);
        }
        Self {
            label,
            terms,
            partial_sums,
            warnings,
        }
    }
}

/// Which denominator a measured-series block is charged.
#[derive(Debug, Clone, PartialEq)]
pub enum CriterionVariant {
    /// Full measured denominator `(sqrt(max mu) + sqrt(sum mu B))^2` under
    /// the given weights.
    General(WeightScheme),
    /// Closed-form log-gap denominator with energy weights; only the
    /// boundary energies and each block's measured `lambda_min` are needed.
    LogGap,
}

/// Builds a measured criterion series over the schedule blocks
/// (`k = 2..=K`, windows `[t_{k-1}, t_k)`).
pub fn criterion_partial_sums(
    phis: &[Vec<f64>],
    rs: &[f64],
    schedule: &BlockSchedule,
    variant: &CriterionVariant,
) -> Result<CriterionSeries> {
    if schedule.max_block() < 2 {
        return Err(Error::InsufficientHorizon(
            "schedule has no complete block".into(),
        ));
    }
    let mut terms = Vec::new();
    let mut warnings = Vec::new();
    for (k, start, end) in schedule.blocks() {
        if end > phis.len() {
            return Err(Error::ConfigError(format!(
                "boundary t_{k} = {end} outside the recorded {} steps",
                phis.len()
            )));
        }
        if start == end {
            warnings.push(format!("block {k} is empty; charged a zero term"));
            terms.push(CriterionTerm {
                k,
                start,
                end,
                lambda_min: 0.0,
                denominator: f64::INFINITY,
                term: 0.0,
            });
            continue;
        }
        let (lambda_min, denominator) = match variant {
            CriterionVariant::General(scheme) => {
                let report = block_bound(phis, rs, start, end, scheme)?;
                let denom =
                    (report.max_mu.sqrt() + report.sum_mu_b.sqrt()).powi(2);
                (report.lambda_min, denom)
            }
            CriterionVariant::LogGap => {
                let phihats = normalize_regressors(phis, rs, start, end)?;
                let mus = rs[start..end].to_vec();
                let s = weighted_gram(&phihats, &mus)?;
                let (lambda_min, _) = eig_extremes(&s)?;
                let denom = log_gap_denominator(rs[end - 1], r_before(rs, start))?;
                (lambda_min, denom)
            }
        };
        let term = (lambda_min.max(0.0) / denominator).max(0.0);
        terms.push(CriterionTerm {
            k,
            start,
            end,
            lambda_min,
            denominator,
            term,
        });
    }
    let label = match variant {
        CriterionVariant::General(scheme) => format!("general-{}", scheme.label()),
        CriterionVariant::LogGap => "log-gap".to_string(),
    };
    Ok(CriterionSeries::from_terms(label, terms, warnings))
}

/// Builds the fully certified series: block numerators are lower-bounded
/// from the energy curve alone through the eigenvalue-difference inequality
/// and the conditioning envelope `kappa <= envelope_m (log r)^alpha`,
///
/// ```text
/// lambda_min(block k)  >=  max(0, (r_end - 1) / (dim envelope_m (log r_end)^alpha)
///                                  - (r_start - 1)),
/// ```
///
/// with `r_end = r_{t_k - 1}`, `r_start = r_{t_{k-1} - 1}`; denominators are
/// the log-gap closed form. No per-step data is touched, so the series is
/// computable wherever the energy curve is.
pub fn certified_partial_sums(
    rs: &[f64],
    schedule: &BlockSchedule,
    dim: usize,
    envelope_m: f64,
    alpha: f64,
) -> Result<CriterionSeries> {
    if dim == 0 {
        return Err(Error::DimensionError("dimension must be positive".into()));
    }
    if envelope_m <= 0.0 || !envelope_m.is_finite() {
        return Err(Error::ConfigError(format!(
            "conditioning envelope constant must be positive, got {envelope_m}"
        )));
    }
    if alpha < 0.0 || alpha.is_nan() {
        return Err(Error::ConfigError(format!(
            "conditioning exponent must be >= 0, got {alpha}"
        )));
    }
    if schedule.max_block() < 2 {
        return Err(Error::InsufficientHorizon(
            "schedule has no complete block".into(),
        ));
    }
    let mut terms = Vec::new();
    let mut warnings = Vec::new();
    for (k, start, end) in schedule.blocks() {
        if end > rs.len() {
            return Err(Error::ConfigError(format!(
                "boundary t_{k} = {end} outside the {}-point energy curve",
                rs.len()
            )));
        }
        let r_start = r_before(rs, start);
        let r_end = r_before(rs, end);
        if start == end {
            warnings.push(format!("block {k} is empty; charged a zero term"));
            terms.push(CriterionTerm {
                k,
                start,
                end,
                lambda_min: 0.0,
                denominator: f64::INFINITY,
                term: 0.0,
            });
            continue;
        }
        let log_r_end = r_end.ln();
        let envelope = envelope_m * log_r_end.max(0.0).powf(alpha);
        let lower = if envelope > 0.0 {
            (r_end - 1.0) / (dim as f64 * envelope) - (r_start - 1.0)
        } else {
            0.0
        };
        let lambda_min = lower.max(0.0);
        let denominator = log_gap_denominator(r_end, r_start)?;
        terms.push(CriterionTerm {
            k,
            start,
            end,
            lambda_min,
            denominator,
            term: lambda_min / denominator,
        });
    }
    Ok(CriterionSeries::from_terms(
        "certified".to_string(),
        terms,
        warnings,
    ))
}

// ======================================================================
// Per-block audit ledger
// ======================================================================

/// One audited inequality with both sides evaluated on the run.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    /// Block index the row belongs to.
    pub block: usize,
    /// Which inequality.
    pub name: &'static str,
    /// Left-hand side as evaluated.
    pub lhs: f64,
    /// Right-hand side as evaluated.
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    /// `lhs <= rhs` within tolerance.
    pub pass: bool,
}

/// Measured spectral data of one block's endpoints, collected by whoever
/// ran the recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSnapshot {
    /// Block index `k`.
    pub k: usize,
    /// `r_{t_{k-1} - 1}` (unit normalizer when `t_{k-1} = 0`).
    pub r_start: f64,
    /// `r_{t_k - 1}`.
    pub r_end: f64,
    /// `(lambda_min, lambda_max)` of the raw information matrix at the
    /// block start.
    pub start_eigs: (f64, f64),
    /// Same at the block end.
    pub end_eigs: (f64, f64),
    /// Trace of the raw information matrix at the block start.
    pub start_trace: f64,
    /// Same at the block end.
    pub end_trace: f64,
    /// Measured `lambda_min` of the block difference matrix.
    pub block_lambda_min: f64,
}

/// Evaluates the audit rows that connect a block's measured spectra to the
/// quantities the certified series runs on: the eigenvalue-difference
/// split, the conditioning envelope, the trace pinch on each side, the
/// trace/energy identity, and the boundary-energy growth cap.
pub fn ledger_rows(
    snap: &BlockSnapshot,
    dim: usize,
    envelope_m: f64,
    alpha: f64,
    jump_l: f64,
) -> Result<Vec<LedgerRow>> {
    if dim == 0 {
        return Err(Error::DimensionError("dimension must be positive".into()));
    }
    if snap.k < 3 {
        return Err(Error::ConfigError(format!(
            "audit rows are defined for blocks k >= 3, got k = {}",
            snap.k
        )));
    }
    if jump_l < 1.0 || jump_l.is_nan() {
        return Err(Error::ConfigError(format!(
            "jump constant must be >= 1, got {jump_l}"
        )));
    }
    let (start_min, start_max) = snap.start_eigs;
    let (end_min, end_max) = snap.end_eigs;
    let _ = start_min;
    let tol = |scale: f64| 1e-9 * (1.0 + scale.abs());
    let row = |name: &'static str, lhs: f64, rhs: f64| LedgerRow {
        block: snap.k,
        name,
        lhs,
        rhs,
        slack: rhs - lhs,
        pass: lhs <= rhs + tol(rhs),
    };

    let log_r_end = snap.r_end.ln();
    let envelope = envelope_m * log_r_end.max(0.0).powf(alpha);

    let mut rows = Vec::with_capacity(6);
    // Eigenvalue-difference split: the block matrix cannot dip below the
    // end's floor minus the start's ceiling.
    rows.push(row("weyl_split", end_min - start_max, snap.block_lambda_min));
    // Conditioning envelope at the block end.
    let kappa = if end_min > 0.0 { end_max / end_min } else { f64::INFINITY };
    rows.push(row("kappa_envelope", kappa, envelope));
    // Trace pinch from below: lambda_min >= trace / (dim * kappa_bound).
    rows.push(row(
        "trace_floor",
        (snap.r_end - 1.0) / (dim as f64 * envelope),
        end_min,
    ));
    // Trace pinch from above at the start.
    rows.push(row("trace_ceiling", start_max, snap.start_trace));
    // Accumulated trace equals accumulated energy.
    let identity = LedgerRow {
        block: snap.k,
        name: "trace_energy_identity",
        lhs: snap.end_trace,
        rhs: snap.r_end - 1.0,
        slack: (snap.r_end - 1.0) - snap.end_trace,
        pass: (snap.end_trace - (snap.r_end - 1.0)).abs() <= 1e-8 * (1.0 + snap.r_end),
    };
    rows.push(identity);
    // Boundary-energy growth cap: log r_{t_k - 1} < log(l k!) <= (1 + log l) k log k.
    let k = snap.k as f64;
    let mid = jump_l.ln() + log_factorial(snap.k as u64);
    let cap = (1.0 + jump_l.ln()) * k * k.ln();
    let stirling_ok = log_r_end <= mid + tol(mid) && mid <= cap + tol(cap);
    rows.push(LedgerRow {
        block: snap.k,
        name: "boundary_growth_cap",
        lhs: log_r_end,
        rhs: cap,
        slack: cap - log_r_end,
        pass: stirling_ok,
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::factorial_schedule;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Random admissible window: regressors plus a consistent energy curve.
    fn random_window(rng: &mut ChaCha8Rng, dim: usize, len: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut phis = Vec::with_capacity(len);
        let mut rs = Vec::with_capacity(len);
        let mut r = 1.0;
        for _ in 0..len {
            let phi: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            r += phi.iter().map(|v| v * v).sum::<f64>();
            phis.push(phi);
            rs.push(r);
        }
        (phis, rs)
    }

    #[test]
    fn single_step_bound_and_exact_norm() {
        // One scalar step with |phi|^2 / r = 0.64: S = 0.64, B empty, so the
        // squared-norm bound is 0.36 while the exact square is 0.36^2.
        let phis = vec![vec![0.8]];
        let rs = vec![1.0];
        let report = audited_block_bound(&phis, &rs, 0, 1, &WeightScheme::Unit).unwrap();
        assert_abs_diff_eq!(report.lambda_min, 0.64, epsilon = 1e-12);
        assert_abs_diff_eq!(report.bound_sq, 0.36, epsilon = 1e-12);
        assert_abs_diff_eq!(report.exact_norm_sq.unwrap(), 0.1296, epsilon = 1e-12);
        assert_abs_diff_eq!(report.criterion_term, 0.64, epsilon = 1e-12);
        assert!(report.exact_norm_sq.unwrap() <= report.bound_sq + BOUND_SLACK);
    }

    #[test]
    fn half_energy_step_bound() {
        let phis = vec![vec![1.0]];
        let rs = vec![2.0];
        let report = audited_block_bound(&phis, &rs, 0, 1, &WeightScheme::Unit).unwrap();
        assert_abs_diff_eq!(report.bound_sq, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(report.exact_norm_sq.unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn exact_norm_never_exceeds_bound_on_random_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..50 {
            let dim = rng.random_range(1..4_usize);
            let len = rng.random_range(1..30_usize);
            let (phis, rs) = random_window(&mut rng, dim, len);
            for scheme in [WeightScheme::Unit, WeightScheme::RWeighted] {
                let report = audited_block_bound(&phis, &rs, 0, len, &scheme).unwrap();
                let exact = report.exact_norm_sq.unwrap();
                assert!(
                    exact <= report.bound_sq + BOUND_SLACK,
                    "trial {trial} ({}): exact {exact} > bound {}",
                    report.scheme,
                    report.bound_sq
                );
                assert!(report.bound_sq <= 1.0);
            }
        }
    }

    #[test]
    fn energy_weights_reproduce_raw_information_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (phis, rs) = random_window(&mut rng, 3, 40);
        let phihats = normalize_regressors(&phis, &rs, 0, 40).unwrap();
        let weighted = weighted_gram(&phihats, &rs).unwrap();
        let mut raw = SymmetricMatrix::zeros(3);
        for phi in &phis {
            raw.add_outer(phi, 1.0);
        }
        let diff = weighted.sub(&raw).unwrap();
        assert!(diff.frob_norm() <= 1e-12 * raw.frob_norm().max(1.0));
    }

    #[test]
    fn running_gram_overlap_matches_direct_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (phis, rs) = random_window(&mut rng, 2, 25);
        let phihats = normalize_regressors(&phis, &rs, 0, 25).unwrap();
        let mus: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..3.0)).collect();
        let (_, fast) = overlap_sum(&phihats, &mus).unwrap();
        let mut direct = 0.0;
        for (j, &mu) in mus.iter().enumerate() {
            direct += mu * overlap_energy(&phihats, j).unwrap();
        }
        assert_abs_diff_eq!(fast, direct, epsilon = 1e-12 * (1.0 + direct));
    }

    #[test]
    fn certificate_chain_holds_on_random_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..30 {
            let dim = rng.random_range(1..4_usize);
            let len = rng.random_range(1..25_usize);
            let (phis, rs) = random_window(&mut rng, dim, len);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            for scheme in [WeightScheme::Unit, WeightScheme::RWeighted] {
                let cert = contraction_certificate(&phis, &rs, 0, len, &x, &scheme).unwrap();
                assert!(cert.pass, "certificate failed: {cert:?}");
                assert_abs_diff_eq!(
                    cert.quad_form,
                    cert.weighted_projection,
                    epsilon = 1e-10 * (1.0 + cert.quad_form.abs())
                );
            }
        }
    }

    #[test]
    fn certificate_matches_hand_example() {
        // Window of one step phi = 0.8, r = 1, seed x = 1: u = v = 0.8,
        // S = 0.64, both quadratic forms 0.64, energy budget 1 - 0.36^2.
        let cert = contraction_certificate(
            &[vec![0.8]],
            &[1.0],
            0,
            1,
            &[1.0],
            &WeightScheme::Unit,
        )
        .unwrap();
        assert!(cert.pass);
        assert_abs_diff_eq!(cert.quad_form, 0.64, epsilon = 1e-15);
        assert_abs_diff_eq!(cert.projected_energy, 0.64, epsilon = 1e-15);
        assert_abs_diff_eq!(cert.energy_budget, 1.0 - 0.1296, epsilon = 1e-15);
    }

    #[test]
    fn integral_estimate_majorizes_on_random_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..30 {
            let dim = rng.random_range(1..4_usize);
            let len = rng.random_range(2..60_usize);
            let (phis, rs) = random_window(&mut rng, dim, len);
            let k = rng.random_range(0..len);
            let est = integral_estimate(&phis, &rs, k, len).unwrap();
            assert!(est.pass, "estimate violated: {est:?}");
        }
    }

    #[test]
    fn log_gap_denominator_closed_form() {
        let e = std::f64::consts::E;
        let d = log_gap_denominator(e * e, e).unwrap();
        assert_abs_diff_eq!(d, e * e + e, epsilon = 1e-12);
        assert!(log_gap_denominator(0.5, 0.2).is_err());
        assert!(log_gap_denominator(2.0, 3.0).is_err());
    }

    #[test]
    fn log_gap_equals_estimate_plus_peak_weight() {
        // With energy weights the closed-form denominator is exactly the
        // integral majorant plus the largest weight, hence at most a factor
        // two above the measured denominator.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..20 {
            let (phis, rs) = random_window(&mut rng, 2, 40);
            let k = rng.random_range(0..20_usize);
            let est = integral_estimate(&phis, &rs, k, 40).unwrap();
            let r_start = if k == 0 { 1.0 } else { rs[k - 1] };
            let d = log_gap_denominator(rs[39], r_start).unwrap();
            let max_mu = rs[39];
            assert_abs_diff_eq!(d, est.rhs + max_mu, epsilon = 1e-9 * (1.0 + d));
        }
    }

    #[test]
    fn log_gap_terms_lose_at_most_a_factor_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        for _ in 0..20 {
            let (phis, rs) = random_window(&mut rng, 2, 50);
            let report = block_bound(&phis, &rs, 0, 50, &WeightScheme::RWeighted).unwrap();
            let d = log_gap_denominator(rs[49], 1.0).unwrap();
            let log_gap_term = report.lambda_min / d;
            assert!(
                log_gap_term <= 2.0 * report.criterion_term + 1e-9,
                "log-gap term {log_gap_term} vs measured {}",
                report.criterion_term
            );
        }
    }

    #[test]
    fn degenerate_and_invalid_weights_are_rejected() {
        let phis = vec![vec![0.5], vec![0.5]];
        let rs = vec![1.25, 1.5];
        assert!(matches!(
            block_bound(&phis, &rs, 0, 2, &WeightScheme::Custom(vec![0.0, 0.0])),
            Err(Error::DegenerateWeights(_))
        ));
        assert!(matches!(
            block_bound(&phis, &rs, 0, 2, &WeightScheme::Custom(vec![1.0, -1.0])),
            Err(Error::ConfigError(_))
        ));
        assert!(matches!(
            block_bound(&phis, &rs, 0, 2, &WeightScheme::Custom(vec![1.0])),
            Err(Error::DimensionError(_))
        ));
        assert!(block_bound(&phis, &rs, 2, 2, &WeightScheme::Unit).is_err());
    }

    /// Alternating-axes run in global step coordinates: `phis[j] = phi_j`
    /// with the customary silent step 0, `rs[j] = r_j = 1 + j`.
    fn alternating_run(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut phis = vec![vec![0.0, 0.0]];
        let mut rs = vec![1.0];
        for j in 1..=n {
            let mut v = vec![0.0; 2];
            v[j % 2] = 1.0;
            phis.push(v);
            rs.push(1.0 + j as f64);
        }
        (phis, rs)
    }

    #[test]
    fn criterion_series_over_unit_energy_schedule() {
        // Unit energy puts the boundaries at k! - 1; block 2 holds only the
        // silent initial step and is charged zero, every later block matrix
        // is a scaled near-identity with a strictly positive term.
        let (phis, rs) = alternating_run(200);
        let schedule = factorial_schedule(&rs).unwrap();
        assert_eq!(schedule.t, vec![0, 1, 5, 23, 119]);

        for variant in [
            CriterionVariant::General(WeightScheme::RWeighted),
            CriterionVariant::LogGap,
        ] {
            let series = criterion_partial_sums(&phis, &rs, &schedule, &variant).unwrap();
            assert_eq!(series.terms.len(), 4);
            assert!(series.warnings.is_empty());
            assert_eq!(series.terms[0].term, 0.0, "only the silent step in block 2");
            for t in &series.terms[1..] {
                assert!(t.term > 0.0, "block {} should contribute", t.k);
                assert!(t.term.is_finite());
            }
            for w in series.partial_sums.windows(2) {
                assert!(w[1] >= w[0] - 1e-15);
            }
        }
    }

    #[test]
    fn empty_block_is_warned_and_charged_zero() {
        let phis = vec![vec![1.0], vec![1.0], vec![1.0]];
        let rs = vec![2.0, 3.0, 4.0];
        let schedule = BlockSchedule { t: vec![0, 1, 1, 3] };
        let series =
            criterion_partial_sums(&phis, &rs, &schedule, &CriterionVariant::LogGap).unwrap();
        assert_eq!(series.warnings.len(), 1);
        let empty = series.terms.iter().find(|t| t.k == 3).unwrap();
        assert_eq!(empty.term, 0.0);
    }

    #[test]
    fn certified_terms_never_exceed_measured_block_floors() {
        // Alternating unit-energy axes: kappa stays within 2, so the
        // envelope with M = 2, alpha = 0 is valid and the certified
        // numerator must sit below the measured block lambda_min.
        let (phis, rs) = alternating_run(150);
        let schedule = factorial_schedule(&rs).unwrap();
        let certified = certified_partial_sums(&rs, &schedule, 2, 2.0, 0.0).unwrap();
        let measured =
            criterion_partial_sums(&phis, &rs, &schedule, &CriterionVariant::LogGap).unwrap();
        for (c, m) in certified.terms.iter().zip(&measured.terms) {
            assert_eq!(c.k, m.k);
            assert!(
                c.lambda_min <= m.lambda_min + 1e-9,
                "block {}: certified {} above measured {}",
                c.k,
                c.lambda_min,
                m.lambda_min
            );
            assert!(c.term <= m.term + 1e-9);
        }
    }

    #[test]
    fn ledger_rows_pass_on_consistent_snapshot() {
        // Alternating-axes run measured at the block-3 endpoints
        // ([t_2, t_3) = [1, 5) on the unit-energy curve).
        let snap = BlockSnapshot {
            k: 3,
            r_start: 1.0,
            r_end: 5.0,
            start_eigs: (0.0, 0.0),
            end_eigs: (2.0, 2.0),
            start_trace: 0.0,
            end_trace: 4.0,
            block_lambda_min: 2.0,
        };
        let rows = ledger_rows(&snap, 2, 2.0, 0.0, 2.0).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(r.pass, "row {} failed: lhs {} rhs {}", r.name, r.lhs, r.rhs);
        }
        let names: Vec<_> = rows.iter().map(|r| r.name).collect();
        assert_eq!(
            names,
            vec![
                "weyl_split",
                "kappa_envelope",
                "trace_floor",
                "trace_ceiling",
                "trace_energy_identity",
                "boundary_growth_cap"
            ]
        );
    }

    #[test]
    fn ledger_flags_inconsistent_snapshot() {
        // A block floor below the eigenvalue-difference split must fail.
        let snap = BlockSnapshot {
            k: 3,
            r_start: 1.0,
            r_end: 5.0,
            start_eigs: (0.0, 0.0),
            end_eigs: (2.0, 2.0),
            start_trace: 0.0,
            end_trace: 4.0,
            block_lambda_min: 1.5,
        };
        let rows = ledger_rows(&snap, 2, 2.0, 0.0, 2.0).unwrap();
        let weyl = rows.iter().find(|r| r.name == "weyl_split").unwrap();
        assert!(!weyl.pass);
        assert!(ledger_rows(&snap, 2, 2.0, 0.0, 2.0).is_ok());
        let bad_k = BlockSnapshot { k: 2, ..snap };
        assert!(ledger_rows(&bad_k, 2, 2.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn window_validation_errors() {
        let phis = vec![vec![0.5, 0.5]];
        let rs = vec![1.5];
        assert!(block_bound(&phis, &rs, 0, 2, &WeightScheme::Unit).is_err());
        assert!(normalize_regressors(&phis, &[2.0, 3.0], 0, 1).is_err());
        // Normalizer smaller than the step energy: not a contraction.
        assert!(matches!(
            normalize_regressors(&[vec![2.0]], &[1.0], 0, 1),
            Err(Error::ContractionViolation(_))
        ));
        assert!(integral_estimate(&[vec![0.5]], &[0.8], 0, 1).is_err());
    }
}
