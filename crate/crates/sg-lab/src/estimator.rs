//! Stochastic-gradient (SG) parameter estimation.
//!
//! The estimator maintains `theta_n` (stacked parameter estimate, `m x d`),
//! the current regressor `phi_n`, and the accumulated regressor energy
//! `r_n = r_0 + sum_{i=1..n} |phi_i|^2` (default `r_0 = 1`). One update is
//!
//! ```text
//! theta_{n+1} = theta_n + (phi_n / r_n) (y_{n+1}^T - phi_n^T theta_n)
//! ```
//!
//! The crucial indexing detail: the normalizer used at step `n` already
//! includes `|phi_n|^2` (for `n >= 1`), which keeps every rank-one update
//! `phi_n phi_n^T / r_n` dominated by the identity — the contraction
//! property the transition-product analysis relies on.
//!
//! The regressor stacks lagged outputs, inputs, and *estimated* residuals
//! `w_hat_n = y_n - theta_{n-1}^T phi_{n-1}`; with moving-average order zero
//! the residual block is empty and the recursion is ordinary normalized
//! gradient descent on a linear regression.

use crate::error::{Error, Result};
use crate::model::Orders;
use crate::spectral::Matrix;

// ======================================================================
// Compensated accumulation
// ======================================================================

/// Kahan compensated accumulator. The energy sum spans up to millions of
/// terms whose magnitudes differ by orders of magnitude; compensation keeps
/// the normalizer trustworthy to near machine precision.
#[derive(Debug, Clone, Copy)]
struct KahanAcc {
    sum: f64,
    carry: f64,
}

impl KahanAcc {
    fn new(init: f64) -> Self {
        Self {
            sum: init,
            carry: 0.0,
        }
    }

    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

// ======================================================================
// Estimator state
// ======================================================================

/// Lag ring: most recent value first, fixed depth.
#[derive(Debug, Clone)]
struct LagRing {
    slots: Vec<Vec<f64>>,
}

impl LagRing {
    fn new(depth: usize, width: usize) -> Self {
        Self {
            slots: vec![vec![0.0; width]; depth],
        }
    }

    fn push(&mut self, v: &[f64]) {
        if self.slots.is_empty() {
            return;
        }
        self.slots.rotate_right(1);
        self.slots[0].copy_from_slice(v);
    }

    fn set_newest(&mut self, v: &[f64]) {
        if let Some(slot) = self.slots.first_mut() {
            slot.copy_from_slice(v);
        }
    }

    fn extend_into(&self, out: &mut Vec<f64>) {
        for s in &self.slots {
            out.extend_from_slice(s);
        }
    }
}

/// Online SG estimator.
#[derive(Debug, Clone)]
pub struct SgEstimator {
    orders: Orders,
    theta: Matrix,
    phi: Vec<f64>,
    r: KahanAcc,
    n: usize,
    y_ring: LagRing,
    u_ring: LagRing,
    w_ring: LagRing,
}

/// Point-in-time view of the quantities the diagnostics need.
#[derive(Debug, Clone)]
pub struct StepSnapshot {
    /// Step index `n`.
    pub n: usize,
    /// Regressor `phi_n`.
    pub phi: Vec<f64>,
    /// Energy normalizer `r_n`.
    pub r: f64,
}

impl SgEstimator {
    /// Estimator with `theta_0 = 0`, zero lag history (`phi_0 = 0`), and
    /// `r_0 = 1`.
    pub fn new(orders: Orders) -> Result<Self> {
        let m = orders.regressor_dim();
        Self::with_initial(orders, Matrix::zeros(m, orders.d), 1.0)
    }

    /// Estimator with explicit initial parameters and normalizer. A scaled
    /// `r_0` exists so that a run on inputs scaled by `s` with `r_0' = s^2
    /// r_0` reproduces the original estimate sequence exactly; outside such
    /// experiments `r_0 = 1` is the right choice.
    pub fn with_initial(orders: Orders, theta0: Matrix, r0: f64) -> Result<Self> {
        let m = orders.regressor_dim();
        if m == 0 {
            return Err(Error::ConfigError("regressor dimension is zero".into()));
        }
        if orders.d == 0 || orders.l == 0 {
            return Err(Error::ConfigError("signal dimensions must be positive".into()));
        }
        if theta0.rows() != m || theta0.cols() != orders.d {
            return Err(Error::DimensionError(format!(
                "initial parameters must be {m}x{}, got {}x{}",
                orders.d,
                theta0.rows(),
                theta0.cols()
            )));
        }
        if r0 <= 0.0 || !r0.is_finite() {
            return Err(Error::ConfigError(format!(
                "initial normalizer must be positive and finite, got {r0}"
            )));
        }
        let mut est = Self {
            orders,
            theta: theta0,
            phi: vec![0.0; m],
            r: KahanAcc::new(r0),
            n: 0,
            y_ring: LagRing::new(orders.p, orders.d),
            u_ring: LagRing::new(orders.q, orders.l),
            w_ring: LagRing::new(orders.r, orders.d),
        };
        est.phi = est.form_regressor();
        Ok(est)
    }

    /// Overwrites the time-0 lag values (output, input, residual) and
    /// rebuilds `phi_0`. Only valid before the first update. The initial
    /// regressor does not enter the energy sum — `r_0` stays as configured.
    pub fn set_initial(&mut self, y0: &[f64], u0: &[f64], w0: &[f64]) -> Result<()> {
        if self.n != 0 {
            return Err(Error::DataError(
                "initial values can only be set before the first update".into(),
            ));
        }
        let Orders { d, l, .. } = self.orders;
        if y0.len() != d || w0.len() != d || u0.len() != l {
            return Err(Error::DimensionError(format!(
                "initial values: expected lengths ({d}, {l}, {d}), got ({}, {}, {})",
                y0.len(),
                u0.len(),
                w0.len()
            )));
        }
        self.y_ring.set_newest(y0);
        self.u_ring.set_newest(u0);
        self.w_ring.set_newest(w0);
        self.phi = self.form_regressor();
        Ok(())
    }

    /// Model orders.
    pub fn orders(&self) -> Orders {
        self.orders
    }

    /// Current parameter estimate `theta_n`.
    pub fn theta(&self) -> &Matrix {
        &self.theta
    }

    /// Current regressor `phi_n`.
    pub fn regressor(&self) -> &[f64] {
        &self.phi
    }

    /// Current energy normalizer `r_n`.
    pub fn r(&self) -> f64 {
        self.r.value()
    }

    /// Steps taken.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Copy of the diagnostic-relevant state.
    pub fn snapshot(&self) -> StepSnapshot {
        StepSnapshot {
            n: self.n,
            phi: self.phi.clone(),
            r: self.r(),
        }
    }

    /// Stacks the lag rings into the regressor
    /// `[y_n .. y_{n-p+1}, u_n .. u_{n-q+1}, w_hat_n .. w_hat_{n-r+1}]`.
    pub fn form_regressor(&self) -> Vec<f64> {
        let mut phi = Vec::with_capacity(self.orders.regressor_dim());
        self.y_ring.extend_into(&mut phi);
        self.u_ring.extend_into(&mut phi);
        self.w_ring.extend_into(&mut phi);
        phi
    }

    /// One SG step. Consumes the new observation `y_{n+1}` and the new input
    /// `u_{n+1}`, updates the estimate using the *current* `(phi_n, r_n)`,
    /// pushes the prediction residual into the lag history, and forms
    /// `(phi_{n+1}, r_{n+1})`. Returns the residual
    /// `w_hat_{n+1} = y_{n+1} - theta_n^T phi_n`.
    pub fn sg_update(&mut self, y_next: &[f64], u_next: &[f64]) -> Result<Vec<f64>> {
        let Orders { d, l, .. } = self.orders;
        if y_next.len() != d || u_next.len() != l {
            return Err(Error::DimensionError(format!(
                "update: expected observation of length {d} and input of length {l}, got {} and {}",
                y_next.len(),
                u_next.len()
            )));
        }
        if !y_next.iter().chain(u_next).all(|v| v.is_finite()) {
            return Err(Error::DataError("non-finite observation or input".into()));
        }

        let m = self.orders.regressor_dim();
        // Residual w_hat_{n+1} = y_{n+1} - theta_n^T phi_n.
        let mut residual = y_next.to_vec();
        for i in 0..m {
            let pi = self.phi[i];
            if pi == 0.0 {
                continue;
            }
            for j in 0..d {
                residual[j] -= self.theta.get(i, j) * pi;
            }
        }

        // theta_{n+1} = theta_n + (phi_n / r_n) residual^T.
        let rinv = 1.0 / self.r();
        for i in 0..m {
            let g = self.phi[i] * rinv;
            if g == 0.0 {
                continue;
            }
            for j in 0..d {
                self.theta.set(i, j, self.theta.get(i, j) + g * residual[j]);
            }
        }

        self.y_ring.push(y_next);
        self.u_ring.push(u_next);
        self.w_ring.push(&residual);
        self.n += 1;
        self.phi = self.form_regressor();
        let energy: f64 = self.phi.iter().map(|v| v * v).sum();
        self.r.add(energy);
        Ok(residual)
    }

    /// Frobenius distance between the current estimate and a reference
    /// parameter block.
    pub fn estimation_error(&self, truth: &Matrix) -> Result<f64> {
        if truth.rows() != self.theta.rows() || truth.cols() != self.theta.cols() {
            return Err(Error::DimensionError(format!(
                "reference parameters are {}x{}, estimate is {}x{}",
                truth.rows(),
                truth.cols(),
                self.theta.rows(),
                self.theta.cols()
            )));
        }
        Ok(self.theta.sub(truth)?.frob_norm())
    }
}

// ======================================================================
// Weighted-noise tail diagnostic
// ======================================================================

/// Convergence diagnostic for the weighted disturbance sums
/// `sum_i phi_i eps_{i+1}^T / r_i`.
///
/// When these partial sums settle to a finite limit with a power-law tail in
/// `r_n`, estimate convergence and transition-product decay become
/// equivalent; the diagnostic measures how credibly that holds on a finite
/// run.
#[derive(Debug, Clone)]
pub struct NoiseTailDiag {
    /// Final partial sum (used as the limit proxy).
    pub partial_sum: Matrix,
    /// `(n, |final - partial_n|_F)` per recorded step.
    pub tail_norms: Vec<(usize, f64)>,
    /// Least-squares slope of `log tail` against `log r_n` over the last
    /// half of the run, negated so positive values mean decay. `None` when
    /// the tail vanishes identically (e.g. zero noise) or too few points
    /// remain.
    pub delta_fit: Option<f64>,
}

/// Number of steps required before the tail diagnostic is meaningful.
pub const MIN_DIAGNOSTIC_STEPS: usize = 100;

/// Computes the weighted-noise tail diagnostic from per-step snapshots and
/// the matching disturbances, where `eps_next[i]` is the disturbance at time
/// `snapshots[i].n + 1`.
pub fn noise_tail_diagnostic(
    snapshots: &[StepSnapshot],
    eps_next: &[Vec<f64>],
) -> Result<NoiseTailDiag> {
    if snapshots.len() != eps_next.len() {
        return Err(Error::DimensionError(format!(
            "{} snapshots against {} disturbances",
            snapshots.len(),
            eps_next.len()
        )));
    }
    if snapshots.len() < MIN_DIAGNOSTIC_STEPS {
        return Err(Error::InsufficientData(format!(
            "tail diagnostic needs at least {MIN_DIAGNOSTIC_STEPS} steps, got {}",
            snapshots.len()
        )));
    }
    let m = snapshots[0].phi.len();
    let d = eps_next[0].len();

    // Running partial sums, recorded per step.
    let mut partial = vec![0.0; m * d];
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(snapshots.len());
    for (snap, eps) in snapshots.iter().zip(eps_next) {
        if snap.phi.len() != m || eps.len() != d {
            return Err(Error::DimensionError(
                "inconsistent snapshot or disturbance width".into(),
            ));
        }
        if snap.r <= 0.0 || snap.r.is_nan() {
            return Err(Error::DataError(format!(
                "nonpositive normalizer {} at step {}",
                snap.r, snap.n
            )));
        }
        let rinv = 1.0 / snap.r;
        for i in 0..m {
            let g = snap.phi[i] * rinv;
            for j in 0..d {
                partial[i * d + j] += g * eps[j];
            }
        }
        history.push(partial.clone());
    }

    let final_sum = history.last().expect("nonempty history").clone();
    let tail_norms: Vec<(usize, f64)> = snapshots
        .iter()
        .zip(&history)
        .map(|(snap, h)| {
            let sq: f64 = final_sum
                .iter()
                .zip(h)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (snap.n, sq.sqrt())
        })
        .collect();

    // Fit log(tail) = intercept - delta * log(r) over the last half,
    // excluding zero tails (the final point is always zero by construction).
    let start = snapshots.len() / 2;
    let pts: Vec<(f64, f64)> = snapshots[start..]
        .iter()
        .zip(&tail_norms[start..])
        .filter(|(_, (_, t))| *t > 0.0)
        .map(|(snap, (_, t))| (snap.r.ln(), t.ln()))
        .collect();
    let delta_fit = if pts.len() < 2 {
        None
    } else {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() < 1e-12 {
            None
        } else {
            Some(-(n * sxy - sx * sy) / denom)
        }
    };

    Ok(NoiseTailDiag {
        partial_sum: Matrix::new(m, d, final_sum)?,
        tail_norms,
        delta_fit,
    })
}
