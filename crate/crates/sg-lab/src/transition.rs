//! Exact tracking of the instrumental transition products.
//!
//! The homogeneous part of the stochastic-gradient error recursion is
//! `x_{i+1} = (I - A_i) x_i` with `A_i = phi_i phi_i^T / r_i`. The product
//! `Phi(n, k) = (I - A_{n-1}) ... (I - A_k)` therefore propagates an error
//! made at step `k` to step `n`; its spectral norm is the quantity every
//! contraction bound in this crate is trying to certify from the outside.
//! Because `|phi_i|^2 <= r_i`, each factor is a (possibly degenerate)
//! orthogonal deflation and the norm is nonincreasing in `n`.
//!
//! [`TransitionTracker`] maintains `Phi(n, k)` exactly for a set of anchor
//! steps `k`, updating every product by one rank-one deflation per step.
//! Probe vectors ride the same recursion and record the deflation
//! coefficients `u_j = phihat_j^T x_j`, whose squares are bounded by the
//! energy the probe sheds — the measurable core of the block bounds.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::spectral::{spectral_norm, Matrix};

/// A vector evolved through the error recursion from an anchor step.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    /// Step the probe was injected at.
    pub start: usize,
    /// Squared norm at injection.
    pub initial_sq: f64,
    /// Current state `x_n`.
    pub x: Vec<f64>,
    /// Deflation coefficients `phihat_j^T x_j`, one per elapsed step.
    pub projections: Vec<f64>,
}

impl ProbeRecord {
    /// Slack in the shed-energy inequality
    /// `sum_j u_j^2 <= |x_start|^2 - |x_now|^2`; nonnegative up to
    /// rounding for any admissible sequence.
    pub fn energy_slack(&self) -> f64 {
        let current_sq: f64 = self.x.iter().map(|v| v * v).sum();
        let shed = self.initial_sq - current_sq;
        let projected: f64 = self.projections.iter().map(|u| u * u).sum();
        shed - projected
    }
}

/// Running state of the transition products for a set of anchors.
#[derive(Debug, Clone)]
pub struct TransitionTracker {
    dim: usize,
    n: usize,
    anchors: BTreeMap<usize, Matrix>,
    probes: Vec<ProbeRecord>,
}

impl TransitionTracker {
    /// Tracker at step 0 with no anchors.
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionError("state dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            n: 0,
            anchors: BTreeMap::new(),
            probes: Vec::new(),
        })
    }

    /// Current step index `n`.
    pub fn step_index(&self) -> usize {
        self.n
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Anchor steps currently tracked, in increasing order.
    pub fn anchor_steps(&self) -> Vec<usize> {
        self.anchors.keys().copied().collect()
    }

    /// Starts tracking `Phi(n, k)` from the current step (`k` must equal
    /// the tracker's step index: products cannot be opened retroactively).
    pub fn add_anchor(&mut self, k: usize) -> Result<()> {
        if k != self.n {
            return Err(Error::AnchorError(format!(
                "anchor {k} must be opened at the current step {}",
                self.n
            )));
        }
        self.anchors.entry(k).or_insert_with(|| Matrix::identity(self.dim));
        Ok(())
    }

    /// Injects a probe vector at the current step and returns its id.
    pub fn add_probe(&mut self, x: Vec<f64>) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::DimensionError(format!(
                "probe has length {}, expected {}",
                x.len(),
                self.dim
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::DataError("probe vector has non-finite entries".into()));
        }
        let initial_sq = x.iter().map(|v| v * v).sum();
        self.probes.push(ProbeRecord {
            start: self.n,
            initial_sq,
            x,
            projections: Vec::new(),
        });
        Ok(self.probes.len() - 1)
    }

    /// Probe state by id.
    pub fn probe(&self, id: usize) -> Result<&ProbeRecord> {
        self.probes
            .get(id)
            .ok_or_else(|| Error::AnchorError(format!("unknown probe id {id}")))
    }

    /// Applies one deflation step with regressor `phi` and normalizer `r`,
    /// advancing `n` by one. Fails if `|phi|^2 > r` (the factor would
    /// expand instead of contract) so that a mis-sequenced normalizer is
    /// caught immediately rather than surfacing as a norm increase later.
    pub fn step(&mut self, phi: &[f64], r: f64) -> Result<()> {
        if phi.len() != self.dim {
            return Err(Error::DimensionError(format!(
                "regressor has length {}, expected {}",
                phi.len(),
                self.dim
            )));
        }
        if r <= 0.0 || !r.is_finite() {
            return Err(Error::DataError(format!("normalizer must be positive, got {r}")));
        }
        let energy: f64 = phi.iter().map(|v| v * v).sum();
        let a = energy / r;
        if a > 1.0 + 1e-12 {
            return Err(Error::ContractionViolation(format!(
                "step {}: |phi|^2 / r = {a} exceeds 1; normalizer lags the regressor energy",
                self.n
            )));
        }
        // phihat = phi / sqrt(r): the factor is I - phihat phihat^T.
        let inv_sqrt_r = 1.0 / r.sqrt();
        let phihat: Vec<f64> = phi.iter().map(|v| v * inv_sqrt_r).collect();

        for p in self.anchors.values_mut() {
            deflate_columns(p, &phihat);
        }
        for probe in &mut self.probes {
            let u: f64 = phihat.iter().zip(&probe.x).map(|(h, x)| h * x).sum();
            for (x, h) in probe.x.iter_mut().zip(&phihat) {
                *x -= h * u;
            }
            probe.projections.push(u);
        }
        self.n += 1;
        Ok(())
    }

    /// The exact matrix `Phi(n, k)` for an anchored `k`.
    pub fn product(&self, k: usize) -> Result<&Matrix> {
        self.anchors
            .get(&k)
            .ok_or_else(|| Error::AnchorError(format!("no anchor at step {k}")))
    }

    /// Spectral norm of `Phi(n, k)` for an anchored `k`.
    pub fn exact_norm(&self, k: usize) -> Result<f64> {
        spectral_norm(self.product(k)?)
    }
}

/// In-place `P <- (I - h h^T) P` for a unit-or-shorter vector `h`.
fn deflate_columns(p: &mut Matrix, phihat: &[f64]) {
    let dim = phihat.len();
    // w = h^T P (one pass over P), then P -= h w^T.
    let mut w = vec![0.0; dim];
    for (i, &hi) in phihat.iter().enumerate() {
        if hi == 0.0 {
            continue;
        }
        for (j, wj) in w.iter_mut().enumerate() {
            *wj += hi * p.get(i, j);
        }
    }
    for (i, &hi) in phihat.iter().enumerate() {
        if hi == 0.0 {
            continue;
        }
        for (j, &wj) in w.iter().enumerate() {
            let v = p.get(i, j) - hi * wj;
            p.set(i, j, v);
        }
    }
}

/// Recomputes `Phi(n, k)` from scratch by explicit left-multiplication of
/// the factors `(I - phi_i phi_i^T / r_i)` for `i = k .. n-1`, where
/// `phis[i]` and `rs[i]` describe step `i`. Independent of the tracker's
/// incremental update; used as its oracle.
pub fn recompute_product(phis: &[Vec<f64>], rs: &[f64], k: usize, n: usize) -> Result<Matrix> {
    if phis.len() != rs.len() {
        return Err(Error::DimensionError(format!(
            "{} regressors but {} normalizers",
            phis.len(),
            rs.len()
        )));
    }
    if k > n || n > phis.len() {
        return Err(Error::ConfigError(format!(
            "product range [{k}, {n}) outside the recorded {} steps",
            phis.len()
        )));
    }
    let dim = phis
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::InsufficientData("no steps recorded".into()))?;
    let mut product = Matrix::identity(dim);
    for i in k..n {
        let phi = &phis[i];
        let r = rs[i];
        if r <= 0.0 || r.is_nan() {
            return Err(Error::DataError(format!("normalizer at step {i} must be positive")));
        }
        let mut factor = Matrix::identity(dim);
        for a in 0..dim {
            for b in 0..dim {
                let v = factor.get(a, b) - phi[a] * phi[b] / r;
                factor.set(a, b, v);
            }
        }
        product = factor.mul(&product)?;
    }
    Ok(product)
}
