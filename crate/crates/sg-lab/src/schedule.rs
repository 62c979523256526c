//! Factorial block schedule over the accumulated-energy curve.
//!
//! Block boundaries are set where the normalizer `r_n` first crosses the
//! factorials: `t_k = min { j : r_j >= k! }`. Partitioning `[0, N)` at these
//! points makes the per-block overlap-energy estimate summable: the gap
//! `log r_{t_k - 1} - log r_{t_{k-1} - 1}` grows like `k log k` while the
//! blocks' deflation budgets shrink like `1 / (k-1)!` relative to the energy
//! accumulated so far.
//!
//! Because `r_n` can jump (a single step may carry a lot of energy), the
//! boundaries are certified after the fact: with `l` the largest measured
//! one-step energy ratio `r_n / r_{n-1}`, consecutive boundary energies must
//! satisfy `k / l < r_{t_k} / r_{t_{k-1}} < l k`, and each boundary must be
//! minimal (`r_{t_k - 1} < k! <= r_{t_k}`). Factorials are exact in `u64`
//! through `20!`; beyond that the crossing is resolved in log space.

use crate::error::{Error, Result};

/// Largest `k` whose factorial is computed exactly in `u64` (and is exactly
/// representable in `f64`, since `20!` carries 18 factors of two).
pub const MAX_EXACT_FACTORIAL: u64 = 20;

/// Factorial block boundaries; `t[k - 1]` holds `t_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSchedule {
    /// Boundaries `t_1, t_2, ...` in increasing block order.
    pub t: Vec<usize>,
}

impl BlockSchedule {
    /// Largest block index `K` with a boundary.
    pub fn max_block(&self) -> usize {
        self.t.len()
    }

    /// Boundary step `t_k`.
    pub fn boundary(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.t.len() {
            return Err(Error::ConfigError(format!(
                "block index {k} outside the scheduled range 1..={}",
                self.t.len()
            )));
        }
        Ok(self.t[k - 1])
    }

    /// Half-open step ranges `[t_{k-1}, t_k)` for `k = 2..=K`, with their
    /// block index.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.t
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i + 2, w[0], w[1]))
    }
}

/// `log(k!)` as a plain sum of logarithms; exact factorials are reproduced
/// to well under 1e-12 relative error through `k = 20`.
pub fn log_factorial(k: u64) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Whether `r` has reached `k!`, exactly for `k <= 20` and in log space
/// beyond.
fn reaches_factorial(r: f64, k: u64) -> bool {
    if k <= MAX_EXACT_FACTORIAL {
        r >= (1..=k).product::<u64>() as f64
    } else {
        r.ln() >= log_factorial(k)
    }
}

fn validate_energy_curve(rs: &[f64]) -> Result<()> {
    if rs.is_empty() {
        return Err(Error::InsufficientData("empty energy curve".into()));
    }
    if !rs.iter().all(|v| v.is_finite()) {
        return Err(Error::DataError("energy curve has non-finite entries".into()));
    }
    if rs[0] < 1.0 - 1e-9 {
        return Err(Error::DataError(format!(
            "energy curve must start from the unit normalizer, got r_0 = {}",
            rs[0]
        )));
    }
    for (n, w) in rs.windows(2).enumerate() {
        if w[1] < w[0] {
            return Err(Error::DataError(format!(
                "energy curve decreases at step {}: {} -> {}",
                n + 1,
                w[0],
                w[1]
            )));
        }
    }
    Ok(())
}

/// Builds the factorial schedule from the energy curve `rs[j] = r_j`
/// (index 0 is `r_0`). Fails with `InsufficientHorizon` when the curve never
/// reaches `2! = 2`, i.e. there is not even one complete block.
pub fn factorial_schedule(rs: &[f64]) -> Result<BlockSchedule> {
    validate_energy_curve(rs)?;
    let r_max = *rs.last().unwrap();
    if !reaches_factorial(r_max, 2) {
        return Err(Error::InsufficientHorizon(format!(
            "energy curve tops out at {r_max} < 2; no complete block exists"
        )));
    }
    let mut t = Vec::new();
    let mut k: u64 = 1;
    for (j, &r) in rs.iter().enumerate() {
        // One step can cross several factorial thresholds at once.
        while reaches_factorial(r, k) {
            t.push(j);
            k += 1;
        }
    }
    Ok(BlockSchedule { t })
}

/// Largest one-step energy ratio `max_n r_n / r_{n-1}` over the curve.
pub fn max_step_ratio(rs: &[f64]) -> Result<f64> {
    validate_energy_curve(rs)?;
    if rs.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least two points to measure a step ratio".into(),
        ));
    }
    Ok(rs
        .windows(2)
        .map(|w| w[1] / w[0])
        .fold(1.0_f64, f64::max))
}

/// Outcome of one boundary-ratio certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioCert {
    /// Block index `k >= 2`.
    pub k: usize,
    /// `r_{t_k} / r_{t_{k-1}}`.
    pub ratio: f64,
    /// Lower admissible bound `k / l`.
    pub lower: f64,
    /// Upper admissible bound `l k`.
    pub upper: f64,
    /// Whether `lower < ratio < upper`.
    pub pass: bool,
}

/// Certifies every consecutive boundary pair against the jump constant `l`.
/// Reports all outcomes instead of failing on the first violation.
pub fn ratio_certificates(
    rs: &[f64],
    schedule: &BlockSchedule,
    l: f64,
) -> Result<Vec<RatioCert>> {
    validate_energy_curve(rs)?;
    if l < 1.0 || !l.is_finite() {
        return Err(Error::ConfigError(format!(
            "jump constant must be finite and >= 1, got {l}"
        )));
    }
    let mut certs = Vec::new();
    for (k, t_prev, t_k) in schedule.blocks() {
        if t_k >= rs.len() {
            return Err(Error::ConfigError(format!(
                "boundary t_{k} = {t_k} outside the {}-point energy curve",
                rs.len()
            )));
        }
        let ratio = rs[t_k] / rs[t_prev];
        let lower = k as f64 / l;
        let upper = l * k as f64;
        certs.push(RatioCert {
            k,
            ratio,
            lower,
            upper,
            pass: lower < ratio && ratio < upper,
        });
    }
    Ok(certs)
}

/// Outcome of one boundary-minimality certificate, in log-energy space so
/// arbitrarily late blocks compare cleanly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimalityCert {
    /// Block index.
    pub k: usize,
    /// `log r_{t_k - 1}`; negative infinity when `t_k = 0`.
    pub log_before: f64,
    /// `log k!`.
    pub log_threshold: f64,
    /// `log r_{t_k}`.
    pub log_at: f64,
    /// Whether `r_{t_k - 1} < k! <= r_{t_k}`.
    pub pass: bool,
}

/// Certifies that every boundary is the first crossing of its factorial.
pub fn minimality_certificates(
    rs: &[f64],
    schedule: &BlockSchedule,
) -> Result<Vec<MinimalityCert>> {
    validate_energy_curve(rs)?;
    let mut certs = Vec::new();
    for (i, &t_k) in schedule.t.iter().enumerate() {
        let k = i + 1;
        if t_k >= rs.len() {
            return Err(Error::ConfigError(format!(
                "boundary t_{k} = {t_k} outside the {}-point energy curve",
                rs.len()
            )));
        }
        let log_threshold = log_factorial(k as u64);
        let log_at = rs[t_k].ln();
        let log_before = if t_k == 0 {
            f64::NEG_INFINITY
        } else {
            rs[t_k - 1].ln()
        };
        // Through 20! compare in plain energy space (both sides exact);
        // beyond, in log space, consistently with the scheduler itself.
        let (below_ok, at_ok) = if (k as u64) <= MAX_EXACT_FACTORIAL {
            let threshold = (1..=k as u64).product::<u64>() as f64;
            (
                t_k == 0 || rs[t_k - 1] < threshold,
                rs[t_k] >= threshold,
            )
        } else {
            (log_before < log_threshold, log_at >= log_threshold)
        };
        certs.push(MinimalityCert {
            k,
            log_before,
            log_threshold,
            log_at,
            pass: below_ok && at_ok,
        });
    }
    Ok(certs)
}
