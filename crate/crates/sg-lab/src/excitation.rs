//! Regressor design with a prescribed conditioning profile.
//!
//! The goal is a deterministic sequence of unit-energy regressors whose
//! information matrix `S_n = sum phi_i phi_i^T` has condition number
//! `kappa(S_n)` growing like `(log r_n)^alpha`, where `r_n = 1 + sum
//! |phi_i|^2` is the accumulated energy. Small `alpha` means mild
//! ill-conditioning (excitation spread almost evenly); `alpha > 1` starves
//! the weak directions so slowly-mixing estimators provably stall — the
//! adversarial regime.
//!
//! The allocator is a greedy deficit tracker over coordinate axes. Each step
//! carries fixed energy; with `T = 2 (log r)^alpha` the target condition
//! number, the weak axes split the fraction `(m - 1) / (T + m - 1)` of the
//! running total evenly and axis 0 takes the rest, which makes the realized
//! `kappa / (log r)^alpha` hover near 2 regardless of the dimension. The
//! targets always sum to the energy actually available, so the greedy choice
//! keeps every directional energy within one step of its target. Until
//! `r_n >= e^2` the logarithm is too small to be meaningful and the
//! allocator just round-robins.

use rand::Rng;

use crate::error::{Error, Result};
use crate::spectral::{condition_number, SymmetricMatrix};

/// The designed condition number aims at `KAPPA_TARGET_SCALE (log r)^alpha`.
/// The scale trades conditioning against weak-axis energy:`1` keeps the
/// profile tight to `(log r)^alpha` while leaving benign exponents enough
/// excitation on every axis for the transition product to keep shrinking.
pub const KAPPA_TARGET_SCALE: f64 = 1.0;

/// Energy threshold below which the allocator round-robins instead of
/// chasing log-scale targets.
pub const ROUND_ROBIN_ENERGY: f64 = std::f64::consts::E * std::f64::consts::E;

// ======================================================================
// Specification
// ======================================================================

/// How the designed excitation enters the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcitationMode {
    /// The designed vectors are used as regressors directly (linear
    /// regression channel).
    DirectRegressor,
    /// Design of an input signal that shapes the regressor spectrum through
    /// the plant dynamics. Reserved; not implemented.
    InputDriven,
}

/// Parameters of a designed excitation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSpec {
    /// Regressor dimension. `1` is allowed as the degenerate scalar case
    /// (the conditioning profile is trivially flat).
    pub dim: usize,
    /// Target growth exponent of the condition number, `>= 0`.
    pub alpha: f64,
    /// Energy `|phi_n|^2` of every step, `> 0`.
    pub step_energy: f64,
    /// Number of designed steps, at least 100.
    pub horizon: usize,
    /// Delivery mode.
    pub mode: ExcitationMode,
}

impl ExcitationSpec {
    /// Validated specification.
    pub fn new(
        dim: usize,
        alpha: f64,
        step_energy: f64,
        horizon: usize,
        mode: ExcitationMode,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ConfigError("regressor dimension must be positive".into()));
        }
        if alpha < 0.0 || !alpha.is_finite() {
            return Err(Error::ConfigError(format!(
                "conditioning exponent must be finite and >= 0, got {alpha}"
            )));
        }
        if step_energy <= 0.0 || !step_energy.is_finite() {
            return Err(Error::ConfigError(format!(
                "step energy must be positive and finite, got {step_energy}"
            )));
        }
        if horizon < 100 {
            return Err(Error::ConfigError(format!(
                "horizon must be at least 100 steps, got {horizon}"
            )));
        }
        Ok(Self {
            dim,
            alpha,
            step_energy,
            horizon,
            mode,
        })
    }

    /// Direct-regressor spec with unit step energy.
    pub fn direct(dim: usize, alpha: f64, horizon: usize) -> Result<Self> {
        Self::new(dim, alpha, 1.0, horizon, ExcitationMode::DirectRegressor)
    }
}

// ======================================================================
// Design
// ======================================================================

/// Designs the regressor sequence `phi_1 .. phi_N` (index 0 of the returned
/// vector is step 1). Every vector is axis-aligned with squared norm exactly
/// `step_energy`; the random state only chooses signs, which the information
/// matrix and all contraction products are blind to.
pub fn design_regressors<R: Rng>(spec: &ExcitationSpec, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if spec.mode == ExcitationMode::InputDriven {
        return Err(Error::ConfigError(
            "input-driven excitation is reserved and not implemented; use direct-regressor mode"
                .into(),
        ));
    }
    let m = spec.dim;
    let e = spec.step_energy;
    let amp = e.sqrt();
    let mut energies = vec![0.0_f64; m];
    let mut r = 1.0_f64;
    let mut phis = Vec::with_capacity(spec.horizon);

    for n in 1..=spec.horizon {
        let r_next = r + e;
        let axis = if m == 1 {
            0
        } else if r_next <= ROUND_ROBIN_ENERGY {
            (n - 1) % m
        } else {
            pick_axis(&energies, r_next, spec.alpha)
        };
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut phi = vec![0.0; m];
        phi[axis] = sign * amp;
        energies[axis] += e;
        r = r_next;
        phis.push(phi);
    }
    Ok(phis)
}

/// Greedy deficit rule: compare every axis's energy against its target share
/// of `r` and feed the most-starved axis (ties to the lowest index).
fn pick_axis(energies: &[f64], r: f64, alpha: f64) -> usize {
    let m = energies.len();
    let log_r = r.ln();
    // log_r >= 2 here because of the round-robin threshold.
    let kappa_target = KAPPA_TARGET_SCALE * log_r.powf(alpha);
    let weak_axes = (m - 1) as f64;
    let weak_fraction = weak_axes / (kappa_target + weak_axes);
    let weak_target = r * weak_fraction / weak_axes;
    let strong_target = r * (1.0 - weak_fraction);

    let mut best = 0;
    let mut best_deficit = strong_target - energies[0];
    for (i, &ei) in energies.iter().enumerate().skip(1) {
        let deficit = weak_target - ei;
        if deficit > best_deficit {
            best_deficit = deficit;
            best = i;
        }
    }
    best
}

/// Designs an adversarial sequence (`alpha > 1`) and returns it together
/// with its measured conditioning profile as the certificate that the
/// super-logarithmic growth was actually realized.
pub fn adversarial_regressors<R: Rng>(
    spec: &ExcitationSpec,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, KappaProfile)> {
    if spec.alpha <= 1.0 || spec.alpha.is_nan() {
        return Err(Error::ConfigError(format!(
            "adversarial design requires a conditioning exponent > 1, got {}",
            spec.alpha
        )));
    }
    let phis = design_regressors(spec, rng)?;
    let stride = (spec.horizon / 512).max(1);
    let profile = measure_kappa_profile(&phis, stride, spec.alpha)?;
    Ok((phis, profile))
}

// ======================================================================
// Profile measurement
// ======================================================================

/// One sampled point of the conditioning profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    /// Step index `n`.
    pub n: usize,
    /// Accumulated energy `r_n`.
    pub r: f64,
    /// Condition number of `S_n`; infinite while `S_n` is singular.
    pub kappa: f64,
    /// `kappa / (log r_n)^alpha`; infinite while `kappa` is.
    pub ratio: f64,
}

/// Sampled conditioning profile of a regressor sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaProfile {
    /// Exponent the ratios are normalized by.
    pub alpha: f64,
    /// Sampled points, in increasing `n`.
    pub points: Vec<ProfilePoint>,
}

impl KappaProfile {
    /// Largest finite ratio over the profile — the measured envelope
    /// constant for `kappa <= M (log r)^alpha`.
    pub fn max_finite_ratio(&self) -> Option<f64> {
        self.points
            .iter()
            .map(|p| p.ratio)
            .filter(|v| v.is_finite())
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }
}

/// Measures `kappa(S_n)` every `stride` steps (and at the final step),
/// where `phis[i]` is the regressor of step `i + 1`.
pub fn measure_kappa_profile(
    phis: &[Vec<f64>],
    stride: usize,
    alpha: f64,
) -> Result<KappaProfile> {
    if stride == 0 {
        return Err(Error::ConfigError("profile stride must be positive".into()));
    }
    if phis.is_empty() {
        return Err(Error::InsufficientData("no regressors to profile".into()));
    }
    let m = phis[0].len();
    let mut s = SymmetricMatrix::zeros(m);
    let mut r = 1.0;
    let mut points = Vec::new();
    for (i, phi) in phis.iter().enumerate() {
        if phi.len() != m {
            return Err(Error::DimensionError(format!(
                "regressor {} has length {}, expected {m}",
                i + 1,
                phi.len()
            )));
        }
        s.add_outer(phi, 1.0);
        r += phi.iter().map(|v| v * v).sum::<f64>();
        let n = i + 1;
        if n % stride == 0 || n == phis.len() {
            let kappa = match condition_number(&s) {
                Ok(k) => k,
                Err(Error::SingularMatrix(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            let ratio = if kappa.is_finite() {
                kappa / r.ln().powf(alpha)
            } else {
                f64::INFINITY
            };
            points.push(ProfilePoint { n, r, kappa, ratio });
        }
    }
    Ok(KappaProfile { alpha, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(axis: usize, m: usize) -> Vec<f64> {
        let mut v = vec![0.0; m];
        v[axis] = 1.0;
        v
    }

    #[test]
    fn spec_validation() {
        assert!(ExcitationSpec::direct(0, 0.5, 1000).is_err());
        assert!(ExcitationSpec::direct(2, -0.1, 1000).is_err());
        assert!(ExcitationSpec::direct(2, 0.5, 99).is_err());
        assert!(ExcitationSpec::new(2, 0.5, 0.0, 1000, ExcitationMode::DirectRegressor).is_err());
        assert!(ExcitationSpec::direct(2, 0.5, 100).is_ok());
    }

    #[test]
    fn input_driven_mode_is_reserved() {
        let spec = ExcitationSpec::new(2, 0.5, 1.0, 1000, ExcitationMode::InputDriven).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            design_regressors(&spec, &mut rng),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn every_step_carries_exact_energy() {
        let spec = ExcitationSpec::new(3, 0.7, 2.5, 500, ExcitationMode::DirectRegressor).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phis = design_regressors(&spec, &mut rng).unwrap();
        assert_eq!(phis.len(), 500);
        let mut r = 1.0;
        for phi in &phis {
            let energy: f64 = phi.iter().map(|v| v * v).sum();
            assert!((energy - 2.5).abs() <= 1e-12 * 2.5);
            r += energy;
        }
        assert_abs_diff_eq!(r, 1.0 + 500.0 * 2.5, epsilon = 1e-9);
    }

    #[test]
    fn design_is_deterministic_under_seed() {
        let spec = ExcitationSpec::direct(2, 0.5, 300).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            design_regressors(&spec, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn scalar_design_is_flat() {
        let spec = ExcitationSpec::direct(1, 2.0, 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phis = design_regressors(&spec, &mut rng).unwrap();
        let profile = measure_kappa_profile(&phis, 10, spec.alpha).unwrap();
        for p in &profile.points {
            assert_eq!(p.kappa, 1.0, "scalar information matrix at n={}", p.n);
        }
    }

    #[test]
    fn alternating_axes_kappa_pattern() {
        // e1, e2, e1, e2, ...: after 2k steps kappa = 1, after 2k+1 steps
        // kappa = (k+1)/k.
        let phis: Vec<Vec<f64>> = (0..9).map(|i| unit(i % 2, 2)).collect();
        let profile = measure_kappa_profile(&phis, 1, 0.0).unwrap();
        assert!(profile.points[0].kappa.is_infinite(), "rank one at n=1");
        assert_eq!(profile.points[1].kappa, 1.0);
        assert_eq!(profile.points[2].kappa, 2.0);
        assert_eq!(profile.points[3].kappa, 1.0);
        assert_eq!(profile.points[4].kappa, 1.5);
        assert_eq!(profile.points[8].kappa, 1.25);
    }

    #[test]
    fn rank_deficient_profile_is_flagged_infinite() {
        let phis: Vec<Vec<f64>> = (0..5).map(|_| unit(0, 2)).collect();
        let profile = measure_kappa_profile(&phis, 1, 0.5).unwrap();
        assert!(profile.points.iter().all(|p| p.kappa.is_infinite()));
        assert!(profile.max_finite_ratio().is_none());
    }

    #[test]
    fn mixed_direction_kappa_matches_closed_form() {
        // (1,1)/sqrt(2), e1, e2: S_3 = [[1.5, 0.5], [0.5, 1.5]], spectrum {1, 2}.
        let s = 0.5_f64.sqrt();
        let phis = vec![vec![s, s], unit(0, 2), unit(1, 2)];
        let profile = measure_kappa_profile(&phis, 1, 0.0).unwrap();
        let last = profile.points.last().unwrap();
        assert_abs_diff_eq!(last.kappa, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn designed_profile_tracks_target_exponent() {
        // Moderate-size version of the fidelity sweep (the full-horizon one
        // lives in the integration suite): for each alpha the measured
        // kappa must stay within a factor 4 of (log r)^alpha over the last
        // 90% of the run.
        for &alpha in &[0.0, 0.5, 1.5] {
            let n = 20_000;
            let spec = ExcitationSpec::direct(2, alpha, n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let phis = design_regressors(&spec, &mut rng).unwrap();
            let profile = measure_kappa_profile(&phis, 500, alpha).unwrap();
            for p in profile.points.iter().filter(|p| p.n >= n / 10) {
                assert!(
                    (0.25..=4.0).contains(&p.ratio),
                    "alpha={alpha}, n={}: ratio {}",
                    p.n,
                    p.ratio
                );
            }
        }
    }

    #[test]
    fn adversarial_requires_super_unit_exponent() {
        let spec = ExcitationSpec::direct(2, 0.9, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            adversarial_regressors(&spec, &mut rng),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn adversarial_profile_certifies_growth() {
        let n = 20_000;
        let spec = ExcitationSpec::direct(2, 1.01, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (phis, profile) = adversarial_regressors(&spec, &mut rng).unwrap();
        assert_eq!(phis.len(), n);
        // The allocator must have left round-robin mode: the strong axis
        // ends up far more energetic than the weak one.
        let last = profile.points.last().unwrap();
        assert!(last.kappa > 4.0, "kappa {}", last.kappa);
        for p in profile.points.iter().filter(|p| p.n >= n / 10) {
            assert!(
                (0.25..=4.0).contains(&p.ratio),
                "n={}: ratio {}",
                p.n,
                p.ratio
            );
        }
    }

    #[test]
    fn profile_stride_validation() {
        let phis = vec![unit(0, 2)];
        assert!(matches!(
            measure_kappa_profile(&phis, 0, 0.5),
            Err(Error::ConfigError(_))
        ));
        assert!(matches!(
            measure_kappa_profile(&[], 1, 0.5),
            Err(Error::InsufficientData(_))
        ));
    }
}
