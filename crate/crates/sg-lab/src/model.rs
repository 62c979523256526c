//! MIMO ARMAX simulation with conditionally scaled noise.
//!
//! The plant is
//!
//! ```text
//! y_n + A_1 y_{n-1} + ... + A_p y_{n-p}
//!     = B_1 u_{n-1} + ... + B_q u_{n-q} + eps_n,
//! eps_n = w_n + C_1 w_{n-1} + ... + C_r w_{n-r},
//! ```
//!
//! with `y, w, eps` of dimension `d` and `u` of dimension `l`. A linear
//! regression is the special case `p = r = 0, q = 1`: the regressor is just
//! the previous input. Values before the start of a trace are zero.
//!
//! The driving noise `w` is a martingale difference whose conditional second
//! moment may grow with the accumulated regressor energy:
//! `E[ |w_n|^2 | past ] = c0 * r_{n-1}^epsilon` with `0 <= epsilon <= 1`.
//! [`generate_noise`] implements that scaling exactly for each supported
//! distribution kind.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::spectral::{eig_extremes, Matrix, SymmetricMatrix};

// ======================================================================
// System description
// ======================================================================

/// Model orders and signal dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orders {
    /// Output dimension.
    pub d: usize,
    /// Input dimension.
    pub l: usize,
    /// Autoregressive order (number of `A_i`).
    pub p: usize,
    /// Exogenous order (number of `B_j`).
    pub q: usize,
    /// Moving-average order (number of `C_k`).
    pub r: usize,
}

impl Orders {
    /// Length of the stacked regressor
    /// `[y_n .. y_{n-p+1}, u_n .. u_{n-q+1}, w_n .. w_{n-r+1}]`.
    pub fn regressor_dim(&self) -> usize {
        self.d * self.p + self.l * self.q + self.d * self.r
    }
}

/// A fully specified ARMAX system.
#[derive(Debug, Clone)]
pub struct ArmaxSystem {
    orders: Orders,
    a: Vec<Matrix>,
    b: Vec<Matrix>,
    c: Vec<Matrix>,
}

impl ArmaxSystem {
    /// Validates coefficient shapes: `A_i` are `d x d`, `B_j` are `d x l`,
    /// `C_k` are `d x d`, and the stacked regressor is nonempty.
    pub fn new(d: usize, l: usize, a: Vec<Matrix>, b: Vec<Matrix>, c: Vec<Matrix>) -> Result<Self> {
        if d == 0 || l == 0 {
            return Err(Error::ConfigError(format!(
                "signal dimensions must be positive, got d={d}, l={l}"
            )));
        }
        for (name, list, rows, cols) in [("A", &a, d, d), ("B", &b, d, l), ("C", &c, d, d)] {
            for (i, m) in list.iter().enumerate() {
                if m.rows() != rows || m.cols() != cols {
                    return Err(Error::ConfigError(format!(
                        "{name}_{} must be {rows}x{cols}, got {}x{}",
                        i + 1,
                        m.rows(),
                        m.cols()
                    )));
                }
            }
        }
        let orders = Orders {
            d,
            l,
            p: a.len(),
            q: b.len(),
            r: c.len(),
        };
        if orders.regressor_dim() == 0 {
            return Err(Error::ConfigError(
                "model has no regressor content (p = q = r = 0)".into(),
            ));
        }
        Ok(Self { orders, a, b, c })
    }

    /// Model orders.
    pub fn orders(&self) -> Orders {
        self.orders
    }

    /// Autoregressive coefficients `A_1 .. A_p`.
    pub fn a(&self) -> &[Matrix] {
        &self.a
    }

    /// Input coefficients `B_1 .. B_q`.
    pub fn b(&self) -> &[Matrix] {
        &self.b
    }

    /// Moving-average coefficients `C_1 .. C_r`.
    pub fn c(&self) -> &[Matrix] {
        &self.c
    }

    /// The stacked true parameter block, shaped so that
    /// `y_{n+1} = theta^T phi_n + w_{n+1}` when the regressor holds the true
    /// noises. Its transpose is `[-A_1 .. -A_p, B_1 .. B_q, C_1 .. C_r]`,
    /// so `theta` itself is `(dp + lq + dr) x d`.
    pub fn stacked_parameters(&self) -> Matrix {
        let Orders { d, l, p, q, r } = self.orders;
        let m = self.orders.regressor_dim();
        let mut theta = Matrix::zeros(m, d);
        let mut row = 0;
        for ai in &self.a {
            // Block rows are the transpose of -A_i.
            for bi in 0..d {
                for col in 0..d {
                    theta.set(row + bi, col, -ai.get(col, bi));
                }
            }
            row += d;
        }
        for bj in &self.b {
            for bi in 0..l {
                for col in 0..d {
                    theta.set(row + bi, col, bj.get(col, bi));
                }
            }
            row += l;
        }
        for ck in &self.c {
            for bi in 0..d {
                for col in 0..d {
                    theta.set(row + bi, col, ck.get(col, bi));
                }
            }
            row += d;
        }
        debug_assert_eq!(row, m);
        let _ = (p, q, r);
        theta
    }
}

// ======================================================================
// Simulation trace
// ======================================================================

/// Time-indexed record of a simulation: outputs, inputs, driving noise, and
/// the filtered disturbance. Row 0 is the initial condition (zero unless set
/// explicitly); values before row 0 are treated as zero.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    d: usize,
    l: usize,
    y: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    eps: Vec<Vec<f64>>,
    zero_d: Vec<f64>,
    zero_l: Vec<f64>,
}

impl SimulationTrace {
    /// Fresh trace with an all-zero initial row.
    pub fn new(d: usize, l: usize) -> Self {
        Self {
            d,
            l,
            y: vec![vec![0.0; d]],
            u: vec![vec![0.0; l]],
            w: vec![vec![0.0; d]],
            eps: vec![vec![0.0; d]],
            zero_d: vec![0.0; d],
            zero_l: vec![0.0; l],
        }
    }

    /// Fresh trace whose initial row carries the given values. The initial
    /// disturbance is taken equal to the initial noise (earlier noise is
    /// zero by convention).
    pub fn with_initial(d: usize, l: usize, y0: &[f64], u0: &[f64], w0: &[f64]) -> Result<Self> {
        if y0.len() != d || w0.len() != d || u0.len() != l {
            return Err(Error::DimensionError(format!(
                "initial row: expected y,w of length {d} and u of length {l}, got {}, {}, {}",
                y0.len(),
                w0.len(),
                u0.len()
            )));
        }
        let mut t = Self::new(d, l);
        t.y[0].copy_from_slice(y0);
        t.u[0].copy_from_slice(u0);
        t.w[0].copy_from_slice(w0);
        t.eps[0].copy_from_slice(w0);
        Ok(t)
    }

    /// Number of recorded rows (initial row included).
    pub fn len(&self) -> usize {
        self.y.len()
    }

    /// True if only the initial row exists.
    pub fn is_empty(&self) -> bool {
        self.len() <= 1
    }

    /// Output dimension.
    pub fn output_dim(&self) -> usize {
        self.d
    }

    /// Input dimension.
    pub fn input_dim(&self) -> usize {
        self.l
    }

    /// Output at time `n`, zero for `n` before the trace start.
    pub fn y_at(&self, n: isize) -> &[f64] {
        if n < 0 {
            &self.zero_d
        } else {
            &self.y[n as usize]
        }
    }

    /// Input at time `n`, zero-padded.
    pub fn u_at(&self, n: isize) -> &[f64] {
        if n < 0 {
            &self.zero_l
        } else {
            &self.u[n as usize]
        }
    }

    /// Driving noise at time `n`, zero-padded.
    pub fn w_at(&self, n: isize) -> &[f64] {
        if n < 0 {
            &self.zero_d
        } else {
            &self.w[n as usize]
        }
    }

    /// Filtered disturbance at time `n`, zero-padded.
    pub fn eps_at(&self, n: isize) -> &[f64] {
        if n < 0 {
            &self.zero_d
        } else {
            &self.eps[n as usize]
        }
    }
}

/// Advances the trace by one step: computes `y_n` at `n = trace.len()` from
/// the recorded past, the new input `u_n`, and the new driving noise `w_n`,
/// then appends the row. Returns the new output.
///
/// Note the input enters with a one-step delay (`B_1` multiplies `u_{n-1}`),
/// so `u_next` only affects outputs from `n + 1` on.
pub fn simulate_step(
    sys: &ArmaxSystem,
    trace: &mut SimulationTrace,
    u_next: &[f64],
    w_next: &[f64],
) -> Result<Vec<f64>> {
    let Orders { d, l, p, q, r } = sys.orders();
    if trace.d != d || trace.l != l {
        return Err(Error::DimensionError(format!(
            "trace dimensions ({}, {}) do not match system ({d}, {l})",
            trace.d, trace.l
        )));
    }
    if u_next.len() != l || w_next.len() != d {
        return Err(Error::DimensionError(format!(
            "expected input of length {l} and noise of length {d}, got {} and {}",
            u_next.len(),
            w_next.len()
        )));
    }
    if !u_next.iter().chain(w_next).all(|v| v.is_finite()) {
        return Err(Error::DataError("non-finite input or noise".into()));
    }

    let n = trace.len() as isize;
    let mut eps = w_next.to_vec();
    for (k, ck) in sys.c.iter().enumerate() {
        let wk = trace.w_at(n - 1 - k as isize);
        for i in 0..d {
            for j in 0..d {
                eps[i] += ck.get(i, j) * wk[j];
            }
        }
    }

    let mut y = eps.clone();
    for (i_lag, ai) in sys.a.iter().enumerate() {
        let yk = trace.y_at(n - 1 - i_lag as isize);
        for i in 0..d {
            for j in 0..d {
                y[i] -= ai.get(i, j) * yk[j];
            }
        }
    }
    for (j_lag, bj) in sys.b.iter().enumerate() {
        let uk = trace.u_at(n - 1 - j_lag as isize);
        for i in 0..d {
            for j in 0..l {
                y[i] += bj.get(i, j) * uk[j];
            }
        }
    }
    let _ = (p, q, r);

    trace.y.push(y.clone());
    trace.u.push(u_next.to_vec());
    trace.w.push(w_next.to_vec());
    trace.eps.push(eps);
    Ok(y)
}

// ======================================================================
// Noise generation
// ======================================================================

/// Distribution family of the driving noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Independent Gaussian components.
    Gaussian,
    /// Independent uniform components on a symmetric interval (bounded
    /// support, useful when almost-sure bounds matter).
    BoundedUniform,
    /// Identically zero (deterministic runs).
    Zero,
}

/// Driving-noise specification. The conditional second moment of the whole
/// vector is `c0 * r_prev^epsilon`, split evenly across components.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Base second moment (`> 0`).
    pub c0: f64,
    /// Energy-growth exponent in `[0, 1]`.
    pub epsilon: f64,
    /// Distribution family.
    pub kind: NoiseKind,
    /// Seed for the dedicated noise stream.
    pub seed: u64,
}

impl NoiseModel {
    /// Validates the moment parameters.
    pub fn new(c0: f64, epsilon: f64, kind: NoiseKind, seed: u64) -> Result<Self> {
        if c0 <= 0.0 || !c0.is_finite() {
            return Err(Error::ConfigError(format!(
                "noise base moment must be positive and finite, got {c0}"
            )));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::ConfigError(format!(
                "noise growth exponent must lie in [0, 1], got {epsilon}"
            )));
        }
        Ok(Self {
            c0,
            epsilon,
            kind,
            seed,
        })
    }

    /// Fresh generator for this noise stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Draws one noise vector of dimension `d` with conditional second moment
/// `c0 * r_prev^epsilon` split evenly across components.
pub fn generate_noise<R: Rng>(
    nm: &NoiseModel,
    d: usize,
    r_prev: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::ConfigError("noise dimension must be positive".into()));
    }
    if r_prev <= 0.0 || !r_prev.is_finite() {
        return Err(Error::DomainError(format!(
            "energy normalizer must be positive and finite, got {r_prev}"
        )));
    }
    let per_component = nm.c0 * r_prev.powf(nm.epsilon) / d as f64;
    match nm.kind {
        NoiseKind::Zero => Ok(vec![0.0; d]),
        NoiseKind::Gaussian => {
            let sd = per_component.sqrt();
            Ok((0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    sd * z
                })
                .collect())
        }
        NoiseKind::BoundedUniform => {
            // Uniform on [-amp, amp] has variance amp^2 / 3.
            let amp = (3.0 * per_component).sqrt();
            Ok((0..d).map(|_| rng.random_range(-amp..=amp)).collect())
        }
    }
}

// ======================================================================
// Strict positive realness of the noise polynomial
// ======================================================================

/// Result of the frequency-grid positivity test on `C(z) - I/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SprReport {
    /// True when the minimum real eigenvalue is strictly positive *and* the
    /// polynomial has no roots on or inside the unit circle.
    pub is_spr: bool,
    /// Minimum over the grid of the smallest eigenvalue of the Hermitian
    /// part of `C(e^{i w}) - I/2`.
    pub min_real_eig: f64,
    /// Frequency (radians in `[0, 2 pi)`) where the minimum is attained.
    pub argmin_freq: f64,
    /// True when `det C(z)` has no zeros on or inside the unit circle,
    /// decided by a winding-number count along the grid.
    pub stable: bool,
}

/// Grid size used when callers have no reason to pick another one.
pub const DEFAULT_SPR_GRID: usize = 4096;

/// Tests strict positive realness of `C(z) - I/2` on a uniform frequency
/// grid, where `C(z) = I + C_1 z + ... + C_r z^r` is the system's
/// moving-average polynomial.
///
/// With `r = 0` the polynomial is the identity and the test passes
/// trivially (minimum eigenvalue `1/2`). The grid must have at least 8
/// points; pass [`DEFAULT_SPR_GRID`] unless resolving a near-boundary case.
pub fn check_spr(sys: &ArmaxSystem, grid_size: usize) -> Result<SprReport> {
    if grid_size < 8 {
        return Err(Error::ConfigError(format!(
            "frequency grid must have at least 8 points, got {grid_size}"
        )));
    }
    let d = sys.orders().d;
    if sys.c.is_empty() {
        return Ok(SprReport {
            is_spr: true,
            min_real_eig: 0.5,
            argmin_freq: 0.0,
            stable: true,
        });
    }

    let mut min_real_eig = f64::INFINITY;
    let mut argmin_freq = 0.0;
    let mut prev_det: Option<(f64, f64)> = None;
    let mut first_det = (0.0, 0.0);
    let mut total_arg = 0.0;
    let mut min_det_mod = f64::INFINITY;

    for g in 0..grid_size {
        let omega = 2.0 * std::f64::consts::PI * g as f64 / grid_size as f64;
        // C(e^{iw}) = X + iY with real d x d parts.
        let mut x = Matrix::identity(d);
        let mut yim = Matrix::zeros(d, d);
        for (k, ck) in sys.c.iter().enumerate() {
            let (s, c) = ((k + 1) as f64 * omega).sin_cos();
            for i in 0..d {
                for j in 0..d {
                    x.set(i, j, x.get(i, j) + c * ck.get(i, j));
                    yim.set(i, j, yim.get(i, j) + s * ck.get(i, j));
                }
            }
        }

        // Hermitian part of (X - I/2) + iY, embedded as the real symmetric
        // [[Kx, -Ky], [Ky, Kx]] whose spectrum doubles the complex one.
        let mut embed = vec![0.0; (2 * d) * (2 * d)];
        for i in 0..d {
            for j in 0..d {
                let mut kx = 0.5 * (x.get(i, j) + x.get(j, i));
                if i == j {
                    kx -= 0.5;
                }
                let ky = 0.5 * (yim.get(i, j) - yim.get(j, i));
                embed[i * 2 * d + j] = kx;
                embed[(i + d) * 2 * d + (j + d)] = kx;
                embed[i * 2 * d + (j + d)] = -ky;
                embed[(i + d) * 2 * d + j] = ky;
            }
        }
        let herm = SymmetricMatrix::new(2 * d, embed)?;
        let (lo, _) = eig_extremes(&herm)?;
        if lo < min_real_eig {
            min_real_eig = lo;
            argmin_freq = omega;
        }

        // Winding of det C(e^{iw}) for the root-location flag.
        let det = complex_det(&x, &yim);
        let modulus = (det.0 * det.0 + det.1 * det.1).sqrt();
        min_det_mod = min_det_mod.min(modulus);
        if let Some(p) = prev_det {
            total_arg += arg_increment(p, det);
        } else {
            first_det = det;
        }
        prev_det = Some(det);
    }
    if let Some(p) = prev_det {
        total_arg += arg_increment(p, first_det);
    }
    let winding = (total_arg / (2.0 * std::f64::consts::PI)).round() as i64;
    // Scale for "det is numerically zero on the circle".
    let det_scale = 1.0 + sys.c.iter().map(|m| m.frob_norm()).sum::<f64>();
    let stable = winding == 0 && min_det_mod > 1e-9 * det_scale.powi(d as i32);

    Ok(SprReport {
        is_spr: min_real_eig > 0.0 && stable,
        min_real_eig,
        argmin_freq,
        stable,
    })
}

/// Determinant of the complex matrix `X + iY` by Gaussian elimination with
/// partial pivoting on the modulus.
fn complex_det(x: &Matrix, y: &Matrix) -> (f64, f64) {
    let d = x.rows();
    let mut re = vec![0.0; d * d];
    let mut im = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            re[i * d + j] = x.get(i, j);
            im[i * d + j] = y.get(i, j);
        }
    }
    let mut det = (1.0, 0.0);
    for col in 0..d {
        let (mut pivot, mut pmag) = (col, 0.0);
        for row in col..d {
            let mag = re[row * d + col] * re[row * d + col] + im[row * d + col] * im[row * d + col];
            if mag > pmag {
                pmag = mag;
                pivot = row;
            }
        }
        if pmag == 0.0 {
            return (0.0, 0.0);
        }
        if pivot != col {
            for j in 0..d {
                re.swap(col * d + j, pivot * d + j);
                im.swap(col * d + j, pivot * d + j);
            }
            det = (-det.0, -det.1);
        }
        let (pr, pi) = (re[col * d + col], im[col * d + col]);
        det = (det.0 * pr - det.1 * pi, det.0 * pi + det.1 * pr);
        let inv = 1.0 / (pr * pr + pi * pi);
        for row in (col + 1)..d {
            let (ar, ai) = (re[row * d + col], im[row * d + col]);
            // a / p
            let fr = (ar * pr + ai * pi) * inv;
            let fi = (ai * pr - ar * pi) * inv;
            for j in col..d {
                let (br, bi) = (re[col * d + j], im[col * d + j]);
                re[row * d + j] -= fr * br - fi * bi;
                im[row * d + j] -= fr * bi + fi * br;
            }
        }
    }
    det
}

/// Signed argument change from complex `a` to complex `b`, in `(-pi, pi]`.
fn arg_increment(a: (f64, f64), b: (f64, f64)) -> f64 {
    // arg(b / a) = arg(b * conj(a))
    let re = b.0 * a.0 + b.1 * a.1;
    let im = b.1 * a.0 - b.0 * a.1;
    im.atan2(re)
}
