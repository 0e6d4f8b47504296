//! Geometry, large-scale path loss, small-scale fading and the composite
//! BS→user channel through the reflecting surface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64};

/// A point in meters. Users live on the ground plane (z = 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::Domain("position must be finite".into()));
        }
        if z < 0.0 {
            return Err(Error::Domain(format!("height must be non-negative, got {z}")));
        }
        Ok(Self { x, y, z })
    }

    pub fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn distance(&self, other: &Position3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2))
            .sqrt()
    }
}

/// `η(d) = c0 · (d/d0)^(−alpha)` for one link class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossParams {
    pub c0: f64,
    pub d0: f64,
    pub alpha: f64,
}

impl PathLossParams {
    pub fn new(c0: f64, d0: f64, alpha: f64) -> Result<Self> {
        if !(c0 > 0.0 && d0 > 0.0 && alpha > 0.0) {
            return Err(Error::Domain(format!(
                "path-loss parameters must be positive (c0={c0}, d0={d0}, alpha={alpha})"
            )));
        }
        Ok(Self { c0, d0, alpha })
    }
}

pub fn path_loss(d: f64, p: &PathLossParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("link distance must be positive, got {d}")));
    }
    Ok(p.c0 * (d / p.d0).powf(-p.alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkClass {
    BsUser,
    BsRis,
    RisUser,
}

/// Path-loss constants for the three link classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModel {
    pub c0: f64,
    pub d0: f64,
    pub alpha_bs_user: f64,
    pub alpha_bs_ris: f64,
    pub alpha_ris_user: f64,
}

impl Default for PathLossModel {
    /// -30 dB at 1 m; exponents 3.5 (BS-MU), 2.2 (BS-RIS), 2.8 (RIS-MU).
    fn default() -> Self {
        Self {
            c0: 1e-3,
            d0: 1.0,
            alpha_bs_user: 3.5,
            alpha_bs_ris: 2.2,
            alpha_ris_user: 2.8,
        }
    }
}

impl PathLossModel {
    pub fn params(&self, class: LinkClass) -> PathLossParams {
        let alpha = match class {
            LinkClass::BsUser => self.alpha_bs_user,
            LinkClass::BsRis => self.alpha_bs_ris,
            LinkClass::RisUser => self.alpha_ris_user,
        };
        PathLossParams {
            c0: self.c0,
            d0: self.d0,
            alpha,
        }
    }

    /// Amplitude factor `√η(d)` applied to a small-scale channel.
    pub fn amplitude(&self, class: LinkClass, d: f64) -> Result<f64> {
        Ok(path_loss(d, &self.params(class))?.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FadingKind {
    Rayleigh,
    /// `k_factor` is linear; `los` must have the requested shape.
    Rician { k_factor: f64, los: ComplexMatrix },
}

/// Circularly symmetric complex Gaussian entries with unit second moment.
pub fn rayleigh<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

/// `√(K/(K+1))·los + √(1/(K+1))·scatter`.
pub fn rician_compose(
    k_factor: f64,
    los: &ComplexMatrix,
    scatter: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    if !(k_factor >= 0.0) {
        return Err(Error::Domain(format!("Rician K-factor must be >= 0, got {k_factor}")));
    }
    if los.shape() != scatter.shape() {
        return Err(Error::dim(
            "rician_compose",
            format!("{}x{}", scatter.rows(), scatter.cols()),
            format!("{}x{}", los.rows(), los.cols()),
        ));
    }
    let (a, b) = if k_factor.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k_factor / (k_factor + 1.0)).sqrt(), (1.0 / (k_factor + 1.0)).sqrt())
    };
    los.scale_real(a).add(&scatter.scale_real(b))
}

pub fn sample_fading(rows: usize, cols: usize, kind: &FadingKind, seed: u64) -> Result<ComplexMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_fading_with(rows, cols, kind, &mut rng)
}

pub fn sample_fading_with<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    kind: &FadingKind,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Domain("fading matrix needs at least one row and column".into()));
    }
    match kind {
        FadingKind::Rayleigh => Ok(rayleigh(rows, cols, rng)),
        FadingKind::Rician { k_factor, los } => {
            if los.rows() != rows || los.cols() != cols {
                return Err(Error::dim(
                    "sample_fading",
                    format!("{rows}x{cols} LoS component"),
                    format!("{}x{}", los.rows(), los.cols()),
                ));
            }
            let scatter = rayleigh(rows, cols, rng);
            rician_compose(*k_factor, los, &scatter)
        }
    }
}

/// Half-wavelength uniform linear array response for direction cosine `cos_angle`.
pub fn ula_steering(n: usize, cos_angle: f64) -> ComplexMatrix {
    let v: Vec<C64> = (0..n)
        .map(|i| C64::from_polar(1.0, PI * i as f64 * cos_angle))
        .collect();
    ComplexMatrix::column_vector(&v)
}

/// Rank-one line-of-sight BS→RIS component (N×M), both arrays along the x axis.
pub fn los_bs_ris(bs: &Position3, ris: &Position3, n: usize, m: usize) -> ComplexMatrix {
    let d = bs.distance(ris).max(f64::MIN_POSITIVE);
    let cos = (ris.x - bs.x) / d;
    let arrival = ula_steering(n, -cos);
    let departure = ula_steering(m, cos);
    arrival
        .matmul(&departure.adjoint())
        .expect("steering vectors are column vectors")
}

/// Reduces an angle to `[0, 2π)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Reflection coefficients of the surface. Amplitude is fixed at one.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    theta: Vec<f64>,
    beta: f64,
}

impl PhaseConfig {
    pub fn new(theta: &[f64]) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("phase shifts must be finite".into()));
        }
        Ok(Self {
            theta: theta.iter().map(|&t| wrap_phase(t)).collect(),
            beta: 1.0,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn coefficients(&self) -> impl Iterator<Item = C64> + '_ {
        self.theta.iter().map(|&t| C64::from_polar(self.beta, t))
    }
}

/// Diagonal matrix `Θ = diag(β·e^{jθ_n})`.
pub fn phase_matrix(cfg: &PhaseConfig) -> ComplexMatrix {
    let d: Vec<C64> = cfg.coefficients().collect();
    ComplexMatrix::diagonal(&d)
}

/// Effective channel `h_directᴴ + h_risᴴ·Θ·H_bs_ris` as a 1×M row.
pub fn composite_channel(
    h_direct: &ComplexMatrix,
    h_ris_user: &ComplexMatrix,
    cfg: &PhaseConfig,
    h_bs_ris: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    let m = h_direct.cols();
    let n = cfg.len();
    if h_direct.rows() != 1 {
        return Err(Error::dim("composite_channel", "1xM direct channel", format!("{}x{m}", h_direct.rows())));
    }
    if h_ris_user.rows() != 1 || h_ris_user.cols() != n {
        return Err(Error::dim(
            "composite_channel",
            format!("1x{n} RIS-user channel"),
            format!("{}x{}", h_ris_user.rows(), h_ris_user.cols()),
        ));
    }
    if h_bs_ris.rows() != n || h_bs_ris.cols() != m {
        return Err(Error::dim(
            "composite_channel",
            format!("{n}x{m} BS-RIS channel"),
            format!("{}x{}", h_bs_ris.rows(), h_bs_ris.cols()),
        ));
    }
    let reflect: Vec<C64> = h_ris_user
        .iter()
        .zip(cfg.coefficients())
        .map(|(h, phi)| h * phi)
        .collect();
    let reflect = ComplexMatrix::row_vector(&reflect);
    h_direct.add(&reflect.matmul(h_bs_ris)?)
}
