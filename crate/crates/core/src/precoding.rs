//! Zero-forcing and projection-hybrid NOMA precoders.
//!
//! Channel vectors are M×1 columns `H_k` so that the signal seen by user `k`
//! through a beam `w` is `H_kᴴ·w`. The effective rows produced by
//! [`crate::channel::composite_channel`] are the adjoints of these columns.

use crate::error::{Error, Result};
use crate::linalg::{gram_inverse, ComplexMatrix, C64, DEFAULT_CONDITION_CAP};

/// Relative threshold below which a projected channel counts as vanished.
const DEGENERATE_REL: f64 = 1e-12;

/// `H·(HᴴH)⁻¹` for a tall full-column-rank `H`, so that `Hᴴ·result = I`.
pub fn pseudo_inverse(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    pseudo_inverse_with_cap(h, DEFAULT_CONDITION_CAP)
}

pub fn pseudo_inverse_with_cap(h: &ComplexMatrix, condition_cap: f64) -> Result<ComplexMatrix> {
    if h.cols() > h.rows() {
        return Err(Error::dim(
            "pseudo_inverse",
            format!("at most {} columns", h.rows()),
            h.cols(),
        ));
    }
    let inv = gram_inverse(h, condition_cap, "pseudo_inverse")?;
    Ok(ComplexMatrix::new(h.inner() * inv)?)
}

/// Per-cluster ZF beams, one column per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfPrecoder {
    w: ComplexMatrix,
}

impl ZfPrecoder {
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.w
    }

    pub fn clusters(&self) -> usize {
        self.w.cols()
    }

    pub fn beam(&self, l: usize) -> ComplexMatrix {
        self.w.column(l)
    }

    pub fn beam_norm_sqr(&self, l: usize) -> f64 {
        self.w.column(l).norm_sqr()
    }
}

/// Builds `W` from the L×M stack of strong-user rows `h_lᴴ` so that
/// `h_jᴴ·w_l = δ_jl`.
pub fn zf_precoder(strong_rows: &ComplexMatrix) -> Result<ZfPrecoder> {
    let h = strong_rows.adjoint();
    Ok(ZfPrecoder {
        w: pseudo_inverse(&h)?,
    })
}

/// `I − Ĥ(ĤᴴĤ)⁻¹Ĥᴴ`, the projector onto the orthogonal complement of the
/// columns of `h_hat` (M×c). With no columns this is the identity.
pub fn orthogonal_projection(h_hat: &ComplexMatrix, m: usize) -> Result<ComplexMatrix> {
    if h_hat.cols() == 0 {
        return Ok(ComplexMatrix::identity(m));
    }
    if h_hat.rows() != m {
        return Err(Error::dim("orthogonal_projection", format!("{m} rows"), h_hat.rows()));
    }
    if h_hat.cols() >= m {
        return Err(Error::Singular {
            context: "orthogonal_projection",
            condition: f64::INFINITY,
            columns: (0..h_hat.cols()).collect(),
        });
    }
    let inv = gram_inverse(h_hat, DEFAULT_CONDITION_CAP, "orthogonal_projection")?;
    let h = h_hat.inner();
    let p = nalgebra::DMatrix::<C64>::identity(m, m) - h * inv * h.adjoint();
    ComplexMatrix::new(p)
}

/// `u = cos²φ = |H_bᴴH_a|² / (‖H_a‖²‖H_b‖²)`.
pub fn channel_correlation(h_a: &ComplexMatrix, h_b: &ComplexMatrix) -> Result<f64> {
    let na = h_a.norm_sqr();
    let nb = h_b.norm_sqr();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("channel correlation of a zero vector".into()));
    }
    let ip = h_b.inner_product(h_a)?;
    Ok((ip.norm_sqr() / (na * nb)).clamp(0.0, 1.0))
}

/// Linear SINR targets for the strong (`a`) and weak (`b`) member of a cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrTargets {
    pub gamma_a: f64,
    pub gamma_b: f64,
}

impl SinrTargets {
    pub fn new(gamma_a: f64, gamma_b: f64) -> Result<Self> {
        for g in [gamma_a, gamma_b] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::Domain(format!("SINR target must be finite and >= 0, got {g}")));
            }
        }
        Ok(Self { gamma_a, gamma_b })
    }

    /// Targets from rate floors: `γ = 2^(R/B) − 1`.
    pub fn from_rates(rate_a: f64, rate_b: f64, bandwidth: f64) -> Result<Self> {
        Self::new(rate_to_sinr(rate_a, bandwidth), rate_to_sinr(rate_b, bandwidth))
    }
}

pub fn rate_to_sinr(rate: f64, bandwidth: f64) -> f64 {
    (rate / bandwidth).exp2() - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhNomaBeams {
    pub w_a: ComplexMatrix,
    pub w_b: ComplexMatrix,
    pub nu_a: f64,
    pub nu_b: f64,
    /// Correlation `cos²φ` of the projected channels.
    pub u: f64,
    /// `‖P⊥H_a‖²` and `‖P⊥H_b‖²`.
    pub proj_gain_a: f64,
    pub proj_gain_b: f64,
}

/// Minimum-power beams that meet both SINR targets inside the null space of
/// the other clusters.
///
/// With `e_a`, `e_b` the normalised projected channels and `s = 1 − u`:
/// `w_a = ν_a((1+γ_b)e_a − γ_b(e_bᴴe_a)e_b)`, `w_b = ν_b e_b`,
/// `ν_a² = σ²γ_a / (‖P⊥H_a‖²(1+γ_b s)²)`,
/// `ν_b² = σ²γ_b/‖P⊥H_b‖² + γ_b u ν_a²`.
pub fn ph_noma_precoder(
    h_a: &ComplexMatrix,
    h_b: &ComplexMatrix,
    p_perp: &ComplexMatrix,
    targets: SinrTargets,
    noise: f64,
) -> Result<PhNomaBeams> {
    if !(noise > 0.0) {
        return Err(Error::Domain(format!("noise power must be positive, got {noise}")));
    }
    let g_a = p_perp.matmul(h_a)?;
    let g_b = p_perp.matmul(h_b)?;
    let proj_gain_a = g_a.norm_sqr();
    let proj_gain_b = g_b.norm_sqr();
    for (name, proj, raw) in [("a", proj_gain_a, h_a.norm_sqr()), ("b", proj_gain_b, h_b.norm_sqr())] {
        if !(proj > DEGENERATE_REL * raw) || proj == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "user {name}'s channel lies inside the nulled subspace (projected gain {proj:.3e})"
            )));
        }
    }
    let e_a = g_a.scale_real(1.0 / proj_gain_a.sqrt());
    let e_b = g_b.scale_real(1.0 / proj_gain_b.sqrt());
    let rho = e_b.inner_product(&e_a)?;
    let u = rho.norm_sqr().clamp(0.0, 1.0);
    let s = 1.0 - u;
    let SinrTargets { gamma_a, gamma_b } = targets;

    let denom = (1.0 + gamma_b * s).powi(2);
    let nu_a_sq = noise * gamma_a / (proj_gain_a * denom);
    let nu_b_sq = noise * gamma_b / proj_gain_b + gamma_b * u * nu_a_sq;
    let nu_a = nu_a_sq.sqrt();
    let nu_b = nu_b_sq.sqrt();

    let dir_a = e_a
        .scale_real(1.0 + gamma_b)
        .sub(&e_b.scale(rho * gamma_b))?;
    Ok(PhNomaBeams {
        w_a: dir_a.scale_real(nu_a),
        w_b: e_b.scale_real(nu_b),
        nu_a,
        nu_b,
        u,
        proj_gain_a,
        proj_gain_b,
    })
}

/// Closed-form transmit powers `(‖w_a‖², ‖w_b‖²)` of a PH-NOMA cluster.
pub fn transmit_powers(beams: &PhNomaBeams, targets: SinrTargets, noise: f64) -> (f64, f64) {
    let SinrTargets { gamma_a, gamma_b } = targets;
    let u = beams.u;
    let s = 1.0 - u;
    let k = 1.0 + gamma_b * s;
    let base_a = noise * gamma_a / beams.proj_gain_a;
    let p_a = base_a * (k * (1.0 + gamma_b) - gamma_b * u) / (k * k);
    let p_b = noise * gamma_b / beams.proj_gain_b + base_a * gamma_b * u / (k * k);
    (p_a, p_b)
}

/// Columns of every user except `a` and `b`: the channels a cluster must null.
pub fn interference_columns(channels: &[ComplexMatrix], a: usize, b: usize) -> Result<ComplexMatrix> {
    let m = channels.first().map(|c| c.rows()).unwrap_or(0);
    let others: Vec<ComplexMatrix> = channels
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != a && *k != b)
        .map(|(_, c)| c.clone())
        .collect();
    ComplexMatrix::from_columns(&others, m)
}
