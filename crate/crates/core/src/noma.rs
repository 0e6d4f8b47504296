//! User pairing, SIC decoding order and per-user SINR/rate evaluation.

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::precoding::PhNomaBeams;

/// Two-user clusters. Each pair is `(strong, weak)` by the gain used to form it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPlan {
    pairs: Vec<(usize, usize)>,
}

impl ClusterPlan {
    pub fn new(pairs: Vec<(usize, usize)>, users: usize) -> Result<Self> {
        let mut seen = vec![false; users];
        for &(a, b) in &pairs {
            for u in [a, b] {
                if u >= users || seen[u] {
                    return Err(Error::Config(format!("user {u} missing or assigned twice")));
                }
                seen[u] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("every user must belong to exactly one cluster".into()));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn clusters(&self) -> usize {
        self.pairs.len()
    }

    pub fn users(&self) -> usize {
        2 * self.pairs.len()
    }

    /// Cluster index of each user.
    pub fn membership(&self) -> Vec<usize> {
        let mut m = vec![0; self.users()];
        for (l, &(a, b)) in self.pairs.iter().enumerate() {
            m[a] = l;
            m[b] = l;
        }
        m
    }
}

/// Indices sorted by descending gain; ties go to the lower index.
fn rank_by_gain(gains: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..gains.len()).collect();
    idx.sort_by(|&i, &j| gains[j].total_cmp(&gains[i]).then(i.cmp(&j)));
    idx
}

/// Pairs the strongest user with the weakest, the second strongest with the
/// second weakest, and so on.
pub fn form_clusters(gains: &[f64]) -> Result<ClusterPlan> {
    let k = gains.len();
    if k < 2 || k % 2 != 0 {
        return Err(Error::Config(format!("user count must be even and at least 2, got {k}")));
    }
    if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::Domain("channel gains must be finite and non-negative".into()));
    }
    let order = rank_by_gain(gains);
    let pairs = (0..k / 2).map(|i| (order[i], order[k - 1 - i])).collect();
    ClusterPlan::new(pairs, k)
}

/// Per-cluster decoding order: `order[l] = [first, second]`, where the first
/// user (π = 1) is the strong one that runs SIC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodingOrder {
    order: Vec<[usize; 2]>,
}

impl DecodingOrder {
    pub fn from_pairs(pairs: &[(usize, usize)]) -> Self {
        Self {
            order: pairs.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }

    pub fn cluster(&self, l: usize) -> [usize; 2] {
        self.order[l]
    }

    pub fn clusters(&self) -> &[[usize; 2]] {
        &self.order
    }

    pub fn flip(&mut self, l: usize) {
        self.order[l].swap(0, 1);
    }

    /// Position (1-based) of `user` within its cluster's order.
    pub fn rank_of(&self, user: usize) -> Option<usize> {
        self.order
            .iter()
            .find_map(|o| o.iter().position(|&u| u == user).map(|p| p + 1))
    }
}

/// Orders each cluster by descending effective gain at the current channel.
pub fn decoding_order(plan: &ClusterPlan, gains: &[f64]) -> DecodingOrder {
    let order = plan
        .pairs()
        .iter()
        .map(|&(a, b)| {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if gains[hi] > gains[lo] {
                [hi, lo]
            } else {
                [lo, hi]
            }
        })
        .collect();
    DecodingOrder { order }
}

/// SIC at the strong user succeeds when it decodes the weak user's message at
/// least as well as the weak user itself.
pub fn sic_feasible(rate_weak_at_strong: f64, rate_weak_at_weak: f64) -> bool {
    rate_weak_at_strong >= rate_weak_at_weak
}

/// Checks a full decoding chain. `order` lists users from first to last
/// decoded position (strongest first) and `rate(msg, at)` is the rate at which
/// user `at` decodes the message of user `msg`. Every user earlier in the
/// order must decode each later user's message at least at that user's own
/// rate.
pub fn sic_chain_feasible(order: &[usize], rate: impl Fn(usize, usize) -> f64) -> bool {
    order.iter().enumerate().all(|(pos, &msg)| {
        let own = rate(msg, msg);
        order[..pos].iter().all(|&at| sic_feasible(rate(msg, at), own))
    })
}

/// `B·log₂(1+γ)` in bits/s.
pub fn achievable_rate(sinr: f64, bandwidth: f64) -> f64 {
    bandwidth * sinr.max(0.0).ln_1p() / std::f64::consts::LN_2
}

/// ZF-mode SINRs of one cluster. `weak_gain` is `|h_bᴴw_l|²` and
/// `inter_cluster` is `Σ_{j≠l} |h_bᴴw_j|²·P_j`. The strong user's effective
/// gain is one by construction of the ZF beam.
pub fn sinr_zf(
    weak_gain: f64,
    inter_cluster: f64,
    cluster_power: f64,
    alpha_a: f64,
    alpha_b: f64,
    noise: f64,
) -> Result<(f64, f64)> {
    if !(noise > 0.0) {
        return Err(Error::Domain(format!("noise power must be positive, got {noise}")));
    }
    if !(alpha_a >= 0.0 && alpha_b >= 0.0 && ((alpha_a + alpha_b) - 1.0).abs() < 1e-9) {
        return Err(Error::Domain(format!(
            "power split must be non-negative and sum to one, got ({alpha_a}, {alpha_b})"
        )));
    }
    let gamma_a = alpha_a * cluster_power / noise;
    let gamma_b =
        weak_gain * alpha_b * cluster_power / (weak_gain * alpha_a * cluster_power + inter_cluster + noise);
    Ok((gamma_a, gamma_b))
}

/// SINRs of a PH-NOMA cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhSinr {
    pub gamma_a: f64,
    pub gamma_b: f64,
    /// SINR at which the strong user decodes the weak user's message.
    pub gamma_b_at_a: f64,
    /// Strong-user SINR if SIC fails and the weak message stays as interference.
    pub gamma_a_without_sic: f64,
    pub sic_ok: bool,
}

/// `γ_a = |g_aᴴw_a|²/σ²`, `γ_b = |g_bᴴw_b|²/(|g_bᴴw_a|² + σ²)` with
/// `g = P⊥H` the projected channels.
pub fn sinr_ph(
    beams: &PhNomaBeams,
    g_a: &ComplexMatrix,
    g_b: &ComplexMatrix,
    noise: f64,
) -> Result<PhSinr> {
    if !(noise > 0.0) {
        return Err(Error::Domain(format!("noise power must be positive, got {noise}")));
    }
    let aa = g_a.inner_product(&beams.w_a)?.norm_sqr();
    let ab = g_a.inner_product(&beams.w_b)?.norm_sqr();
    let ba = g_b.inner_product(&beams.w_a)?.norm_sqr();
    let bb = g_b.inner_product(&beams.w_b)?.norm_sqr();
    let gamma_a = aa / noise;
    let gamma_b = bb / (ba + noise);
    let gamma_b_at_a = ab / (aa + noise);
    Ok(PhSinr {
        gamma_a,
        gamma_b,
        gamma_b_at_a,
        gamma_a_without_sic: aa / (ab + noise),
        // Relative slack absorbs rounding when the two are equal by construction.
        sic_ok: gamma_b_at_a >= gamma_b * (1.0 - 1e-9),
    })
}
