//! Static evaluation of a deployment: the surface is placed once, its phases
//! are aligned and then drift over a short trajectory while the BS spends its
//! whole transmit budget every slot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use risnoma_core::channel::{wrap_phase, Position3};
use risnoma_core::env::{
    effective_channels, evaluate_rows, DecodingPolicy, EnvState, EpisodeChannels, Facade, LinkBudget,
    PrecodingMode, SceneConfig, PHASE_STEP,
};
use risnoma_core::metrics::{energy_efficiency, mos, total_power};
use risnoma_core::noma::{achievable_rate, decoding_order, form_clusters, ClusterPlan, DecodingOrder};
use risnoma_core::precoding::zf_precoder;
use risnoma_core::units::db_to_linear;
use risnoma_core::{ComplexMatrix, Error, Result};

/// Multiple-access scheme used while evaluating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Projection-hybrid NOMA; targets are searched to maximize sum MOS at full spend.
    NomaPh,
    /// Zero forcing on the strong users with an equal power split inside each cluster.
    NomaZf,
    /// Per-cluster time sharing: strong users in one half slot, weak users in the other.
    Oma,
}

/// Where the surface sits for the whole evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Deployment {
    /// Uniform facade point drawn per realization.
    Random,
    /// Facade point nearest the users' horizontal barycenter.
    Barycenter,
    /// One explicit position per realization.
    Fixed(Vec<Position3>),
    /// No surface: N is forced to 0.
    NoRis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub tx_power: f64,
    /// Independent channel realizations averaged per seed.
    pub realizations: usize,
    /// Slots per realization.
    pub slots: usize,
}

/// Averages over slots and realizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub ee: f64,
    /// Mean MOS per user.
    pub mos: f64,
    /// Mean total dissipated power in watts.
    pub power: f64,
}

/// Geometry and fading of one realization. Geometry and fading draw from
/// separate streams so that changing N leaves user positions unchanged.
#[derive(Debug, Clone)]
pub struct Realization {
    pub users: Vec<(f64, f64)>,
    pub random_ris: Position3,
    pub channels: EpisodeChannels,
    pub walk_seed: u64,
}

impl Realization {
    pub fn draw(scene: &SceneConfig, seed: u64) -> Self {
        let mut geo = ChaCha8Rng::seed_from_u64(seed);
        let mut fading = geo.clone();
        fading.set_stream(1);
        let users = match &scene.user_positions {
            Some(p) => p.clone(),
            None => {
                let [x0, y0, x1, y1] = scene.user_region;
                (0..scene.users)
                    .map(|_| (geo.random_range(x0..=x1), geo.random_range(y0..=y1)))
                    .collect()
            }
        };
        let facade = scene.facades[geo.random_range(0..scene.facades.len())];
        let random_ris = facade.sample(&mut geo);
        let walk_seed = geo.random();
        Self { users, random_ris, channels: EpisodeChannels::draw(scene, &mut fading), walk_seed }
    }
}

/// Facade point nearest (horizontally) to the barycenter of `users`. Ties go
/// to the facade listed first.
pub fn barycenter_position(facades: &[Facade], users: &[(f64, f64)]) -> Position3 {
    let n = users.len() as f64;
    let bx = users.iter().map(|u| u.0).sum::<f64>() / n;
    let by = users.iter().map(|u| u.1).sum::<f64>() / n;
    facades
        .iter()
        .map(|f| f.nearest_to(bx, by))
        .min_by(|a, b| {
            let da = (a.x - bx).hypot(a.y - by);
            let db = (b.x - bx).hypot(b.y - by);
            da.total_cmp(&db)
        })
        .expect("scene has at least one facade")
}

/// Coordinate ascent over the phase-action grid maximizing `Σ ln‖h_k‖²`.
pub fn align_phases(scene: &SceneConfig, ch: &EpisodeChannels, state: &mut EnvState) -> Result<()> {
    let bins = (TAU / PHASE_STEP).round() as usize;
    let score = |s: &EnvState| -> Result<f64> {
        Ok(effective_channels(scene, ch, s)?.iter().map(|r| r.norm_sqr().ln()).sum())
    };
    let mut best = score(state)?;
    for _ in 0..3 {
        let mut improved = false;
        for n in 0..scene.elements {
            let keep = state.theta[n];
            let mut arg = keep;
            for b in 0..bins {
                state.theta[n] = b as f64 * PHASE_STEP;
                let v = score(state)?;
                if v > best + 1e-12 {
                    best = v;
                    arg = state.theta[n];
                    improved = true;
                }
            }
            state.theta[n] = arg;
        }
        if !improved {
            break;
        }
    }
    Ok(())
}

/// One slot's sum MOS and total power when `tx_power` is fully spent.
pub fn slot_budget(
    scene: &SceneConfig,
    scheme: Scheme,
    rows: &[ComplexMatrix],
    order: &DecodingOrder,
    tx_power: f64,
) -> Result<(f64, f64)> {
    match scheme {
        Scheme::NomaPh => {
            let s = SceneConfig { precoding: PrecodingMode::PhNoma, ..scene.clone() };
            let mut best: Option<LinkBudget> = None;
            for step in 0..=RATIO_STEPS {
                let ratio = db_to_linear(RATIO_MIN_DB + RATIO_STEP_DB * step as f64);
                let b = spend_at_ratio(&s, rows, order, ratio, tx_power)?;
                if best.as_ref().is_none_or(|x| b.sum_mos > x.sum_mos) {
                    best = Some(b);
                }
            }
            let b = best.expect("the ratio grid is nonempty");
            Ok((b.sum_mos, b.total_power))
        }
        Scheme::NomaZf => {
            let s = SceneConfig { precoding: PrecodingMode::Zf, ..scene.clone() };
            let w = zf_precoder(&strong_rows(rows, order, scene.antennas, 0)?)?;
            let mut knobs = vec![0.0; s.users];
            for (l, o) in order.clusters().iter().enumerate() {
                for &u in o {
                    knobs[u] = tx_power / (s.users as f64 * w.beam_norm_sqr(l));
                }
            }
            let b = evaluate_rows(&s, rows, order, &knobs)?;
            Ok((b.sum_mos, b.total_power))
        }
        Scheme::Oma => {
            let noise = scene.noise_power();
            let per_cluster = tx_power / order.clusters().len() as f64;
            let mut sum_mos = 0.0;
            for half in 0..2 {
                let w = zf_precoder(&strong_rows(rows, order, scene.antennas, half)?)?;
                for (l, o) in order.clusters().iter().enumerate() {
                    let beam = w.beam(l).scale_real((per_cluster / w.beam_norm_sqr(l)).sqrt());
                    let g = rows[o[half]].matmul(&beam)?.get(0, 0).norm_sqr();
                    let rate = 0.5 * achievable_rate(g / noise, scene.bandwidth);
                    sum_mos += mos(rate, &scene.mos);
                }
            }
            Ok((sum_mos, total_power(tx_power, scene.users, scene.elements, &scene.power)))
        }
    }
}

/// Weak-to-strong target ratios tried by the PH-NOMA allocation: -30 dB to +6 dB.
const RATIO_STEPS: usize = 12;
const RATIO_STEP_DB: f64 = 3.0;
const RATIO_MIN_DB: f64 = -30.0;

/// Targets `(s, s·ratio)` for the strong and weak user of every cluster, with
/// the common scale `s` bisected on a log scale until the beams draw `tx_power`.
fn spend_at_ratio(
    scene: &SceneConfig,
    rows: &[ComplexMatrix],
    order: &DecodingOrder,
    ratio: f64,
    tx_power: f64,
) -> Result<LinkBudget> {
    let spend = |log_scale: f64| -> Result<LinkBudget> {
        let strong = 10f64.powf(log_scale);
        let mut knobs = vec![strong * ratio; scene.users];
        for o in order.clusters() {
            knobs[o[0]] = strong;
        }
        evaluate_rows(scene, rows, order, &knobs)
    };
    let (mut lo, mut hi) = (-12.0f64, 12.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if spend(mid)?.beam_power <= tx_power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    spend(lo)
}

fn strong_rows(rows: &[ComplexMatrix], order: &DecodingOrder, m: usize, rank: usize) -> Result<ComplexMatrix> {
    let picked: Vec<ComplexMatrix> = order.clusters().iter().map(|o| rows[o[rank]].clone()).collect();
    ComplexMatrix::from_rows(&picked, m)
}

/// Mean EE, per-user MOS and power of `deployment` under `scheme` over the
/// realizations derived from `seed`. The scene's decoding policy decides
/// whether the order is re-sorted every slot or frozen at the first slot.
pub fn evaluate(
    scene: &SceneConfig,
    scheme: Scheme,
    deployment: &Deployment,
    settings: &EvalSettings,
    seed: u64,
) -> Result<EvalResult> {
    if settings.realizations == 0 || settings.slots == 0 {
        return Err(Error::Config("need at least one realization and one slot".into()));
    }
    let scene = match deployment {
        Deployment::NoRis => SceneConfig { elements: 0, ..scene.clone() },
        _ => scene.clone(),
    };
    scene.validate()?;
    let mut acc = EvalResult { ee: 0.0, mos: 0.0, power: 0.0 };
    for r in 0..settings.realizations {
        let real = Realization::draw(&scene, realization_seed(seed, r));
        let ris = match deployment {
            Deployment::Random | Deployment::NoRis => real.random_ris,
            Deployment::Barycenter => barycenter_position(&scene.facades, &real.users),
            Deployment::Fixed(at) => *at
                .get(r)
                .ok_or_else(|| Error::Config(format!("no fixed position for realization {r}")))?,
        };
        let one = evaluate_realization(&scene, scheme, &real, ris, settings)?;
        acc.ee += one.ee / settings.realizations as f64;
        acc.mos += one.mos / settings.realizations as f64;
        acc.power += one.power / settings.realizations as f64;
    }
    Ok(acc)
}

/// Slot averages of one realization with the surface at `ris`.
pub fn evaluate_realization(
    scene: &SceneConfig,
    scheme: Scheme,
    real: &Realization,
    ris: Position3,
    settings: &EvalSettings,
) -> Result<EvalResult> {
    if settings.slots == 0 {
        return Err(Error::Config("need at least one slot".into()));
    }
    let mut state = EnvState {
        theta: vec![0.0; scene.elements],
        ris,
        users: real.users.clone(),
        knobs: vec![0.0; scene.users],
        user_power: vec![0.0; scene.users],
    };
    align_phases(scene, &real.channels, &mut state)?;
    let mut walk = ChaCha8Rng::seed_from_u64(real.walk_seed);
    let mut frozen: Option<(ClusterPlan, DecodingOrder)> = None;
    let (mut ee, mut q, mut p) = (0.0, 0.0, 0.0);
    let count = settings.slots as f64;
    for slot in 0..settings.slots {
        if slot > 0 {
            for t in &mut state.theta {
                *t = wrap_phase(*t + PHASE_STEP * (walk.random_range(0..3) as f64 - 1.0));
            }
        }
        let rows = effective_channels(scene, &real.channels, &state)?;
        let gains: Vec<f64> = rows.iter().map(|r| r.norm_sqr()).collect();
        let (plan, first) = match &frozen {
            Some(f) => f.clone(),
            None => {
                let plan = form_clusters(&gains)?;
                let order = decoding_order(&plan, &gains);
                frozen = Some((plan.clone(), order.clone()));
                (plan, order)
            }
        };
        let order = match scene.decoding {
            DecodingPolicy::Dynamic => decoding_order(&plan, &gains),
            DecodingPolicy::Frozen => first,
        };
        let (sum_mos, total) = slot_budget(scene, scheme, &rows, &order, settings.tx_power)?;
        ee += energy_efficiency(sum_mos, total)? / count;
        q += sum_mos / (scene.users as f64 * count);
        p += total / count;
    }
    Ok(EvalResult { ee, mos: q, power: p })
}

/// Seed of realization `r` under experiment seed `seed`.
pub fn realization_seed(seed: u64, r: usize) -> u64 {
    risnoma_learn::rl::episode_seed(seed ^ 0x5EED_0F_CA11, r)
}
