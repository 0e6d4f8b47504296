//! The control problem as an MDP: the BS observes the surface's phases and
//! position, the users' positions and their allocated powers, and applies one
//! elementary adjustment per slot. The reward is the change in per-slot
//! energy efficiency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};

use crate::channel::{
    composite_channel, los_bs_ris, rayleigh, rician_compose, wrap_phase, LinkClass, PathLossModel,
    PhaseConfig, Position3,
};
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::metrics::{energy_efficiency, mos, step_reward, total_power, MosParams, PowerModel};
use crate::noma::{
    achievable_rate, decoding_order, form_clusters, sinr_ph, ClusterPlan, DecodingOrder,
};
use crate::precoding::{
    interference_columns, orthogonal_projection, ph_noma_precoder, rate_to_sinr, transmit_powers,
    zf_precoder, SinrTargets,
};
use crate::units::noise_power;

/// Phase increment of one elementary phase action.
pub const PHASE_STEP: f64 = PI / 10.0;

/// RIS moves in the order left, right, stay, backward, forward.
pub const MOVES: [(i8, i8, i8); 5] = [(-1, 0, 0), (1, 0, 0), (0, 0, 0), (0, -1, 0), (0, 1, 0)];

const RESET_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecodingMode {
    Zf,
    PhNoma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodingPolicy {
    /// Re-sorted by effective gain every slot.
    Dynamic,
    /// Fixed at the order found at reset.
    Frozen,
}

/// An axis-aligned region (possibly flat) on which the surface may sit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Facade {
    pub min: Position3,
    pub max: Position3,
}

impl Facade {
    pub fn new(min: Position3, max: Position3) -> Result<Self> {
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(Error::Config(format!("facade corners out of order: {min:?} / {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &Position3) -> bool {
        const EPS: f64 = 1e-9;
        (self.min.x - EPS..=self.max.x + EPS).contains(&p.x)
            && (self.min.y - EPS..=self.max.y + EPS).contains(&p.y)
            && (self.min.z - EPS..=self.max.z + EPS).contains(&p.z)
    }

    pub fn clamp(&self, p: &Position3) -> Position3 {
        Position3 {
            x: p.x.clamp(self.min.x, self.max.x),
            y: p.y.clamp(self.min.y, self.max.y),
            z: p.z.clamp(self.min.z, self.max.z),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Position3 {
        let u = |rng: &mut R, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        Position3 {
            x: u(rng, self.min.x, self.max.x),
            y: u(rng, self.min.y, self.max.y),
            z: u(rng, self.min.z, self.max.z),
        }
    }

    /// Facade point horizontally closest to `(x, y)`, at the facade's lowest height.
    pub fn nearest_to(&self, x: f64, y: f64) -> Position3 {
        Position3 {
            x: x.clamp(self.min.x, self.max.x),
            y: y.clamp(self.min.y, self.max.y),
            z: self.min.z,
        }
    }
}

/// Everything fixed about a simulated deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Side of the square service region in meters; the region spans `[0, side]²`.
    pub region_side: f64,
    pub bs: Position3,
    /// Rectangle `[x_min, y_min, x_max, y_max]` users are drawn from.
    pub user_region: [f64; 4],
    /// Fixed user positions; drawn per episode when absent.
    pub user_positions: Option<Vec<(f64, f64)>>,
    pub facades: Vec<Facade>,
    pub antennas: usize,
    pub elements: usize,
    pub users: usize,
    pub bandwidth: f64,
    pub noise_psd_dbm_hz: f64,
    pub power: PowerModel,
    pub path_loss: PathLossModel,
    /// Linear Rician K-factor of the BS-RIS link.
    pub rician_k: f64,
    /// Extra linear attenuation on the BS-user link (1 = unobstructed).
    pub direct_link_gain: f64,
    pub precoding: PrecodingMode,
    pub decoding: DecodingPolicy,
    /// Step of a power/target action in dB.
    pub target_step_db: f64,
    /// Distance of one move action in meters.
    pub move_step: f64,
    pub mos: MosParams,
    /// Per-user minimum rates in bits/s.
    pub rate_floors: Vec<f64>,
}

impl SceneConfig {
    /// The small desk-scale default scene: M=4, N=8, K=4.
    pub fn desk() -> Self {
        let side = 100.0;
        Self {
            region_side: side,
            bs: Position3 { x: 50.0, y: 50.0, z: 10.0 },
            user_region: [0.0, 0.0, side, side],
            user_positions: None,
            facades: vec![
                Facade {
                    min: Position3 { x: 20.0, y: 85.0, z: 5.0 },
                    max: Position3 { x: 80.0, y: 85.0, z: 5.0 },
                },
                Facade {
                    min: Position3 { x: 85.0, y: 20.0, z: 5.0 },
                    max: Position3 { x: 85.0, y: 80.0, z: 5.0 },
                },
            ],
            antennas: 4,
            elements: 8,
            users: 4,
            bandwidth: 1e6,
            noise_psd_dbm_hz: -169.0,
            power: PowerModel::default(),
            path_loss: PathLossModel::default(),
            rician_k: 10.0,
            direct_link_gain: 1.0,
            precoding: PrecodingMode::PhNoma,
            decoding: DecodingPolicy::Dynamic,
            target_step_db: 1.0,
            move_step: 1.0,
            mos: MosParams::calibrated(1e5, 1e7, 1.0, 4.5).expect("static calibration is valid"),
            rate_floors: vec![1e5; 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users < 2 || self.users % 2 != 0 {
            return Err(Error::Config(format!("user count must be even and >= 2, got {}", self.users)));
        }
        if self.antennas < 1 {
            return Err(Error::Config("the BS needs at least one antenna".into()));
        }
        if self.precoding == PrecodingMode::PhNoma && self.antennas < self.users - 1 {
            return Err(Error::Config(format!(
                "PH-NOMA needs at least K-1 = {} antennas, got {}",
                self.users - 1,
                self.antennas
            )));
        }
        if self.precoding == PrecodingMode::Zf && self.antennas < self.users / 2 {
            return Err(Error::Config("ZF needs at least one antenna per cluster".into()));
        }
        if self.facades.is_empty() {
            return Err(Error::Config("at least one facade region is required".into()));
        }
        if self.rate_floors.len() != self.users {
            return Err(Error::Config(format!(
                "expected {} rate floors, got {}",
                self.users,
                self.rate_floors.len()
            )));
        }
        if let Some(pos) = &self.user_positions {
            if pos.len() != self.users {
                return Err(Error::Config(format!("expected {} user positions, got {}", self.users, pos.len())));
            }
        }
        let [x0, y0, x1, y1] = self.user_region;
        if !(x0 <= x1 && y0 <= y1) {
            return Err(Error::Config("user region corners out of order".into()));
        }
        if !(self.bandwidth > 0.0 && self.target_step_db > 0.0 && self.move_step > 0.0) {
            return Err(Error::Config("bandwidth, target step and move step must be positive".into()));
        }
        if !(self.rician_k >= 0.0 && self.direct_link_gain > 0.0 && self.region_side > 0.0) {
            return Err(Error::Config("invalid K-factor, direct-link gain or region size".into()));
        }
        self.power.validate()
    }

    pub fn noise_power(&self) -> f64 {
        noise_power(self.noise_psd_dbm_hz, self.bandwidth)
    }

    pub fn clusters(&self) -> usize {
        self.users / 2
    }

    pub fn action_count(&self) -> usize {
        action_count(self.elements, self.users)
    }

    pub fn state_len(&self) -> usize {
        self.elements + 2 * self.users + 3
    }

    fn target_factor(&self) -> f64 {
        10f64.powf(self.target_step_db / 10.0)
    }

    fn floor_sinr(&self, k: usize) -> f64 {
        rate_to_sinr(self.rate_floors[k], self.bandwidth)
    }

    fn region_center(&self) -> (f64, f64) {
        (self.region_side / 2.0, self.region_side / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delta {
    Decrease,
    Hold,
    Increase,
}

impl Delta {
    fn from_index(i: usize) -> Self {
        match i {
            0 => Delta::Decrease,
            1 => Delta::Hold,
            _ => Delta::Increase,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Delta::Decrease => -1.0,
            Delta::Hold => 0.0,
            Delta::Increase => 1.0,
        }
    }
}

/// One elementary action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Phase { element: usize, delta: Delta },
    Move { dx: i8, dy: i8, dz: i8 },
    Power { user: usize, delta: Delta },
}

/// Index into the enumerated action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionId(pub usize);

pub fn action_count(elements: usize, users: usize) -> usize {
    3 * elements + 3 * users + MOVES.len()
}

/// Phase deltas per element, then the five moves, then power deltas per user.
pub fn enumerate_actions(elements: usize, users: usize) -> Vec<Action> {
    let mut out = Vec::with_capacity(action_count(elements, users));
    for element in 0..elements {
        for d in 0..3 {
            out.push(Action::Phase { element, delta: Delta::from_index(d) });
        }
    }
    for &(dx, dy, dz) in &MOVES {
        out.push(Action::Move { dx, dy, dz });
    }
    for user in 0..users {
        for d in 0..3 {
            out.push(Action::Power { user, delta: Delta::from_index(d) });
        }
    }
    out
}

pub fn decode_action(id: ActionId, elements: usize, users: usize) -> Option<Action> {
    let i = id.0;
    let phases = 3 * elements;
    if i < phases {
        return Some(Action::Phase { element: i / 3, delta: Delta::from_index(i % 3) });
    }
    let i = i - phases;
    if i < MOVES.len() {
        let (dx, dy, dz) = MOVES[i];
        return Some(Action::Move { dx, dy, dz });
    }
    let i = i - MOVES.len();
    if i < 3 * users {
        return Some(Action::Power { user: i / 3, delta: Delta::from_index(i % 3) });
    }
    None
}

/// Observable state of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub theta: Vec<f64>,
    pub ris: Position3,
    pub users: Vec<(f64, f64)>,
    /// Per-user control knob: the linear SINR target in PH-NOMA mode, the
    /// symbol power (W) in ZF mode.
    pub knobs: Vec<f64>,
    /// Realised per-user transmit power `‖w‖²` in watts.
    pub user_power: Vec<f64>,
}

/// Small-scale fading of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeChannels {
    pub bs_ris_scatter: ComplexMatrix,
    pub direct: Vec<ComplexMatrix>,
    pub ris_user: Vec<ComplexMatrix>,
}

impl EpisodeChannels {
    pub fn draw<R: Rng + ?Sized>(scene: &SceneConfig, rng: &mut R) -> Self {
        let (m, n, k) = (scene.antennas, scene.elements, scene.users);
        Self {
            bs_ris_scatter: rayleigh(n, m, rng),
            direct: (0..k).map(|_| rayleigh(1, m, rng)).collect(),
            ris_user: (0..k).map(|_| rayleigh(1, n, rng)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserLink {
    pub sinr: f64,
    pub rate: f64,
    pub mos: f64,
    pub power: f64,
    pub floor_met: bool,
}

/// Result of one physical-layer evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    pub users: Vec<UserLink>,
    pub order: DecodingOrder,
    /// Per-cluster beams: `[w_a, w_b]` in PH-NOMA mode, `[w_l]` in ZF mode.
    pub beams: Vec<Vec<ComplexMatrix>>,
    pub sum_mos: f64,
    pub beam_power: f64,
    pub total_power: f64,
    pub ee: f64,
    pub sic_failures: usize,
    pub floor_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEffect {
    Applied,
    /// The action would break a constraint; the state is unchanged.
    Rejected,
    /// The precoder could not be built at the new state; the state is unchanged.
    Degraded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub ee: f64,
    pub effect: StepEffect,
    pub budget: LinkBudget,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnvStats {
    pub steps: usize,
    pub rejected: usize,
    pub degraded: usize,
    pub sic_failures: usize,
    pub floor_violations: usize,
}

impl EnvStats {
    /// Constraint events that were absorbed rather than satisfied.
    pub fn violations(&self) -> usize {
        self.degraded + self.sic_failures + self.floor_violations
    }
}

/// One environment instance: a scene, the current episode's channels and state.
#[derive(Debug, Clone)]
pub struct Env {
    scene: SceneConfig,
    channels: EpisodeChannels,
    plan: ClusterPlan,
    frozen: DecodingOrder,
    state: EnvState,
    budget: LinkBudget,
    stats: EnvStats,
    actions: Vec<Action>,
}

impl Env {
    /// Validates the scene and starts the first episode with `seed`.
    pub fn new(scene: SceneConfig, seed: u64) -> Result<Self> {
        scene.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last_err = None;
        for _ in 0..RESET_ATTEMPTS {
            match Self::try_episode(&scene, &mut rng) {
                Ok(env) => return Ok(env),
                Err(e) => last_err = Some(e),
            }
        }
        Err(Error::Config(format!(
            "no feasible initial state after {RESET_ATTEMPTS} channel draws: {}",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    /// Starts a new episode: fresh fading, a uniform facade position,
    /// uniform phases and targets at their floors.
    pub fn reset(&mut self, seed: u64) -> Result<&EnvState> {
        let scene = std::mem::replace(&mut self.scene, SceneConfig::desk());
        let fresh = Self::new(scene, seed);
        match fresh {
            Ok(env) => {
                *self = env;
                Ok(&self.state)
            }
            Err(e) => Err(e),
        }
    }

    fn try_episode(scene: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let users = match &scene.user_positions {
            Some(p) => p.clone(),
            None => {
                let [x0, y0, x1, y1] = scene.user_region;
                (0..scene.users)
                    .map(|_| (rng.random_range(x0..=x1), rng.random_range(y0..=y1)))
                    .collect()
            }
        };
        let facade = scene.facades[rng.random_range(0..scene.facades.len())];
        let ris = facade.sample(rng);
        let theta: Vec<f64> = (0..scene.elements).map(|_| rng.random_range(0.0..TAU)).collect();
        let channels = EpisodeChannels::draw(scene, rng);

        let mut state = EnvState {
            theta,
            ris,
            users,
            knobs: vec![0.0; scene.users],
            user_power: vec![0.0; scene.users],
        };
        let rows = effective_channels(scene, &channels, &state)?;
        let gains: Vec<f64> = rows.iter().map(|r| r.norm_sqr()).collect();
        let plan = form_clusters(&gains)?;
        let frozen = decoding_order(&plan, &gains);
        state.knobs = initial_knobs(scene, &rows, &frozen)?;

        let budget = evaluate_with(scene, &channels, &plan, &frozen, &state)?;
        if budget.beam_power > scene.power.p_max * (1.0 + 1e-9) {
            return Err(Error::Config(format!(
                "rate floors need {:.3e} W, above the {:.3e} W cap",
                budget.beam_power, scene.power.p_max
            )));
        }
        state.user_power = budget.users.iter().map(|u| u.power).collect();
        let actions = enumerate_actions(scene.elements, scene.users);
        Ok(Self {
            scene: scene.clone(),
            channels,
            plan,
            frozen,
            state,
            budget,
            stats: EnvStats::default(),
            actions,
        })
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.scene
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn budget(&self) -> &LinkBudget {
        &self.budget
    }

    pub fn ee(&self) -> f64 {
        self.budget.ee
    }

    pub fn stats(&self) -> EnvStats {
        self.stats
    }

    pub fn plan(&self) -> &ClusterPlan {
        &self.plan
    }

    pub fn channels(&self) -> &EpisodeChannels {
        &self.channels
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn action(&self, id: ActionId) -> Option<Action> {
        self.actions.get(id.0).copied()
    }

    /// Effective 1×M channel rows of every user at `state`.
    pub fn effective_channels(&self, state: &EnvState) -> Result<Vec<ComplexMatrix>> {
        effective_channels(&self.scene, &self.channels, state)
    }

    /// Pure physical-layer evaluation of an arbitrary state of this episode.
    pub fn evaluate(&self, state: &EnvState) -> Result<LinkBudget> {
        evaluate_with(&self.scene, &self.channels, &self.plan, &self.frozen, state)
    }

    /// Replaces the current state (e.g. to pin a deployment) and re-evaluates it.
    pub fn set_state(&mut self, mut state: EnvState) -> Result<&LinkBudget> {
        self.check_state_shape(&state)?;
        let budget = self.evaluate(&state)?;
        state.user_power = budget.users.iter().map(|u| u.power).collect();
        self.state = state;
        self.budget = budget;
        Ok(&self.budget)
    }

    fn check_state_shape(&self, s: &EnvState) -> Result<()> {
        let s_ok = s.theta.len() == self.scene.elements
            && s.users.len() == self.scene.users
            && s.knobs.len() == self.scene.users;
        if !s_ok {
            return Err(Error::dim("set_state", "state matching the scene", "mismatched lengths"));
        }
        if !self.scene.facades.iter().any(|f| f.contains(&s.ris)) {
            return Err(Error::Config(format!("RIS position {:?} is not on a facade", s.ris)));
        }
        Ok(())
    }

    /// Applies `id` to `state` without touching the environment. Returns the
    /// candidate state, or `None` when the delta is rejected outright.
    fn propose(&self, state: &EnvState, action: Action) -> Option<EnvState> {
        let mut next = state.clone();
        match action {
            Action::Phase { element, delta } => {
                next.theta[element] = wrap_phase(next.theta[element] + delta.sign() * PHASE_STEP);
            }
            Action::Move { dx, dy, dz } => {
                let step = self.scene.move_step;
                let moved = Position3 {
                    x: state.ris.x + step * f64::from(dx),
                    y: state.ris.y + step * f64::from(dy),
                    z: state.ris.z + step * f64::from(dz),
                };
                let facade = self
                    .scene
                    .facades
                    .iter()
                    .find(|f| f.contains(&state.ris))
                    .expect("the RIS always sits on a facade");
                next.ris = facade.clamp(&moved);
            }
            Action::Power { user, delta } => {
                let f = self.scene.target_factor();
                match delta {
                    Delta::Hold => {}
                    Delta::Increase => next.knobs[user] *= f,
                    Delta::Decrease => {
                        next.knobs[user] /= f;
                        if self.scene.precoding == PrecodingMode::PhNoma
                            && next.knobs[user] < self.scene.floor_sinr(user) * (1.0 - 1e-9)
                        {
                            return None;
                        }
                    }
                }
            }
        }
        Some(next)
    }

    /// Transition function: `(state, action) → (next state, reward, budget)`.
    /// Deterministic for a fixed episode.
    pub fn transition(&self, state: &EnvState, id: ActionId) -> Result<(EnvState, StepOutcome)> {
        let action = self
            .action(id)
            .ok_or_else(|| Error::Domain(format!("action {} out of range", id.0)))?;
        let current = self.evaluate(state)?;
        let stay = |effect| {
            Ok((
                state.clone(),
                StepOutcome { reward: 0.0, ee: current.ee, effect, budget: current.clone() },
            ))
        };
        let Some(mut next) = self.propose(state, action) else {
            return stay(StepEffect::Rejected);
        };
        let budget = match self.evaluate(&next) {
            Ok(b) => b,
            Err(Error::Singular { .. } | Error::DegenerateGeometry(_)) => {
                return stay(StepEffect::Degraded)
            }
            Err(e) => return Err(e),
        };
        if let Action::Power { user, delta: Delta::Decrease } = action {
            if !budget.users[user].floor_met && current.users[user].floor_met {
                return stay(StepEffect::Rejected);
            }
        }
        if budget.beam_power > self.scene.power.p_max * (1.0 + 1e-9) {
            return stay(StepEffect::Rejected);
        }
        next.user_power = budget.users.iter().map(|u| u.power).collect();
        let reward = step_reward(budget.ee, current.ee);
        Ok((next, StepOutcome { reward, ee: budget.ee, effect: StepEffect::Applied, budget }))
    }

    /// Advances the episode by one slot.
    pub fn step(&mut self, id: ActionId) -> Result<StepOutcome> {
        let (next, out) = self.transition(&self.state, id)?;
        self.stats.steps += 1;
        match out.effect {
            StepEffect::Rejected => self.stats.rejected += 1,
            StepEffect::Degraded => self.stats.degraded += 1,
            StepEffect::Applied => {}
        }
        self.stats.sic_failures += out.budget.sic_failures;
        self.stats.floor_violations += out.budget.floor_violations;
        self.state = next;
        self.budget = out.budget.clone();
        Ok(out)
    }

    /// Normalised observation of length `N + 2K + 3`.
    pub fn encode_state(&self) -> Vec<f64> {
        encode_state(&self.scene, &self.state)
    }

    /// Discretised key used by the tabular learner: phases in π/10 bins,
    /// positions on the move grid, knobs in target steps.
    pub fn discrete_key(&self) -> Vec<i64> {
        let s = &self.state;
        let mut key = Vec::with_capacity(self.scene.state_len());
        let bins = (TAU / PHASE_STEP).round() as i64;
        key.extend(s.theta.iter().map(|t| ((t / PHASE_STEP).round() as i64).rem_euclid(bins)));
        let grid = |v: f64| (v / self.scene.move_step).round() as i64;
        key.extend([grid(s.ris.x), grid(s.ris.y), grid(s.ris.z)]);
        for &(x, y) in &s.users {
            key.extend([grid(x), grid(y)]);
        }
        let step = self.scene.target_step_db;
        key.extend(s.knobs.iter().map(|k| (10.0 * k.log10() / step).round() as i64));
        key
    }
}

/// Phases, RIS coordinates, one geometry feature per user and the users'
/// powers. Fitting `N + 2K + 3` leaves a single slot per user position, so
/// each user is represented by its horizontal distance to the RIS.
pub fn encode_state(scene: &SceneConfig, s: &EnvState) -> Vec<f64> {
    let half = scene.region_side / 2.0;
    let (cx, cy) = scene.region_center();
    let mut v = Vec::with_capacity(scene.state_len());
    v.extend(s.theta.iter().map(|t| t / PI - 1.0));
    v.extend([(s.ris.x - cx) / half, (s.ris.y - cy) / half, s.ris.z / half]);
    v.extend(s.users.iter().map(|&(x, y)| (x - s.ris.x).hypot(y - s.ris.y) / half));
    v.extend(s.user_power.iter().map(|p| p / scene.power.p_max));
    v
}

/// Effective rows `h_k = h_direct,kᴴ + h_ris,kᴴ·Θ·H_bs_ris` with path loss applied.
pub fn effective_channels(
    scene: &SceneConfig,
    ch: &EpisodeChannels,
    state: &EnvState,
) -> Result<Vec<ComplexMatrix>> {
    let pl = &scene.path_loss;
    let n = scene.elements;
    let bs_ris = if n > 0 {
        let d = scene.bs.distance(&state.ris);
        let los = los_bs_ris(&scene.bs, &state.ris, n, scene.antennas);
        let small = rician_compose(scene.rician_k, &los, &ch.bs_ris_scatter)?;
        Some(small.scale_real(pl.amplitude(LinkClass::BsRis, d)?))
    } else {
        None
    };
    let phases = PhaseConfig::new(&state.theta)?;
    state
        .users
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| {
            let user = Position3::ground(x, y);
            let amp = pl.amplitude(LinkClass::BsUser, scene.bs.distance(&user))? * scene.direct_link_gain.sqrt();
            let direct = ch.direct[k].scale_real(amp);
            match &bs_ris {
                Some(g) => {
                    let d = state.ris.distance(&user).max(1e-3);
                    let hr = ch.ris_user[k].scale_real(pl.amplitude(LinkClass::RisUser, d)?);
                    composite_channel(&direct, &hr, &phases, g)
                }
                None => Ok(direct),
            }
        })
        .collect()
}

fn initial_knobs(scene: &SceneConfig, rows: &[ComplexMatrix], order: &DecodingOrder) -> Result<Vec<f64>> {
    match scene.precoding {
        PrecodingMode::PhNoma => Ok((0..scene.users).map(|k| scene.floor_sinr(k)).collect()),
        PrecodingMode::Zf => {
            // Half the budget, split evenly across users in radiated power.
            let strong: Vec<ComplexMatrix> = order.clusters().iter().map(|o| rows[o[0]].clone()).collect();
            let w = zf_precoder(&ComplexMatrix::from_rows(&strong, scene.antennas)?)?;
            let per_user = scene.power.p_max / (2.0 * scene.users as f64);
            let mut knobs = vec![0.0; scene.users];
            for (l, o) in order.clusters().iter().enumerate() {
                let norm = w.beam_norm_sqr(l);
                for &u in o {
                    knobs[u] = per_user / norm;
                }
            }
            Ok(knobs)
        }
    }
}

fn evaluate_with(
    scene: &SceneConfig,
    ch: &EpisodeChannels,
    plan: &ClusterPlan,
    frozen: &DecodingOrder,
    state: &EnvState,
) -> Result<LinkBudget> {
    let rows = effective_channels(scene, ch, state)?;
    let gains: Vec<f64> = rows.iter().map(|r| r.norm_sqr()).collect();
    let order = match scene.decoding {
        DecodingPolicy::Dynamic => decoding_order(plan, &gains),
        DecodingPolicy::Frozen => frozen.clone(),
    };
    evaluate_rows(scene, &rows, &order, &state.knobs)
}

/// Link budget for explicit channel rows and a starting decoding order. Under
/// [`DecodingPolicy::Dynamic`] clusters whose SIC fails are flipped when that
/// helps; under `Frozen` the order is used as given.
pub fn evaluate_rows(
    scene: &SceneConfig,
    rows: &[ComplexMatrix],
    order: &DecodingOrder,
    knobs: &[f64],
) -> Result<LinkBudget> {
    if rows.len() != scene.users || knobs.len() != scene.users {
        return Err(Error::dim("evaluate_rows", "one row and knob per user", "mismatched lengths"));
    }
    let dynamic = scene.decoding == DecodingPolicy::Dynamic;
    let raw = match scene.precoding {
        PrecodingMode::PhNoma => ph_links(scene, rows, order, knobs, dynamic)?,
        PrecodingMode::Zf => {
            let first = zf_links(scene, rows, order, knobs)?;
            if dynamic && first.sic_failures > 0 {
                let mut flipped = first.order.clone();
                for l in 0..flipped.clusters().len() {
                    if first.failed[l] {
                        flipped.flip(l);
                    }
                }
                match zf_links(scene, rows, &flipped, knobs) {
                    Ok(alt) if alt.sic_failures < first.sic_failures => alt,
                    _ => first,
                }
            } else {
                first
            }
        }
    };
    finish_budget(scene, raw)
}

struct RawLinks {
    sinr: Vec<f64>,
    power: Vec<f64>,
    order: DecodingOrder,
    beams: Vec<Vec<ComplexMatrix>>,
    failed: Vec<bool>,
    sic_failures: usize,
}

fn ph_links(
    scene: &SceneConfig,
    rows: &[ComplexMatrix],
    order: &DecodingOrder,
    knobs: &[f64],
    dynamic: bool,
) -> Result<RawLinks> {
    let k = scene.users;
    let noise = scene.noise_power();
    let cols: Vec<ComplexMatrix> = rows.iter().map(|r| r.adjoint()).collect();
    let mut out = RawLinks {
        sinr: vec![0.0; k],
        power: vec![0.0; k],
        order: order.clone(),
        beams: Vec::with_capacity(order.clusters().len()),
        failed: vec![false; order.clusters().len()],
        sic_failures: 0,
    };
    for l in 0..order.clusters().len() {
        let [a, b] = order.cluster(l);
        let p = orthogonal_projection(&interference_columns(&cols, a, b)?, scene.antennas)?;
        let solve = |a: usize, b: usize| -> Result<_> {
            let t = SinrTargets::new(knobs[a], knobs[b])?;
            let beams = ph_noma_precoder(&cols[a], &cols[b], &p, t, noise)?;
            let s = sinr_ph(&beams, &p.matmul(&cols[a])?, &p.matmul(&cols[b])?, noise)?;
            let pw = transmit_powers(&beams, t, noise);
            Ok((beams, s, pw))
        };
        let (mut a, mut b) = (a, b);
        let mut sol = solve(a, b)?;
        if !sol.1.sic_ok && dynamic {
            let alt = solve(b, a)?;
            if alt.1.sic_ok {
                out.order.flip(l);
                std::mem::swap(&mut a, &mut b);
                sol = alt;
            }
        }
        let (beams, s, (pa, pb)) = sol;
        if s.sic_ok {
            out.sinr[a] = s.gamma_a;
        } else {
            out.sinr[a] = s.gamma_a_without_sic;
            out.failed[l] = true;
            out.sic_failures += 1;
        }
        out.sinr[b] = s.gamma_b;
        out.power[a] = pa;
        out.power[b] = pb;
        out.beams.push(vec![beams.w_a, beams.w_b]);
    }
    Ok(out)
}

fn zf_links(
    scene: &SceneConfig,
    rows: &[ComplexMatrix],
    order: &DecodingOrder,
    knobs: &[f64],
) -> Result<RawLinks> {
    let noise = scene.noise_power();
    let strong: Vec<ComplexMatrix> = order.clusters().iter().map(|o| rows[o[0]].clone()).collect();
    let w = zf_precoder(&ComplexMatrix::from_rows(&strong, scene.antennas)?)?;
    let lcount = order.clusters().len();
    let beams: Vec<ComplexMatrix> = (0..lcount).map(|l| w.beam(l)).collect();
    let cluster_power: Vec<f64> = order.clusters().iter().map(|o| knobs[o[0]] + knobs[o[1]]).collect();
    let gain = |user: usize, l: usize| -> Result<f64> { Ok(rows[user].matmul(&beams[l])?.get(0, 0).norm_sqr()) };
    let mut out = RawLinks {
        sinr: vec![0.0; scene.users],
        power: vec![0.0; scene.users],
        order: order.clone(),
        beams: beams.iter().map(|b| vec![b.clone()]).collect(),
        failed: vec![false; lcount],
        sic_failures: 0,
    };
    for l in 0..lcount {
        let [a, b] = order.cluster(l);
        let (pa, pb) = (knobs[a], knobs[b]);
        let ga = gain(a, l)?;
        let gb = gain(b, l)?;
        let mut inter = 0.0;
        for j in (0..lcount).filter(|&j| j != l) {
            inter += gain(b, j)? * cluster_power[j];
        }
        let gamma_b = gb * pb / (gb * pa + inter + noise);
        // Other clusters' beams are nulled at the strong user.
        let gamma_b_at_a = ga * pb / (ga * pa + noise);
        if gamma_b_at_a >= gamma_b * (1.0 - 1e-9) {
            out.sinr[a] = ga * pa / noise;
        } else {
            out.sinr[a] = ga * pa / (ga * pb + noise);
            out.failed[l] = true;
            out.sic_failures += 1;
        }
        out.sinr[b] = gamma_b;
        let norm = beams[l].norm_sqr();
        out.power[a] = pa * norm;
        out.power[b] = pb * norm;
    }
    Ok(out)
}

fn finish_budget(scene: &SceneConfig, raw: RawLinks) -> Result<LinkBudget> {
    let users: Vec<UserLink> = raw
        .sinr
        .iter()
        .zip(&raw.power)
        .enumerate()
        .map(|(k, (&sinr, &power))| {
            let rate = achievable_rate(sinr, scene.bandwidth);
            UserLink {
                sinr,
                rate,
                mos: mos(rate, &scene.mos),
                power,
                floor_met: rate >= scene.rate_floors[k] * (1.0 - 1e-9),
            }
        })
        .collect();
    let sum_mos = users.iter().map(|u| u.mos).sum();
    let beam_power: f64 = users.iter().map(|u| u.power).sum();
    let total = total_power(beam_power, scene.users, scene.elements, &scene.power);
    let floor_violations = users.iter().filter(|u| !u.floor_met).count();
    Ok(LinkBudget {
        ee: energy_efficiency(sum_mos, total)?,
        users,
        order: raw.order,
        beams: raw.beams,
        sum_mos,
        beam_power,
        total_power: total,
        sic_failures: raw.sic_failures,
        floor_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn env(seed: u64) -> Env {
        Env::new(SceneConfig::desk(), seed).unwrap()
    }

    fn stay_id(scene: &SceneConfig) -> ActionId {
        ActionId(3 * scene.elements + 2)
    }

    #[test]
    fn action_counts() {
        assert_eq!(action_count(16, 6), 71);
        assert_eq!(enumerate_actions(16, 6).len(), 71);
        assert_eq!(enumerate_actions(1, 1).len(), 11);
        for n in 1..6 {
            for k in 1..6 {
                let acts = enumerate_actions(n, k);
                assert_eq!(acts.len(), 3 * n + 3 * k + 5);
                for (i, a) in acts.iter().enumerate() {
                    assert_eq!(decode_action(ActionId(i), n, k), Some(*a));
                }
                assert_eq!(decode_action(ActionId(acts.len()), n, k), None);
            }
        }
    }

    #[test]
    fn phase_increase_index() {
        let acts = enumerate_actions(5, 2);
        for n in 0..5 {
            assert_eq!(acts[3 * n + 2], Action::Phase { element: n, delta: Delta::Increase });
        }
    }

    #[test]
    fn moves_never_change_height() {
        assert!(MOVES.iter().all(|m| m.2 == 0));
    }

    #[test]
    fn state_length_matches_scene() {
        let e = env(1);
        assert_eq!(e.encode_state().len(), 8 + 2 * 4 + 3);
        let mut scene = SceneConfig::desk();
        scene.elements = 16;
        scene.users = 6;
        scene.antennas = 6;
        scene.rate_floors = vec![1e5; 6];
        let e = Env::new(scene, 2).unwrap();
        assert_eq!(e.encode_state().len(), 31);
    }

    #[test]
    fn encoding_midpoints() {
        let scene = SceneConfig::desk();
        let s = EnvState {
            theta: vec![PI; 8],
            ris: Position3 { x: 50.0, y: 50.0, z: 5.0 },
            users: vec![(50.0, 50.0); 4],
            knobs: vec![1.0; 4],
            user_power: vec![0.0; 4],
        };
        let v = encode_state(&scene, &s);
        assert!(v[..8].iter().all(|x| x.abs() < 1e-15));
        assert_eq!(v[8], 0.0);
        assert_eq!(v[9], 0.0);
    }

    #[test]
    fn reset_is_deterministic_and_on_facade() {
        let a = env(77);
        let b = env(77);
        assert_eq!(a.state(), b.state());
        for seed in 0..10_000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = SceneConfig::desk();
            let f = scene.facades[rng.random_range(0..scene.facades.len())];
            assert!(f.contains(&f.sample(&mut rng)));
        }
        for seed in 0..50 {
            let e = env(seed);
            assert!(e.scene().facades.iter().any(|f| f.contains(&e.state().ris)));
        }
    }

    #[test]
    fn reset_starts_at_floors() {
        let e = env(5);
        for k in 0..4 {
            assert_relative_eq!(e.state().knobs[k], e.scene().floor_sinr(k));
            assert!(e.budget().users[k].floor_met);
        }
        assert!(e.budget().beam_power <= e.scene().power.p_max);
    }

    #[test]
    fn empty_facade_set_is_a_config_error() {
        let mut scene = SceneConfig::desk();
        scene.facades.clear();
        assert!(matches!(Env::new(scene, 0), Err(Error::Config(_))));
    }

    #[test]
    fn no_op_gives_zero_reward() {
        let mut e = env(3);
        let before = e.state().clone();
        let out = e.step(stay_id(e.scene())).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(e.state(), &before);
    }

    #[test]
    fn move_at_boundary_is_clamped() {
        let mut e = env(4);
        let mut s = e.state().clone();
        let f = e.scene().facades[0];
        s.ris = Position3 { x: f.min.x, ..f.min };
        e.set_state(s.clone()).unwrap();
        let left = ActionId(3 * e.scene().elements);
        let out = e.step(left).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(e.state().ris, s.ris);
    }

    #[test]
    fn phase_wraps() {
        let mut e = env(6);
        let mut s = e.state().clone();
        s.theta[0] = TAU - PI / 20.0;
        e.set_state(s).unwrap();
        e.step(ActionId(2)).unwrap();
        assert_relative_eq!(e.state().theta[0], PI / 20.0, epsilon = 1e-12);
    }

    #[test]
    fn target_below_floor_rejected() {
        let mut e = env(8);
        let before = e.state().clone();
        let dec = ActionId(3 * e.scene().elements + 5);
        let out = e.step(dec).unwrap();
        assert_eq!(out.effect, StepEffect::Rejected);
        assert_eq!(out.reward, 0.0);
        assert_eq!(e.state(), &before);
    }

    #[test]
    fn power_cap_enforced() {
        let mut e = env(9);
        let inc = ActionId(3 * e.scene().elements + 5 + 2);
        let mut rejected = false;
        for _ in 0..200 {
            let out = e.step(inc).unwrap();
            assert!(e.budget().beam_power <= e.scene().power.p_max * (1.0 + 1e-9));
            if out.effect == StepEffect::Rejected {
                rejected = true;
                break;
            }
        }
        assert!(rejected, "target should eventually hit the power cap");
    }

    #[test]
    fn transition_is_deterministic() {
        let e = env(10);
        for id in 0..e.action_count() {
            let (s1, o1) = e.transition(e.state(), ActionId(id)).unwrap();
            let (s2, o2) = e.transition(e.state(), ActionId(id)).unwrap();
            assert_eq!(s1, s2);
            assert_eq!(o1, o2);
        }
    }

    #[test]
    fn zf_mode_runs() {
        let mut scene = SceneConfig::desk();
        scene.precoding = PrecodingMode::Zf;
        let mut e = Env::new(scene, 12).unwrap();
        assert!(e.budget().beam_power <= e.scene().power.p_max * (1.0 + 1e-9));
        for id in 0..e.action_count() {
            e.step(ActionId(id)).unwrap();
            assert!(e.budget().beam_power <= e.scene().power.p_max * (1.0 + 1e-9));
        }
    }
}
