//! Tabular Q-learning and deep Q agents (DQN, DDQN, D³QN) over [`Env`].

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, VecDeque};
use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use risnoma_core::env::{ActionId, Env};

use crate::error::{LearnError, Result};
use crate::nn::{QNetworkParams, Sample};

/// `ε(m) = a·cos(mπ/2c) + b` for `m ≤ c`, zero afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EpsilonSchedule {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0 && a + b <= 1.0 && c > 0.0) {
            return Err(LearnError::Config(format!("need a, b >= 0, a + b <= 1, c > 0; got a={a}, b={b}, c={c}")));
        }
        Ok(Self { a, b, c })
    }

    /// The jump from `b` to 0 just after `c` is intentional.
    pub fn at(&self, m: usize) -> f64 {
        let m = m as f64;
        if m == self.c {
            // cos(π/2) is not exactly zero in floating point.
            self.b
        } else if m < self.c {
            (self.a * (m * FRAC_PI_2 / self.c).cos() + self.b).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonPolicy {
    Fixed(f64),
    Decaying(EpsilonSchedule),
}

impl EpsilonPolicy {
    /// Exploration rate for episode `m`; the clock counts episodes.
    pub fn at(&self, m: usize) -> f64 {
        match self {
            EpsilonPolicy::Fixed(e) => *e,
            EpsilonPolicy::Decaying(s) => s.at(m),
        }
    }
}

/// Lowest index among the maxima.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Greedy with probability `1−ε`, otherwise uniform over the other `|A|−1` actions.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], eps: f64, rng: &mut R) -> ActionId {
    assert!(!q.is_empty(), "select_action needs at least one action value");
    let best = argmax(q);
    if q.len() == 1 || rng.random::<f64>() >= eps {
        return ActionId(best);
    }
    let j = rng.random_range(0..q.len() - 1);
    ActionId(if j >= best { j + 1 } else { j })
}

/// `(1−α)·Q + α·(r + γ·max_next)`.
pub fn q_table_update(q: f64, r: f64, alpha: f64, gamma: f64, max_next: f64) -> f64 {
    (1.0 - alpha) * q + alpha * (r + gamma * max_next)
}

pub fn dqn_target(r: f64, gamma: f64, target_q_next: &[f64]) -> f64 {
    r + gamma * target_q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// The online network picks the action, the target network scores it.
pub fn ddqn_target(r: f64, gamma: f64, online_q_next: &[f64], target_q_next: &[f64]) -> f64 {
    assert_eq!(online_q_next.len(), target_q_next.len(), "q-vectors differ in length");
    r + gamma * target_q_next[argmax(online_q_next)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Bounded FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(LearnError::Config("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, data: VecDeque::with_capacity(capacity.min(1 << 16)) })
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }

    /// Indices of a minibatch, distinct within the batch.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        index::sample(rng, self.data.len(), n.min(self.data.len())).into_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(n, rng).into_iter().map(|i| &self.data[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    QTable,
    Dqn,
    Ddqn,
    D3qn,
    Random,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::QTable => "q_table",
            AgentKind::Dqn => "dqn",
            AgentKind::Ddqn => "ddqn",
            AgentKind::D3qn => "d3qn",
            AgentKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "q_table" => AgentKind::QTable,
            "dqn" => AgentKind::Dqn,
            "ddqn" => AgentKind::Ddqn,
            "d3qn" => AgentKind::D3qn,
            "random" => AgentKind::Random,
            _ => return None,
        })
    }

    fn is_deep(self) -> bool {
        matches!(self, AgentKind::Dqn | AgentKind::Ddqn | AgentKind::D3qn)
    }

    fn double_target(self) -> bool {
        matches!(self, AgentKind::Ddqn | AgentKind::D3qn)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub learning_rate: f64,
    pub discount: f64,
    /// Learner steps between hard copies of the online network into the target.
    pub target_sync: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions stored before the first gradient step.
    pub warmup: usize,
    pub epsilon: EpsilonPolicy,
    pub hidden: Vec<usize>,
    /// Multiplier applied to rewards before they enter the learner.
    pub reward_scale: f64,
}

impl AgentConfig {
    /// Defaults per kind. D³QN decays ε to zero over `episodes * 3/4`;
    /// the others explore at a fixed 10%.
    pub fn for_kind(kind: AgentKind, episodes: usize) -> Self {
        let epsilon = match kind {
            AgentKind::D3qn => EpsilonPolicy::Decaying(EpsilonSchedule {
                a: 0.9,
                b: 0.1,
                c: (episodes * 3 / 4).max(1) as f64,
            }),
            AgentKind::Random => EpsilonPolicy::Fixed(1.0),
            _ => EpsilonPolicy::Fixed(0.1),
        };
        Self {
            kind,
            learning_rate: 0.01,
            discount: 0.7,
            target_sync: 100,
            batch_size: 32,
            buffer_capacity: 100_000,
            warmup: 500,
            epsilon,
            hidden: vec![128, 128],
            reward_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(LearnError::Config(format!("learning rate must be in (0, 1], got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(LearnError::Config(format!("discount must be in [0, 1), got {}", self.discount)));
        }
        if self.target_sync == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(LearnError::Config("sync period, batch size and capacity must be positive".into()));
        }
        if let EpsilonPolicy::Fixed(e) = self.epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(LearnError::Config(format!("fixed epsilon must be in [0, 1], got {e}")));
            }
        }
        if let EpsilonPolicy::Decaying(s) = self.epsilon {
            EpsilonSchedule::new(s.a, s.b, s.c)?;
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(LearnError::Config("reward scale must be positive".into()));
        }
        Ok(())
    }
}

/// Per-episode training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub cumulative_reward: f64,
    pub mean_ee: f64,
    pub epsilon: f64,
    /// Mean minibatch loss, absent when no gradient step ran.
    pub loss_mean: Option<f64>,
    pub violations: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpisodeRecord>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "episode,cumulative_reward,mean_ee,epsilon,loss_mean,violations";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.records {
            let loss = r.loss_mean.map(|l| l.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.episode, r.cumulative_reward, r.mean_ee, r.epsilon, loss, r.violations
            )?;
        }
        Ok(())
    }

    /// Mean of `mean_ee` over the last `n` episodes.
    pub fn final_mean_ee(&self, n: usize) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(n)..];
        tail.iter().map(|r| r.mean_ee).sum::<f64>() / tail.len().max(1) as f64
    }

    /// Means of cumulative reward over consecutive non-overlapping windows,
    /// aligned to the end of the log.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        let n = self.records.len();
        let start = n % window;
        self.records[start..]
            .chunks(window)
            .map(|c| c.iter().map(|r| r.cumulative_reward).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Seed of episode `episode` under run seed `seed`. Shared by every agent so
/// that competing agents face the same episodes.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    let mut z = seed ^ (episode as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
enum Learner {
    Table(HashMap<Vec<i64>, Vec<f64>>),
    Deep {
        online: QNetworkParams,
        target: QNetworkParams,
        buffer: ReplayBuffer,
        learner_steps: usize,
    },
    Random,
}

/// What an agent needs from the system it controls.
pub trait Environment {
    fn state_len(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Normalised observation of the current state.
    fn observe(&self) -> Vec<f64>;
    /// Discretised state for the tabular learner.
    fn key(&self) -> Vec<i64>;
    /// Starts a new episode.
    fn begin(&mut self, seed: u64) -> Result<()>;
    /// Applies an action and returns `(reward, ee)`.
    fn advance(&mut self, action: ActionId) -> Result<(f64, f64)>;
    fn current_ee(&self) -> f64;
    /// Constraint events so far in this episode.
    fn violations(&self) -> usize;
}

impl Environment for Env {
    fn state_len(&self) -> usize {
        self.scene().state_len()
    }

    fn action_count(&self) -> usize {
        Env::action_count(self)
    }

    fn observe(&self) -> Vec<f64> {
        self.encode_state()
    }

    fn key(&self) -> Vec<i64> {
        self.discrete_key()
    }

    fn begin(&mut self, seed: u64) -> Result<()> {
        self.reset(seed)?;
        Ok(())
    }

    fn advance(&mut self, action: ActionId) -> Result<(f64, f64)> {
        let out = self.step(action)?;
        Ok((out.reward, out.ee))
    }

    fn current_ee(&self) -> f64 {
        self.ee()
    }

    fn violations(&self) -> usize {
        self.stats().violations()
    }
}

/// An agent and its learning state.
#[derive(Debug, Clone)]
pub struct Agent {
    cfg: AgentConfig,
    actions: usize,
    learner: Learner,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(cfg: AgentConfig, state_len: usize, actions: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if actions == 0 || state_len == 0 {
            return Err(LearnError::Config("empty state or action space".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let learner = match cfg.kind {
            AgentKind::QTable => Learner::Table(HashMap::new()),
            AgentKind::Random => Learner::Random,
            _ => {
                let mut sizes = vec![state_len];
                sizes.extend(&cfg.hidden);
                sizes.push(actions);
                let online = QNetworkParams::he_normal(&sizes, &mut rng)?;
                Learner::Deep {
                    target: online.clone(),
                    online,
                    buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
                    learner_steps: 0,
                }
            }
        };
        Ok(Self { cfg, actions, learner, rng })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    /// The online network, for deep agents.
    pub fn network(&self) -> Option<&QNetworkParams> {
        match &self.learner {
            Learner::Deep { online, .. } => Some(online),
            _ => None,
        }
    }

    /// Action values at the environment's current state.
    pub fn q_values<E: Environment>(&self, env: &E) -> Result<Vec<f64>> {
        match &self.learner {
            Learner::Table(t) => Ok(t.get(&env.key()).cloned().unwrap_or_else(|| vec![0.0; self.actions])),
            Learner::Deep { online, .. } => online.forward(&env.observe()),
            Learner::Random => Ok(vec![0.0; self.actions]),
        }
    }

    pub fn act<E: Environment>(&mut self, env: &E, eps: f64) -> Result<ActionId> {
        if matches!(self.learner, Learner::Random) {
            return Ok(ActionId(self.rng.random_range(0..self.actions)));
        }
        let q = self.q_values(env)?;
        Ok(select_action(&q, eps, &mut self.rng))
    }

    pub fn act_greedy<E: Environment>(&mut self, env: &E) -> Result<ActionId> {
        self.act(env, 0.0)
    }

    /// Runs `episodes × steps` of the interaction loop and returns the log.
    pub fn train<E: Environment>(&mut self, env: &mut E, episodes: usize, steps: usize, seed: u64) -> Result<TrainingLog> {
        let mut log = TrainingLog::default();
        for episode in 0..episodes {
            env.begin(episode_seed(seed, episode))?;
            let eps = self.cfg.epsilon.at(episode);
            let violations0 = env.violations();
            let (mut reward_sum, mut ee_sum, mut loss_sum, mut loss_n) = (0.0, 0.0, 0.0, 0usize);
            for step in 0..steps {
                let (state, key) = (env.observe(), self.key_if_tabular(env));
                let action = self.act(env, eps)?;
                let (reward, ee) = env.advance(action)?;
                reward_sum += reward;
                ee_sum += ee;
                let r = reward * self.cfg.reward_scale;
                if let Some(loss) = self.observe(env, state, key, action, r)? {
                    if !loss.is_finite() {
                        return Err(LearnError::Diverged { episode, step, loss });
                    }
                    loss_sum += loss;
                    loss_n += 1;
                }
            }
            log.records.push(EpisodeRecord {
                episode,
                cumulative_reward: reward_sum,
                mean_ee: if steps > 0 { ee_sum / steps as f64 } else { env.current_ee() },
                epsilon: eps,
                loss_mean: (loss_n > 0).then(|| loss_sum / loss_n as f64),
                violations: env.violations() - violations0,
            });
        }
        Ok(log)
    }

    fn key_if_tabular<E: Environment>(&self, env: &E) -> Option<Vec<i64>> {
        matches!(self.learner, Learner::Table(_)).then(|| env.key())
    }

    /// Records a transition and performs at most one learning update.
    fn observe<E: Environment>(
        &mut self,
        env: &E,
        state: Vec<f64>,
        key: Option<Vec<i64>>,
        action: ActionId,
        reward: f64,
    ) -> Result<Option<f64>> {
        let cfg = &self.cfg;
        match &mut self.learner {
            Learner::Random => Ok(None),
            Learner::Table(table) => {
                let n = self.actions;
                let next_key = env.key();
                let max_next = table.get(&next_key).map_or(0.0, |q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                let row = table.entry(key.expect("tabular key")).or_insert_with(|| vec![0.0; n]);
                let old = row[action.0];
                row[action.0] = q_table_update(old, reward, cfg.learning_rate, cfg.discount, max_next);
                let err = row[action.0] - old;
                Ok(Some(err * err))
            }
            Learner::Deep { online, target, buffer, learner_steps } => {
                buffer.push(Transition { state, action, reward, next_state: env.observe() });
                if buffer.len() < cfg.warmup.max(cfg.batch_size) {
                    return Ok(None);
                }
                let batch = buffer.sample(cfg.batch_size, &mut self.rng);
                let dim = online.inputs();
                let mut next = DMatrix::zeros(dim, batch.len());
                for (j, t) in batch.iter().enumerate() {
                    next.column_mut(j).copy_from_slice(&t.next_state);
                }
                let tq = target.forward_batch(&next)?;
                let oq = if cfg.kind.double_target() { Some(online.forward_batch(&next)?) } else { None };
                let samples: Vec<Sample<'_>> = batch
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let tcol: Vec<f64> = tq.column(j).iter().copied().collect();
                        let y = match &oq {
                            Some(o) => {
                                let ocol: Vec<f64> = o.column(j).iter().copied().collect();
                                ddqn_target(t.reward, cfg.discount, &ocol, &tcol)
                            }
                            None => dqn_target(t.reward, cfg.discount, &tcol),
                        };
                        Sample { x: &t.state, action: t.action.0, y }
                    })
                    .collect();
                let (loss, grad) = online.loss_and_gradient(&samples)?;
                online.apply_update(&grad, cfg.learning_rate)?;
                *learner_steps += 1;
                if *learner_steps % cfg.target_sync == 0 {
                    *target = online.clone();
                }
                Ok(Some(loss))
            }
        }
    }
}

/// Builds an agent for `env` and trains it; the agent's own randomness is
/// derived from `seed` on a stream separate from the episodes'.
pub fn train<E: Environment>(
    env: &mut E,
    cfg: &AgentConfig,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<(TrainingLog, Agent)> {
    let mut agent = Agent::new(cfg.clone(), env.state_len(), env.action_count(), seed)?;
    debug_assert_eq!(cfg.kind.is_deep(), agent.network().is_some());
    let log = agent.train(env, episodes, steps, seed)?;
    Ok((log, agent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn schedule_examples() {
        let s = EpsilonSchedule::new(0.9, 0.1, 100.0).unwrap();
        assert_eq!(s.at(0), 1.0);
        assert_eq!(s.at(100), 0.1);
        assert_eq!(s.at(101), 0.0);
        assert_relative_eq!(s.at(50), 0.9 * std::f64::consts::FRAC_1_SQRT_2 + 0.1, epsilon = 1e-12);
        assert_relative_eq!(s.at(50), 0.7364, epsilon = 1e-4);
        assert!(EpsilonSchedule::new(0.8, 0.3, 10.0).is_err());
        assert!(EpsilonSchedule::new(-0.1, 0.3, 10.0).is_err());
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 5]), 0);
    }

    #[test]
    fn greedy_and_never_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = [0.1, 0.9, 0.3];
        for _ in 0..1000 {
            assert_eq!(select_action(&q, 0.0, &mut rng), ActionId(1));
            assert_ne!(select_action(&q, 1.0, &mut rng), ActionId(1));
        }
        assert_eq!(select_action(&[4.0], 1.0, &mut rng), ActionId(0));
    }

    #[test]
    fn tabular_update_examples() {
        assert_relative_eq!(q_table_update(1.0, 2.0, 0.5, 0.7, 3.0), 2.55, epsilon = 1e-12);
        assert_eq!(q_table_update(1.7, 2.0, 0.0, 0.7, 3.0), 1.7);
        assert_eq!(q_table_update(1.7, 2.0, 1.0, 0.7, 0.0), 2.0);
    }

    #[test]
    fn target_examples() {
        assert_relative_eq!(dqn_target(1.0, 0.7, &[0.5, 3.0, -1.0]), 3.1, epsilon = 1e-12);
        assert_eq!(dqn_target(1.0, 0.0, &[0.5, 3.0]), 1.0);
        assert_relative_eq!(dqn_target(1.0, 0.7, &[2.0; 4]), 2.4, epsilon = 1e-12);
        assert_relative_eq!(ddqn_target(1.0, 0.7, &[0.0, 0.0, 5.0], &[9.0, 9.0, 2.0]), 2.4, epsilon = 1e-12);
        assert_eq!(ddqn_target(1.0, 0.7, &[3.0, 1.0], &[0.0, 0.0]), 1.0);
        let q = [0.2, -1.0, 4.0];
        assert_eq!(ddqn_target(0.5, 0.7, &q, &q), dqn_target(0.5, 0.7, &q));
    }

    #[test]
    fn buffer_is_bounded_fifo() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(Transition { state: vec![i as f64], action: ActionId(0), reward: 0.0, next_state: vec![] });
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).unwrap().state, vec![2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut idx = b.sample_indices(3, &mut rng);
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn episode_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|e| episode_seed(7, e)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(episode_seed(1, 0), episode_seed(2, 0));
    }

    #[test]
    fn config_validation() {
        let mut c = AgentConfig::for_kind(AgentKind::D3qn, 400);
        assert!(c.validate().is_ok());
        c.discount = 1.0;
        assert!(c.validate().is_err());
        c.discount = 0.7;
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [AgentKind::QTable, AgentKind::Dqn, AgentKind::Ddqn, AgentKind::D3qn, AgentKind::Random] {
            assert_eq!(AgentKind::parse(k.name()), Some(k));
        }
    }
}
