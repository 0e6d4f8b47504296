//! Learned deployment: an agent walks the surface over a grid of facade
//! points, rewarded by the change in statically evaluated EE, and the point a
//! greedy rollout ends on is the deployment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use risnoma_core::channel::Position3;
use risnoma_core::env::{ActionId, SceneConfig, MOVES};
use risnoma_learn::rl::{episode_seed, train, AgentConfig, Environment};

use crate::eval::{evaluate_realization, realization_seed, EvalSettings, Realization, Scheme};

/// Facade points spaced `step` apart along each facade's extent.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementGrid {
    points: Vec<Position3>,
    /// `(facade, i, j)` of each point.
    cells: Vec<(usize, usize, usize)>,
    dims: Vec<(usize, usize)>,
}

impl PlacementGrid {
    pub fn new(scene: &SceneConfig, step: f64) -> anyhow::Result<Self> {
        anyhow::ensure!(step > 0.0, "placement step must be positive, got {step}");
        let (mut points, mut cells, mut dims) = (Vec::new(), Vec::new(), Vec::new());
        for (f, facade) in scene.facades.iter().enumerate() {
            let count = |lo: f64, hi: f64| ((hi - lo) / step + 1e-9).floor() as usize + 1;
            let (nx, ny) = (count(facade.min.x, facade.max.x), count(facade.min.y, facade.max.y));
            dims.push((nx, ny));
            for i in 0..nx {
                for j in 0..ny {
                    points.push(Position3 {
                        x: facade.min.x + i as f64 * step,
                        y: facade.min.y + j as f64 * step,
                        z: facade.min.z,
                    });
                    cells.push((f, i, j));
                }
            }
        }
        Ok(Self { points, cells, dims })
    }

    pub fn points(&self) -> &[Position3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Grid point nearest to `p`.
    pub fn snap(&self, p: &Position3) -> usize {
        (0..self.points.len())
            .min_by(|&a, &b| self.points[a].distance(p).total_cmp(&self.points[b].distance(p)))
            .expect("grid is nonempty")
    }

    /// Index reached from `from` by one move; moves stop at the facade edge.
    pub fn moved(&self, from: usize, dx: i8, dy: i8) -> usize {
        let (f, i, j) = self.cells[from];
        let (nx, ny) = self.dims[f];
        let ni = (i as i64 + i64::from(dx)).clamp(0, nx as i64 - 1) as usize;
        let nj = (j as i64 + i64::from(dy)).clamp(0, ny as i64 - 1) as usize;
        self.cells.iter().position(|&c| c == (f, ni, nj)).expect("cell exists")
    }
}

/// The placement MDP of one realization. Actions are the five RIS moves.
#[derive(Debug, Clone)]
pub struct PlacementEnv {
    grid: PlacementGrid,
    ee: Vec<f64>,
    current: usize,
    center: (f64, f64),
    half: (f64, f64),
}

impl PlacementEnv {
    /// `ee[i]` is the EE with the surface at grid point `i`.
    pub fn new(grid: PlacementGrid, ee: Vec<f64>, start: usize) -> Self {
        // Observations span [-1, 1] over the grid's bounding box.
        let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
        for p in grid.points() {
            lo = (lo.0.min(p.x), lo.1.min(p.y));
            hi = (hi.0.max(p.x), hi.1.max(p.y));
        }
        let half = |a: f64, b: f64| ((b - a) / 2.0).max(1.0);
        Self {
            center: ((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0),
            half: (half(lo.0, hi.0), half(lo.1, hi.1)),
            grid,
            ee,
            current: start,
        }
    }

    pub fn position(&self) -> Position3 {
        self.grid.points[self.current]
    }

    pub fn place(&mut self, index: usize) {
        self.current = index;
    }
}

impl Environment for PlacementEnv {
    fn state_len(&self) -> usize {
        2
    }

    fn action_count(&self) -> usize {
        MOVES.len()
    }

    fn observe(&self) -> Vec<f64> {
        let p = self.position();
        vec![(p.x - self.center.0) / self.half.0, (p.y - self.center.1) / self.half.1]
    }

    fn key(&self) -> Vec<i64> {
        vec![self.current as i64]
    }

    /// Exploring starts: each episode begins at a uniform grid point.
    fn begin(&mut self, seed: u64) -> risnoma_learn::Result<()> {
        self.current = ChaCha8Rng::seed_from_u64(seed).random_range(0..self.grid.len());
        Ok(())
    }

    fn advance(&mut self, action: ActionId) -> risnoma_learn::Result<(f64, f64)> {
        let &(dx, dy, _) = MOVES
            .get(action.0)
            .ok_or_else(|| risnoma_learn::LearnError::Config(format!("move {} out of range", action.0)))?;
        let next = self.grid.moved(self.current, dx, dy);
        let reward = self.ee[next] - self.ee[self.current];
        self.current = next;
        Ok((reward, self.ee[next]))
    }

    fn current_ee(&self) -> f64 {
        self.ee[self.current]
    }

    fn violations(&self) -> usize {
        0
    }
}

/// How the placement agent is trained.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementConfig {
    pub agent: AgentConfig,
    pub episodes: usize,
    pub steps: usize,
    /// Grid spacing along the facade in meters.
    pub step: f64,
    /// Slots per grid point when tabulating the reward.
    pub reward_slots: usize,
}

/// Trains one agent per realization and returns where each greedy rollout,
/// started at the realization's random deployment, ends.
pub fn learned_positions(
    scene: &SceneConfig,
    scheme: Scheme,
    settings: &EvalSettings,
    cfg: &PlacementConfig,
    seed: u64,
) -> anyhow::Result<Vec<Position3>> {
    let grid = PlacementGrid::new(scene, cfg.step)?;
    anyhow::ensure!(!grid.is_empty(), "placement grid is empty");
    let table_settings = EvalSettings { slots: cfg.reward_slots, ..*settings };
    let mut out = Vec::with_capacity(settings.realizations);
    for r in 0..settings.realizations {
        let real = Realization::draw(scene, realization_seed(seed, r));
        let ee = grid
            .points()
            .iter()
            .map(|p| Ok(evaluate_realization(scene, scheme, &real, *p, &table_settings)?.ee))
            .collect::<anyhow::Result<Vec<f64>>>()?;
        let start = grid.snap(&real.random_ris);
        let mut env = PlacementEnv::new(grid.clone(), ee, start);
        let (_, mut agent) = train(&mut env, &cfg.agent, cfg.episodes, cfg.steps, episode_seed(seed, r))?;
        env.place(start);
        for _ in 0..cfg.steps {
            let a = agent.act_greedy(&env)?;
            env.advance(a)?;
        }
        out.push(env.position());
    }
    Ok(out)
}
