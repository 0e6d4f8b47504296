//! Built-in experiment definitions, one per figure.

use std::path::Path;

use risnoma_core::channel::Position3;
use risnoma_core::env::{Facade, SceneConfig};
use risnoma_core::metrics::MosParams;
use risnoma_core::units::{db_to_linear, dbm_to_watts};
use risnoma_learn::rl::{AgentConfig, AgentKind, EpsilonPolicy, EpsilonSchedule};
use risnoma_traffic::esn::{EsnConfig, NeuronKind};
use risnoma_traffic::trace::TraceKind;

use crate::experiment::{
    ExperimentSpec, MainDeployment, PredictionSpec, SweepVariable, TrainingSpec, Variant,
};
use crate::placement::PlacementConfig;

pub const NAMES: [&str; 5] = ["fig3", "fig4", "fig5", "fig6", "fig7"];

/// Any preset by name.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Sweep(ExperimentSpec),
    Training(TrainingSpec),
    Prediction(PredictionSpec),
}

pub fn by_name(name: &str, out_dir: &Path) -> Option<Preset> {
    Some(match name {
        "fig3" => Preset::Training(fig3(out_dir)),
        "fig4" => Preset::Sweep(fig4(out_dir)),
        "fig5" => Preset::Sweep(fig5(out_dir)),
        "fig6" => Preset::Sweep(fig6(out_dir)),
        "fig7" => Preset::Prediction(fig7(out_dir)),
        _ => return None,
    })
}

/// Street-scale scene for the sweeps: the direct link is blocked, the surface
/// sits on one 100 m facade and users cluster in the far quadrant.
pub fn figure_scene() -> SceneConfig {
    let users = 4;
    SceneConfig {
        facades: vec![Facade::new(Position3 { x: 0.0, y: 85.0, z: 5.0 }, Position3 { x: 100.0, y: 85.0, z: 5.0 })
            .expect("corners are ordered")],
        user_region: [50.0, 50.0, 100.0, 100.0],
        antennas: 6,
        elements: 16,
        users,
        rician_k: 0.0,
        direct_link_gain: db_to_linear(-60.0),
        mos: MosParams::calibrated(1e5, 7e5, 1.0, 4.5).expect("static calibration is valid"),
        rate_floors: vec![1e5; users],
        ..SceneConfig::desk()
    }
}

/// Small unobstructed scene the control agents are trained on.
pub fn training_scene() -> SceneConfig {
    SceneConfig {
        antennas: 2,
        elements: 4,
        users: 2,
        rate_floors: vec![1e5; 2],
        ..SceneConfig::desk()
    }
}

/// D3QN tuned for the small placement MDP.
pub fn placement_agent(episodes: usize) -> AgentConfig {
    AgentConfig {
        hidden: vec![32, 32],
        warmup: 100,
        target_sync: 50,
        reward_scale: 10.0,
        epsilon: EpsilonPolicy::Decaying(EpsilonSchedule { a: 0.9, b: 0.1, c: (episodes * 3 / 4).max(1) as f64 }),
        ..AgentConfig::for_kind(AgentKind::D3qn, episodes)
    }
}

pub fn placement() -> PlacementConfig {
    let episodes = 80;
    PlacementConfig { agent: placement_agent(episodes), episodes, steps: 25, step: 5.0, reward_slots: 1 }
}

fn sweep(name: &str, out_dir: &Path) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        scene: figure_scene(),
        deployment: MainDeployment::Barycenter,
        placement: placement(),
        sweep: SweepVariable::TransmitPower,
        grid: vec![2.0, 6.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0],
        seeds: (0..10).collect(),
        baselines: Vec::new(),
        tx_power: dbm_to_watts(16.0),
        realizations: 10,
        slots: 5,
        out_dir: out_dir.to_path_buf(),
    }
}

/// EE against transmit power for the multiple-access schemes.
pub fn fig4(out_dir: &Path) -> ExperimentSpec {
    ExperimentSpec {
        baselines: vec![Variant::FixedDecoding, Variant::ZfMode, Variant::Oma],
        ..sweep("fig4", out_dir)
    }
}

/// Learned deployment against the fixed placements at a moderate power.
pub fn fig5(out_dir: &Path) -> ExperimentSpec {
    ExperimentSpec {
        deployment: MainDeployment::Learned,
        sweep: SweepVariable::None,
        grid: vec![10.0],
        tx_power: dbm_to_watts(10.0),
        baselines: vec![Variant::BarycenterDeploy, Variant::RandomDeploy, Variant::NoRis],
        ..sweep("fig5", out_dir)
    }
}

/// EE against the number of reflecting elements.
pub fn fig6(out_dir: &Path) -> ExperimentSpec {
    ExperimentSpec {
        sweep: SweepVariable::Elements,
        grid: vec![2.0, 4.0, 8.0, 12.0, 16.0, 24.0],
        ..sweep("fig6", out_dir)
    }
}

/// Learning curves of the control agents.
pub fn fig3(out_dir: &Path) -> TrainingSpec {
    let episodes = 400;
    let agent = |kind| AgentConfig { reward_scale: 100.0, ..AgentConfig::for_kind(kind, episodes) };
    TrainingSpec {
        name: "fig3".into(),
        scene: training_scene(),
        agents: [AgentKind::D3qn, AgentKind::Dqn, AgentKind::QTable, AgentKind::Random].map(agent).to_vec(),
        episodes,
        steps: 60,
        seeds: (0..10).collect(),
        out_dir: out_dir.to_path_buf(),
    }
}

/// Traffic prediction accuracy of tanh and LSTM reservoirs.
pub fn fig7(out_dir: &Path) -> PredictionSpec {
    PredictionSpec {
        name: "fig7".into(),
        esn: EsnConfig { reservoir: 200, ridge: 1e-3, ..EsnConfig::default() },
        kinds: vec![NeuronKind::Tanh, NeuronKind::Lstm],
        trace: TraceKind::Diurnal,
        trace_file: None,
        length: 1200,
        train_len: 900,
        seeds: (0..10).collect(),
        out_dir: out_dir.to_path_buf(),
    }
}
