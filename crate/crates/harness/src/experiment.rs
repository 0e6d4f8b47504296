//! Experiment specifications, their runners and the CSV tables they emit.

use anyhow::{bail, ensure, Context};
use rayon::prelude::*;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use risnoma_core::env::{DecodingPolicy, Env, SceneConfig};
use risnoma_core::units::dbm_to_watts;
use risnoma_learn::rl::{train, AgentConfig, TrainingLog};
use risnoma_traffic::esn::{EsnConfig, EsnModel, NeuronKind};
use risnoma_traffic::trace::{generate_trace, load_trace, TraceKind};

use crate::eval::{evaluate, Deployment, EvalResult, EvalSettings, Scheme};
use crate::placement::{learned_positions, PlacementConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    /// Grid values are BS transmit powers in dBm.
    TransmitPower,
    /// Grid values are reflecting-element counts.
    Elements,
    /// A single point at the experiment's transmit power.
    None,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::TransmitPower => "transmit_power",
            SweepVariable::Elements => "n_elements",
            SweepVariable::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "transmit_power" => SweepVariable::TransmitPower,
            "n_elements" => SweepVariable::Elements,
            "none" => SweepVariable::None,
            _ => return None,
        })
    }
}

/// One evaluated line of a figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// PH-NOMA, dynamic decoding, the experiment's deployment.
    NomaPh,
    Oma,
    NoRis,
    RandomDeploy,
    BarycenterDeploy,
    FixedDecoding,
    ZfMode,
}

impl Variant {
    pub const BASELINES: [Variant; 6] = [
        Variant::Oma,
        Variant::NoRis,
        Variant::RandomDeploy,
        Variant::BarycenterDeploy,
        Variant::FixedDecoding,
        Variant::ZfMode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NomaPh => "noma_ph",
            Variant::Oma => "oma",
            Variant::NoRis => "no_ris",
            Variant::RandomDeploy => "random_deploy",
            Variant::BarycenterDeploy => "barycenter_deploy",
            Variant::FixedDecoding => "fixed_decoding",
            Variant::ZfMode => "zf_mode",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Variant::NomaPh].into_iter().chain(Variant::BASELINES).find(|v| v.name() == s)
    }
}

/// Where the main (non-deployment-baseline) variants put the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MainDeployment {
    Barycenter,
    Random,
    /// Chosen by a trained placement agent.
    Learned,
}

impl MainDeployment {
    pub fn name(self) -> &'static str {
        match self {
            MainDeployment::Barycenter => "barycenter",
            MainDeployment::Random => "random",
            MainDeployment::Learned => "learned",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "barycenter" => MainDeployment::Barycenter,
            "random" => MainDeployment::Random,
            "learned" => MainDeployment::Learned,
            _ => return None,
        })
    }
}

/// A sweep over one variable comparing the proposed scheme with baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub scene: SceneConfig,
    pub deployment: MainDeployment,
    pub placement: PlacementConfig,
    pub sweep: SweepVariable,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub baselines: Vec<Variant>,
    /// Transmit power in watts when it is not the swept variable.
    pub tx_power: f64,
    pub realizations: usize,
    pub slots: usize,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(!self.seeds.is_empty(), "experiment `{}` has no seeds", self.name);
        ensure!(!self.grid.is_empty(), "experiment `{}` has an empty grid", self.name);
        ensure!(
            self.grid.windows(2).all(|w| w[0] < w[1]),
            "experiment `{}`: grid must be strictly ascending",
            self.name
        );
        if self.sweep == SweepVariable::Elements {
            ensure!(
                self.grid.iter().all(|g| *g >= 0.0 && g.fract() == 0.0),
                "element counts must be non-negative integers"
            );
        }
        if self.sweep == SweepVariable::None {
            ensure!(self.grid.len() == 1, "a sweep over `none` has exactly one grid point");
        }
        ensure!(self.realizations > 0 && self.slots > 0, "realizations and slots must be positive");
        ensure!(self.tx_power > 0.0, "transmit power must be positive");
        self.scene.validate()?;
        Ok(())
    }

    /// The proposed variant first, then the baselines in listed order.
    pub fn variants(&self) -> Vec<Variant> {
        let mut v = vec![Variant::NomaPh];
        v.extend(self.baselines.iter().copied().filter(|b| *b != Variant::NomaPh));
        v
    }

    /// Scene and settings at one grid point.
    pub fn point(&self, value: f64) -> (SceneConfig, EvalSettings) {
        let mut scene = self.scene.clone();
        let mut tx = self.tx_power;
        match self.sweep {
            SweepVariable::TransmitPower => tx = dbm_to_watts(value),
            SweepVariable::Elements => scene.elements = value as usize,
            SweepVariable::None => {}
        }
        (scene, EvalSettings { tx_power: tx, realizations: self.realizations, slots: self.slots })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub variant: String,
    pub grid_value: f64,
    pub seed: u64,
    pub mean_ee: f64,
    pub mean_mos: f64,
    pub mean_power: f64,
}

pub const RESULT_HEADER: [&str; 6] = ["variant", "grid_value", "seed", "mean_ee", "mean_mos", "mean_power"];
pub const SUMMARY_HEADER: [&str; 6] = ["variant", "grid_value", "seeds", "mean_ee", "mean_mos", "mean_power"];

/// Rows ordered by grid value, then seed, then variant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

/// Per-(variant, grid value) averages over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub grid_value: f64,
    pub seeds: usize,
    pub mean_ee: f64,
    pub mean_mos: f64,
    pub mean_power: f64,
}

impl ResultTable {
    pub fn write_csv<W: Write>(&self, w: W) -> anyhow::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(RESULT_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.variant.clone(),
                r.grid_value.to_string(),
                r.seed.to_string(),
                r.mean_ee.to_string(),
                r.mean_mos.to_string(),
                r.mean_power.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(rd: R) -> anyhow::Result<Self> {
        let mut reader = csv::Reader::from_reader(rd);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        ensure!(header == RESULT_HEADER, "unexpected result header {header:?}");
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| -> anyhow::Result<f64> {
                rec[k].parse().with_context(|| format!("row {}: bad {} `{}`", i + 2, RESULT_HEADER[k], &rec[k]))
            };
            rows.push(ResultRow {
                variant: rec[0].to_owned(),
                grid_value: num(1)?,
                seed: rec[2].parse().with_context(|| format!("row {}: bad seed", i + 2))?,
                mean_ee: num(3)?,
                mean_mos: num(4)?,
                mean_power: num(5)?,
            });
        }
        Ok(Self { rows })
    }

    /// Arithmetic means over seeds, in order of first appearance.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out: Vec<(SummaryRow, [f64; 3])> = Vec::new();
        for r in &self.rows {
            let i = match out.iter().position(|(s, _)| s.variant == r.variant && s.grid_value == r.grid_value) {
                Some(i) => i,
                None => {
                    out.push((
                        SummaryRow {
                            variant: r.variant.clone(),
                            grid_value: r.grid_value,
                            seeds: 0,
                            mean_ee: 0.0,
                            mean_mos: 0.0,
                            mean_power: 0.0,
                        },
                        [0.0; 3],
                    ));
                    out.len() - 1
                }
            };
            let (s, acc) = &mut out[i];
            s.seeds += 1;
            acc[0] += r.mean_ee;
            acc[1] += r.mean_mos;
            acc[2] += r.mean_power;
        }
        out.into_iter()
            .map(|(mut s, acc)| {
                let n = s.seeds as f64;
                s.mean_ee = acc[0] / n;
                s.mean_mos = acc[1] / n;
                s.mean_power = acc[2] / n;
                s
            })
            .collect()
    }

    /// Per-seed curve of one variant, ordered by grid value.
    pub fn curve(&self, variant: &str, seed: u64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.variant == variant && r.seed == seed).map(|r| r.mean_ee).collect()
    }

    /// Mean EE of one variant over every row.
    pub fn mean_ee(&self, variant: &str) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.variant == variant).map(|r| r.mean_ee).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], w: W) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for s in rows {
        out.write_record([
            s.variant.clone(),
            s.grid_value.to_string(),
            s.seeds.to_string(),
            s.mean_ee.to_string(),
            s.mean_mos.to_string(),
            s.mean_power.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Creates `dir` and the named files up front so a bad output location fails
/// before any computation.
fn open_outputs(dir: &Path, names: &[&str]) -> anyhow::Result<Vec<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    names
        .iter()
        .map(|n| {
            let p = dir.join(n);
            File::create(&p).with_context(|| format!("cannot write {}", p.display()))
        })
        .collect()
}

/// Evaluates every grid point × seed × variant and writes `<name>.csv` and
/// `<name>_summary.csv` into the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> anyhow::Result<ResultTable> {
    spec.validate()?;
    let results = format!("{}.csv", spec.name);
    let summary = format!("{}_summary.csv", spec.name);
    let mut files = open_outputs(&spec.out_dir, &[&results, &summary])?;
    let table = compute_experiment(spec)?;
    table.write_csv(&mut files[0])?;
    write_summary(&table.summary(), &mut files[1])?;
    Ok(table)
}

/// The table of [`run_experiment`] without touching the filesystem.
pub fn compute_experiment(spec: &ExperimentSpec) -> anyhow::Result<ResultTable> {
    spec.validate()?;
    let jobs: Vec<(f64, u64)> = spec.grid.iter().flat_map(|&g| spec.seeds.iter().map(move |&s| (g, s))).collect();
    let chunks: Vec<Vec<ResultRow>> = jobs
        .par_iter()
        .map(|&(g, seed)| run_point(spec, g, seed))
        .collect::<anyhow::Result<_>>()?;
    Ok(ResultTable { rows: chunks.into_iter().flatten().collect() })
}

fn run_point(spec: &ExperimentSpec, value: f64, seed: u64) -> anyhow::Result<Vec<ResultRow>> {
    let (scene, settings) = spec.point(value);
    let main = match spec.deployment {
        MainDeployment::Barycenter => Deployment::Barycenter,
        MainDeployment::Random => Deployment::Random,
        MainDeployment::Learned => {
            let variants = spec.variants();
            let needs = variants.iter().any(|v| {
                matches!(v, Variant::NomaPh | Variant::Oma | Variant::FixedDecoding | Variant::ZfMode)
            });
            if needs {
                Deployment::Fixed(learned_positions(&scene, Scheme::NomaPh, &settings, &spec.placement, seed)?)
            } else {
                Deployment::Barycenter
            }
        }
    };
    let frozen = SceneConfig { decoding: DecodingPolicy::Frozen, ..scene.clone() };
    spec.variants()
        .into_iter()
        .map(|v| {
            let r: EvalResult = match v {
                Variant::NomaPh => evaluate(&scene, Scheme::NomaPh, &main, &settings, seed)?,
                Variant::Oma => evaluate(&scene, Scheme::Oma, &main, &settings, seed)?,
                Variant::ZfMode => evaluate(&scene, Scheme::NomaZf, &main, &settings, seed)?,
                Variant::FixedDecoding => evaluate(&frozen, Scheme::NomaPh, &main, &settings, seed)?,
                Variant::NoRis => evaluate(&scene, Scheme::NomaPh, &Deployment::NoRis, &settings, seed)?,
                Variant::RandomDeploy => evaluate(&scene, Scheme::NomaPh, &Deployment::Random, &settings, seed)?,
                Variant::BarycenterDeploy => {
                    evaluate(&scene, Scheme::NomaPh, &Deployment::Barycenter, &settings, seed)?
                }
            };
            Ok(ResultRow {
                variant: v.name().to_owned(),
                grid_value: value,
                seed,
                mean_ee: r.ee,
                mean_mos: r.mos,
                mean_power: r.power,
            })
        })
        .collect()
}

/// Learning curves of several agents on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSpec {
    pub name: String,
    pub scene: SceneConfig,
    pub agents: Vec<AgentConfig>,
    pub episodes: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

/// One training run's log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub agent: String,
    pub seed: u64,
    pub log: TrainingLog,
}

pub const TRAINING_HEADER: [&str; 8] =
    ["agent", "seed", "episode", "cumulative_reward", "mean_ee", "epsilon", "loss_mean", "violations"];

pub fn write_training_csv<W: Write>(runs: &[TrainingRun], w: W) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRAINING_HEADER)?;
    for run in runs {
        for r in &run.log.records {
            out.write_record([
                run.agent.clone(),
                run.seed.to_string(),
                r.episode.to_string(),
                r.cumulative_reward.to_string(),
                r.mean_ee.to_string(),
                r.epsilon.to_string(),
                r.loss_mean.map(|l| l.to_string()).unwrap_or_default(),
                r.violations.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Trains every agent on every seed and writes `<name>.csv`.
pub fn run_training(spec: &TrainingSpec) -> anyhow::Result<Vec<TrainingRun>> {
    ensure!(!spec.seeds.is_empty(), "training `{}` has no seeds", spec.name);
    ensure!(!spec.agents.is_empty(), "training `{}` has no agents", spec.name);
    let mut files = open_outputs(&spec.out_dir, &[&format!("{}.csv", spec.name)])?;
    let runs = compute_training(spec)?;
    write_training_csv(&runs, &mut files[0])?;
    Ok(runs)
}

pub fn compute_training(spec: &TrainingSpec) -> anyhow::Result<Vec<TrainingRun>> {
    spec.scene.validate()?;
    let jobs: Vec<(&AgentConfig, u64)> =
        spec.agents.iter().flat_map(|a| spec.seeds.iter().map(move |&s| (a, s))).collect();
    jobs.par_iter()
        .map(|&(cfg, seed)| {
            let mut env = Env::new(spec.scene.clone(), seed)?;
            let (log, _) = train(&mut env, cfg, spec.episodes, spec.steps, seed)?;
            Ok(TrainingRun { agent: cfg.kind.name().to_owned(), seed, log })
        })
        .collect()
}

/// One-step traffic prediction accuracy of each neuron kind.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSpec {
    pub name: String,
    pub esn: EsnConfig,
    pub kinds: Vec<NeuronKind>,
    pub trace: TraceKind,
    /// Single-user trace CSV used instead of a generated trace.
    pub trace_file: Option<PathBuf>,
    pub length: usize,
    pub train_len: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub kind: NeuronKind,
    pub seed: u64,
    pub nrmse: f64,
}

pub fn kind_name(k: NeuronKind) -> &'static str {
    match k {
        NeuronKind::Tanh => "tanh",
        NeuronKind::Lstm => "lstm",
    }
}

pub fn parse_kind(s: &str) -> Option<NeuronKind> {
    match s {
        "tanh" => Some(NeuronKind::Tanh),
        "lstm" => Some(NeuronKind::Lstm),
        _ => None,
    }
}

pub const PREDICTION_HEADER: [&str; 3] = ["kind", "seed", "nrmse"];

/// Held-out one-step NRMSE per kind and seed; writes `<name>.csv`.
pub fn run_prediction(spec: &PredictionSpec) -> anyhow::Result<Vec<PredictionRow>> {
    ensure!(!spec.seeds.is_empty(), "prediction `{}` has no seeds", spec.name);
    let mut files = open_outputs(&spec.out_dir, &[&format!("{}.csv", spec.name)])?;
    let rows = compute_prediction(spec)?;
    let mut out = csv::Writer::from_writer(&mut files[0]);
    out.write_record(PREDICTION_HEADER)?;
    for r in &rows {
        out.write_record([kind_name(r.kind).to_owned(), r.seed.to_string(), r.nrmse.to_string()])?;
    }
    out.flush()?;
    Ok(rows)
}

pub fn compute_prediction(spec: &PredictionSpec) -> anyhow::Result<Vec<PredictionRow>> {
    let recorded = match &spec.trace_file {
        Some(path) => Some(load_trace(path).with_context(|| format!("loading {}", path.display()))?.demands()),
        None => None,
    };
    let length = recorded.as_ref().map_or(spec.length, Vec::len);
    if spec.train_len >= length {
        bail!("training length {} must be below the trace length {}", spec.train_len, length);
    }
    let jobs: Vec<(NeuronKind, u64)> =
        spec.kinds.iter().flat_map(|&k| spec.seeds.iter().map(move |&s| (k, s))).collect();
    jobs.par_iter()
        .map(|&(kind, seed)| {
            let series = match &recorded {
                Some(r) => r.clone(),
                None => generate_trace(spec.trace, spec.length, seed)?.demands(),
            };
            let mut model = EsnModel::new(EsnConfig { kind, ..spec.esn.clone() }, seed)?;
            let nrmse = model.holdout_nrmse(&series, spec.train_len)?;
            Ok(PredictionRow { kind, seed, nrmse })
        })
        .collect()
}
