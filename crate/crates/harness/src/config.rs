//! INI experiment files.
//!
//! A file names its kind and optionally a preset to start from; every other
//! key overrides one field. Powers carry a unit (`dBm`, `dBW`, `W`, `mW`) and
//! are stored in watts. Gains may be given in `dB` or as bare linear values.
//! Unknown sections and keys are errors.

use anyhow::{anyhow, bail, ensure, Context};
use ini::{Ini, Properties};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use risnoma_core::channel::Position3;
use risnoma_core::env::{DecodingPolicy, Facade, PrecodingMode, SceneConfig};
use risnoma_core::metrics::MosParams;
use risnoma_core::units::{db_to_linear, dbm_to_watts, dbw_to_watts};
use risnoma_learn::rl::{AgentConfig, AgentKind, EpsilonPolicy, EpsilonSchedule};
use risnoma_traffic::esn::EsnConfig;
use risnoma_traffic::trace::TraceKind;

use crate::experiment::{parse_kind, MainDeployment, SweepVariable, Variant};
use crate::presets::{self, Preset};

/// Watts from `"<value> <unit>"`.
pub fn parse_power(s: &str) -> anyhow::Result<f64> {
    let s = s.trim();
    let (num, unit) = split_unit(s);
    let v: f64 = num.parse().with_context(|| format!("bad power `{s}`"))?;
    let w = match unit {
        "dBm" => dbm_to_watts(v),
        "dBW" => dbw_to_watts(v),
        "W" => v,
        "mW" => v * 1e-3,
        "" => bail!("power `{s}` needs a unit (dBm, dBW, W or mW)"),
        u => bail!("unknown power unit `{u}` in `{s}`"),
    };
    ensure!(w.is_finite() && w >= 0.0, "power `{s}` must be finite and non-negative");
    Ok(w)
}

/// Linear ratio from `"<value> dB"` or a bare linear value.
pub fn parse_gain(s: &str) -> anyhow::Result<f64> {
    let s = s.trim();
    let (num, unit) = split_unit(s);
    let v: f64 = num.parse().with_context(|| format!("bad gain `{s}`"))?;
    match unit {
        "dB" => Ok(db_to_linear(v)),
        "" => Ok(v),
        u => bail!("unknown gain unit `{u}` in `{s}`"),
    }
}

fn split_unit(s: &str) -> (&str, &str) {
    let at = s.find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E').unwrap_or(s.len());
    // An `e` inside the number is an exponent, not a unit.
    (s[..at].trim(), s[at..].trim())
}

/// Seeds as `a..b` or a comma list.
pub fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        ensure!(a < b, "empty seed range `{s}`");
        return Ok((a..b).collect());
    }
    list(s)
}

fn list<T: FromStr>(s: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().with_context(|| format!("bad list item `{p}`")))
        .collect()
}

fn names<T>(s: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> anyhow::Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| parse(p).ok_or_else(|| anyhow!("unknown {what} `{p}`")))
        .collect()
}

/// One INI section; records which keys were read so leftovers can be rejected.
struct Section<'a> {
    name: &'a str,
    props: Option<&'a Properties>,
    used: BTreeSet<&'a str>,
}

impl<'a> Section<'a> {
    fn new(ini: &'a Ini, name: &'a str) -> Self {
        Self { name, props: ini.section(Some(name)), used: BTreeSet::new() }
    }

    fn raw(&mut self, key: &'a str) -> Option<&'a str> {
        self.used.insert(key);
        self.props.and_then(|p| p.get(key))
    }

    fn all(&mut self, key: &'a str) -> Vec<&'a str> {
        self.used.insert(key);
        self.props.map(|p| p.get_all(key).collect()).unwrap_or_default()
    }

    fn with<T>(&mut self, key: &'a str, f: impl FnOnce(&str) -> anyhow::Result<T>) -> anyhow::Result<Option<T>> {
        let name = self.name;
        self.raw(key).map(|v| f(v).with_context(|| format!("[{name}] {key} = {v}"))).transpose()
    }

    fn parse<T: FromStr>(&mut self, key: &'a str) -> anyhow::Result<Option<T>>
    where
        T::Err: std::error::Error + Send + Sync + 'static,
    {
        self.with(key, |v| Ok(v.trim().parse::<T>()?))
    }

    fn set<T: FromStr>(&mut self, key: &'a str, field: &mut T) -> anyhow::Result<()>
    where
        T::Err: std::error::Error + Send + Sync + 'static,
    {
        if let Some(v) = self.parse(key)? {
            *field = v;
        }
        Ok(())
    }

    fn finish(self) -> anyhow::Result<()> {
        if let Some(p) = self.props {
            for (k, _) in p.iter() {
                ensure!(self.used.contains(k), "unknown key `{k}` in [{}]", self.name);
            }
        }
        Ok(())
    }
}

/// Parses an experiment file; `out_dir` applies unless the file sets one.
pub fn load_str(text: &str, out_dir: &Path) -> anyhow::Result<Preset> {
    let ini = Ini::load_from_str(text).map_err(|e| anyhow!("INI syntax: {e}"))?;
    for (name, props) in ini.iter() {
        match name {
            None => ensure!(props.is_empty(), "keys must sit inside a section"),
            Some("experiment" | "scene" | "placement" | "agent" | "esn") => {}
            Some(other) => bail!("unknown section [{other}]"),
        }
    }
    let mut exp = Section::new(&ini, "experiment");
    let out = exp.raw("out_dir").map(PathBuf::from).unwrap_or_else(|| out_dir.to_path_buf());
    let kind = exp.raw("kind").ok_or_else(|| anyhow!("[experiment] needs a `kind`"))?;
    let base = match exp.raw("preset") {
        Some(name) => presets::by_name(name, &out).ok_or_else(|| anyhow!("unknown preset `{name}`"))?,
        None => match kind {
            "sweep" => Preset::Sweep(crate::experiment::ExperimentSpec {
                name: "sweep".into(),
                baselines: Vec::new(),
                ..presets::fig4(&out)
            }),
            "training" => Preset::Training(presets::fig3(&out)),
            "prediction" => Preset::Prediction(presets::fig7(&out)),
            k => bail!("unknown experiment kind `{k}`"),
        },
    };
    let mut scene_sec = Section::new(&ini, "scene");
    let mut placement_sec = Section::new(&ini, "placement");
    let mut agent_sec = Section::new(&ini, "agent");
    let mut esn_sec = Section::new(&ini, "esn");
    let preset = match base {
        Preset::Sweep(mut s) => {
            ensure!(kind == "sweep", "preset is a sweep but kind is `{kind}`");
            s.out_dir = out;
            exp.set("name", &mut s.name)?;
            if let Some(v) = exp.with("seeds", parse_seeds)? {
                s.seeds = v;
            }
            if let Some(v) = exp.with("sweep", |v| SweepVariable::parse(v).ok_or_else(|| anyhow!("unknown sweep")))? {
                s.sweep = v;
            }
            if let Some(v) = exp.with("grid", |v| {
                v.split(',')
                    .map(|p| {
                        let p = p.trim().trim_end_matches("dBm").trim();
                        p.parse::<f64>().with_context(|| format!("bad grid value `{p}`"))
                    })
                    .collect()
            })? {
                s.grid = v;
            }
            if let Some(v) = exp.with("baselines", |v| names(v, "baseline", Variant::parse))? {
                s.baselines = v;
            }
            if let Some(v) = exp.with("deployment", |v| {
                MainDeployment::parse(v).ok_or_else(|| anyhow!("unknown deployment"))
            })? {
                s.deployment = v;
            }
            if let Some(v) = exp.with("tx_power", parse_power)? {
                s.tx_power = v;
            }
            exp.set("realizations", &mut s.realizations)?;
            exp.set("slots", &mut s.slots)?;
            apply_scene(&mut scene_sec, &mut s.scene)?;
            placement_sec.set("episodes", &mut s.placement.episodes)?;
            placement_sec.set("steps", &mut s.placement.steps)?;
            placement_sec.set("step", &mut s.placement.step)?;
            placement_sec.set("reward_slots", &mut s.placement.reward_slots)?;
            apply_agent(&mut placement_sec, &mut s.placement.agent)?;
            s.validate()?;
            Preset::Sweep(s)
        }
        Preset::Training(mut t) => {
            ensure!(kind == "training", "preset is a training run but kind is `{kind}`");
            t.out_dir = out;
            exp.set("name", &mut t.name)?;
            if let Some(v) = exp.with("seeds", parse_seeds)? {
                t.seeds = v;
            }
            exp.set("episodes", &mut t.episodes)?;
            exp.set("steps", &mut t.steps)?;
            if let Some(kinds) = exp.with("agents", |v| names(v, "agent", AgentKind::parse))? {
                let scale = t.agents.first().map_or(1.0, |a| a.reward_scale);
                t.agents = kinds
                    .into_iter()
                    .map(|k| AgentConfig { reward_scale: scale, ..AgentConfig::for_kind(k, t.episodes) })
                    .collect();
            }
            apply_scene(&mut scene_sec, &mut t.scene)?;
            // One pass per agent; the keys read are the same each time.
            for a in &mut t.agents {
                apply_agent(&mut agent_sec, a)?;
                a.validate()?;
            }
            t.scene.validate()?;
            Preset::Training(t)
        }
        Preset::Prediction(mut p) => {
            ensure!(kind == "prediction", "preset is a prediction run but kind is `{kind}`");
            p.out_dir = out;
            exp.set("name", &mut p.name)?;
            if let Some(v) = exp.with("seeds", parse_seeds)? {
                p.seeds = v;
            }
            if let Some(v) = exp.with("kinds", |v| names(v, "neuron kind", parse_kind))? {
                p.kinds = v;
            }
            if let Some(v) = exp.with("trace", |v| match v {
                "diurnal" => Ok(TraceKind::Diurnal),
                "bursty" => Ok(TraceKind::Bursty),
                _ => bail!("unknown trace kind"),
            })? {
                p.trace = v;
            }
            if let Some(f) = exp.raw("trace_file") {
                p.trace_file = Some(PathBuf::from(f));
            }
            exp.set("length", &mut p.length)?;
            exp.set("train_len", &mut p.train_len)?;
            apply_esn(&mut esn_sec, &mut p.esn)?;
            ensure!(p.trace_file.is_some() || p.train_len < p.length, "train_len must be below length");
            Preset::Prediction(p)
        }
    };
    exp.finish()?;
    scene_sec.finish()?;
    placement_sec.finish()?;
    agent_sec.finish()?;
    esn_sec.finish()?;
    Ok(preset)
}

pub fn load(path: &Path, out_dir: &Path) -> anyhow::Result<Preset> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    load_str(&text, out_dir).with_context(|| format!("in {}", path.display()))
}

fn apply_scene<'a>(sec: &mut Section<'a>, scene: &mut SceneConfig) -> anyhow::Result<()> {
    if let Some(base) = sec.raw("base") {
        *scene = match base {
            "figure" => presets::figure_scene(),
            "training" => presets::training_scene(),
            "desk" => SceneConfig::desk(),
            b => bail!("unknown base scene `{b}`"),
        };
    }
    sec.set("antennas", &mut scene.antennas)?;
    sec.set("elements", &mut scene.elements)?;
    if let Some(k) = sec.parse::<usize>("users")? {
        scene.users = k;
        scene.rate_floors = vec![scene.rate_floors.first().copied().unwrap_or(1e5); k];
    }
    if let Some(r) = sec.parse::<f64>("rate_floor")? {
        scene.rate_floors = vec![r; scene.users];
    }
    sec.set("region_side", &mut scene.region_side)?;
    sec.set("bandwidth", &mut scene.bandwidth)?;
    sec.set("noise_psd_dbm_hz", &mut scene.noise_psd_dbm_hz)?;
    if let Some(v) = sec.with("rician_k", parse_gain)? {
        scene.rician_k = v;
    }
    if let Some(v) = sec.with("direct_link_gain", parse_gain)? {
        scene.direct_link_gain = v;
    }
    if let Some(v) = sec.with("p_max", parse_power)? {
        scene.power.p_max = v;
    }
    if let Some(v) = sec.with("user_region", |v| {
        let r: Vec<f64> = list(v)?;
        r.try_into().map_err(|_| anyhow!("user_region needs four values"))
    })? {
        scene.user_region = v;
    }
    if let Some(v) = sec.with("bs", |v| position(&list(v)?))? {
        scene.bs = v;
    }
    let facades = sec.all("facade");
    if !facades.is_empty() {
        scene.facades = facades
            .into_iter()
            .map(|f| {
                let c: Vec<f64> = list(f)?;
                ensure!(c.len() == 6, "facade needs six coordinates, got `{f}`");
                Ok(Facade::new(position(&c[..3])?, position(&c[3..])?)?)
            })
            .collect::<anyhow::Result<_>>()?;
    }
    if let Some([lo, hi]) = sec.with("mos_rates", |v| {
        let r: Vec<f64> = list(v)?;
        <[f64; 2]>::try_from(r).map_err(|_| anyhow!("mos_rates needs two values"))
    })? {
        scene.mos = MosParams::calibrated(lo, hi, 1.0, 4.5)?;
    }
    if let Some(v) = sec.with("decoding", |v| match v {
        "dynamic" => Ok(DecodingPolicy::Dynamic),
        "frozen" => Ok(DecodingPolicy::Frozen),
        _ => bail!("expected dynamic or frozen"),
    })? {
        scene.decoding = v;
    }
    if let Some(v) = sec.with("precoding", |v| match v {
        "ph_noma" => Ok(PrecodingMode::PhNoma),
        "zf" => Ok(PrecodingMode::Zf),
        _ => bail!("expected ph_noma or zf"),
    })? {
        scene.precoding = v;
    }
    Ok(())
}

fn position(c: &[f64]) -> anyhow::Result<Position3> {
    ensure!(c.len() == 3, "a position needs three coordinates");
    Ok(Position3 { x: c[0], y: c[1], z: c[2] })
}

fn apply_agent<'a>(sec: &mut Section<'a>, a: &mut AgentConfig) -> anyhow::Result<()> {
    sec.set("learning_rate", &mut a.learning_rate)?;
    sec.set("discount", &mut a.discount)?;
    sec.set("target_sync", &mut a.target_sync)?;
    sec.set("batch_size", &mut a.batch_size)?;
    sec.set("buffer_capacity", &mut a.buffer_capacity)?;
    sec.set("warmup", &mut a.warmup)?;
    sec.set("reward_scale", &mut a.reward_scale)?;
    if let Some(h) = sec.with("hidden", |v| list(v))? {
        a.hidden = h;
    }
    if let Some(e) = sec.parse::<f64>("epsilon")? {
        a.epsilon = EpsilonPolicy::Fixed(e);
    }
    if let Some(v) = sec.with("epsilon_decay", |v| {
        let p: Vec<f64> = list(v)?;
        ensure!(p.len() == 3, "epsilon_decay needs a, b, c");
        Ok(EpsilonSchedule { a: p[0], b: p[1], c: p[2] })
    })? {
        a.epsilon = EpsilonPolicy::Decaying(v);
    }
    Ok(())
}

fn apply_esn<'a>(sec: &mut Section<'a>, e: &mut EsnConfig) -> anyhow::Result<()> {
    sec.set("reservoir", &mut e.reservoir)?;
    sec.set("leakage", &mut e.leakage)?;
    sec.set("spectral_radius", &mut e.spectral_radius)?;
    sec.set("input_scaling", &mut e.input_scaling)?;
    sec.set("ridge", &mut e.ridge)?;
    sec.set("density", &mut e.density)?;
    sec.set("washout", &mut e.washout)?;
    Ok(())
}
