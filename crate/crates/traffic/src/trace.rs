//! Synthetic per-user demand traces and their CSV form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TrafficError};

pub const CSV_HEADER: &str = "user_id,interval,demand_bits";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Diurnal,
    Bursty,
}

/// Demand of one user, in bits per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTrace {
    pub user_id: u32,
    /// Interval length in seconds.
    pub interval_s: f64,
    points: Vec<(u64, f64)>,
}

impl TrafficTrace {
    pub fn new(user_id: u32, interval_s: f64, points: Vec<(u64, f64)>) -> Result<Self> {
        if !(interval_s > 0.0) {
            return Err(TrafficError::Config(format!("interval must be positive, got {interval_s}")));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(TrafficError::Config(format!("indices not increasing at {} -> {}", w[0].0, w[1].0)));
        }
        if let Some(p) = points.iter().find(|p| !(p.1 >= 0.0 && p.1.is_finite())) {
            return Err(TrafficError::Config(format!("invalid demand {} at interval {}", p.1, p.0)));
        }
        Ok(Self { user_id, interval_s, points })
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn demands(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Shape of the synthetic generator. Intervals are hourly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    pub base_bits: f64,
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    /// σ of the multiplicative lognormal noise.
    pub noise_sigma: f64,
    /// Mean spikes per interval for bursty traces.
    pub burst_rate: f64,
    /// Size of one spike relative to the base demand.
    pub burst_scale: f64,
    pub interval_s: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            base_bits: 3.6e9,
            daily_amplitude: 0.5,
            weekly_amplitude: 0.2,
            noise_sigma: 0.05,
            burst_rate: 0.05,
            burst_scale: 1.5,
            interval_s: 3600.0,
        }
    }
}

pub fn generate_trace(kind: TraceKind, length: usize, seed: u64) -> Result<TrafficTrace> {
    generate_trace_with(kind, length, seed, 0, &TraceParams::default())
}

/// Sum of 24- and 168-interval sinusoids with random phases, times lognormal
/// noise; bursty traces add Poisson-many spikes per interval.
pub fn generate_trace_with(
    kind: TraceKind,
    length: usize,
    seed: u64,
    user_id: u32,
    p: &TraceParams,
) -> Result<TrafficTrace> {
    if length == 0 {
        return Err(TrafficError::Config("trace length must be at least 1".into()));
    }
    if p.daily_amplitude + p.weekly_amplitude >= 1.0 {
        return Err(TrafficError::Config("sinusoid amplitudes must sum below 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Spikes draw from their own stream so the smooth part matches the diurnal trace.
    let mut spike_rng = rng.clone();
    spike_rng.set_stream(1);
    let (phi_d, phi_w) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let noise = LogNormal::new(0.0, p.noise_sigma).map_err(|e| TrafficError::Config(e.to_string()))?;
    let spikes = match kind {
        TraceKind::Bursty => Some(Poisson::new(p.burst_rate).map_err(|e| TrafficError::Config(e.to_string()))?),
        TraceKind::Diurnal => None,
    };
    let points = (0..length as u64)
        .map(|n| {
            let t = n as f64;
            let shape = 1.0
                + p.daily_amplitude * (TAU * t / 24.0 + phi_d).sin()
                + p.weekly_amplitude * (TAU * t / 168.0 + phi_w).sin();
            let mut d = p.base_bits * shape * noise.sample(&mut rng);
            if let Some(s) = &spikes {
                let k: f64 = s.sample(&mut spike_rng);
                d += k * p.burst_scale * p.base_bits;
            }
            (n, d)
        })
        .collect();
    TrafficTrace::new(user_id, p.interval_s, points)
}

pub fn write_csv<W: Write>(traces: &[TrafficTrace], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for t in traces {
        for (n, d) in &t.points {
            writeln!(w, "{},{},{}", t.user_id, n, d)?;
        }
    }
    Ok(())
}

/// Parses traces grouped by user in order of first appearance.
pub fn read_csv<R: Read>(rd: R, interval_s: f64) -> Result<Vec<TrafficTrace>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rd);
    let header = reader.headers().map_err(|e| TrafficError::Parse { line: 1, message: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != CSV_HEADER.split(',').collect::<Vec<_>>() {
        return Err(TrafficError::Parse { line: 1, message: format!("expected header `{CSV_HEADER}`") });
    }
    let mut users: Vec<(u32, Vec<(u64, f64)>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| TrafficError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| TrafficError::Parse { line, message };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", rec.len())));
        }
        let user: u32 = rec[0].parse().map_err(|e| bad(format!("user_id `{}`: {e}", &rec[0])))?;
        let n: u64 = rec[1].parse().map_err(|e| bad(format!("interval `{}`: {e}", &rec[1])))?;
        let d: f64 = rec[2].parse().map_err(|e| bad(format!("demand_bits `{}`: {e}", &rec[2])))?;
        if !(d >= 0.0 && d.is_finite()) {
            return Err(bad(format!("demand must be finite and non-negative, got {d}")));
        }
        match users.iter_mut().find(|u| u.0 == user) {
            Some(u) => {
                if u.1.last().is_some_and(|p| p.0 >= n) {
                    return Err(bad(format!("interval {n} does not increase for user {user}")));
                }
                u.1.push((n, d));
            }
            None => users.push((user, vec![(n, d)])),
        }
    }
    users.into_iter().map(|(u, pts)| TrafficTrace::new(u, interval_s, pts)).collect()
}

pub fn load_traces(path: &Path, interval_s: f64) -> Result<Vec<TrafficTrace>> {
    read_csv(std::fs::File::open(path)?, interval_s)
}

/// Loads a single-user trace file with hourly intervals.
pub fn load_trace(path: &Path) -> Result<TrafficTrace> {
    let mut all = load_traces(path, 3600.0)?;
    match all.len() {
        1 => Ok(all.pop().unwrap()),
        n => Err(TrafficError::Config(format!("expected one user in {}, found {n}", path.display()))),
    }
}

/// Rate floor in bits/s that serves `demand_bits` within one interval.
pub fn demand_to_rate(demand_bits: f64, interval_s: f64) -> f64 {
    demand_bits / interval_s
}

/// Sample autocorrelation at `lag`.
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
    cov / var
}
