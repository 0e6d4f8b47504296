//! Echo state network with tanh or fixed-gate LSTM neurons. Only the linear
//! readout is trained.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};

use crate::error::{Result, TrafficError};

const MAGIC: &[u8; 4] = b"ESN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronKind {
    Tanh,
    Lstm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsnConfig {
    pub reservoir: usize,
    /// Leak rate α: 1 replaces the state, 0 freezes it.
    pub leakage: f64,
    pub spectral_radius: f64,
    pub input_scaling: f64,
    pub ridge: f64,
    pub kind: NeuronKind,
    /// Fraction of nonzero recurrent weights.
    pub density: f64,
    /// Steps discarded before readout fitting and scoring.
    pub washout: usize,
}

impl Default for EsnConfig {
    /// Reservoir of 2000 tanh neurons.
    fn default() -> Self {
        Self {
            reservoir: 2000,
            leakage: 0.3,
            spectral_radius: 0.9,
            input_scaling: 1.0,
            ridge: 1e-6,
            kind: NeuronKind::Tanh,
            density: 0.1,
            washout: 100,
        }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reservoir == 0 {
            return Err(TrafficError::Config("reservoir needs at least one neuron".into()));
        }
        if !(self.leakage > 0.0 && self.leakage <= 1.0) {
            return Err(TrafficError::Config(format!("leakage must be in (0, 1], got {}", self.leakage)));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius < 1.0) {
            return Err(TrafficError::Config(format!(
                "spectral radius must be in (0, 1), got {}",
                self.spectral_radius
            )));
        }
        if !(self.input_scaling >= 0.0 && self.ridge >= 0.0 && self.density > 0.0 && self.density <= 1.0) {
            return Err(TrafficError::Config("invalid input scaling, ridge or density".into()));
        }
        Ok(())
    }
}

/// Square matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut row_ptr = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for r in 0..n {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    cols.push(c);
                    vals.push(m[(r, c)]);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[k])] = self.vals[k];
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |r, _| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum()
        })
    }

    fn scale(&mut self, s: f64) {
        self.vals.iter_mut().for_each(|v| *v *= s);
    }
}

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Fixed per-neuron gate parameters: gate = σ(gain ⊙ z + bias).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGates {
    pub input_gain: DVector<f64>,
    pub input_bias: DVector<f64>,
    pub forget_gain: DVector<f64>,
    pub forget_bias: DVector<f64>,
    pub output_gain: DVector<f64>,
    pub output_bias: DVector<f64>,
}

impl LstmGates {
    fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v = |lo: f64, hi: f64| DVector::from_fn(n, |_, _| rng.random_range(lo..hi));
        Self {
            input_gain: v(-1.0, 1.0),
            input_bias: v(-0.5, 0.5),
            forget_gain: v(-1.0, 1.0),
            // Biased open so cells hold memory over tens of steps.
            forget_bias: v(1.0, 3.0),
            output_gain: v(-1.0, 1.0),
            output_bias: v(-0.5, 0.5),
        }
    }

    fn blocks(&self) -> [&DVector<f64>; 6] {
        [
            &self.input_gain,
            &self.input_bias,
            &self.forget_gain,
            &self.forget_bias,
            &self.output_gain,
            &self.output_bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub x: DVector<f64>,
    /// Cell state, for LSTM neurons only.
    pub c: Option<DVector<f64>>,
}

/// Fixed random input and recurrent weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    pub kind: NeuronKind,
    pub leakage: f64,
    /// `N_x × (1 + N_u)`; the first column multiplies the bias entry.
    pub w_in: DMatrix<f64>,
    pub w: SparseMatrix,
    pub gates: Option<LstmGates>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Reservoir {
    /// Uniform `W_in` in `[−s, s]`; sparse `W` rescaled to the target spectral radius.
    pub fn init(cfg: &EsnConfig, inputs: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.reservoir;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.input_scaling;
        let w_in = DMatrix::from_fn(n, 1 + inputs, |_, _| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 });
        let mut dense = DMatrix::zeros(n, n);
        for v in dense.iter_mut() {
            if rng.random::<f64>() < cfg.density {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        // A draw with no nonzero eigenvalue cannot be rescaled; densify it.
        let mut rho = spectral_radius(&dense);
        let mut attempts = 0;
        while rho < 1e-9 {
            attempts += 1;
            if attempts > 32 {
                return Err(TrafficError::Config("could not draw a reservoir with nonzero spectrum".into()));
            }
            let (r, c) = (rng.random_range(0..n), rng.random_range(0..n));
            dense[(r, c)] = rng.random_range(-1.0..1.0);
            rho = spectral_radius(&dense);
        }
        let mut w = SparseMatrix::from_dense(&dense);
        w.scale(cfg.spectral_radius / rho);
        let gates = (cfg.kind == NeuronKind::Lstm).then(|| LstmGates::random(n, &mut rng));
        Ok(Self { kind: cfg.kind, leakage: cfg.leakage, w_in, w, gates })
    }

    pub fn size(&self) -> usize {
        self.w.dim()
    }

    pub fn inputs(&self) -> usize {
        self.w_in.ncols() - 1
    }

    pub fn zero_state(&self) -> ReservoirState {
        let n = self.size();
        ReservoirState { x: DVector::zeros(n), c: self.gates.as_ref().map(|_| DVector::zeros(n)) }
    }

    /// One leaky-integrated update driven by input `u`.
    pub fn update(&self, state: &ReservoirState, u: &[f64]) -> Result<ReservoirState> {
        if u.len() != self.inputs() {
            return Err(TrafficError::Dimension(format!("input of length {}, expected {}", u.len(), self.inputs())));
        }
        let mut z = self.w.mul_vec(&state.x);
        for r in 0..self.size() {
            z[r] += self.w_in[(r, 0)] + u.iter().enumerate().map(|(j, v)| self.w_in[(r, j + 1)] * v).sum::<f64>();
        }
        let a = self.leakage;
        let (target, c) = match (&self.gates, &state.c) {
            (Some(g), Some(c_prev)) => {
                let mut c = c_prev.clone();
                let mut h = DVector::zeros(self.size());
                for r in 0..self.size() {
                    let i = sigmoid(g.input_gain[r] * z[r] + g.input_bias[r]);
                    let f = sigmoid(g.forget_gain[r] * z[r] + g.forget_bias[r]);
                    let o = sigmoid(g.output_gain[r] * z[r] + g.output_bias[r]);
                    c[r] = f * c[r] + i * z[r].tanh();
                    h[r] = o * c[r].tanh();
                }
                (h, Some(c))
            }
            (None, _) => (z.map(f64::tanh), None),
            (Some(_), None) => return Err(TrafficError::Dimension("LSTM reservoir state lacks a cell state".into())),
        };
        let x = state.x.scale(1.0 - a) + target.scale(a);
        Ok(ReservoirState { x, c })
    }
}

/// Ridge solution `W_out = Y·Xᵀ·(X·Xᵀ + λI)⁻¹` with samples as columns of `x`.
pub fn train_readout(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if x.ncols() != y.ncols() {
        return Err(TrafficError::Dimension(format!("{} feature columns vs {} targets", x.ncols(), y.ncols())));
    }
    let p = x.nrows();
    if ridge == 0.0 && x.ncols() < p {
        return Err(TrafficError::IllPosed(format!("{} samples for {p} unknowns without regularisation", x.ncols())));
    }
    let gram = x * x.transpose() + DMatrix::identity(p, p) * ridge;
    let chol = Cholesky::new(gram).ok_or_else(|| TrafficError::IllPosed("normal equations are singular".into()))?;
    let rhs = x * y.transpose();
    Ok(chol.solve(&rhs).transpose())
}

/// Root-mean-square error normalised by the target's standard deviation.
pub fn nrmse(pred: &[f64], actual: &[f64]) -> f64 {
    assert_eq!(pred.len(), actual.len(), "series differ in length");
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let var = actual.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let mse = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / n;
    (mse / var).sqrt()
}

/// A reservoir plus readout for scalar one-step-ahead prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct EsnModel {
    pub cfg: EsnConfig,
    pub reservoir: Reservoir,
    /// `1 × (2 + N_x)` readout over `[1; u; x]`.
    pub w_out: Option<DMatrix<f64>>,
    /// Inputs are divided by this before entering the reservoir.
    pub input_scale: f64,
}

impl EsnModel {
    pub fn new(cfg: EsnConfig, seed: u64) -> Result<Self> {
        let reservoir = Reservoir::init(&cfg, 1, seed)?;
        Ok(Self { cfg, reservoir, w_out: None, input_scale: 1.0 })
    }

    fn features(&self, series: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.reservoir.size();
        let mut out = DMatrix::zeros(2 + n, series.len());
        let mut s = self.reservoir.zero_state();
        for (t, &u) in series.iter().enumerate() {
            let u = u / self.input_scale;
            s = self.reservoir.update(&s, &[u])?;
            out[(0, t)] = 1.0;
            out[(1, t)] = u;
            out.view_mut((2, t), (n, 1)).copy_from(&s.x);
        }
        Ok(out)
    }

    /// Fits the readout to predict `series[t+1]` from the state after `series[t]`.
    pub fn fit(&mut self, series: &[f64]) -> Result<()> {
        let washout = self.cfg.washout;
        if series.len() < washout + 2 {
            return Err(TrafficError::Config(format!("series of {} steps is shorter than the washout", series.len())));
        }
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        self.input_scale = if mean.abs() > 0.0 { mean.abs() } else { 1.0 };
        let feats = self.features(&series[..series.len() - 1])?;
        let x = feats.columns(washout, feats.ncols() - washout).into_owned();
        let y = DMatrix::from_iterator(1, x.ncols(), series[washout + 1..].iter().map(|v| v / self.input_scale));
        self.w_out = Some(train_readout(&x, &y, self.cfg.ridge)?);
        Ok(())
    }

    /// Teacher-forced one-step predictions: entry `t` predicts `series[t+1]`.
    pub fn one_step(&self, series: &[f64]) -> Result<Vec<f64>> {
        let w_out = self.w_out.as_ref().ok_or(TrafficError::Untrained)?;
        let feats = self.features(series)?;
        let y = w_out * feats;
        Ok(y.iter().map(|v| (v * self.input_scale).max(0.0)).collect())
    }

    /// Warms up on `history`, then feeds its own predictions back for `horizon` steps.
    pub fn predict(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
        let w_out = self.w_out.as_ref().ok_or(TrafficError::Untrained)?;
        if history.len() < self.cfg.washout {
            return Err(TrafficError::Config(format!(
                "history of {} steps is shorter than the {}-step washout",
                history.len(),
                self.cfg.washout
            )));
        }
        let n = self.reservoir.size();
        let mut s = self.reservoir.zero_state();
        let readout = |s: &ReservoirState, u: f64| {
            let mut f = DVector::zeros(2 + n);
            f[0] = 1.0;
            f[1] = u;
            f.rows_mut(2, n).copy_from(&s.x);
            ((w_out * f)[0]).max(0.0)
        };
        let mut u = 0.0;
        for &v in history {
            u = v / self.input_scale;
            s = self.reservoir.update(&s, &[u])?;
        }
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let next = readout(&s, u);
            out.push(next * self.input_scale);
            u = next;
            s = self.reservoir.update(&s, &[u])?;
        }
        Ok(out)
    }

    /// Fits on `series[..train_len]` and scores one-step predictions on the rest.
    pub fn holdout_nrmse(&mut self, series: &[f64], train_len: usize) -> Result<f64> {
        if train_len + 2 > series.len() {
            return Err(TrafficError::Config("no held-out steps".into()));
        }
        self.fit(&series[..train_len])?;
        let pred = self.one_step(&series[..series.len() - 1])?;
        Ok(nrmse(&pred[train_len - 1..], &series[train_len..]))
    }

    /// Header `"ESN1"`, then u64 kind, N_x, N_u, readout width, then f64
    /// leakage and input scale, then row-major `W_in`, dense `W`, `W_out`
    /// and the six gate vectors for LSTM neurons; all little-endian.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let w_out = self.w_out.as_ref().ok_or(TrafficError::Untrained)?;
        let r = &self.reservoir;
        w.write_all(MAGIC)?;
        let kind = match r.kind {
            NeuronKind::Tanh => 0u64,
            NeuronKind::Lstm => 1,
        };
        for v in [kind, r.size() as u64, r.inputs() as u64, w_out.ncols() as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut put = |m: &DMatrix<f64>| -> Result<()> {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_all(&m[(i, j)].to_le_bytes())?;
                }
            }
            Ok(())
        };
        put(&DMatrix::from_row_slice(1, 2, &[r.leakage, self.input_scale]))?;
        put(&r.w_in)?;
        put(&r.w.to_dense())?;
        put(w_out)?;
        if let Some(g) = &r.gates {
            for b in g.blocks() {
                put(&DMatrix::from_column_slice(1, b.len(), b.as_slice()))?;
            }
        }
        Ok(())
    }

    /// Restores a saved model; `cfg` supplies the fields not stored in the file.
    pub fn load<R: Read>(mut rd: R, cfg: EsnConfig) -> Result<Self> {
        let mut magic = [0u8; 4];
        rd.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TrafficError::Model("bad magic".into()));
        }
        let mut u64s = [0u64; 4];
        for v in &mut u64s {
            let mut b = [0u8; 8];
            rd.read_exact(&mut b)?;
            *v = u64::from_le_bytes(b);
        }
        let [kind, n, inputs, width] = u64s.map(|v| v as usize);
        if n == 0 || n > 100_000 || width != 1 + inputs + n {
            return Err(TrafficError::Model(format!("inconsistent dimensions n={n}, inputs={inputs}, width={width}")));
        }
        let mut get = |rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    let mut b = [0u8; 8];
                    rd.read_exact(&mut b)?;
                    m[(i, j)] = f64::from_le_bytes(b);
                }
            }
            Ok(m)
        };
        let head = get(1, 2)?;
        let w_in = get(n, 1 + inputs)?;
        let w = SparseMatrix::from_dense(&get(n, n)?);
        let w_out = get(1, width)?;
        let (kind, gates) = match kind {
            0 => (NeuronKind::Tanh, None),
            1 => {
                let mut vs = Vec::with_capacity(6);
                for _ in 0..6 {
                    vs.push(DVector::from_iterator(n, get(1, n)?.iter().copied()));
                }
                let mut it = vs.into_iter();
                let mut next = || it.next().unwrap();
                let gates = LstmGates {
                    input_gain: next(),
                    input_bias: next(),
                    forget_gain: next(),
                    forget_bias: next(),
                    output_gain: next(),
                    output_bias: next(),
                };
                (NeuronKind::Lstm, Some(gates))
            }
            k => return Err(TrafficError::Model(format!("unknown neuron kind {k}"))),
        };
        let reservoir = Reservoir { kind, leakage: head[(0, 0)], w_in, w, gates };
        Ok(Self { cfg: EsnConfig { kind, reservoir: n, leakage: head[(0, 0)], ..cfg }, reservoir, w_out: Some(w_out), input_scale: head[(0, 1)] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small(kind: NeuronKind) -> EsnConfig {
        EsnConfig { reservoir: 40, kind, washout: 50, ..EsnConfig::default() }
    }

    #[test]
    fn spectral_radius_hits_target() {
        let r = Reservoir::init(&small(NeuronKind::Tanh), 1, 3).unwrap();
        assert_relative_eq!(spectral_radius(&r.w.to_dense()), 0.9, epsilon = 1e-9);
        let density = r.w.nnz() as f64 / (40.0 * 40.0);
        assert!((0.05..0.15).contains(&density), "density {density}");
    }

    #[test]
    fn init_is_reproducible() {
        let cfg = small(NeuronKind::Lstm);
        assert_eq!(Reservoir::init(&cfg, 1, 11).unwrap(), Reservoir::init(&cfg, 1, 11).unwrap());
        assert_ne!(Reservoir::init(&cfg, 1, 11).unwrap(), Reservoir::init(&cfg, 1, 12).unwrap());
    }

    #[test]
    fn zero_input_scaling_zeroes_w_in() {
        let cfg = EsnConfig { input_scaling: 0.0, ..small(NeuronKind::Tanh) };
        assert!(Reservoir::init(&cfg, 1, 0).unwrap().w_in.iter().all(|&v| v == 0.0));
    }

    fn scalar(w_in: [f64; 2], w: f64, leakage: f64) -> Reservoir {
        Reservoir {
            kind: NeuronKind::Tanh,
            leakage,
            w_in: DMatrix::from_row_slice(1, 2, &w_in),
            w: SparseMatrix::from_dense(&DMatrix::from_element(1, 1, w)),
            gates: None,
        }
    }

    #[test]
    fn update_examples() {
        let r = scalar([0.0, 0.0], 0.0, 1.0);
        assert_eq!(r.update(&r.zero_state(), &[0.0]).unwrap().x[0], 0.0);

        let r = scalar([1.0, 1.0], 0.0, 1.0);
        let x = r.update(&r.zero_state(), &[0.5]).unwrap().x[0];
        assert_relative_eq!(x, 1.5f64.tanh(), epsilon = 1e-15);
        assert_relative_eq!(x, 0.9051, epsilon = 1e-4);
    }

    #[test]
    fn full_leak_freezes_state() {
        // α = 0 is outside the configurable range but the update rule is defined there.
        let r = scalar([0.7, -1.3], 0.4, 0.0);
        let s = ReservoirState { x: DVector::from_element(1, 0.25), c: None };
        assert_eq!(r.update(&s, &[3.0]).unwrap().x[0], 0.25);
    }

    #[test]
    fn tanh_states_stay_bounded() {
        let r = Reservoir::init(&small(NeuronKind::Tanh), 1, 5).unwrap();
        let mut s = r.zero_state();
        for t in 0..300 {
            s = r.update(&s, &[100.0 * (t as f64).sin()]).unwrap();
            assert!(s.x.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn readout_recovers_selector() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(5, 60, |_, _| rng.random_range(-1.0..1.0));
        let y = x.rows(0, 1).into_owned();
        let w = train_readout(&x, &y, 0.0).unwrap();
        let expect = DMatrix::from_row_slice(1, 5, &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((w - expect).abs().max() < 1e-6);
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(5, 60, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(1, 60, |_, _| rng.random_range(-1.0..1.0));
        assert!(train_readout(&x, &y, 1e12).unwrap().abs().max() < 1e-9);
    }

    #[test]
    fn underdetermined_without_ridge_is_ill_posed() {
        let x = DMatrix::from_element(5, 3, 1.0);
        let y = DMatrix::from_element(1, 3, 1.0);
        assert!(matches!(train_readout(&x, &y, 0.0), Err(TrafficError::IllPosed(_))));
    }

    #[test]
    fn untrained_model_cannot_predict() {
        let m = EsnModel::new(small(NeuronKind::Tanh), 0).unwrap();
        assert!(matches!(m.one_step(&[1.0; 10]), Err(TrafficError::Untrained)));
        assert!(matches!(m.predict(&[1.0; 100], 3), Err(TrafficError::Untrained)));
    }

    #[test]
    fn model_round_trip() {
        for kind in [NeuronKind::Tanh, NeuronKind::Lstm] {
            let mut m = EsnModel::new(small(kind), 9).unwrap();
            let series: Vec<f64> = (0..300).map(|t| 2.0 + (t as f64 / 4.0).sin()).collect();
            m.fit(&series).unwrap();
            let mut buf = Vec::new();
            m.save(&mut buf).unwrap();
            let back = EsnModel::load(buf.as_slice(), small(kind)).unwrap();
            assert_eq!(back.one_step(&series).unwrap(), m.one_step(&series).unwrap());
        }
    }
}
