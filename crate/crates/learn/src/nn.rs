//! Dense feedforward Q-network with analytic gradients.
//!
//! Hidden layers use ReLU; the output layer is affine so it can represent
//! arbitrary action values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::io::{Read, Write};

use crate::error::{LearnError, Result};

const MAGIC: &[u8; 4] = b"QNET";

/// Weights are `out × in`, biases `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: DMatrix::zeros(outputs, inputs), b: DVector::zeros(outputs) }
    }
}

/// Parameters of a dense stack. Gradients share this type.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams {
    sizes: Vec<usize>,
    layers: Vec<DenseLayer>,
}

/// One training example: input, taken action, regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub action: usize,
    pub y: f64,
}

impl QNetworkParams {
    /// All-zero parameters for layer widths `sizes` (input first, output last).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(LearnError::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect();
        Ok(Self { sizes: sizes.to_vec(), layers })
    }

    /// He-normal weights (std `√(2/fan_in)`), zero biases.
    pub fn he_normal<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(sizes)?;
        for layer in &mut p.layers {
            let std = (2.0 / layer.w.ncols() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive");
            layer.w.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        Ok(p)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(LearnError::Config("a network needs at least one layer".into()));
        };
        let mut sizes = vec![first.w.ncols()];
        for l in &layers {
            if l.w.ncols() != *sizes.last().unwrap() || l.b.len() != l.w.nrows() {
                return Err(LearnError::Dimension(format!(
                    "layer {}x{} with bias {} does not chain after width {}",
                    l.w.nrows(),
                    l.w.ncols(),
                    l.b.len(),
                    sizes.last().unwrap()
                )));
            }
            sizes.push(l.w.nrows());
        }
        let p = Self { sizes, layers };
        if !p.is_finite() {
            return Err(LearnError::Config("non-finite parameter".into()));
        }
        Ok(p)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Parameters in checkpoint order: per layer, weights row-major then bias.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w.transpose().into_iter().copied().collect::<Vec<_>>().into_iter().chain(l.b.iter().copied()))
    }

    /// Mutable access to parameter `i` in checkpoint order.
    pub fn param_mut(&mut self, mut i: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let (r, c) = l.w.shape();
            if i < r * c {
                return Some(&mut l.w[(i / c, i % c)]);
            }
            i -= r * c;
            if i < r {
                return Some(&mut l.b[i]);
            }
            i -= r;
        }
        None
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let mut a = DVector::from_column_slice(x);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &a + &l.b;
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        Ok(a.as_slice().to_vec())
    }

    /// Forward pass over a batch stored as columns (`inputs × n`).
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x.nrows())?;
        Ok(self.forward_cached(x.clone()).pop().unwrap())
    }

    /// Activations of every layer, input first.
    fn forward_cached(&self, x: DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    fn check_input(&self, n: usize) -> Result<()> {
        if n != self.inputs() {
            return Err(LearnError::Dimension(format!("input of length {n}, network expects {}", self.inputs())));
        }
        Ok(())
    }

    /// Batch-mean squared error on the taken actions' outputs, and its gradient.
    pub fn loss_and_gradient(&self, batch: &[Sample<'_>]) -> Result<(f64, QNetworkParams)> {
        if batch.is_empty() {
            return Err(LearnError::Config("empty batch".into()));
        }
        let n = batch.len();
        let mut x = DMatrix::zeros(self.inputs(), n);
        for (j, s) in batch.iter().enumerate() {
            self.check_input(s.x.len())?;
            if s.action >= self.outputs() {
                return Err(LearnError::Dimension(format!("action {} of {}", s.action, self.outputs())));
            }
            x.column_mut(j).copy_from_slice(s.x);
        }
        let acts = self.forward_cached(x);
        let q = acts.last().unwrap();

        let mut loss = 0.0;
        let mut delta = DMatrix::zeros(self.outputs(), n);
        for (j, s) in batch.iter().enumerate() {
            let err = s.y - q[(s.action, j)];
            loss += err * err;
            delta[(s.action, j)] = -2.0 * err / n as f64;
        }
        loss /= n as f64;

        let mut grad = Self::zeros(&self.sizes)?;
        for i in (0..self.layers.len()).rev() {
            let g = &mut grad.layers[i];
            g.w = &delta * acts[i].transpose();
            g.b = delta.column_sum();
            if i > 0 {
                let mut prev = self.layers[i].w.transpose() * &delta;
                prev.zip_apply(&acts[i], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        Ok((loss, grad))
    }

    /// `θ ← θ − α·g`.
    pub fn apply_update(&mut self, grad: &QNetworkParams, alpha: f64) -> Result<()> {
        if grad.sizes != self.sizes {
            return Err(LearnError::Dimension(format!(
                "gradient shape {:?} vs parameters {:?}",
                grad.sizes, self.sizes
            )));
        }
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            l.w.zip_apply(&g.w, |p, d| *p -= alpha * d);
            l.b.axpy(-alpha, &g.b, 1.0);
        }
        Ok(())
    }

    /// Header `"QNET"`, layer count and widths as u64, then parameters as f64,
    /// all little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.sizes.len() as u64).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for v in self.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(LearnError::Checkpoint("bad magic".into()));
        }
        let read_u64 = |r: &mut R| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let count = read_u64(&mut r)? as usize;
        if !(2..=64).contains(&count) {
            return Err(LearnError::Checkpoint(format!("implausible layer count {count}")));
        }
        let sizes = (0..count)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut p = Self::zeros(&sizes).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        for i in 0..p.param_count() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *p.param_mut(i).unwrap() = f64::from_le_bytes(b);
        }
        if !p.is_finite() {
            return Err(LearnError::Checkpoint("non-finite parameter".into()));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let l = DenseLayer { w: DMatrix::identity(3, 3), b: DVector::zeros(3) };
        let net = QNetworkParams::from_layers(vec![l]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut net = QNetworkParams::zeros(&[3, 5, 2]).unwrap();
        net.layers[1].b = DVector::from_vec(vec![0.25, -4.0]);
        assert_eq!(net.forward(&[9.0, 1.0, -7.0]).unwrap(), vec![0.25, -4.0]);
    }

    #[test]
    fn forward_matches_hand_rolled_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = QNetworkParams::he_normal(&[5, 7, 6, 4], &mut rng).unwrap();
        for l in &mut net.layers {
            l.b.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        }
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = x.clone();
        for (i, l) in net.layers.iter().enumerate() {
            let mut z = vec![0.0; l.w.nrows()];
            for r in 0..l.w.nrows() {
                z[r] = l.b[r];
                for c in 0..l.w.ncols() {
                    z[r] += l.w[(r, c)] * a[c];
                }
                if i + 1 < net.layers.len() {
                    z[r] = z[r].max(0.0);
                }
            }
            a = z;
        }
        let out = net.forward(&x).unwrap();
        for (o, e) in out.iter().zip(&a) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = QNetworkParams::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(LearnError::Dimension(_))));
    }

    #[test]
    fn single_sample_quadratic() {
        // Q(s, a) = 1 for every input: zero weights, bias 1.
        let mut net = QNetworkParams::zeros(&[2, 3]).unwrap();
        net.layers[0].b.fill(1.0);
        let x = [0.5, -0.5];
        let (loss, g) = net.loss_and_gradient(&[Sample { x: &x, action: 1, y: 2.0 }]).unwrap();
        assert_eq!(loss, 1.0);
        // ∂loss/∂Q equals the bias gradient of the taken output.
        assert_eq!(g.layers[0].b[1], -2.0);
        assert_eq!(g.layers[0].b[0], 0.0);
    }

    #[test]
    fn interpolation_gives_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = QNetworkParams::he_normal(&[3, 4, 2], &mut rng).unwrap();
        let xs = [[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        let batch: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Sample { x, action: i % 2, y: net.forward(x).unwrap()[i % 2] })
            .collect();
        let (loss, g) = net.loss_and_gradient(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| v == 0.0));
    }

    #[test]
    fn update_arithmetic() {
        let mut p = QNetworkParams::zeros(&[1, 1]).unwrap();
        p.layers[0].w[(0, 0)] = 1.0;
        let mut g = QNetworkParams::zeros(&[1, 1]).unwrap();
        g.layers[0].w[(0, 0)] = 2.0;
        let before = p.clone();
        p.apply_update(&g, 0.0).unwrap();
        assert_eq!(p, before);
        p.apply_update(&QNetworkParams::zeros(&[1, 1]).unwrap(), 0.3).unwrap();
        assert_eq!(p, before);
        p.apply_update(&g, 0.1).unwrap();
        assert_relative_eq!(p.layers[0].w[(0, 0)], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn he_init_has_expected_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetworkParams::he_normal(&[200, 300, 2], &mut rng).unwrap();
        let w = &net.layers[0].w;
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert_relative_eq!(var, 2.0 / 200.0, max_relative = 0.02);
        assert!(net.layers[0].b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = QNetworkParams::he_normal(&[4, 8, 3], &mut rng).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 8 * 4 + 8 * net.param_count());
        assert_eq!(QNetworkParams::read_checkpoint(buf.as_slice()).unwrap(), net);
        buf[0] = b'X';
        assert!(QNetworkParams::read_checkpoint(buf.as_slice()).is_err());
    }

    #[test]
    fn checkpoint_is_row_major() {
        let mut p = QNetworkParams::zeros(&[2, 2]).unwrap();
        p.layers[0].w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        p.layers[0].b = DVector::from_vec(vec![5.0, 6.0]);
        assert_eq!(p.iter().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
