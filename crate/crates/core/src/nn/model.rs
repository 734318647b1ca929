//! The hybrid model: a three-layer GRU stack over the accelerometer sequence,
//! an optional dense branch over static participant features, and a dense
//! head over their concatenation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gru::{gru_backward, gru_forward, GruCache, GruParams};
use super::layers::{
    concat_backward, concat_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, Activation, DenseCache, DenseParams, HIDDEN_ACTIVATION,
};
use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::sequencing::TrainingExample;

/// GRU widths of the reference architecture.
pub const PAPER_GRU_HIDDEN: [usize; 3] = [32, 256, 32];
pub const PAPER_STATIC_HIDDEN: usize = 32;
pub const PAPER_HEAD_HIDDEN: [usize; 2] = [32, 16];
pub const PAPER_DROPOUT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of one timestep: 6 accelerometer channels, plus 1 with labels.
    pub input_dim: usize,
    pub gru_hidden: [usize; 3],
    /// Number of static features, `None` without the static branch.
    pub static_dim: Option<usize>,
    pub static_hidden: usize,
    pub head_hidden: [usize; 2],
    /// Applied to the output sequence of every GRU layer during training.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn paper(input_dim: usize, static_dim: Option<usize>) -> Self {
        Self {
            input_dim,
            gru_hidden: PAPER_GRU_HIDDEN,
            static_dim,
            static_hidden: PAPER_STATIC_HIDDEN,
            head_hidden: PAPER_HEAD_HIDDEN,
            dropout: PAPER_DROPOUT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.static_hidden]
            .into_iter()
            .chain(self.gru_hidden)
            .chain(self.head_hidden)
            .chain(self.static_dim);
        for d in dims {
            if d == 0 {
                return Err(Error::InvalidConfig("zero-width layer".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    fn head_input(&self) -> usize {
        self.gru_hidden[2] + self.static_dim.map_or(0, |_| self.static_hidden)
    }
}

/// A minibatch in model layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub steps: usize,
    pub size: usize,
    /// Time-major `(steps·size) × input_dim`.
    pub seq: Matrix,
    /// `size × static_dim`.
    pub statics: Option<Matrix>,
}

impl Batch {
    pub fn from_examples(examples: &[&TrainingExample]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
        let steps = first.steps();
        let width = first.input_width();
        let size = examples.len();
        let mut seq = Matrix::zeros(steps * size, width);
        for (b, ex) in examples.iter().enumerate() {
            if ex.steps() != steps || ex.input_width() != width {
                return Err(Error::ShapeMismatch("examples of different shapes".into()));
            }
            for t in 0..steps {
                ex.write_step(t, seq.row_mut(t * size + b));
            }
        }
        let statics = match &first.static_features {
            None => {
                if examples.iter().any(|e| e.static_features.is_some()) {
                    return Err(Error::StaticBranchMissing("mixed batch".into()));
                }
                None
            }
            Some(s) => {
                let mut m = Matrix::zeros(size, s.len());
                for (b, ex) in examples.iter().enumerate() {
                    let v = ex
                        .static_features
                        .as_ref()
                        .ok_or_else(|| Error::StaticBranchMissing("mixed batch".into()))?;
                    m.row_mut(b).copy_from_slice(v);
                }
                Some(m)
            }
        };
        Ok(Self {
            steps,
            size,
            seq,
            statics,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridModel {
    pub config: ModelConfig,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    pub gru: Vec<GruParams>,
    pub static_branch: Option<DenseParams>,
    /// Two hidden layers and the single-unit linear output.
    pub head: Vec<DenseParams>,
}

#[derive(Debug)]
pub struct ForwardCache {
    steps: usize,
    batch: usize,
    gru: Vec<GruCache>,
    masks: Vec<Option<Matrix>>,
    static_cache: Option<DenseCache>,
    head: Vec<DenseCache>,
}

impl HybridModel {
    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut in_dim = config.input_dim;
        let mut gru = Vec::with_capacity(3);
        for &h in &config.gru_hidden {
            gru.push(GruParams::zeros(in_dim, h));
            in_dim = h;
        }
        let static_branch = config
            .static_dim
            .map(|d| DenseParams::zeros(d, config.static_hidden, HIDDEN_ACTIVATION));
        let [h1, h2] = config.head_hidden;
        let head = vec![
            DenseParams::zeros(config.head_input(), h1, HIDDEN_ACTIVATION),
            DenseParams::zeros(h1, h2, HIDDEN_ACTIVATION),
            DenseParams::zeros(h2, 1, Activation::Linear),
        ];
        Ok(Self {
            config,
            seed: 0,
            gru,
            static_branch,
            head,
        })
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = Vec::new();
        for g in &self.gru {
            out.extend(g.tensors());
        }
        if let Some(s) = &self.static_branch {
            out.extend(s.tensors());
        }
        for d in &self.head {
            out.extend(d.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for g in &mut self.gru {
            out.extend(g.tensors_mut());
        }
        if let Some(s) = &mut self.static_branch {
            out.extend(s.tensors_mut());
        }
        for d in &mut self.head {
            out.extend(d.tensors_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|m| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    /// Adds `other`'s tensors into `self` (same architecture).
    pub fn accumulate(&mut self, other: &HybridModel) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.seq.cols() != self.config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "sequence width {} but model expects {}",
                batch.seq.cols(),
                self.config.input_dim
            )));
        }
        match (&batch.statics, self.config.static_dim) {
            (Some(_), None) => Err(Error::StaticBranchMissing(
                "examples carry static features but the model has no static branch".into(),
            )),
            (None, Some(_)) => Err(Error::StaticBranchMissing(
                "model has a static branch but examples carry no static features".into(),
            )),
            (Some(s), Some(d)) if s.cols() != d => Err(Error::ShapeMismatch(format!(
                "{} static features but model expects {d}",
                s.cols()
            ))),
            _ => Ok(()),
        }
    }

    /// Predictions for a batch. Training mode applies dropout (drawing from
    /// `rng`) and retains the cache for [`HybridModel::backward`]; inference
    /// never touches `rng`.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        training: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Option<ForwardCache>)> {
        self.check_batch(batch)?;
        let (steps, size) = (batch.steps, batch.size);
        let mut gru_caches = Vec::with_capacity(3);
        let mut masks = Vec::with_capacity(3);
        let mut x = batch.seq.clone();
        for layer in &self.gru {
            let (hs, cache) = gru_forward(layer, &x, steps, size, None, training)?;
            let (dropped, mask) = dropout_forward(&hs, self.config.dropout, training, rng)?;
            if let Some(c) = cache {
                gru_caches.push(c);
            }
            masks.push(mask);
            x = dropped;
        }
        let h3 = self.config.gru_hidden[2];
        let last = Matrix::from_vec(
            size,
            h3,
            x.rows_slice((steps - 1) * size, steps * size).to_vec(),
        )?;

        let (features, static_cache) = match (&self.static_branch, &batch.statics) {
            (Some(branch), Some(s)) => {
                let (out, cache) = dense_forward(branch, s, training)?;
                (concat_forward(&last, &out)?, cache)
            }
            _ => (last, None),
        };

        let mut head_caches = Vec::with_capacity(3);
        let mut y = features;
        for layer in &self.head {
            let (out, cache) = dense_forward(layer, &y, training)?;
            if let Some(c) = cache {
                head_caches.push(c);
            }
            y = out;
        }
        let preds = y.data().to_vec();
        let cache = training.then_some(ForwardCache {
            steps,
            batch: size,
            gru: gru_caches,
            masks,
            static_cache,
            head: head_caches,
        });
        Ok((preds, cache))
    }

    /// Parameter gradients given `d_pred`, the loss gradient per prediction.
    pub fn backward(&self, cache: Option<&ForwardCache>, d_pred: &[f64]) -> Result<HybridModel> {
        let cache = cache.ok_or(Error::MissingCache)?;
        if d_pred.len() != cache.batch {
            return Err(Error::LengthMismatch(d_pred.len(), cache.batch));
        }
        let mut grads = HybridModel::zeros(self.config.clone())?;
        grads.seed = self.seed;

        let mut d = Matrix::from_vec(cache.batch, 1, d_pred.to_vec())?;
        for i in (0..self.head.len()).rev() {
            let (g, dx) = dense_backward(&self.head[i], Some(&cache.head[i]), &d)?;
            grads.head[i] = g;
            d = dx;
        }

        let h3 = self.config.gru_hidden[2];
        let d_last = if let Some(branch) = &self.static_branch {
            let (d_gru, d_static) = concat_backward(&d, h3);
            let (g, _) = dense_backward(branch, cache.static_cache.as_ref(), &d_static)?;
            grads.static_branch = Some(g);
            d_gru
        } else {
            d
        };

        let (steps, size) = (cache.steps, cache.batch);
        let mut d_seq = Matrix::zeros(steps * size, h3);
        d_seq
            .rows_slice_mut((steps - 1) * size, steps * size)
            .copy_from_slice(d_last.data());
        for layer in (0..self.gru.len()).rev() {
            let d_h = dropout_backward(&d_seq, cache.masks[layer].as_ref());
            let g = gru_backward(&self.gru[layer], cache.gru.get(layer), &d_h)?;
            grads.gru[layer] = g.params;
            d_seq = g.dx;
        }
        Ok(grads)
    }
}

/// Prediction for a single example.
pub fn model_forward<R: Rng + ?Sized>(
    model: &HybridModel,
    ex: &TrainingExample,
    training: bool,
    rng: &mut R,
) -> Result<(f64, Option<ForwardCache>)> {
    let batch = Batch::from_examples(&[ex])?;
    let (preds, cache) = model.forward_batch(&batch, training, rng)?;
    Ok((preds[0], cache))
}

fn glorot(rng: &mut ChaCha8Rng, m: &mut Matrix, col_range: std::ops::Range<usize>) {
    let fan_in = m.rows();
    let fan_out = col_range.len();
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for i in 0..m.rows() {
        for j in col_range.clone() {
            m.set(i, j, rng.random_range(-bound..bound));
        }
    }
}

/// Square orthogonal matrix from Gram–Schmidt (applied twice) on a Gaussian
/// draw.
fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..n {
        for _ in 0..2 {
            for k in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let (cj, ck) = (&mut rest[0], &done[k]);
                let dot: f64 = cj.iter().zip(ck).map(|(a, b)| a * b).sum();
                for (a, b) in cj.iter_mut().zip(ck) {
                    *a -= dot * b;
                }
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut cols[j] {
            *v /= norm;
        }
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Glorot-uniform input and dense weights, orthogonal recurrent weights, zero
/// biases. Deterministic in `seed`.
pub fn init_params(config: ModelConfig, seed: u64) -> Result<HybridModel> {
    let mut model = HybridModel::zeros(config)?;
    model.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut model.gru {
        let h = layer.hidden();
        for g in 0..3 {
            glorot(&mut rng, &mut layer.w, g * h..(g + 1) * h);
        }
        for g in 0..2 {
            let q = orthogonal(&mut rng, h);
            for i in 0..h {
                for j in 0..h {
                    layer.u_zr.set(i, g * h + j, q.get(i, j));
                }
            }
        }
        layer.u_h = orthogonal(&mut rng, h);
    }
    if let Some(branch) = &mut model.static_branch {
        let cols = branch.out_dim();
        glorot(&mut rng, &mut branch.w, 0..cols);
    }
    for layer in &mut model.head {
        let cols = layer.out_dim();
        glorot(&mut rng, &mut layer.w, 0..cols);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gru::Gate;

    fn tiny_config(static_dim: Option<usize>) -> ModelConfig {
        ModelConfig {
            input_dim: 6,
            gru_hidden: [3, 4, 3],
            static_dim,
            static_hidden: 4,
            head_hidden: [4, 3],
            dropout: 0.5,
        }
    }

    #[test]
    fn paper_shapes() {
        let m = HybridModel::zeros(ModelConfig::paper(6, Some(5))).unwrap();
        assert_eq!(m.gru[0].hidden(), 32);
        assert_eq!(m.gru[1].hidden(), 256);
        assert_eq!(m.gru[2].hidden(), 32);
        assert_eq!(m.gru[1].in_dim(), 32);
        assert_eq!(m.head[0].in_dim(), 64);
        assert_eq!(m.head[0].out_dim(), 32);
        assert_eq!(m.head[1].out_dim(), 16);
        assert_eq!(m.head[2].out_dim(), 1);
        let m = HybridModel::zeros(ModelConfig::paper(6, None)).unwrap();
        assert_eq!(m.head[0].in_dim(), 32);
        assert!(m.static_branch.is_none());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = tiny_config(Some(5));
        let a = init_params(cfg.clone(), 42).unwrap();
        let b = init_params(cfg.clone(), 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(cfg, 43).unwrap();
        assert_ne!(a, c);

        let g = &a.gru[0];
        let bound = (6.0f64 / (6.0 + 3.0)).sqrt();
        assert!(g.w.data().iter().all(|v| v.abs() <= bound));
        let d = &a.head[0];
        let bound = (6.0f64 / (d.in_dim() + d.out_dim()) as f64).sqrt();
        assert!(d.w.data().iter().all(|v| v.abs() <= bound));
        assert!(a.gru.iter().all(|g| g.b.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn recurrent_matrices_are_orthogonal() {
        let m = init_params(ModelConfig::paper(6, None), 7).unwrap();
        for layer in &m.gru {
            for gate in [Gate::Update, Gate::Reset, Gate::Candidate] {
                let u = layer.u_gate(gate);
                let utu = u.transpose().matmul(&u);
                for i in 0..u.rows() {
                    for j in 0..u.cols() {
                        let expected = if i == j { 1.0 } else { 0.0 };
                        assert!((utu.get(i, j) - expected).abs() < 1e-8);
                    }
                }
            }
        }
    }
}
