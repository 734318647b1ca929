//! Dense layers, inverted dropout, column concatenation and MSE loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

/// Activation of every hidden dense layer; the output layer is linear.
pub const HIDDEN_ACTIVATION: Activation = Activation::Relu;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `in × out`
    pub w: Matrix,
    /// `1 × out`
    pub b: Matrix,
    pub activation: Activation,
}

impl DenseParams {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            w: Matrix::zeros(in_dim, out_dim),
            b: Matrix::zeros(1, out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub(crate) fn tensors(&self) -> [&Matrix; 2] {
        [&self.w, &self.b]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 2] {
        [&mut self.w, &mut self.b]
    }
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    x: Matrix,
    out: Matrix,
}

pub fn dense_forward(
    p: &DenseParams,
    x: &Matrix,
    keep_cache: bool,
) -> Result<(Matrix, Option<DenseCache>)> {
    if x.cols() != p.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dense input width {} != {}",
            x.cols(),
            p.in_dim()
        )));
    }
    let mut out = x.matmul(&p.w);
    out.add_row_vector(&p.b);
    if p.activation == Activation::Relu {
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
    }
    let cache = keep_cache.then(|| DenseCache {
        x: x.clone(),
        out: out.clone(),
    });
    Ok((out, cache))
}

/// Returns the parameter gradients and the gradient with respect to the input.
pub fn dense_backward(
    p: &DenseParams,
    cache: Option<&DenseCache>,
    d_out: &Matrix,
) -> Result<(DenseParams, Matrix)> {
    let cache = cache.ok_or(Error::MissingCache)?;
    if d_out.shape() != cache.out.shape() {
        return Err(Error::ShapeMismatch("dense upstream gradient".into()));
    }
    let mut d_pre = d_out.clone();
    if p.activation == Activation::Relu {
        for (d, &o) in d_pre.data_mut().iter_mut().zip(cache.out.data()) {
            if o <= 0.0 {
                *d = 0.0;
            }
        }
    }
    let mut g = DenseParams::zeros(p.in_dim(), p.out_dim(), p.activation);
    g.w.add_tn(&cache.x, &d_pre);
    g.b.add_col_sums(&d_pre);
    let dx = d_pre.matmul(&p.w.transpose());
    Ok((g, dx))
}

/// Inverted dropout: kept activations are scaled by `1/(1-p)`, so inference
/// is the identity. Returns the output and, in training mode, the scaled mask.
pub fn dropout_forward<R: Rng + ?Sized>(
    x: &Matrix,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Matrix, Option<Matrix>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!(
            "dropout rate {p} outside [0, 1)"
        )));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = 1.0 / (1.0 - p);
    let mut mask = Matrix::zeros(x.rows(), x.cols());
    let mut out = x.clone();
    for (m, v) in mask.data_mut().iter_mut().zip(out.data_mut()) {
        if rng.random::<f64>() >= p {
            *m = scale;
            *v *= scale;
        } else {
            *v = 0.0;
        }
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward(d_out: &Matrix, mask: Option<&Matrix>) -> Matrix {
    match mask {
        None => d_out.clone(),
        Some(m) => {
            let mut d = d_out.clone();
            for (v, s) in d.data_mut().iter_mut().zip(m.data()) {
                *v *= s;
            }
            d
        }
    }
}

/// Column-wise concatenation `[a | b]`.
pub fn concat_forward(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch(format!(
            "concat of {} and {} rows",
            a.rows(),
            b.rows()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        row[..a.cols()].copy_from_slice(a.row(i));
        row[a.cols()..].copy_from_slice(b.row(i));
    }
    Ok(out)
}

/// Splits a gradient of `[a | b]` back into its parts.
pub fn concat_backward(d: &Matrix, a_cols: usize) -> (Matrix, Matrix) {
    let b_cols = d.cols() - a_cols;
    let mut da = Matrix::zeros(d.rows(), a_cols);
    let mut db = Matrix::zeros(d.rows(), b_cols);
    for i in 0..d.rows() {
        da.row_mut(i).copy_from_slice(&d.row(i)[..a_cols]);
        db.row_mut(i).copy_from_slice(&d.row(i)[a_cols..]);
    }
    (da, db)
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(Error::ShapeMismatch("empty prediction".into()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_identity_at_inference() {
        let x = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, mask) = dropout_forward(&x, 0.5, false, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
        assert!(dropout_forward(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_keeps_half_and_preserves_expectation() {
        let n = 100_000;
        let x = Matrix::from_fn(1, n, |_, _| 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (y, mask) = dropout_forward(&x, 0.5, true, &mut rng).unwrap();
        let kept = mask.unwrap().data().iter().filter(|&&m| m > 0.0).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((kept - 0.5 * n as f64).abs() < 3.0 * sigma);
        let mean = y.data().iter().sum::<f64>() / n as f64;
        // each output is 0 or 2, so its sd is 1
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn dropout_backward_uses_mask() {
        let x = Matrix::from_fn(2, 3, |_, _| 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (y, mask) = dropout_forward(&x, 0.3, true, &mut rng).unwrap();
        let d = dropout_backward(&x, mask.as_ref());
        assert_eq!(d, y);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        let (l, g) = mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g, vec![1.0, 3.0]);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn concat_round_trip() {
        let a = Matrix::from_fn(2, 2, |i, j| (i + j) as f64);
        let b = Matrix::from_fn(2, 3, |i, j| (i * j) as f64 + 10.0);
        let c = concat_forward(&a, &b).unwrap();
        assert_eq!(c.shape(), (2, 5));
        let (da, db) = concat_backward(&c, 2);
        assert_eq!((da, db), (a, b));
        assert!(concat_forward(&Matrix::zeros(1, 1), &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for act in [Activation::Relu, Activation::Linear] {
            let mut p = DenseParams::zeros(4, 3, act);
            for m in p.tensors_mut() {
                for v in m.data_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            let x = Matrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
            let w = Matrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
            let f = |p: &DenseParams| -> f64 {
                let (o, _) = dense_forward(p, &x, false).unwrap();
                o.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = dense_forward(&p, &x, true).unwrap();
            let (g, _) = dense_backward(&p, cache.as_ref(), &w).unwrap();
            let eps = 1e-6;
            for k in 0..2 {
                for i in 0..p.tensors()[k].data().len() {
                    let mut a = p.clone();
                    a.tensors_mut()[k].data_mut()[i] += eps;
                    let mut b = p.clone();
                    b.tensors_mut()[k].data_mut()[i] -= eps;
                    let fd = (f(&a) - f(&b)) / (2.0 * eps);
                    assert!((fd - g.tensors()[k].data()[i]).abs() < 1e-6);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn mse_nonnegative_and_zero_only_on_equality(
            v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20)
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let (l, _) = mse_loss(&p, &t).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, p == t);
            prop_assert_eq!(mse_loss(&p, &p).unwrap().0, 0.0);
        }
    }
}
