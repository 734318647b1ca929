//! Gated recurrent unit layer with backpropagation through time.
//!
//! Per step, with `x` the input row and `h` the previous state:
//!
//! ```text
//! z  = σ(x·W_z + h·U_z + b_z)
//! r  = σ(x·W_r + h·U_r + b_r)
//! h̃  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! Sequences are stored time-major as one `(steps·batch) × dim` matrix: row
//! `t·batch + b` is step `t` of batch member `b`. Input weights are packed as
//! `[W_z | W_r | W_h]` and recurrent weights as `[U_z | U_r]` plus `U_h`.

use serde::{Deserialize, Serialize};

use super::matrix::{gemm_acc, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Update,
    Reset,
    Candidate,
}

impl Gate {
    fn block(self) -> usize {
        match self {
            Gate::Update => 0,
            Gate::Reset => 1,
            Gate::Candidate => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    /// `in × 3h`, column blocks `[z | r | h̃]`.
    pub w: Matrix,
    /// `h × 2h`, column blocks `[z | r]`.
    pub u_zr: Matrix,
    /// `h × h`.
    pub u_h: Matrix,
    /// `1 × 3h`.
    pub b: Matrix,
}

impl GruParams {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            w: Matrix::zeros(in_dim, 3 * hidden),
            u_zr: Matrix::zeros(hidden, 2 * hidden),
            u_h: Matrix::zeros(hidden, hidden),
            b: Matrix::zeros(1, 3 * hidden),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn hidden(&self) -> usize {
        self.u_h.rows()
    }

    /// Input-to-hidden matrix of one gate (`in × h`).
    pub fn w_gate(&self, gate: Gate) -> Matrix {
        let h = self.hidden();
        let off = gate.block() * h;
        Matrix::from_fn(self.in_dim(), h, |i, j| self.w.get(i, off + j))
    }

    /// Hidden-to-hidden matrix of one gate (`h × h`).
    pub fn u_gate(&self, gate: Gate) -> Matrix {
        let h = self.hidden();
        match gate {
            Gate::Candidate => self.u_h.clone(),
            g => Matrix::from_fn(h, h, |i, j| self.u_zr.get(i, g.block() * h + j)),
        }
    }

    pub fn b_gate(&self, gate: Gate) -> Vec<f64> {
        let h = self.hidden();
        let off = gate.block() * h;
        self.b.data()[off..off + h].to_vec()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.w.cols() != 3 * h || self.u_zr.shape() != (h, 2 * h) || self.b.shape() != (1, 3 * h)
        {
            return Err(Error::ShapeMismatch(
                "inconsistent GRU parameter shapes".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn tensors(&self) -> [&Matrix; 4] {
        [&self.w, &self.u_zr, &self.u_h, &self.b]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w, &mut self.u_zr, &mut self.u_h, &mut self.b]
    }
}

/// Activations retained by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct GruCache {
    steps: usize,
    batch: usize,
    x: Matrix,
    h0: Matrix,
    h: Matrix,
    z: Matrix,
    r: Matrix,
    c: Matrix,
    rh: Matrix,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Runs the layer over a time-major batch. Returns the full hidden sequence
/// and, when `keep_cache` is set, the activations needed by [`gru_backward`].
pub fn gru_forward(
    params: &GruParams,
    x: &Matrix,
    steps: usize,
    batch: usize,
    h0: Option<&Matrix>,
    keep_cache: bool,
) -> Result<(Matrix, Option<GruCache>)> {
    params.check()?;
    let h = params.hidden();
    if x.cols() != params.in_dim() || x.rows() != steps * batch {
        return Err(Error::ShapeMismatch(format!(
            "GRU input {}x{} for {steps} steps of batch {batch} with in_dim {}",
            x.rows(),
            x.cols(),
            params.in_dim()
        )));
    }
    let h0 = match h0 {
        Some(m) if m.shape() != (batch, h) => {
            return Err(Error::ShapeMismatch("initial state shape".into()))
        }
        Some(m) => m.clone(),
        None => Matrix::zeros(batch, h),
    };

    let mut xp = x.matmul(&params.w);
    xp.add_row_vector(&params.b);

    let n = steps * batch;
    let mut hs = Matrix::zeros(n, h);
    let (mut zs, mut rs, mut cs, mut rhs) = if keep_cache {
        (
            Matrix::zeros(n, h),
            Matrix::zeros(n, h),
            Matrix::zeros(n, h),
            Matrix::zeros(n, h),
        )
    } else {
        (
            Matrix::zeros(0, h),
            Matrix::zeros(0, h),
            Matrix::zeros(0, h),
            Matrix::zeros(0, h),
        )
    };

    let mut hz = vec![0.0; batch * 2 * h];
    let mut hc = vec![0.0; batch * h];
    let mut z_buf = vec![0.0; batch * h];
    let mut r_buf = vec![0.0; batch * h];
    let mut rh_buf = vec![0.0; batch * h];
    let mut c_buf = vec![0.0; batch * h];
    let mut h_prev = h0.data().to_vec();

    for t in 0..steps {
        hz.fill(0.0);
        gemm_acc(&h_prev, batch, h, params.u_zr.data(), 2 * h, &mut hz);
        let xp_t = xp.rows_slice(t * batch, (t + 1) * batch);
        for b in 0..batch {
            let xrow = &xp_t[b * 3 * h..(b + 1) * 3 * h];
            let hrow = &hz[b * 2 * h..(b + 1) * 2 * h];
            for j in 0..h {
                let z = sigmoid(xrow[j] + hrow[j]);
                let r = sigmoid(xrow[h + j] + hrow[h + j]);
                z_buf[b * h + j] = z;
                r_buf[b * h + j] = r;
                rh_buf[b * h + j] = r * h_prev[b * h + j];
            }
        }
        hc.fill(0.0);
        gemm_acc(&rh_buf, batch, h, params.u_h.data(), h, &mut hc);
        let out = hs.rows_slice_mut(t * batch, (t + 1) * batch);
        for b in 0..batch {
            for j in 0..h {
                let i = b * h + j;
                let c = (xp_t[b * 3 * h + 2 * h + j] + hc[i]).tanh();
                c_buf[i] = c;
                let z = z_buf[i];
                out[i] = (1.0 - z) * h_prev[i] + z * c;
            }
        }
        h_prev.copy_from_slice(out);
        if keep_cache {
            zs.rows_slice_mut(t * batch, (t + 1) * batch)
                .copy_from_slice(&z_buf);
            rs.rows_slice_mut(t * batch, (t + 1) * batch)
                .copy_from_slice(&r_buf);
            cs.rows_slice_mut(t * batch, (t + 1) * batch)
                .copy_from_slice(&c_buf);
            rhs.rows_slice_mut(t * batch, (t + 1) * batch)
                .copy_from_slice(&rh_buf);
        }
    }

    let cache = keep_cache.then(|| GruCache {
        steps,
        batch,
        x: x.clone(),
        h0,
        h: hs.clone(),
        z: zs,
        r: rs,
        c: cs,
        rh: rhs,
    });
    Ok((hs, cache))
}

#[derive(Clone, Debug)]
pub struct GruGrads {
    pub params: GruParams,
    /// Gradient with respect to the input sequence, same layout as the input.
    pub dx: Matrix,
    /// Gradient with respect to the initial state.
    pub dh0: Matrix,
}

/// Exact gradients of the forward map given the upstream gradient `d_h` of
/// every output step (zero rows where a step does not reach the loss).
pub fn gru_backward(
    params: &GruParams,
    cache: Option<&GruCache>,
    d_h: &Matrix,
) -> Result<GruGrads> {
    let cache = cache.ok_or(Error::MissingCache)?;
    let h = params.hidden();
    let (steps, batch) = (cache.steps, cache.batch);
    if d_h.shape() != (steps * batch, h) {
        return Err(Error::ShapeMismatch("upstream gradient shape".into()));
    }

    let n = steps * batch;
    // Pre-activation gradients, blocks [z | r | h̃], aligned with W's columns.
    let mut d_a = Matrix::zeros(n, 3 * h);
    // h_{t-1} for every step, for the recurrent weight gradients.
    let mut h_prev_all = Matrix::zeros(n, h);

    let u_zr_t = params.u_zr.transpose();
    let u_h_t = params.u_h.transpose();

    let mut carry = vec![0.0; batch * h];
    let mut d_rh = vec![0.0; batch * h];
    let mut d_hp = vec![0.0; batch * h];
    let mut d_zr = vec![0.0; batch * 2 * h];
    let mut d_c_pre = vec![0.0; batch * h];

    for t in (0..steps).rev() {
        let rows = t * batch..(t + 1) * batch;
        let hp: &[f64] = if t == 0 {
            cache.h0.data()
        } else {
            cache.h.rows_slice(rows.start - batch, rows.start)
        };
        h_prev_all
            .rows_slice_mut(rows.start, rows.end)
            .copy_from_slice(hp);
        let dh_up = d_h.rows_slice(rows.start, rows.end);
        let z = cache.z.rows_slice(rows.start, rows.end);
        let r = cache.r.rows_slice(rows.start, rows.end);
        let c = cache.c.rows_slice(rows.start, rows.end);

        for i in 0..batch * h {
            let dh = dh_up[i] + carry[i];
            let dz = dh * (c[i] - hp[i]);
            let dc = dh * z[i];
            d_hp[i] = dh * (1.0 - z[i]);
            d_c_pre[i] = dc * (1.0 - c[i] * c[i]);
            let (b, j) = (i / h, i % h);
            d_zr[b * 2 * h + j] = dz * z[i] * (1.0 - z[i]);
        }

        d_rh.fill(0.0);
        gemm_acc(&d_c_pre, batch, h, u_h_t.data(), h, &mut d_rh);
        for i in 0..batch * h {
            let dr = d_rh[i] * hp[i];
            d_hp[i] += d_rh[i] * r[i];
            let (b, j) = (i / h, i % h);
            d_zr[b * 2 * h + h + j] = dr * r[i] * (1.0 - r[i]);
        }
        gemm_acc(&d_zr, batch, 2 * h, u_zr_t.data(), h, &mut d_hp);
        carry.copy_from_slice(&d_hp);

        let da_t = d_a.rows_slice_mut(rows.start, rows.end);
        for b in 0..batch {
            let row = &mut da_t[b * 3 * h..(b + 1) * 3 * h];
            row[..2 * h].copy_from_slice(&d_zr[b * 2 * h..(b + 1) * 2 * h]);
            row[2 * h..].copy_from_slice(&d_c_pre[b * h..(b + 1) * h]);
        }
    }

    let mut grads = GruParams::zeros(params.in_dim(), h);
    grads.w.add_tn(&cache.x, &d_a);
    grads.b.add_col_sums(&d_a);

    // The recurrent gradients only need the z|r and h̃ column blocks of d_a.
    let mut d_a_zr = Matrix::zeros(n, 2 * h);
    let mut d_a_c = Matrix::zeros(n, h);
    for i in 0..n {
        let row = d_a.row(i);
        d_a_zr.row_mut(i).copy_from_slice(&row[..2 * h]);
        d_a_c.row_mut(i).copy_from_slice(&row[2 * h..]);
    }
    grads.u_zr.add_tn(&h_prev_all, &d_a_zr);
    grads.u_h.add_tn(&cache.rh, &d_a_c);

    let dx = d_a.matmul(&params.w.transpose());
    let dh0 = Matrix::from_vec(batch, h, carry)?;
    Ok(GruGrads {
        params: grads,
        dx,
        dh0,
    })
}
