//! GRU cell, forward pass and backpropagation through time.

use nalgebra::DVector;

use super::{GruParams, SequenceError, PAD};
use crate::classifiers::sigmoid;

/// One GRU update:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
pub fn gru_step(params: &GruParams, x: &DVector<f64>, h_prev: &DVector<f64>) -> Result<DVector<f64>, SequenceError> {
    if x.len() != params.d_e() || h_prev.len() != params.d_h() {
        return Err(SequenceError::Shape(format!(
            "expected x of length {} and h of length {}, got {} and {}",
            params.d_e(),
            params.d_h(),
            x.len(),
            h_prev.len()
        )));
    }
    Ok(step(params, x, h_prev).h)
}

pub(crate) struct Step {
    pub id: u32,
    pub h_prev: DVector<f64>,
    pub z: DVector<f64>,
    pub r: DVector<f64>,
    pub rh: DVector<f64>,
    pub h_tilde: DVector<f64>,
    pub h: DVector<f64>,
}

fn step<S>(params: &GruParams, x: &nalgebra::Vector<f64, nalgebra::Dyn, S>, h_prev: &DVector<f64>) -> Step
where
    S: nalgebra::Storage<f64, nalgebra::Dyn>,
{
    let gate = |w: &nalgebra::DMatrix<f64>, u: &nalgebra::DMatrix<f64>, b: &DVector<f64>, h: &DVector<f64>| {
        let mut a = b.clone();
        a.gemv(1.0, w, x, 1.0);
        a.gemv(1.0, u, h, 1.0);
        a
    };
    let z = gate(&params.w_z, &params.u_z, &params.b_z, h_prev).map(sigmoid);
    let r = gate(&params.w_r, &params.u_r, &params.b_r, h_prev).map(sigmoid);
    let rh = r.component_mul(h_prev);
    let h_tilde = gate(&params.w_h, &params.u_h, &params.b_h, &rh).map(f64::tanh);
    let h = h_prev + z.component_mul(&(&h_tilde - h_prev));
    Step {
        id: 0,
        h_prev: h_prev.clone(),
        z,
        r,
        rh,
        h_tilde,
        h,
    }
}

/// Runs the recurrence from a zero state, skipping padding positions.
pub(crate) fn run(params: &GruParams, ids: &[u32]) -> (DVector<f64>, Vec<Step>) {
    let mut h = DVector::zeros(params.d_h());
    let mut steps = Vec::with_capacity(ids.len());
    for &id in ids {
        if id == PAD {
            continue;
        }
        let mut s = step(params, &params.embedding.column(id as usize), &h);
        s.id = id;
        h = s.h.clone();
        steps.push(s);
    }
    (h, steps)
}

pub fn final_hidden(params: &GruParams, ids: &[u32]) -> DVector<f64> {
    run(params, ids).0
}

fn output_score(params: &GruParams, h: &DVector<f64>, social: &[f64]) -> f64 {
    let d_h = params.d_h();
    let hidden: f64 = params.v.rows(0, d_h).dot(h);
    let soc: f64 = params.v.rows(d_h, params.v.len() - d_h).iter().zip(social).map(|(a, b)| a * b).sum();
    hidden + soc + params.c
}

/// `p_fake = σ(V · [h_T; s] + c)`
pub fn forward(params: &GruParams, ids: &[u32], social: &[f64]) -> f64 {
    let h = final_hidden(params, ids);
    sigmoid(output_score(params, &h, social))
}

fn bce(score: f64, y: f64) -> f64 {
    let softplus = if score > 0.0 {
        score + (-score).exp().ln_1p()
    } else {
        score.exp().ln_1p()
    };
    softplus - y * score
}

pub fn loss(params: &GruParams, ids: &[u32], social: &[f64], y: f64) -> f64 {
    let h = final_hidden(params, ids);
    bce(output_score(params, &h, social), y)
}

/// Adds the gradient of the cross-entropy loss on one example to `grads`
/// and returns the loss.
pub(crate) fn accumulate_grad(params: &GruParams, ids: &[u32], social: &[f64], y: f64, grads: &mut GruParams) -> f64 {
    let d_h = params.d_h();
    let (h_t, steps) = run(params, ids);
    let score = output_score(params, &h_t, social);
    let d_score = sigmoid(score) - y;

    {
        let mut gv = grads.v.rows_mut(0, d_h);
        gv.axpy(d_score, &h_t, 1.0);
    }
    for (g, s) in grads.v.iter_mut().skip(d_h).zip(social) {
        *g += d_score * s;
    }
    grads.c += d_score;

    let mut dh: DVector<f64> = params.v.rows(0, d_h).clone_owned() * d_score;
    for s in steps.iter().rev() {
        let d_h_tilde = dh.component_mul(&s.z);
        let dz = dh.component_mul(&(&s.h_tilde - &s.h_prev));
        let mut dh_prev = dh.component_mul(&s.z.map(|z| 1.0 - z));

        let da_h = d_h_tilde.component_mul(&s.h_tilde.map(|t| 1.0 - t * t));
        let x = params.embedding.column(s.id as usize);
        grads.w_h.ger(1.0, &da_h, &x, 1.0);
        grads.u_h.ger(1.0, &da_h, &s.rh, 1.0);
        grads.b_h += &da_h;

        let mut drh = DVector::zeros(d_h);
        drh.gemv_tr(1.0, &params.u_h, &da_h, 0.0);
        let dr = drh.component_mul(&s.h_prev);
        dh_prev += drh.component_mul(&s.r);

        let da_z = dz.component_mul(&s.z.map(|z| z * (1.0 - z)));
        let da_r = dr.component_mul(&s.r.map(|r| r * (1.0 - r)));
        grads.w_z.ger(1.0, &da_z, &x, 1.0);
        grads.u_z.ger(1.0, &da_z, &s.h_prev, 1.0);
        grads.b_z += &da_z;
        grads.w_r.ger(1.0, &da_r, &x, 1.0);
        grads.u_r.ger(1.0, &da_r, &s.h_prev, 1.0);
        grads.b_r += &da_r;

        dh_prev.gemv_tr(1.0, &params.u_z, &da_z, 1.0);
        dh_prev.gemv_tr(1.0, &params.u_r, &da_r, 1.0);

        let mut dx = grads.embedding.column_mut(s.id as usize);
        dx.gemv_tr(1.0, &params.w_z, &da_z, 1.0);
        dx.gemv_tr(1.0, &params.w_r, &da_r, 1.0);
        dx.gemv_tr(1.0, &params.w_h, &da_h, 1.0);

        dh = dh_prev;
    }
    bce(score, y)
}

/// Loss and full gradient for a single example.
pub fn loss_and_grad(params: &GruParams, ids: &[u32], social: &[f64], y: f64) -> (f64, GruParams) {
    let mut grads = params.zeros_like();
    let l = accumulate_grad(params, ids, social, y, &mut grads);
    (l, grads)
}
