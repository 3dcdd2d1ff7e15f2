//! Hand-derived reverse pass through the two softmax layers, the gated
//! decoder mixture and the D/R sums.

use crate::models::{realize, realize_logs, ModelParams};
use crate::objectives::{distortion, rate, Objective};
use crate::prob::FiniteDist;
use thiserror::Error;

/// Same layout as [`ModelParams`]; entries are ∂loss/∂parameter.
pub type GradVector = ModelParams;

/// `|R − σ|` below this is treated as sitting on the kink.
pub const KINK_TOL: f64 = 1e-12;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("objective is not finite at these parameters (loss = {0})")]
    NonFiniteLoss(f64),
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub d: f64,
    pub r: f64,
    pub grad: GradVector,
}

/// ∂loss/∂R for the given objective and rate weight.
fn rate_coefficient(objective: Objective, r: f64, weight: f64) -> f64 {
    match objective {
        Objective::Beta(beta) => weight * beta,
        Objective::TargetRate(sigma) => {
            let diff = r - sigma;
            if diff.abs() < KINK_TOL {
                0.0
            } else {
                weight * diff.signum()
            }
        }
    }
}

/// Loss and exact gradient. `weight` scales the rate term (1 without annealing).
pub fn gradient(
    objective: Objective,
    weight: f64,
    params: &ModelParams,
    px: &FiniteDist,
    xvals: &[f64],
) -> Result<Evaluation, GradError> {
    let lr = realize_logs(params, xvals);
    let (n, k) = (lr.n, lr.k);
    let p = px.probs();

    let enc: Vec<f64> = lr.log_enc.iter().map(|l| l.exp()).collect();
    let mut d = 0.0;
    let mut r = 0.0;
    for x in 0..n {
        if p[x] == 0.0 {
            continue;
        }
        for z in 0..k {
            let e = enc[x * k + z];
            if e == 0.0 {
                continue;
            }
            d -= p[x] * e * lr.log_dec[z * n + x];
            r += p[x] * e * (lr.log_enc[x * k + z] - lr.log_marg[z]);
        }
    }
    let loss = objective.loss(d, r, weight);
    if !loss.is_finite() {
        return Err(GradError::NonFiniteLoss(loss));
    }
    let c_r = rate_coefficient(objective, r, weight);

    let mut g = ModelParams::zeros(k, n);

    // Encoder: per-bin softmax over latents.
    let mut induced = vec![0.0; k];
    let mut g_e = vec![0.0; k];
    for x in 0..n {
        if p[x] == 0.0 {
            continue;
        }
        let row = &enc[x * k..(x + 1) * k];
        let mut mean = 0.0;
        for z in 0..k {
            g_e[z] = p[x]
                * (-lr.log_dec[z * n + x] + c_r * (lr.log_enc[x * k + z] - lr.log_marg[z]));
            mean += row[z] * g_e[z];
            induced[z] += p[x] * row[z];
        }
        let xv = xvals[x];
        for z in 0..k {
            let g_logit = row[z] * (g_e[z] - mean);
            let resid = params.enc_w[z] * xv - params.enc_b[z];
            g.enc_w[z] += g_logit * (-2.0 * resid * xv);
            g.enc_b[z] += g_logit * (2.0 * resid);
        }
    }

    // Marginal: ∂R/∂logit_z = m_z − e_z.
    for z in 0..k {
        g.marg_logits[z] = c_r * (lr.log_marg[z].exp() - induced[z]);
    }

    // Decoder mixture, using responsibilities of the two channels.
    let base: Vec<f64> = lr.log_base.iter().map(|l| l.exp()).collect();
    let mut v = vec![0.0; n];
    let mut u = vec![0.0; n];
    for z in 0..k {
        let lam = lr.log_gate[z].exp();
        let unlam = lr.log_ungate[z].exp();
        let mut u_sum = 0.0;
        let mut g_gate = 0.0;
        for x in 0..n {
            let q = p[x] * enc[x * k + z];
            let ld = lr.log_dec[z * n + x];
            let r_gauss = (lr.log_ungate[z] + lr.log_gauss[z * n + x] - ld).exp();
            let r_base = (lr.log_gate[z] + lr.log_base[x] - ld).exp();
            u[x] = -q * r_gauss;
            u_sum += u[x];
            v[x] -= q * r_base;
            g_gate -= q * (unlam * r_base - lam * r_gauss);
        }
        g.dec_gate[z] = g_gate;
        for x in 0..n {
            let gauss = lr.log_gauss[z * n + x].exp();
            let g_logit = u[x] - gauss * u_sum;
            let xv = xvals[x];
            let resid = params.dec_w[z] * xv - params.dec_b[z];
            g.dec_w[z] += g_logit * (-2.0 * resid * xv);
            g.dec_b[z] += g_logit * (2.0 * resid);
        }
    }
    let v_sum: f64 = v.iter().sum();
    for x in 0..n {
        g.dec_base[x] = v[x] - base[x] * v_sum;
    }

    Ok(Evaluation {
        loss,
        d,
        r,
        grad: g,
    })
}

/// Loss computed through [`realize`] and the objectives module, independent of
/// the reverse pass.
pub fn reference_loss(
    objective: Objective,
    weight: f64,
    params: &ModelParams,
    px: &FiniteDist,
    xvals: &[f64],
) -> f64 {
    let m = realize(params, xvals);
    objective.loss(distortion(px, &m), rate(px, &m), weight)
}

/// Central-difference error metric per coordinate: relative error with the
/// absolute floor folded into the denominator.
pub fn fd_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic
        .abs()
        .max(numeric.abs())
        .max(FD_ABS_FLOOR / FD_REL_TOL);
    (analytic - numeric).abs() / denom
}

/// Worst coordinate error of [`gradient`] against central differences with step `h`.
pub fn fd_check(
    params: &ModelParams,
    objective: Objective,
    h: f64,
    px: &FiniteDist,
    xvals: &[f64],
) -> f64 {
    assert!(h > 0.0);
    let analytic = gradient(objective, 1.0, params, px, xvals)
        .expect("finite loss at the check point")
        .grad
        .to_flat();
    let base = params.to_flat();
    let (k, n) = (params.latents(), params.bins());
    let mut worst: f64 = 0.0;
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let up = reference_loss(objective, 1.0, &ModelParams::from_flat(k, n, &probe), px, xvals);
        probe[i] = base[i] - h;
        let down = reference_loss(objective, 1.0, &ModelParams::from_flat(k, n, &probe), px, xvals);
        probe[i] = base[i];
        worst = worst.max(fd_error(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}
