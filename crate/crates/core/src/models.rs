//! The tabular model family: quadratic-logit encoder, gated decoder, free marginal.
//!
//! Encoder: `e(z_i | x_j) ∝ exp[−(w^e_i x_j − b^e_i)²]`, softmax over latents.
//! Decoder: each latent's row mixes a discretized-Gaussian channel
//! `softmax_j −(w^d_i x_j − b^d_i)²` with a shared background `softmax(base)`;
//! the mixing weight is `sigmoid(gate_i)`. Marginal: `softmax(marg_logits)`.
//! `x_j` is the real-valued bin centre.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{log_softmax, marginalize, softmax, CondDist, FiniteDist, Side};
use crate::toygen::{true_posteriors, ToyProcess};

pub const MODELPARAMS_SCHEMA: &str = "modelparams-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Trained,
    OptimalReference,
    Explicit,
}

/// Trainable parameters. Latent-indexed vectors have length `K`; `dec_base`
/// has one logit per data bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub enc_w: Vec<f64>,
    pub enc_b: Vec<f64>,
    pub dec_w: Vec<f64>,
    pub dec_b: Vec<f64>,
    pub marg_logits: Vec<f64>,
    pub dec_base: Vec<f64>,
    pub dec_gate: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(latents: usize, bins: usize) -> Self {
        Self {
            enc_w: vec![0.0; latents],
            enc_b: vec![0.0; latents],
            dec_w: vec![0.0; latents],
            dec_b: vec![0.0; latents],
            marg_logits: vec![0.0; latents],
            dec_base: vec![0.0; bins],
            dec_gate: vec![0.0; latents],
        }
    }

    pub fn latents(&self) -> usize {
        self.enc_w.len()
    }

    pub fn bins(&self) -> usize {
        self.dec_base.len()
    }

    pub fn len(&self) -> usize {
        6 * self.latents() + self.bins()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fields(&self) -> [&Vec<f64>; 7] {
        [
            &self.enc_w,
            &self.enc_b,
            &self.dec_w,
            &self.dec_b,
            &self.marg_logits,
            &self.dec_base,
            &self.dec_gate,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.dec_w,
            &mut self.dec_b,
            &mut self.marg_logits,
            &mut self.dec_base,
            &mut self.dec_gate,
        ]
    }

    /// Flat view in field order `enc_w, enc_b, dec_w, dec_b, marg_logits, dec_base, dec_gate`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.fields().iter().flat_map(|f| f.iter().copied()).collect()
    }

    pub fn from_flat(latents: usize, bins: usize, flat: &[f64]) -> Self {
        let mut p = Self::zeros(latents, bins);
        assert_eq!(flat.len(), p.len());
        let mut at = 0;
        for f in p.fields_mut() {
            let n = f.len();
            f.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|f| f.iter().all(|v| v.is_finite()))
    }

    pub fn is_consistent(&self) -> bool {
        let k = self.latents();
        [&self.enc_b, &self.dec_w, &self.dec_b, &self.marg_logits, &self.dec_gate]
            .iter()
            .all(|f| f.len() == k)
    }

    /// New latent `i` takes the parameters of old latent `perm[i]`.
    pub fn permute_latents(&self, perm: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| perm.iter().map(|&i| v[i]).collect();
        Self {
            enc_w: pick(&self.enc_w),
            enc_b: pick(&self.enc_b),
            dec_w: pick(&self.dec_w),
            dec_b: pick(&self.dec_b),
            marg_logits: pick(&self.marg_logits),
            dec_base: self.dec_base.clone(),
            dec_gate: pick(&self.dec_gate),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    /// `e(z | x)`, one row per data bin.
    pub encoder: CondDist,
    /// `d(x | z)`, one row per latent.
    pub decoder: CondDist,
    pub marginal: FiniteDist,
    pub provenance: Provenance,
}

impl Model {
    pub fn latents(&self) -> usize {
        self.marginal.len()
    }

    pub fn bins(&self) -> usize {
        self.encoder.n_inputs()
    }

    /// Relabels latents: new latent `i` is old latent `perm[i]`.
    pub fn permute_latents(&self, perm: &[usize]) -> Model {
        let ident: Vec<usize> = (0..self.bins()).collect();
        Model {
            encoder: self.encoder.permuted(&ident, perm),
            decoder: self.decoder.permuted(perm, &ident),
            marginal: self.marginal.permuted(perm),
            provenance: self.provenance,
        }
    }
}

/// `−(w x − b)²`
#[inline]
pub(crate) fn quad_logit(w: f64, b: f64, x: f64) -> f64 {
    let r = w * x - b;
    -r * r
}

/// `(ln σ(g), ln(1 − σ(g)))`, stable for large `|g|`.
#[inline]
pub(crate) fn log_sigmoid_pair(g: f64) -> (f64, f64) {
    let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    (-softplus(-g), -softplus(g))
}

/// Log-space realization shared by [`realize`] and the gradient engine.
pub(crate) struct Realized {
    pub n: usize,
    pub k: usize,
    /// `ln e(z|x)`, row-major `n × k`.
    pub log_enc: Vec<f64>,
    /// Gaussian-channel log-probabilities, row-major `k × n`.
    pub log_gauss: Vec<f64>,
    pub log_base: Vec<f64>,
    pub log_gate: Vec<f64>,
    pub log_ungate: Vec<f64>,
    /// `ln d(x|z)`, row-major `k × n`.
    pub log_dec: Vec<f64>,
    pub log_marg: Vec<f64>,
}

pub(crate) fn realize_logs(params: &ModelParams, xvals: &[f64]) -> Realized {
    let n = xvals.len();
    let k = params.latents();
    assert_eq!(params.bins(), n, "dec_base length must equal the bin count");
    let mut log_enc = Vec::with_capacity(n * k);
    let mut row = vec![0.0; k];
    for &x in xvals {
        for (i, r) in row.iter_mut().enumerate() {
            *r = quad_logit(params.enc_w[i], params.enc_b[i], x);
        }
        log_enc.extend(log_softmax(&row));
    }
    let log_base = log_softmax(&params.dec_base);
    let mut log_gauss = Vec::with_capacity(k * n);
    let mut log_dec = Vec::with_capacity(k * n);
    let mut log_gate = Vec::with_capacity(k);
    let mut log_ungate = Vec::with_capacity(k);
    let mut drow = vec![0.0; n];
    for i in 0..k {
        for (j, d) in drow.iter_mut().enumerate() {
            *d = quad_logit(params.dec_w[i], params.dec_b[i], xvals[j]);
        }
        let lg = log_softmax(&drow);
        let (lam, unlam) = log_sigmoid_pair(params.dec_gate[i]);
        for j in 0..n {
            let a = unlam + lg[j];
            let b = lam + log_base[j];
            let m = a.max(b);
            log_dec.push(if m == f64::NEG_INFINITY {
                m
            } else {
                m + ((a - m).exp() + (b - m).exp()).ln()
            });
        }
        log_gauss.extend(lg);
        log_gate.push(lam);
        log_ungate.push(unlam);
    }
    Realized {
        n,
        k,
        log_enc,
        log_gauss,
        log_base,
        log_gate,
        log_ungate,
        log_dec,
        log_marg: log_softmax(&params.marg_logits),
    }
}

fn exp_rows(rows: usize, cols: usize, logs: &[f64]) -> CondDist {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|r| logs[r * cols..(r + 1) * cols].iter().map(|l| l.exp()).collect())
        .collect();
    CondDist::from_rows(data).expect("realized rows are normalized")
}

/// Maps parameters to the encoder, decoder and marginal they define.
pub fn realize(params: &ModelParams, xvals: &[f64]) -> Model {
    let r = realize_logs(params, xvals);
    Model {
        encoder: exp_rows(r.n, r.k, &r.log_enc),
        decoder: exp_rows(r.k, r.n, &r.log_dec),
        marginal: FiniteDist::new(softmax(&params.marg_logits)).expect("softmax is normalized"),
        provenance: Provenance::Trained,
    }
}

/// The hand-built optimum: true class posteriors embedded in the first two
/// latent symbols, remaining symbols unused.
pub fn optimal_reference(tp: &ToyProcess, latents: usize) -> Model {
    assert!(latents >= 2, "optimal reference needs at least two latents");
    let post = true_posteriors(tp);
    let n = tp.bin_count();
    let enc_rows = (0..n)
        .map(|x| {
            let mut row = vec![0.0; latents];
            row[..2].copy_from_slice(post.z_given_x.row(x));
            row
        })
        .collect();
    let dec_rows = (0..latents)
        .map(|z| {
            if z < 2 {
                post.x_given_z.row(z).to_vec()
            } else {
                vec![1.0 / n as f64; n]
            }
        })
        .collect();
    let prior = marginalize(&tp.joint, Side::Col);
    let mut marg = vec![0.0; latents];
    marg[..2].copy_from_slice(prior.probs());
    Model {
        encoder: CondDist::from_rows(enc_rows).expect("posterior rows"),
        decoder: CondDist::from_rows(dec_rows).expect("likelihood rows"),
        marginal: FiniteDist::new(marg).expect("prior"),
        provenance: Provenance::OptimalReference,
    }
}

/// Reproducible initialization.
///
/// Weights are drawn from `U(−scale, scale)`; each bias is `w_i · c_i` with the
/// centre `c_i` uniform over the bin-centre range, so every latent's logit
/// peaks somewhere inside the data. Decoder background and marginal start
/// uniform; every gate starts at `gate_init`.
pub fn init_params(
    seed: u64,
    scale: f64,
    xvals: &[f64],
    latents: usize,
    gate_init: f64,
) -> ModelParams {
    assert!(scale > 0.0, "init scale must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = xvals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let layer = |rng: &mut ChaCha8Rng| {
        let w: Vec<f64> = (0..latents).map(|_| rng.gen_range(-scale..scale)).collect();
        let b = w.iter().map(|&wi| wi * rng.gen_range(lo..hi)).collect::<Vec<_>>();
        (w, b)
    };
    let (enc_w, enc_b) = layer(&mut rng);
    let (dec_w, dec_b) = layer(&mut rng);
    ModelParams {
        enc_w,
        enc_b,
        dec_w,
        dec_b,
        marg_logits: vec![0.0; latents],
        dec_base: vec![0.0; xvals.len()],
        dec_gate: vec![gate_init; latents],
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(#[from] serde_json::Error),
}

/// `modelparams-v1` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub objective: Option<String>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(flatten)]
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, seed: Option<u64>, objective: Option<String>, steps: Option<usize>) -> Self {
        Self {
            schema: MODELPARAMS_SCHEMA.to_string(),
            seed,
            objective,
            steps,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema").and_then(|s| s.as_str()) {
            Some(MODELPARAMS_SCHEMA) => {}
            other => {
                return Err(CheckpointError::Schema(format!(
                    "expected schema {MODELPARAMS_SCHEMA}, found {other:?}"
                )))
            }
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        if !ck.params.is_consistent() {
            return Err(CheckpointError::Schema("latent vectors differ in length".into()));
        }
        if !ck.params.is_finite() {
            return Err(CheckpointError::Schema("non-finite parameter".into()));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toygen::{calibrate_noise, Geometry};

    fn xvals() -> Vec<f64> {
        (0..30).map(|j| -7.0 + 14.0 * (j as f64 + 0.5) / 30.0).collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_params_are_uniform() {
        let m = realize(&ModelParams::zeros(30, 30), &xvals());
        for j in 0..30 {
            assert!(m.encoder.row(j).iter().all(|&p| (p - 1.0 / 30.0).abs() < 1e-15));
            assert!(m.decoder.row(j).iter().all(|&p| (p - 1.0 / 30.0).abs() < 1e-15));
        }
        assert!(max_abs_diff(m.marginal.probs(), FiniteDist::uniform(30).probs()) < 1e-15);
    }

    #[test]
    fn bias_alone_cannot_break_symmetry() {
        let mut p = ModelParams::zeros(30, 30);
        p.enc_b = vec![2.5; 30];
        let m = realize(&p, &xvals());
        for j in 0..30 {
            assert!(m.encoder.row(j).iter().all(|&v| (v - 1.0 / 30.0).abs() < 1e-15));
        }
    }

    #[test]
    fn single_sharp_latent_owns_its_bin() {
        let xs = xvals();
        let mut p = ModelParams::zeros(30, 30);
        p.enc_b = vec![1000.0; 30];
        p.enc_w[7] = 10.0;
        p.enc_b[7] = 10.0 * xs[5];
        let m = realize(&p, &xs);
        // Every other logit is −1000² while latent 7 sits at 0.
        assert!(m.encoder.get(5, 7) > 0.99);
    }

    #[test]
    fn optimal_reference_structure() {
        let (tp, _) = calibrate_noise(0.5, &Geometry::default()).unwrap();
        let m = optimal_reference(&tp, 30);
        assert!((m.marginal.get(0) - 0.7).abs() < 1e-12);
        assert!((m.marginal.get(1) - 0.3).abs() < 1e-12);
        assert!(m.marginal.probs()[2..].iter().all(|&v| v == 0.0));
        for x in 0..30 {
            assert!(m.encoder.row(x)[2..].iter().all(|&v| v == 0.0));
        }
        assert_eq!(m.provenance, Provenance::OptimalReference);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let xs = xvals();
        let a = init_params(0, 0.1, &xs, 30, 1.0);
        assert_eq!(a.to_flat(), init_params(0, 0.1, &xs, 30, 1.0).to_flat());
        assert_ne!(a, init_params(1, 0.1, &xs, 30, 1.0));
        let tiny = realize(&init_params(3, 1e-6, &xs, 30, 1.0), &xs);
        for j in 0..30 {
            assert!(tiny.encoder.row(j).iter().all(|&v| v < 0.05));
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = init_params(4, 0.3, &xvals(), 7, 0.5);
        assert_eq!(ModelParams::from_flat(7, 30, &p.to_flat()), p);
    }

    #[test]
    fn latent_permutation_equivariance() {
        let xs = xvals();
        let p = init_params(11, 0.8, &xs, 6, 0.2);
        let perm = [3, 0, 5, 1, 4, 2];
        let direct = realize(&p.permute_latents(&perm), &xs);
        let relabeled = realize(&p, &xs).permute_latents(&perm);
        for j in 0..30 {
            assert!(max_abs_diff(direct.encoder.row(j), relabeled.encoder.row(j)) < 1e-15);
        }
        for i in 0..6 {
            assert!(max_abs_diff(direct.decoder.row(i), relabeled.decoder.row(i)) < 1e-15);
        }
        assert!(max_abs_diff(direct.marginal.probs(), relabeled.marginal.probs()) < 1e-15);
    }

    #[test]
    fn shift_invariance_of_free_logits() {
        let xs = xvals();
        let p = init_params(2, 0.5, &xs, 5, 0.0);
        let mut q = p.clone();
        q.marg_logits.iter_mut().for_each(|v| *v += 3.7);
        q.dec_base.iter_mut().for_each(|v| *v -= 11.0);
        let (a, b) = (realize(&p, &xs), realize(&q, &xs));
        assert!(max_abs_diff(a.marginal.probs(), b.marginal.probs()) < 1e-12);
        for i in 0..5 {
            assert!(max_abs_diff(a.decoder.row(i), b.decoder.row(i)) < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let p = init_params(9, 0.37, &xvals(), 30, 1.0);
        let ck = Checkpoint::new(p, Some(9), Some("beta:1".into()), Some(10));
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        let bits = |c: &Checkpoint| c.params.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ck));
        assert_eq!(back, ck);
        let bad = ck.to_json().replace(MODELPARAMS_SCHEMA, "modelparams-v9");
        assert!(matches!(Checkpoint::from_json(&bad), Err(CheckpointError::Schema(_))));
    }
}
