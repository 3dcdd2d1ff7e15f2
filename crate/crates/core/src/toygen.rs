//! The two-class toy data-generating process.
//!
//! A binary latent `z*` selects one of two Gaussians; the continuous draw is
//! discretized into equal-width bins whose outermost members absorb the tails.
//! Everything here is exact: the joint `p(x, z*)` is built from Gaussian bin
//! masses, never from samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{
    self, entropy, marginalize, mutual_information, CondDist, FiniteDist, JointDist, ProbError,
    Side,
};

pub const TOYPROCESS_SCHEMA: &str = "toyprocess-v1";

/// Stopping tolerance for the noise bisection, in nats.
pub const CALIBRATION_TOL: f64 = 1e-6;
pub const CALIBRATION_MAX_ITER: usize = 200;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error(
        "target {target} nats is not bracketed: MI ranges over [{mi_high_sigma}, {mi_low_sigma}] \
         for sigma in [{sigma_low}, {sigma_high}]"
    )]
    BracketFailure {
        target: f64,
        sigma_low: f64,
        sigma_high: f64,
        mi_low_sigma: f64,
        mi_high_sigma: f64,
    },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// Standard normal CDF via `erfc`, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function `1 − Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Mass of a standard normal on `[a, b)`, choosing the tail that avoids cancellation.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    }
}

/// Fixed geometry for calibration: everything except the shared noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Mass of latent class 1.
    pub p1: f64,
    pub mu: [f64; 2],
    /// Per-class multipliers applied to the shared sigma.
    pub sigma_scale: [f64; 2],
    pub bin_count: usize,
    pub span: (f64, f64),
}

impl Default for Geometry {
    fn default() -> Self {
        // 3 · sigma_max_guess (= 2) of headroom around the means.
        Self {
            p1: 0.3,
            mu: [-1.0, 1.0],
            sigma_scale: [1.0, 1.0],
            bin_count: 30,
            span: (-7.0, 7.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target_mi: f64,
    pub achieved_mi: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyProcess {
    pub p1: f64,
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub bin_edges: Vec<f64>,
    /// Rows are data bins, columns are the latent classes.
    pub joint: JointDist,
}

/// Exact Bayes inversion of the process joint.
#[derive(Debug, Clone)]
pub struct TruePosteriors {
    pub z_given_x: CondDist,
    pub x_given_z: CondDist,
    pub px: FiniteDist,
}

pub fn build_toy_process(
    p1: f64,
    mu: [f64; 2],
    sigma: [f64; 2],
    bin_count: usize,
    bin_span: (f64, f64),
) -> Result<ToyProcess, ToyError> {
    if bin_count < 2 {
        return Err(ToyError::InvalidGeometry(format!(
            "need at least 2 bins, got {bin_count}"
        )));
    }
    let (lo, hi) = bin_span;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(ToyError::InvalidGeometry(format!(
            "bin span ({lo}, {hi}) is not an ascending finite interval"
        )));
    }
    let width = (hi - lo) / bin_count as f64;
    let edges = (0..=bin_count)
        .map(|i| if i == bin_count { hi } else { lo + width * i as f64 })
        .collect();
    ToyProcess::from_edges(p1, mu, sigma, edges)
}

impl ToyProcess {
    /// Builds the joint for explicit ascending edges; the outer bins absorb the tails.
    pub fn from_edges(
        p1: f64,
        mu: [f64; 2],
        sigma: [f64; 2],
        bin_edges: Vec<f64>,
    ) -> Result<Self, ToyError> {
        if !(p1 > 0.0 && p1 < 1.0) {
            return Err(ToyError::InvalidGeometry(format!("p1 = {p1} not in (0, 1)")));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(ToyError::InvalidGeometry(format!(
                "sigma {sigma:?} must be finite and positive"
            )));
        }
        if bin_edges.len() < 3 || bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ToyError::InvalidGeometry(
                "bin edges must be strictly ascending with at least 2 bins".into(),
            ));
        }
        let (lo, hi) = (bin_edges[0], *bin_edges.last().unwrap());
        if mu.iter().any(|m| !(*m >= lo && *m <= hi)) {
            return Err(ToyError::InvalidGeometry(format!(
                "means {mu:?} lie outside the bin span [{lo}, {hi}]"
            )));
        }
        let n = bin_edges.len() - 1;
        let prior = [1.0 - p1, p1];
        let mut data = vec![0.0; n * 2];
        for z in 0..2 {
            for x in 0..n {
                let a = if x == 0 {
                    f64::NEG_INFINITY
                } else {
                    (bin_edges[x] - mu[z]) / sigma[z]
                };
                let b = if x == n - 1 {
                    f64::INFINITY
                } else {
                    (bin_edges[x + 1] - mu[z]) / sigma[z]
                };
                data[x * 2 + z] = prior[z] * normal_mass(a, b);
            }
        }
        Ok(Self {
            p1,
            mu,
            sigma,
            bin_edges,
            joint: JointDist::from_flat(n, 2, data)?,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.bin_edges.len() - 1
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    /// The data distribution `p*(x)`.
    pub fn px(&self) -> FiniteDist {
        marginalize(&self.joint, Side::Row)
    }

    pub fn latent_prior(&self) -> FiniteDist {
        marginalize(&self.joint, Side::Col)
    }

    pub fn data_entropy(&self) -> f64 {
        entropy(&self.px())
    }

    pub fn mutual_information(&self) -> f64 {
        mutual_information(&self.joint)
    }

    /// Draws `(bin, class)` pairs. Demonstration output only; training uses the exact `p*(x)`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let post = true_posteriors(self);
        (0..n)
            .map(|_| {
                let z = usize::from(rng.gen::<f64>() < self.p1);
                let x = draw(post.x_given_z.row(z), rng.gen::<f64>());
                (x, z)
            })
            .collect()
    }
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn true_posteriors(tp: &ToyProcess) -> TruePosteriors {
    TruePosteriors {
        z_given_x: prob::posterior(&tp.joint, Side::Row),
        x_given_z: prob::posterior(&tp.joint, Side::Col),
        px: tp.px(),
    }
}

fn process_at(geom: &Geometry, sigma: f64) -> Result<ToyProcess, ToyError> {
    build_toy_process(
        geom.p1,
        geom.mu,
        [sigma * geom.sigma_scale[0], sigma * geom.sigma_scale[1]],
        geom.bin_count,
        geom.span,
    )
}

pub fn calibrate_noise(
    target_mi: f64,
    geom: &Geometry,
) -> Result<(ToyProcess, CalibrationReport), ToyError> {
    calibrate_noise_with(target_mi, geom, CALIBRATION_TOL)
}

/// Bisection on the shared sigma: MI falls strictly as sigma grows.
pub fn calibrate_noise_with(
    target_mi: f64,
    geom: &Geometry,
    tolerance: f64,
) -> Result<(ToyProcess, CalibrationReport), ToyError> {
    let sep = (geom.mu[1] - geom.mu[0]).abs().max(f64::MIN_POSITIVE);
    let width = geom.span.1 - geom.span.0;
    let (mut lo, mut hi) = (1e-3 * sep, 1e3 * width);
    let mi_lo = process_at(geom, lo)?.mutual_information();
    let mi_hi = process_at(geom, hi)?.mutual_information();
    if !(target_mi < mi_lo && target_mi > mi_hi) {
        return Err(ToyError::BracketFailure {
            target: target_mi,
            sigma_low: lo,
            sigma_high: hi,
            mi_low_sigma: mi_lo,
            mi_high_sigma: mi_hi,
        });
    }
    let bracket = (lo, hi);
    let mut iterations = 0;
    let mut best = None;
    while iterations < CALIBRATION_MAX_ITER {
        iterations += 1;
        // Geometric midpoint: the bracket spans six decades.
        let mid = (lo * hi).sqrt();
        let tp = process_at(geom, mid)?;
        let mi = tp.mutual_information();
        let done = (mi - target_mi).abs() <= tolerance;
        best = Some((tp, mi, mid));
        if done {
            break;
        }
        if mi > target_mi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (tp, achieved_mi, sigma) = best.expect("at least one bisection step");
    Ok((
        tp,
        CalibrationReport {
            target_mi,
            achieved_mi,
            sigma,
            iterations,
            bracket,
            tolerance,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct ToyProcessFile {
    schema: String,
    p1: f64,
    mu: [f64; 2],
    sigma: [f64; 2],
    bin_edges: Vec<f64>,
    joint: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<CalibrationReport>,
}

impl ToyProcess {
    pub fn to_json(&self, calibration: Option<&CalibrationReport>) -> String {
        let file = ToyProcessFile {
            schema: TOYPROCESS_SCHEMA.to_string(),
            p1: self.p1,
            mu: self.mu,
            sigma: self.sigma,
            bin_edges: self.bin_edges.clone(),
            joint: self.joint.clone().into(),
            calibration: calibration.cloned(),
        };
        serde_json::to_string_pretty(&file).expect("toy process serializes")
    }

    /// Parses a `toyprocess-v1` document, rebuilding the joint from its fields
    /// and checking it against the stored table.
    pub fn from_json(text: &str) -> Result<(Self, Option<CalibrationReport>), ToyError> {
        let file: ToyProcessFile =
            serde_json::from_str(text).map_err(|e| ToyError::Schema(e.to_string()))?;
        if file.schema != TOYPROCESS_SCHEMA {
            return Err(ToyError::Schema(format!(
                "expected schema {TOYPROCESS_SCHEMA}, found {}",
                file.schema
            )));
        }
        let tp = Self::from_edges(file.p1, file.mu, file.sigma, file.bin_edges)?;
        let n = tp.bin_count();
        if file.joint.len() != n || file.joint.iter().any(|r| r.len() != 2) {
            return Err(ToyError::Schema("joint table has the wrong shape".into()));
        }
        for (x, row) in file.joint.iter().enumerate() {
            for (z, &v) in row.iter().enumerate() {
                if (v - tp.joint.get(x, z)).abs() > 1e-12 {
                    return Err(ToyError::Schema(format!(
                        "stored joint[{x}][{z}] = {v} disagrees with its fields"
                    )));
                }
            }
        }
        Ok((tp, file.calibration))
    }
}
