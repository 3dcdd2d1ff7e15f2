//! Information functionals and training objectives, all in nats.
//!
//! Support failures are encoded as `±∞` rather than errors so that sweeps can
//! record degenerate optima instead of aborting.

use serde::{Deserialize, Serialize};

use crate::fmt::num;
use crate::models::Model;
use crate::prob::{compose_joint, entropy, kl_or_inf, mutual_information, FiniteDist};

/// Tolerance for the phase-diagram edge classification.
pub const EDGE_TOL: f64 = 1e-6;

/// `D = −Σ_x p*(x) Σ_z e(z|x) ln d(x|z)`
pub fn distortion(px: &FiniteDist, m: &Model) -> f64 {
    let mut acc = 0.0;
    for (x, &p) in px.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (z, &e) in m.encoder.row(x).iter().enumerate() {
            if e == 0.0 {
                continue;
            }
            let d = m.decoder.get(z, x);
            if d == 0.0 {
                return f64::INFINITY;
            }
            acc -= p * e * d.ln();
        }
    }
    acc
}

/// `R = Σ_x p*(x) KL(e(·|x) ‖ m)`
pub fn rate(px: &FiniteDist, m: &Model) -> f64 {
    let mut acc = 0.0;
    for (x, &p) in px.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let row = m.encoder.row_dist(x);
        acc += p * kl_or_inf(&row, &m.marginal);
    }
    acc
}

pub fn elbo(d: f64, r: f64) -> f64 {
    -(d + r)
}

/// `D + βR`; equals `−ELBO` at `β = 1`.
pub fn beta_loss(d: f64, r: f64, beta: f64) -> f64 {
    d + beta * r
}

/// `D + |σ − R|`
pub fn target_rate_loss(d: f64, r: f64, sigma: f64) -> f64 {
    d + (sigma - r).abs()
}

/// Training objective tag, written `beta:<β>` or `target-rate:<σ>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Objective {
    Beta(f64),
    TargetRate(f64),
}

impl Objective {
    pub fn family(&self) -> &'static str {
        match self {
            Objective::Beta(_) => "beta",
            Objective::TargetRate(_) => "target-rate",
        }
    }

    /// β or σ.
    pub fn value(&self) -> f64 {
        match *self {
            Objective::Beta(v) | Objective::TargetRate(v) => v,
        }
    }

    pub fn with_value(&self, v: f64) -> Objective {
        match self {
            Objective::Beta(_) => Objective::Beta(v),
            Objective::TargetRate(_) => Objective::TargetRate(v),
        }
    }

    /// Loss with the rate term (β·R, or the |σ − R| penalty) scaled by `weight`.
    pub fn loss(&self, d: f64, r: f64, weight: f64) -> f64 {
        match *self {
            Objective::Beta(beta) => beta_loss(d, r, weight * beta),
            Objective::TargetRate(sigma) => d + weight * (sigma - r).abs(),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.family(), self.value())
    }
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (family, value) = s
            .split_once(':')
            .ok_or_else(|| format!("objective {s:?} is not of the form beta:<b> or target-rate:<s>"))?;
        let v: f64 = value
            .parse()
            .map_err(|_| format!("objective value {value:?} is not a number"))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(format!("objective value {v} must be finite and non-negative"));
        }
        match family {
            "beta" => Ok(Objective::Beta(v)),
            "target-rate" => Ok(Objective::TargetRate(v)),
            _ => Err(format!("unknown objective family {family:?}")),
        }
    }
}

impl TryFrom<String> for Objective {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Objective> for String {
    fn from(o: Objective) -> String {
        o.to_string()
    }
}

/// `g(x) = Σ_z m(z) d(x|z)`
pub fn generative_marginal(m: &Model) -> FiniteDist {
    m.decoder
        .push_forward(&m.marginal)
        .expect("decoder rows match the marginal")
}

/// `p*(x) ⊗ e(z|x)` mutual information.
pub fn representational_mi(px: &FiniteDist, m: &Model) -> f64 {
    mutual_information(&compose_joint(px, &m.encoder).expect("encoder rows match p*(x)"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerativeBounds {
    pub e: f64,
    pub g: f64,
    pub i_gen: f64,
}

/// Bounds `E ≤ I_gen ≤ G` along the generative path `m(z) d(x|z)`.
pub fn generative_bounds(m: &Model, q_x: &FiniteDist) -> GenerativeBounds {
    let mut e_acc = 0.0;
    let mut g_acc = 0.0;
    for (z, &mz) in m.marginal.probs().iter().enumerate() {
        if mz == 0.0 {
            continue;
        }
        for (x, &d) in m.decoder.row(z).iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let w = mz * d;
            let enc = m.encoder.get(x, z);
            e_acc += if enc == 0.0 {
                f64::NEG_INFINITY
            } else {
                w * (enc / mz).ln()
            };
            let q = q_x.get(x);
            g_acc += if q == 0.0 {
                f64::INFINITY
            } else {
                w * (d / q).ln()
            };
        }
    }
    let i_gen = mutual_information(
        &compose_joint(&m.marginal, &m.decoder).expect("decoder rows match the marginal"),
    );
    GenerativeBounds {
        e: e_acc,
        g: g_acc,
        i_gen,
    }
}

/// `(U, S)` with `U = Σ p* e ln(d/q)` and `S = KL(p* ‖ q)`.
pub fn reparam_bounds(px: &FiniteDist, m: &Model, q_x: &FiniteDist) -> (f64, f64) {
    let mut u = 0.0;
    let mut cross = 0.0;
    for (x, &p) in px.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let q = q_x.get(x);
        if q == 0.0 {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        cross -= p * q.ln();
        for (z, &e) in m.encoder.row(x).iter().enumerate() {
            if e == 0.0 {
                continue;
            }
            let d = m.decoder.get(z, x);
            u += if d == 0.0 {
                f64::NEG_INFINITY
            } else {
                p * e * (d / q).ln()
            };
        }
    }
    (u, cross - entropy(px))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub h: f64,
    pub d: f64,
    pub r: f64,
    pub i_rep: f64,
    pub e: f64,
    pub g: f64,
    pub i_gen: f64,
    pub u: f64,
    pub s: f64,
    pub elbo: f64,
}

/// Every functional at once. `q_x` defaults to the exact generative marginal.
pub fn evaluate(px: &FiniteDist, m: &Model, q_x: Option<&FiniteDist>) -> BoundsReport {
    let g_x;
    let q_x = match q_x {
        Some(q) => q,
        None => {
            g_x = generative_marginal(m);
            &g_x
        }
    };
    let d = distortion(px, m);
    let r = rate(px, m);
    let gb = generative_bounds(m, q_x);
    let (u, s) = reparam_bounds(px, m, q_x);
    BoundsReport {
        h: entropy(px),
        d,
        r,
        i_rep: representational_mi(px, m),
        e: gb.e,
        g: gb.g,
        i_gen: gb.i_gen,
        u,
        s,
        elbo: elbo(d, r),
    }
}

/// A broken sandwich inequality, with its signed gap.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub name: &'static str,
    pub gap: f64,
}

impl BoundsReport {
    /// Checks every sandwich and identity at tolerance `tol`.
    pub fn violations(&self, tol: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |name, gap: f64| {
            if gap.is_nan() || gap < -tol {
                out.push(Violation { name, gap });
            }
        };
        check("H - D <= I_rep", self.i_rep - (self.h - self.d));
        check("I_rep <= R", self.r - self.i_rep);
        check("E <= I_gen", self.i_gen - self.e);
        check("I_gen <= G", self.g - self.i_gen);
        check("D >= 0", self.d);
        check("R >= 0", self.r);
        let ident = (self.u - self.s) - (self.h - self.d);
        check("U - S = H - D", -ident.abs());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feasibility {
    FeasibleInterior,
    AutoEncodingEdge,
    AutoDecodingEdge,
    Diagonal,
    Infeasible,
}

impl Feasibility {
    pub fn as_str(self) -> &'static str {
        match self {
            Feasibility::FeasibleInterior => "feasible-interior",
            Feasibility::AutoEncodingEdge => "auto-encoding-edge",
            Feasibility::AutoDecodingEdge => "auto-decoding-edge",
            Feasibility::Diagonal => "diagonal",
            Feasibility::Infeasible => "infeasible",
        }
    }
}

/// Places `(R, D)` in the phase diagram for data entropy `h`.
pub fn classify(r: f64, d: f64, h: f64) -> Feasibility {
    if !(r.is_finite() && d.is_finite()) {
        return Feasibility::FeasibleInterior;
    }
    if r < -EDGE_TOL || d < -EDGE_TOL || r + d < h - EDGE_TOL {
        Feasibility::Infeasible
    } else if r.abs() <= EDGE_TOL {
        Feasibility::AutoDecodingEdge
    } else if d.abs() <= EDGE_TOL {
        Feasibility::AutoEncodingEdge
    } else if (r + d - h).abs() <= EDGE_TOL {
        Feasibility::Diagonal
    } else {
        Feasibility::FeasibleInterior
    }
}

pub fn feasibility(point: &BoundsReport) -> Feasibility {
    classify(point.r, point.d, point.h)
}

pub const BOUNDS_CSV_HEADER: &str =
    "objective,beta_or_sigma,seed,H,D,R,elbo,I_rep,E,G,I_gen,U,S,feasibility";

/// One `BoundsReport` CSV row, without a trailing newline.
pub fn bounds_csv_row(objective: &str, beta_or_sigma: f64, seed: u64, rep: &BoundsReport) -> String {
    format!(
        "{objective},{},{seed},{},{},{},{},{},{},{},{},{},{},{}",
        num(beta_or_sigma),
        num(rep.h),
        num(rep.d),
        num(rep.r),
        num(rep.elbo),
        num(rep.i_rep),
        num(rep.e),
        num(rep.g),
        num(rep.i_gen),
        num(rep.u),
        num(rep.s),
        feasibility(rep).as_str()
    )
}
