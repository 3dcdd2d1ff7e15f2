//! Grids of trained runs, Pareto frontier and lower convex hull in the RD plane.

use crate::fmt::num;
use crate::objectives::{bounds_csv_row, BoundsReport, Objective, BOUNDS_CSV_HEADER};
use crate::toygen::ToyProcess;
use crate::trainer::{train, TrainConfig, TrainError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DOMINANCE_TOL: f64 = 1e-9;
pub const FRONTIER_CSV_HEADER: &str = "kind,R,D,grid_value,seed";

pub fn points_csv_header() -> String {
    format!("{BOUNDS_CSV_HEADER},grid_value,converged")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Only the family is read; each cell substitutes its grid value.
    pub family: Objective,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub base: TrainConfig,
    pub jobs: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: &str| Err(SweepError::InvalidSpec(m.into()));
        if self.grid.is_empty() {
            return bad("grid is empty");
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("grid must be strictly ascending");
        }
        if self.grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("grid values must be finite and non-negative");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        self.base
            .validate()
            .map_err(|e| SweepError::InvalidSpec(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub grid_value: f64,
    pub seed: u64,
    pub objective: Objective,
    pub outcome: Result<BoundsReport, TrainError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub r: f64,
    pub d: f64,
    pub grid_value: f64,
    pub seed: u64,
}

/// Trains every (grid value, seed) cell on a pool of `spec.jobs` workers.
/// Cells come back ordered by grid value, then seed.
pub fn run_sweep(spec: &SweepSpec, tp: &ToyProcess) -> Result<Vec<SweepCell>, SweepError> {
    spec.validate()?;
    let jobs: Vec<(f64, u64)> = spec
        .grid
        .iter()
        .flat_map(|&g| spec.seeds.iter().map(move |&s| (g, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let mut cells: Vec<SweepCell> = pool.install(|| {
        jobs.par_iter()
            .map(|&(grid_value, seed)| {
                let objective = spec.family.with_value(grid_value);
                let cfg = TrainConfig { objective, seed, ..spec.base.clone() };
                SweepCell {
                    grid_value,
                    seed,
                    objective,
                    outcome: train(&cfg, tp).map(|t| t.report),
                }
            })
            .collect()
    });
    cells.sort_by(|a, b| a.grid_value.total_cmp(&b.grid_value).then(a.seed.cmp(&b.seed)));
    Ok(cells)
}

/// Converged cells as RD points.
pub fn rd_points(cells: &[SweepCell]) -> Vec<RdPoint> {
    cells
        .iter()
        .filter_map(|c| {
            c.outcome.as_ref().ok().map(|rep| RdPoint {
                r: rep.r,
                d: rep.d,
                grid_value: c.grid_value,
                seed: c.seed,
            })
        })
        .collect()
}

pub fn points_csv(cells: &[SweepCell]) -> String {
    let mut out = points_csv_header();
    out.push('\n');
    for c in cells {
        let family = c.objective.family();
        match &c.outcome {
            Ok(rep) => out.push_str(&bounds_csv_row(family, c.grid_value, c.seed, rep)),
            Err(_) => {
                let nan = num(f64::NAN);
                out.push_str(&format!("{family},{},{}", num(c.grid_value), c.seed));
                for _ in 0..10 {
                    out.push(',');
                    out.push_str(&nan);
                }
                out.push_str(",diverged");
            }
        }
        out.push_str(&format!(",{},{}\n", num(c.grid_value), c.outcome.is_ok()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub points: Vec<RdPoint>,
    pub pareto: Vec<RdPoint>,
    pub hull: Vec<RdPoint>,
}

fn cross(o: &RdPoint, a: &RdPoint, b: &RdPoint) -> f64 {
    (a.r - o.r) * (b.d - o.d) - (a.d - o.d) * (b.r - o.r)
}

/// Stepwise frontier (R ascending, D strictly improving) and its lower hull.
pub fn pareto_frontier(points: &[RdPoint]) -> Frontier {
    let mut sorted: Vec<RdPoint> = points
        .iter()
        .copied()
        .filter(|p| p.r.is_finite() && p.d.is_finite())
        .collect();
    assert!(!sorted.is_empty(), "frontier needs at least one finite point");
    sorted.sort_by(|a, b| a.r.total_cmp(&b.r).then(a.d.total_cmp(&b.d)));

    let mut pareto: Vec<RdPoint> = Vec::new();
    for p in sorted {
        match pareto.last() {
            Some(last) if p.d >= last.d - DOMINANCE_TOL => {}
            _ => pareto.push(p),
        }
    }

    let mut hull: Vec<RdPoint> = Vec::new();
    for p in &pareto {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }

    Frontier { points: points.to_vec(), pareto, hull }
}

impl Frontier {
    /// Lower boundary at rate `r`, held flat beyond the last vertex.
    pub fn hull_at(&self, r: f64) -> f64 {
        let h = &self.hull;
        if r <= h[0].r {
            return h[0].d;
        }
        for w in h.windows(2) {
            if r <= w[1].r {
                let t = (r - w[0].r) / (w[1].r - w[0].r);
                return w[0].d + t * (w[1].d - w[0].d);
            }
        }
        h[h.len() - 1].d
    }

    /// Pairs (pareto point, input point) where the input strictly dominates.
    pub fn dominance_violations(&self) -> usize {
        self.pareto
            .iter()
            .map(|p| {
                self.points
                    .iter()
                    .filter(|q| q.r < p.r - DOMINANCE_TOL && q.d < p.d - DOMINANCE_TOL)
                    .count()
            })
            .sum()
    }

    /// Largest amount by which any input point falls below the hull.
    pub fn worst_hull_excess(&self) -> f64 {
        self.points
            .iter()
            .filter(|p| p.r.is_finite() && p.d.is_finite())
            .map(|p| self.hull_at(p.r) - p.d)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(FRONTIER_CSV_HEADER);
        out.push('\n');
        for (kind, pts) in [("pareto", &self.pareto), ("hull", &self.hull)] {
            for p in pts {
                out.push_str(&format!(
                    "{kind},{},{},{},{}\n",
                    num(p.r),
                    num(p.d),
                    num(p.grid_value),
                    p.seed
                ));
            }
        }
        out
    }
}

/// Endpoints of the `D = H − R` line.
pub fn diagonal_reference(h: f64) -> [(f64, f64); 2] {
    assert!(h > 0.0, "data entropy must be positive");
    [(0.0, h), (h, 0.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::optimal_reference;
    use crate::objectives::evaluate;
    use crate::toygen::{calibrate_noise, Geometry};
    use proptest::prelude::*;

    fn pt(r: f64, d: f64) -> RdPoint {
        RdPoint { r, d, grid_value: 0.0, seed: 0 }
    }

    fn rd(ps: &[RdPoint]) -> Vec<(f64, f64)> {
        ps.iter().map(|p| (p.r, p.d)).collect()
    }

    #[test]
    fn single_point() {
        let f = pareto_frontier(&[pt(1.0, 2.0)]);
        assert_eq!(rd(&f.pareto), vec![(1.0, 2.0)]);
        assert_eq!(rd(&f.hull), vec![(1.0, 2.0)]);
    }

    #[test]
    fn dominated_point_dropped() {
        let f = pareto_frontier(&[pt(0.0, 3.0), pt(1.0, 1.0), pt(2.0, 2.0)]);
        assert_eq!(rd(&f.pareto), vec![(0.0, 3.0), (1.0, 1.0)]);
    }

    #[test]
    fn collinear_hull_keeps_endpoints() {
        let f = pareto_frontier(&[pt(0.0, 2.0), pt(1.0, 1.0), pt(2.0, 0.0)]);
        assert_eq!(f.pareto.len(), 3);
        assert_eq!(rd(&f.hull), vec![(0.0, 2.0), (2.0, 0.0)]);
    }

    #[test]
    fn tie_keeps_lower_rate() {
        let f = pareto_frontier(&[pt(1.0, 1.0), pt(0.5, 1.0), pt(0.7, 1.0 + 1e-12)]);
        assert_eq!(rd(&f.pareto), vec![(0.5, 1.0)]);
    }

    #[test]
    fn diagonal_endpoints_and_tightness() {
        let tp = calibrate_noise(0.5, &Geometry::default()).unwrap().0;
        let h = tp.data_entropy();
        assert_eq!(diagonal_reference(h), [(0.0, h), (h, 0.0)]);
        let rep = evaluate(&tp.px(), &optimal_reference(&tp, 30), None);
        assert!((rep.r + rep.d - h).abs() < 1e-9);
    }

    #[test]
    fn spec_validation() {
        let base = SweepSpec {
            family: Objective::Beta(1.0),
            grid: vec![0.5, 1.0],
            seeds: vec![0],
            base: TrainConfig::default(),
            jobs: 1,
        };
        assert!(base.validate().is_ok());
        assert!(SweepSpec { grid: vec![], ..base.clone() }.validate().is_err());
        assert!(SweepSpec { grid: vec![1.0, 1.0], ..base.clone() }.validate().is_err());
        assert!(SweepSpec { seeds: vec![], ..base.clone() }.validate().is_err());
        assert!(SweepSpec { jobs: 0, ..base }.validate().is_err());
    }

    #[test]
    fn small_sweep_cardinality_order_and_determinism() {
        let tp = calibrate_noise(0.5, &Geometry::default()).unwrap().0;
        let spec = SweepSpec {
            family: Objective::Beta(1.0),
            grid: vec![0.1, 0.5, 1.0, 2.0],
            seeds: vec![2, 0, 1],
            base: TrainConfig { steps: 40, ..TrainConfig::default() },
            jobs: 2,
        };
        let a = run_sweep(&spec, &tp).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!((a[0].grid_value, a[0].seed), (0.1, 0));
        assert_eq!((a[11].grid_value, a[11].seed), (2.0, 2));
        let b = run_sweep(&spec, &tp).unwrap();
        assert_eq!(points_csv(&a), points_csv(&b));
        assert_eq!(points_csv(&a).lines().count(), 13);
    }

    proptest! {
        #[test]
        fn frontier_invariants(raw in prop::collection::vec((0.0f64..3.0, 0.0f64..3.0), 1..40)) {
            let pts: Vec<RdPoint> = raw.iter().map(|&(r, d)| pt(r, d)).collect();
            let f = pareto_frontier(&pts);
            prop_assert_eq!(f.dominance_violations(), 0);
            prop_assert!(f.worst_hull_excess() <= 1e-9);
            for w in f.hull.windows(3) {
                prop_assert!(cross(&w[0], &w[1], &w[2]) > 0.0);
            }
        }
    }
}
