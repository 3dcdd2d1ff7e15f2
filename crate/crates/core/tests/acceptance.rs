//! Acceptance criteria 1–9. Runs as a plain binary so every line reaches the
//! console; exits non-zero if any criterion fails.

mod common;

use common::{random_dist, random_model, random_params, rng, toy};
use rand::Rng;
use rayon::prelude::*;
use rd_lens::analysis::fig2;
use rd_lens::grad::{fd_check, FD_REL_TOL, FD_STEP};
use rd_lens::models::{optimal_reference, realize, Model};
use rd_lens::objectives::*;
use rd_lens::prob::{compose_joint, kl, posterior, CondDist, FiniteDist, Side};
use rd_lens::sweep::{pareto_frontier, rd_points, run_sweep, SweepSpec};
use rd_lens::toygen::{calibrate_noise, Geometry};
use rd_lens::trainer::{train, TrainConfig};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(limit_secs: u64, elapsed: Duration, detail: String, ok: bool) -> Outcome {
    let detail = format!("{detail}; limit {limit_secs} s");
    if ok && elapsed <= Duration::from_secs(limit_secs) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn calibration() -> Outcome {
    let t = Instant::now();
    let (tp, _) = calibrate_noise(0.5, &Geometry::default()).map_err(|e| e.to_string())?;
    let mi = tp.mutual_information();
    within(1, t.elapsed(), format!("I(x;z*) = {mi:.9} at sigma = {:.9}", tp.sigma[0]), (mi - 0.5).abs() <= 1e-3)
}

struct RunSummary {
    seed: u64,
    r: f64,
    kl_p_g: f64,
    mass0: f64,
    purity: f64,
}

fn ten_seeds(objective: Objective) -> Result<Vec<RunSummary>, String> {
    let tp = toy();
    (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = TrainConfig { objective, seed, ..TrainConfig::default() };
            let trace = train(&cfg, tp).map_err(|e| format!("seed {seed}: {e}"))?;
            let rep = fig2(tp, &realize(&trace.params, &tp.bin_centers()));
            Ok(RunSummary {
                seed,
                r: trace.report.r,
                kl_p_g: rep.kl_p_g,
                mass0: rep.cluster.mass_per_class[0],
                purity: rep.cluster.purity,
            })
        })
        .collect()
}

fn elbo_collapse() -> Outcome {
    let t = Instant::now();
    let runs = ten_seeds(Objective::Beta(1.0))?;
    let good: Vec<u64> = runs.iter().filter(|s| s.r < 0.01 && s.kl_p_g < 1e-2).map(|s| s.seed).collect();
    let worst_r = runs.iter().map(|s| s.r).fold(0.0, f64::max);
    let worst_kl = runs.iter().map(|s| s.kl_p_g).fold(0.0, f64::max);
    within(
        120,
        t.elapsed(),
        format!("{}/10 seeds with R < 0.01 and KL(p*||g) < 1e-2 (max R {worst_r:.2e}, max KL {worst_kl:.2e})", good.len()),
        good.len() >= 8,
    )
}

fn target_rate() -> Outcome {
    let t = Instant::now();
    let runs = ten_seeds(Objective::TargetRate(0.5))?;
    let ok = |s: &RunSummary| {
        (s.r - 0.5).abs() < 0.02
            && s.kl_p_g < 1e-2
            && (s.mass0 - 0.7).abs() <= 0.05
            && s.purity > 0.9
    };
    let good = runs.iter().filter(|s| ok(s)).count();
    let (rmin, rmax) = runs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(s.r), b.max(s.r)));
    let pmin = runs.iter().map(|s| s.purity).fold(f64::INFINITY, f64::min);
    within(
        120,
        t.elapsed(),
        format!("{good}/10 seeds recover the clusters (R in [{rmin:.4}, {rmax:.4}], min purity {pmin:.4})"),
        good >= 8,
    )
}

fn sandwich() -> Outcome {
    let t = Instant::now();
    let tp = toy();
    let px = tp.px();
    let xs = tp.bin_centers();
    let mut worst = f64::INFINITY;
    let mut r = rng(4);
    for i in 0..1000 {
        let m = if i % 2 == 0 {
            let k = r.gen_range(1..=30);
            let scale = r.gen_range(0.05..8.0);
            random_model(&mut r, 30, k, scale)
        } else {
            let scale = r.gen_range(0.01..3.0);
            realize(&random_params(&mut r, 30, 30, scale), &xs)
        };
        let b = evaluate(&px, &m, None);
        for gap in [b.i_rep - (b.h - b.d), b.r - b.i_rep, b.i_gen - b.e, b.g - b.i_gen] {
            worst = worst.min(gap);
        }
    }
    within(10, t.elapsed(), format!("1000 models, smallest gap {worst:.3e}"), worst >= -1e-9)
}

fn perturb(rng: &mut rand_chacha::ChaCha8Rng, p: &FiniteDist, j: usize) -> FiniteDist {
    if j == 0 {
        return p.clone();
    }
    let noise = random_dist(rng, p.len(), 3.0);
    let t: f64 = rng.gen_range(1e-6..1.0);
    FiniteDist::new(p.probs().iter().zip(noise.probs()).map(|(a, b)| (1.0 - t) * a + t * b).collect()).unwrap()
}

fn optimality() -> Outcome {
    let t = Instant::now();
    let tp = toy();
    let px = tp.px();
    let mut r = rng(5);
    let (mut worst_order, mut worst_ident, mut worst_eq): (f64, f64, f64) = (f64::INFINITY, 0.0, 0.0);
    for _ in 0..100 {
        let k = r.gen_range(2..=30);
        let scale = r.gen_range(0.1..5.0);
        let base = random_model(&mut r, 30, k, scale);
        let induced = base.encoder.push_forward(&px).unwrap();
        let best_dec = posterior(&compose_joint(&px, &base.encoder).unwrap(), Side::Col);
        let opt = Model { marginal: induced.clone(), decoder: best_dec.clone(), ..base.clone() };
        let (r_opt, d_opt) = (rate(&px, &opt), distortion(&px, &opt));
        for j in 0..20 {
            let m2 = perturb(&mut r, &induced, j);
            let rows: Vec<Vec<f64>> = (0..k).map(|z| perturb(&mut r, &best_dec.row_dist(z), j).probs().to_vec()).collect();
            let d2 = CondDist::from_rows(rows).unwrap();
            let with_m = Model { marginal: m2.clone(), ..opt.clone() };
            let with_d = Model { decoder: d2.clone(), ..opt.clone() };
            let r_gap = rate(&px, &with_m) - r_opt;
            let d_gap = distortion(&px, &with_d) - d_opt;
            let r_pred = kl(&induced, &m2).unwrap();
            let d_pred: f64 = (0..k).map(|z| induced.get(z) * kl(&best_dec.row_dist(z), &d2.row_dist(z)).unwrap()).sum();
            worst_order = worst_order.min(r_gap).min(d_gap);
            worst_ident = worst_ident.max((r_gap - r_pred).abs()).max((d_gap - d_pred).abs());
            if j == 0 {
                worst_eq = worst_eq.max(r_gap.abs()).max(d_gap.abs());
            }
        }
    }
    within(
        10,
        t.elapsed(),
        format!("min gap {worst_order:.3e}, gap-vs-divergence error {worst_ident:.1e}, equality error {worst_eq:.1e}"),
        worst_order >= -1e-12 && worst_eq <= 1e-12 && worst_ident <= 1e-12,
    )
}

fn identities() -> Outcome {
    let tp = toy();
    let px = tp.px();
    let mut r = rng(6);
    let (mut elbo_exact, mut worst_us, mut worst_g) = (true, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let k = r.gen_range(1..=30);
        let m = random_model(&mut r, 30, k, 3.0);
        let q = random_dist(&mut r, 30, 3.0);
        let b = evaluate(&px, &m, Some(&q));
        elbo_exact &= b.elbo == -(b.r + b.d);
        worst_us = worst_us.max(((b.u - b.s) - (b.h - b.d)).abs());
        let exact = evaluate(&px, &m, None);
        worst_g = worst_g.max((exact.g - exact.i_gen).abs());
    }
    verdict(
        elbo_exact && worst_us <= 1e-9 && worst_g <= 1e-12,
        format!("elbo exact: {elbo_exact}; |U-S-(H-D)| <= {worst_us:.1e}; |G-I_gen| <= {worst_g:.1e}"),
    )
}

fn gradient_oracle() -> Outcome {
    let tp = toy();
    let (px, xs) = (tp.px(), tp.bin_centers());
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let p = random_params(&mut r, 30, 30, 1.0);
        let beta = r.gen_range(0.1..3.0);
        let sigma = r.gen_range(0.1..2.0);
        worst = worst.max(fd_check(&p, Objective::Beta(beta), FD_STEP, &px, &xs));
        worst = worst.max(fd_check(&p, Objective::TargetRate(sigma), FD_STEP, &px, &xs));
    }
    verdict(worst < FD_REL_TOL, format!("20 checks, worst relative error {worst:.2e}"))
}

fn frontier() -> Outcome {
    let tp = toy();
    let h = tp.data_entropy();
    let spec = SweepSpec {
        family: Objective::Beta(1.0),
        grid: vec![0.1, 0.5, 1.0, 2.0],
        seeds: vec![0, 1, 2],
        base: TrainConfig::default(),
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let cells = run_sweep(&spec, tp).map_err(|e| e.to_string())?;
    let pts = rd_points(&cells);
    let f = pareto_frontier(&pts);
    let violations = f.dominance_violations();
    let excess = f.worst_hull_excess();
    let worst_feasible = pts.iter().map(|p| p.r + p.d - h).fold(f64::INFINITY, f64::min);
    let reference = evaluate(&tp.px(), &optimal_reference(tp, 30), None);
    let diag = (reference.r + reference.d - h).abs();
    verdict(
        pts.len() == 12 && violations == 0 && excess <= 1e-9 && worst_feasible >= -1e-6 && diag <= 1e-9,
        format!(
            "{} points, {} pareto, {} hull; dominance violations {violations}; hull excess {excess:.1e}; \
             min R+D-H {worst_feasible:.2e}; reference off-diagonal {diag:.1e}",
            pts.len(),
            f.pareto.len(),
            f.hull.len()
        ),
    )
}

fn rd_lens(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rd-lens"))
        .args(args)
        .current_dir(dir)
        .env_remove("RD_LENS_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let runs: [(&[&str], &str); 6] = [
        (&["calibrate"], "toyprocess.manifest.json"),
        (&["train", "--objective", "target-rate:0.5", "--steps", "500", "--seed", "3", "--out-dir", "train"], "train/manifest.json"),
        (&["sweep", "--steps", "200", "--grid", "0.5,2", "--seeds", "0,1", "--jobs", "2", "--out-dir", "sweep"], "sweep/manifest.json"),
        (&["eval", "--checkpoint", "train/checkpoint.json", "--out-dir", "eval"], "eval/manifest.json"),
        (&["oracle", "--checkpoint", "train/checkpoint.json", "--out-dir", "oracle"], "oracle/manifest.json"),
        (&["sample", "--n", "200", "--seed", "9"], "samples.manifest.json"),
    ];
    let mut compared = 0;
    for (i, (args, manifest)) in runs.iter().enumerate() {
        rd_lens(d, args)?;
        let original = rd_lens::manifest::RunManifest::read(&d.join(manifest)).map_err(|e| e.to_string())?;
        let redo = format!("replay{i}");
        rd_lens(d, &["replay", manifest, "--out-dir", &redo])?;
        for out in &original.outputs {
            let name = Path::new(&out.path).file_name().unwrap();
            let a = std::fs::read(&out.path).map_err(|e| e.to_string())?;
            let b = std::fs::read(d.join(&redo).join(name)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{} differs after replay", out.path));
            }
            compared += 1;
        }
    }
    Ok(format!("6 commands replayed, {compared} output files byte-identical"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("calibration hits 0.5 nats", calibration),
        ("beta = 1 collapses the rate", elbo_collapse),
        ("target rate 0.5 recovers the clusters", target_rate),
        ("sandwich bounds on 1000 models", sandwich),
        ("optimal marginal and decoder", optimality),
        ("exact identities", identities),
        ("gradient oracle", gradient_oracle),
        ("frontier machinery", frontier),
        ("manifest replay determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("acceptance {} [{tag}] {name}: {detail} [{secs:.1} s]", i + 1);
    }
    println!("acceptance: {}/9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
