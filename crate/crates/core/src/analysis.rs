//! Derived distributions in data and latent space, and latent-to-class matching.

use crate::fmt::num;
use crate::models::Model;
use crate::objectives::generative_marginal;
use crate::prob::{kl_or_inf, CondDist, FiniteDist};
use crate::toygen::ToyProcess;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Class assigned to each latent symbol.
    pub assignment: Vec<usize>,
    pub mass_per_class: [f64; 2],
    pub purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Report {
    /// `Σ_z m(z) d(x|z)`
    pub g_x: FiniteDist,
    /// `Σ_x' p*(x') Σ_z e(z|x') d(x|z)`
    pub d_x: FiniteDist,
    /// `Σ_x p*(x) e(z|x)`
    pub e_z: FiniteDist,
    /// `Σ_x p*(x, c) e(z|x)` for each true class `c`.
    pub e_z_class: [Vec<f64>; 2],
    /// `p(x'|x) = Σ_z e(z|x) d(x'|z)`
    pub xfer: CondDist,
    pub kl_p_g: f64,
    pub cluster: ClusterReport,
}

/// Sum that depends only on the multiset of terms, not their order.
fn order_free_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Assigns each latent to the class with more mass there (ties to class 0).
pub fn cluster_match(e_z_class: &[Vec<f64>; 2]) -> ClusterReport {
    let [c0, c1] = e_z_class;
    assert_eq!(c0.len(), c1.len(), "class profiles must share the latent alphabet");
    let assignment: Vec<usize> = c0.iter().zip(c1).map(|(&a, &b)| usize::from(b > a)).collect();
    let mass_of = |class: usize| {
        order_free_sum(
            c0.iter()
                .zip(c1)
                .zip(&assignment)
                .filter(|(_, &c)| c == class)
                .map(|((a, b), _)| a + b)
                .collect(),
        )
    };
    let mass = [mass_of(0), mass_of(1)];
    let total = order_free_sum(c0.iter().zip(c1).map(|(a, b)| a + b).collect());
    let matched = order_free_sum(c0.iter().zip(c1).map(|(a, b)| a.max(*b)).collect());
    ClusterReport {
        assignment,
        mass_per_class: [mass[0] / total, mass[1] / total],
        purity: matched / total,
    }
}

pub fn fig2(tp: &ToyProcess, m: &Model) -> Fig2Report {
    let px = tp.px();
    let (n, k) = (m.bins(), m.latents());
    assert_eq!(n, tp.bin_count(), "model and process disagree on the data alphabet");

    let mut e_z = vec![0.0; k];
    let mut e_z_class = [vec![0.0; k], vec![0.0; k]];
    for x in 0..n {
        let row = m.encoder.row(x);
        for z in 0..k {
            e_z[z] += px.get(x) * row[z];
            for (c, profile) in e_z_class.iter_mut().enumerate() {
                profile[z] += tp.joint.get(x, c) * row[z];
            }
        }
    }
    let mut d_x = vec![0.0; n];
    for z in 0..k {
        for (x, d) in d_x.iter_mut().enumerate() {
            *d += e_z[z] * m.decoder.get(z, x);
        }
    }
    let xfer = m.encoder.compose(&m.decoder).expect("encoder and decoder share the latent alphabet");
    let g_x = generative_marginal(m);
    let kl_p_g = kl_or_inf(&px, &g_x);
    let cluster = cluster_match(&e_z_class);
    Fig2Report {
        g_x,
        d_x: FiniteDist::new(d_x).expect("mixture of decoder rows"),
        e_z: FiniteDist::new(e_z).expect("mixture of encoder rows"),
        e_z_class,
        xfer,
        kl_p_g,
        cluster,
    }
}

/// CSV with a leading row-index column; `row_label` and `col_label` name the axes.
pub fn matrix_csv(row_label: &str, col_label: &str, m: &CondDist) -> String {
    let mut out = String::from(row_label);
    for j in 0..m.n_outputs() {
        out.push_str(&format!(",{col_label}{j}"));
    }
    out.push('\n');
    for i in 0..m.n_inputs() {
        out.push_str(&i.to_string());
        for &v in m.row(i) {
            out.push(',');
            out.push_str(&num(v));
        }
        out.push('\n');
    }
    out
}

impl Fig2Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-latent summary: total mass, class profiles and assignment.
    pub fn latent_csv(&self) -> String {
        let mut out = String::from("z,e_z,e_z_class0,e_z_class1,class\n");
        for z in 0..self.e_z.len() {
            out.push_str(&format!(
                "{z},{},{},{},{}\n",
                num(self.e_z.get(z)),
                num(self.e_z_class[0][z]),
                num(self.e_z_class[1][z]),
                self.cluster.assignment[z]
            ));
        }
        out
    }

    /// Per-bin summary of data-space distributions.
    pub fn data_csv(&self, px: &FiniteDist) -> String {
        let mut out = String::from("x,p_x,g_x,d_x\n");
        for x in 0..px.len() {
            out.push_str(&format!(
                "{x},{},{},{}\n",
                num(px.get(x)),
                num(self.g_x.get(x)),
                num(self.d_x.get(x))
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, optimal_reference, realize};
    use crate::toygen::{calibrate_noise, Geometry};

    fn toy() -> ToyProcess {
        calibrate_noise(0.5, &Geometry::default()).unwrap().0
    }

    #[test]
    fn separated_profiles_are_pure() {
        let rep = cluster_match(&[vec![0.4, 0.3, 0.0], vec![0.0, 0.0, 0.3]]);
        assert_eq!(rep.assignment, vec![0, 0, 1]);
        assert!((rep.purity - 1.0).abs() < 1e-15);
        assert!((rep.mass_per_class[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn identical_profiles_give_prior_purity() {
        let rep = cluster_match(&[vec![0.35, 0.35], vec![0.15, 0.15]]);
        assert!((rep.purity - 0.7).abs() < 1e-15);
        assert_eq!(rep.mass_per_class, [1.0, 0.0]);
    }

    #[test]
    fn ties_go_to_class_zero() {
        let rep = cluster_match(&[vec![0.5], vec![0.5]]);
        assert_eq!(rep.assignment, vec![0]);
    }

    #[test]
    fn optimal_reference_recovers_clusters() {
        let tp = toy();
        let rep = fig2(&tp, &optimal_reference(&tp, 30));
        assert!(rep.kl_p_g.abs() < 1e-9);
        assert!((rep.cluster.mass_per_class[0] - 0.7).abs() < 1e-12);
        assert!((rep.cluster.mass_per_class[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn internal_consistency() {
        let tp = toy();
        let px = tp.px();
        for seed in 0..5 {
            let m = realize(&init_params(seed, 1.0, &tp.bin_centers(), 30, 0.0), &tp.bin_centers());
            let rep = fig2(&tp, &m);
            let s0: f64 = rep.e_z_class[0].iter().sum();
            let s1: f64 = rep.e_z_class[1].iter().sum();
            assert!((s0 - 0.7).abs() < 1e-12 && (s1 - 0.3).abs() < 1e-12);
            for z in 0..30 {
                assert!((rep.e_z_class[0][z] + rep.e_z_class[1][z] - rep.e_z.get(z)).abs() < 1e-12);
            }
            for x2 in 0..30 {
                let via: f64 = (0..30).map(|x| px.get(x) * rep.xfer.get(x, x2)).sum();
                assert!((via - rep.d_x.get(x2)).abs() < 1e-12);
            }
            let masses: f64 = rep.cluster.mass_per_class.iter().sum();
            assert!((masses - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_shapes() {
        let tp = toy();
        let rep = fig2(&tp, &optimal_reference(&tp, 30));
        let csv = matrix_csv("x", "x", &rep.xfer);
        assert_eq!(csv.lines().count(), 31);
        assert!(csv.starts_with("x,x0,x1,"));
        assert_eq!(rep.latent_csv().lines().count(), 31);
        assert_eq!(rep.data_csv(&tp.px()).lines().count(), 31);
    }
}
