//! Simulation engine: named benchmark designs, reproducible data generation
//! and batch study runners with robust summary statistics.
//!
//! Replicates are generated from counter-based RNG streams so that results
//! are identical regardless of how replicates are scheduled across threads.

pub mod quad;
pub mod study;

use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::model::{BlockStructure, CovarianceTemplate, Dataset, GroupingFactor, ReTerm};
use crate::problem::Problem;
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

/// Autocorrelation of adjacent design-matrix columns.
pub const DESIGN_RHO: f64 = 0.2;

/// A fully specified benchmark scenario. `p` counts all fixed-effects
/// columns including the leading intercept column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimDesign {
    pub name: String,
    pub family: FamilySpec,
    pub n_groups: usize,
    pub group_size: usize,
    pub p: usize,
    pub beta0: Vec<f64>,
    /// Columns that carry a random effect (always starting with the intercept).
    pub re_columns: Vec<usize>,
    pub structure: BlockStructure,
    pub theta0: Vec<f64>,
}

fn signal_beta(p: usize, intercept: f64, magnitude: f64) -> Vec<f64> {
    let mut b = vec![0.0; p];
    b[0] = intercept;
    for j in 1..p.min(5) {
        b[j] = if j % 2 == 1 { magnitude } else { -magnitude };
    }
    b
}

impl SimDesign {
    fn logistic(name: &str, n_groups: usize, p: usize) -> Self {
        SimDesign {
            name: name.to_string(),
            family: FamilySpec::bernoulli(),
            n_groups,
            group_size: 10,
            p,
            beta0: signal_beta(p, 0.1, 1.0),
            re_columns: vec![0, 1],
            structure: BlockStructure::Diagonal,
            theta0: vec![1.0, 1.0],
        }
    }

    fn poisson(name: &str, n_groups: usize, p: usize) -> Self {
        SimDesign {
            name: name.to_string(),
            family: FamilySpec::poisson(),
            n_groups,
            group_size: 10,
            p,
            beta0: signal_beta(p, 0.05, 0.5),
            re_columns: vec![0],
            structure: BlockStructure::ScalarIdentity,
            theta0: vec![1.0],
        }
    }

    /// Logistic, 40 groups of 10, 10 columns, independent random intercept
    /// and slope with unit variances.
    pub fn logistic_l1() -> Self {
        Self::logistic("logistic_l1", 40, 10)
    }

    /// As `logistic_l1` with 50 columns.
    pub fn logistic_l2() -> Self {
        Self::logistic("logistic_l2", 40, 50)
    }

    /// High-dimensional logistic: 40 groups of 10, 500 columns.
    pub fn logistic_h1() -> Self {
        Self::logistic("logistic_h1", 40, 500)
    }

    /// High-dimensional logistic: 50 groups of 10, 1500 columns.
    pub fn logistic_h2() -> Self {
        Self::logistic("logistic_h2", 50, 1500)
    }

    /// As `logistic_h1` but with correlated intercept and slope effects
    /// (unit variances, correlation 0.5).
    pub fn logistic_h1_corr() -> Self {
        let mut d = Self::logistic("logistic_h1_corr", 40, 500);
        d.structure = BlockStructure::UnstructuredLower;
        d.theta0 = vec![1.0, 0.5, 0.75f64.sqrt()];
        d
    }

    /// Poisson random-intercept model, 20 groups of 10, 10 columns.
    pub fn poisson_l1() -> Self {
        Self::poisson("poisson_l1", 20, 10)
    }

    /// As `poisson_l1` with 50 columns.
    pub fn poisson_l2() -> Self {
        Self::poisson("poisson_l2", 20, 50)
    }

    /// High-dimensional poisson: 40 groups of 10, 500 columns.
    pub fn poisson_h1() -> Self {
        Self::poisson("poisson_h1", 40, 500)
    }

    /// High-dimensional poisson: 40 groups of 10, 1000 columns.
    pub fn poisson_h2() -> Self {
        Self::poisson("poisson_h2", 40, 1000)
    }

    /// High-dimensional poisson with a large intercept and a small
    /// random-intercept variance: 30 groups of 10, 500 columns.
    pub fn poisson_h3() -> Self {
        let mut d = Self::poisson("poisson_h3", 30, 500);
        d.beta0 = signal_beta(500, 2.0, 0.5);
        d.theta0 = vec![0.5];
        d
    }

    /// Logistic random-intercept model used to track out-of-sample fit as
    /// noise columns are added: 40 groups of 10, signal (0, 1, -1, 1, -1).
    pub fn growing_p(p: usize) -> Self {
        assert!(p >= 5, "the growing-p design needs at least 5 columns");
        SimDesign {
            name: format!("growing_p_{p}"),
            family: FamilySpec::bernoulli(),
            n_groups: 40,
            group_size: 10,
            p,
            beta0: signal_beta(p, 0.0, 1.0),
            re_columns: vec![0],
            structure: BlockStructure::ScalarIdentity,
            theta0: vec![1.0],
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "logistic_l1" => Self::logistic_l1(),
            "logistic_l2" => Self::logistic_l2(),
            "logistic_h1" => Self::logistic_h1(),
            "logistic_h2" => Self::logistic_h2(),
            "logistic_h1_corr" => Self::logistic_h1_corr(),
            "poisson_l1" => Self::poisson_l1(),
            "poisson_l2" => Self::poisson_l2(),
            "poisson_h1" => Self::poisson_h1(),
            "poisson_h2" => Self::poisson_h2(),
            "poisson_h3" => Self::poisson_h3(),
            other => {
                if let Some(p) = other.strip_prefix("growing_p_") {
                    let p: usize = p
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad design name `{other}`")))?;
                    Self::growing_p(p)
                } else {
                    return Err(Error::invalid(format!("unknown design `{other}`")));
                }
            }
        })
    }

    pub fn known_names() -> &'static [&'static str] {
        &[
            "logistic_l1",
            "logistic_l2",
            "logistic_h1",
            "logistic_h2",
            "logistic_h1_corr",
            "poisson_l1",
            "poisson_l2",
            "poisson_h1",
            "poisson_h2",
            "poisson_h3",
        ]
    }

    /// Shrink the scenario to desk scale by capping the column count. The
    /// signal coefficients and model structure are unchanged.
    pub fn desk(mut self) -> Self {
        if self.p > 150 {
            self.p = 150;
            self.beta0.truncate(150);
        }
        self
    }

    pub fn n(&self) -> usize {
        self.n_groups * self.group_size
    }

    /// Indices of the truly nonzero coefficients.
    pub fn true_support(&self) -> Vec<usize> {
        self.beta0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// Generate one replicate. The RNG is keyed by `(seed, stream)` so that
    /// any replicate can be produced independently of all others.
    pub fn instantiate(&self, seed: u64, stream: u64) -> Result<(Problem, SimTruth)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let n = self.n();
        let p = self.p;

        // intercept plus an AR(1) band of standardized covariates
        let mut x = Array2::from_elem((n, p), 1.0);
        for i in 0..n {
            let mut prev = 0.0;
            for j in 1..p {
                let e: f64 = rng.sample(StandardNormal);
                let v = if j == 1 {
                    e
                } else {
                    DESIGN_RHO * prev + (1.0 - DESIGN_RHO * DESIGN_RHO).sqrt() * e
                };
                x[[i, j]] = v;
                prev = v;
            }
        }

        let levels: Vec<usize> = (0..n).map(|i| i / self.group_size).collect();
        let k = self.re_columns.len();
        let u = Array1::from_iter(
            (0..self.n_groups * k).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );

        let dataset = Dataset::new(
            Array1::zeros(n),
            x,
            (0..p)
                .map(|j| {
                    if j == 0 {
                        "(Intercept)".to_string()
                    } else {
                        format!("x{j}")
                    }
                })
                .collect(),
            vec![GroupingFactor::from_indices("group", &levels)],
            vec![ReTerm {
                factor: 0,
                columns: self.re_columns.clone(),
            }],
        )?;
        let template = CovarianceTemplate::new(&dataset, &[self.structure])?;
        let mut problem = Problem::new(dataset, template, self.family)?;

        let beta0 = Array1::from_vec(self.beta0.clone());
        let lambdas = problem.template.lambda_blocks(&self.theta0)?;
        let eta = problem.dataset.x.dot(&beta0) + problem.z.m_mul_u(&lambdas, &u);
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let mu = self.family.link_inv(eta[i]);
            y[i] = match self.family.kind {
                crate::family::FamilyKind::BernoulliLogit => {
                    if rng.random::<f64>() < mu {
                        1.0
                    } else {
                        0.0
                    }
                }
                crate::family::FamilyKind::PoissonLog => {
                    let d = Poisson::new(mu)
                        .map_err(|e| Error::numerical(format!("poisson mean {mu}: {e}")))?;
                    rng.sample(d)
                }
                crate::family::FamilyKind::GaussianIdentity => {
                    mu + self.family.phi_fixed.sqrt() * rng.sample::<f64, _>(StandardNormal)
                }
            };
        }
        problem.dataset.y = y;

        Ok((
            problem,
            SimTruth {
                beta: beta0,
                theta: self.theta0.clone(),
                u,
            },
        ))
    }
}

/// The latent truth behind one simulated replicate.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub beta: Array1<f64>,
    pub theta: Vec<f64>,
    pub u: Array1<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn design_dimensions() {
        let d = SimDesign::logistic_l1();
        assert_eq!(d.n(), 400);
        assert_eq!(d.p, 10);
        assert_eq!(d.beta0[..6], [0.1, 1.0, -1.0, 1.0, -1.0, 0.0]);
        assert_eq!(d.true_support(), vec![0, 1, 2, 3, 4]);

        let d = SimDesign::poisson_l1();
        assert_eq!(d.n(), 200);
        assert_eq!(d.beta0[..5], [0.05, 0.5, -0.5, 0.5, -0.5]);

        let d = SimDesign::poisson_h3();
        assert_eq!(d.n(), 300);
        assert_eq!(d.beta0[0], 2.0);
        assert_eq!(d.theta0, vec![0.5]);

        let d = SimDesign::logistic_h2().desk();
        assert_eq!(d.p, 150);
        assert_eq!(d.beta0.len(), 150);

        let d = SimDesign::growing_p(65);
        assert_eq!(d.true_support(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn from_name_roundtrip() {
        for name in SimDesign::known_names() {
            let d = SimDesign::from_name(name).unwrap();
            assert_eq!(&d.name, name);
        }
        assert_eq!(SimDesign::from_name("growing_p_25").unwrap().p, 25);
        assert!(SimDesign::from_name("nope").is_err());
    }

    #[test]
    fn replicates_are_reproducible_and_distinct() {
        let d = SimDesign::logistic_l1();
        let (a, _) = d.instantiate(7, 0).unwrap();
        let (b, _) = d.instantiate(7, 0).unwrap();
        let (c, _) = d.instantiate(7, 1).unwrap();
        assert_eq!(a.dataset.y, b.dataset.y);
        assert_eq!(a.dataset.x, b.dataset.x);
        assert_ne!(a.dataset.y, c.dataset.y);
        assert_ne!(a.dataset.x, c.dataset.x);
    }

    #[test]
    fn design_matrix_has_target_covariance() {
        // pool many replicates and check the AR(1) column covariance
        let d = SimDesign::growing_p(6);
        let mut n_total = 0.0;
        let (mut s11, mut s12, mut s13) = (0.0, 0.0, 0.0);
        for rep in 0..40 {
            let (p, _) = d.instantiate(11, rep).unwrap();
            for i in 0..p.n() {
                let a = p.dataset.x[[i, 1]];
                let b = p.dataset.x[[i, 2]];
                let c = p.dataset.x[[i, 3]];
                s11 += a * a;
                s12 += a * b;
                s13 += a * c;
                n_total += 1.0;
            }
        }
        assert_abs_diff_eq!(s11 / n_total, 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(s12 / n_total, DESIGN_RHO, epsilon = 0.02);
        assert_abs_diff_eq!(s13 / n_total, DESIGN_RHO * DESIGN_RHO, epsilon = 0.02);
    }

    #[test]
    fn responses_live_in_the_family_domain() {
        for d in [SimDesign::logistic_l1(), SimDesign::poisson_l1()] {
            let (p, _) = d.instantiate(3, 5).unwrap();
            for &y in p.dataset.y.iter() {
                p.family.check_y(y).unwrap();
            }
            // not degenerate
            let mean = p.dataset.y.sum() / p.n() as f64;
            assert!(mean > 0.0);
        }
    }

    #[test]
    fn marginal_group_correlation_present_in_logistic_data() {
        // with a unit-variance random intercept, responses within a group
        // co-vary; across many replicates the within-group mean spread is
        // clearly larger than binomial sampling alone allows
        let d = SimDesign::growing_p(5);
        let mut between = 0.0;
        let mut reps = 0.0;
        for rep in 0..30 {
            let (p, _) = d.instantiate(19, rep).unwrap();
            let mut means = vec![0.0; d.n_groups];
            for i in 0..p.n() {
                means[i / d.group_size] += p.dataset.y[i] / d.group_size as f64;
            }
            let grand = means.iter().sum::<f64>() / means.len() as f64;
            between += means
                .iter()
                .map(|m| (m - grand) * (m - grand))
                .sum::<f64>()
                / (means.len() - 1) as f64;
            reps += 1.0;
        }
        // pure binomial noise would put the between-group variance of the
        // means near p(1-p)/10 <= 0.025
        assert!(between / reps > 0.04, "between-group variance too small");
    }
}
