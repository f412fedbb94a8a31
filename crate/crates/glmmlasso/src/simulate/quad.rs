//! Adaptive Gauss-Hermite quadrature for the exact marginal log-likelihood
//! of single-factor models with per-group random-effect dimension at most
//! two, plus a derivative-free simplex minimizer. Together they form an
//! independent reference implementation used to validate the Laplace
//! machinery.

use crate::error::{Error, Result};
use crate::model::ParamState;
use crate::problem::Problem;
use ndarray::{Array1, Array2};

/// Nodes and weights of the n-point Gauss-Hermite rule for the weight
/// function exp(-x^2). Roots are located by sign scanning and polished by
/// Newton steps on the orthonormal Hermite recurrence.
pub fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!((1..=120).contains(&n));
    // orthonormal Hermite value and derivative at x
    let eval = |x: f64| -> (f64, f64) {
        let mut p_prev = 0.0f64;
        let mut p = std::f64::consts::PI.powf(-0.25);
        for k in 0..n {
            let kf = k as f64;
            let p_next = x * (2.0 / (kf + 1.0)).sqrt() * p - (kf / (kf + 1.0)).sqrt() * p_prev;
            p_prev = p;
            p = p_next;
        }
        let dp = (2.0 * n as f64).sqrt() * p_prev;
        (p, dp)
    };

    let bound = (2.0 * n as f64 + 1.0).sqrt() + 2.0;
    let step = 1e-3;
    let mut roots = Vec::with_capacity(n);
    let mut x = -bound;
    let mut f_prev = eval(x).0;
    while x < bound {
        let x_next = x + step;
        let f_next = eval(x_next).0;
        if f_prev == 0.0 {
            roots.push(x);
        } else if f_prev.signum() != f_next.signum() {
            // Newton polish from the midpoint
            let mut r = x + 0.5 * step;
            for _ in 0..60 {
                let (p, dp) = eval(r);
                let delta = p / dp;
                r -= delta;
                if delta.abs() < 1e-15 {
                    break;
                }
            }
            roots.push(r);
        }
        x = x_next;
        f_prev = f_next;
    }
    assert_eq!(roots.len(), n, "expected {n} Hermite roots, found {}", roots.len());
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Gauss weight at a root: 1 / sum_{k<n} p_k(x)^2
    let weights: Vec<f64> = roots
        .iter()
        .map(|&x| {
            let mut p_prev = 0.0f64;
            let mut p = std::f64::consts::PI.powf(-0.25);
            let mut s = p * p;
            for k in 0..(n - 1) {
                let kf = k as f64;
                let p_next =
                    x * (2.0 / (kf + 1.0)).sqrt() * p - (kf / (kf + 1.0)).sqrt() * p_prev;
                p_prev = p;
                p = p_next;
                s += p * p;
            }
            1.0 / s
        })
        .collect();
    (roots, weights)
}

/// Exact marginal log-likelihood by adaptive Gauss-Hermite quadrature.
/// Requires a single grouping factor and at most two random-effect columns;
/// the quadrature grid is recentered at each group's conditional mode and
/// rescaled by its curvature.
pub fn gh_loglik(problem: &Problem, psi: &ParamState, n_nodes: usize) -> Result<f64> {
    if problem.z.blocks.len() != 1 {
        return Err(Error::Unsupported(
            "quadrature needs a single grouping factor".into(),
        ));
    }
    let block = &problem.z.blocks[0];
    let k = block.n_vars;
    if k > 2 {
        return Err(Error::Unsupported(
            "quadrature supports at most two random effects per group".into(),
        ));
    }
    let lambdas = problem.template.lambda_blocks(&psi.theta)?;
    let lam = &lambdas[0];
    let xb = problem.dataset.x.dot(&psi.beta);
    let (nodes, weights) = hermite_rule(n_nodes);

    // rows of each group
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); block.n_levels];
    for i in 0..problem.n() {
        rows[block.levels[i]].push(i);
    }

    let mut total = 0.0;
    for group in &rows {
        total += group_log_integral(problem, psi, group, block, lam, &xb, &nodes, &weights, k)?;
    }
    Ok(total)
}

/// log of the conditional likelihood of one group at latent value u, plus
/// the standard normal log-density of u.
fn group_log_density(
    problem: &Problem,
    psi: &ParamState,
    group: &[usize],
    block: &crate::model::ZBlock,
    lam: &Array2<f64>,
    xb: &Array1<f64>,
    u: &[f64],
    k: usize,
) -> f64 {
    let mut h = 0.0;
    for &i in group {
        let mut eta = xb[i];
        for c in 0..k {
            let mut m = 0.0;
            for r in c..k {
                m += block.values[[i, r]] * lam[[r, c]];
            }
            eta += m * u[c];
        }
        let mu = problem.family.link_inv(eta);
        h -= 0.5
            * problem
                .family
                .neg2_loglik_term_unchecked(problem.dataset.y[i], mu, psi.phi);
    }
    let mut un2 = 0.0;
    for &v in u.iter().take(k) {
        un2 += v * v;
    }
    h - 0.5 * un2 - 0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[allow(clippy::too_many_arguments)]
fn group_log_integral(
    problem: &Problem,
    psi: &ParamState,
    group: &[usize],
    block: &crate::model::ZBlock,
    lam: &Array2<f64>,
    xb: &Array1<f64>,
    nodes: &[f64],
    weights: &[f64],
    k: usize,
) -> Result<f64> {
    // conditional mode of u by damped Newton on -log density
    let mut u = [0.0f64; 2];
    let mut h_mat = [[0.0f64; 2]; 2];
    for _ in 0..100 {
        let (grad, hess) = group_grad_hess(problem, psi, group, block, lam, xb, &u, k);
        h_mat = hess;
        let step = solve_small(&hess, &grad, k);
        let mut t = 1.0;
        let f0 = -group_log_density(problem, psi, group, block, lam, xb, &u, k);
        let mut moved = false;
        for _ in 0..30 {
            let mut u_new = u;
            for c in 0..k {
                u_new[c] = u[c] + t * step[c];
            }
            let f1 = -group_log_density(problem, psi, group, block, lam, xb, &u_new, k);
            if f1 <= f0 {
                u = u_new;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        let gnorm = (0..k).map(|c| grad[c].abs()).fold(0.0f64, f64::max);
        if gnorm < 1e-10 || !moved {
            break;
        }
    }

    // curvature factor: H = C C^T
    let c_fac = chol_small(&h_mat, k)?;
    let log_det_h = match k {
        1 => 2.0 * c_fac[0][0].ln(),
        _ => 2.0 * (c_fac[0][0].ln() + c_fac[1][1].ln()),
    };

    // u = u_mode + sqrt(2) C^-T t, summed over the tensor grid in log space
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut log_terms: Vec<f64> = Vec::new();
    if k == 1 {
        for (j, &t) in nodes.iter().enumerate() {
            let du = sqrt2 * t / c_fac[0][0];
            let uj = [u[0] + du, 0.0];
            let h = group_log_density(problem, psi, group, block, lam, xb, &uj, k);
            log_terms.push(weights[j].ln() + t * t + h);
        }
    } else {
        // back-substitute C^T d = sqrt(2) t for each tensor node
        for (j1, &t1) in nodes.iter().enumerate() {
            for (j2, &t2) in nodes.iter().enumerate() {
                let d1 = sqrt2 * t1;
                let d2 = sqrt2 * t2;
                // C^T is upper triangular: [c00 c10; 0 c11]
                let du2 = d2 / c_fac[1][1];
                let du1 = (d1 - c_fac[1][0] * du2) / c_fac[0][0];
                let uj = [u[0] + du1, u[1] + du2];
                let h = group_log_density(problem, psi, group, block, lam, xb, &uj, k);
                log_terms.push(weights[j1].ln() + weights[j2].ln() + t1 * t1 + t2 * t2 + h);
            }
        }
    }
    let m = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::numerical("quadrature underflow in group integral"));
    }
    let s: f64 = log_terms.iter().map(|&v| (v - m).exp()).sum();
    Ok(m + s.ln() + 0.5 * k as f64 * 2f64.ln() - 0.5 * log_det_h)
}

/// Gradient and Hessian of -log density in u.
fn group_grad_hess(
    problem: &Problem,
    psi: &ParamState,
    group: &[usize],
    block: &crate::model::ZBlock,
    lam: &Array2<f64>,
    xb: &Array1<f64>,
    u: &[f64; 2],
    k: usize,
) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut grad = [0.0f64; 2];
    let mut hess = [[0.0f64; 2]; 2];
    for c in 0..k {
        grad[c] = u[c];
        hess[c][c] = 1.0;
    }
    for &i in group {
        let mut m = [0.0f64; 2];
        let mut eta = xb[i];
        for c in 0..k {
            let mut s = 0.0;
            for r in c..k {
                s += block.values[[i, r]] * lam[[r, c]];
            }
            m[c] = s;
            eta += s * u[c];
        }
        let mu = problem.family.link_inv(eta);
        let v = problem.family.variance(mu).unwrap_or(1e-10).max(1e-300);
        let gp = problem.family.link_deriv(mu).unwrap_or(f64::INFINITY);
        let b = 1.0 / (psi.phi * v * gp);
        let w = 1.0 / (psi.phi * v * gp * gp);
        let resid = b * (problem.dataset.y[i] - mu);
        for c in 0..k {
            grad[c] -= m[c] * resid;
            for c2 in 0..k {
                hess[c][c2] += m[c] * m[c2] * w;
            }
        }
    }
    (grad, hess)
}

fn solve_small(h: &[[f64; 2]; 2], g: &[f64; 2], k: usize) -> [f64; 2] {
    if k == 1 {
        return [-g[0] / h[0][0], 0.0];
    }
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    [
        -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
        -(h[0][0] * g[1] - h[1][0] * g[0]) / det,
    ]
}

fn chol_small(h: &[[f64; 2]; 2], k: usize) -> Result<[[f64; 2]; 2]> {
    let mut c = [[0.0f64; 2]; 2];
    if h[0][0] <= 0.0 {
        return Err(Error::numerical("non positive curvature in quadrature"));
    }
    c[0][0] = h[0][0].sqrt();
    if k == 2 {
        c[1][0] = h[1][0] / c[0][0];
        let d = h[1][1] - c[1][0] * c[1][0];
        if d <= 0.0 {
            return Err(Error::numerical("non positive curvature in quadrature"));
        }
        c[1][1] = d.sqrt();
    }
    Ok(c)
}

/// Derivative-free Nelder-Mead simplex minimization. Returns the best point
/// and its value once the simplex value spread falls below `tol` or the
/// evaluation budget runs out.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    initial_step: f64,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let fx0 = f(x0);
    simplex.push((x0.to_vec(), fx0));
    for j in 0..d {
        let mut x = x0.to_vec();
        x[j] += if x[j].abs() > 1e-8 {
            initial_step * x[j].abs()
        } else {
            initial_step
        };
        let fx = f(&x);
        simplex.push((x, fx));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if (simplex[d].1 - simplex[0].1).abs() <= tol * (1.0 + simplex[0].1.abs()) {
            break;
        }
        // centroid of all but the worst
        let mut centroid = vec![0.0; d];
        for (x, _) in simplex.iter().take(d) {
            for j in 0..d {
                centroid[j] += x[j] / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let reflect: Vec<f64> = (0..d)
            .map(|j| centroid[j] + alpha * (centroid[j] - worst.0[j]))
            .collect();
        let f_r = f(&reflect);
        if f_r < simplex[0].1 {
            let expand: Vec<f64> = (0..d)
                .map(|j| centroid[j] + gamma * (reflect[j] - centroid[j]))
                .collect();
            let f_e = f(&expand);
            simplex[d] = if f_e < f_r { (expand, f_e) } else { (reflect, f_r) };
        } else if f_r < simplex[d - 1].1 {
            simplex[d] = (reflect, f_r);
        } else {
            let contract: Vec<f64> = (0..d)
                .map(|j| centroid[j] + rho * (worst.0[j] - centroid[j]))
                .collect();
            let f_c = f(&contract);
            if f_c < worst.1 {
                simplex[d] = (contract, f_c);
            } else {
                // shrink toward the best point
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    for j in 0..d {
                        item.0[j] = best[j] + sigma * (item.0[j] - best[j]);
                    }
                    item.1 = f(&item.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let (x, fx) = simplex.remove(0);
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::FamilySpec;
    use crate::model::{BlockStructure, CovarianceTemplate, Dataset, GroupingFactor, ReTerm};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hermite_rule_moments() {
        for n in [5, 20, 40] {
            let (x, w) = hermite_rule(n);
            assert_eq!(x.len(), n);
            // integral of exp(-x^2) is sqrt(pi)
            let total: f64 = w.iter().sum();
            assert_abs_diff_eq!(total, std::f64::consts::PI.sqrt(), epsilon = 1e-12);
            // second moment: sqrt(pi)/2
            let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
            assert_abs_diff_eq!(m2, std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-10);
            // symmetry
            for i in 0..n / 2 {
                assert_abs_diff_eq!(x[i], -x[n - 1 - i], epsilon = 1e-10);
            }
        }
    }

    fn intercept_problem(
        y: Array1<f64>,
        x: Array2<f64>,
        levels: &[usize],
        family: FamilySpec,
    ) -> Problem {
        let p = x.ncols();
        let ds = Dataset::new(
            y,
            x,
            (0..p).map(|j| format!("x{j}")).collect(),
            vec![GroupingFactor::from_indices("g", levels)],
            vec![ReTerm {
                factor: 0,
                columns: vec![0],
            }],
        )
        .unwrap();
        let t = CovarianceTemplate::new(&ds, &[BlockStructure::ScalarIdentity]).unwrap();
        Problem::new(ds, t, family).unwrap()
    }

    #[test]
    fn gaussian_random_intercept_matches_closed_form() {
        // marginal: y_r ~ N(X_r beta, phi I + theta^2 1 1^T) per group
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut x = Array2::from_elem((n, 2), 1.0);
        for i in 0..n {
            x[[i, 1]] = rng.random::<f64>() * 2.0 - 1.0;
        }
        let levels: Vec<usize> = (0..n).map(|i| i / 4).collect();
        let y = Array1::from_iter((0..n).map(|_| rng.random::<f64>() * 2.0));
        let problem = intercept_problem(y.clone(), x.clone(), &levels, FamilySpec::gaussian_fixed_phi(0.8));
        let mut psi = problem.zero_state();
        psi.beta = ndarray::array![0.3, 0.5];
        psi.theta = vec![0.9];
        psi.phi = 0.8;
        let gh = gh_loglik(&problem, &psi, 40).unwrap();

        // closed form via the matrix determinant lemma per group
        let theta2 = 0.9f64 * 0.9;
        let phi = 0.8f64;
        let mut ll = 0.0;
        for g in 0..3 {
            let idx: Vec<usize> = (0..n).filter(|&i| levels[i] == g).collect();
            let m = idx.len() as f64;
            let resid: Vec<f64> = idx
                .iter()
                .map(|&i| y[i] - 0.3 - 0.5 * x[[i, 1]])
                .collect();
            let s: f64 = resid.iter().sum();
            let rss: f64 = resid.iter().map(|r| r * r).sum();
            let det = phi.powf(m) * (1.0 + m * theta2 / phi);
            // (phi I + t^2 J)^-1 = phi^-1 I - t^2/(phi (phi + m t^2)) J
            let quad = rss / phi - theta2 * s * s / (phi * (phi + m * theta2));
            ll += -0.5 * (m * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad);
        }
        assert_abs_diff_eq!(gh, ll, epsilon = 1e-8);
    }

    #[test]
    fn theta_zero_reduces_to_glm_loglik() {
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut x = Array2::from_elem((n, 2), 1.0);
        for i in 0..n {
            x[[i, 1]] = rng.random::<f64>() - 0.5;
        }
        let levels: Vec<usize> = (0..n).map(|i| i / 5).collect();
        let y = Array1::from_iter((0..n).map(|_| if rng.random::<f64>() > 0.5 { 1.0 } else { 0.0 }));
        let problem = intercept_problem(y.clone(), x.clone(), &levels, FamilySpec::bernoulli());
        let mut psi = problem.zero_state();
        psi.beta = ndarray::array![0.2, 0.7];
        psi.theta = vec![0.0];
        let gh = gh_loglik(&problem, &psi, 40).unwrap();
        let mut glm = 0.0;
        for i in 0..n {
            let eta = 0.2 + 0.7 * x[[i, 1]];
            let mu = 1.0 / (1.0 + (-eta).exp() as f64);
            glm += y[i] * mu.ln() + (1.0 - y[i]) * (1.0 - mu).ln();
        }
        assert_abs_diff_eq!(gh, glm, epsilon = 1e-10);
    }

    #[test]
    fn node_doubling_agrees_for_bernoulli_intercept_model() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut x = Array2::from_elem((n, 2), 1.0);
        for i in 0..n {
            x[[i, 1]] = rng.random::<f64>() * 2.0 - 1.0;
        }
        let levels: Vec<usize> = (0..n).map(|i| i / 5).collect();
        let y = Array1::from_iter((0..n).map(|_| if rng.random::<f64>() > 0.4 { 1.0 } else { 0.0 }));
        let problem = intercept_problem(y, x, &levels, FamilySpec::bernoulli());
        let mut psi = problem.zero_state();
        psi.beta = ndarray::array![0.3, 0.8];
        psi.theta = vec![1.0];
        let a = gh_loglik(&problem, &psi, 20).unwrap();
        let b = gh_loglik(&problem, &psi, 60).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }

    #[test]
    fn two_dimensional_random_effects_are_supported() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut x = Array2::from_elem((n, 2), 1.0);
        for i in 0..n {
            x[[i, 1]] = rng.random::<f64>() * 2.0 - 1.0;
        }
        let levels: Vec<usize> = (0..n).map(|i| i / 10).collect();
        let y = Array1::from_iter((0..n).map(|_| if rng.random::<f64>() > 0.5 { 1.0 } else { 0.0 }));
        let ds = Dataset::new(
            y,
            x,
            vec!["x0".into(), "x1".into()],
            vec![GroupingFactor::from_indices("g", &levels)],
            vec![ReTerm {
                factor: 0,
                columns: vec![0, 1],
            }],
        )
        .unwrap();
        let t = CovarianceTemplate::new(&ds, &[BlockStructure::Diagonal]).unwrap();
        let problem = Problem::new(ds, t, FamilySpec::bernoulli()).unwrap();
        let mut psi = problem.zero_state();
        psi.beta = ndarray::array![0.2, 0.5];
        psi.theta = vec![0.8, 0.6];
        let a = gh_loglik(&problem, &psi, 20).unwrap();
        let b = gh_loglik(&problem, &psi, 40).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        assert!(a.is_finite());
    }

    #[test]
    fn laplace_tracks_quadrature_on_intercept_models() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let mut x = Array2::from_elem((n, 2), 1.0);
        for i in 0..n {
            x[[i, 1]] = rng.random::<f64>() * 2.0 - 1.0;
        }
        let levels: Vec<usize> = (0..n).map(|i| i / 6).collect();
        let y = Array1::from_iter((0..n).map(|_| if rng.random::<f64>() > 0.45 { 1.0 } else { 0.0 }));
        let problem = intercept_problem(y, x, &levels, FamilySpec::bernoulli());
        let mut psi = problem.zero_state();
        psi.beta = ndarray::array![0.2, 0.6];
        psi.theta = vec![1.0];
        let gh = gh_loglik(&problem, &psi, 40).unwrap();
        let (v, _) = crate::objective::q_la(
            &problem,
            &psi,
            0.0,
            None,
            &crate::pirls::PirlsSettings::default(),
        )
        .unwrap();
        let rel = (v.f - (-2.0 * gh)).abs() / (2.0 * gh).abs();
        assert!(rel <= 0.03, "Laplace vs quadrature gap {rel}");
    }

    #[test]
    fn nelder_mead_minimizes_rosenbrock() {
        let f = |x: &[f64]| {
            let a = 1.0 - x[0];
            let b = x[1] - x[0] * x[0];
            a * a + 100.0 * b * b
        };
        let (x, fx) = nelder_mead(f, &[-1.2, 1.0], 0.5, 1e-14, 5000);
        assert!(fx < 1e-8, "f = {fx} at {x:?}");
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-3);
    }
}
