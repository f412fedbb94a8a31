use glmmlasso::model::BlockStructure;
use glmmlasso::optimizer::{self, OptimizerConfig};
use glmmlasso::simulate::{quad, SimDesign};
use glmmlasso::{FamilySpec, ParamState};

fn main() {
    let design = SimDesign {
        name: "quad_check".into(),
        family: FamilySpec::bernoulli(),
        n_groups: 10,
        group_size: 5,
        p: 3,
        beta0: vec![0.5, 1.0, -1.0],
        re_columns: vec![0],
        structure: BlockStructure::ScalarIdentity,
        theta0: vec![1.0],
    };
    let config = OptimizerConfig::default();
    for stream in 0..8u64 {
        let (problem, _) = design.instantiate(11, stream).unwrap();
        let rec = optimizer::fit(&problem, 0.0, &config, &problem.zero_state()).unwrap();
        let gh_fit = quad::gh_loglik(&problem, &rec.psi, 40).unwrap();
        let rel = (rec.f_value() + 2.0 * gh_fit).abs() / (2.0 * gh_fit).abs();
        let mask = problem.zero_state().penalty_mask;
        let obj = |v: &[f64]| {
            let psi = ParamState {
                beta: ndarray::arr1(&v[..3]),
                theta: vec![v[3].abs()],
                phi: 1.0,
                penalty_mask: mask.clone(),
            };
            -2.0 * quad::gh_loglik(&problem, &psi, 40).unwrap()
        };
        let mut x0: Vec<f64> = rec.psi.beta.to_vec();
        x0.push(rec.psi.theta[0]);
        let (xm, _) = quad::nelder_mead(obj, &x0, 0.25, 1e-12, 4000);
        let gap = rec.psi.beta.iter().zip(&xm[..3]).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        println!("stream {stream}: rel_ll {rel:.4} beta_gap {gap:.4} theta {:.3} vs {:.3}", rec.psi.theta[0], xm[3].abs());
    }
}
