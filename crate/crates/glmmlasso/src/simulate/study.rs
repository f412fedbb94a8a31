//! Batch study runners: repeated fits over simulated replicates, per-method
//! summary tables (medians with rescaled MAD spreads), the growing-dimension
//! out-of-sample experiment and the exact-vs-approximate gradient comparison.

use super::SimDesign;
use crate::error::{Error, Result};
use crate::glm;
use crate::model::BlockStructure;
use crate::optimizer::{self, FitRecord, GradientMode, OptimizerConfig};
use crate::problem::Problem;
use crate::selection::{self, ComparisonMetrics, ComparisonRow};
use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Estimators compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// BIC-selected penalized fit.
    Lasso,
    /// Unpenalized refit on the BIC-selected active set.
    Hybrid,
    /// Coefficient thresholding of the AIC-selected fit, BIC over thresholds.
    Thresholded,
    /// Plain GLM lasso without random effects, BIC-selected.
    GlmLasso,
    /// Unpenalized fit on the true support (reference only).
    OracleRefit,
}

impl MethodKind {
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Lasso => "lasso",
            MethodKind::Hybrid => "hybrid",
            MethodKind::Thresholded => "thresholded",
            MethodKind::GlmLasso => "glm_lasso",
            MethodKind::OracleRefit => "oracle",
        }
    }

    pub fn all() -> &'static [MethodKind] {
        &[
            MethodKind::Lasso,
            MethodKind::Hybrid,
            MethodKind::Thresholded,
            MethodKind::GlmLasso,
            MethodKind::OracleRefit,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_replicates: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub n_lambda: usize,
    /// Grid floor as a fraction of lambda_max; 0.01 matches the default path.
    pub lambda_min_ratio: f64,
    pub methods: Vec<MethodKind>,
    /// Fixed thread count; `None` uses the global pool. Results do not
    /// depend on this value.
    pub workers: Option<usize>,
}

impl StudyConfig {
    pub fn new(n_replicates: usize, seed: u64, optimizer: OptimizerConfig) -> Self {
        StudyConfig {
            n_replicates,
            seed,
            optimizer,
            n_lambda: 21,
            lambda_min_ratio: 0.01,
            methods: MethodKind::all().to_vec(),
            workers: None,
        }
    }
}

/// Per-replicate, per-method raw statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateStats {
    pub replicate: usize,
    pub method: MethodKind,
    /// Number of nonzero coefficients.
    pub n_active: f64,
    /// Nonzero coefficients that are truly nonzero.
    pub true_positives: f64,
    /// Estimated random-effect variances (and correlation, if modeled).
    pub variances: Vec<f64>,
    /// First coefficients, up to five.
    pub beta_head: Vec<f64>,
    /// Squared coefficient error against the truth.
    pub sq_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryColumn {
    pub name: String,
    pub median: f64,
    /// Median absolute deviation rescaled by 1.4826.
    pub spread: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodKind,
    pub n_ok: usize,
    pub columns: Vec<SummaryColumn>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub design: String,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub methods: Vec<MethodSummary>,
    /// Raw rows, ordered by replicate then method, for downstream analysis.
    pub rows: Vec<ReplicateStats>,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Consistent robust spread: 1.4826 * median(|x - median(x)|).
pub fn mad_spread(values: &[f64]) -> f64 {
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    1.4826 * median(&dev)
}

/// Names of the reported variance columns for a design.
fn variance_names(design: &SimDesign) -> Vec<String> {
    let k = design.re_columns.len();
    let mut names: Vec<String> = (1..=k).map(|j| format!("var{j}")).collect();
    if design.structure == BlockStructure::UnstructuredLower && k == 2 {
        names.push("corr12".to_string());
    }
    names
}

/// Variances (and correlation for a 2 x 2 unstructured block) implied by a
/// covariance parameter vector.
fn variance_report(design: &SimDesign, problem: &Problem, theta: &[f64]) -> Result<Vec<f64>> {
    let sigma = &problem.template.sigma_blocks(theta)?[0];
    let k = sigma.nrows();
    let mut out: Vec<f64> = (0..k).map(|j| sigma[[j, j]]).collect();
    if design.structure == BlockStructure::UnstructuredLower && k == 2 {
        let denom = (sigma[[0, 0]] * sigma[[1, 1]]).sqrt();
        out.push(if denom > 0.0 { sigma[[0, 1]] / denom } else { 0.0 });
    }
    Ok(out)
}

fn stats_for(
    design: &SimDesign,
    problem: &Problem,
    replicate: usize,
    method: MethodKind,
    beta: &Array1<f64>,
    variances: Vec<f64>,
) -> ReplicateStats {
    let support = design.true_support();
    let active: Vec<usize> = beta
        .iter()
        .enumerate()
        .filter(|(_, &b)| b != 0.0)
        .map(|(j, _)| j)
        .collect();
    let tp = active.iter().filter(|j| support.contains(j)).count();
    let sq_error = beta
        .iter()
        .zip(&design.beta0)
        .map(|(b, b0)| (b - b0) * (b - b0))
        .sum();
    let head = beta.iter().take(5.min(problem.p())).cloned().collect();
    ReplicateStats {
        replicate,
        method,
        n_active: active.len() as f64,
        true_positives: tp as f64,
        variances,
        beta_head: head,
        sq_error,
    }
}

/// GLM lasso baseline: 21-point grid from the GLM gradient bound, each fit
/// warm-started, selected by BIC on the GLM deviance.
pub fn glm_lasso_bic(problem: &Problem, n_lambda: usize) -> Result<Array1<f64>> {
    let x = problem.dataset.x.view();
    let y = &problem.dataset.y;
    let family = &problem.family;
    let mask = &problem.penalty_mask;
    let n = problem.n();
    let lmax = glm::glm_lambda_max(x, y, family, mask)?;
    let grid = glm::log_grid(lmax, n_lambda);
    let mut warm = Array1::zeros(problem.p());
    let mut best: Option<(f64, Array1<f64>)> = None;
    for &lam in &grid {
        let beta = glm::glm_fit(x, y, family, mask, lam, &warm)?;
        warm = beta.clone();
        let mut dev = 0.0;
        for i in 0..n {
            let mu = family.link_inv(x.row(i).dot(&beta));
            dev += family.neg2_loglik_term_unchecked(y[i], mu, family.phi_default());
        }
        let df = beta.iter().filter(|&&b| b != 0.0).count();
        let bic = dev + (n as f64).ln() * df as f64;
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, beta));
        }
    }
    Ok(best.expect("nonempty penalty grid").1)
}

/// One solver fit together with the recipe for rebuilding the problem it was
/// computed on, so stationarity can be re-certified independently.
#[derive(Debug, Clone)]
pub struct FitAudit {
    pub design: SimDesign,
    pub seed: u64,
    pub stream: u64,
    pub mode: GradientMode,
    /// Coordinates the fit was allowed to move; `None` means all of them.
    pub free: Option<Vec<bool>>,
    pub record: FitRecord,
}

/// Run every requested method on one simulated replicate.
pub fn run_replicate(
    design: &SimDesign,
    cfg: &StudyConfig,
    replicate: usize,
) -> Result<Vec<ReplicateStats>> {
    Ok(run_replicate_audited(design, cfg, replicate, false)?.0)
}

fn run_replicate_audited(
    design: &SimDesign,
    cfg: &StudyConfig,
    replicate: usize,
    collect: bool,
) -> Result<(Vec<ReplicateStats>, Vec<FitAudit>)> {
    let mut audits = Vec::new();
    let mut audit = |records: &[FitRecord], free: Option<&[bool]>| {
        if collect {
            audits.extend(records.iter().map(|r| FitAudit {
                design: design.clone(),
                seed: cfg.seed,
                stream: replicate as u64,
                mode: cfg.optimizer.mode,
                free: free.map(|f| f.to_vec()),
                record: r.clone(),
            }));
        }
    };
    let (problem, _truth) = design.instantiate(cfg.seed, replicate as u64)?;
    let needs_path = cfg.methods.iter().any(|m| {
        matches!(
            m,
            MethodKind::Lasso | MethodKind::Hybrid | MethodKind::Thresholded
        )
    });
    let start = optimizer::init_start(&problem, &cfg.optimizer)?;
    let path = if needs_path {
        let path = selection::fit_path_bounded(
            &problem,
            &cfg.optimizer,
            &start,
            cfg.n_lambda,
            cfg.lambda_min_ratio,
        )?;
        audit(&path.records, None);
        Some(path)
    } else {
        None
    };

    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let (beta, theta) = match method {
            MethodKind::Lasso => {
                let rec = path.as_ref().unwrap().bic_best();
                (rec.psi.beta.clone(), Some(rec.psi.theta.clone()))
            }
            MethodKind::Hybrid => {
                let two =
                    selection::select_hybrid(&problem, path.as_ref().unwrap(), &cfg.optimizer)?;
                let free = selection::refit_free_set(&problem, &two.selected_set);
                audit(std::slice::from_ref(&two.stage2), Some(&free));
                (two.stage2.psi.beta.clone(), Some(two.stage2.psi.theta.clone()))
            }
            MethodKind::Thresholded => {
                let two = selection::select_thresholded(
                    &problem,
                    path.as_ref().unwrap(),
                    &cfg.optimizer,
                )?;
                let free = selection::refit_free_set(&problem, &two.selected_set);
                audit(std::slice::from_ref(&two.stage2), Some(&free));
                (two.stage2.psi.beta.clone(), Some(two.stage2.psi.theta.clone()))
            }
            MethodKind::GlmLasso => (glm_lasso_bic(&problem, cfg.n_lambda)?, None),
            MethodKind::OracleRefit => {
                let mut free = vec![false; problem.p()];
                for &j in &design.true_support() {
                    free[j] = true;
                }
                for (j, &m) in problem.penalty_mask.iter().enumerate() {
                    if !m {
                        free[j] = true;
                    }
                }
                let rec =
                    optimizer::fit_restricted(&problem, 0.0, &cfg.optimizer, &start, Some(&free))?;
                audit(std::slice::from_ref(&rec), Some(&free));
                (rec.psi.beta.clone(), Some(rec.psi.theta.clone()))
            }
        };
        let variances = match theta {
            Some(t) => variance_report(design, &problem, &t)?,
            // no random effects in the GLM baseline
            None => vec![0.0; variance_names(design).len()],
        };
        out.push(stats_for(design, &problem, replicate, method, &beta, variances));
    }
    Ok((out, audits))
}

fn with_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Run the full study. Replicates are independent RNG streams, so the
/// resulting table is identical for any worker count.
pub fn run_study(design: &SimDesign, cfg: &StudyConfig) -> Result<StudyReport> {
    Ok(run_study_audited(design, cfg, false)?.0)
}

/// As `run_study`; with `collect` set, every solver fit is also returned for
/// independent stationarity certification.
pub fn run_study_audited(
    design: &SimDesign,
    cfg: &StudyConfig,
    collect: bool,
) -> Result<(StudyReport, Vec<FitAudit>)> {
    let results: Vec<Result<(Vec<ReplicateStats>, Vec<FitAudit>)>> = with_pool(cfg.workers, || {
        (0..cfg.n_replicates)
            .into_par_iter()
            .map(|r| run_replicate_audited(design, cfg, r, collect))
            .collect()
    })?;

    let mut rows = Vec::new();
    let mut audits = Vec::new();
    let mut n_failed = 0;
    for res in results {
        match res {
            Ok((mut r, mut a)) => {
                rows.append(&mut r);
                audits.append(&mut a);
            }
            Err(_) => n_failed += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::numerical(format!(
            "all {} replicates of `{}` failed",
            cfg.n_replicates, design.name
        )));
    }

    let var_names = variance_names(design);
    let mut methods = Vec::new();
    for &method in &cfg.methods {
        let sel: Vec<&ReplicateStats> = rows.iter().filter(|r| r.method == method).collect();
        if sel.is_empty() {
            continue;
        }
        let mut columns = Vec::new();
        let mut push = |name: String, values: Vec<f64>| {
            columns.push(SummaryColumn {
                name,
                median: median(&values),
                spread: mad_spread(&values),
            });
        };
        push("n_active".into(), sel.iter().map(|r| r.n_active).collect());
        push(
            "true_positives".into(),
            sel.iter().map(|r| r.true_positives).collect(),
        );
        for (j, vn) in var_names.iter().enumerate() {
            push(vn.clone(), sel.iter().map(|r| r.variances[j]).collect());
        }
        for j in 0..sel[0].beta_head.len() {
            push(
                format!("beta{}", j + 1),
                sel.iter().map(|r| r.beta_head[j]).collect(),
            );
        }
        push("sq_error".into(), sel.iter().map(|r| r.sq_error).collect());
        methods.push(MethodSummary {
            method,
            n_ok: sel.len(),
            columns,
        });
    }

    let report = StudyReport {
        design: design.name.clone(),
        n_replicates: cfg.n_replicates,
        n_failed,
        methods,
        rows,
    };
    Ok((report, audits))
}

/// RNG stream offset for held-out evaluation data, far above any replicate
/// index used for training data.
const TEST_STREAM_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowingPMethod {
    FullMl,
    Lasso,
    Hybrid,
}

impl GrowingPMethod {
    pub fn label(self) -> &'static str {
        match self {
            GrowingPMethod::FullMl => "full_ml",
            GrowingPMethod::Lasso => "lasso",
            GrowingPMethod::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowingPCell {
    pub p: usize,
    pub method: GrowingPMethod,
    pub n_ok: usize,
    pub median_nll: f64,
    pub spread_nll: f64,
}

/// Out-of-sample deviance of an unpenalized full fit, the penalized fit and
/// the two-stage refit as the column count grows. Each replicate draws an
/// independent evaluation dataset with fresh groups from a reserved RNG
/// stream.
pub fn run_growing_p(
    ps: &[usize],
    n_replicates: usize,
    seed: u64,
    optimizer_cfg: &OptimizerConfig,
    n_lambda: usize,
    workers: Option<usize>,
) -> Result<Vec<GrowingPCell>> {
    Ok(run_growing_p_audited(ps, n_replicates, seed, optimizer_cfg, n_lambda, workers, false)?.0)
}

/// As `run_growing_p`; with `collect` set, every solver fit is also returned
/// for independent stationarity certification.
#[allow(clippy::too_many_arguments)]
pub fn run_growing_p_audited(
    ps: &[usize],
    n_replicates: usize,
    seed: u64,
    optimizer_cfg: &OptimizerConfig,
    n_lambda: usize,
    workers: Option<usize>,
    collect: bool,
) -> Result<(Vec<GrowingPCell>, Vec<FitAudit>)> {
    let jobs: Vec<(usize, usize)> = ps
        .iter()
        .flat_map(|&p| (0..n_replicates).map(move |r| (p, r)))
        .collect();

    type Cell = (usize, usize, GrowingPMethod, f64);
    let results: Vec<Result<(Vec<Cell>, Vec<FitAudit>)>> = with_pool(workers, || {
        jobs.into_par_iter()
            .map(|(p, r)| -> Result<(Vec<Cell>, Vec<FitAudit>)> {
                let design = SimDesign::growing_p(p);
                let (train, _) = design.instantiate(seed, r as u64)?;
                let (test, _) = design.instantiate(seed, r as u64 + TEST_STREAM_OFFSET)?;
                let start = optimizer::init_start(&train, optimizer_cfg)?;
                let path = selection::fit_path(&train, optimizer_cfg, &start, n_lambda)?;
                let hybrid = selection::select_hybrid(&train, &path, optimizer_cfg)?;
                let full = optimizer::fit(&train, 0.0, optimizer_cfg, &start)?;
                let mut audits = Vec::new();
                if collect {
                    let stage2_free = selection::refit_free_set(&train, &hybrid.selected_set);
                    let all = path
                        .records
                        .iter()
                        .map(|rec| (rec, None))
                        .chain([
                            (&hybrid.stage2, Some(stage2_free)),
                            (&full, None),
                        ]);
                    audits.extend(all.map(|(rec, free)| FitAudit {
                        design: design.clone(),
                        seed,
                        stream: r as u64,
                        mode: optimizer_cfg.mode,
                        free,
                        record: rec.clone(),
                    }));
                }
                let mut out = Vec::new();
                for (method, psi) in [
                    (GrowingPMethod::FullMl, &full.psi),
                    (GrowingPMethod::Lasso, &path.bic_best().psi),
                    (GrowingPMethod::Hybrid, &hybrid.stage2.psi),
                ] {
                    let nll = selection::out_of_sample_nll(&test, psi, optimizer_cfg)?;
                    out.push((p, r, method, nll));
                }
                Ok((out, audits))
            })
            .collect()
    })?;

    let mut flat: Vec<Cell> = Vec::new();
    let mut audits: Vec<FitAudit> = Vec::new();
    for res in results {
        match res {
            Ok((mut cells, mut a)) => {
                flat.append(&mut cells);
                audits.append(&mut a);
            }
            Err(_) => {}
        }
    }

    let mut table = Vec::new();
    for &p in ps {
        for method in [
            GrowingPMethod::FullMl,
            GrowingPMethod::Lasso,
            GrowingPMethod::Hybrid,
        ] {
            let vals: Vec<f64> = flat
                .iter()
                .filter(|(cp, _, m, _)| *cp == p && *m == method)
                .map(|(_, _, _, v)| *v)
                .collect();
            if vals.is_empty() {
                return Err(Error::numerical(format!(
                    "no successful replicates at p = {p} for {}",
                    method.label()
                )));
            }
            table.push(GrowingPCell {
                p,
                method,
                n_ok: vals.len(),
                median_nll: median(&vals),
                spread_nll: mad_spread(&vals),
            });
        }
    }
    Ok((table, audits))
}

/// Fit the same replicated penalty grids with the exact and the approximate
/// gradient and pool the per-lambda discrepancy metrics over replicates.
pub fn run_mode_comparison(
    design: &SimDesign,
    n_replicates: usize,
    seed: u64,
    base: &OptimizerConfig,
    n_lambda: usize,
    workers: Option<usize>,
) -> Result<ComparisonMetrics> {
    Ok(run_mode_comparison_audited(design, n_replicates, seed, base, n_lambda, workers, false)?.0)
}

/// As `run_mode_comparison`; with `collect` set, every solver fit from both
/// gradient modes is also returned for independent stationarity
/// certification.
#[allow(clippy::too_many_arguments)]
pub fn run_mode_comparison_audited(
    design: &SimDesign,
    n_replicates: usize,
    seed: u64,
    base: &OptimizerConfig,
    n_lambda: usize,
    workers: Option<usize>,
    collect: bool,
) -> Result<(ComparisonMetrics, Vec<FitAudit>)> {
    type Item = (ComparisonMetrics, Vec<(GradientMode, FitRecord)>);
    let results: Vec<Result<Item>> = with_pool(workers, || {
        (0..n_replicates)
            .into_par_iter()
            .map(|r| -> Result<Item> {
                let (problem, _) = design.instantiate(seed, r as u64)?;
                let start = optimizer::init_start(&problem, base)?;
                let (grid, _) = selection::lambda_grid(&problem, base, &start, n_lambda)?;
                selection::compare_modes_audited(
                    &problem,
                    base,
                    &start,
                    &grid,
                    GradientMode::Exact,
                    GradientMode::Approximate,
                )
            })
            .collect()
    })?;

    let mut rows: Vec<ComparisonRow> = Vec::new();
    let mut audits: Vec<FitAudit> = Vec::new();
    let mut excluded = 0;
    for (r, res) in results.into_iter().enumerate() {
        let (m, fits) = res?;
        rows.extend(m.rows);
        excluded += m.excluded;
        if collect {
            audits.extend(fits.into_iter().map(|(mode, record)| FitAudit {
                design: design.clone(),
                seed,
                stream: r as u64,
                mode,
                free: None,
                record,
            }));
        }
    }
    Ok((pool_comparison(rows, excluded), audits))
}

fn pool_comparison(rows: Vec<ComparisonRow>, excluded: usize) -> ComparisonMetrics {
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ComparisonRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let mean_rel_ll = mean(&|r| r.rel_ll);
    let var_ll = rows
        .iter()
        .map(|r| (r.rel_ll - mean_rel_ll).powi(2))
        .sum::<f64>()
        / (rows.len().saturating_sub(1).max(1) as f64);
    ComparisonMetrics {
        mean_rel_iter: mean(&|r| r.rel_iter),
        mean_rel_ll,
        sd_rel_ll: var_ll.sqrt(),
        mean_rel_fix: mean(&|r| r.rel_fix),
        active_match_rate: rows.iter().filter(|r| r.active_match).count() as f64 / n,
        mean_rel_time: mean(&|r| r.rel_time),
        excluded,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::FamilySpec;
    use approx::assert_abs_diff_eq;

    fn mini_design() -> SimDesign {
        SimDesign {
            name: "mini".into(),
            family: FamilySpec::bernoulli(),
            n_groups: 10,
            group_size: 8,
            p: 8,
            beta0: vec![0.1, 1.0, -1.0, 1.0, -1.0, 0.0, 0.0, 0.0],
            re_columns: vec![0],
            structure: BlockStructure::ScalarIdentity,
            theta0: vec![1.0],
        }
    }

    fn quick_config() -> StudyConfig {
        let mut cfg = StudyConfig::new(2, 99, OptimizerConfig::approximate());
        cfg.n_lambda = 8;
        cfg
    }

    #[test]
    fn median_and_spread() {
        assert_abs_diff_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_abs_diff_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        // constant data has zero spread
        assert_abs_diff_eq!(mad_spread(&[5.0, 5.0, 5.0]), 0.0);
        // for 1,2,3,4,5: MAD = 1, rescaled 1.4826
        assert_abs_diff_eq!(mad_spread(&[1.0, 2.0, 3.0, 4.0, 5.0]), 1.4826);
    }

    #[test]
    fn glm_baseline_recovers_signal_columns() {
        let d = mini_design();
        let (problem, _) = d.instantiate(5, 0).unwrap();
        let beta = glm_lasso_bic(&problem, 21).unwrap();
        // the four strong slopes should survive BIC selection
        for j in 1..5 {
            assert!(
                beta[j] * d.beta0[j] > 0.0,
                "column {j}: {} vs {}",
                beta[j],
                d.beta0[j]
            );
        }
    }

    #[test]
    fn study_runs_and_reports_all_methods() {
        let d = mini_design();
        let cfg = quick_config();
        let report = run_study(&d, &cfg).unwrap();
        assert_eq!(report.n_failed, 0);
        assert_eq!(report.methods.len(), MethodKind::all().len());
        for m in &report.methods {
            assert_eq!(m.n_ok, cfg.n_replicates);
            let names: Vec<&str> = m.columns.iter().map(|c| c.name.as_str()).collect();
            assert_eq!(
                names,
                vec![
                    "n_active",
                    "true_positives",
                    "var1",
                    "beta1",
                    "beta2",
                    "beta3",
                    "beta4",
                    "beta5",
                    "sq_error"
                ]
            );
            for c in &m.columns {
                assert!(c.median.is_finite() && c.spread.is_finite());
            }
        }
        // the oracle refit always selects exactly the truth
        let oracle = report
            .methods
            .iter()
            .find(|m| m.method == MethodKind::OracleRefit)
            .unwrap();
        assert_abs_diff_eq!(oracle.columns[1].median, 5.0);
    }

    #[test]
    fn study_tables_identical_across_worker_counts() {
        let d = mini_design();
        let mut cfg = quick_config();
        cfg.workers = Some(1);
        let a = run_study(&d, &cfg).unwrap();
        cfg.workers = Some(4);
        let b = run_study(&d, &cfg).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn growing_p_runner_produces_full_table() {
        let mut base = OptimizerConfig::approximate();
        base.max_outer_iter = 60;
        let table = run_growing_p(&[5, 9], 2, 31, &base, 8, None).unwrap();
        assert_eq!(table.len(), 6);
        for cell in &table {
            assert_eq!(cell.n_ok, 2);
            assert!(cell.median_nll.is_finite() && cell.median_nll > 0.0);
        }
    }
}
