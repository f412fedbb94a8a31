//! Serializable result bundles and plain-text table rendering for the CLI.

use crate::error::Result;
use crate::model::Standardization;
use crate::optimizer::FitRecord;
use crate::problem::Problem;
use crate::selection::{
    self, ComparisonMetrics, CriterionKind, FitPath, TwoStageResult,
};
use crate::simulate::study::{GrowingPCell, StudyReport};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonzeroCoef {
    pub name: String,
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub first: f64,
    pub last: f64,
}

/// Machine-readable record of a single fit. `beta` is on the scale the
/// optimizer saw; when the data were standardized, `beta_original` carries
/// the back-transformed coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub family: String,
    pub lambda: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub kkt_residual: f64,
    pub q_la: f64,
    pub f_value: f64,
    pub df: usize,
    pub aic: f64,
    pub bic: f64,
    pub col_names: Vec<String>,
    pub beta: Vec<f64>,
    pub nonzero: Vec<NonzeroCoef>,
    pub standardized: bool,
    pub beta_original: Option<Vec<f64>>,
    pub theta: Vec<f64>,
    /// Random-effect variances: diagonal of each covariance block, in order.
    pub variances: Vec<f64>,
    pub phi: f64,
    pub u: Vec<f64>,
    pub trace: TraceSummary,
}

impl FitReport {
    pub fn new(
        problem: &Problem,
        record: &FitRecord,
        standardization: Option<&Standardization>,
    ) -> Result<Self> {
        let df = selection::degrees_of_freedom(problem, record);
        let n = problem.n();
        let f = record.objective.f;
        let sigma = problem.template.sigma_blocks(&record.psi.theta)?;
        let variances: Vec<f64> = sigma
            .iter()
            .flat_map(|s| (0..s.nrows()).map(|j| s[[j, j]]).collect::<Vec<_>>())
            .collect();
        let nonzero = record
            .psi
            .beta
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, &b)| NonzeroCoef {
                name: problem.dataset.col_names[j].clone(),
                index: j,
                value: b,
            })
            .collect();
        Ok(FitReport {
            family: problem.family.name().to_string(),
            lambda: record.lambda,
            converged: record.converged,
            outer_iterations: record.outer_iterations,
            kkt_residual: record.kkt_residual,
            q_la: record.objective.q_la,
            f_value: f,
            df,
            aic: selection::information_criterion(f, df, n, CriterionKind::Aic),
            bic: selection::information_criterion(f, df, n, CriterionKind::Bic),
            col_names: problem.dataset.col_names.clone(),
            beta: record.psi.beta.to_vec(),
            nonzero,
            standardized: standardization.is_some(),
            beta_original: standardization
                .map(|s| s.beta_to_original(&record.psi.beta).to_vec()),
            theta: record.psi.theta.clone(),
            variances,
            phi: record.psi.phi,
            u: record.u.to_vec(),
            trace: TraceSummary {
                steps: record.trace.len().saturating_sub(1),
                first: *record.trace.first().unwrap_or(&f64::NAN),
                last: *record.trace.last().unwrap_or(&f64::NAN),
            },
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "family: {}    lambda: {:.6}    converged: {}\n",
            self.family, self.lambda, self.converged
        ));
        out.push_str(&format!(
            "Q: {:.6}    df: {}    AIC: {:.3}    BIC: {:.3}    KKT residual: {:.2e}\n",
            self.q_la, self.df, self.aic, self.bic, self.kkt_residual
        ));
        out.push_str(&format!(
            "variance components: [{}]    phi: {:.4}\n\n",
            join_fmt(&self.variances),
            self.phi
        ));
        let mut rows = Vec::new();
        for c in &self.nonzero {
            let mut row = vec![c.name.clone(), format!("{:.6}", c.value)];
            if let Some(orig) = &self.beta_original {
                row.push(format!("{:.6}", orig[c.index]));
            }
            rows.push(row);
        }
        let headers: Vec<&str> = if self.beta_original.is_some() {
            vec!["term", "estimate", "estimate_raw_scale"]
        } else {
            vec!["term", "estimate"]
        };
        out.push_str(&render_table(&headers, &rows));
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathReport {
    pub lambdas: Vec<f64>,
    pub records: Vec<FitReport>,
    pub aic_index: usize,
    pub bic_index: usize,
}

impl PathReport {
    pub fn new(
        problem: &Problem,
        path: &FitPath,
        standardization: Option<&Standardization>,
    ) -> Result<Self> {
        let records = path
            .records
            .iter()
            .map(|r| FitReport::new(problem, r, standardization))
            .collect::<Result<Vec<_>>>()?;
        Ok(PathReport {
            lambdas: path.lambdas.clone(),
            records,
            aic_index: path.aic_index,
            bic_index: path.bic_index,
        })
    }

    pub fn to_text(&self) -> String {
        let mut rows = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            let mark = match (i == self.aic_index, i == self.bic_index) {
                (true, true) => "AIC,BIC",
                (true, false) => "AIC",
                (false, true) => "BIC",
                _ => "",
            };
            rows.push(vec![
                format!("{:.6}", r.lambda),
                format!("{}", r.nonzero.len()),
                format!("{}", r.df),
                format!("{:.3}", r.aic),
                format!("{:.3}", r.bic),
                format!("{}", r.converged),
                mark.to_string(),
            ]);
        }
        render_table(
            &["lambda", "nonzero", "df", "AIC", "BIC", "converged", "chosen"],
            &rows,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,nonzero,df,aic,bic,converged,chosen\n");
        for (i, r) in self.records.iter().enumerate() {
            let mark = match (i == self.aic_index, i == self.bic_index) {
                (true, true) => "aic+bic",
                (true, false) => "aic",
                (false, true) => "bic",
                _ => "",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.lambda,
                r.nonzero.len(),
                r.df,
                r.aic,
                r.bic,
                r.converged,
                mark
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStageReport {
    pub kind: String,
    pub stage1: FitReport,
    pub selected: Vec<String>,
    pub lambda_thres: Option<f64>,
    pub stage2: FitReport,
}

impl TwoStageReport {
    pub fn new(
        problem: &Problem,
        two: &TwoStageResult,
        standardization: Option<&Standardization>,
    ) -> Result<Self> {
        Ok(TwoStageReport {
            kind: format!("{:?}", two.kind).to_lowercase(),
            stage1: FitReport::new(problem, &two.stage1, standardization)?,
            selected: two
                .selected_set
                .iter()
                .map(|&j| problem.dataset.col_names[j].clone())
                .collect(),
            lambda_thres: two.lambda_thres,
            stage2: FitReport::new(problem, &two.stage2, standardization)?,
        })
    }
}

/// Simple fixed-width text table.
pub fn render_table<S: AsRef<str>>(headers: &[S], rows: &[Vec<String>]) -> String {
    let ncol = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.as_ref().len()).collect();
    for row in rows {
        for (j, cell) in row.iter().enumerate().take(ncol) {
            widths[j] = widths[j].max(cell.len());
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: Vec<&str>, widths: &[usize]| -> String {
        let mut line = String::new();
        for (j, c) in cells.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{:>width$}", c, width = widths[j]));
        }
        line.push('\n');
        line
    };
    out.push_str(&fmt_row(
        headers.iter().map(|h| h.as_ref()).collect(),
        &widths,
    ));
    for row in rows {
        out.push_str(&fmt_row(row.iter().map(|c| c.as_str()).collect(), &widths));
    }
    out
}

fn join_fmt(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Study table in the two-line layout: a median row per method followed by
/// a parenthesized spread row.
pub fn study_text(report: &StudyReport) -> String {
    let mut headers = vec!["method".to_string()];
    if let Some(m) = report.methods.first() {
        headers.extend(m.columns.iter().map(|c| c.name.clone()));
    }
    let mut rows = Vec::new();
    for m in &report.methods {
        let mut med = vec![m.method.label().to_string()];
        let mut spread = vec![String::new()];
        for c in &m.columns {
            med.push(format!("{:.3}", c.median));
            spread.push(format!("({:.3})", c.spread));
        }
        rows.push(med);
        rows.push(spread);
    }
    let mut out = format!(
        "design: {}    replicates: {} ({} failed)\n",
        report.design, report.n_replicates, report.n_failed
    );
    out.push_str(&render_table(&headers, &rows));
    out
}

pub fn study_csv(report: &StudyReport) -> String {
    let mut out = String::from("method,statistic");
    if let Some(m) = report.methods.first() {
        for c in &m.columns {
            out.push(',');
            out.push_str(&c.name);
        }
    }
    out.push('\n');
    for m in &report.methods {
        out.push_str(&format!("{},median", m.method.label()));
        for c in &m.columns {
            out.push_str(&format!(",{}", c.median));
        }
        out.push('\n');
        out.push_str(&format!("{},mad", m.method.label()));
        for c in &m.columns {
            out.push_str(&format!(",{}", c.spread));
        }
        out.push('\n');
    }
    out
}

pub fn growing_p_csv(cells: &[GrowingPCell]) -> String {
    let mut out = String::from("p,method,n_ok,median_nll,mad_nll\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.p,
            c.method.label(),
            c.n_ok,
            c.median_nll,
            c.spread_nll
        ));
    }
    out
}

pub fn growing_p_text(cells: &[GrowingPCell]) -> String {
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.p.to_string(),
                c.method.label().to_string(),
                format!("{:.3}", c.median_nll),
                format!("({:.3})", c.spread_nll),
            ]
        })
        .collect();
    render_table(&["p", "method", "out_of_sample_-2logL", "spread"], &rows)
}

pub fn comparison_csv(m: &ComparisonMetrics) -> String {
    let mut out = String::from("lambda,rel_iter,rel_ll,rel_fix,active_match,rel_time\n");
    for r in &m.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.lambda, r.rel_iter, r.rel_ll, r.rel_fix, r.active_match, r.rel_time
        ));
    }
    out.push_str(&format!(
        "aggregate,{},{},{},{},{}\n",
        m.mean_rel_iter, m.mean_rel_ll, m.mean_rel_fix, m.active_match_rate, m.mean_rel_time
    ));
    out
}

pub fn comparison_text(m: &ComparisonMetrics) -> String {
    format!(
        "grid points: {} ({} excluded)\nmean rel.iter: {:.4}\nmean rel.ll: {:.3e} (sd {:.3e})\n\
         mean rel.fix: {:.4}\nactive-set match rate: {:.3}\nmean rel.time: {:.3}\n",
        m.rows.len(),
        m.excluded,
        m.mean_rel_iter,
        m.mean_rel_ll,
        m.sd_rel_ll,
        m.mean_rel_fix,
        m.active_match_rate,
        m.mean_rel_time
    )
}
