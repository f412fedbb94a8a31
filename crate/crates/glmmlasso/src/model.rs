//! Data model for a GLMM fit problem: response, fixed-effects design,
//! grouping structure, random-effects design and the covariance template
//! that maps the low-dimensional parameter theta to the Cholesky factor of
//! the random-effects covariance.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, cholesky_logdet, cholesky_solve};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// A grouping factor: per-observation level indices, re-indexed by first
/// appearance so levels are contiguous 0..n_levels-1.
#[derive(Debug, Clone)]
pub struct GroupingFactor {
    pub name: String,
    pub levels: Vec<usize>,
    pub n_levels: usize,
    pub labels: Vec<String>,
}

impl GroupingFactor {
    pub fn from_labels<S: AsRef<str>>(name: &str, raw: &[S]) -> Self {
        let mut labels: Vec<String> = Vec::new();
        let mut levels = Vec::with_capacity(raw.len());
        for r in raw {
            let r = r.as_ref();
            let idx = match labels.iter().position(|l| l == r) {
                Some(i) => i,
                None => {
                    labels.push(r.to_string());
                    labels.len() - 1
                }
            };
            levels.push(idx);
        }
        GroupingFactor {
            name: name.to_string(),
            n_levels: labels.len(),
            levels,
            labels,
        }
    }

    pub fn from_indices(name: &str, idx: &[usize]) -> Self {
        let strs: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
        Self::from_labels(name, &strs)
    }

    /// Observation counts per level.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut c = vec![0usize; self.n_levels];
        for &l in &self.levels {
            c[l] += 1;
        }
        c
    }
}

/// Random-effect term: which fixed-effects columns carry a random effect
/// under one grouping factor. The intercept participates through its column
/// of ones.
#[derive(Debug, Clone)]
pub struct ReTerm {
    pub factor: usize,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Array1<f64>,
    pub x: Array2<f64>,
    pub col_names: Vec<String>,
    pub groups: Vec<GroupingFactor>,
    pub re_terms: Vec<ReTerm>,
    pub intercept_col: Option<usize>,
}

impl Dataset {
    pub fn new(
        y: Array1<f64>,
        x: Array2<f64>,
        col_names: Vec<String>,
        groups: Vec<GroupingFactor>,
        re_terms: Vec<ReTerm>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(Error::invalid(format!(
                "X has {} rows but y has length {n}",
                x.nrows()
            )));
        }
        if col_names.len() != x.ncols() {
            return Err(Error::invalid("column name count does not match X"));
        }
        for g in &groups {
            if g.levels.len() != n {
                return Err(Error::invalid(format!(
                    "grouping factor `{}` has length {} but n = {n}",
                    g.name,
                    g.levels.len()
                )));
            }
        }
        for (j, col) in x.columns().into_iter().enumerate() {
            if col.iter().all(|&v| v == 0.0) {
                return Err(Error::invalid(format!(
                    "X column {j} (`{}`) is constant zero",
                    col_names[j]
                )));
            }
        }
        for t in &re_terms {
            if t.factor >= groups.len() {
                return Err(Error::invalid("random-effect term refers to unknown factor"));
            }
            for &c in &t.columns {
                if c >= x.ncols() {
                    return Err(Error::invalid(format!(
                        "random-effect column index {c} out of range"
                    )));
                }
            }
            if t.columns.is_empty() {
                return Err(Error::invalid("random-effect term with no columns"));
            }
            if t.columns.len() > 8 {
                return Err(Error::invalid(
                    "at most 8 random-effect variables per grouping factor are supported",
                ));
            }
        }
        let intercept_col = (0..x.ncols()).find(|&j| x.column(j).iter().all(|&v| v == 1.0));
        Ok(Dataset {
            y,
            x,
            col_names,
            groups,
            re_terms,
            intercept_col,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Center/scale all non-intercept columns to mean 0 and sd 1. Returns the
    /// transformed dataset and the transform needed to map coefficients back.
    pub fn standardized(&self) -> (Dataset, Standardization) {
        let n = self.n() as f64;
        let mut x = self.x.clone();
        let p = self.p();
        let mut center = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            if Some(j) == self.intercept_col {
                continue;
            }
            let col = self.x.column(j);
            let m = col.sum() / n;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 0.0 {
                center[j] = m;
                scale[j] = s;
                for i in 0..self.n() {
                    x[[i, j]] = (self.x[[i, j]] - m) / s;
                }
            }
        }
        let ds = Dataset {
            y: self.y.clone(),
            x,
            col_names: self.col_names.clone(),
            groups: self.groups.clone(),
            re_terms: self.re_terms.clone(),
            intercept_col: self.intercept_col,
        };
        (
            ds,
            Standardization {
                center,
                scale,
                intercept_col: self.intercept_col,
            },
        )
    }
}

/// Column transform recorded by [`Dataset::standardized`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub intercept_col: Option<usize>,
}

impl Standardization {
    /// Map coefficients estimated on the standardized scale back to the
    /// original covariate scale.
    pub fn beta_to_original(&self, beta_std: &Array1<f64>) -> Array1<f64> {
        let mut beta = beta_std.clone();
        let mut intercept_shift = 0.0;
        for j in 0..beta.len() {
            if Some(j) == self.intercept_col {
                continue;
            }
            beta[j] = beta_std[j] / self.scale[j];
            intercept_shift += beta[j] * self.center[j];
        }
        if let Some(ic) = self.intercept_col {
            beta[ic] -= intercept_shift;
        }
        beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockStructure {
    ScalarIdentity,
    Diagonal,
    UnstructuredLower,
}

impl BlockStructure {
    pub fn n_params(&self, n_vars: usize) -> usize {
        match self {
            BlockStructure::ScalarIdentity => 1,
            BlockStructure::Diagonal => n_vars,
            BlockStructure::UnstructuredLower => n_vars * (n_vars + 1) / 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TemplateBlock {
    pub factor: usize,
    pub columns: Vec<usize>,
    pub structure: BlockStructure,
}

/// Declarative map from theta to the block-diagonal Cholesky factor of the
/// random-effects covariance. One block per random-effect term; the per-level
/// factor is repeated across the levels of the block's grouping factor.
#[derive(Debug, Clone)]
pub struct CovarianceTemplate {
    pub blocks: Vec<TemplateBlock>,
    d: usize,
}

pub const DEFAULT_MAX_THETA_DIM: usize = 10;

impl CovarianceTemplate {
    pub fn new(dataset: &Dataset, structures: &[BlockStructure]) -> Result<Self> {
        Self::with_max_dim(dataset, structures, DEFAULT_MAX_THETA_DIM)
    }

    pub fn with_max_dim(
        dataset: &Dataset,
        structures: &[BlockStructure],
        max_d: usize,
    ) -> Result<Self> {
        if structures.len() != dataset.re_terms.len() {
            return Err(Error::invalid(format!(
                "{} covariance structures given for {} random-effect terms",
                structures.len(),
                dataset.re_terms.len()
            )));
        }
        let blocks: Vec<TemplateBlock> = dataset
            .re_terms
            .iter()
            .zip(structures)
            .map(|(t, &s)| TemplateBlock {
                factor: t.factor,
                columns: t.columns.clone(),
                structure: s,
            })
            .collect();
        let d = blocks
            .iter()
            .map(|b| b.structure.n_params(b.columns.len()))
            .sum();
        if d == 0 {
            return Err(Error::invalid("covariance template has no parameters"));
        }
        if d > max_d {
            return Err(Error::invalid(format!(
                "covariance dimension d = {d} exceeds the limit {max_d}"
            )));
        }
        Ok(CovarianceTemplate { blocks, d })
    }

    /// Number of free covariance parameters.
    pub fn n_params(&self) -> usize {
        self.d
    }

    /// Whether theta coordinate `l` sits on the diagonal of the factor and is
    /// therefore constrained nonnegative.
    pub fn is_diagonal_param(&self, l: usize) -> bool {
        let mut off = 0;
        for b in &self.blocks {
            let k = b.columns.len();
            let np = b.structure.n_params(k);
            if l < off + np {
                let local = l - off;
                return match b.structure {
                    BlockStructure::ScalarIdentity | BlockStructure::Diagonal => true,
                    BlockStructure::UnstructuredLower => {
                        // row-major lower order: (0,0),(1,0),(1,1),(2,0),...
                        let mut idx = 0;
                        for row in 0..k {
                            for col in 0..=row {
                                if idx == local {
                                    return row == col;
                                }
                                idx += 1;
                            }
                        }
                        unreachable!()
                    }
                };
            }
            off += np;
        }
        panic!("theta index {l} out of range (d = {})", self.d);
    }

    /// Build the per-level lower factors, one k x k matrix per block.
    pub fn lambda_blocks(&self, theta: &[f64]) -> Result<Vec<Array2<f64>>> {
        if theta.len() != self.d {
            return Err(Error::invalid(format!(
                "theta has length {} but the template needs {}",
                theta.len(),
                self.d
            )));
        }
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut off = 0;
        for b in &self.blocks {
            let k = b.columns.len();
            let mut l = Array2::zeros((k, k));
            match b.structure {
                BlockStructure::ScalarIdentity => {
                    for j in 0..k {
                        l[[j, j]] = theta[off];
                    }
                    off += 1;
                }
                BlockStructure::Diagonal => {
                    for j in 0..k {
                        l[[j, j]] = theta[off + j];
                    }
                    off += k;
                }
                BlockStructure::UnstructuredLower => {
                    for row in 0..k {
                        for col in 0..=row {
                            l[[row, col]] = theta[off];
                            off += 1;
                        }
                    }
                }
            }
            out.push(l);
        }
        Ok(out)
    }

    /// Per-level covariance blocks L L^T (for reporting and tests).
    pub fn sigma_blocks(&self, theta: &[f64]) -> Result<Vec<Array2<f64>>> {
        Ok(self
            .lambda_blocks(theta)?
            .iter()
            .map(|l| l.dot(&l.t()))
            .collect())
    }

    /// A neutral starting value: unit diagonal entries, zero off-diagonals.
    pub fn theta_start(&self) -> Vec<f64> {
        (0..self.d)
            .map(|l| if self.is_diagonal_param(l) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// The full parameter vector iterated by the optimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamState {
    pub beta: Array1<f64>,
    pub theta: Vec<f64>,
    pub phi: f64,
    pub penalty_mask: Vec<bool>,
}

impl ParamState {
    pub fn active_set(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Penalize every column except the intercept and the columns that carry a
/// random effect.
pub fn default_penalty_mask(dataset: &Dataset) -> Vec<bool> {
    let mut mask = vec![true; dataset.p()];
    if let Some(ic) = dataset.intercept_col {
        mask[ic] = false;
    }
    for t in &dataset.re_terms {
        for &c in &t.columns {
            mask[c] = false;
        }
    }
    mask
}

/// Random-effects design: the sparsity structure of Z together with the raw
/// column values. Column layout groups each level's variables contiguously:
/// column = block offset + level * n_vars + var.
#[derive(Debug, Clone)]
pub struct ZDesign {
    pub q: usize,
    pub blocks: Vec<ZBlock>,
}

#[derive(Debug, Clone)]
pub struct ZBlock {
    pub factor: usize,
    pub n_levels: usize,
    pub n_vars: usize,
    pub offset: usize,
    /// Per-observation values of the block's columns (n x n_vars).
    pub values: Array2<f64>,
    /// Per-observation level index.
    pub levels: Vec<usize>,
}

impl ZDesign {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let n = dataset.n();
        let mut blocks = Vec::with_capacity(dataset.re_terms.len());
        let mut offset = 0;
        for t in &dataset.re_terms {
            let g = &dataset.groups[t.factor];
            let k = t.columns.len();
            let mut values = Array2::zeros((n, k));
            for (j, &c) in t.columns.iter().enumerate() {
                values.column_mut(j).assign(&dataset.x.column(c));
            }
            blocks.push(ZBlock {
                factor: t.factor,
                n_levels: g.n_levels,
                n_vars: k,
                offset,
                values,
                levels: g.levels.clone(),
            });
            offset += g.n_levels * k;
        }
        if blocks.is_empty() {
            return Err(Error::invalid("model has no random effects"));
        }
        Ok(ZDesign { q: offset, blocks })
    }

    /// Dense Z for tests and small problems.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.blocks[0].values.nrows();
        let mut z = Array2::zeros((n, self.q));
        for b in &self.blocks {
            for i in 0..n {
                let base = b.offset + b.levels[i] * b.n_vars;
                for j in 0..b.n_vars {
                    z[[i, base + j]] = b.values[[i, j]];
                }
            }
        }
        z
    }

    /// Row i of M = Z Lambda restricted to one block: z_row * L (1 x k).
    #[inline]
    fn m_row_block(&self, b: &ZBlock, lam: &Array2<f64>, i: usize, out: &mut [f64]) {
        let k = b.n_vars;
        for c in 0..k {
            let mut s = 0.0;
            for r in c..k {
                s += b.values[[i, r]] * lam[[r, c]];
            }
            out[c] = s;
        }
    }

    /// (Z Lambda) u, length n.
    pub fn m_mul_u(&self, lambdas: &[Array2<f64>], u: &Array1<f64>) -> Array1<f64> {
        let n = self.blocks[0].values.nrows();
        let mut out = Array1::zeros(n);
        let mut row = [0.0; 8];
        for (b, lam) in self.blocks.iter().zip(lambdas) {
            let k = b.n_vars;
            for i in 0..n {
                self.m_row_block(b, lam, i, &mut row[..k]);
                let base = b.offset + b.levels[i] * k;
                let mut s = 0.0;
                for j in 0..k {
                    s += row[j] * u[base + j];
                }
                out[i] += s;
            }
        }
        out
    }

    /// (Z Lambda)^T diag(w) r, length q. Pass `None` for unit weights.
    pub fn mt_mul_weighted(
        &self,
        lambdas: &[Array2<f64>],
        w: Option<&Array1<f64>>,
        r: &Array1<f64>,
    ) -> Array1<f64> {
        let n = self.blocks[0].values.nrows();
        let mut out = Array1::zeros(self.q);
        let mut row = [0.0; 8];
        for (b, lam) in self.blocks.iter().zip(lambdas) {
            let k = b.n_vars;
            for i in 0..n {
                let wi = w.map_or(1.0, |w| w[i]) * r[i];
                if wi == 0.0 {
                    continue;
                }
                self.m_row_block(b, lam, i, &mut row[..k]);
                let base = b.offset + b.levels[i] * k;
                for j in 0..k {
                    out[base + j] += row[j] * wi;
                }
            }
        }
        out
    }

    /// Factorized system matrix (Z Lambda)^T W (Z Lambda) + I. Uses the
    /// block-diagonal fast path when a single random-effect term is present.
    pub fn normal_matrix(
        &self,
        lambdas: &[Array2<f64>],
        w: &Array1<f64>,
    ) -> Result<SystemMatrix> {
        let n = self.blocks[0].values.nrows();
        if self.blocks.len() == 1 {
            let b = &self.blocks[0];
            let lam = &lambdas[0];
            let k = b.n_vars;
            let mut mats = vec![Array2::zeros((k, k)); b.n_levels];
            let mut row = [0.0; 8];
            for i in 0..n {
                self.m_row_block(b, lam, i, &mut row[..k]);
                let a = &mut mats[b.levels[i]];
                let wi = w[i];
                for r in 0..k {
                    for c in 0..=r {
                        a[[r, c]] += wi * row[r] * row[c];
                    }
                }
            }
            for a in &mut mats {
                for j in 0..k {
                    a[[j, j]] += 1.0;
                }
                // mirror before factorizing
                for r in 0..k {
                    for c in (r + 1)..k {
                        a[[r, c]] = a[[c, r]];
                    }
                }
                cholesky_in_place(a)?;
            }
            Ok(SystemMatrix::BlockDiag { k, chols: mats })
        } else {
            let mut a = Array2::zeros((self.q, self.q));
            let mut rows: Vec<[f64; 8]> = vec![[0.0; 8]; self.blocks.len()];
            for i in 0..n {
                let wi = w[i];
                for (bi, (b, lam)) in self.blocks.iter().zip(lambdas).enumerate() {
                    let mut row = [0.0; 8];
                    self.m_row_block(b, lam, i, &mut row[..b.n_vars]);
                    rows[bi] = row;
                }
                for (bi, b) in self.blocks.iter().enumerate() {
                    let base_i = b.offset + b.levels[i] * b.n_vars;
                    for (bj, b2) in self.blocks.iter().enumerate() {
                        let base_j = b2.offset + b2.levels[i] * b2.n_vars;
                        for r in 0..b.n_vars {
                            for c in 0..b2.n_vars {
                                a[[base_i + r, base_j + c]] += wi * rows[bi][r] * rows[bj][c];
                            }
                        }
                    }
                }
            }
            for j in 0..self.q {
                a[[j, j]] += 1.0;
            }
            cholesky_in_place(&mut a)?;
            Ok(SystemMatrix::Dense { chol: a })
        }
    }
}

/// Cholesky-factorized PIRLS system matrix.
#[derive(Debug, Clone)]
pub enum SystemMatrix {
    BlockDiag { k: usize, chols: Vec<Array2<f64>> },
    Dense { chol: Array2<f64> },
}

impl SystemMatrix {
    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        match self {
            SystemMatrix::BlockDiag { k, chols } => {
                let mut out = Array1::zeros(b.len());
                for (lev, l) in chols.iter().enumerate() {
                    let base = lev * k;
                    let rhs = Array1::from_iter((0..*k).map(|j| b[base + j]));
                    let x = cholesky_solve(l, &rhs);
                    for j in 0..*k {
                        out[base + j] = x[j];
                    }
                }
                out
            }
            SystemMatrix::Dense { chol } => cholesky_solve(chol, b),
        }
    }

    pub fn logdet(&self) -> f64 {
        match self {
            SystemMatrix::BlockDiag { chols, .. } => chols.iter().map(cholesky_logdet).sum(),
            SystemMatrix::Dense { chol } => cholesky_logdet(chol),
        }
    }
}
