//! C ABI for the glmmlasso solver.
//!
//! All functions return an integer status code (`GLMM_OK` = 0 on success)
//! and communicate results through opaque handles and caller-provided
//! buffers. The last error message is kept in thread-local storage and can
//! be read with [`glmm_last_error`]. Panics are caught at the boundary and
//! reported as `GLMM_ERR_PANIC`.
//!
//! The matching header lives at `include/glmmlasso.h`; pointer validity and
//! buffer-length requirements are documented there rather than repeated on
//! every function.
#![allow(clippy::missing_safety_doc)]

use glmmlasso::error::Error;
use glmmlasso::family::FamilySpec;
use glmmlasso::model::{BlockStructure, CovarianceTemplate, Dataset, GroupingFactor, ReTerm};
use glmmlasso::optimizer::{self, FitRecord, GradientMode, OptimizerConfig};
use glmmlasso::problem::Problem;
use glmmlasso::selection;
use ndarray::{Array1, Array2};
use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

pub const GLMM_OK: c_int = 0;
pub const GLMM_ERR_INVALID: c_int = 1;
pub const GLMM_ERR_NONCONVERGENCE: c_int = 2;
pub const GLMM_ERR_NUMERICAL: c_int = 3;
pub const GLMM_ERR_UNSUPPORTED: c_int = 4;
pub const GLMM_ERR_IO: c_int = 5;
pub const GLMM_ERR_NULL: c_int = 6;
pub const GLMM_ERR_PANIC: c_int = 7;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn code_for(e: &Error) -> c_int {
    match e {
        Error::InvalidInput(_) => GLMM_ERR_INVALID,
        Error::NonConvergence { .. } => GLMM_ERR_NONCONVERGENCE,
        Error::Numerical(_) => GLMM_ERR_NUMERICAL,
        Error::Unsupported(_) => GLMM_ERR_UNSUPPORTED,
        Error::Io(_) => GLMM_ERR_IO,
    }
}

fn guard<F: FnOnce() -> c_int>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            GLMM_ERR_PANIC
        }
    }
}

/// Message for the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn glmm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

pub struct GlmmProblem {
    problem: Problem,
}

pub struct GlmmFit {
    record: FitRecord,
    p: usize,
}

/// Build a fit problem from dense column data.
///
/// `x` is row-major n x p and must contain an explicit intercept column if
/// one is wanted. `group` holds n level codes (any integers). `re_columns`
/// lists the `n_re` column indices carrying random effects under the single
/// grouping factor. `structure`: 0 scalar, 1 diagonal, 2 unstructured
/// lower-triangular. `family`: 0 bernoulli/logit, 1 poisson/log,
/// 2 gaussian/identity (dispersion estimated).
#[no_mangle]
pub unsafe extern "C" fn glmm_problem_new(
    y: *const c_double,
    x: *const c_double,
    n: i64,
    p: i64,
    group: *const i64,
    re_columns: *const i64,
    n_re: i64,
    structure: c_int,
    family: c_int,
    out: *mut *mut GlmmProblem,
) -> c_int {
    guard(|| {
        if y.is_null() || x.is_null() || group.is_null() || re_columns.is_null() || out.is_null() {
            set_error("null pointer argument");
            return GLMM_ERR_NULL;
        }
        if n <= 0 || p <= 0 || n_re <= 0 {
            set_error("dimensions must be positive");
            return GLMM_ERR_INVALID;
        }
        let (n, p, n_re) = (n as usize, p as usize, n_re as usize);
        let y = Array1::from_vec(std::slice::from_raw_parts(y, n).to_vec());
        let x_flat = std::slice::from_raw_parts(x, n * p);
        let x = match Array2::from_shape_vec((n, p), x_flat.to_vec()) {
            Ok(m) => m,
            Err(e) => {
                set_error(&format!("bad design matrix: {e}"));
                return GLMM_ERR_INVALID;
            }
        };
        let levels: Vec<i64> = std::slice::from_raw_parts(group, n).to_vec();
        let cols: Vec<usize> = std::slice::from_raw_parts(re_columns, n_re)
            .iter()
            .map(|&c| c as usize)
            .collect();
        let structure = match structure {
            0 => BlockStructure::ScalarIdentity,
            1 => BlockStructure::Diagonal,
            2 => BlockStructure::UnstructuredLower,
            other => {
                set_error(&format!("unknown structure code {other}"));
                return GLMM_ERR_INVALID;
            }
        };
        let family = match family {
            0 => FamilySpec::bernoulli(),
            1 => FamilySpec::poisson(),
            2 => FamilySpec::gaussian(),
            other => {
                set_error(&format!("unknown family code {other}"));
                return GLMM_ERR_INVALID;
            }
        };

        let labels: Vec<String> = levels.iter().map(|l| l.to_string()).collect();
        let factor = GroupingFactor::from_labels("group", &labels);
        let dataset = match Dataset::new(
            y,
            x,
            (0..p).map(|j| format!("x{j}")).collect(),
            vec![factor],
            vec![ReTerm { factor: 0, columns: cols }],
        ) {
            Ok(d) => d,
            Err(e) => {
                set_error(&e.to_string());
                return code_for(&e);
            }
        };
        let template = match CovarianceTemplate::new(&dataset, &[structure]) {
            Ok(t) => t,
            Err(e) => {
                set_error(&e.to_string());
                return code_for(&e);
            }
        };
        match Problem::new(dataset, template, family) {
            Ok(problem) => {
                *out = Box::into_raw(Box::new(GlmmProblem { problem }));
                GLMM_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_for(&e)
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn glmm_problem_free(handle: *mut GlmmProblem) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

#[no_mangle]
pub unsafe extern "C" fn glmm_problem_p(handle: *const GlmmProblem) -> i64 {
    if handle.is_null() {
        return -1;
    }
    (*handle).problem.p() as i64
}

#[no_mangle]
pub unsafe extern "C" fn glmm_problem_q(handle: *const GlmmProblem) -> i64 {
    if handle.is_null() {
        return -1;
    }
    (*handle).problem.q() as i64
}

/// Number of covariance parameters.
#[no_mangle]
pub unsafe extern "C" fn glmm_problem_d(handle: *const GlmmProblem) -> i64 {
    if handle.is_null() {
        return -1;
    }
    (*handle).problem.template.n_params() as i64
}

fn config_for(mode: c_int) -> Option<OptimizerConfig> {
    let mut cfg = OptimizerConfig::default();
    cfg.mode = match mode {
        0 => GradientMode::Exact,
        1 => GradientMode::Approximate,
        _ => return None,
    };
    Some(cfg)
}

/// Fit at a single penalty value. `mode`: 0 exact, 1 approximate.
#[no_mangle]
pub unsafe extern "C" fn glmm_fit(
    handle: *const GlmmProblem,
    lambda: c_double,
    mode: c_int,
    out: *mut *mut GlmmFit,
) -> c_int {
    guard(|| {
        if handle.is_null() || out.is_null() {
            set_error("null pointer argument");
            return GLMM_ERR_NULL;
        }
        if !(lambda >= 0.0) {
            set_error("lambda must be nonnegative");
            return GLMM_ERR_INVALID;
        }
        let Some(config) = config_for(mode) else {
            set_error(&format!("unknown mode code {mode}"));
            return GLMM_ERR_INVALID;
        };
        let problem = &(*handle).problem;
        let result = optimizer::init_start(problem, &config)
            .and_then(|start| optimizer::fit(problem, lambda, &config, &start));
        match result {
            Ok(record) => {
                *out = Box::into_raw(Box::new(GlmmFit {
                    record,
                    p: problem.p(),
                }));
                GLMM_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_for(&e)
            }
        }
    })
}

/// Fit a descending penalty path and keep the best record by information
/// criterion (`criterion`: 0 AIC, 1 BIC).
#[no_mangle]
pub unsafe extern "C" fn glmm_fit_path(
    handle: *const GlmmProblem,
    mode: c_int,
    n_lambda: c_int,
    criterion: c_int,
    out: *mut *mut GlmmFit,
) -> c_int {
    guard(|| {
        if handle.is_null() || out.is_null() {
            set_error("null pointer argument");
            return GLMM_ERR_NULL;
        }
        if n_lambda < 2 {
            set_error("n_lambda must be at least 2");
            return GLMM_ERR_INVALID;
        }
        let Some(config) = config_for(mode) else {
            set_error(&format!("unknown mode code {mode}"));
            return GLMM_ERR_INVALID;
        };
        let problem = &(*handle).problem;
        let result = optimizer::init_start(problem, &config).and_then(|start| {
            selection::fit_path(problem, &config, &start, n_lambda as usize)
        });
        match result {
            Ok(path) => {
                let record = match criterion {
                    0 => path.aic_best().clone(),
                    1 => path.bic_best().clone(),
                    other => {
                        set_error(&format!("unknown criterion code {other}"));
                        return GLMM_ERR_INVALID;
                    }
                };
                *out = Box::into_raw(Box::new(GlmmFit {
                    record,
                    p: problem.p(),
                }));
                GLMM_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_for(&e)
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn glmm_fit_free(handle: *mut GlmmFit) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Copy the coefficient vector into `out` (length `len`, must equal p).
#[no_mangle]
pub unsafe extern "C" fn glmm_fit_beta(
    handle: *const GlmmFit,
    out: *mut c_double,
    len: i64,
) -> c_int {
    guard(|| {
        if handle.is_null() || out.is_null() {
            set_error("null pointer argument");
            return GLMM_ERR_NULL;
        }
        let fit = &*handle;
        if len as usize != fit.p {
            set_error(&format!("buffer length {len} but p = {}", fit.p));
            return GLMM_ERR_INVALID;
        }
        let dst = std::slice::from_raw_parts_mut(out, fit.p);
        dst.copy_from_slice(fit.record.psi.beta.as_slice().unwrap());
        GLMM_OK
    })
}

/// Copy the covariance parameters into `out` (length `len`, must equal d).
#[no_mangle]
pub unsafe extern "C" fn glmm_fit_theta(
    handle: *const GlmmFit,
    out: *mut c_double,
    len: i64,
) -> c_int {
    guard(|| {
        if handle.is_null() || out.is_null() {
            set_error("null pointer argument");
            return GLMM_ERR_NULL;
        }
        let fit = &*handle;
        let d = fit.record.psi.theta.len();
        if len as usize != d {
            set_error(&format!("buffer length {len} but d = {d}"));
            return GLMM_ERR_INVALID;
        }
        let dst = std::slice::from_raw_parts_mut(out, d);
        dst.copy_from_slice(&fit.record.psi.theta);
        GLMM_OK
    })
}

/// Penalized objective value at the fit.
#[no_mangle]
pub unsafe extern "C" fn glmm_fit_objective(handle: *const GlmmFit) -> c_double {
    if handle.is_null() {
        return f64::NAN;
    }
    (*handle).record.objective.q_la
}

#[no_mangle]
pub unsafe extern "C" fn glmm_fit_lambda(handle: *const GlmmFit) -> c_double {
    if handle.is_null() {
        return f64::NAN;
    }
    (*handle).record.lambda
}

#[no_mangle]
pub unsafe extern "C" fn glmm_fit_phi(handle: *const GlmmFit) -> c_double {
    if handle.is_null() {
        return f64::NAN;
    }
    (*handle).record.psi.phi
}

/// 1 when the optimizer certified convergence, 0 otherwise (-1 on null).
#[no_mangle]
pub unsafe extern "C" fn glmm_fit_converged(handle: *const GlmmFit) -> c_int {
    if handle.is_null() {
        return -1;
    }
    (*handle).record.converged as c_int
}

/// Number of nonzero coefficients (-1 on null).
#[no_mangle]
pub unsafe extern "C" fn glmm_fit_n_active(handle: *const GlmmFit) -> i64 {
    if handle.is_null() {
        return -1;
    }
    (*handle).record.active_set.len() as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use glmmlasso::simulate::SimDesign;
    use std::ffi::CStr;
    use std::ptr;

    fn flat_problem() -> (Vec<f64>, Vec<f64>, Vec<i64>, usize, usize) {
        let design = SimDesign {
            name: "ffi".into(),
            family: FamilySpec::bernoulli(),
            n_groups: 10,
            group_size: 8,
            p: 6,
            beta0: vec![0.1, 1.0, -1.0, 0.0, 0.0, 0.0],
            re_columns: vec![0],
            structure: BlockStructure::ScalarIdentity,
            theta0: vec![1.0],
        };
        let (problem, _) = design.instantiate(42, 0).unwrap();
        let n = problem.n();
        let p = problem.p();
        let mut x = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                x.push(problem.dataset.x[[i, j]]);
            }
        }
        let y = problem.dataset.y.to_vec();
        let group: Vec<i64> = problem.dataset.groups[0]
            .levels
            .iter()
            .map(|&l| l as i64)
            .collect();
        (y, x, group, n, p)
    }

    fn last_error_string() -> String {
        unsafe { CStr::from_ptr(glmm_last_error()).to_string_lossy().into_owned() }
    }

    #[test]
    fn problem_lifecycle_and_accessors() {
        let (y, x, group, n, p) = flat_problem();
        let re = [0i64];
        let mut handle: *mut GlmmProblem = ptr::null_mut();
        let code = unsafe {
            glmm_problem_new(
                y.as_ptr(),
                x.as_ptr(),
                n as i64,
                p as i64,
                group.as_ptr(),
                re.as_ptr(),
                1,
                0,
                0,
                &mut handle,
            )
        };
        assert_eq!(code, GLMM_OK);
        unsafe {
            assert_eq!(glmm_problem_p(handle), p as i64);
            assert_eq!(glmm_problem_q(handle), 10);
            assert_eq!(glmm_problem_d(handle), 1);
            glmm_problem_free(handle);
        }
    }

    #[test]
    fn null_and_invalid_arguments_are_rejected() {
        let (y, x, group, n, p) = flat_problem();
        let re = [0i64];
        let mut handle: *mut GlmmProblem = ptr::null_mut();
        unsafe {
            assert_eq!(
                glmm_problem_new(
                    ptr::null(),
                    x.as_ptr(),
                    n as i64,
                    p as i64,
                    group.as_ptr(),
                    re.as_ptr(),
                    1,
                    0,
                    0,
                    &mut handle
                ),
                GLMM_ERR_NULL
            );
            assert!(last_error_string().contains("null"));
            assert_eq!(
                glmm_problem_new(
                    y.as_ptr(),
                    x.as_ptr(),
                    n as i64,
                    p as i64,
                    group.as_ptr(),
                    re.as_ptr(),
                    1,
                    9,
                    0,
                    &mut handle
                ),
                GLMM_ERR_INVALID
            );
            assert!(last_error_string().contains("structure"));
            assert_eq!(
                glmm_problem_new(
                    y.as_ptr(),
                    x.as_ptr(),
                    n as i64,
                    p as i64,
                    group.as_ptr(),
                    re.as_ptr(),
                    1,
                    0,
                    7,
                    &mut handle
                ),
                GLMM_ERR_INVALID
            );
            assert!(last_error_string().contains("family"));
        }
    }

    #[test]
    fn fit_roundtrip_matches_library() {
        let (y, x, group, n, p) = flat_problem();
        let re = [0i64];
        let mut problem: *mut GlmmProblem = ptr::null_mut();
        let mut fit: *mut GlmmFit = ptr::null_mut();
        unsafe {
            assert_eq!(
                glmm_problem_new(
                    y.as_ptr(),
                    x.as_ptr(),
                    n as i64,
                    p as i64,
                    group.as_ptr(),
                    re.as_ptr(),
                    1,
                    0,
                    0,
                    &mut problem
                ),
                GLMM_OK
            );
            assert_eq!(glmm_fit(problem, 3.0, 1, &mut fit), GLMM_OK);
            assert_eq!(glmm_fit_converged(fit), 1);
            assert_abs_diff_eq!(glmm_fit_lambda(fit), 3.0);
            let mut beta = vec![0.0; p];
            assert_eq!(glmm_fit_beta(fit, beta.as_mut_ptr(), p as i64), GLMM_OK);
            let mut theta = vec![0.0; 1];
            assert_eq!(glmm_fit_theta(fit, theta.as_mut_ptr(), 1), GLMM_OK);
            assert!(theta[0] >= 0.0);
            assert!(glmm_fit_objective(fit).is_finite());

            // same fit through the Rust API
            let inner = &(*problem).problem;
            let config = config_for(1).unwrap();
            let start = optimizer::init_start(inner, &config).unwrap();
            let expect = optimizer::fit(inner, 3.0, &config, &start).unwrap();
            for j in 0..p {
                assert_abs_diff_eq!(beta[j], expect.psi.beta[j], epsilon = 1e-12);
            }
            assert_abs_diff_eq!(theta[0], expect.psi.theta[0], epsilon = 1e-12);

            // wrong buffer length
            assert_eq!(
                glmm_fit_beta(fit, beta.as_mut_ptr(), (p - 1) as i64),
                GLMM_ERR_INVALID
            );
            glmm_fit_free(fit);
            glmm_problem_free(problem);
        }
    }

    #[test]
    fn path_selection_by_bic() {
        let (y, x, group, n, p) = flat_problem();
        let re = [0i64];
        let mut problem: *mut GlmmProblem = ptr::null_mut();
        let mut fit: *mut GlmmFit = ptr::null_mut();
        unsafe {
            assert_eq!(
                glmm_problem_new(
                    y.as_ptr(),
                    x.as_ptr(),
                    n as i64,
                    p as i64,
                    group.as_ptr(),
                    re.as_ptr(),
                    1,
                    0,
                    0,
                    &mut problem
                ),
                GLMM_OK
            );
            assert_eq!(glmm_fit_path(problem, 1, 12, 1, &mut fit), GLMM_OK);
            let active = glmm_fit_n_active(fit);
            assert!(active >= 1 && active <= p as i64);
            assert!(glmm_fit_lambda(fit) > 0.0);
            glmm_fit_free(fit);
            glmm_problem_free(problem);
        }
    }
}
