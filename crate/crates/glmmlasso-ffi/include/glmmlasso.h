/* C interface for the glmmlasso mixed-model solver.
 *
 * All functions return a status code (GLMM_OK on success) and communicate
 * results through opaque handles and caller-provided buffers. The message
 * for the most recent error on the calling thread is available through
 * glmm_last_error(); the pointer stays valid until the next failing call
 * on the same thread. Handles must be released with the matching _free
 * function; passing NULL to a _free function is a no-op.
 */

#ifndef GLMMLASSO_H
#define GLMMLASSO_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define GLMM_OK 0
#define GLMM_ERR_INVALID 1        /* bad input data or arguments */
#define GLMM_ERR_NONCONVERGENCE 2 /* iteration limit reached */
#define GLMM_ERR_NUMERICAL 3      /* numerical failure */
#define GLMM_ERR_UNSUPPORTED 4    /* model outside the supported class */
#define GLMM_ERR_IO 5             /* file system error */
#define GLMM_ERR_NULL 6           /* required pointer was NULL */
#define GLMM_ERR_PANIC 7          /* internal fault caught at the boundary */

/* Covariance structure codes */
#define GLMM_STRUCTURE_SCALAR 0       /* one variance for all effects */
#define GLMM_STRUCTURE_DIAGONAL 1     /* one variance per effect */
#define GLMM_STRUCTURE_UNSTRUCTURED 2 /* full lower-triangular factor */

/* Response family codes (canonical links) */
#define GLMM_FAMILY_BERNOULLI 0 /* logit */
#define GLMM_FAMILY_POISSON 1   /* log */
#define GLMM_FAMILY_GAUSSIAN 2  /* identity, dispersion estimated */

/* Gradient mode codes */
#define GLMM_MODE_EXACT 0
#define GLMM_MODE_APPROXIMATE 1

/* Information criterion codes */
#define GLMM_CRITERION_AIC 0
#define GLMM_CRITERION_BIC 1

typedef struct GlmmProblem GlmmProblem;
typedef struct GlmmFit GlmmFit;

const char *glmm_last_error(void);

/* Build a fit problem from dense column data.
 *
 * y: response, length n. x: row-major n x p design matrix including an
 * explicit intercept column if one is wanted. group: n integer level codes
 * for the single grouping factor. re_columns: n_re column indices carrying
 * random effects. The intercept column and every random-effect column are
 * left unpenalized; all other columns are lasso-penalized.
 */
int glmm_problem_new(const double *y, const double *x, int64_t n, int64_t p,
                     const int64_t *group, const int64_t *re_columns,
                     int64_t n_re, int structure, int family,
                     GlmmProblem **out);
void glmm_problem_free(GlmmProblem *problem);

/* Dimension accessors; return -1 on NULL. */
int64_t glmm_problem_p(const GlmmProblem *problem); /* fixed effects       */
int64_t glmm_problem_q(const GlmmProblem *problem); /* random effects      */
int64_t glmm_problem_d(const GlmmProblem *problem); /* covariance params   */

/* Fit at one penalty value lambda >= 0. */
int glmm_fit(const GlmmProblem *problem, double lambda, int mode,
             GlmmFit **out);

/* Fit a descending penalty path of n_lambda points and keep the best
 * record by the chosen information criterion. */
int glmm_fit_path(const GlmmProblem *problem, int mode, int n_lambda,
                  int criterion, GlmmFit **out);
void glmm_fit_free(GlmmFit *fit);

/* Copy results into caller buffers; len must match the exact dimension. */
int glmm_fit_beta(const GlmmFit *fit, double *out, int64_t len);  /* len = p */
int glmm_fit_theta(const GlmmFit *fit, double *out, int64_t len); /* len = d */

/* Scalar accessors; NaN (or -1 for the integer ones) on NULL. */
double glmm_fit_objective(const GlmmFit *fit); /* penalized objective */
double glmm_fit_lambda(const GlmmFit *fit);
double glmm_fit_phi(const GlmmFit *fit);
int glmm_fit_converged(const GlmmFit *fit); /* 1 converged, 0 not */
int64_t glmm_fit_n_active(const GlmmFit *fit);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* GLMMLASSO_H */
