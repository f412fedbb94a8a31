//! Exponential-family and link-function primitives.
//!
//! Each family uses its canonical link (logit, log, identity). The linear
//! predictor is clamped before exponentiation so that conditional variances
//! stay bounded away from zero and the IRLS weights remain finite.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Clamp width for the linear predictor of the log/logit links.
const ETA_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    BernoulliLogit,
    PoissonLog,
    GaussianIdentity,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub dispersion_known: bool,
    pub phi_fixed: f64,
}

impl FamilySpec {
    pub fn bernoulli() -> Self {
        FamilySpec {
            kind: FamilyKind::BernoulliLogit,
            dispersion_known: true,
            phi_fixed: 1.0,
        }
    }

    pub fn poisson() -> Self {
        FamilySpec {
            kind: FamilyKind::PoissonLog,
            dispersion_known: true,
            phi_fixed: 1.0,
        }
    }

    /// Gaussian with unknown dispersion.
    pub fn gaussian() -> Self {
        FamilySpec {
            kind: FamilyKind::GaussianIdentity,
            dispersion_known: false,
            phi_fixed: 1.0,
        }
    }

    /// Gaussian with the dispersion held fixed at `phi`.
    pub fn gaussian_fixed_phi(phi: f64) -> Self {
        FamilySpec {
            kind: FamilyKind::GaussianIdentity,
            dispersion_known: true,
            phi_fixed: phi,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "bernoulli" | "binomial" | "bernoulli_logit" => Ok(Self::bernoulli()),
            "poisson" | "poisson_log" => Ok(Self::poisson()),
            "gaussian" | "normal" | "gaussian_identity" => Ok(Self::gaussian()),
            other => Err(Error::invalid(format!("unknown family `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::BernoulliLogit => "bernoulli",
            FamilyKind::PoissonLog => "poisson",
            FamilyKind::GaussianIdentity => "gaussian",
        }
    }

    fn check_mu(&self, mu: f64) -> Result<()> {
        let ok = match self.kind {
            FamilyKind::BernoulliLogit => mu > 0.0 && mu < 1.0,
            FamilyKind::PoissonLog => mu > 0.0,
            FamilyKind::GaussianIdentity => mu.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "mean {mu} outside the {} mean domain",
                self.name()
            )))
        }
    }

    /// Canonical link g(mu).
    pub fn link(&self, mu: f64) -> Result<f64> {
        self.check_mu(mu)?;
        Ok(match self.kind {
            FamilyKind::BernoulliLogit => (mu / (1.0 - mu)).ln(),
            FamilyKind::PoissonLog => mu.ln(),
            FamilyKind::GaussianIdentity => mu,
        })
    }

    /// Inverse link, with the linear predictor clamped to keep v(mu) > 0.
    pub fn link_inv(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::BernoulliLogit => {
                let e = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
                1.0 / (1.0 + (-e).exp())
            }
            FamilyKind::PoissonLog => eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp(),
            FamilyKind::GaussianIdentity => eta,
        }
    }

    /// g'(mu).
    pub fn link_deriv(&self, mu: f64) -> Result<f64> {
        self.check_mu(mu)?;
        Ok(match self.kind {
            FamilyKind::BernoulliLogit => 1.0 / (mu * (1.0 - mu)),
            FamilyKind::PoissonLog => 1.0 / mu,
            FamilyKind::GaussianIdentity => 1.0,
        })
    }

    /// Conditional variance function v(mu).
    pub fn variance(&self, mu: f64) -> Result<f64> {
        self.check_mu(mu)?;
        Ok(match self.kind {
            FamilyKind::BernoulliLogit => mu * (1.0 - mu),
            FamilyKind::PoissonLog => mu,
            FamilyKind::GaussianIdentity => 1.0,
        })
    }

    pub fn check_y(&self, y: f64) -> Result<()> {
        let ok = match self.kind {
            FamilyKind::BernoulliLogit => y == 0.0 || y == 1.0,
            FamilyKind::PoissonLog => y >= 0.0 && y.fract() == 0.0,
            FamilyKind::GaussianIdentity => y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "response value {y} invalid for the {} family",
                self.name()
            )))
        }
    }

    /// -2 times the conditional log-likelihood contribution of one observation.
    pub fn neg2_loglik_term(&self, y: f64, mu: f64, phi: f64) -> Result<f64> {
        self.check_y(y)?;
        self.check_mu(mu)?;
        if phi <= 0.0 {
            return Err(Error::invalid(format!("dispersion {phi} must be positive")));
        }
        Ok(self.neg2_loglik_term_unchecked(y, mu, phi))
    }

    /// Hot-path variant without input validation; callers guarantee the domain.
    #[inline]
    pub fn neg2_loglik_term_unchecked(&self, y: f64, mu: f64, phi: f64) -> f64 {
        match self.kind {
            FamilyKind::BernoulliLogit => -2.0 * (y * mu.ln() + (1.0 - y) * (1.0 - mu).ln()),
            FamilyKind::PoissonLog => -2.0 * (y * mu.ln() - mu - ln_gamma(y + 1.0)),
            FamilyKind::GaussianIdentity => {
                (y - mu) * (y - mu) / phi + (2.0 * std::f64::consts::PI * phi).ln()
            }
        }
    }

    /// The dispersion to use when none is being estimated.
    pub fn phi_default(&self) -> f64 {
        self.phi_fixed
    }
}
