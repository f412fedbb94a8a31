//! A fully specified fit problem: data, covariance template, family and the
//! derived random-effects design. Immutable after construction and shareable
//! across threads.

use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::model::{default_penalty_mask, CovarianceTemplate, Dataset, ParamState, ZDesign};
use ndarray::Array1;

#[derive(Debug, Clone)]
pub struct Problem {
    pub dataset: Dataset,
    pub template: CovarianceTemplate,
    pub family: FamilySpec,
    pub z: ZDesign,
    pub penalty_mask: Vec<bool>,
}

impl Problem {
    pub fn new(dataset: Dataset, template: CovarianceTemplate, family: FamilySpec) -> Result<Self> {
        for &y in dataset.y.iter() {
            family.check_y(y)?;
        }
        if !family.dispersion_known && family.name() != "gaussian" {
            return Err(Error::invalid(
                "unknown dispersion is only supported for the gaussian family",
            ));
        }
        let z = ZDesign::new(&dataset)?;
        let penalty_mask = default_penalty_mask(&dataset);
        Ok(Problem {
            dataset,
            template,
            family,
            z,
            penalty_mask,
        })
    }

    pub fn n(&self) -> usize {
        self.dataset.n()
    }

    pub fn p(&self) -> usize {
        self.dataset.p()
    }

    pub fn q(&self) -> usize {
        self.z.q
    }

    /// A neutral parameter state: zero coefficients, unit-diagonal theta.
    pub fn zero_state(&self) -> ParamState {
        ParamState {
            beta: Array1::zeros(self.p()),
            theta: self.template.theta_start(),
            phi: self.family.phi_default(),
            penalty_mask: self.penalty_mask.clone(),
        }
    }
}
