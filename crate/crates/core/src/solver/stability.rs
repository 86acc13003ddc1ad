use nalgebra::DMatrix;
use serde::Serialize;

use super::{Solver, SolverError};

/// Largest real part among the eigenvalues of `m`.
pub(crate) fn max_real_part(m: DMatrix<f64>) -> Result<f64, SolverError> {
    if m.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let schur = m.try_schur(1e-14, 10_000).ok_or(SolverError::EigenFailed)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub order: usize,
    /// `Σ s_j` added to the diagonal (0 for the moment systems).
    pub shift: f64,
    /// Largest real part among the eigenvalues of `B - D + shift·I`.
    #[serde(rename = "max_eig_real")]
    pub max_real_eigenvalue: f64,
    pub stable: bool,
    /// Whether the first-moment systems of orders `1..=order` have a
    /// nonnegative solution with positive aggregates.
    pub positive_first_moments: bool,
}

impl Solver<'_> {
    /// Spectral abscissa of `B - D` for the given order (cached).
    pub(crate) fn abscissa(&self, order: usize) -> Result<f64, SolverError> {
        if let Some(&a) = self.abscissa.borrow().get(&order) {
            return Ok(a);
        }
        let plan = self.plan(order)?;
        let a = max_real_part(-plan.system(&self.exit, 0.0))?;
        self.abscissa.borrow_mut().insert(order, a);
        Ok(a)
    }

    pub fn stability(&self, order: usize, s: Option<&[f64]>) -> Result<StabilityReport, SolverError> {
        let shift = match s {
            Some(s) => {
                if s.len() != order {
                    return Err(SolverError::InvalidQuery(format!(
                        "s has {} entries for order {order}",
                        s.len()
                    )));
                }
                self.check_s(s)?;
                s.iter().sum()
            }
            None => 0.0,
        };
        let max_real_eigenvalue = self.abscissa(order)? + shift;
        let mut positive_first_moments = true;
        for r in 1..=order {
            match self.moment_tensors(&vec![1; r]) {
                Ok(_) => {}
                Err(SolverError::NoPositiveFixedPoint { .. }) | Err(SolverError::Singular { .. }) => {
                    positive_first_moments = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(StabilityReport {
            order,
            shift,
            max_real_eigenvalue,
            stable: max_real_eigenvalue < -self.config.stability_tol,
            positive_first_moments,
        })
    }
}
