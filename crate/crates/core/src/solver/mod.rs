//! Stationary and transient analysis of the moment and MGF equations of a
//! piecewise-linear SHS.
//!
//! For a state `q` and a multi-index `k` of order `r`, the quantities are
//! `v^(m)_{q,k} = E[Π_j x_{k_j}^{m_j} 1{q(t)=q}]` and
//! `v^(s)_{q,k} = E[exp(Σ_j s_j x_{k_j}) 1{q(t)=q}]`. They are collected per
//! state into order-`r` [`DenseTensor`]s over all multi-indices at once.
//!
//! [`Solver`] caches model structure (transition gather plans, spectra of the
//! coupling matrices, the stationary distribution) so repeated queries on one
//! model are cheap. Memoization of recursive sub-solutions is per call.

mod assembly;
mod mgf;
mod moments;
mod stability;
mod stationary;
mod transient;

use std::cell::RefCell;
use std::collections::HashMap;

use thiserror::Error;

use crate::model::{ModelError, ShsModel};
use crate::tensor::{DenseTensor, TensorError};

pub use self::stability::StabilityReport;
pub use self::stationary::stationary_distribution;
pub use self::transient::{
    transient_integrate, Trajectory, TransientInit, TransientOptions, TransientQuery, TransientSample,
};

use self::assembly::Plan;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("chain not ergodic: balance equations are singular")]
    NotErgodic,
    #[error("stationary distribution not strictly positive (state {state}: {value:e})")]
    NotStrictlyPositive { state: usize, value: f64 },
    #[error("unstable configuration: the order-{order} fixed-point system is singular")]
    Singular { order: usize },
    #[error("no positive fixed point: first-moment entry {value:e} at state {state}, index {index:?}")]
    NoPositiveFixedPoint {
        state: usize,
        index: Vec<usize>,
        value: f64,
    },
    #[error("first moments of order {order} are not stable (max real eigenvalue {max_real_eigenvalue:e})")]
    UnstableMoments { order: usize, max_real_eigenvalue: f64 },
    #[error("s outside stability region: max real eigenvalue {max_real_eigenvalue:e} (margin {margin:e})")]
    OutsideStabilityRegion { max_real_eigenvalue: f64, margin: f64 },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("system size {entries} exceeds the configured cap of {cap} unknowns; raise SolverConfig::max_unknowns or lower the order")]
    TooLarge { entries: usize, cap: usize },
    #[error("eigenvalue iteration did not converge")]
    EigenFailed,
    #[error("transient blow-up at t = {time}")]
    TransientBlowUp { time: f64 },
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Cap on `|Q|·n^r`, the unknown count of one fixed-point system.
    pub max_unknowns: usize,
    /// Highest tensor order accepted in a query.
    pub max_order: usize,
    /// An eigenvalue counts as stable when its real part is below `-stability_tol`.
    pub stability_tol: f64,
    /// Tolerance for "strictly positive" probabilities and first moments.
    pub positivity_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_unknowns: 1024,
            max_order: 4,
            stability_tol: 1e-9,
            positivity_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentQuery {
    /// Exponent of each position; the length is the tensor order.
    pub m: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MgfQuery {
    /// Distinct age indices, one per position of `s`.
    pub ages: Vec<usize>,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MomentSolution {
    pub m: Vec<u32>,
    /// Stationary `V̄^(m)_q` for every state.
    pub per_state: Vec<DenseTensor>,
    /// `Σ_q V̄^(m)_q`: stationary joint moments for every multi-index.
    pub aggregate: DenseTensor,
}

impl MomentSolution {
    /// `E[Π_j x_{ages_j}^{m_j}]`.
    pub fn value(&self, ages: &[usize]) -> Result<f64, SolverError> {
        Ok(self.aggregate.get(ages)?)
    }
}

#[derive(Debug, Clone)]
pub struct MgfSolution {
    pub ages: Vec<usize>,
    pub s: Vec<f64>,
    /// `v̄^(s)_{q,K}` for every state.
    pub per_state: Vec<f64>,
    /// `M(s) = Σ_q v̄^(s)_{q,K}`.
    pub value: f64,
    /// Largest real part among the eigenvalues of the systems the queried
    /// entries depend on, shift included.
    pub max_real_eigenvalue: f64,
}

/// Generic fixed-point engine for one model.
pub struct Solver<'m> {
    model: &'m ShsModel,
    config: SolverConfig,
    pi: Vec<f64>,
    exit: Vec<f64>,
    plans: RefCell<HashMap<usize, std::rc::Rc<Plan>>>,
    abscissa: RefCell<HashMap<usize, f64>>,
}

impl<'m> Solver<'m> {
    /// Validates the model and computes its stationary distribution.
    pub fn new(model: &'m ShsModel, config: SolverConfig) -> Result<Self, SolverError> {
        model.check()?;
        let pi = stationary_distribution_with(model, &config)?;
        Ok(Self::with_distribution(model, config, pi))
    }

    /// Uses a caller-supplied stationary distribution.
    pub fn with_distribution(model: &'m ShsModel, config: SolverConfig, pi: Vec<f64>) -> Self {
        Self {
            exit: model.exit_rates(),
            model,
            config,
            pi,
            plans: RefCell::new(HashMap::new()),
            abscissa: RefCell::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &ShsModel {
        self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn distribution(&self) -> &[f64] {
        &self.pi
    }

    pub fn exit_rates(&self) -> &[f64] {
        &self.exit
    }

    fn check_order(&self, order: usize) -> Result<(), SolverError> {
        if order == 0 {
            return Err(SolverError::InvalidQuery("query order must be at least 1".into()));
        }
        if order > self.config.max_order {
            return Err(SolverError::InvalidQuery(format!(
                "order {order} exceeds the configured maximum {}",
                self.config.max_order
            )));
        }
        let per = crate::tensor::entry_count(order, self.model.age_dim());
        let entries = per.and_then(|p| p.checked_mul(self.model.num_states()));
        match entries {
            Some(e) if e <= self.config.max_unknowns => Ok(()),
            Some(e) => Err(SolverError::TooLarge {
                entries: e,
                cap: self.config.max_unknowns,
            }),
            None => Err(SolverError::TooLarge {
                entries: usize::MAX,
                cap: self.config.max_unknowns,
            }),
        }
    }

    fn plan(&self, order: usize) -> Result<std::rc::Rc<Plan>, SolverError> {
        self.check_order(order)?;
        if let Some(p) = self.plans.borrow().get(&order) {
            return Ok(p.clone());
        }
        let plan = std::rc::Rc::new(Plan::new(self.model, order));
        self.plans.borrow_mut().insert(order, plan.clone());
        Ok(plan)
    }

    fn check_ages(&self, ages: &[usize]) -> Result<(), SolverError> {
        for (i, &a) in ages.iter().enumerate() {
            if a >= self.model.age_dim() {
                return Err(SolverError::InvalidQuery(format!(
                    "age index {a} out of range (age dimension {})",
                    self.model.age_dim()
                )));
            }
            if ages[..i].contains(&a) {
                return Err(SolverError::InvalidQuery(format!("age index {a} repeated in K")));
            }
        }
        Ok(())
    }

    /// Per-state tensors filled with the stationary probabilities.
    fn probability_tensors(&self, order: usize) -> Result<Vec<DenseTensor>, SolverError> {
        self.pi
            .iter()
            .map(|&p| DenseTensor::filled(order, self.model.age_dim(), p).map_err(Into::into))
            .collect()
    }

    /// `Σ_{l into q} λ_l · (V_{source(l)} contracted with A_l along every mode)`,
    /// evaluated through the tensor reset contraction.
    pub fn incoming_term(&self, tensors: &[DenseTensor]) -> Result<Vec<DenseTensor>, SolverError> {
        let order = tensors
            .first()
            .map(DenseTensor::order)
            .ok_or_else(|| SolverError::InvalidQuery("no tensors".into()))?;
        let mut out = vec![DenseTensor::zeros(order, self.model.age_dim())?; self.model.num_states()];
        for t in self.model.transitions() {
            let contracted = tensors[t.source].reset_contraction(&t.reset.to_matrix())?;
            out[t.target] = out[t.target].axpy(t.rate, &contracted)?;
        }
        Ok(out)
    }
}

/// Stationary distribution with an explicit configuration.
pub fn stationary_distribution_with(model: &ShsModel, config: &SolverConfig) -> Result<Vec<f64>, SolverError> {
    stationary::solve(model, config.positivity_tol)
}

/// Solves the stationary joint moments for `query` on a fresh [`Solver`].
pub fn solve_joint_moments(
    model: &ShsModel,
    pi: &[f64],
    query: &MomentQuery,
    config: &SolverConfig,
) -> Result<MomentSolution, SolverError> {
    model.check()?;
    Solver::with_distribution(model, config.clone(), pi.to_vec()).joint_moments(query)
}

/// Solves the stationary joint MGF for `query` on a fresh [`Solver`].
pub fn solve_joint_mgf(
    model: &ShsModel,
    pi: &[f64],
    query: &MgfQuery,
    config: &SolverConfig,
) -> Result<MgfSolution, SolverError> {
    model.check()?;
    Solver::with_distribution(model, config.clone(), pi.to_vec()).joint_mgf(query)
}

/// Spectral stability report of the order-`order` system, optionally shifted by `Σ s_j`.
pub fn stability_check(
    model: &ShsModel,
    order: usize,
    s: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<StabilityReport, SolverError> {
    Solver::new(model, config.clone())?.stability(order, s)
}
