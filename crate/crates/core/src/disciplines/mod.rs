//! Multi-source LCFS queues: SHS builders and closed forms.
//!
//! Sources are numbered `1..=N`. In the built models the discrete state `0`
//! is the idle server and state `i` means an update of source `i` is in
//! service. The age vector is `[x0, x1, .., xN]` where `x0` is the age of the
//! update in service and `xk` is the AoI of source `k`, so source `k` is age
//! index `k`.

mod closed_form;
mod correlation;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ResetMap, ShsModel, Transition};

pub use self::closed_form::{
    c_of_p, c_z, check_validity, cprime_of_p, joint_mgf, marginal_mgf, two_source_mgf, MAX_SET_SIZE,
};
pub use self::correlation::{
    correlation, correlation_two_source, cross_moment, mean, moments, pearson, rho_threshold_np, second_moment, Moments,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisciplineError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid source set: {0}")]
    InvalidIndex(String),
    #[error("s outside the validity region: {factor} = {value:e} is not positive")]
    OutsideRegion { factor: String, value: f64 },
    #[error("degenerate variance for source {0}")]
    DegenerateVariance(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSourceParams {
    lambdas: Vec<f64>,
    mu: f64,
}

impl MultiSourceParams {
    pub fn new(lambdas: Vec<f64>, mu: f64) -> Result<Self, DisciplineError> {
        if lambdas.is_empty() {
            return Err(DisciplineError::InvalidParams("at least one source is required".into()));
        }
        if let Some((i, l)) = lambdas.iter().enumerate().find(|(_, l)| !(l.is_finite() && **l > 0.0)) {
            return Err(DisciplineError::InvalidParams(format!(
                "lambda_{} = {l} must be positive and finite",
                i + 1
            )));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(DisciplineError::InvalidParams(format!(
                "mu = {mu} must be positive and finite"
            )));
        }
        Ok(Self { lambdas, mu })
    }

    /// Rates `λ_k = ρ_k μ`.
    pub fn from_loads(rhos: &[f64], mu: f64) -> Result<Self, DisciplineError> {
        Self::new(rhos.iter().map(|r| r * mu).collect(), mu)
    }

    pub fn sources(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `λ_k` for a 1-based source index.
    pub fn lambda(&self, k: usize) -> f64 {
        self.lambdas[k - 1]
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn total_rate(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    pub fn rho(&self) -> f64 {
        self.total_rate() / self.mu
    }

    pub fn rho_k(&self, k: usize) -> f64 {
        self.lambda(k) / self.mu
    }

    /// `ρ_{-Z}`: load of the sources outside `z`.
    pub fn rho_minus(&self, z: &[usize]) -> f64 {
        (1..=self.sources())
            .filter(|k| !z.contains(k))
            .map(|k| self.rho_k(k))
            .sum()
    }

    pub(crate) fn check_source(&self, k: usize) -> Result<(), DisciplineError> {
        if k == 0 || k > self.sources() {
            return Err(DisciplineError::InvalidIndex(format!(
                "source {k} out of range 1..={}",
                self.sources()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_set(&self, k: &[usize]) -> Result<(), DisciplineError> {
        if k.is_empty() {
            return Err(DisciplineError::InvalidIndex("K is empty".into()));
        }
        for (i, &src) in k.iter().enumerate() {
            self.check_source(src)?;
            if k[..i].contains(&src) {
                return Err(DisciplineError::InvalidIndex(format!("source {src} repeated")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Discipline {
    /// LCFS without preemption.
    Np,
    /// LCFS with source-agnostic preemption in service.
    Ps,
    /// LCFS with source-aware preemption in service.
    Sa,
}

impl Discipline {
    pub const ALL: [Discipline; 3] = [Discipline::Np, Discipline::Ps, Discipline::Sa];

    pub fn name(self) -> &'static str {
        match self {
            Discipline::Np => "np",
            Discipline::Ps => "ps",
            Discipline::Sa => "sa",
        }
    }
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Discipline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "np" | "lcfs-np" | "lcfs_np" => Ok(Discipline::Np),
            "ps" | "lcfs-ps" | "lcfs_ps" => Ok(Discipline::Ps),
            "sa" | "lcfs-sa" | "lcfs_sa" => Ok(Discipline::Sa),
            other => Err(format!("unknown discipline '{other}' (expected np, ps or sa)")),
        }
    }
}

/// Reset after an arrival of any source: the new update starts with age 0,
/// every AoI is kept.
fn arrival_reset(dim: usize) -> ResetMap {
    let mut cols: Vec<Option<usize>> = (0..dim).map(Some).collect();
    cols[0] = None;
    ResetMap::from_columns(dim, &cols).expect("valid columns")
}

/// Reset after delivering an update of source `i`: `x_i` takes the age of the
/// delivered update and `x0` becomes irrelevant.
fn delivery_reset(dim: usize, i: usize) -> ResetMap {
    let mut cols: Vec<Option<usize>> = (0..dim).map(Some).collect();
    cols[0] = None;
    cols[i] = Some(0);
    ResetMap::from_columns(dim, &cols).expect("valid columns")
}

/// The SHS of the multi-source queue with states `0..=N` and ages `x0..xN`.
pub fn build_model(params: &MultiSourceParams, discipline: Discipline) -> ShsModel {
    let n = params.sources();
    let dim = n + 1;
    let mu = params.mu();
    let mut transitions = Vec::new();
    let mut push = |id, source, target, rate, reset| {
        transitions.push(Transition {
            id,
            source,
            target,
            rate,
            reset,
        })
    };
    for i in 1..=n {
        let li = params.lambda(i);
        match discipline {
            Discipline::Np => {
                push(2 * i - 1, 0, i, li, arrival_reset(dim));
                push(2 * i, i, 0, mu, delivery_reset(dim, i));
            }
            Discipline::Ps => {
                let base = (2 + n) * i;
                push(base - (n + 1), 0, i, li, arrival_reset(dim));
                push(base - n, i, 0, mu, delivery_reset(dim, i));
                for j in 1..=n {
                    push(base - n + j, i, j, params.lambda(j), arrival_reset(dim));
                }
            }
            Discipline::Sa => {
                push(3 * i - 2, 0, i, li, arrival_reset(dim));
                push(3 * i - 1, i, 0, mu, delivery_reset(dim, i));
                push(3 * i, i, i, li, arrival_reset(dim));
            }
        }
    }
    ShsModel::new(n + 1, dim, transitions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym() -> MultiSourceParams {
        MultiSourceParams::new(vec![0.5, 0.5], 1.0).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(MultiSourceParams::new(vec![], 1.0).is_err());
        assert!(MultiSourceParams::new(vec![1.0, 0.0], 1.0).is_err());
        assert!(MultiSourceParams::new(vec![1.0], f64::INFINITY).is_err());
        let p = MultiSourceParams::new(vec![0.2, 0.3, 0.5], 2.0).unwrap();
        assert_eq!(p.rho(), 0.5);
        assert!((p.rho_minus(&[1, 3]) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn discipline_parsing() {
        assert_eq!("PS".parse::<Discipline>().unwrap(), Discipline::Ps);
        assert_eq!("lcfs-sa".parse::<Discipline>().unwrap(), Discipline::Sa);
        assert!("fcfs".parse::<Discipline>().is_err());
    }

    #[test]
    fn np_model_rows() {
        let m = build_model(&sym(), Discipline::Np);
        m.check().unwrap();
        assert_eq!(m.transitions().len(), 4);
        let rates: Vec<f64> = m.transitions().iter().map(|t| t.rate).collect();
        assert_eq!(rates, vec![0.5, 1.0, 0.5, 1.0]);
        // delivery of source 2 copies x0 into x2 and clears x0
        let t = &m.transitions()[3];
        assert_eq!((t.id, t.source, t.target), (4, 2, 0));
        assert_eq!(t.reset.columns(), vec![None, Some(1), Some(0)]);
        let out: Vec<usize> = m.outgoing(0).unwrap().iter().map(|t| t.id).collect();
        assert_eq!(out, vec![1, 3]);
    }

    #[test]
    fn ps_model_has_preemptions() {
        let p = MultiSourceParams::new(vec![0.5, 0.7], 1.0).unwrap();
        let m = build_model(&p, Discipline::Ps);
        m.check().unwrap();
        assert_eq!(m.transitions().len(), 2 * (2 + 2));
        let find = |s, t| m.transitions().iter().find(|x| x.source == s && x.target == t).unwrap();
        assert_eq!(find(1, 2).rate, 0.7);
        assert_eq!(find(2, 1).rate, 0.5);
        assert_eq!(find(1, 2).id, 4);
        assert_eq!(find(2, 1).id, 7);
        assert_eq!(find(1, 1).id, 3);
    }

    #[test]
    fn sa_model_self_loops() {
        let p = MultiSourceParams::new(vec![0.5, 0.7], 1.0).unwrap();
        let m = build_model(&p, Discipline::Sa);
        m.check().unwrap();
        let inc: Vec<usize> = m.incoming(1).unwrap().iter().map(|t| t.id).collect();
        assert_eq!(inc, vec![1, 3]);
        let t = &m.transitions()[5];
        assert_eq!((t.id, t.source, t.target, t.rate), (6, 2, 2, 0.7));
        assert_eq!(t.reset.columns(), vec![None, Some(1), Some(2)]);
    }
}
