//! Stationary joint moments.
//!
//! A query `m` is reduced to its compact form (zero exponents dropped). The
//! compact all-positive systems are solved recursively from lower orders;
//! positions with a zero exponent are filled by replicating the compact
//! tensor along them, and `m = 0` gives the state probabilities.

use std::collections::HashMap;
use std::rc::Rc;

use super::assembly::Factored;
use super::{MomentQuery, MomentSolution, Solver, SolverError};
use crate::tensor::{unravel, DenseTensor};

#[derive(Default)]
pub(crate) struct MomentMemo {
    nodes: HashMap<Vec<u32>, Rc<Vec<f64>>>,
    factored: HashMap<usize, Rc<Factored>>,
}

pub(crate) fn compact(m: &[u32]) -> Vec<u32> {
    m.iter().copied().filter(|&e| e > 0).collect()
}

/// For each offset of an order-`m.len()` tensor, the offset of the entry
/// obtained by keeping only the positions with `m_j > 0`.
pub(crate) fn compact_offsets(m: &[u32], dim: usize) -> Vec<usize> {
    let order = m.len();
    (0..dim.pow(order as u32))
        .map(|k| {
            unravel(k, order, dim)
                .iter()
                .zip(m)
                .filter(|(_, &e)| e > 0)
                .fold(0, |acc, (&i, _)| acc * dim + i)
        })
        .collect()
}

impl Solver<'_> {
    /// Stationary `V̄^(m)` for every state, plus the aggregate over states.
    pub fn joint_moments(&self, query: &MomentQuery) -> Result<MomentSolution, SolverError> {
        let per_state = self.moment_tensors(&query.m)?;
        let mut aggregate = DenseTensor::zeros(query.m.len(), self.model.age_dim())?;
        for t in &per_state {
            aggregate = aggregate.axpy(1.0, t)?;
        }
        Ok(MomentSolution {
            m: query.m.clone(),
            per_state,
            aggregate,
        })
    }

    /// Per-state tensors `V̄^(m)_q` with zero exponents replicated.
    pub fn moment_tensors(&self, m: &[u32]) -> Result<Vec<DenseTensor>, SolverError> {
        self.check_order(m.len())?;
        let mut memo = MomentMemo::default();
        self.expand_moment(&mut memo, m)
    }

    pub(crate) fn expand_moment(&self, memo: &mut MomentMemo, m: &[u32]) -> Result<Vec<DenseTensor>, SolverError> {
        let order = m.len();
        let n = self.model.age_dim();
        let key = compact(m);
        if key.is_empty() {
            return self.probability_tensors(order);
        }
        let node = self.moment_node(memo, &key)?;
        let per = n.pow(key.len() as u32);
        let offsets = compact_offsets(m, n);
        (0..self.model.num_states())
            .map(|q| {
                let src = &node[q * per..(q + 1) * per];
                let data = offsets.iter().map(|&o| src[o]).collect();
                DenseTensor::from_vec(order, n, data).map_err(Into::into)
            })
            .collect()
    }

    /// Flat `(state, offset)` solution of the compact, all-positive system `key`.
    pub(crate) fn moment_node(&self, memo: &mut MomentMemo, key: &[u32]) -> Result<Rc<Vec<f64>>, SolverError> {
        if let Some(v) = memo.nodes.get(key) {
            return Ok(v.clone());
        }
        let order = key.len();
        let plan = self.plan(order)?;
        let n = self.model.age_dim();
        let per = plan.per_state;
        let states = plan.states;

        let mut rhs = vec![0.0; plan.unknowns()];
        for j in 0..order {
            let mut sub = key.to_vec();
            sub[j] -= 1;
            let coef = key[j] as f64;
            let sub_key = compact(&sub);
            if sub_key.is_empty() {
                for q in 0..states {
                    rhs[q * per..(q + 1) * per]
                        .iter_mut()
                        .for_each(|r| *r += coef * self.pi[q]);
                }
                continue;
            }
            let lower = self.moment_node(memo, &sub_key)?;
            let lower_per = n.pow(sub_key.len() as u32);
            let offsets = compact_offsets(&sub, n);
            for q in 0..states {
                let src = &lower[q * lower_per..(q + 1) * lower_per];
                for (k, &o) in offsets.iter().enumerate() {
                    rhs[q * per + k] += coef * src[o];
                }
            }
        }

        let factored = match memo.factored.get(&order) {
            Some(f) => f.clone(),
            None => {
                let f = Factored::new(plan.system(&self.exit, 0.0), 1e-13).ok_or(SolverError::Singular { order })?;
                let f = Rc::new(f);
                memo.factored.insert(order, f.clone());
                f
            }
        };
        let v = factored.solve(&rhs).ok_or(SolverError::Singular { order })?;

        if key.iter().all(|&e| e == 1) {
            self.check_positive(&v, order)?;
        }
        let v = Rc::new(v);
        memo.nodes.insert(key.to_vec(), v.clone());
        Ok(v)
    }

    fn check_positive(&self, v: &[f64], order: usize) -> Result<(), SolverError> {
        let n = self.model.age_dim();
        let per = n.pow(order as u32);
        let scale = v.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        let tol = self.config.positivity_tol * scale;
        if let Some((i, &value)) = v.iter().enumerate().find(|(_, &x)| x < -tol || !x.is_finite()) {
            return Err(SolverError::NoPositiveFixedPoint {
                state: i / per,
                index: unravel(i % per, order, n),
                value,
            });
        }
        for k in 0..per {
            let total: f64 = (0..self.model.num_states()).map(|q| v[q * per + k]).sum();
            if !(total > tol) {
                return Err(SolverError::NoPositiveFixedPoint {
                    state: 0,
                    index: unravel(k, order, n),
                    value: total,
                });
            }
        }
        Ok(())
    }

    /// Largest absolute residual of the stationary moment equations for an
    /// all-positive `m`, evaluated through the tensor reset contraction.
    pub fn moment_residual(&self, m: &[u32]) -> Result<f64, SolverError> {
        if m.is_empty() || m.contains(&0) {
            return Err(SolverError::InvalidQuery(
                "residual check needs every exponent positive".into(),
            ));
        }
        self.check_order(m.len())?;
        let mut memo = MomentMemo::default();
        let v = self.expand_moment(&mut memo, m)?;
        let incoming = self.incoming_term(&v)?;
        let mut lower = Vec::new();
        for j in 0..m.len() {
            let mut sub = m.to_vec();
            sub[j] -= 1;
            lower.push(self.expand_moment(&mut memo, &sub)?);
        }
        let mut worst = 0.0f64;
        for q in 0..self.model.num_states() {
            let mut r = v[q].scale(self.exit[q]).axpy(-1.0, &incoming[q])?;
            for (j, l) in lower.iter().enumerate() {
                r = r.axpy(-(m[j] as f64), &l[q])?;
            }
            worst = r.as_slice().iter().fold(worst, |a, x| a.max(x.abs()));
        }
        Ok(worst)
    }
}
