//! Stationary joint MGFs.
//!
//! Each nonempty subset `P` of the positions of `s` is a node of order `|P|`
//! solved with the shift `Σ_{P} s`; entries where the reset zeroes some
//! positions pull from the node of the surviving subset (or from the
//! probabilities when none survive).
//!
//! A query for one multi-index `K` only needs the entries reachable from `K`
//! through the gathers. Those are solved alone, so the MGF exists whenever
//! that restricted system is stable, even when other entries of the full
//! tensor (other age orderings) diverge.

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use nalgebra::DMatrix;

use super::assembly::{Factored, Gather};
use super::stability::max_real_part;
use super::{MgfQuery, MgfSolution, Solver, SolverError};
use crate::tensor::DenseTensor;

/// Flat `(state, offset)` unknowns needed per node mask.
type Support = Vec<(u32, Vec<usize>)>;

#[derive(Default)]
pub(crate) struct MgfMemo {
    nodes: HashMap<u32, Rc<Vec<f64>>>,
}

pub(crate) fn positions(mask: u32) -> Vec<usize> {
    (0..32).filter(|j| mask & (1 << j) != 0).collect()
}

/// Maps a mask over the positions of a subset node to a mask over all positions.
pub(crate) fn lift(local: u32, pos: &[usize]) -> u32 {
    pos.iter()
        .enumerate()
        .filter(|(j, _)| local & (1 << j) != 0)
        .fold(0, |acc, (_, &p)| acc | (1 << p))
}

pub(crate) fn subset_shift(s: &[f64], mask: u32) -> f64 {
    positions(mask).iter().map(|&j| s[j]).sum()
}

fn restrict(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| m[(rows[i], rows[j])])
}

impl Solver<'_> {
    pub fn joint_mgf(&self, query: &MgfQuery) -> Result<MgfSolution, SolverError> {
        self.check_query(query)?;
        let order = query.ages.len();
        let n = self.model.age_dim();
        let k0 = query.ages.iter().fold(0, |acc, &a| acc * n + a);
        let per = n.pow(order as u32);
        if query.s.iter().all(|&x| x == 0.0) {
            return Ok(MgfSolution {
                ages: query.ages.clone(),
                s: query.s.clone(),
                per_state: self.pi.clone(),
                value: self.pi.iter().sum(),
                max_real_eigenvalue: self.restricted_abscissa(&query.ages, &query.s)?,
            });
        }
        let support = self.mgf_support(&query.ages)?;
        let mut nodes: HashMap<u32, Rc<Vec<f64>>> = HashMap::new();
        let mut max_real_eigenvalue = f64::NEG_INFINITY;
        for (mask, rows) in &support {
            let order = mask.count_ones() as usize;
            let shift = subset_shift(&query.s, *mask);
            let plan = self.plan(order)?;
            let system = restrict(&plan.system(&self.exit, shift), rows);
            let eig = max_real_part(-system.clone())?;
            max_real_eigenvalue = max_real_eigenvalue.max(eig);
            if !(eig < -self.config.stability_tol) {
                return Err(SolverError::OutsideStabilityRegion {
                    max_real_eigenvalue: eig,
                    margin: -eig,
                });
            }
            let mut rhs = vec![0.0; plan.unknowns()];
            {
                let lower = |m: u32| nodes.get(&m).cloned();
                self.mgf_correction(*mask, &lower, &self.pi, &mut rhs)?;
            }
            let rhs: Vec<f64> = rows.iter().map(|&r| rhs[r]).collect();
            let x = Factored::new(system, 1e-13)
                .and_then(|f| f.solve(&rhs))
                .ok_or(SolverError::Singular { order })?;
            let mut v = vec![f64::NAN; plan.unknowns()];
            for (&r, x) in rows.iter().zip(x) {
                v[r] = x;
            }
            nodes.insert(*mask, Rc::new(v));
        }
        let full = nodes[&((1u32 << order) - 1)].clone();
        let per_state: Vec<f64> = (0..self.model.num_states()).map(|q| full[q * per + k0]).collect();
        Ok(MgfSolution {
            ages: query.ages.clone(),
            s: query.s.clone(),
            value: per_state.iter().sum(),
            per_state,
            max_real_eigenvalue,
        })
    }

    /// Largest real part over the restricted systems a query depends on,
    /// shift included. The query's MGF exists when this is negative.
    pub fn mgf_stability(&self, query: &MgfQuery) -> Result<f64, SolverError> {
        self.check_query(query)?;
        self.restricted_abscissa(&query.ages, &query.s)
    }

    fn restricted_abscissa(&self, ages: &[usize], s: &[f64]) -> Result<f64, SolverError> {
        let mut worst = f64::NEG_INFINITY;
        for (mask, rows) in self.mgf_support(ages)? {
            let plan = self.plan(mask.count_ones() as usize)?;
            let shift = subset_shift(s, mask);
            worst = worst.max(max_real_part(-restrict(&plan.system(&self.exit, shift), &rows))?);
        }
        Ok(worst)
    }

    fn check_query(&self, query: &MgfQuery) -> Result<(), SolverError> {
        if query.ages.len() != query.s.len() {
            return Err(SolverError::InvalidQuery(format!(
                "K has {} indices but s has {} entries",
                query.ages.len(),
                query.s.len()
            )));
        }
        self.check_s(&query.s)?;
        self.check_ages(&query.ages)
    }

    /// Unknowns reachable from entry `ages` of every state, per node, with
    /// subsets ordered before their supersets.
    pub(crate) fn mgf_support(&self, ages: &[usize]) -> Result<Support, SolverError> {
        let order = ages.len();
        let n = self.model.age_dim();
        let full = (1u32 << order) - 1;
        let k0 = ages.iter().fold(0, |acc, &a| acc * n + a);
        let per = n.pow(order as u32);
        let mut seen: HashMap<u32, BTreeSet<usize>> = HashMap::new();
        let mut stack: Vec<(u32, usize)> = (0..self.model.num_states()).map(|q| (full, q * per + k0)).collect();
        while let Some((mask, flat)) = stack.pop() {
            if !seen.entry(mask).or_default().insert(flat) {
                continue;
            }
            let pos = positions(mask);
            let plan = self.plan(pos.len())?;
            let (q, k) = (flat / plan.per_state, flat % plan.per_state);
            for t in plan.transitions.iter().filter(|t| t.target == q) {
                match t.gathers[k] {
                    Gather::Full(o) => stack.push((mask, t.source * plan.per_state + o)),
                    Gather::Partial { mask: local, offset } => {
                        let sub = lift(local, &pos);
                        stack.push((sub, t.source * n.pow(sub.count_ones()) + offset));
                    }
                    Gather::Empty => {}
                }
            }
        }
        let mut support: Support = seen.into_iter().map(|(m, r)| (m, r.into_iter().collect())).collect();
        support.sort_by_key(|(m, _)| (m.count_ones(), *m));
        Ok(support)
    }

    /// Per-state tensors `V̄^(s)_q` over all multi-indices.
    pub fn mgf_tensors(&self, s: &[f64]) -> Result<Vec<DenseTensor>, SolverError> {
        self.check_s(s)?;
        let order = s.len();
        if s.iter().all(|&x| x == 0.0) {
            return self.probability_tensors(order);
        }
        let mut memo = MgfMemo::default();
        let full = (1u32 << order) - 1;
        let v = self.mgf_node(&mut memo, s, full)?;
        self.split_states(&v, order)
    }

    pub(crate) fn check_s(&self, s: &[f64]) -> Result<(), SolverError> {
        self.check_order(s.len())?;
        if let Some(x) = s.iter().find(|x| !x.is_finite()) {
            return Err(SolverError::InvalidQuery(format!("s entry {x} is not finite")));
        }
        Ok(())
    }

    pub(crate) fn split_states(&self, v: &[f64], order: usize) -> Result<Vec<DenseTensor>, SolverError> {
        let n = self.model.age_dim();
        let per = n.pow(order as u32);
        (0..self.model.num_states())
            .map(|q| DenseTensor::from_vec(order, n, v[q * per..(q + 1) * per].to_vec()).map_err(Into::into))
            .collect()
    }

    /// `C`: contributions of entries whose reset zeroes some positions of
    /// node `mask`, added into `out` in flat `(state, offset)` layout.
    pub(crate) fn mgf_correction(
        &self,
        mask: u32,
        lower: &dyn Fn(u32) -> Option<Rc<Vec<f64>>>,
        probabilities: &[f64],
        out: &mut [f64],
    ) -> Result<(), SolverError> {
        let pos = positions(mask);
        let plan = self.plan(pos.len())?;
        let per = plan.per_state;
        let n = self.model.age_dim();
        for t in &plan.transitions {
            for (k, g) in t.gathers.iter().enumerate() {
                match *g {
                    Gather::Full(_) => {}
                    Gather::Empty => out[t.target * per + k] += t.rate * probabilities[t.source],
                    Gather::Partial { mask: local, offset } => {
                        let sub = lift(local, &pos);
                        let sub_per = n.pow(sub.count_ones());
                        // an unsolved node only feeds rows outside the restricted support
                        out[t.target * per + k] += match lower(sub) {
                            Some(v) => t.rate * v[t.source * sub_per + offset],
                            None => f64::NAN,
                        };
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn mgf_node(&self, memo: &mut MgfMemo, s: &[f64], mask: u32) -> Result<Rc<Vec<f64>>, SolverError> {
        if let Some(v) = memo.nodes.get(&mask) {
            return Ok(v.clone());
        }
        let order = mask.count_ones() as usize;
        let shift = subset_shift(s, mask);
        let abscissa = self.abscissa(order)?;
        let max_real_eigenvalue = abscissa + shift;
        if !(max_real_eigenvalue < -self.config.stability_tol) {
            return Err(SolverError::OutsideStabilityRegion {
                max_real_eigenvalue,
                margin: -max_real_eigenvalue,
            });
        }
        // solve lower subsets first so the correction closure only reads the memo
        for sub in 1..mask {
            if sub & !mask == 0 {
                self.mgf_node(memo, s, sub)?;
            }
        }
        let plan = self.plan(order)?;
        let mut rhs = vec![0.0; plan.unknowns()];
        {
            let nodes = &memo.nodes;
            let lower = |m: u32| nodes.get(&m).cloned();
            self.mgf_correction(mask, &lower, &self.pi, &mut rhs)?;
        }
        let v = Factored::new(plan.system(&self.exit, shift), 1e-13)
            .and_then(|f| f.solve(&rhs))
            .ok_or(SolverError::Singular { order })?;
        let v = Rc::new(v);
        memo.nodes.insert(mask, v.clone());
        Ok(v)
    }

    /// Largest absolute residual of the stationary MGF equations for the full
    /// set of positions, evaluated through the tensor reset contraction and a
    /// direct evaluation of the zeroed-position terms.
    pub fn mgf_residual(&self, s: &[f64]) -> Result<f64, SolverError> {
        self.check_s(s)?;
        let order = s.len();
        let n = self.model.age_dim();
        let v = self.mgf_tensors(s)?;
        let incoming = self.incoming_term(&v)?;
        let total: f64 = s.iter().sum();
        let mut lower: HashMap<Vec<usize>, Vec<DenseTensor>> = HashMap::new();
        let mut worst = 0.0f64;
        for q in 0..self.model.num_states() {
            let r = v[q].scale(self.exit[q] - total).axpy(-1.0, &incoming[q])?;
            let mut r = r.into_vec();
            for t in self.model.transitions().iter().filter(|t| t.target == q) {
                let cols = t.reset.columns();
                for (k, slot) in r.iter_mut().enumerate() {
                    let idx = crate::tensor::unravel(k, order, n);
                    let kept: Vec<usize> = (0..order).filter(|&j| cols[idx[j]].is_some()).collect();
                    if kept.len() == order {
                        continue;
                    }
                    let value = if kept.is_empty() {
                        self.pi[t.source]
                    } else {
                        if !lower.contains_key(&kept) {
                            let sub_s: Vec<f64> = kept.iter().map(|&j| s[j]).collect();
                            lower.insert(kept.clone(), self.mgf_tensors(&sub_s)?);
                        }
                        let sub_idx: Vec<usize> = kept.iter().map(|&j| cols[idx[j]].unwrap()).collect();
                        lower[&kept][t.source].get(&sub_idx)?
                    };
                    *slot -= t.rate * value;
                }
            }
            worst = r.iter().fold(worst, |a, x| a.max(x.abs()));
        }
        Ok(worst)
    }
}
