//! Index gathers for the reset contraction, and assembly of the linear
//! systems built from them.
//!
//! After a reset `x' = x·A`, entry `k` of a multi-index reads `x_{src(k_j)}` at
//! every position whose column is nonzero and the constant 0 elsewhere. A
//! [`Gather`] records where the post-reset value of entry `k` comes from.

use nalgebra::DMatrix;

use crate::model::ShsModel;
use crate::tensor::unravel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Gather {
    /// Every position survives; offset into the same-order source tensor.
    Full(usize),
    /// Positions in `mask` survive (bit `j` = position `j`); offset into the
    /// compact tensor of order `popcount(mask)` indexed by the surviving
    /// source indices in position order.
    Partial { mask: u32, offset: usize },
    /// Every position is reset to zero.
    Empty,
}

#[derive(Debug)]
pub(crate) struct TransitionPlan {
    pub source: usize,
    pub target: usize,
    pub rate: f64,
    pub gathers: Vec<Gather>,
}

#[derive(Debug)]
pub(crate) struct Plan {
    pub states: usize,
    pub per_state: usize,
    pub transitions: Vec<TransitionPlan>,
}

impl Plan {
    pub fn new(model: &ShsModel, order: usize) -> Self {
        let n = model.age_dim();
        let per_state = n.pow(order as u32);
        let transitions = model
            .transitions()
            .iter()
            .map(|t| {
                let cols = t.reset.columns();
                let gathers = (0..per_state)
                    .map(|k| {
                        let idx = unravel(k, order, n);
                        let mut mask = 0u32;
                        let mut offset = 0usize;
                        for (j, &c) in idx.iter().enumerate() {
                            if let Some(src) = cols[c] {
                                mask |= 1 << j;
                                offset = offset * n + src;
                            }
                        }
                        let full = (1u32 << order) - 1;
                        if mask == full {
                            Gather::Full(offset)
                        } else if mask == 0 {
                            Gather::Empty
                        } else {
                            Gather::Partial { mask, offset }
                        }
                    })
                    .collect();
                TransitionPlan {
                    source: t.source,
                    target: t.target,
                    rate: t.rate,
                    gathers,
                }
            })
            .collect();
        Self {
            states: model.num_states(),
            per_state,
            transitions,
        }
    }

    pub fn unknowns(&self) -> usize {
        self.states * self.per_state
    }

    /// `B`: the coupling through full gathers, in `(state, offset)` layout.
    pub fn coupling(&self) -> DMatrix<f64> {
        let size = self.unknowns();
        let mut b = DMatrix::zeros(size, size);
        for t in &self.transitions {
            for (k, g) in t.gathers.iter().enumerate() {
                if let Gather::Full(src) = *g {
                    b[(t.target * self.per_state + k, t.source * self.per_state + src)] += t.rate;
                }
            }
        }
        b
    }

    /// `diag(d_q - shift) - B`.
    pub fn system(&self, exit: &[f64], shift: f64) -> DMatrix<f64> {
        let mut m = -self.coupling();
        for (q, d) in exit.iter().enumerate().take(self.states) {
            for k in 0..self.per_state {
                let i = q * self.per_state + k;
                m[(i, i)] += d - shift;
            }
        }
        m
    }

    /// `out += B·v` using the gathers directly.
    pub fn apply_coupling(&self, v: &[f64], out: &mut [f64]) {
        let p = self.per_state;
        for t in &self.transitions {
            let src = &v[t.source * p..(t.source + 1) * p];
            let dst = &mut out[t.target * p..(t.target + 1) * p];
            for (k, g) in t.gathers.iter().enumerate() {
                if let Gather::Full(o) = *g {
                    dst[k] += t.rate * src[o];
                }
            }
        }
    }
}

/// Factorizes `m` and solves `m·x = rhs`, reporting a singular matrix as `None`.
///
/// The pivot test is relative to the largest pivot so it is scale invariant.
pub(crate) struct Factored(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>);

impl Factored {
    pub fn new(m: DMatrix<f64>, rel_tol: f64) -> Option<Self> {
        let lu = m.lu();
        let u = lu.u();
        let diag: Vec<f64> = u.diagonal().iter().map(|d| d.abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        if !(max > 0.0) || diag.iter().any(|&d| !(d > rel_tol * max)) {
            return None;
        }
        Some(Self(lu))
    }

    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let b = nalgebra::DVector::from_column_slice(rhs);
        let x = self.0.solve(&b)?;
        if x.iter().all(|v| v.is_finite()) {
            Some(x.as_slice().to_vec())
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ResetMap, Transition};

    fn two_age_model() -> ShsModel {
        // x' = [0, x0] on the only transition
        let reset = ResetMap::from_columns(2, &[None, Some(0)]).unwrap();
        ShsModel::new(
            1,
            2,
            vec![Transition {
                id: 1,
                source: 0,
                target: 0,
                rate: 2.0,
                reset,
            }],
        )
    }

    #[test]
    fn gathers_classify_positions() {
        let plan = Plan::new(&two_age_model(), 2);
        let g = &plan.transitions[0].gathers;
        // index (0,0): both positions read column 0, reset to zero
        assert_eq!(g[0], Gather::Empty);
        // (0,1): position 1 reads x0
        assert_eq!(g[1], Gather::Partial { mask: 0b10, offset: 0 });
        assert_eq!(g[2], Gather::Partial { mask: 0b01, offset: 0 });
        assert_eq!(g[3], Gather::Full(0));
    }

    #[test]
    fn system_is_diag_minus_coupling() {
        let plan = Plan::new(&two_age_model(), 1);
        let m = plan.system(&[2.0], 0.5);
        assert_eq!(m[(0, 0)], 1.5);
        assert_eq!(m[(1, 0)], -2.0);
        assert_eq!(m[(1, 1)], 1.5);
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn factored_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(Factored::new(m, 1e-12).is_none());
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = Factored::new(m, 1e-12).unwrap().solve(&[3.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }
}
