//! Transient moment and MGF dynamics integrated with classic RK4.
//!
//! The state vector holds the state probabilities followed by every node the
//! query depends on. The incoming coupling uses the precomputed gathers.

use std::collections::BTreeMap;

use super::assembly::{Gather, Plan};
use super::mgf::{lift, positions, subset_shift, MgfMemo};
use super::moments::{compact, compact_offsets, MomentMemo};
use super::{Solver, SolverConfig, SolverError};
use crate::model::ShsModel;
use crate::tensor::{unravel, DenseTensor};

#[derive(Debug, Clone, PartialEq)]
pub enum TransientQuery {
    Moment(Vec<u32>),
    Mgf(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransientInit {
    /// Discrete state drawn from `distribution`, ages fixed at `ages`.
    Point { distribution: Vec<f64>, ages: Vec<f64> },
    /// Start from the stationary solution.
    Stationary,
}

#[derive(Debug, Clone)]
pub struct TransientOptions {
    /// End time; default `50 / (smallest transition rate)`.
    pub horizon: Option<f64>,
    /// RK4 step; default `0.01 / (largest exit rate)`.
    pub step: Option<f64>,
    /// Number of evenly spaced samples recorded after `t = 0`.
    pub samples: usize,
    /// Any magnitude above this aborts the integration.
    pub blow_up: f64,
}

impl Default for TransientOptions {
    fn default() -> Self {
        Self {
            horizon: None,
            step: None,
            samples: 50,
            blow_up: 1e12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransientSample {
    pub time: f64,
    pub distribution: Vec<f64>,
    /// `V^(m)_q(t)` or `V^(s)_q(t)` for every state.
    pub per_state: Vec<DenseTensor>,
}

impl TransientSample {
    pub fn aggregate(&self) -> DenseTensor {
        let mut it = self.per_state.iter();
        let first = it.next().cloned().expect("at least one state");
        it.fold(first, |acc, t| acc.axpy(1.0, t).expect("same shape"))
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<TransientSample>,
}

impl Trajectory {
    pub fn last(&self) -> &TransientSample {
        self.samples.last().expect("trajectory has samples")
    }
}

enum Source {
    Probability,
    Node { index: usize, offsets: Vec<usize> },
}

struct MomentTerm {
    coef: f64,
    source: Source,
}

struct Node {
    order: usize,
    start: usize,
    per: usize,
    shift: f64,
    moment_terms: Vec<MomentTerm>,
    // MGF nodes: mask over positions of s
    mask: u32,
}

struct System<'a> {
    solver: &'a Solver<'a>,
    plans: Vec<std::rc::Rc<Plan>>,
    nodes: Vec<Node>,
    mgf: bool,
    len: usize,
    mask_index: BTreeMap<u32, usize>,
}

impl System<'_> {
    fn derivative(&self, y: &[f64], dy: &mut [f64]) {
        let model = self.solver.model;
        let exit = &self.solver.exit;
        let states = model.num_states();
        dy.iter_mut().for_each(|d| *d = 0.0);
        for t in model.transitions() {
            dy[t.target] += t.rate * y[t.source];
        }
        for q in 0..states {
            dy[q] -= exit[q] * y[q];
        }
        for node in &self.nodes {
            let plan = &self.plans[node.order];
            let per = node.per;
            let (_, tail) = dy.split_at_mut(node.start);
            let out = &mut tail[..states * per];
            let v = &y[node.start..node.start + states * per];
            for q in 0..states {
                let c = node.shift - exit[q];
                for k in 0..per {
                    out[q * per + k] = c * v[q * per + k];
                }
            }
            plan.apply_coupling(v, out);
            if self.mgf {
                let pos = positions(node.mask);
                for t in &plan.transitions {
                    for (k, g) in t.gathers.iter().enumerate() {
                        match *g {
                            Gather::Full(_) => {}
                            Gather::Empty => out[t.target * per + k] += t.rate * y[t.source],
                            Gather::Partial { mask, offset } => {
                                let sub = &self.nodes[self.mask_index[&lift(mask, &pos)]];
                                out[t.target * per + k] += t.rate * y[sub.start + t.source * sub.per + offset];
                            }
                        }
                    }
                }
            } else {
                for term in &node.moment_terms {
                    match &term.source {
                        Source::Probability => {
                            for q in 0..states {
                                for k in 0..per {
                                    out[q * per + k] += term.coef * y[q];
                                }
                            }
                        }
                        Source::Node { index, offsets } => {
                            let sub = &self.nodes[*index];
                            for q in 0..states {
                                let base = sub.start + q * sub.per;
                                for (k, &o) in offsets.iter().enumerate() {
                                    out[q * per + k] += term.coef * y[base + o];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Integrates the transient moment or MGF dynamics from `init`.
pub fn transient_integrate(
    model: &ShsModel,
    query: &TransientQuery,
    init: &TransientInit,
    options: &TransientOptions,
    config: &SolverConfig,
) -> Result<Trajectory, SolverError> {
    model.check()?;
    let solver = match init {
        TransientInit::Stationary => Solver::new(model, config.clone())?,
        TransientInit::Point { distribution, ages } => {
            if distribution.len() != model.num_states() || ages.len() != model.age_dim() {
                return Err(SolverError::InvalidQuery(
                    "initial distribution or age vector has the wrong length".into(),
                ));
            }
            let total: f64 = distribution.iter().sum();
            if distribution.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(SolverError::InvalidQuery(
                    "initial distribution must be nonnegative and sum to 1".into(),
                ));
            }
            if ages.iter().any(|a| !a.is_finite()) {
                return Err(SolverError::InvalidQuery("initial ages must be finite".into()));
            }
            Solver::with_distribution(model, config.clone(), distribution.clone())
        }
    };
    solver.transient(query, init, options)
}

impl Solver<'_> {
    fn transient(
        &self,
        query: &TransientQuery,
        init: &TransientInit,
        options: &TransientOptions,
    ) -> Result<Trajectory, SolverError> {
        let states = self.model.num_states();
        let n = self.model.age_dim();
        let (order, mgf) = match query {
            TransientQuery::Moment(m) => (m.len(), false),
            TransientQuery::Mgf(s) => {
                self.check_s(s)?;
                (s.len(), true)
            }
        };
        self.check_order(order)?;
        let mut plans = vec![self.plan(1)?];
        for r in 1..=order {
            plans.push(self.plan(r)?);
        }

        // node keys, lower orders first
        let mut nodes = Vec::new();
        let mut mask_index = BTreeMap::new();
        let mut moment_keys: Vec<Vec<u32>> = Vec::new();
        let mut len = states;
        match query {
            TransientQuery::Mgf(s) => {
                let mut masks: Vec<u32> = (1..(1u32 << order)).collect();
                masks.sort_by_key(|m| m.count_ones());
                for mask in masks {
                    let r = mask.count_ones() as usize;
                    let per = n.pow(r as u32);
                    mask_index.insert(mask, nodes.len());
                    nodes.push(Node {
                        order: r,
                        start: len,
                        per,
                        shift: subset_shift(s, mask),
                        moment_terms: Vec::new(),
                        mask,
                    });
                    len += states * per;
                }
            }
            TransientQuery::Moment(m) => {
                let top = compact(m);
                let mut keys = std::collections::BTreeSet::new();
                let mut stack = vec![top.clone()];
                while let Some(k) = stack.pop() {
                    if k.is_empty() || !keys.insert(k.clone()) {
                        continue;
                    }
                    for j in 0..k.len() {
                        let mut sub = k.clone();
                        sub[j] -= 1;
                        stack.push(compact(&sub));
                    }
                }
                moment_keys = keys.into_iter().collect();
                moment_keys.sort_by_key(|k| (k.len(), k.iter().sum::<u32>()));
                let index: BTreeMap<Vec<u32>, usize> =
                    moment_keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
                for key in &moment_keys {
                    let r = key.len();
                    let per = n.pow(r as u32);
                    let terms = (0..r)
                        .map(|j| {
                            let mut sub = key.clone();
                            sub[j] -= 1;
                            let ck = compact(&sub);
                            let source = if ck.is_empty() {
                                Source::Probability
                            } else {
                                Source::Node {
                                    index: index[&ck],
                                    offsets: compact_offsets(&sub, n),
                                }
                            };
                            MomentTerm {
                                coef: key[j] as f64,
                                source,
                            }
                        })
                        .collect();
                    nodes.push(Node {
                        order: r,
                        start: len,
                        per,
                        shift: 0.0,
                        moment_terms: terms,
                        mask: 0,
                    });
                    len += states * per;
                }
            }
        }

        // initial condition
        let mut y = vec![0.0; len];
        match init {
            TransientInit::Point { distribution, ages } => {
                y[..states].copy_from_slice(distribution);
                for (i, node) in nodes.iter().enumerate() {
                    for k in 0..node.per {
                        let idx = unravel(k, node.order, n);
                        let f = match query {
                            TransientQuery::Mgf(s) => positions(node.mask)
                                .iter()
                                .zip(&idx)
                                .map(|(&p, &a)| s[p] * ages[a])
                                .sum::<f64>()
                                .exp(),
                            TransientQuery::Moment(_) => idx
                                .iter()
                                .zip(&moment_keys[i])
                                .map(|(&a, &e)| ages[a].powi(e as i32))
                                .product(),
                        };
                        for q in 0..states {
                            y[node.start + q * node.per + k] = distribution[q] * f;
                        }
                    }
                }
            }
            TransientInit::Stationary => {
                y[..states].copy_from_slice(&self.pi);
                match query {
                    TransientQuery::Mgf(s) => {
                        let mut memo = MgfMemo::default();
                        for node in &nodes {
                            let v = self.mgf_node(&mut memo, s, node.mask)?;
                            y[node.start..node.start + v.len()].copy_from_slice(&v);
                        }
                    }
                    TransientQuery::Moment(_) => {
                        let mut memo = MomentMemo::default();
                        for (node, key) in nodes.iter().zip(&moment_keys) {
                            let v = self.moment_node(&mut memo, key)?;
                            y[node.start..node.start + v.len()].copy_from_slice(&v);
                        }
                    }
                }
            }
        }

        let system = System {
            solver: self,
            plans,
            nodes,
            mgf,
            len,
            mask_index,
        };

        let max_exit = self.exit.iter().cloned().fold(0.0, f64::max);
        let min_rate = self
            .model
            .transitions()
            .iter()
            .map(|t| t.rate)
            .fold(f64::INFINITY, f64::min);
        let horizon = match options.horizon {
            Some(h) => h,
            None if min_rate.is_finite() => 50.0 / min_rate,
            None => 1.0,
        };
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(SolverError::InvalidQuery(
                "horizon must be finite and nonnegative".into(),
            ));
        }
        let step = match options.step {
            Some(h) if h > 0.0 && h.is_finite() => h,
            Some(_) => return Err(SolverError::InvalidQuery("step must be positive".into())),
            None if max_exit > 0.0 => 0.01 / max_exit,
            None => horizon.max(1.0) / 100.0,
        };
        let steps = ((horizon / step).ceil() as usize).max(1);
        let h = horizon / steps as f64;
        let samples = options.samples.clamp(1, steps);

        let mut out = vec![self.sample(&system, &y, 0.0, query)?];
        let mut k1 = vec![0.0; system.len];
        let mut k2 = vec![0.0; system.len];
        let mut k3 = vec![0.0; system.len];
        let mut k4 = vec![0.0; system.len];
        let mut tmp = vec![0.0; system.len];
        let mut next_sample = 1;
        for i in 1..=steps {
            system.derivative(&y, &mut k1);
            axpy_into(&y, 0.5 * h, &k1, &mut tmp);
            system.derivative(&tmp, &mut k2);
            axpy_into(&y, 0.5 * h, &k2, &mut tmp);
            system.derivative(&tmp, &mut k3);
            axpy_into(&y, h, &k3, &mut tmp);
            system.derivative(&tmp, &mut k4);
            for j in 0..system.len {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            let t = i as f64 * h;
            if y.iter().any(|v| !v.is_finite() || v.abs() > options.blow_up) {
                return Err(SolverError::TransientBlowUp { time: t });
            }
            if i * samples >= next_sample * steps {
                out.push(self.sample(&system, &y, t, query)?);
                next_sample += 1;
            }
        }
        Ok(Trajectory { samples: out })
    }

    fn sample(
        &self,
        system: &System,
        y: &[f64],
        time: f64,
        query: &TransientQuery,
    ) -> Result<TransientSample, SolverError> {
        let states = self.model.num_states();
        let n = self.model.age_dim();
        let distribution = y[..states].to_vec();
        let per_state = match query {
            TransientQuery::Mgf(_) => {
                let node = system.nodes.last().expect("at least one node");
                self.split_states(&y[node.start..node.start + states * node.per], node.order)?
            }
            TransientQuery::Moment(m) => {
                let order = m.len();
                let key = compact(m);
                if key.is_empty() {
                    distribution
                        .iter()
                        .map(|&p| DenseTensor::filled(order, n, p).map_err(Into::into))
                        .collect::<Result<_, SolverError>>()?
                } else {
                    // the query's compact key is the last node
                    let node = system.nodes.last().expect("at least one node");
                    let offsets = compact_offsets(m, n);
                    (0..states)
                        .map(|q| {
                            let base = node.start + q * node.per;
                            let data = offsets.iter().map(|&o| y[base + o]).collect();
                            DenseTensor::from_vec(order, n, data).map_err(Into::into)
                        })
                        .collect::<Result<_, SolverError>>()?
                }
            }
        };
        Ok(TransientSample {
            time,
            distribution,
            per_state,
        })
    }
}

fn axpy_into(y: &[f64], a: f64, x: &[f64], out: &mut [f64]) {
    for ((o, &yi), &xi) in out.iter_mut().zip(y).zip(x) {
        *o = yi + a * xi;
    }
}
