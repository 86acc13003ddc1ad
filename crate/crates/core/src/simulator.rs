//! Discrete-event simulation of an SHS with exact integration of the
//! piecewise-linear ages between events.
//!
//! Each replication starts at `q = 0`, `x = 0` and runs on its own
//! xoshiro256++ stream (the base seed advanced by `index` jumps of 2^128).
//! Estimates are time averages after the warmup; standard errors come from
//! the spread across replications.

use rand::{Rng, RngCore};
use rand_distr::Exp1;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, ShsModel};
use crate::solver::{MgfQuery, Solver, SolverConfig, SolverError};

/// Accumulators above this magnitude are treated as a diverging MGF.
const GUARD: f64 = 1e250;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("absorbing state {0}: zero total outgoing rate")]
    AbsorbingState(usize),
    #[error("no accumulation time after warmup")]
    NoAccumulationTime,
    #[error("MGF accumulator exceeded the guard threshold (replication {replication}, t = {time})")]
    MgfDiverged { replication: usize, time: f64 },
    #[error("MGF query rejected by the stability check: {0}")]
    Unstable(SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Budget {
    /// Number of transitions per replication.
    Events(u64),
    /// Simulated time per replication.
    Time(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Warmup {
    /// Fraction of the budget (events or time) discarded.
    Fraction(f64),
    Time(f64),
    Events(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub seed: u64,
    pub budget: Budget,
    pub warmup: Warmup,
    pub replications: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            budget: Budget::Events(1_000_000),
            warmup: Warmup::Fraction(0.05),
            replications: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SimQuery {
    Mean(usize),
    SecondMoment(usize),
    CrossMoment(usize, usize),
    Mgf { ages: Vec<usize>, s: Vec<f64> },
    Correlation(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl Estimate {
    fn from_samples(xs: &[f64]) -> Self {
        let r = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / r;
        let std_error = if xs.len() < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        };
        Self {
            estimate: mean,
            std_error,
        }
    }

    /// Whether `value` is within `k` standard errors.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.estimate - value).abs() <= k * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEstimate {
    pub queries: Vec<SimQuery>,
    /// One estimate per query, in query order.
    pub values: Vec<Estimate>,
    /// Fraction of accumulated time spent in each state.
    pub occupancy: Vec<Estimate>,
    /// Mean accumulation time per replication.
    pub accumulation_time: f64,
    pub replications: usize,
}

/// Deterministic stream for replication `index`; distinct indices never overlap.
pub fn replication_stream(seed: u64, index: usize) -> Xoshiro256PlusPlus {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..index {
        rng.jump();
    }
    rng
}

/// Exact time integrals of the requested functionals of the age vector.
#[derive(Debug, Clone)]
pub struct Accumulators {
    linear: Vec<usize>,
    squares: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    mgfs: Vec<(Vec<usize>, Vec<f64>, f64)>,
    /// `∫ x_i` for each entry of `linear`.
    pub linear_sum: Vec<f64>,
    /// `∫ x_i²` for each entry of `squares`.
    pub square_sum: Vec<f64>,
    /// `∫ x_i x_j` for each entry of `pairs`.
    pub pair_sum: Vec<f64>,
    /// `∫ exp(Σ s_j x_{K(j)})` per MGF query.
    pub mgf_sum: Vec<f64>,
    /// Time spent in each state.
    pub occupancy: Vec<f64>,
    pub time: f64,
}

impl Accumulators {
    pub fn new(
        states: usize,
        linear: Vec<usize>,
        squares: Vec<usize>,
        pairs: Vec<(usize, usize)>,
        mgfs: Vec<(Vec<usize>, Vec<f64>)>,
    ) -> Self {
        Self {
            linear_sum: vec![0.0; linear.len()],
            square_sum: vec![0.0; squares.len()],
            pair_sum: vec![0.0; pairs.len()],
            mgf_sum: vec![0.0; mgfs.len()],
            occupancy: vec![0.0; states],
            time: 0.0,
            linear,
            squares,
            pairs,
            mgfs: mgfs
                .into_iter()
                .map(|(k, s)| {
                    let total = s.iter().sum();
                    (k, s, total)
                })
                .collect(),
        }
    }

    /// Adds the integrals over a segment of length `dt` in state `q` that
    /// starts with ages `x`, each growing at unit rate.
    #[inline]
    pub fn segment(&mut self, q: usize, x: &[f64], dt: f64) {
        let d2 = 0.5 * dt * dt;
        let d3 = dt * dt * dt * THIRD;
        for (acc, &i) in self.linear_sum.iter_mut().zip(&self.linear) {
            *acc += x[i] * dt + d2;
        }
        for (acc, &i) in self.square_sum.iter_mut().zip(&self.squares) {
            let a = x[i];
            *acc += a * a * dt + a * dt * dt + d3;
        }
        for (acc, &(i, j)) in self.pair_sum.iter_mut().zip(&self.pairs) {
            let (a, b) = (x[i], x[j]);
            *acc += a * b * dt + (a + b) * d2 + d3;
        }
        self.segment_mgf(x, dt);
        self.occupancy[q] += dt;
        self.time += dt;
    }

    #[inline]
    fn segment_mgf(&mut self, x: &[f64], dt: f64) {
        for (acc, (k, s, total)) in self.mgf_sum.iter_mut().zip(&self.mgfs) {
            let exponent: f64 = k.iter().zip(s).map(|(&i, &sj)| sj * x[i]).sum();
            let growth = if *total == 0.0 {
                dt
            } else {
                (total * dt).exp_m1() / total
            };
            *acc += exponent.exp() * growth;
        }
    }

    fn diverged(&self) -> bool {
        self.mgf_sum.iter().any(|v| !(v.abs() < GUARD))
    }
}

struct StateTable {
    inv_total: f64,
    total: f64,
    cumulative: Vec<f64>,
    targets: Vec<usize>,
    resets: Vec<usize>,
}

struct Compiled {
    states: Vec<StateTable>,
    // per reset: source age for each column, `ZERO` for a zero column
    resets: Vec<Vec<usize>>,
    dim: usize,
}

const ZERO: usize = usize::MAX;
const THIRD: f64 = 1.0 / 3.0;

fn compile(model: &ShsModel) -> Compiled {
    let mut states: Vec<StateTable> = (0..model.num_states())
        .map(|_| StateTable {
            inv_total: 0.0,
            total: 0.0,
            cumulative: Vec::new(),
            targets: Vec::new(),
            resets: Vec::new(),
        })
        .collect();
    let mut resets = Vec::new();
    for t in model.transitions() {
        let st = &mut states[t.source];
        st.total += t.rate;
        st.cumulative.push(st.total);
        st.targets.push(t.target);
        st.resets.push(resets.len());
        resets.push(t.reset.columns().into_iter().map(|c| c.unwrap_or(ZERO)).collect());
    }
    for st in &mut states {
        st.inv_total = 1.0 / st.total;
    }
    Compiled {
        states,
        resets,
        dim: model.age_dim(),
    }
}

struct Plan {
    acc: Accumulators,
    warm_time: f64,
    warm_events: u64,
    end_time: f64,
    end_events: u64,
}

/// Moment integrals over every age and the requested pairs with a
/// compile-time dimension, so the per-age loops unroll.
struct FixedMoments<const N: usize> {
    linear: [f64; N],
    square: [f64; N],
    pairs: Vec<(usize, usize)>,
    pair: Vec<f64>,
}

impl<const N: usize> FixedMoments<N> {
    #[inline(always)]
    fn segment(&mut self, x: &[f64; N], dt: f64) {
        let d2 = 0.5 * dt * dt;
        let d3 = dt * dt * dt * THIRD;
        for ((lin, sq), &a) in self.linear.iter_mut().zip(&mut self.square).zip(x) {
            *lin += a * dt + d2;
            *sq += (a * a + a * dt) * dt + d3;
        }
        for (acc, &(i, j)) in self.pair.iter_mut().zip(&self.pairs) {
            let (a, b) = (x[i.min(N - 1)], x[j.min(N - 1)]);
            *acc += a * b * dt + (a + b) * d2 + d3;
        }
    }

    fn finish(&self, acc: &mut Accumulators) {
        for (v, &i) in acc.linear_sum.iter_mut().zip(&acc.linear) {
            *v = self.linear[i];
        }
        for (v, &i) in acc.square_sum.iter_mut().zip(&acc.squares) {
            *v = self.square[i];
        }
        acc.pair_sum.copy_from_slice(&self.pair);
    }
}

/// Widest out-degree the fixed-dimension path handles.
const MAX_OUT: usize = 8;

/// Per-state jump table padded to `MAX_OUT`, with the resets inlined so
/// the next state is one load away.
#[derive(Clone, Copy)]
struct Row<const N: usize> {
    total: f64,
    inv_total: f64,
    // thresholds after the first transition, padded with infinity
    upper: [f64; MAX_OUT],
    next: [Jump<N>; MAX_OUT],
}

/// Target state and reset as source ages with a mask for zero columns.
/// Zero columns read age 0 and are masked out.
#[derive(Clone, Copy)]
struct Jump<const N: usize> {
    target: usize,
    src: [usize; N],
    keep: [f64; N],
}

fn rows<const N: usize>(compiled: &Compiled) -> Option<Vec<Row<N>>> {
    let empty = Jump {
        target: 0,
        src: [0; N],
        keep: [0.0; N],
    };
    compiled
        .states
        .iter()
        .map(|st| {
            let n = st.cumulative.len();
            if n > MAX_OUT {
                return None;
            }
            let mut row = Row {
                total: st.total,
                inv_total: st.inv_total,
                upper: [f64::INFINITY; MAX_OUT],
                next: [empty; MAX_OUT],
            };
            for c in 0..n {
                if c + 1 < n {
                    row.upper[c] = st.cumulative[c];
                }
                let jump = &mut row.next[c];
                jump.target = st.targets[c];
                for (i, &col) in compiled.resets[st.resets[c]].iter().enumerate() {
                    if col != ZERO {
                        jump.src[i] = col;
                        jump.keep[i] = 1.0;
                    }
                }
            }
            Some(row)
        })
        .collect()
}

const BATCH: usize = 256;

/// Exponential and uniform draws made in blocks, in the order the event
/// loop consumes them, so the loop itself makes no calls.
struct Draws {
    pairs: [(f64, f64); BATCH],
    next: usize,
}

impl Draws {
    fn new() -> Self {
        Draws {
            pairs: [(0.0, 0.0); BATCH],
            next: BATCH,
        }
    }

    #[inline(always)]
    fn take(&mut self, rng: &mut Xoshiro256PlusPlus) -> (f64, f64) {
        if self.next == BATCH {
            self.refill(rng);
        }
        let d = self.pairs[self.next];
        self.next += 1;
        d
    }

    /// Each 64-bit output yields the uniforms of two events; 32 bits are
    /// plenty to pick among a handful of transitions.
    #[inline(never)]
    fn refill(&mut self, rng: &mut Xoshiro256PlusPlus) {
        const SCALE: f64 = 1.0 / (1u64 << 32) as f64;
        for p in self.pairs.chunks_exact_mut(2) {
            let e0: f64 = rng.sample(Exp1);
            let e1: f64 = rng.sample(Exp1);
            let bits = rng.next_u64();
            p[0] = (e0, (bits >> 32) as f64 * SCALE);
            p[1] = (e1, (bits & 0xffff_ffff) as f64 * SCALE);
        }
        self.next = 0;
    }
}

#[inline(always)]
fn holding_row<const N: usize>(row: &Row<N>, q: usize, e: f64, t: f64, end_time: f64) -> Result<(f64, bool), SimError> {
    if row.total <= 0.0 {
        return Err(SimError::AbsorbingState(q));
    }
    let dt = e * row.inv_total;
    if t + dt >= end_time {
        Ok((end_time - t, true))
    } else {
        Ok((dt, false))
    }
}

/// Picks the next transition out of `row`, applies its reset to the ages
/// advanced by `dt` and returns the target state.
#[inline(always)]
fn jump<const N: usize>(row: &Row<N>, u: f64, x: &mut [f64; N], dt: f64) -> usize {
    let u = u * row.total;
    // a predicted branch lets the next event start early
    let c = row.upper.iter().position(|&b| u < b).unwrap_or(MAX_OUT - 1);
    let jump = &row.next[c];
    let mut y = [0.0; N];
    for i in 0..N {
        y[i] = (x[jump.src[i].min(N - 1)] + dt) * jump.keep[i];
    }
    *x = y;
    jump.target
}

#[inline(always)]
fn accumulate<const N: usize, const MGF: bool>(
    mom: &mut FixedMoments<N>,
    acc: &mut Accumulators,
    q: usize,
    x: &[f64; N],
    dt: f64,
) {
    mom.segment(x, dt);
    if MGF {
        acc.segment_mgf(x, dt);
    }
    acc.occupancy[q] += dt;
}

#[inline(never)]
fn run_fixed<const N: usize, const MGF: bool>(
    table: &[Row<N>],
    mut plan: Plan,
    rng: &mut Xoshiro256PlusPlus,
    replication: usize,
) -> Result<Accumulators, SimError> {
    let mut mom = FixedMoments::<N> {
        linear: [0.0; N],
        square: [0.0; N],
        pairs: plan.acc.pairs.clone(),
        pair: vec![0.0; plan.acc.pairs.len()],
    };
    let mut draws = Draws::new();
    let mut x = [0.0f64; N];
    let mut q = 0usize;
    let mut t = 0.0f64;
    let mut events = 0u64;
    let mut done = false;

    if plan.warm_events > 0 || plan.warm_time > 0.0 {
        loop {
            let (e, u) = draws.take(rng);
            let (dt, stop) = holding_row(&table[q], q, e, t, plan.end_time)?;
            let ends = events >= plan.warm_events && t + dt > plan.warm_time;
            if ends {
                // the warmup ends inside this segment
                let skip = (plan.warm_time - t).max(0.0);
                let y = x.map(|v| v + skip);
                accumulate::<N, MGF>(&mut mom, &mut plan.acc, q, &y, dt - skip);
            }
            t += dt;
            if stop {
                done = true;
                break;
            }
            q = jump(&table[q], u, &mut x, dt);
            events += 1;
            if events == plan.end_events {
                done = true;
                break;
            }
            if ends {
                break;
            }
        }
    }

    if !done {
        loop {
            let row = &table[q];
            let (e, u) = draws.take(rng);
            let (dt, stop) = holding_row(row, q, e, t, plan.end_time)?;
            accumulate::<N, MGF>(&mut mom, &mut plan.acc, q, &x, dt);
            t += dt;
            if stop {
                break;
            }
            q = jump(row, u, &mut x, dt);
            events += 1;
            if MGF && events & 1023 == 0 && plan.acc.diverged() {
                return Err(SimError::MgfDiverged { replication, time: t });
            }
            if events == plan.end_events {
                break;
            }
        }
    }
    mom.finish(&mut plan.acc);
    plan.acc.time = plan.acc.occupancy.iter().sum();
    if plan.acc.diverged() {
        return Err(SimError::MgfDiverged { replication, time: t });
    }
    if !(plan.acc.time > 0.0) {
        return Err(SimError::NoAccumulationTime);
    }
    Ok(plan.acc)
}

fn dispatch(
    compiled: &Compiled,
    plan: Plan,
    rng: &mut Xoshiro256PlusPlus,
    replication: usize,
) -> Result<Accumulators, SimError> {
    macro_rules! fixed {
        ($n:literal) => {
            match rows::<$n>(compiled) {
                Some(table) if plan.acc.mgfs.is_empty() => run_fixed::<$n, false>(&table, plan, rng, replication),
                Some(table) => run_fixed::<$n, true>(&table, plan, rng, replication),
                None => run_replication(compiled, plan, rng, replication),
            }
        };
    }
    match compiled.dim {
        1 => fixed!(1),
        2 => fixed!(2),
        3 => fixed!(3),
        4 => fixed!(4),
        5 => fixed!(5),
        6 => fixed!(6),
        7 => fixed!(7),
        8 => fixed!(8),
        _ => run_replication(compiled, plan, rng, replication),
    }
}

fn run_replication(
    compiled: &Compiled,
    mut plan: Plan,
    rng: &mut Xoshiro256PlusPlus,
    replication: usize,
) -> Result<Accumulators, SimError> {
    let mut x = vec![0.0; compiled.dim];
    let mut next = vec![0.0; compiled.dim];
    let mut q = 0usize;
    let mut t = 0.0f64;
    let mut events = 0u64;
    let mut warm = plan.warm_events > 0 || plan.warm_time > 0.0;
    let mut draws = Draws::new();
    loop {
        let st = &compiled.states[q];
        if st.total <= 0.0 {
            return Err(SimError::AbsorbingState(q));
        }
        let (e, u) = draws.take(rng);
        let mut dt = e * st.inv_total;
        let stop = t + dt >= plan.end_time;
        if stop {
            dt = plan.end_time - t;
        }
        if !warm {
            plan.acc.segment(q, &x, dt);
        } else if events >= plan.warm_events && t + dt > plan.warm_time {
            // the warmup ends inside this segment
            let skip = (plan.warm_time - t).max(0.0);
            for (y, xi) in next.iter_mut().zip(&x) {
                *y = xi + skip;
            }
            plan.acc.segment(q, &next, dt - skip);
            warm = false;
        }
        t += dt;
        if stop {
            break;
        }
        for xi in x.iter_mut() {
            *xi += dt;
        }
        let u = u * st.total;
        let mut c = 0;
        let last = st.cumulative.len() - 1;
        while c < last && u >= st.cumulative[c] {
            c += 1;
        }
        let reset = &compiled.resets[st.resets[c]];
        for (y, &src) in next.iter_mut().zip(reset) {
            *y = if src == ZERO { 0.0 } else { x[src] };
        }
        std::mem::swap(&mut x, &mut next);
        q = st.targets[c];
        events += 1;
        if events & 1023 == 0 && plan.acc.diverged() {
            return Err(SimError::MgfDiverged { replication, time: t });
        }
        if events == plan.end_events {
            break;
        }
    }
    if plan.acc.diverged() {
        return Err(SimError::MgfDiverged { replication, time: t });
    }
    if !(plan.acc.time > 0.0) {
        return Err(SimError::NoAccumulationTime);
    }
    Ok(plan.acc)
}

fn check_age(model: &ShsModel, i: usize) -> Result<(), SimError> {
    if i >= model.age_dim() {
        return Err(SimError::InvalidQuery(format!(
            "age index {i} out of range (age dimension {})",
            model.age_dim()
        )));
    }
    Ok(())
}

fn index_of<T: PartialEq + Clone>(list: &mut Vec<T>, v: T) -> usize {
    match list.iter().position(|x| *x == v) {
        Some(i) => i,
        None => {
            list.push(v);
            list.len() - 1
        }
    }
}

enum Slot {
    Linear(usize),
    Square(usize),
    Pair(usize),
    Mgf(usize),
    Corr { m: [usize; 2], s: [usize; 2], c: usize },
}

/// Time-average estimates of `queries` over independent replications.
pub fn simulate(model: &ShsModel, config: &SimConfig, queries: &[SimQuery]) -> Result<SimEstimate, SimError> {
    model.check()?;
    validate_config(config)?;

    let mut linear = Vec::new();
    let mut squares = Vec::new();
    let mut pairs = Vec::new();
    let mut mgfs: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    let mut slots = Vec::new();
    for query in queries {
        let slot = match query {
            SimQuery::Mean(i) => {
                check_age(model, *i)?;
                Slot::Linear(index_of(&mut linear, *i))
            }
            SimQuery::SecondMoment(i) => {
                check_age(model, *i)?;
                Slot::Square(index_of(&mut squares, *i))
            }
            SimQuery::CrossMoment(i, j) => {
                check_age(model, *i)?;
                check_age(model, *j)?;
                Slot::Pair(index_of(&mut pairs, (*i, *j)))
            }
            SimQuery::Correlation(i, j) => {
                check_age(model, *i)?;
                check_age(model, *j)?;
                if i == j {
                    return Err(SimError::InvalidQuery("correlation needs two distinct ages".into()));
                }
                Slot::Corr {
                    m: [index_of(&mut linear, *i), index_of(&mut linear, *j)],
                    s: [index_of(&mut squares, *i), index_of(&mut squares, *j)],
                    c: index_of(&mut pairs, (*i, *j)),
                }
            }
            SimQuery::Mgf { ages, s } => {
                if ages.is_empty() || ages.len() != s.len() {
                    return Err(SimError::InvalidQuery("MGF query needs matching K and s".into()));
                }
                for (n, a) in ages.iter().enumerate() {
                    check_age(model, *a)?;
                    if ages[..n].contains(a) {
                        return Err(SimError::InvalidQuery(format!("age index {a} repeated in K")));
                    }
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(SimError::InvalidQuery("s must be finite".into()));
                }
                Slot::Mgf(index_of(&mut mgfs, (ages.clone(), s.clone())))
            }
        };
        slots.push(slot);
    }

    if mgfs.iter().any(|(_, s)| s.iter().any(|&v| v != 0.0)) {
        let solver = Solver::new(model, SolverConfig::default()).map_err(SimError::Unstable)?;
        for (ages, s) in &mgfs {
            let query = MgfQuery {
                ages: ages.clone(),
                s: s.clone(),
            };
            let eig = solver.mgf_stability(&query).map_err(SimError::Unstable)?;
            if !(eig < -SolverConfig::default().stability_tol) {
                return Err(SimError::Unstable(SolverError::OutsideStabilityRegion {
                    max_real_eigenvalue: eig,
                    margin: -eig,
                }));
            }
        }
    }

    let compiled = compile(model);
    let (end_time, end_events) = match config.budget {
        Budget::Events(e) => (f64::INFINITY, e),
        Budget::Time(t) => (t, u64::MAX),
    };
    let (warm_time, warm_events) = match (config.warmup, config.budget) {
        (Warmup::Fraction(f), Budget::Events(e)) => (0.0, (f * e as f64).floor() as u64),
        (Warmup::Fraction(f), Budget::Time(t)) => (f * t, 0),
        (Warmup::Time(w), _) => (w, 0),
        (Warmup::Events(w), _) => (0.0, w),
    };

    let runs: Vec<Result<Accumulators, SimError>> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let plan = Plan {
                acc: Accumulators::new(
                    model.num_states(),
                    linear.clone(),
                    squares.clone(),
                    pairs.clone(),
                    mgfs.clone(),
                ),
                warm_time,
                warm_events,
                end_time,
                end_events,
            };
            let mut rng = replication_stream(config.seed, r);
            dispatch(&compiled, plan, &mut rng, r)
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;

    let per_rep = |f: &dyn Fn(&Accumulators) -> f64| -> Vec<f64> { runs.iter().map(f).collect() };
    let mut values = Vec::new();
    for slot in &slots {
        let samples = match slot {
            Slot::Linear(i) => per_rep(&|a| a.linear_sum[*i] / a.time),
            Slot::Square(i) => per_rep(&|a| a.square_sum[*i] / a.time),
            Slot::Pair(i) => per_rep(&|a| a.pair_sum[*i] / a.time),
            Slot::Mgf(i) => per_rep(&|a| a.mgf_sum[*i] / a.time),
            Slot::Corr { m, s, c } => per_rep(&|a| {
                let m1 = a.linear_sum[m[0]] / a.time;
                let m2 = a.linear_sum[m[1]] / a.time;
                let v1 = a.square_sum[s[0]] / a.time - m1 * m1;
                let v2 = a.square_sum[s[1]] / a.time - m2 * m2;
                (a.pair_sum[*c] / a.time - m1 * m2) / (v1 * v2).sqrt()
            }),
        };
        values.push(Estimate::from_samples(&samples));
    }
    let occupancy = (0..model.num_states())
        .map(|q| Estimate::from_samples(&per_rep(&|a| a.occupancy[q] / a.time)))
        .collect();
    let accumulation_time = runs.iter().map(|a| a.time).sum::<f64>() / runs.len() as f64;
    Ok(SimEstimate {
        queries: queries.to_vec(),
        values,
        occupancy,
        accumulation_time,
        replications: config.replications,
    })
}

fn validate_config(config: &SimConfig) -> Result<(), SimError> {
    if config.replications == 0 {
        return Err(SimError::InvalidConfig("replications must be at least 1".into()));
    }
    match config.budget {
        Budget::Time(t) if !(t.is_finite() && t >= 0.0) => {
            return Err(SimError::InvalidConfig(
                "time budget must be finite and nonnegative".into(),
            ))
        }
        _ => {}
    }
    match config.warmup {
        Warmup::Fraction(f) if !(0.0..1.0).contains(&f) => {
            return Err(SimError::InvalidConfig("warmup fraction must be in [0, 1)".into()))
        }
        Warmup::Time(w) if !(w.is_finite() && w >= 0.0) => {
            return Err(SimError::InvalidConfig(
                "warmup time must be finite and nonnegative".into(),
            ))
        }
        _ => {}
    }
    let empty = match (config.budget, config.warmup) {
        (Budget::Events(e), Warmup::Events(w)) => w >= e,
        (Budget::Time(t), Warmup::Time(w)) => w >= t,
        (Budget::Events(e), _) => e == 0,
        (Budget::Time(t), _) => t == 0.0,
    };
    if empty {
        return Err(SimError::NoAccumulationTime);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disciplines::{build_model, Discipline, MultiSourceParams};

    fn ps() -> ShsModel {
        build_model(&MultiSourceParams::new(vec![0.5, 0.5], 1.0).unwrap(), Discipline::Ps)
    }

    #[test]
    fn fixed_and_generic_paths_agree() {
        let m = ps();
        let compiled = compile(&m);
        let plan = |warm_time: f64| Plan {
            acc: Accumulators::new(3, vec![1, 2], vec![2], vec![(1, 2), (0, 0)], vec![(vec![1], vec![0.1])]),
            warm_time,
            warm_events: 0,
            end_time: 500.0,
            end_events: u64::MAX,
        };
        let a = run_fixed::<3, true>(&rows(&compiled).unwrap(), plan(37.5), &mut replication_stream(9, 0), 0).unwrap();
        let b = run_replication(&compiled, plan(37.5), &mut replication_stream(9, 0), 0).unwrap();
        let close = |u: &[f64], v: &[f64]| u.iter().zip(v).all(|(x, y)| (x - y).abs() <= 1e-9 * y.abs().max(1.0));
        assert!(close(&a.linear_sum, &b.linear_sum));
        assert!(close(&a.square_sum, &b.square_sum));
        assert!(close(&a.pair_sum, &b.pair_sum));
        assert!(close(&a.mgf_sum, &b.mgf_sum));
        assert!(close(&a.occupancy, &b.occupancy));
        assert!((a.time - 462.5).abs() < 1e-9 && (b.time - 462.5).abs() < 1e-9);
    }

    #[test]
    fn segment_integrals_are_exact() {
        let mut acc = Accumulators::new(
            2,
            vec![0, 1],
            vec![0],
            vec![(0, 1)],
            vec![(vec![0, 1], vec![0.3, -0.1])],
        );
        // two segments: ages (1, 2) for 0.5 in state 0, then (0, 1.5) for 2 in state 1
        acc.segment(0, &[1.0, 2.0], 0.5);
        acc.segment(1, &[0.0, 1.5], 2.0);
        let lin0 = (1.5f64.powi(2) - 1.0) / 2.0 + 2.0f64.powi(2) / 2.0;
        let lin1 = (2.5f64.powi(2) - 4.0) / 2.0 + (3.5f64.powi(2) - 1.5f64.powi(2)) / 2.0;
        let sq0 = (1.5f64.powi(3) - 1.0) / 3.0 + 8.0 / 3.0;
        // ∫ (1+t)(2+t) dt on [0, 0.5] and ∫ t(1.5+t) on [0, 2]
        let pair = (2.0 * 0.5 + 1.5 * 0.25 + 0.125 / 3.0) + (1.5 * 2.0 + 8.0 / 3.0);
        // exp(0.3(1+t) - 0.1(2+t)) = exp(0.1 + 0.2t) and exp(-0.15 + 0.2t)
        let mgf = 0.1f64.exp() * ((0.1f64).exp() - 1.0) / 0.2 + (-0.15f64).exp() * ((0.4f64).exp() - 1.0) / 0.2;
        assert!((acc.linear_sum[0] - lin0).abs() < 1e-12);
        assert!((acc.linear_sum[1] - lin1).abs() < 1e-12);
        assert!((acc.square_sum[0] - sq0).abs() < 1e-12);
        assert!((acc.pair_sum[0] - pair).abs() < 1e-12);
        assert!((acc.mgf_sum[0] - mgf).abs() < 1e-12);
        assert_eq!(acc.occupancy, vec![0.5, 2.0]);
        assert_eq!(acc.time, 2.5);
    }

    #[test]
    fn mgf_at_zero_is_exactly_one() {
        let cfg = SimConfig {
            budget: Budget::Events(20_000),
            replications: 3,
            ..SimConfig::default()
        };
        let est = simulate(
            &ps(),
            &cfg,
            &[SimQuery::Mgf {
                ages: vec![1, 2],
                s: vec![0.0, 0.0],
            }],
        )
        .unwrap();
        assert!((est.values[0].estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SimConfig {
            seed: 42,
            budget: Budget::Events(50_000),
            replications: 4,
            ..SimConfig::default()
        };
        let q = [SimQuery::Mean(1), SimQuery::Correlation(1, 2)];
        let a = simulate(&ps(), &cfg, &q).unwrap();
        let b = simulate(&ps(), &cfg, &q).unwrap();
        assert_eq!(a, b);
        let c = simulate(&ps(), &SimConfig { seed: 43, ..cfg }, &q).unwrap();
        assert_ne!(a.values[0].estimate, c.values[0].estimate);
    }

    #[test]
    fn streams_differ_by_index() {
        let mut a = replication_stream(7, 0);
        let mut b = replication_stream(7, 1);
        let mut c = replication_stream(7, 1);
        let x: u64 = b.random();
        assert_ne!(a.random::<u64>(), x);
        assert_eq!(c.random::<u64>(), x);
    }

    #[test]
    fn ps_mean_and_occupancy() {
        let cfg = SimConfig {
            seed: 1,
            budget: Budget::Events(200_000),
            replications: 8,
            ..SimConfig::default()
        };
        let est = simulate(&ps(), &cfg, &[SimQuery::Mean(1), SimQuery::Correlation(1, 2)]).unwrap();
        assert!(est.values[0].covers(4.0, 4.0), "{:?}", est.values[0]);
        assert!(est.values[1].covers(-1.0 / 6.0, 4.0), "{:?}", est.values[1]);
        let pi = [0.5, 0.25, 0.25];
        for (o, p) in est.occupancy.iter().zip(pi) {
            assert!(o.covers(p, 4.0), "{o:?}");
        }
    }

    #[test]
    fn time_budget_and_warmup() {
        let cfg = SimConfig {
            budget: Budget::Time(1000.0),
            warmup: Warmup::Time(100.0),
            replications: 2,
            ..SimConfig::default()
        };
        let est = simulate(&ps(), &cfg, &[SimQuery::Mean(2)]).unwrap();
        assert!((est.accumulation_time - 900.0).abs() < 1e-9);
        let bad = SimConfig {
            warmup: Warmup::Time(1000.0),
            ..cfg.clone()
        };
        assert!(matches!(
            simulate(&ps(), &bad, &[SimQuery::Mean(2)]),
            Err(SimError::NoAccumulationTime)
        ));
        let bad = SimConfig { replications: 0, ..cfg };
        assert!(matches!(simulate(&ps(), &bad, &[]), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn absorbing_state() {
        use crate::model::{ResetMap, Transition};
        let m = ShsModel::new(
            2,
            1,
            vec![Transition {
                id: 1,
                source: 0,
                target: 1,
                rate: 1.0,
                reset: ResetMap::identity(1),
            }],
        );
        let cfg = SimConfig {
            replications: 1,
            budget: Budget::Events(10),
            ..SimConfig::default()
        };
        assert!(matches!(
            simulate(&m, &cfg, &[SimQuery::Mean(0)]),
            Err(SimError::AbsorbingState(1))
        ));
    }

    #[test]
    fn unstable_mgf_rejected_before_running() {
        let cfg = SimConfig {
            replications: 1,
            ..SimConfig::default()
        };
        let e = simulate(
            &ps(),
            &cfg,
            &[SimQuery::Mgf {
                ages: vec![1],
                s: vec![1.5],
            }],
        )
        .unwrap_err();
        assert!(matches!(e, SimError::Unstable(_)));
    }

    #[test]
    fn single_replication_has_zero_stderr() {
        let cfg = SimConfig {
            replications: 1,
            budget: Budget::Events(1000),
            ..SimConfig::default()
        };
        let est = simulate(&ps(), &cfg, &[SimQuery::Mean(1)]).unwrap();
        assert_eq!(est.values[0].std_error, 0.0);
    }
}
