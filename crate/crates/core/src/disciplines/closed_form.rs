//! Closed-form stationary joint and marginal MGFs.

use itertools::Itertools;

use super::{Discipline, DisciplineError, MultiSourceParams};

/// Largest `|K|` accepted by [`joint_mgf`] (720 permutations).
pub const MAX_SET_SIZE: usize = 6;

/// `c_Z = (λ - Σs)(μ - Σs) - μ Σ_{j∉Z} λ_j`, with `s` aligned to `z`.
pub fn c_z(params: &MultiSourceParams, z: &[usize], s: &[f64]) -> f64 {
    let total: f64 = s.iter().sum();
    let outside: f64 = (1..=params.sources())
        .filter(|j| !z.contains(j))
        .map(|j| params.lambda(j))
        .sum();
    (params.total_rate() - total) * (params.mu() - total) - params.mu() * outside
}

fn suffix_s(p: &[usize], s_by_source: &[f64]) -> Vec<f64> {
    p.iter().map(|&k| s_by_source[k - 1]).collect()
}

/// `C(P)`: product of `c` over the suffix sets `P(i:|P|)`.
/// `s_by_source[k - 1]` is the argument of source `k`.
pub fn c_of_p(params: &MultiSourceParams, p: &[usize], s_by_source: &[f64]) -> f64 {
    (0..p.len())
        .map(|i| c_z(params, &p[i..], &suffix_s(&p[i..], s_by_source)))
        .product()
}

/// `C'(P)` of the source-aware discipline.
pub fn cprime_of_p(params: &MultiSourceParams, p: &[usize], s_by_source: &[f64]) -> f64 {
    let mu = params.mu();
    let s = |k: usize| s_by_source[k - 1];
    let last = *p.last().expect("nonempty permutation");
    let ll = params.lambda(last);
    let mut value = (ll + mu) / mu / (mu + ll - s(last));
    for i in 0..p.len() - 1 {
        let li = params.lambda(p[i]);
        let tail: f64 = p[i + 1..].iter().map(|&k| s(k)).sum();
        value *= (mu + li - tail) / (mu + li - tail - s(p[i]));
    }
    value
}

fn set_name(z: &[usize]) -> String {
    let mut z = z.to_vec();
    z.sort_unstable();
    z.iter().map(|k| k.to_string()).join(",")
}

/// Every nonempty `Z ⊆ K` must have `μ - Σ_Z s > 0` and `c_Z > 0`.
fn check_region(params: &MultiSourceParams, k: &[usize], s_by_source: &[f64]) -> Result<(), DisciplineError> {
    for size in 1..=k.len() {
        for z in k.iter().copied().combinations(size) {
            let zs = suffix_s(&z, s_by_source);
            let total: f64 = zs.iter().sum();
            let slack = params.mu() - total;
            if !(slack > 0.0) {
                return Err(DisciplineError::OutsideRegion {
                    factor: format!("mu - s_{{{}}}", set_name(&z)),
                    value: slack,
                });
            }
            let c = c_z(params, &z, &zs);
            if !(c > 0.0) {
                return Err(DisciplineError::OutsideRegion {
                    factor: format!("c_{{{}}}", set_name(&z)),
                    value: c,
                });
            }
        }
    }
    Ok(())
}

/// Checks that raw `s` on the sources `k` lies in the region where the
/// closed-form MGFs exist. The error names the first failing factor.
pub fn check_validity(params: &MultiSourceParams, k: &[usize], s: &[f64]) -> Result<(), DisciplineError> {
    params.check_set(k)?;
    if k.len() != s.len() {
        return Err(DisciplineError::InvalidIndex(format!(
            "K has {} sources but s has {} entries",
            k.len(),
            s.len()
        )));
    }
    let mut s_by_source = vec![0.0; params.sources()];
    for (&src, &v) in k.iter().zip(s) {
        s_by_source[src - 1] = v;
    }
    check_region(params, k, &s_by_source)
}

/// Stationary joint MGF `E[exp(Σ_j s_j x_{K(j)})]` with raw (unnormalized) `s`.
pub fn joint_mgf(
    params: &MultiSourceParams,
    discipline: Discipline,
    k: &[usize],
    s: &[f64],
) -> Result<f64, DisciplineError> {
    params.check_set(k)?;
    if k.len() != s.len() {
        return Err(DisciplineError::InvalidIndex(format!(
            "K has {} sources but s has {} entries",
            k.len(),
            s.len()
        )));
    }
    if k.len() > MAX_SET_SIZE {
        return Err(DisciplineError::InvalidIndex(format!(
            "|K| = {} exceeds the permutation cap {MAX_SET_SIZE}",
            k.len()
        )));
    }
    if let Some(x) = s.iter().find(|x| !x.is_finite()) {
        return Err(DisciplineError::InvalidParams(format!("s entry {x} is not finite")));
    }
    let mut s_by_source = vec![0.0; params.sources()];
    for (&src, &v) in k.iter().zip(s) {
        s_by_source[src - 1] = v;
    }
    check_region(params, k, &s_by_source)?;

    let mu = params.mu();
    let lam = params.total_rate();
    let total: f64 = s.iter().sum();
    let scale = mu.powi(k.len() as i32) * k.iter().map(|&j| params.lambda(j)).product::<f64>();
    let sum: f64 = k
        .iter()
        .copied()
        .permutations(k.len())
        .map(|p| {
            let c = c_of_p(params, &p, &s_by_source);
            match discipline {
                Discipline::Sa => cprime_of_p(params, &p, &s_by_source) / c,
                _ => 1.0 / c,
            }
        })
        .sum();
    Ok(match discipline {
        Discipline::Np => scale * mu / (lam + mu) * (1.0 + lam / (mu - total)) * sum,
        Discipline::Ps => scale * sum,
        Discipline::Sa => scale * mu / (lam + mu) * (lam + mu - total) * sum,
    })
}

/// Marginal MGF of source `k` at the normalized argument `s̄ = s/μ`.
pub fn marginal_mgf(
    params: &MultiSourceParams,
    discipline: Discipline,
    k: usize,
    s_bar: f64,
) -> Result<f64, DisciplineError> {
    params.check_source(k)?;
    if !s_bar.is_finite() {
        return Err(DisciplineError::InvalidParams(format!("s_bar = {s_bar} is not finite")));
    }
    let mut s_by_source = vec![0.0; params.sources()];
    s_by_source[k - 1] = s_bar * params.mu();
    check_region(params, &[k], &s_by_source)?;
    let rho = params.rho();
    let rk = params.rho_k(k);
    let inner = (1.0 - s_bar) * (rho - s_bar) - (rho - rk);
    Ok(match discipline {
        Discipline::Np => rk * (1.0 + rho - s_bar) / ((1.0 + rho) * (1.0 - s_bar) * inner),
        Discipline::Ps => rk / inner,
        Discipline::Sa => rk * (1.0 + rk) * (1.0 + rho - s_bar) / ((1.0 + rho) * (1.0 + rk - s_bar) * inner),
    })
}

/// Joint MGF of two sources at normalized arguments `(s̄1, s̄2)`.
pub fn two_source_mgf(
    params: &MultiSourceParams,
    discipline: Discipline,
    k1: usize,
    k2: usize,
    s_bar1: f64,
    s_bar2: f64,
) -> Result<f64, DisciplineError> {
    params.check_set(&[k1, k2])?;
    let mu = params.mu();
    let mut s_by_source = vec![0.0; params.sources()];
    s_by_source[k1 - 1] = s_bar1 * mu;
    s_by_source[k2 - 1] = s_bar2 * mu;
    check_region(params, &[k1, k2], &s_by_source)?;

    let rho = params.rho();
    let (r1, r2) = (params.rho_k(k1), params.rho_k(k2));
    let rz = params.rho_minus(&[k1, k2]);
    let total = s_bar1 + s_bar2;
    let joint = (rho - total) * (1.0 - total) - rz;
    let inner = |rk: f64, sb: f64| (1.0 - sb) * (rho - sb) - (rho - rk);
    let terms = [(r1, r2, s_bar1), (r2, r1, s_bar2)];
    Ok(match discipline {
        Discipline::Np => {
            let sum: f64 = terms.iter().map(|&(ri, _, si)| 1.0 / inner(ri, si)).sum();
            r1 * r2 * (1.0 + rho - total) / ((1.0 + rho) * joint * (1.0 - total)) * sum
        }
        Discipline::Ps => {
            let sum: f64 = terms.iter().map(|&(ri, _, si)| 1.0 / inner(ri, si)).sum();
            r1 * r2 / joint * sum
        }
        Discipline::Sa => {
            let sum: f64 = terms
                .iter()
                .map(|&(ri, ro, si)| {
                    (1.0 + ri) * (1.0 + ro - si) / ((1.0 + ri - si) * (1.0 + ro - total) * inner(ri, si))
                })
                .sum();
            r1 * r2 * (1.0 + rho - total) / ((1.0 + rho) * joint) * sum
        }
    })
}
