//! Closed-form stationary moments and correlation coefficients.

use serde::Serialize;

use super::{Discipline, DisciplineError, MultiSourceParams};

/// `E[x_k]`.
pub fn mean(params: &MultiSourceParams, discipline: Discipline, k: usize) -> Result<f64, DisciplineError> {
    params.check_source(k)?;
    let mu = params.mu();
    let rho = params.rho();
    let a = params.rho_k(k);
    Ok(match discipline {
        Discipline::Np => (1.0 + rho) / (mu * a) + rho / (mu * (1.0 + rho)),
        Discipline::Ps => (1.0 + rho) / (mu * a),
        Discipline::Sa => {
            let b = rho - a;
            ((1.0 + rho).powi(2) * (1.0 + a) + a * b) / (mu * a * (1.0 + a) * (1.0 + rho))
        }
    })
}

/// `E[x_k²]`.
pub fn second_moment(params: &MultiSourceParams, discipline: Discipline, k: usize) -> Result<f64, DisciplineError> {
    params.check_source(k)?;
    let mu2 = params.mu() * params.mu();
    let rho = params.rho();
    let a = params.rho_k(k);
    Ok(match discipline {
        Discipline::Np => {
            2.0 * (a * a * rho + a * (rho * rho - 1.0) + (1.0 + rho).powi(3)) / (mu2 * a * a * (1.0 + rho))
        }
        Discipline::Ps => 2.0 * ((1.0 + rho).powi(2) - a) / (mu2 * a * a),
        Discipline::Sa => {
            let num = -a.powi(3) * (3.0 + 2.0 * rho)
                + a * a * (rho.powi(3) + 4.0 * rho * rho + 2.0 * rho - 2.0)
                + a * (1.0 + rho) * (2.0 * rho * rho + 5.0 * rho + 1.0)
                + (1.0 + rho).powi(3);
            2.0 * num / (mu2 * a * a * (1.0 + a).powi(2) * (1.0 + rho))
        }
    })
}

/// `E[x_{k1} x_{k2}]` for distinct sources.
pub fn cross_moment(
    params: &MultiSourceParams,
    discipline: Discipline,
    k1: usize,
    k2: usize,
) -> Result<f64, DisciplineError> {
    params.check_set(&[k1, k2])?;
    let mu2 = params.mu() * params.mu();
    let rho = params.rho();
    let (a, b) = (params.rho_k(k1), params.rho_k(k2));
    let p = a + b;
    Ok(match discipline {
        Discipline::Np => {
            (rho * (1.0 + rho) * p * p + p * ((1.0 + rho).powi(3) + 2.0 * rho * a * b) - 2.0 * a * b * (1.0 + rho))
                / (mu2 * a * b * (1.0 + rho) * p)
        }
        Discipline::Ps => ((1.0 + rho).powi(2) * p - 2.0 * a * b) / (mu2 * a * b * p),
        Discipline::Sa => {
            let x = a * b;
            let r = rho;
            let alpha3 = -2.0 * (1.0 + r);
            let alpha2 = p * (-(2.0 + r) * p + (r.powi(3) + 5.0 * r * r + 5.0 * r - 1.0));
            let alpha1 = -(2.0 * r + 3.0) * p.powi(3)
                + p * p * (2.0 * r.powi(3) + 9.0 * r * r + 9.0 * r - 1.0)
                + 2.0 * p * r * (r + 2.0).powi(2)
                - 2.0 * (1.0 + r);
            let alpha0 = (1.0 + r) * p * (1.0 + p) * (-p * p + p * ((1.0 + r).powi(2) + r) + (1.0 + r).powi(2));
            let num = alpha0 + x * (alpha1 + x * (alpha2 + x * alpha3));
            num / (mu2 * x * (1.0 + a).powi(2) * (1.0 + b).powi(2) * (1.0 + r) * p)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: [f64; 2],
    pub second_moment: [f64; 2],
    pub cross_moment: f64,
}

impl Moments {
    pub fn correlation(&self) -> Result<f64, DisciplineError> {
        pearson(
            self.mean[0],
            self.second_moment[0],
            self.mean[1],
            self.second_moment[1],
            self.cross_moment,
        )
    }
}

/// Means, second moments and the cross moment of two distinct sources.
pub fn moments(
    params: &MultiSourceParams,
    discipline: Discipline,
    k1: usize,
    k2: usize,
) -> Result<Moments, DisciplineError> {
    Ok(Moments {
        mean: [mean(params, discipline, k1)?, mean(params, discipline, k2)?],
        second_moment: [
            second_moment(params, discipline, k1)?,
            second_moment(params, discipline, k2)?,
        ],
        cross_moment: cross_moment(params, discipline, k1, k2)?,
    })
}

/// Pearson coefficient from first, second and cross moments.
pub fn pearson(m1: f64, s1: f64, m2: f64, s2: f64, cross: f64) -> Result<f64, DisciplineError> {
    let v1 = s1 - m1 * m1;
    let v2 = s2 - m2 * m2;
    if !(v1 > 0.0) {
        return Err(DisciplineError::DegenerateVariance(1));
    }
    if !(v2 > 0.0) {
        return Err(DisciplineError::DegenerateVariance(2));
    }
    Ok((cross - m1 * m2) / (v1 * v2).sqrt())
}

/// Closed-form correlation coefficient of the AoI of sources `k1` and `k2`.
pub fn correlation(
    params: &MultiSourceParams,
    discipline: Discipline,
    k1: usize,
    k2: usize,
) -> Result<f64, DisciplineError> {
    params.check_set(&[k1, k2])?;
    let rho = params.rho();
    let (a, b) = (params.rho_k(k1), params.rho_k(k2));
    let p = a + b;
    let minus = |x: f64| rho - x;
    Ok(match discipline {
        Discipline::Np => {
            let rz = params.rho_minus(&[k1, k2]);
            let scale =
                |x: f64| ((1.0 + rho).powi(2) * (rho * rho + 2.0 * minus(x) + 1.0) + x * x * rho * (rho + 2.0)).sqrt();
            a * b * (p * rho * rho - 2.0 * (rho * rz + 2.0 * rho + 1.0)) / (p * scale(a) * scale(b))
        }
        Discipline::Ps => {
            let f = |x: f64| rho * rho + 2.0 * minus(x) + 1.0;
            -2.0 * a * b / (p * (f(a) * f(b)).sqrt())
        }
        Discipline::Sa => {
            let r = rho;
            let g = a * a * b * b * (p + 2.0 * (1.0 + r).powi(2))
                + a * b * p * (2.0 * p + 3.0 * r * r + 6.0 * r + 5.0)
                + p.powi(3)
                + 2.0 * p * p * (r * r + 2.0 * r + 2.0)
                + p * (3.0 * r * r + 6.0 * r + 4.0)
                + 2.0 * (1.0 + r).powi(2);
            let f = |x: f64| {
                let m = minus(x);
                x.powi(3) * (r + m)
                    + x * x * (r.powi(3) * (r + 2.0) + m * (2.0 * r * r + 9.0 * r + 8.0))
                    + x * (r * (2.0 * r + 1.0) * (1.0 + r).powi(2) + m * (2.0 * r + 3.0) + m * m * (3.0 * r + 4.0))
                    + (1.0 + r).powi(4)
            };
            -a * b * g / (p * (1.0 + a) * (1.0 + b) * (f(a) * f(b)).sqrt())
        }
    })
}

/// Correlation coefficient of a two-source system written in the loads
/// `ρ1, ρ2` only.
pub fn correlation_two_source(params: &MultiSourceParams, discipline: Discipline) -> Result<f64, DisciplineError> {
    if params.sources() != 2 {
        return Err(DisciplineError::InvalidParams(format!(
            "two-source form needs N = 2, got {}",
            params.sources()
        )));
    }
    let (r1, r2) = (params.rho_k(1), params.rho_k(2));
    let r = r1 + r2;
    Ok(match discipline {
        Discipline::Np => {
            let scale = |x: f64, y: f64| ((1.0 + r).powi(2) * (r * r + 2.0 * y + 1.0) + x * x * r * (r + 2.0)).sqrt();
            r1 * r2 * (r.powi(3) - 2.0 * (2.0 * r + 1.0)) / (r * scale(r1, r2) * scale(r2, r1))
        }
        Discipline::Ps => -2.0 * r1 * r2 / (r * ((r * r + 2.0 * r1 + 1.0) * (r * r + 2.0 * r2 + 1.0)).sqrt()),
        Discipline::Sa => {
            let g = r1 * r1 * r2 * r2 * (r + 2.0) * (2.0 * r + 1.0)
                + r1 * r2 * r * (1.0 + r) * (3.0 * r + 5.0)
                + 2.0 * (1.0 + r).powi(4);
            let f = |y: f64, z: f64| {
                z.powi(3) * y
                    + y * y * z * (2.0 * r * r + 7.0 * r + 4.0)
                    + y * z * (r * r + 6.0 * r + 3.0)
                    + y * y * r.powi(3) * (r + 2.0)
                    + y * r * (2.0 * r.powi(3) + 6.0 * r * r + 4.0 * r + 1.0)
                    + (1.0 + r).powi(4)
            };
            -r1 * r2 * g / (r * (1.0 + r1) * (1.0 + r2) * (f(r1, r2) * f(r2, r1)).sqrt())
        }
    })
}

/// Load at which the two AoI processes of a symmetric two-source queue
/// without preemption become uncorrelated: the root of `ρ³ - 4ρ - 2` above
/// `2/√3`, by bisection.
pub fn rho_threshold_np() -> f64 {
    let f = |r: f64| r.powi(3) - 4.0 * r - 2.0;
    let mut lo = 2.0 / 3f64.sqrt();
    let mut hi = 4.0;
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym() -> MultiSourceParams {
        MultiSourceParams::new(vec![0.5, 0.5], 1.0).unwrap()
    }

    #[test]
    fn symmetric_means() {
        let p = sym();
        assert!((mean(&p, Discipline::Np, 1).unwrap() - 4.5).abs() < 1e-14);
        assert!((mean(&p, Discipline::Ps, 1).unwrap() - 4.0).abs() < 1e-14);
        assert!((mean(&p, Discipline::Sa, 1).unwrap() - 6.25 / 1.5).abs() < 1e-14);
        assert!((second_moment(&p, Discipline::Ps, 2).unwrap() - 28.0).abs() < 1e-13);
    }

    #[test]
    fn symmetric_correlations() {
        let p = sym();
        assert!((correlation(&p, Discipline::Ps, 1, 2).unwrap() + 1.0 / 6.0).abs() < 1e-12);
        let np = correlation(&p, Discipline::Np, 1, 2).unwrap();
        assert!((np - 0.25 * (1.0 - 6.0) / 12.75).abs() < 1e-12, "{np}");
    }

    #[test]
    fn closed_forms_match_pearson() {
        let p = MultiSourceParams::new(vec![0.3, 1.4, 0.8, 2.1], 1.3).unwrap();
        for d in Discipline::ALL {
            let m = moments(&p, d, 2, 4).unwrap();
            let c = correlation(&p, d, 2, 4).unwrap();
            assert!((m.correlation().unwrap() - c).abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn two_source_forms_agree() {
        let p = MultiSourceParams::new(vec![0.3, 1.4], 0.7).unwrap();
        for d in Discipline::ALL {
            let a = correlation_two_source(&p, d).unwrap();
            let b = correlation(&p, d, 1, 2).unwrap();
            assert!((a - b).abs() < 1e-12, "{d} {a} {b}");
        }
        assert!(correlation_two_source(&MultiSourceParams::new(vec![1.0; 3], 1.0).unwrap(), Discipline::Ps).is_err());
    }

    #[test]
    fn threshold() {
        let r = rho_threshold_np();
        assert!((2.2142..=2.2144).contains(&r));
        assert!((r.powi(3) - 4.0 * r - 2.0).abs() < 1e-9);
        let at = |rho: f64| {
            let p = MultiSourceParams::from_loads(&[rho / 2.0, rho / 2.0], 1.0).unwrap();
            correlation(&p, Discipline::Np, 1, 2).unwrap()
        };
        assert!(at(r + 1e-3) > 0.0 && at(r - 1e-3) < 0.0);
        assert!(at(r).abs() < 1e-10);
    }

    #[test]
    fn pearson_rejects_zero_variance() {
        assert!(pearson(1.0, 1.0, 1.0, 2.0, 1.0).is_err());
    }
}
