use nalgebra::DMatrix;

use super::assembly::Factored;
use super::SolverError;
use crate::model::ShsModel;

/// Stationary distribution of the discrete-state chain. Self-transitions do
/// not change the state and are ignored.
pub fn stationary_distribution(model: &ShsModel) -> Result<Vec<f64>, SolverError> {
    model.check()?;
    solve(model, 1e-12)
}

pub(crate) fn solve(model: &ShsModel, positivity_tol: f64) -> Result<Vec<f64>, SolverError> {
    let n = model.num_states();
    // rows: balance equations π·G = 0, transposed
    let mut a = DMatrix::<f64>::zeros(n, n);
    for t in model.transitions() {
        if t.source == t.target {
            continue;
        }
        a[(t.target, t.source)] += t.rate;
        a[(t.source, t.source)] -= t.rate;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let pi = Factored::new(a, 1e-12)
        .and_then(|f| f.solve(&rhs))
        .ok_or(SolverError::NotErgodic)?;
    if let Some((state, &value)) = pi.iter().enumerate().find(|(_, &p)| !(p > positivity_tol)) {
        return Err(SolverError::NotStrictlyPositive { state, value });
    }
    Ok(pi)
}
