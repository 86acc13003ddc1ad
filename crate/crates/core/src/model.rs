//! Piecewise-linear stochastic hybrid systems with binary reset maps.
//!
//! Between transitions every age component grows at unit rate. When
//! transition `l` fires the age row vector is reset to `x' = x·A_l`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Binary `n×n` reset matrix, stored row-major.
///
/// A well-formed map has at most one 1 per column: a zero column resets that
/// age to 0, a column `e_i` copies `x_i`. Malformed maps can still be built
/// with [`ResetMap::from_dense`] so that [`ShsModel::validate`] can report them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResetMap {
    dim: usize,
    entries: Vec<u8>,
}

impl ResetMap {
    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1;
        }
        Self { dim, entries }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0; dim * dim],
        }
    }

    /// Builds the map from per-column sources: `columns[j] = Some(i)` copies
    /// `x_i` into `x'_j`, `None` zeroes it.
    pub fn from_columns(dim: usize, columns: &[Option<usize>]) -> Result<Self, ModelError> {
        if columns.len() != dim {
            return Err(ModelError::ResetShape {
                expected: dim,
                got: columns.len(),
            });
        }
        let mut map = Self::zero(dim);
        for (col, src) in columns.iter().enumerate() {
            if let Some(row) = *src {
                if row >= dim {
                    return Err(ModelError::ResetRow { row, dim });
                }
                map.entries[row * dim + col] = 1;
            }
        }
        Ok(map)
    }

    /// Raw row-major entries; structure is checked by [`ShsModel::validate`].
    pub fn from_dense(dim: usize, entries: Vec<u8>) -> Result<Self, ModelError> {
        if entries.len() != dim * dim {
            return Err(ModelError::ResetShape {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> u8 {
        self.entries[row * self.dim + col]
    }

    /// Structural problems of this matrix, as human-readable reasons.
    pub fn defects(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, &e) in self.entries.iter().enumerate() {
            if e > 1 {
                out.push(format!(
                    "non-binary entry {e} at row {}, column {}",
                    i / self.dim,
                    i % self.dim
                ));
            }
        }
        for col in 0..self.dim {
            let ones = (0..self.dim).filter(|&r| self.entry(r, col) != 0).count();
            if ones > 1 {
                out.push(format!("column {col} contains {ones} ones"));
            }
        }
        out
    }

    pub fn is_well_formed(&self) -> bool {
        self.defects().is_empty()
    }

    /// Column sources. Only meaningful for well-formed maps; for a column
    /// with several ones the first row wins.
    pub fn columns(&self) -> Vec<Option<usize>> {
        (0..self.dim)
            .map(|col| (0..self.dim).find(|&r| self.entry(r, col) != 0))
            .collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| f64::from(self.entry(r, c)))
    }

    /// `out = x·A` for a well-formed map.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (col, slot) in out.iter_mut().enumerate().take(self.dim) {
            *slot = (0..self.dim).find(|&r| self.entry(r, col) != 0).map_or(0.0, |r| x[r]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub id: usize,
    pub source: usize,
    pub target: usize,
    pub rate: f64,
    pub reset: ResetMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShsModel {
    num_states: usize,
    age_dim: usize,
    transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// `None` for model-level problems.
    pub transition_id: Option<usize>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.transition_id {
            Some(id) => write!(f, "transition {id}: {}", self.reason),
            None => write!(f, "model: {}", self.reason),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("reset map has {got} entries, expected {expected}")]
    ResetShape { expected: usize, got: usize },
    #[error("reset column source {row} out of range for age dimension {dim}")]
    ResetRow { row: usize, dim: usize },
    #[error("state {state} out of range ({num_states} states)")]
    InvalidState { state: usize, num_states: usize },
    #[error("invalid model: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("model file: {0}")]
    Parse(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ShsModel {
    pub fn new(num_states: usize, age_dim: usize, transitions: Vec<Transition>) -> Self {
        Self {
            num_states,
            age_dim,
            transitions,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn age_dim(&self) -> usize {
        self.age_dim
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Every structural violation, or `Ok` if there are none.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        if self.num_states == 0 {
            v.push(Violation {
                transition_id: None,
                reason: "model needs at least one discrete state".into(),
            });
        }
        if self.age_dim == 0 {
            v.push(Violation {
                transition_id: None,
                reason: "age dimension must be at least 1".into(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.transitions {
            let mut push = |reason: String| {
                v.push(Violation {
                    transition_id: Some(t.id),
                    reason,
                })
            };
            if !seen.insert(t.id) {
                push("duplicate transition id".into());
            }
            if !(t.rate > 0.0) || !t.rate.is_finite() {
                push(format!("non-positive rate {}", t.rate));
            }
            if t.source >= self.num_states {
                push(format!("source state {} out of range", t.source));
            }
            if t.target >= self.num_states {
                push(format!("target state {} out of range", t.target));
            }
            if t.reset.dim() != self.age_dim {
                push(format!(
                    "reset map is {0}x{0}, expected {1}x{1}",
                    t.reset.dim(),
                    self.age_dim
                ));
            } else {
                for d in t.reset.defects() {
                    push(d);
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// Like [`validate`](Self::validate) but as a `Result` with a single error type.
    pub fn check(&self) -> Result<(), ModelError> {
        self.validate().map_err(ModelError::Invalid)
    }

    fn check_state(&self, state: usize) -> Result<(), ModelError> {
        if state >= self.num_states {
            return Err(ModelError::InvalidState {
                state,
                num_states: self.num_states,
            });
        }
        Ok(())
    }

    pub fn outgoing(&self, state: usize) -> Result<Vec<&Transition>, ModelError> {
        self.check_state(state)?;
        Ok(self.transitions.iter().filter(|t| t.source == state).collect())
    }

    pub fn incoming(&self, state: usize) -> Result<Vec<&Transition>, ModelError> {
        self.check_state(state)?;
        Ok(self.transitions.iter().filter(|t| t.target == state).collect())
    }

    /// Total outgoing rate `d_q` of every state, self-transitions included.
    pub fn exit_rates(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.num_states];
        for t in &self.transitions {
            if t.source < self.num_states {
                d[t.source] += t.rate;
            }
        }
        d
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from_model(self)).expect("model file serialization cannot fail")
    }
}

/// On-disk model document.
///
/// ```json
/// { "num_states": 2, "age_dim": 2,
///   "transitions": [ { "id": 1, "source": 0, "target": 1, "rate": 0.5,
///                      "reset": [null, 1] } ] }
/// ```
/// `reset[j]` is the row index of the single 1 in column `j`, or `null` for a
/// zero column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub num_states: usize,
    pub age_dim: usize,
    pub transitions: Vec<TransitionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub id: usize,
    pub source: usize,
    pub target: usize,
    pub rate: f64,
    pub reset: Vec<Option<usize>>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<ShsModel, ModelError> {
        let transitions = self
            .transitions
            .into_iter()
            .map(|r| {
                Ok(Transition {
                    id: r.id,
                    source: r.source,
                    target: r.target,
                    rate: r.rate,
                    reset: ResetMap::from_columns(self.age_dim, &r.reset)?,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let model = ShsModel::new(self.num_states, self.age_dim, transitions);
        model.check()?;
        Ok(model)
    }

    pub fn from_model(model: &ShsModel) -> Self {
        Self {
            num_states: model.num_states,
            age_dim: model.age_dim,
            transitions: model
                .transitions
                .iter()
                .map(|t| TransitionRecord {
                    id: t.id,
                    source: t.source,
                    target: t.target,
                    rate: t.rate,
                    reset: t.reset.columns(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> ShsModel {
        ShsModel::new(
            2,
            2,
            vec![
                Transition {
                    id: 1,
                    source: 0,
                    target: 1,
                    rate: 1.0,
                    reset: ResetMap::from_columns(2, &[None, Some(1)]).unwrap(),
                },
                Transition {
                    id: 2,
                    source: 1,
                    target: 0,
                    rate: 2.0,
                    reset: ResetMap::from_columns(2, &[None, Some(0)]).unwrap(),
                },
            ],
        )
    }

    #[test]
    fn valid_model_passes() {
        assert!(two_state().validate().is_ok());
    }

    #[test]
    fn double_one_in_column_is_reported() {
        let mut m = two_state();
        m.transitions[0].reset = ResetMap::from_dense(2, vec![1, 0, 1, 1]).unwrap();
        let v = m.validate().unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].transition_id, Some(1));
        assert!(v[0].reason.contains("column 0"), "{}", v[0].reason);
    }

    #[test]
    fn zero_rate_is_reported() {
        let mut m = two_state();
        m.transitions[1].rate = 0.0;
        let v = m.validate().unwrap_err();
        assert!(v[0].reason.contains("non-positive rate"));
        assert_eq!(v[0].transition_id, Some(2));
    }

    #[test]
    fn bad_states_and_shapes_are_all_reported() {
        let m = ShsModel::new(
            1,
            2,
            vec![Transition {
                id: 7,
                source: 0,
                target: 3,
                rate: -1.0,
                reset: ResetMap::identity(3),
            }],
        );
        let v = m.validate().unwrap_err();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|x| x.transition_id == Some(7)));
    }

    #[test]
    fn validate_is_idempotent() {
        let mut m = two_state();
        m.transitions[1].rate = -3.0;
        assert_eq!(m.validate(), m.validate());
    }

    #[test]
    fn incoming_outgoing_partition() {
        let m = ShsModel::new(1, 1, vec![]);
        assert!(m.outgoing(0).unwrap().is_empty());
        assert!(m.incoming(0).unwrap().is_empty());
        assert!(matches!(m.outgoing(1), Err(ModelError::InvalidState { .. })));
        let m = two_state();
        assert_eq!(m.outgoing(0).unwrap()[0].id, 1);
        assert_eq!(m.incoming(0).unwrap()[0].id, 2);
    }

    #[test]
    fn reset_apply_and_columns() {
        let a = ResetMap::from_columns(3, &[None, Some(0), Some(2)]).unwrap();
        let mut out = [0.0; 3];
        a.apply(&[1.5, 2.5, 3.5], &mut out);
        assert_eq!(out, [0.0, 1.5, 3.5]);
        assert_eq!(a.columns(), vec![None, Some(0), Some(2)]);
        assert!(matches!(
            ResetMap::from_columns(3, &[Some(3), None, None]),
            Err(ModelError::ResetRow { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let m = two_state();
        let back = ShsModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_rejects_invalid_models() {
        let text = r#"{"num_states": 1, "age_dim": 1,
            "transitions": [{"id": 1, "source": 0, "target": 0, "rate": 0.0, "reset": [null]}]}"#;
        assert!(matches!(ShsModel::from_json(text), Err(ModelError::Invalid(_))));
        assert!(matches!(
            ShsModel::from_json("{\"num_states\": 1}"),
            Err(ModelError::Parse(_))
        ));
    }
}
