//! Per-task label transition matrices for weakly labeled data.
//!
//! Each matrix is stored as unconstrained scores; the realized matrix is
//! the row-wise softmax, so every row is a distribution with positive
//! entries. Entry `[i][j]` is the probability that true class `i` was
//! labeled `j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tape::{softmax_in_place, ParamId, Tape, Var};
use super::tensor::{ParamStore, Tensor};

/// Tape group of the noise parameters.
pub const NOISE_GROUP: usize = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NoiseError {
    #[error("distribution has {found} classes, transition matrix has {expected}")]
    ShapeMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    params: ParamStore,
    sizes: Vec<usize>,
}

impl NoiseModel {
    /// Rows start with `self_mass` on the diagonal and the rest spread evenly.
    pub fn new(task_names: &[String], sizes: &[usize], self_mass: f64) -> Self {
        let mut params = ParamStore::new();
        for (name, &c) in task_names.iter().zip(sizes) {
            let off = if c > 1 {
                (1.0 - self_mass) / (c - 1) as f64
            } else {
                0.0
            };
            let mut data = vec![off.ln(); c * c];
            for i in 0..c {
                data[i * c + i] = if c > 1 { self_mass.ln() } else { 0.0 };
            }
            params.push(
                format!("transition.{name}"),
                Tensor::from_vec(&[c, c], data).expect("shape"),
            );
        }
        Self {
            params,
            sizes: sizes.to_vec(),
        }
    }

    pub fn task_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn scores_id(&self, task: usize) -> ParamId {
        ParamId {
            group: NOISE_GROUP,
            index: task,
        }
    }

    /// The realized row-stochastic matrix of `task`, row-major.
    pub fn transition(&self, task: usize) -> Vec<f64> {
        let s = self.params.get(task);
        let c = s.cols();
        let mut t = s.data().to_vec();
        for row in t.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        t
    }

    /// Records the realized matrix of `task` on a tape whose group
    /// [`NOISE_GROUP`] is this model's store.
    pub fn transition_node(&self, tape: &mut Tape, task: usize) -> Var {
        tape.row_softmax(self.scores_id(task))
    }

    pub fn replace_params(&mut self, params: ParamStore) -> Result<(), String> {
        if params.len() != self.params.len() {
            return Err(format!(
                "expected {} transition matrices, found {}",
                self.params.len(),
                params.len()
            ));
        }
        for ((name, t), (own_name, own)) in params.iter().zip(self.params.iter()) {
            if name != own_name || t.shape() != own.shape() {
                return Err(format!(
                    "transition tensor {name} does not match {own_name}"
                ));
            }
        }
        self.params = params;
        Ok(())
    }
}

/// `p_noisy[j] = sum_i p_clean[i] * t[i][j]` for a row-major `t`.
pub fn apply_noise(p_clean: &[f64], t: &[f64]) -> Result<Vec<f64>, NoiseError> {
    let c = p_clean.len();
    if t.len() != c * c {
        return Err(NoiseError::ShapeMismatch {
            expected: (t.len() as f64).sqrt() as usize,
            found: c,
        });
    }
    let mut out = vec![0.0; c];
    for (pi, row) in p_clean.iter().zip(t.chunks_exact(c)) {
        for (o, tij) in out.iter_mut().zip(row) {
            *o += pi * tij;
        }
    }
    Ok(out)
}

/// Mean over rows of the L1 distance between two row-major square matrices.
pub fn mean_row_l1(a: &[f64], b: &[f64]) -> f64 {
    let c = (a.len() as f64).sqrt() as usize;
    assert_eq!(a.len(), b.len());
    a.chunks_exact(c)
        .zip(b.chunks_exact(c))
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum::<f64>()
        / c as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_keeps_distribution() {
        let t = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(
            apply_noise(&[0.2, 0.3, 0.5], &t).unwrap(),
            vec![0.2, 0.3, 0.5]
        );
    }

    #[test]
    fn uniform_rows_absorb() {
        let t = vec![0.25; 16];
        let out = apply_noise(&[0.7, 0.1, 0.1, 0.1], &t).unwrap();
        for v in out {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_class_example() {
        // oracle by hand: 0.8*0.9 + 0.2*0.3 = 0.78, 0.8*0.1 + 0.2*0.7 = 0.22
        let out = apply_noise(&[0.8, 0.2], &[0.9, 0.1, 0.3, 0.7]).unwrap();
        assert!((out[0] - 0.78).abs() < 1e-15);
        assert!((out[1] - 0.22).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        assert!(apply_noise(&[0.5, 0.5], &[1.0; 9]).is_err());
    }

    #[test]
    fn initial_rows_normalized_and_positive() {
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let m = NoiseModel::new(&names, &[10, 3], 0.9);
        for k in 0..2 {
            let t = m.transition(k);
            let c = m.sizes()[k];
            for (i, row) in t.chunks_exact(c).enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&v| v > 0.0));
                assert!((row[i] - 0.9).abs() < 1e-12);
            }
        }
    }
}
