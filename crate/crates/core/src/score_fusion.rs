//! Attention-weighted merge of a `k x k` grid of position-sensitive scores.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct GridScores<T> {
    k: usize,
    task: Vec<T>,
    attention: Vec<T>,
}

impl<T: Scalar> GridScores<T> {
    pub fn new(k: usize, task: Vec<T>, attention: Vec<T>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("grid side must be at least 1".into()));
        }
        let cells = k * k;
        if task.len() != cells || attention.len() != cells {
            return Err(Error::InvalidParameter(format!(
                "expected {cells} task and attention scores, got {} and {}",
                task.len(),
                attention.len()
            )));
        }
        if task.iter().chain(&attention).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("grid scores must be finite".into()));
        }
        Ok(Self { k, task, attention })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Softmax of the attention logits, shifted by their maximum.
    pub fn attention_weights(&self) -> Vec<T> {
        let max = self.attention.iter().copied().fold(T::neg_infinity(), T::max);
        let exp: Vec<T> = self.attention.iter().map(|a| (*a - max).exp()).collect();
        let norm: T = exp.iter().copied().sum();
        exp.into_iter().map(|v| v / norm).collect()
    }

    /// `sum_i task[i] * softmax(attention)[i]`
    pub fn fuse(&self) -> T {
        self.task
            .iter()
            .zip(self.attention_weights())
            .map(|(t, w)| *t * w)
            .sum()
    }
}

pub fn fuse<T: Scalar>(gs: &GridScores<T>) -> T {
    gs.fuse()
}
