use std::collections::VecDeque;

use crate::autodiff::{Graph, Tensor, TensorError, Var};

/// FIFO of detached encoder means for one domain.
///
/// Batch size is one, so each MMD estimate pairs the current mean (still
/// attached to the graph) with up to `capacity − 1` earlier means held as
/// constants.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBuffer {
    capacity: usize,
    dim: usize,
    entries: VecDeque<Vec<f64>>,
}

impl LatentBuffer {
    pub fn new(capacity: usize, dim: usize) -> Self {
        assert!(capacity >= 2, "latent buffer capacity must be at least 2");
        Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(Vec::as_slice)
    }

    pub fn push(&mut self, mean: &[f64]) {
        assert_eq!(mean.len(), self.dim, "latent width");
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(mean.to_vec());
    }

    /// Whether a set drawn from this buffer can feed the MMD estimator.
    pub fn ready(&self) -> bool {
        self.entries.len() >= 2
    }

    /// Stacks `current` on top of every entry except the newest, giving a
    /// `len × L` set whose first row carries gradients.
    pub fn stacked_with(&self, g: &mut Graph, current: Var) -> Result<Var, TensorError> {
        let older = self.entries.len().saturating_sub(1);
        if older == 0 {
            return Ok(current);
        }
        let data: Vec<f64> = self.entries.iter().take(older).flatten().copied().collect();
        let rest = g.constant(Tensor::matrix(older, self.dim, data)?);
        g.stack_rows(&[current, rest])
    }

    pub(crate) fn from_entries(capacity: usize, dim: usize, entries: Vec<Vec<f64>>) -> Self {
        Self {
            capacity,
            dim,
            entries: entries.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_is_never_exceeded() {
        let mut b = LatentBuffer::new(3, 2);
        for i in 0..10 {
            b.push(&[i as f64, 0.0]);
            assert!(b.len() <= 3);
        }
        let firsts: Vec<f64> = b.entries().map(|e| e[0]).collect();
        assert_eq!(firsts, vec![7.0, 8.0, 9.0]);
    }

    #[test]
    fn ready_after_two_pushes() {
        let mut b = LatentBuffer::new(4, 1);
        assert!(!b.ready());
        b.push(&[1.0]);
        assert!(!b.ready());
        b.push(&[2.0]);
        assert!(b.ready());
    }

    #[test]
    fn stacked_set_replaces_newest_with_live_mean() {
        let mut b = LatentBuffer::new(4, 2);
        b.push(&[1.0, 1.0]);
        b.push(&[2.0, 2.0]);
        b.push(&[3.0, 3.0]);
        let mut g = Graph::new();
        let cur = g.param(Tensor::row(vec![9.0, 9.0]));
        let s = b.stacked_with(&mut g, cur).unwrap();
        assert_eq!(g.value(s).shape(), &[3, 2]);
        assert_eq!(g.value(s).data(), &[9.0, 9.0, 1.0, 1.0, 2.0, 2.0]);
        let total = g.sum(s).unwrap();
        g.backward(total).unwrap();
        assert_eq!(g.grad(cur).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    #[should_panic(expected = "capacity")]
    fn capacity_below_two_rejected() {
        LatentBuffer::new(1, 2);
    }
}
