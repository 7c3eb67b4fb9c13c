//! Aggregation engine: sums partials arriving from the slices of a product
//! and applies the post-op when the last one lands.

use crate::error::{Error, Result};
use crate::workloads::PostOp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregateOutcome {
    Pending,
    Finalized(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationSlot {
    pub index: (usize, usize),
    pub value: f32,
    pub received: usize,
    pub required: usize,
    pub post: PostOp,
}

impl AggregationSlot {
    pub fn new(index: (usize, usize), required: usize, post: PostOp) -> Self {
        AggregationSlot {
            index,
            value: 0.0,
            received: 0,
            required,
            post,
        }
    }

    pub fn is_final(&self) -> bool {
        self.received == self.required
    }

    pub fn aggregate(&mut self, partial: f32) -> Result<AggregateOutcome> {
        if self.received >= self.required {
            return Err(Error::FanInOverflow {
                row: self.index.0,
                col: self.index.1,
                received: self.received + 1,
                required: self.required,
            });
        }
        self.value += partial;
        self.received += 1;
        if self.is_final() {
            Ok(AggregateOutcome::Finalized(self.post.apply(self.value)))
        } else {
            Ok(AggregateOutcome::Pending)
        }
    }
}

/// Slots for a whole output matrix, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationTable {
    cols: usize,
    values: Vec<f32>,
    received: Vec<u32>,
    required: u32,
    post: PostOp,
    pending: usize,
}

impl AggregationTable {
    pub fn new(rows: usize, cols: usize, required: usize, post: PostOp) -> Self {
        AggregationTable {
            cols,
            values: vec![0.0; rows * cols],
            received: vec![0; rows * cols],
            required: required as u32,
            post,
            pending: rows * cols,
        }
    }

    /// Elements not yet finalized.
    pub fn pending(&self) -> usize {
        self.pending
    }

    /// Partials received so far for `index`.
    pub fn received(&self, index: (usize, usize)) -> usize {
        self.received[index.0 * self.cols + index.1] as usize
    }

    pub fn aggregate(&mut self, index: (usize, usize), partial: f32) -> Result<AggregateOutcome> {
        let i = index.0 * self.cols + index.1;
        if self.received[i] >= self.required {
            return Err(Error::FanInOverflow {
                row: index.0,
                col: index.1,
                received: self.received[i] as usize + 1,
                required: self.required as usize,
            });
        }
        self.values[i] += partial;
        self.received[i] += 1;
        if self.received[i] == self.required {
            self.pending -= 1;
            Ok(AggregateOutcome::Finalized(self.post.apply(self.values[i])))
        } else {
            Ok(AggregateOutcome::Pending)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_partials_add() {
        let mut s = AggregationSlot::new((0, 0), 2, PostOp::None);
        assert_eq!(s.aggregate(1.5).unwrap(), AggregateOutcome::Pending);
        assert_eq!(s.aggregate(2.5).unwrap(), AggregateOutcome::Finalized(4.0));
    }

    #[test]
    fn single_partial_finalizes() {
        let mut s = AggregationSlot::new((3, 1), 1, PostOp::None);
        assert_eq!(s.aggregate(7.0).unwrap(), AggregateOutcome::Finalized(7.0));
    }

    #[test]
    fn sigmoid_of_zero() {
        let mut s = AggregationSlot::new((0, 0), 2, PostOp::Sigmoid);
        s.aggregate(1.25).unwrap();
        assert_eq!(s.aggregate(-1.25).unwrap(), AggregateOutcome::Finalized(0.5));
    }

    #[test]
    fn overflow_is_an_error() {
        let mut s = AggregationSlot::new((0, 0), 1, PostOp::Tanh);
        s.aggregate(0.0).unwrap();
        assert!(matches!(s.aggregate(1.0), Err(Error::FanInOverflow { .. })));
        let mut t = AggregationTable::new(1, 2, 1, PostOp::None);
        t.aggregate((0, 1), 1.0).unwrap();
        assert_eq!(t.pending(), 1);
        assert!(t.aggregate((0, 1), 1.0).is_err());
    }
}
