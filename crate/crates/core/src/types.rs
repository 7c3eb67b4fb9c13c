//! Small identifiers shared across modules.

use std::fmt;

/// Index of a memory slice (and of its mesh node).
pub type SliceId = usize;

/// Handle of a matrix in a workload graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MatrixId(pub u32);

impl fmt::Display for MatrixId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Handle of a node in a workload graph; also the task id in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Storage orientation of a mapped matrix. Backward passes read weights
/// through a transposed copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Orientation {
    Forward,
    Transposed,
}

/// Half-open rectangle of matrix indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Region {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Region {
    pub fn new(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Self {
        Region {
            row0: rows.start,
            row1: rows.end,
            col0: cols.start,
            col1: cols.end,
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Region::new(0..rows, 0..cols)
    }

    pub fn rows(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn cols(&self) -> usize {
        self.col1 - self.col0
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row1 && col >= self.col0 && col < self.col1
    }

    pub fn intersect(&self, other: &Region) -> Option<Region> {
        let r = Region {
            row0: self.row0.max(other.row0),
            row1: self.row1.min(other.row1),
            col0: self.col0.max(other.col0),
            col1: self.col1.min(other.col1),
        };
        (r.row0 < r.row1 && r.col0 < r.col1).then_some(r)
    }

    pub fn transpose(&self) -> Region {
        Region {
            row0: self.col0,
            row1: self.col1,
            col0: self.row0,
            col1: self.row1,
        }
    }
}
