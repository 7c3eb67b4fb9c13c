//! Functional contents of every matrix, with a written flag per element so
//! that reading data before it is produced is caught.

use crate::error::{Error, Result};
use crate::oracle::Matrix;
use crate::types::{MatrixId, Region};
use crate::workloads::OpGraph;

#[derive(Debug, Clone)]
struct Slot {
    cols: usize,
    values: Vec<f32>,
    written: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Store {
    slots: Vec<Slot>,
    names: Vec<String>,
}

impl Store {
    /// Zeroed, unwritten matrices for every entry of `graph`.
    pub fn new(graph: &OpGraph) -> Self {
        let slots = graph
            .matrices
            .iter()
            .map(|m| Slot {
                cols: m.cols,
                values: vec![0.0; m.rows * m.cols],
                written: vec![false; m.rows * m.cols],
            })
            .collect();
        let names = graph.matrices.iter().map(|m| m.name.clone()).collect();
        Store { slots, names }
    }

    pub fn load(&mut self, id: MatrixId, m: &Matrix) -> Result<()> {
        let slot = &mut self.slots[id.0 as usize];
        if m.rows() * m.cols() != slot.values.len() || m.cols() != slot.cols {
            return Err(Error::Shape(format!(
                "initial data for {} is {:?}",
                self.names[id.0 as usize],
                m.shape()
            )));
        }
        for (v, x) in slot.values.iter_mut().zip(m.data()) {
            *v = *x as f32;
        }
        slot.written.iter_mut().for_each(|w| *w = true);
        Ok(())
    }

    pub fn get(&self, id: MatrixId, r: usize, c: usize) -> f32 {
        let s = &self.slots[id.0 as usize];
        s.values[r * s.cols + c]
    }

    pub fn set(&mut self, id: MatrixId, r: usize, c: usize, v: f32) {
        let s = &mut self.slots[id.0 as usize];
        let i = r * s.cols + c;
        s.values[i] = v;
        s.written[i] = true;
    }

    /// Fails unless every element of `region` has been written.
    pub fn check_ready(&self, id: MatrixId, region: Region) -> Result<()> {
        let s = &self.slots[id.0 as usize];
        for r in region.row0..region.row1 {
            let base = r * s.cols;
            if let Some(c) = (region.col0..region.col1).find(|&c| !s.written[base + c]) {
                return Err(Error::Sequencer(format!(
                    "read of {}[{r}, {c}] before it was written",
                    self.names[id.0 as usize]
                )));
            }
        }
        Ok(())
    }

    pub fn matrix(&self, id: MatrixId) -> Matrix {
        let s = &self.slots[id.0 as usize];
        let rows = s.values.len().checked_div(s.cols).unwrap_or(0);
        Matrix::from_fn(rows, s.cols, |r, c| s.values[r * s.cols + c] as f64)
    }

    pub fn name(&self, id: MatrixId) -> &str {
        &self.names[id.0 as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::{GraphBuilder, MatrixRole};

    #[test]
    fn unwritten_reads_fail() {
        let mut g = GraphBuilder::new();
        let a = g.matrix("a", 2, 3, MatrixRole::Input);
        let mut s = Store::new(&g.finish());
        assert!(s.check_ready(a, Region::full(2, 3)).is_err());
        s.set(a, 1, 2, 4.0);
        assert!(s.check_ready(a, Region::new(1..2, 2..3)).is_ok());
        s.load(a, &Matrix::zeros(2, 3)).unwrap();
        assert!(s.check_ready(a, Region::full(2, 3)).is_ok());
        assert_eq!(s.matrix(a).shape(), (2, 3));
        assert!(s.load(a, &Matrix::zeros(3, 2)).is_err());
    }
}
