//! Programmable memory interface tables: abstract matrix indices to
//! per-slice byte addresses.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{MatrixId, Orientation, Region, SliceId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PmiEntry {
    pub matrix: MatrixId,
    pub orientation: Orientation,
    pub region: Region,
    /// Byte address of `(region.row0, region.col0)` in the slice.
    pub base: u64,
    /// Elements per stored row.
    pub stride: usize,
    /// Space held for a matrix that is produced during execution.
    pub reserved: bool,
}

impl PmiEntry {
    pub fn bytes(&self, element_bytes: u64) -> u64 {
        self.region.len() as u64 * element_bytes
    }
}

/// Rectilinear index over the entries of one (matrix, orientation): binary
/// search on row and column boundaries, then a cell lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Grid {
    rows: Vec<usize>,
    cols: Vec<usize>,
    cells: Vec<Option<(SliceId, usize)>>,
}

impl Grid {
    fn find(&self, row: usize, col: usize) -> Option<(SliceId, usize)> {
        let r = self.rows.partition_point(|&b| b <= row);
        let c = self.cols.partition_point(|&b| b <= col);
        if r == 0 || c == 0 || r >= self.rows.len() || c >= self.cols.len() {
            return None;
        }
        self.cells[(r - 1) * (self.cols.len() - 1) + (c - 1)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PmiTable {
    pub element_bytes: u64,
    capacity: Option<u64>,
    entries: Vec<Vec<PmiEntry>>,
    next_free: Vec<u64>,
    index: BTreeMap<(MatrixId, Orientation), Grid>,
}

impl PmiTable {
    pub fn new(slices: usize, element_bytes: u64, capacity: Option<u64>) -> Self {
        PmiTable {
            element_bytes,
            capacity,
            entries: vec![Vec::new(); slices],
            next_free: vec![0; slices],
            index: BTreeMap::new(),
        }
    }

    pub fn slices(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self, slice: SliceId) -> &[PmiEntry] {
        &self.entries[slice]
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes allocated on a slice.
    pub fn used_bytes(&self, slice: SliceId) -> u64 {
        self.next_free[slice]
    }

    /// Orientations a matrix is mapped under.
    pub fn orientations(&self, matrix: MatrixId) -> Vec<Orientation> {
        self.index
            .keys()
            .filter(|(m, _)| *m == matrix)
            .map(|(_, o)| *o)
            .collect()
    }

    /// Append an entry with the next free address of the slice.
    pub fn insert(
        &mut self,
        slice: SliceId,
        matrix: MatrixId,
        orientation: Orientation,
        region: Region,
        reserved: bool,
    ) -> Result<()> {
        if slice >= self.entries.len() {
            return Err(Error::Plan(format!("PMI entry for unknown slice {slice}")));
        }
        if region.is_empty() {
            return Ok(());
        }
        let base = self.next_free[slice];
        let bytes = region.len() as u64 * self.element_bytes;
        if let Some(cap) = self.capacity {
            if base + bytes > cap {
                return Err(Error::Plan(format!(
                    "slice {slice} memory capacity exceeded: {} bytes needed, {cap} available",
                    base + bytes
                )));
            }
        }
        self.next_free[slice] = base + bytes;
        self.entries[slice].push(PmiEntry {
            matrix,
            orientation,
            region,
            base,
            stride: region.cols(),
            reserved,
        });
        self.index.remove(&(matrix, orientation));
        Ok(())
    }

    /// Build the lookup grids; fails if two entries of one mapping overlap.
    pub fn finalize(&mut self) -> Result<()> {
        let mut by_key: BTreeMap<(MatrixId, Orientation), Vec<(SliceId, usize)>> = BTreeMap::new();
        for (s, list) in self.entries.iter().enumerate() {
            for (i, e) in list.iter().enumerate() {
                by_key.entry((e.matrix, e.orientation)).or_default().push((s, i));
            }
        }
        self.index.clear();
        for (key, refs) in by_key {
            let mut rows: Vec<usize> = Vec::new();
            let mut cols: Vec<usize> = Vec::new();
            for &(s, i) in &refs {
                let r = self.entries[s][i].region;
                rows.extend([r.row0, r.row1]);
                cols.extend([r.col0, r.col1]);
            }
            rows.sort_unstable();
            rows.dedup();
            cols.sort_unstable();
            cols.dedup();
            let nc = cols.len() - 1;
            let mut cells = vec![None; (rows.len() - 1) * nc];
            for &(s, i) in &refs {
                let r = self.entries[s][i].region;
                let r0 = rows.binary_search(&r.row0).expect("boundary");
                let r1 = rows.binary_search(&r.row1).expect("boundary");
                let c0 = cols.binary_search(&r.col0).expect("boundary");
                let c1 = cols.binary_search(&r.col1).expect("boundary");
                for ri in r0..r1 {
                    for ci in c0..c1 {
                        let cell = &mut cells[ri * nc + ci];
                        if cell.is_some() {
                            return Err(Error::Plan(format!(
                                "overlapping PMI entries for {} ({:?})",
                                key.0, key.1
                            )));
                        }
                        *cell = Some((s, i));
                    }
                }
            }
            self.index.insert(key, Grid { rows, cols, cells });
        }
        Ok(())
    }

    pub fn entry_at(&self, matrix: MatrixId, orientation: Orientation, index: (usize, usize)) -> Result<&PmiEntry> {
        let unmapped = || Error::Unmapped {
            matrix: format!("{matrix} ({orientation:?})"),
            row: index.0,
            col: index.1,
        };
        let grid = self.index.get(&(matrix, orientation)).ok_or_else(unmapped)?;
        let (s, i) = grid.find(index.0, index.1).ok_or_else(unmapped)?;
        Ok(&self.entries[s][i])
    }

    /// Slice and byte address of one element.
    pub fn lookup(&self, matrix: MatrixId, orientation: Orientation, index: (usize, usize)) -> Result<(SliceId, u64)> {
        let grid = self.index.get(&(matrix, orientation));
        let found = grid.and_then(|g| g.find(index.0, index.1));
        let Some((s, i)) = found else {
            return Err(Error::Unmapped {
                matrix: format!("{matrix} ({orientation:?})"),
                row: index.0,
                col: index.1,
            });
        };
        let e = &self.entries[s][i];
        let offset = (index.0 - e.region.row0) * e.stride + (index.1 - e.region.col0);
        Ok((s, e.base + offset as u64 * self.element_bytes))
    }
}

/// Forward-orientation lookup.
pub fn pmi_lookup(table: &PmiTable, matrix: MatrixId, index: (usize, usize)) -> Result<(SliceId, u64)> {
    table.lookup(matrix, Orientation::Forward, index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> PmiTable {
        let mut t = PmiTable::new(2, 2, None);
        let m = MatrixId(0);
        t.insert(0, m, Orientation::Forward, Region::new(0..2, 0..4), false)
            .unwrap();
        t.insert(1, m, Orientation::Forward, Region::new(2..4, 0..4), false)
            .unwrap();
        t.insert(0, MatrixId(1), Orientation::Forward, Region::new(0..4, 0..4), true)
            .unwrap();
        t.finalize().unwrap();
        t
    }

    #[test]
    fn base_and_stride() {
        let t = table();
        assert_eq!(pmi_lookup(&t, MatrixId(0), (2, 0)).unwrap(), (1, 0));
        assert_eq!(pmi_lookup(&t, MatrixId(0), (2, 1)).unwrap(), (1, 2));
        assert_eq!(pmi_lookup(&t, MatrixId(0), (1, 3)).unwrap(), (0, 14));
        assert_eq!(pmi_lookup(&t, MatrixId(1), (0, 0)).unwrap(), (0, 16));
    }

    #[test]
    fn unmapped() {
        let t = table();
        assert!(matches!(
            pmi_lookup(&t, MatrixId(0), (4, 0)),
            Err(Error::Unmapped { .. })
        ));
        assert!(t.lookup(MatrixId(0), Orientation::Transposed, (0, 0)).is_err());
        assert!(pmi_lookup(&t, MatrixId(9), (0, 0)).is_err());
    }

    #[test]
    fn overlap_rejected() {
        let mut t = PmiTable::new(1, 2, None);
        t.insert(0, MatrixId(0), Orientation::Forward, Region::new(0..2, 0..2), false)
            .unwrap();
        t.insert(0, MatrixId(0), Orientation::Forward, Region::new(1..3, 0..2), false)
            .unwrap();
        assert!(t.finalize().is_err());
    }

    #[test]
    fn capacity_enforced() {
        let mut t = PmiTable::new(1, 2, Some(10));
        assert!(t
            .insert(0, MatrixId(0), Orientation::Forward, Region::full(2, 2), false)
            .is_ok());
        assert!(t
            .insert(0, MatrixId(1), Orientation::Forward, Region::full(1, 2), false)
            .is_err());
    }
}
