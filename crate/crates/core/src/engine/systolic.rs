//! Weight-stationary systolic array: Register B holds a preloaded tile,
//! Register A rows shift down one PE row per wave, and each PE row's adder
//! tree reduces its products.

use crate::error::{Error, Result};

/// One adder-tree output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowResult {
    pub row: usize,
    pub col: usize,
    pub value: f32,
    /// The local slab is complete for this element.
    pub last: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystolicState {
    rows: usize,
    cols: usize,
    reg_b: Vec<f32>,
    occupied: (usize, usize),
    /// Per PE row: the A row it holds and that row's operands.
    reg_a: Vec<Option<(usize, Vec<f32>)>>,
    pub wave: u64,
}

impl SystolicState {
    pub fn new(rows: usize, cols: usize) -> Self {
        SystolicState {
            rows,
            cols,
            reg_b: vec![0.0; rows * cols],
            occupied: (0, 0),
            reg_a: vec![None; rows],
            wave: 0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Occupied (PE rows, PE columns) of Register B.
    pub fn occupied(&self) -> (usize, usize) {
        self.occupied
    }

    /// No A operands are in flight.
    pub fn is_idle(&self) -> bool {
        self.reg_a.iter().all(Option::is_none)
    }

    pub fn reg_b(&self, row: usize, col: usize) -> f32 {
        self.reg_b[row * self.cols + col]
    }

    /// Load Register B; `tile[r][c]` goes to PE `(r, c)`. Returns the cycles
    /// spent, one per occupied row.
    pub fn preload(&mut self, tile: &[Vec<f32>]) -> Result<u64> {
        let width = tile.first().map_or(0, Vec::len);
        if tile.len() > self.rows || width > self.cols || tile.iter().any(|r| r.len() != width) {
            return Err(Error::Sequencer(format!(
                "preload of {}x{width} does not fit a {}x{} array",
                tile.len(),
                self.rows,
                self.cols
            )));
        }
        if !self.is_idle() {
            return Err(Error::Sequencer("preload while operands are in flight".into()));
        }
        self.reg_b.iter_mut().for_each(|v| *v = 0.0);
        for (r, row) in tile.iter().enumerate() {
            self.reg_b[r * self.cols..r * self.cols + width].copy_from_slice(row);
        }
        self.occupied = if width == 0 { (0, 0) } else { (tile.len(), width) };
        Ok(self.occupied.0 as u64)
    }

    /// One wave: shift Register A down, feed `incoming` into PE row 0, and
    /// reduce every occupied row holding an operand. Results carry the A
    /// row index and the PE row (plus `col_offset`) as the output index.
    pub fn stream_wave(&mut self, incoming: Option<(usize, Vec<f32>)>, col_offset: usize) -> Result<Vec<RowResult>> {
        if let Some((_, values)) = &incoming {
            if values.len() != self.occupied.1 {
                return Err(Error::Sequencer(format!(
                    "wave fired with {} operands for {} occupied columns",
                    values.len(),
                    self.occupied.1
                )));
            }
        }
        let occ = self.occupied.0;
        if occ == 0 {
            return Ok(Vec::new());
        }
        self.reg_a[..occ].rotate_right(1);
        self.reg_a[0] = incoming;
        self.wave += 1;
        let mut out = Vec::new();
        for r in 0..occ {
            if let Some((row, a)) = &self.reg_a[r] {
                let b = &self.reg_b[r * self.cols..r * self.cols + a.len()];
                let value = a.iter().zip(b).map(|(x, y)| x * y).sum();
                out.push(RowResult {
                    row: *row,
                    col: col_offset + r,
                    value,
                    last: false,
                });
            }
        }
        // The bottom row's operand leaves the array after this wave.
        if occ > 0 {
            self.reg_a[occ - 1] = None;
        }
        Ok(out)
    }

    /// Waves needed to push `m` A rows through the occupied rows.
    pub fn waves_for(&self, m: usize) -> usize {
        if m == 0 || self.occupied.0 == 0 {
            0
        } else {
            m + self.occupied.0 - 1
        }
    }

    /// Stream all of `a` (rows of length = occupied columns), last row
    /// first, so that each wave's results lie on a diagonal of C. Returns
    /// the results grouped by wave.
    pub fn run(&mut self, a: &[Vec<f32>], col_offset: usize) -> Result<Vec<Vec<RowResult>>> {
        let m = a.len();
        let waves = self.waves_for(m);
        let mut out = Vec::with_capacity(waves);
        for w in 0..waves {
            let incoming = (w < m).then(|| (m - 1 - w, a[m - 1 - w].clone()));
            out.push(self.stream_wave(incoming, col_offset)?);
        }
        Ok(out)
    }
}
