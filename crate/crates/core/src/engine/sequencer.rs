//! Per-slice sequencing of a product slab: tile order, Register B residency
//! and local accumulation across common-dimension chunks.

use std::ops::Range;

use super::systolic::{RowResult, SystolicState};
use crate::config::SliceConfig;
use crate::error::Result;

/// One Register B load: rows `k` of B times output columns `n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tile {
    pub k: Range<usize>,
    pub n: Range<usize>,
}

/// Identity of the data held in Register B.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TileKey {
    pub operand: Vec<(u32, usize, usize)>,
    pub transpose: bool,
    pub tile: Tile,
}

/// Tiles of a `k` slab times `n` output columns: output blocks outermost,
/// common-dimension chunks innermost.
pub fn slab_tiles(k: Range<usize>, n: usize, cfg: &SliceConfig) -> Vec<Tile> {
    let rows = cfg.effective_rows();
    let mut tiles = Vec::new();
    for n0 in (0..n).step_by(rows) {
        let n1 = (n0 + rows).min(n);
        for k0 in k.clone().step_by(cfg.array_cols) {
            tiles.push(Tile {
                k: k0..(k0 + cfg.array_cols).min(k.end),
                n: n0..n1,
            });
        }
    }
    tiles
}

/// Start with the resident tile when it is at either end of the order:
/// walking the list backwards after a forward pass saves one preload.
pub fn order_tiles(mut tiles: Vec<Tile>, resident: Option<&Tile>) -> (Vec<Tile>, bool) {
    let Some(r) = resident else {
        return (tiles, false);
    };
    if tiles.first() == Some(r) {
        (tiles, true)
    } else if tiles.last() == Some(r) {
        tiles.reverse();
        (tiles, true)
    } else {
        (tiles, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileRecord {
    pub tile: Tile,
    /// Register B was loaded (false when the tile was already resident).
    pub preloaded: bool,
    pub waves: usize,
    /// First tile processed for its output block.
    pub first_of_block: bool,
    /// Last tile processed for its output block: its waves emit partials.
    pub last_of_block: bool,
    /// Per wave, the slab-complete results; empty unless `last_of_block`.
    pub emits: Vec<Vec<RowResult>>,
}

/// Slice-local state that persists across products.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequencer {
    pub array: SystolicState,
    pub resident: Option<TileKey>,
    pub preloads: u64,
    /// Compute values; when false only the tile schedule and result
    /// indices are produced, with zero values.
    pub functional: bool,
}

impl Sequencer {
    pub fn new(cfg: &SliceConfig) -> Self {
        Sequencer {
            array: SystolicState::new(cfg.effective_rows(), cfg.array_cols),
            resident: None,
            preloads: 0,
            functional: true,
        }
    }

    /// Run one slab of `C = A B`: `a(i, kk)` and `b(kk, j)` read operand
    /// values with absolute indices. Results carry absolute output indices.
    #[allow(clippy::too_many_arguments)]
    pub fn run_slab(
        &mut self,
        cfg: &SliceConfig,
        operand: (Vec<(u32, usize, usize)>, bool),
        m: usize,
        k: Range<usize>,
        n: usize,
        a: &dyn Fn(usize, usize) -> f32,
        b: &dyn Fn(usize, usize) -> f32,
    ) -> Result<Vec<TileRecord>> {
        let tiles = slab_tiles(k, n, cfg);
        let resident = self
            .resident
            .as_ref()
            .filter(|r| (&r.operand, r.transpose) == (&operand.0, operand.1))
            .map(|r| &r.tile);
        let (tiles, hit) = order_tiles(tiles, resident);
        let mut records = Vec::with_capacity(tiles.len());
        let mut acc: Vec<f32> = Vec::new();
        for (idx, tile) in tiles.iter().enumerate() {
            let first = idx == 0 || tiles[idx - 1].n != tile.n;
            let last = idx + 1 == tiles.len() || tiles[idx + 1].n != tile.n;
            let preloaded = !(idx == 0 && hit);
            if !self.functional {
                if preloaded {
                    self.preloads += 1;
                }
                let waves = if m == 0 || tile.n.is_empty() {
                    0
                } else {
                    m + tile.n.len() - 1
                };
                let emits = if last {
                    vec![(0..m)
                        .flat_map(|row| {
                            tile.n.clone().map(move |col| RowResult {
                                row,
                                col,
                                value: 0.0,
                                last: true,
                            })
                        })
                        .collect()]
                } else {
                    Vec::new()
                };
                records.push(TileRecord {
                    tile: tile.clone(),
                    preloaded,
                    waves,
                    first_of_block: first,
                    last_of_block: last,
                    emits,
                });
                continue;
            }
            if preloaded {
                let reg: Vec<Vec<f32>> = tile
                    .n
                    .clone()
                    .map(|j| tile.k.clone().map(|kk| b(kk, j)).collect())
                    .collect();
                self.array.preload(&reg)?;
                self.preloads += 1;
            }
            let rows: Vec<Vec<f32>> = (0..m).map(|i| tile.k.clone().map(|kk| a(i, kk)).collect()).collect();
            let waves = self.array.run(&rows, tile.n.start)?;
            let width = tile.n.len();
            if first {
                acc = vec![0.0; m * width];
            }
            let mut emits = Vec::new();
            for wave in waves.iter() {
                let mut out = Vec::new();
                for r in wave {
                    let slot = &mut acc[r.row * width + (r.col - tile.n.start)];
                    *slot += r.value;
                    if last {
                        out.push(RowResult {
                            value: *slot,
                            last: true,
                            ..*r
                        });
                    }
                }
                if last {
                    emits.push(out);
                }
            }
            records.push(TileRecord {
                tile: tile.clone(),
                preloaded,
                waves: waves.len(),
                first_of_block: first,
                last_of_block: last,
                emits,
            });
        }
        if let Some(t) = tiles.last() {
            self.resident = Some(TileKey {
                operand: operand.0,
                transpose: operand.1,
                tile: t.clone(),
            });
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rows: usize, cols: usize) -> SliceConfig {
        SliceConfig {
            array_rows: rows,
            array_cols: cols,
            ..SliceConfig::default()
        }
    }

    #[test]
    fn tiles_cover_slab() {
        let t = slab_tiles(3..12, 5, &cfg(4, 4));
        assert_eq!(t.len(), 3 * 2);
        assert_eq!(t[0], Tile { k: 3..7, n: 0..4 });
        assert_eq!(t[2], Tile { k: 11..12, n: 0..4 });
        assert_eq!(t[3].n, 4..5);
    }

    #[test]
    fn resident_tile_reverses_order() {
        let t = slab_tiles(0..8, 8, &cfg(4, 4));
        let last = t.last().cloned();
        let (o, hit) = order_tiles(t.clone(), last.as_ref());
        assert!(hit);
        assert_eq!(o.first(), last.as_ref());
        let (o, hit) = order_tiles(t.clone(), None);
        assert!(!hit);
        assert_eq!(o, t);
    }

    #[test]
    fn slab_result_and_reuse() {
        let c = cfg(2, 2);
        let (m, k, n) = (3, 5, 3);
        let a = |i: usize, kk: usize| (i * k + kk) as f32 * 0.5;
        let b = |kk: usize, j: usize| (kk as f32) - (j as f32);
        let mut s = Sequencer::new(&c);
        let key = (vec![(1, 0, n)], false);
        let rec = s.run_slab(&c, key.clone(), m, 0..k, n, &a, &b).unwrap();
        assert_eq!(s.preloads, 3 * 2);
        let mut got = vec![vec![f32::NAN; n]; m];
        for r in rec.iter().flat_map(|r| r.emits.iter().flatten()) {
            got[r.row][r.col] = r.value;
        }
        for (i, row) in got.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let want: f32 = (0..k).map(|kk| a(i, kk) * b(kk, j)).sum();
                assert!((v - want).abs() < 1e-4);
            }
        }
        // Same operand again: the last tile is still resident.
        let rec2 = s.run_slab(&c, key, m, 0..k, n, &a, &b).unwrap();
        assert!(!rec2[0].preloaded);
        assert_eq!(s.preloads, 2 * 6 - 1);
        assert_eq!(rec2.iter().filter(|r| r.last_of_block).count(), 2);
    }
}
