//! Per-slice resource timelines.

use std::collections::BTreeMap;

use crate::config::SliceConfig;

/// A resource that serves one request at a time. Requests may be booked
/// out of time order; each takes the earliest idle gap at or after `now`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Channel {
    /// Disjoint, non-adjacent busy intervals `start -> end`.
    busy_at: BTreeMap<u64, u64>,
    free: u64,
    busy: u64,
}

impl Channel {
    /// Occupy the channel for `cycles` starting no earlier than `now`.
    pub fn reserve(&mut self, now: u64, cycles: u64) -> (u64, u64) {
        if cycles == 0 {
            return (now, now);
        }
        let mut start = now;
        if let Some((_, &e)) = self.busy_at.range(..=start).next_back() {
            start = start.max(e);
        }
        while let Some((_, &e)) = self.busy_at.range(start..start + cycles).next() {
            start = e;
        }
        let end = start + cycles;
        self.occupy(start, end);
        self.busy += cycles;
        (start, end)
    }

    /// Mark `from..to` busy without counting it as work.
    pub fn block(&mut self, from: u64, to: u64) {
        if from < to {
            self.occupy(from, to);
        }
    }

    fn occupy(&mut self, mut start: u64, mut end: u64) {
        if let Some((&s, &e)) = self.busy_at.range(..=start).next_back() {
            if e >= start {
                start = s;
                end = end.max(e);
            }
        }
        let merged: Vec<(u64, u64)> = self.busy_at.range(start..=end).map(|(&s, &e)| (s, e)).collect();
        for (s, e) in merged {
            self.busy_at.remove(&s);
            end = end.max(e);
        }
        self.busy_at.insert(start, end);
        self.free = self.free.max(end);
    }

    /// Forget intervals that end by `t`; no later request may start before it.
    pub fn retire(&mut self, t: u64) {
        while let Some((_, &e)) = self.busy_at.first_key_value() {
            if e > t {
                break;
            }
            self.busy_at.pop_first();
        }
    }

    /// End of the last booked interval.
    pub fn free_at(&self) -> u64 {
        self.free
    }

    pub fn busy(&self) -> u64 {
        self.busy
    }
}

/// Memory port of a slice. Every byte moved through the slice's DRAM is
/// charged here, so its busy time bounds throughput by bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryChannel {
    channel: Channel,
    bits_per_cycle: f64,
    pub read_bits: u64,
    pub write_bits: u64,
}

impl MemoryChannel {
    pub fn new(cfg: &SliceConfig) -> Self {
        MemoryChannel {
            channel: Channel::default(),
            bits_per_cycle: cfg.bytes_per_cycle() * 8.0,
            read_bits: 0,
            write_bits: 0,
        }
    }

    pub fn cycles(&self, bits: u64) -> u64 {
        (bits as f64 / self.bits_per_cycle).ceil() as u64
    }

    /// Move `read` and `write` bits; returns when the transfer completes.
    pub fn access(&mut self, now: u64, read: u64, write: u64) -> u64 {
        self.read_bits += read;
        self.write_bits += write;
        let cycles = self.cycles(read + write);
        if cycles == 0 {
            return now;
        }
        self.channel.reserve(now, cycles).1
    }

    pub fn free_at(&self) -> u64 {
        self.channel.free_at()
    }

    pub fn retire(&mut self, t: u64) {
        self.channel.retire(t);
    }

    pub fn busy(&self) -> u64 {
        self.channel.busy()
    }
}

/// Cycles between wave issues: the multiplier latency, or longer when the
/// memory cannot stream a row of `array_cols` operands that fast.
pub fn wave_interval(cfg: &SliceConfig) -> u64 {
    let bits = (cfg.array_cols as u64 * cfg.element_width as u64) as f64;
    let stream = (bits / (cfg.bytes_per_cycle() * 8.0)).ceil() as u64;
    cfg.mult_latency.max(stream)
}

/// Cycles to issue `waves` waves, the first one paying the pipeline fill.
pub fn stream_cycles(cfg: &SliceConfig, waves: usize) -> u64 {
    if waves == 0 {
        return 0;
    }
    cfg.mult_latency + cfg.adder_tree_latency + (waves as u64 - 1) * wave_interval(cfg)
}

/// Waves to stream `m` A rows through `rows` occupied rows split into
/// banks of `array_rows`: the skew is that of the tallest bank.
pub fn bank_waves(cfg: &SliceConfig, m: usize, rows: usize) -> usize {
    if m == 0 || rows == 0 {
        0
    } else {
        m + rows.min(cfg.array_rows) - 1
    }
}

/// Wave (0-based) whose adder trees produce output `(row, col)` of a tile
/// with `m` A rows, `col` counted from the tile's first column.
pub fn result_wave(cfg: &SliceConfig, m: usize, row: usize, col: usize) -> usize {
    col % cfg.array_rows + m - 1 - row
}

/// Completion cycle of wave `w` (0-based) relative to the first issue.
pub fn wave_done(cfg: &SliceConfig, w: usize) -> u64 {
    cfg.mult_latency + cfg.adder_tree_latency + w as u64 * wave_interval(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compute_bound_interval() {
        let cfg = SliceConfig::default();
        // 8 x 16 bits at 10 bytes/cycle is 2 cycles, under the 3-cycle multiplier.
        assert_eq!(wave_interval(&cfg), 3);
    }

    #[test]
    fn memory_bound_interval() {
        let mut cfg = SliceConfig::default();
        // 16 bytes per wave at 16/6 bytes per cycle.
        cfg.mem_bandwidth = cfg.clock * 16.0 / 6.0;
        assert_eq!(wave_interval(&cfg), 6);
    }

    #[test]
    fn stream_cost() {
        let cfg = SliceConfig::default();
        assert_eq!(stream_cycles(&cfg, 0), 0);
        assert_eq!(stream_cycles(&cfg, 1), 6);
        assert_eq!(stream_cycles(&cfg, 4), 6 + 9);
        assert_eq!(wave_done(&cfg, 3), 15);
        assert_eq!(bank_waves(&cfg, 4, 300), 4 + 255);
        assert_eq!(bank_waves(&cfg, 4, 10), 13);
        assert_eq!(result_wave(&cfg, 4, 3, 256), 0);
        assert_eq!(result_wave(&cfg, 4, 0, 2), 5);
    }

    #[test]
    fn channels_serialize() {
        let mut c = Channel::default();
        assert_eq!(c.reserve(5, 10), (5, 15));
        assert_eq!(c.reserve(7, 2), (15, 17));
        assert_eq!(c.busy(), 12);
        // A later request at an earlier time fills the gap before 5.
        assert_eq!(c.reserve(0, 5), (0, 5));
        assert_eq!(c.reserve(0, 1), (17, 18));
        c.block(20, 30);
        assert_eq!(c.reserve(18, 3), (30, 33));
        assert_eq!(c.reserve(18, 2), (18, 20));
        c.retire(25);
        assert_eq!(c.free_at(), 33);
        let mut m = MemoryChannel::new(&SliceConfig::default());
        assert_eq!(m.access(0, 80, 80), 2);
        assert_eq!(m.access(0, 0, 0), 0);
        assert_eq!(m.read_bits, 80);
    }
}
