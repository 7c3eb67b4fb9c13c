//! Run statistics, the energy account and the CSV results format.

use std::fmt::Write as _;

use crate::config::{roofline_attainable, SystemConfig};

/// Raw activity counters gathered during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Activity {
    pub flops: u64,
    pub mem_read_bits: u64,
    pub mem_write_bits: u64,
    pub net_flits: u64,
}

/// Energy in joules per component.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Energy {
    pub memory: f64,
    pub compute: f64,
    pub network: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.memory + self.compute + self.network
    }
}

/// Energy of a run from its activity counters.
pub fn energy_account(activity: &Activity, system: &SystemConfig) -> Energy {
    const PJ: f64 = 1e-12;
    let s = &system.slice;
    let bits = (activity.mem_read_bits + activity.mem_write_bits) as f64;
    Energy {
        memory: bits * s.mem_energy * PJ,
        compute: activity.flops as f64 * s.flop_energy * PJ,
        network: activity.net_flits as f64 * system.icn.flit_width as f64 * system.icn.net_energy_pj_per_bit * PJ,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub workload: String,
    pub config_hash: String,
    pub slices: usize,
    pub compute_scale: f64,
    pub memory: String,
    pub total_cycles: u64,
    pub activity: Activity,
    /// Bits written by input lowering (duplicated activations).
    pub lowering_bits: u64,
    pub packets: u64,
    pub partial_packets: u64,
    pub operand_packets: u64,
    pub mean_packet_latency: f64,
    pub max_packet_latency: u64,
    /// Cross-slice partial packets whose rebuilt indices were compared.
    pub index_checks: u64,
    pub index_mismatches: u64,
    pub energy: Energy,
    /// Register B loads actually performed, per slice.
    pub slice_load_iterations: Vec<u64>,
    /// Compute busy cycles per slice.
    pub slice_busy: Vec<u64>,
    pub programming_cycles: u64,
    pub config_packets: u64,
    pub clock_ghz: f64,
    pub peak_flops: f64,
    /// Per-slice roof at the measured intensity, times the slice count.
    pub attainable_flops: f64,
}

impl SimStats {
    pub fn seconds(&self) -> f64 {
        self.total_cycles as f64 / (self.clock_ghz * 1e9)
    }

    pub fn flops_per_second(&self) -> f64 {
        if self.total_cycles == 0 {
            return 0.0;
        }
        self.activity.flops as f64 / self.seconds()
    }

    pub fn flops_per_joule(&self) -> f64 {
        let e = self.energy.total();
        if e <= 0.0 {
            0.0
        } else {
            self.activity.flops as f64 / e
        }
    }

    pub fn mem_bytes(&self) -> f64 {
        (self.activity.mem_read_bits + self.activity.mem_write_bits) as f64 / 8.0
    }

    /// FLOPs per byte moved through slice memory.
    pub fn intensity(&self) -> f64 {
        let b = self.mem_bytes();
        if b <= 0.0 {
            0.0
        } else {
            self.activity.flops as f64 / b
        }
    }

    pub fn load_iterations(&self) -> u64 {
        self.slice_load_iterations.iter().sum()
    }

    pub fn max_load_iterations(&self) -> u64 {
        self.slice_load_iterations.iter().copied().max().unwrap_or(0)
    }

    /// Mean compute utilization over slices.
    pub fn utilization(&self) -> f64 {
        if self.total_cycles == 0 || self.slice_busy.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .slice_busy
            .iter()
            .map(|&b| (b as f64 / self.total_cycles as f64).min(1.0))
            .sum();
        sum / self.slice_busy.len() as f64
    }

    pub fn csv_row(&self) -> String {
        let e = &self.energy;
        let fields: Vec<String> = vec![
            self.workload.clone(),
            self.config_hash.clone(),
            self.slices.to_string(),
            self.compute_scale.to_string(),
            self.memory.clone(),
            self.total_cycles.to_string(),
            self.activity.flops.to_string(),
            (self.activity.mem_read_bits as f64 / 8.0).to_string(),
            (self.activity.mem_write_bits as f64 / 8.0).to_string(),
            self.packets.to_string(),
            self.activity.net_flits.to_string(),
            format!("{:.3}", self.mean_packet_latency),
            self.max_packet_latency.to_string(),
            format!("{:.6e}", e.memory),
            format!("{:.6e}", e.compute),
            format!("{:.6e}", e.network),
            format!("{:.6e}", e.total()),
            format!("{:.6e}", self.flops_per_second()),
            format!("{:.6e}", self.flops_per_joule()),
            format!("{:.4}", self.intensity()),
            format!("{:.6e}", self.attainable_flops),
            self.load_iterations().to_string(),
            self.max_load_iterations().to_string(),
            format!("{:.4}", self.utilization()),
            self.programming_cycles.to_string(),
            self.config_packets.to_string(),
        ];
        fields.join(",")
    }
}

/// Column order of the results CSV.
pub const CSV_HEADER: &str = "workload,config_hash,slices,compute_scale,memory,total_cycles,flops,\
mem_read_bytes,mem_write_bytes,packets,flits,mean_packet_latency,max_packet_latency,\
energy_memory_j,energy_compute_j,energy_network_j,energy_total_j,flops_per_s,flops_per_j,\
intensity,attainable_flops_per_s,load_iterations,max_slice_load_iterations,utilization,\
programming_cycles,config_packets";

pub fn write_csv(rows: &[SimStats]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{CSV_HEADER}");
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// System-wide roof at `intensity`.
pub fn system_attainable(system: &SystemConfig, intensity: f64) -> f64 {
    roofline_attainable(&system.slice, intensity) * system.num_slices as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_components_add() {
        let sys = SystemConfig::default();
        let a = Activity {
            flops: 1000,
            mem_read_bits: 800,
            mem_write_bits: 200,
            net_flits: 10,
        };
        let e = energy_account(&a, &sys);
        assert!((e.compute - 1000.0 * sys.slice.flop_energy * 1e-12).abs() < 1e-20);
        assert!((e.memory - 1000.0 * sys.slice.mem_energy * 1e-12).abs() < 1e-20);
        assert!((e.network - 10.0 * 128.0 * 1e-12).abs() < 1e-20);
        assert_eq!(e.total(), e.memory + e.compute + e.network);
        assert_eq!(energy_account(&Activity::default(), &sys).total(), 0.0);
    }

    #[test]
    fn header_matches_row_width() {
        let cols = CSV_HEADER.split(',').count();
        let s = SimStats {
            workload: "w".into(),
            config_hash: "0".into(),
            slices: 1,
            compute_scale: 1.0,
            memory: "hmc2".into(),
            total_cycles: 10,
            activity: Activity::default(),
            lowering_bits: 0,
            packets: 0,
            partial_packets: 0,
            operand_packets: 0,
            mean_packet_latency: 0.0,
            max_packet_latency: 0,
            index_checks: 0,
            index_mismatches: 0,
            energy: Energy::default(),
            slice_load_iterations: vec![0],
            slice_busy: vec![5],
            programming_cycles: 0,
            config_packets: 0,
            clock_ghz: 2.0,
            peak_flops: 1.0,
            attainable_flops: 1.0,
        };
        assert_eq!(s.csv_row().split(',').count(), cols);
        assert_eq!(s.utilization(), 0.5);
        assert!(write_csv(&[s]).starts_with("workload,config_hash,"));
    }
}
