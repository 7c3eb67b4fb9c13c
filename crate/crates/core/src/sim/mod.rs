//! Discrete-event simulation of a planned workload: functional values,
//! per-slice timing, the mesh, and the statistics of a run.

mod pointwise;
mod run;
mod stats;
mod store;
mod sweep;
mod trace;

pub use pointwise::{execute, footprint, Footprint, PointWork};
pub use stats::{energy_account, system_attainable, write_csv, Activity, Energy, SimStats, CSV_HEADER};
pub use store::Store;
pub use sweep::{run_workload, sweep, SweepAxis};
pub use trace::{EventTrace, Step, TraceRecord};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::icn::{IndexPattern, Network, Packet, PacketClass};
use crate::oracle::Matrix;
use crate::partitioner::GraphPlan;
use crate::types::NodeId;
use crate::workloads::Workload;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub trace: bool,
    /// Compute matmul values. Timing-only runs leave products zero but
    /// keep every schedule, packet and statistic.
    pub functional: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            trace: false,
            functional: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub stats: SimStats,
    pub trace: Option<EventTrace>,
    pub store: Store,
}

impl SimOutput {
    /// Simulated value of a named workload output.
    pub fn output(&self, workload: &Workload, name: &str) -> Option<Matrix> {
        workload.outputs.get(name).map(|id| self.store.matrix(*id))
    }
}

/// PMI programming: one config packet per table entry from the host at
/// slice 0. Returns (cycles, packets).
pub fn program(plan: &GraphPlan, system: &SystemConfig) -> Result<(u64, u64)> {
    let mut net = Network::new(&system.icn);
    let mut id = 0;
    for slice in 0..plan.pmi.slices() {
        for e in plan.pmi.entries(slice) {
            net.inject(Packet {
                src: 0,
                dst: slice,
                matrix: e.matrix,
                task: NodeId(0),
                class: PacketClass::Config,
                first_index: (0, 0),
                count: 4,
                pattern: IndexPattern::Row,
                payload: vec![0.0; 4],
                element_width: 32,
                id,
            })?;
            id += 1;
        }
    }
    let last = net.drain()?.iter().map(|d| d.deliver_time).max().unwrap_or(0);
    Ok((last, id))
}

/// Run `workload` under `plan` on `system`.
pub fn simulate(workload: &Workload, plan: &GraphPlan, system: &SystemConfig, opts: &SimOptions) -> Result<SimOutput> {
    system.validate()?;
    if plan.slices != system.num_slices {
        return Err(Error::InvalidConfig(format!(
            "plan uses {} slices, system has {}",
            plan.slices, system.num_slices
        )));
    }
    let (programming_cycles, config_packets) = program(plan, system)?;
    let mut sim = run::Sim::new(workload, plan, system, opts)?;
    sim.run()?;
    let mut out = sim.finish(workload)?;
    out.stats.programming_cycles = programming_cycles;
    out.stats.config_packets = config_packets;
    Ok(out)
}
