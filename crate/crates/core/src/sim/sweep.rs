//! Build, plan and simulate in one call, and parameter sweeps on top.

use std::str::FromStr;

use super::{simulate, SimOptions, SimOutput, SimStats};
use crate::config::{MemoryKind, SystemConfig};
use crate::error::{Error, Result};
use crate::partitioner::{plan_graph, GraphPlan};
use crate::workloads::{Workload, WorkloadSpec};

/// Build `spec`, plan it with dual weight mapping and simulate it.
pub fn run_workload(
    spec: &WorkloadSpec,
    system: &SystemConfig,
    opts: &SimOptions,
) -> Result<(Workload, GraphPlan, SimOutput)> {
    spec.validate()?;
    system.validate()?;
    let workload = spec.build(system.seed)?;
    let plan = plan_graph(&workload.graph, system.num_slices, &system.slice, true)?;
    let out = simulate(&workload, &plan, system, opts)?;
    Ok((workload, plan, out))
}

/// System parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Slices,
    ComputeScale,
    Memory,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slices" => Ok(SweepAxis::Slices),
            "compute-scale" | "compute_scale" => Ok(SweepAxis::ComputeScale),
            "memory" => Ok(SweepAxis::Memory),
            _ => Err(Error::InvalidConfig(format!(
                "unknown sweep axis '{s}' (expected slices, compute-scale or memory)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Slices => "slices",
            SweepAxis::ComputeScale => "compute-scale",
            SweepAxis::Memory => "memory",
        }
    }

    /// `base` with the axis set to `value`.
    pub fn apply(self, base: &SystemConfig, value: &str) -> Result<SystemConfig> {
        let mut sys = base.clone();
        let bad = || Error::InvalidConfig(format!("bad value '{value}' for {self:?}"));
        match self {
            SweepAxis::Slices => sys.set_slices(value.parse().map_err(|_| bad())?),
            SweepAxis::ComputeScale => sys.slice.compute_scale = value.parse().map_err(|_| bad())?,
            SweepAxis::Memory => {
                let kind: MemoryKind = value.parse().map_err(|_| bad())?;
                sys.slice.apply_memory_preset(kind);
            }
        }
        sys.validate()?;
        Ok(sys)
    }
}

/// One run per value, in order.
pub fn sweep(spec: &WorkloadSpec, base: &SystemConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SimStats>> {
    values
        .iter()
        .map(|v| {
            let sys = axis.apply(base, v)?;
            Ok(run_workload(spec, &sys, &SimOptions::default())?.2.stats)
        })
        .collect()
}
