//! Hardware and experiment parameters.
//!
//! The on-disk format is TOML. A file may name a memory preset
//! (`memory = "hbm"`) and override any of its fields; loading always yields a
//! fully expanded, validated [`SystemConfig`], and [`SystemConfig::to_toml`]
//! writes every field back out explicitly so a reload is an identity.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::icn::IcnConfig;
use crate::workloads::WorkloadSpec;

/// DRAM technology backing a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    Hmc1,
    Hmc2,
    Hbm,
    Custom,
}

impl MemoryKind {
    pub fn name(self) -> &'static str {
        match self {
            MemoryKind::Hmc1 => "hmc1",
            MemoryKind::Hmc2 => "hmc2",
            MemoryKind::Hbm => "hbm",
            MemoryKind::Custom => "custom",
        }
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MemoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hmc1" => Ok(MemoryKind::Hmc1),
            "hmc2" | "hmc" => Ok(MemoryKind::Hmc2),
            "hbm" => Ok(MemoryKind::Hbm),
            "custom" => Ok(MemoryKind::Custom),
            other => Err(Error::InvalidConfig(format!("unknown memory preset `{other}`"))),
        }
    }
}

/// Per-slice memory technology parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryTech {
    pub kind: MemoryKind,
    /// GB/s per slice.
    pub per_slice_bandwidth: f64,
    /// pJ/bit.
    pub access_energy: f64,
}

pub const HBM_ENERGY_PJ_PER_BIT: f64 = 6.0;
pub const HMC_ENERGY_PJ_PER_BIT: f64 = 3.7;

impl MemoryTech {
    pub fn preset(kind: MemoryKind) -> Option<MemoryTech> {
        let (bw, energy) = match kind {
            MemoryKind::Hmc1 => (10.0, HMC_ENERGY_PJ_PER_BIT),
            MemoryKind::Hmc2 => (20.0, HMC_ENERGY_PJ_PER_BIT),
            MemoryKind::Hbm => (16.0, HBM_ENERGY_PJ_PER_BIT),
            MemoryKind::Custom => return None,
        };
        Some(MemoryTech {
            kind,
            per_slice_bandwidth: bw,
            access_energy: energy,
        })
    }
}

/// Hardware parameters of one memory slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceConfig {
    pub array_rows: usize,
    pub array_cols: usize,
    pub mult_latency: u64,
    pub adder_tree_latency: u64,
    /// GHz.
    pub clock: f64,
    /// Bits per matrix element.
    pub element_width: u32,
    pub memory: MemoryKind,
    /// GB/s per slice.
    pub mem_bandwidth: f64,
    /// pJ/bit.
    pub mem_energy: f64,
    /// pJ/FLOP.
    pub flop_energy: f64,
    /// Multiplier on compute units per slice; 1.0 is the baseline slice.
    pub compute_scale: f64,
    /// Cycles to fill all of Register B.
    pub preload_cycles: u64,
    /// Bytes of slice memory available to the PMI allocator; `None` is unlimited.
    pub capacity_bytes: Option<u64>,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig::with_memory(MemoryKind::Hmc2)
    }
}

impl SliceConfig {
    pub fn with_memory(kind: MemoryKind) -> Self {
        let tech = MemoryTech::preset(kind).unwrap_or(MemoryTech {
            kind,
            per_slice_bandwidth: 20.0,
            access_energy: HMC_ENERGY_PJ_PER_BIT,
        });
        SliceConfig {
            array_rows: 256,
            array_cols: 8,
            mult_latency: 3,
            adder_tree_latency: 3,
            clock: 2.0,
            element_width: 16,
            memory: kind,
            mem_bandwidth: tech.per_slice_bandwidth,
            mem_energy: tech.access_energy,
            flop_energy: 2.0,
            compute_scale: 1.0,
            preload_cycles: 256,
            capacity_bytes: None,
        }
    }

    /// Switch to a memory preset, replacing bandwidth and energy.
    pub fn apply_memory_preset(&mut self, kind: MemoryKind) {
        if let Some(tech) = MemoryTech::preset(kind) {
            self.mem_bandwidth = tech.per_slice_bandwidth;
            self.mem_energy = tech.access_energy;
        }
        self.memory = kind;
    }

    pub fn memory_tech(&self) -> MemoryTech {
        MemoryTech {
            kind: self.memory,
            per_slice_bandwidth: self.mem_bandwidth,
            access_energy: self.mem_energy,
        }
    }

    pub fn element_bytes(&self) -> f64 {
        self.element_width as f64 / 8.0
    }

    /// Memory bytes deliverable per clock cycle.
    pub fn bytes_per_cycle(&self) -> f64 {
        self.mem_bandwidth / self.clock
    }

    /// Bytes per second.
    pub fn bandwidth_bytes(&self) -> f64 {
        self.mem_bandwidth * 1e9
    }

    /// Rows of processing elements once `compute_scale` is applied.
    ///
    /// Extra compute units are added as parallel banks of up to
    /// `array_rows` rows that share the streamed Register A operand. Each
    /// bank keeps its own shift chain, so the pipeline skew stays that of
    /// one bank.
    pub fn effective_rows(&self) -> usize {
        ((self.array_rows as f64 * self.compute_scale).floor() as usize).max(1)
    }

    /// Preload cost for a Register B partition with `rows` occupied rows.
    /// Banks load in parallel.
    pub fn preload_cost(&self, rows: usize) -> u64 {
        let rows = rows.min(self.array_rows);
        (self.preload_cycles as f64 * rows as f64 / self.array_rows as f64).ceil() as u64
    }

    /// Peak FLOPs per clock cycle of one slice.
    pub fn peak_flops_per_cycle(&self) -> f64 {
        2.0 * self.array_rows as f64 * self.array_cols as f64 * self.compute_scale / self.mult_latency as f64
    }

    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("array_rows", self.array_rows as u64),
            ("array_cols", self.array_cols as u64),
            ("mult_latency", self.mult_latency),
            ("adder_tree_latency", self.adder_tree_latency),
            ("element_width", self.element_width as u64),
            ("preload_cycles", self.preload_cycles),
        ];
        for (name, v) in positive_counts {
            if v < 1 {
                return Err(Error::InvalidConfig(format!("slice.{name} must be >= 1")));
            }
        }
        let positive_reals = [
            ("clock", self.clock),
            ("mem_bandwidth", self.mem_bandwidth),
            ("mem_energy", self.mem_energy),
            ("flop_energy", self.flop_energy),
        ];
        for (name, v) in positive_reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("slice.{name} must be > 0, got {v}")));
            }
        }
        if !(self.compute_scale.is_finite() && self.compute_scale >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "slice.compute_scale must be >= 1, got {}",
                self.compute_scale
            )));
        }
        Ok(())
    }
}

/// Peak throughput of one slice in FLOPs/s.
///
/// One multiply and one add per processing element per initiation interval,
/// where the interval equals the multiplier latency. The 256x8 array at
/// 2 GHz with 3-cycle multipliers gives ~2.731 TFLOPs/s under this
/// convention (the often quoted 1.28 TFLOPs/s figure does not follow from
/// any simple counting rule).
pub fn peak_flops(cfg: &SliceConfig) -> f64 {
    cfg.peak_flops_per_cycle() * cfg.clock * 1e9
}

/// Attainable FLOPs/s of one slice at operational intensity `intensity`
/// (FLOPs per byte).
pub fn roofline_attainable(cfg: &SliceConfig, intensity: f64) -> f64 {
    let intensity = intensity.max(0.0);
    peak_flops(cfg).min(intensity * cfg.bandwidth_bytes())
}

/// Intensity where the compute and bandwidth roofs meet.
pub fn knee_intensity(cfg: &SliceConfig) -> f64 {
    peak_flops(cfg) / cfg.bandwidth_bytes()
}

/// One point on (or under) the roofline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RooflinePoint {
    pub intensity: f64,
    pub attainable: f64,
    pub achieved: Option<f64>,
}

impl RooflinePoint {
    pub fn new(cfg: &SliceConfig, slices: usize, intensity: f64, achieved: Option<f64>) -> Self {
        RooflinePoint {
            intensity,
            attainable: roofline_attainable(cfg, intensity) * slices as f64,
            achieved,
        }
    }

    pub fn within_bound(&self) -> bool {
        self.achieved.is_none_or(|a| a <= self.attainable * 1.001)
    }
}

/// Near-square mesh dimensions for `n` nodes, wider than tall.
pub fn mesh_for(n: usize) -> (usize, usize) {
    let n = n.max(1);
    let x = (n as f64).sqrt().ceil() as usize;
    (x, n.div_ceil(x))
}

/// Whole-system parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub slice: SliceConfig,
    pub num_slices: usize,
    pub icn: IcnConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            slice: SliceConfig::default(),
            num_slices: 16,
            icn: IcnConfig {
                mesh_x: 4,
                mesh_y: 4,
                ..IcnConfig::default()
            },
            batch_size: 4,
            seed: 1,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.slice.validate()?;
        self.icn.validate()?;
        if self.num_slices < 1 {
            return Err(Error::InvalidConfig("num_slices must be >= 1".into()));
        }
        if self.num_slices > self.icn.nodes() {
            return Err(Error::InvalidConfig(format!(
                "num_slices {} exceeds the {}x{} mesh",
                self.num_slices, self.icn.mesh_x, self.icn.mesh_y
            )));
        }
        if self.icn.flit_width < self.slice.element_width {
            return Err(Error::InvalidConfig(format!(
                "icn.flit_width {} is narrower than element_width {}",
                self.icn.flit_width, self.slice.element_width
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// System peak FLOPs/s.
    pub fn peak_flops(&self) -> f64 {
        peak_flops(&self.slice) * self.num_slices as f64
    }

    /// Set the slice count and resize the mesh to the smallest
    /// near-square grid holding it.
    pub fn set_slices(&mut self, n: usize) {
        self.num_slices = n;
        let (x, y) = mesh_for(n);
        self.icn.mesh_x = x;
        self.icn.mesh_y = y;
    }

    pub fn from_toml_str(text: &str) -> Result<SystemConfig> {
        Ok(ExperimentConfig::from_toml_str(text)?.system)
    }

    pub fn to_toml(&self) -> String {
        let file = ConfigFile::from_system(self, None);
        toml::to_string(&file).expect("config serializes")
    }

    /// Stable 64-bit fingerprint of the serialized config, as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A config file: system parameters plus an optional workload block.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub workload: Option<WorkloadSpec>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::ConfigParse {
                line,
                message: e.message().to_string(),
            }
        })?;
        let workload = file.workload.clone();
        let system = file.into_system()?;
        system.validate()?;
        if let Some(w) = &workload {
            w.validate()?;
        }
        Ok(ExperimentConfig { system, workload })
    }

    pub fn to_toml(&self) -> String {
        let file = ConfigFile::from_system(&self.system, self.workload.clone());
        toml::to_string(&file).expect("config serializes")
    }
}

/// Load and validate a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<SystemConfig> {
    Ok(load_experiment(path)?.system)
}

pub fn load_experiment(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_slices: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[serde(default)]
    slice: SliceSection,
    #[serde(default)]
    icn: IcnSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    workload: Option<WorkloadSpec>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SliceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    array_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    array_cols: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mult_latency: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    adder_tree_latency: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clock_ghz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    element_width: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    memory: Option<MemoryKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mem_bandwidth_gbps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mem_energy_pj_per_bit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flop_energy_pj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    compute_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    preload_cycles: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    capacity_bytes: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IcnSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    mesh_x: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mesh_y: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flit_width: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    router_latency: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    link_latency: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_payload: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    buffer_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    net_energy_pj_per_bit: Option<f64>,
}

impl ConfigFile {
    fn into_system(self) -> Result<SystemConfig> {
        let d = SystemConfig::default();
        let s = self.slice;
        let memory = match (s.memory, s.mem_bandwidth_gbps, s.mem_energy_pj_per_bit) {
            (Some(kind), _, _) => kind,
            (None, None, None) => d.slice.memory,
            (None, _, _) => MemoryKind::Custom,
        };
        let mut slice = SliceConfig::with_memory(memory);
        if memory == MemoryKind::Custom && (s.mem_bandwidth_gbps.is_none() || s.mem_energy_pj_per_bit.is_none()) {
            return Err(Error::InvalidConfig(
                "custom memory needs both slice.mem_bandwidth_gbps and slice.mem_energy_pj_per_bit".into(),
            ));
        }
        let rows = s.array_rows.unwrap_or(slice.array_rows);
        slice.array_rows = rows;
        slice.array_cols = s.array_cols.unwrap_or(slice.array_cols);
        slice.mult_latency = s.mult_latency.unwrap_or(slice.mult_latency);
        slice.adder_tree_latency = s.adder_tree_latency.unwrap_or(slice.adder_tree_latency);
        slice.clock = s.clock_ghz.unwrap_or(slice.clock);
        slice.element_width = s.element_width.unwrap_or(slice.element_width);
        slice.mem_bandwidth = s.mem_bandwidth_gbps.unwrap_or(slice.mem_bandwidth);
        slice.mem_energy = s.mem_energy_pj_per_bit.unwrap_or(slice.mem_energy);
        slice.flop_energy = s.flop_energy_pj.unwrap_or(slice.flop_energy);
        slice.compute_scale = s.compute_scale.unwrap_or(slice.compute_scale);
        slice.preload_cycles = s.preload_cycles.unwrap_or(rows as u64);
        slice.capacity_bytes = s.capacity_bytes;

        let i = self.icn;
        let di = IcnConfig::default();
        let icn = IcnConfig {
            mesh_x: i.mesh_x.unwrap_or(di.mesh_x),
            mesh_y: i.mesh_y.unwrap_or(di.mesh_y),
            flit_width: i.flit_width.unwrap_or(di.flit_width),
            router_latency: i.router_latency.unwrap_or(di.router_latency),
            link_latency: i.link_latency.unwrap_or(di.link_latency),
            max_payload: i.max_payload.unwrap_or(di.max_payload),
            buffer_depth: i.buffer_depth.unwrap_or(di.buffer_depth),
            net_energy_pj_per_bit: i.net_energy_pj_per_bit.unwrap_or(di.net_energy_pj_per_bit),
        };
        Ok(SystemConfig {
            slice,
            num_slices: self.num_slices.unwrap_or(d.num_slices),
            icn,
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed: self.seed.unwrap_or(d.seed),
        })
    }

    fn from_system(sys: &SystemConfig, workload: Option<WorkloadSpec>) -> ConfigFile {
        let s = &sys.slice;
        let i = &sys.icn;
        ConfigFile {
            seed: Some(sys.seed),
            num_slices: Some(sys.num_slices),
            batch_size: Some(sys.batch_size),
            slice: SliceSection {
                array_rows: Some(s.array_rows),
                array_cols: Some(s.array_cols),
                mult_latency: Some(s.mult_latency),
                adder_tree_latency: Some(s.adder_tree_latency),
                clock_ghz: Some(s.clock),
                element_width: Some(s.element_width),
                memory: Some(s.memory),
                mem_bandwidth_gbps: Some(s.mem_bandwidth),
                mem_energy_pj_per_bit: Some(s.mem_energy),
                flop_energy_pj: Some(s.flop_energy),
                compute_scale: Some(s.compute_scale),
                preload_cycles: Some(s.preload_cycles),
                capacity_bytes: s.capacity_bytes,
            },
            icn: IcnSection {
                mesh_x: Some(i.mesh_x),
                mesh_y: Some(i.mesh_y),
                flit_width: Some(i.flit_width),
                router_latency: Some(i.router_latency),
                link_latency: Some(i.link_latency),
                max_payload: Some(i.max_payload),
                buffer_depth: Some(i.buffer_depth),
                net_energy_pj_per_bit: Some(i.net_energy_pj_per_bit),
            },
            workload,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_slice() -> SliceConfig {
        SliceConfig {
            array_rows: 1,
            array_cols: 1,
            mult_latency: 1,
            clock: 1.0,
            ..SliceConfig::default()
        }
    }

    #[test]
    fn peak_of_default_array() {
        let cfg = SliceConfig::default();
        let expected = 2.0 * 2048.0 * 2e9 / 3.0;
        assert!((peak_flops(&cfg) - expected).abs() < 1.0);
        assert!((peak_flops(&cfg) - 2.731e12).abs() / 2.731e12 < 1e-3);
    }

    #[test]
    fn peak_of_unit_array() {
        assert_eq!(peak_flops(&unit_slice()), 2e9);
    }

    #[test]
    fn peak_is_linear_in_compute_scale() {
        let cfg = SliceConfig {
            compute_scale: 2.0,
            ..SliceConfig::default()
        };
        assert!((peak_flops(&cfg) - 5.461e12).abs() / 5.461e12 < 1e-3);
    }

    #[test]
    fn roofline_regimes() {
        let cfg = SliceConfig {
            mem_bandwidth: 10.0,
            ..SliceConfig::default()
        };
        assert_eq!(roofline_attainable(&cfg, 0.0), 0.0);
        assert_eq!(roofline_attainable(&cfg, 1000.0), peak_flops(&cfg));
        let knee = knee_intensity(&cfg);
        assert!((knee - 273.07).abs() < 0.05, "knee {knee}");
        assert!((roofline_attainable(&cfg, knee) - peak_flops(&cfg)).abs() < 1.0);
        assert!(roofline_attainable(&cfg, knee * 0.5) < peak_flops(&cfg));
    }

    #[test]
    fn hbm_preset_energy() {
        let cfg = SystemConfig::from_toml_str("[slice]\nmemory = \"hbm\"\n").unwrap();
        assert_eq!(cfg.slice.mem_energy, 6.0);
        let cfg = SystemConfig::from_toml_str("[slice]\nmemory = \"hmc1\"\n").unwrap();
        assert_eq!(cfg.slice.mem_energy, 3.7);
        assert_eq!(cfg.slice.mem_bandwidth, 10.0);
    }

    #[test]
    fn negative_bandwidth_rejected() {
        let err = SystemConfig::from_toml_str("[slice]\nmem_bandwidth_gbps = -1.0\nmem_energy_pj_per_bit = 1.0\n")
            .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(m) if m.contains("mem_bandwidth")));
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(SystemConfig::from_toml_str("").unwrap(), SystemConfig::default());
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = SystemConfig::from_toml_str("seed = 3\n\n[slice]\nbogus = 1\n").unwrap_err();
        match err {
            Error::ConfigParse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn slices_must_fit_mesh() {
        let err = SystemConfig::from_toml_str("num_slices = 10\n[icn]\nmesh_x = 3\nmesh_y = 3\n").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = SystemConfig::default();
        cfg.slice.apply_memory_preset(MemoryKind::Hbm);
        cfg.slice.compute_scale = 2.5;
        cfg.set_slices(300);
        let again = SystemConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.fingerprint(), again.fingerprint());
    }

    #[test]
    fn preload_cost_matches_rows() {
        let cfg = SliceConfig::default();
        assert_eq!(cfg.preload_cost(256), 256);
        assert_eq!(cfg.preload_cost(10), 10);
        assert_eq!(cfg.preload_cost(0), 0);
    }
}
