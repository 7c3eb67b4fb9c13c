//! Command-line experiment runner: `plan`, `run`, `sweep` and `roofline`.
//!
//! Exit codes: 0 success, 1 simulation failure, 2 usage or config error.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{knee_intensity, load_experiment, roofline_attainable, MemoryKind, SystemConfig};
use crate::error::{Error, Result};
use crate::partitioner::{dump_plan, plan_graph};
use crate::sim::{run_workload, write_csv, SimOptions, SimStats, SweepAxis, CSV_HEADER};
use crate::workloads::{preset, ConvSpec, MatmulSpec, TranslatorSpec, WorkloadSpec, PRESETS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SIM: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "memslice", version, about = "Memory-slice system simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the partition plan of every product.
    Plan(Common),
    /// Simulate one workload and write one CSV row.
    Run(Common),
    /// Simulate once per value of one system parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// slices, compute-scale or memory
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. 2,4,8
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Attainable-throughput curve, plus the working point of a run when a
    /// workload is given.
    Roofline {
        #[command(flatten)]
        common: Common,
        /// Curve samples per decade of intensity.
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Memory technology preset: hmc1, hmc2 or hbm.
    #[arg(long)]
    pub preset: Option<MemoryKind>,
    #[arg(long)]
    pub slices: Option<usize>,
    #[arg(long)]
    pub compute_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// translator, matmul, conv or a named preset
    #[arg(long)]
    pub workload: Option<String>,
    /// LSTM hidden size.
    #[arg(long = "H")]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Source and destination lengths, e.g. 4,4
    #[arg(long, value_delimiter = ',', num_args = 1..=2)]
    pub bucket: Option<Vec<usize>>,
    #[arg(long)]
    pub time_steps: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Include the backward pass and weight update.
    #[arg(long)]
    pub training: bool,
    /// Matmul dimensions.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Write the event trace (default file trace.txt).
    #[arg(long, num_args = 0..=1, default_missing_value = "trace.txt")]
    pub trace: Option<PathBuf>,
    /// Skip matmul values; timing and statistics are unchanged.
    #[arg(long)]
    pub timing_only: bool,
    /// Output file; relative paths resolve against MEMSLICE_OUT_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    /// Config file (if any) with the flag overrides applied.
    pub fn system(&self) -> Result<(SystemConfig, Option<WorkloadSpec>)> {
        let (mut sys, workload) = match &self.config {
            Some(path) => {
                let exp = load_experiment(path).map_err(|e| match e {
                    Error::Io(io) => Error::InvalidConfig(format!("cannot read {}: {io}", path.display())),
                    e => e,
                })?;
                (exp.system, exp.workload)
            }
            None => (SystemConfig::default(), None),
        };
        if let Some(kind) = self.preset {
            sys.slice.apply_memory_preset(kind);
        }
        if let Some(n) = self.slices {
            sys.set_slices(n);
        }
        if let Some(s) = self.compute_scale {
            sys.slice.compute_scale = s;
        }
        if let Some(seed) = self.seed {
            sys.seed = seed;
        }
        sys.validate()?;
        Ok((sys, workload))
    }

    /// The selected workload with its size flags applied.
    pub fn workload(&self, from_file: Option<WorkloadSpec>) -> Result<WorkloadSpec> {
        let mut spec = match self.workload.as_deref() {
            Some("translator") => WorkloadSpec::Translator(TranslatorSpec {
                hidden: 4,
                layers: 1,
                batch: 4,
                bucket: (2, 2),
                time_steps: 1,
                eta: 0.01,
                training: false,
            }),
            Some("matmul") => WorkloadSpec::Matmul(MatmulSpec { m: 64, k: 64, n: 64 }),
            Some("conv") => WorkloadSpec::Conv(ConvSpec {
                batch: 1,
                channels: 3,
                height: 8,
                width: 8,
                kernels: 4,
                kh: 3,
                kw: 3,
                stride: 1,
                padding: 1,
            }),
            Some(name) => preset(name).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown workload '{name}' (expected translator, matmul, conv, {})",
                    PRESETS.join(", ")
                ))
            })?,
            None => from_file.ok_or_else(|| {
                Error::InvalidConfig("no workload: pass --workload or add a [workload] block to the config".into())
            })?,
        };
        let lstm_flags = self.hidden.is_some()
            || self.batch.is_some()
            || self.bucket.is_some()
            || self.time_steps.is_some()
            || self.layers.is_some()
            || self.training;
        let mm_flags = self.m.is_some() || self.k.is_some() || self.n.is_some();
        match &mut spec {
            WorkloadSpec::Translator(t) => {
                if mm_flags {
                    return Err(Error::InvalidConfig(
                        "--m/--k/--n apply to the matmul workload only".into(),
                    ));
                }
                t.hidden = self.hidden.unwrap_or(t.hidden);
                t.batch = self.batch.unwrap_or(t.batch);
                t.layers = self.layers.unwrap_or(t.layers);
                t.time_steps = self.time_steps.unwrap_or(t.time_steps);
                if let Some(b) = &self.bucket {
                    t.bucket = (b[0], *b.get(1).unwrap_or(&b[0]));
                }
                t.training |= self.training;
            }
            WorkloadSpec::Matmul(mm) => {
                if lstm_flags {
                    return Err(Error::InvalidConfig("LSTM size flags do not apply to matmul".into()));
                }
                mm.m = self.m.unwrap_or(mm.m);
                mm.k = self.k.unwrap_or(mm.k);
                mm.n = self.n.unwrap_or(mm.n);
            }
            WorkloadSpec::Conv(c) => {
                if mm_flags || lstm_flags && self.batch.is_none() || self.hidden.is_some() || self.training {
                    return Err(Error::InvalidConfig("only --batch applies to conv".into()));
                }
                c.batch = self.batch.unwrap_or(c.batch);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    fn options(&self) -> SimOptions {
        SimOptions {
            trace: self.trace.is_some(),
            functional: !self.timing_only,
        }
    }
}

/// `path` under `MEMSLICE_OUT_DIR` when it is relative and the variable set.
pub fn out_path(path: &Path) -> PathBuf {
    match std::env::var_os("MEMSLICE_OUT_DIR") {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let path = out_path(path);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, text)?;
    Ok(())
}

/// Write to `--out` if given, stdout otherwise.
fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.out {
        Some(p) => write_file(p, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Exit code for an error: config and usage problems are 2, the rest 1.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigParse { .. } | Error::InvalidConfig(_) | Error::Workload(_) => EXIT_USAGE,
        _ => EXIT_SIM,
    }
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Plan(c) => cmd_plan(c),
        Command::Run(c) => cmd_run(c),
        Command::Sweep { common, axis, values } => cmd_sweep(common, axis, values),
        Command::Roofline { common, samples } => cmd_roofline(common, *samples),
    }
}

fn cmd_plan(c: &Common) -> Result<i32> {
    let (sys, file_workload) = c.system()?;
    let spec = c.workload(file_workload)?;
    let graph = spec.graph()?;
    let plan = plan_graph(&graph, sys.num_slices, &sys.slice, true)?;
    let mut s = String::new();
    let _ = writeln!(s, "# {} on {} slices", spec.name(), sys.num_slices);
    for (i, g) in plan.groups.iter().enumerate() {
        let _ = writeln!(s, "group {i} slices {g:?}");
    }
    for p in plan.plans.values() {
        s.push_str(&dump_plan(p));
    }
    for slice in 0..plan.pmi.slices() {
        let _ = writeln!(s, "pmi slice {slice} entries {}", plan.pmi.entries(slice).len());
    }
    emit(c, &s)?;
    Ok(EXIT_OK)
}

fn cmd_run(c: &Common) -> Result<i32> {
    let (sys, file_workload) = c.system()?;
    let spec = c.workload(file_workload)?;
    let (_, _, out) = run_workload(&spec, &sys, &c.options())?;
    if let (Some(path), Some(trace)) = (&c.trace, &out.trace) {
        write_file(path, &trace.to_text())?;
    }
    emit(c, &write_csv(std::slice::from_ref(&out.stats)))?;
    Ok(EXIT_OK)
}

/// Header of the sweep CSV: the swept value, the run columns, then the
/// speedup over the first value and any per-run error.
pub fn sweep_header() -> String {
    format!("value,{CSV_HEADER},speedup,error")
}

fn cmd_sweep(c: &Common, axis: &str, values: &[String]) -> Result<i32> {
    if c.trace.is_some() {
        return Err(Error::InvalidConfig("--trace applies to run only".into()));
    }
    let axis: SweepAxis = axis.parse()?;
    let (base, file_workload) = c.system()?;
    let spec = c.workload(file_workload)?;
    let systems = values
        .iter()
        .map(|v| axis.apply(&base, v))
        .collect::<Result<Vec<_>>>()?;
    let opts = c.options();
    // Runs are independent; results keep the order of `values`.
    let results: Vec<Result<SimStats>> = std::thread::scope(|scope| {
        let handles: Vec<_> = systems
            .iter()
            .map(|sys| scope.spawn(|| run_workload(&spec, sys, &opts).map(|r| r.2.stats)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Sequencer("sweep run panicked".into())))
            })
            .collect()
    });
    let first = results.first().and_then(|r| r.as_ref().ok()).map(|s| s.seconds());
    let blanks = ",".repeat(CSV_HEADER.matches(',').count());
    let mut s = sweep_header();
    s.push('\n');
    let mut failed = false;
    for (v, r) in values.iter().zip(&results) {
        match r {
            Ok(stats) => {
                let speedup = first.map(|f| format!("{:.4}", f / stats.seconds())).unwrap_or_default();
                let _ = writeln!(s, "{v},{},{speedup},", stats.csv_row());
            }
            Err(e) => {
                failed = true;
                eprintln!("error: {} = {v}: {e}", axis.name());
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(s, "{v},{blanks},,{msg}");
            }
        }
    }
    emit(c, &s)?;
    Ok(if failed { EXIT_SIM } else { EXIT_OK })
}

/// `samples` curve points per decade from 0.1 to 10^4 FLOPs/Byte, plus 0
/// and the knee, in increasing intensity.
pub fn roofline_curve(sys: &SystemConfig, samples: usize) -> Vec<(f64, f64)> {
    let samples = samples.max(1);
    let mut xs = vec![0.0, knee_intensity(&sys.slice)];
    for j in 0..=5 * samples {
        xs.push(10f64.powf(-1.0 + j as f64 / samples as f64));
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let n = sys.num_slices as f64;
    xs.into_iter()
        .map(|x| (x, roofline_attainable(&sys.slice, x) * n))
        .collect()
}

fn cmd_roofline(c: &Common, samples: usize) -> Result<i32> {
    if c.trace.is_some() {
        return Err(Error::InvalidConfig("--trace applies to run only".into()));
    }
    let (sys, file_workload) = c.system()?;
    let knee = knee_intensity(&sys.slice);
    let mut s = String::from("kind,intensity,attainable_flops_per_s,achieved_flops_per_s\n");
    for (x, y) in roofline_curve(&sys, samples) {
        let kind = if x == knee { "knee" } else { "curve" };
        let _ = writeln!(s, "{kind},{x:.4},{y:.6e},");
    }
    if c.workload.is_some() || file_workload.is_some() {
        let spec = c.workload(file_workload)?;
        let (_, _, out) = run_workload(&spec, &sys, &c.options())?;
        let st = &out.stats;
        let _ = writeln!(
            s,
            "run,{:.4},{:.6e},{:.6e}",
            st.intensity(),
            st.attainable_flops,
            st.flops_per_second()
        );
    }
    emit(c, &s)?;
    Ok(EXIT_OK)
}
