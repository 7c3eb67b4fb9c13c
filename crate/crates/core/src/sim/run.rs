//! The event loop.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::ops::Range;

use super::pointwise::{execute, footprint, Footprint};
use super::stats::{energy_account, system_attainable, Activity, SimStats};
use super::store::Store;
use super::trace::{EventTrace, Step};
use super::{SimOptions, SimOutput};
use crate::config::{peak_flops, SliceConfig, SystemConfig};
use crate::engine::{
    bank_waves, result_wave, stream_cycles, wave_done, AggregateOutcome, AggregationTable, Channel, MemoryChannel,
    Sequencer,
};
use crate::error::{Error, Result};
use crate::icn::{coalesce, Delivery, Message, Network, Packet, PacketClass, PacketHeader};
use crate::partitioner::{primary_output, GraphPlan};
use crate::types::{MatrixId, NodeId, Orientation, Region, SliceId};
use crate::workloads::{NodeOp, OpGraph, Operand, PostOp, Workload};

#[derive(Debug)]
enum Event {
    NodeReady(NodeId),
    Inject(Packet),
    JobStart(usize),
    JobDone(usize),
    NodeDone(NodeId),
}

struct Scheduled {
    time: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Min-heap on (time, seq).
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug, Clone)]
enum JobKind {
    Slab(Range<usize>),
    Point(Region),
}

#[derive(Debug, Clone)]
struct Job {
    node: NodeId,
    slice: SliceId,
    kind: JobKind,
    /// Operand packets still in flight.
    pending: usize,
    ready_at: u64,
}

struct SliceRt {
    seq: Sequencer,
    compute: Channel,
    agg: Channel,
    mem: MemoryChannel,
}

#[derive(Default)]
struct NodeRt {
    deps_left: usize,
    jobs_left: usize,
    finish: u64,
    done: bool,
    agg: Option<AggregationTable>,
}

/// A piece of operand data and the slice storing it.
struct Piece {
    src: SliceId,
    fp: Footprint,
    /// Coordinates are in the transposed copy.
    transposed: bool,
}

pub(super) struct Sim<'a> {
    g: &'a OpGraph,
    plan: &'a GraphPlan,
    sys: &'a SystemConfig,
    cfg: &'a SliceConfig,
    store: Store,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    now: u64,
    retired: u64,
    slices: Vec<SliceRt>,
    nodes: Vec<NodeRt>,
    succ: Vec<Vec<NodeId>>,
    jobs: Vec<Job>,
    packet_job: HashMap<u64, usize>,
    sent: HashMap<u64, Vec<(usize, usize)>>,
    next_packet: u64,
    net: Network,
    trace: Option<EventTrace>,
    width: u64,
    peak_per_cycle: f64,
    flops: u64,
    lowering_bits: u64,
    partial_packets: u64,
    operand_packets: u64,
    index_checks: u64,
    index_mismatches: u64,
    completed: usize,
    last_done: u64,
}

impl<'a> Sim<'a> {
    pub(super) fn new(
        workload: &'a Workload,
        plan: &'a GraphPlan,
        sys: &'a SystemConfig,
        opts: &SimOptions,
    ) -> Result<Self> {
        let trace = opts.trace;
        let g = &workload.graph;
        let cfg = &sys.slice;
        let mut store = Store::new(g);
        for (id, m) in &workload.data {
            store.load(*id, m)?;
        }
        let mut nodes: Vec<NodeRt> = g.nodes.iter().map(|_| NodeRt::default()).collect();
        let mut succ = vec![Vec::new(); g.nodes.len()];
        for n in &g.nodes {
            let mut deps = n.deps.clone();
            deps.sort();
            deps.dedup();
            nodes[n.id.0 as usize].deps_left = deps.len();
            for d in deps {
                succ[d.0 as usize].push(n.id);
            }
        }
        let slices = (0..plan.slices)
            .map(|_| SliceRt {
                seq: Sequencer {
                    functional: opts.functional,
                    ..Sequencer::new(cfg)
                },
                compute: Channel::default(),
                agg: Channel::default(),
                mem: MemoryChannel::new(cfg),
            })
            .collect();
        let mut sim = Sim {
            g,
            plan,
            sys,
            cfg,
            store,
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0,
            retired: 0,
            slices,
            nodes,
            succ,
            jobs: Vec::new(),
            packet_job: HashMap::new(),
            sent: HashMap::new(),
            next_packet: 0,
            net: Network::new(&sys.icn),
            trace: trace.then(EventTrace::default),
            width: cfg.element_width as u64,
            peak_per_cycle: cfg.peak_flops_per_cycle(),
            flops: 0,
            lowering_bits: 0,
            partial_packets: 0,
            operand_packets: 0,
            index_checks: 0,
            index_mismatches: 0,
            completed: 0,
            last_done: 0,
        };
        for n in &g.nodes {
            if sim.nodes[n.id.0 as usize].deps_left == 0 {
                sim.push(0, Event::NodeReady(n.id));
            }
        }
        Ok(sim)
    }

    fn push(&mut self, time: u64, event: Event) {
        self.seq += 1;
        self.heap.push(Scheduled {
            time,
            seq: self.seq,
            event,
        });
    }

    fn record(&mut self, cycle: u64, slice: SliceId, step: Step, task: NodeId) {
        if let Some(t) = &mut self.trace {
            t.record(cycle, slice, step, task);
        }
    }

    fn compute_cycles(&self, flops: u64) -> u64 {
        (flops as f64 / self.peak_per_cycle).ceil() as u64
    }

    fn packet_id(&mut self) -> u64 {
        self.next_packet += 1;
        self.next_packet
    }
}

impl Sim<'_> {
    pub(super) fn run(&mut self) -> Result<()> {
        loop {
            while self.heap.peek().is_some_and(|s| s.time <= self.now) {
                let s = self.heap.pop().expect("peeked");
                self.handle(s.event)?;
            }
            if !self.net.is_idle() {
                let delivered = self.net.step()?;
                self.now = self.net.time();
                for d in delivered {
                    self.deliver(d)?;
                }
            } else if let Some(next) = self.heap.peek() {
                self.now = next.time;
                self.net.advance_to(self.now);
            } else {
                break;
            }
            if self.now >= self.retired + 1024 {
                self.retired = self.now;
                for s in &mut self.slices {
                    s.compute.retire(self.now);
                    s.agg.retire(self.now);
                    s.mem.retire(self.now);
                }
            }
        }
        if self.completed < self.g.nodes.len() {
            return Err(Error::Deadlock(self.pending_report()));
        }
        Ok(())
    }

    fn pending_report(&self) -> String {
        let mut parts = Vec::new();
        for n in self
            .g
            .nodes
            .iter()
            .filter(|n| !self.nodes[n.id.0 as usize].done)
            .take(8)
        {
            let waiting: Vec<String> = n
                .deps
                .iter()
                .filter(|d| !self.nodes[d.0 as usize].done)
                .map(|d| d.to_string())
                .collect();
            parts.push(format!("{} waits on [{}]", n.id, waiting.join(" ")));
        }
        let left = self.g.nodes.len() - self.completed;
        format!("{left} tasks never completed: {}", parts.join("; "))
    }

    fn handle(&mut self, event: Event) -> Result<()> {
        let t = self.now;
        match event {
            Event::NodeReady(n) => self.node_ready(n, t),
            Event::Inject(p) => {
                if p.class == PacketClass::Partial {
                    self.record(t, p.src, Step::Route, p.task);
                }
                self.net.inject(p)
            }
            Event::JobStart(j) => self.job_start(j, t),
            Event::JobDone(j) => {
                let n = self.jobs[j].node;
                let rt = &mut self.nodes[n.0 as usize];
                rt.jobs_left -= 1;
                rt.finish = rt.finish.max(t);
                if rt.jobs_left == 0 {
                    let f = rt.finish;
                    self.push(f, Event::NodeDone(n));
                }
                Ok(())
            }
            Event::NodeDone(n) => {
                let rt = &mut self.nodes[n.0 as usize];
                if rt.done {
                    return Err(Error::Sequencer(format!("{n} completed twice")));
                }
                rt.done = true;
                self.completed += 1;
                self.last_done = self.last_done.max(t);
                for s in self.succ[n.0 as usize].clone() {
                    let rt = &mut self.nodes[s.0 as usize];
                    rt.deps_left -= 1;
                    if rt.deps_left == 0 {
                        self.push(t, Event::NodeReady(s));
                    }
                }
                Ok(())
            }
        }
    }

    fn node_ready(&mut self, n: NodeId, t: u64) -> Result<()> {
        let node = self.g.node(n);
        let mut jobs: Vec<(Job, Vec<Piece>)> = Vec::new();
        match &node.op {
            NodeOp::Matmul { a, b, post, .. } => {
                let plan = self
                    .plan
                    .plans
                    .get(&n)
                    .ok_or_else(|| Error::Plan(format!("{n} has no plan")))?;
                self.nodes[n.0 as usize].agg = Some(AggregationTable::new(plan.m, plan.n, plan.fan_in(), *post));
                for part in &plan.b {
                    let k = part.rows.clone();
                    let mut pieces = self.operand_pieces(a, Region::new(0..plan.m, k.clone()))?;
                    pieces.extend(self.operand_pieces(b, Region::new(k.clone(), 0..plan.n))?);
                    jobs.push((self.job(n, part.slice, JobKind::Slab(k)), pieces));
                }
            }
            op => {
                let out = primary_output(node).expect("pointwise op has an output");
                for (s, r) in self.plan.regions(out, Orientation::Forward).to_vec() {
                    let mut pieces = Vec::new();
                    for fp in footprint(op, r) {
                        pieces.extend(self.locate(fp)?);
                    }
                    jobs.push((self.job(n, s, JobKind::Point(r)), pieces));
                }
            }
        }
        if jobs.is_empty() {
            self.push(t, Event::NodeDone(n));
            return Ok(());
        }
        self.nodes[n.0 as usize].jobs_left = jobs.len();
        for (job, pieces) in jobs {
            let j = self.jobs.len();
            self.jobs.push(job);
            self.request(j, pieces, t)?;
        }
        Ok(())
    }

    fn job(&self, node: NodeId, slice: SliceId, kind: JobKind) -> Job {
        Job {
            node,
            slice,
            kind,
            pending: 0,
            ready_at: 0,
        }
    }

    /// Stored pieces of a region of a matmul operand.
    fn operand_pieces(&self, op: &Operand, region: Region) -> Result<Vec<Piece>> {
        for (id, r) in op.source_regions(region) {
            self.store.check_ready(id, r)?;
        }
        let id = op.parts[0].id;
        let dual = op.parts.len() == 1
            && op.transpose
            && op.parts[0].cols.start == 0
            && op.parts[0].cols.end == self.g.matrix(id).cols
            && !self.plan.regions(id, Orientation::Transposed).is_empty();
        if dual {
            return Ok(self
                .plan
                .locate(id, Orientation::Transposed, region)
                .into_iter()
                .map(|(src, r)| Piece {
                    src,
                    fp: Footprint::Region(id, r),
                    transposed: true,
                })
                .collect());
        }
        let mut out = Vec::new();
        for (id, r) in op.source_regions(region) {
            out.extend(self.locate(Footprint::Region(id, r))?);
        }
        Ok(out)
    }

    /// Split a forward-orientation footprint by the slices storing it.
    fn locate(&self, fp: Footprint) -> Result<Vec<Piece>> {
        let piece = |src, fp| Piece {
            src,
            fp,
            transposed: false,
        };
        match fp {
            Footprint::Region(id, r) => {
                self.store.check_ready(id, r)?;
                let found = self.plan.locate(id, Orientation::Forward, r);
                let covered: usize = found.iter().map(|(_, x)| x.len()).sum();
                if covered != r.len() {
                    let (row, col) = first_uncovered(r, &found);
                    return Err(self.unmapped(id, row, col));
                }
                Ok(found
                    .into_iter()
                    .map(|(s, x)| piece(s, Footprint::Region(id, x)))
                    .collect())
            }
            Footprint::Elements(id, elems) => {
                let regions = self.plan.regions(id, Orientation::Forward);
                let mut by_slice: BTreeMap<SliceId, Vec<(usize, usize)>> = BTreeMap::new();
                for (r, c) in elems {
                    self.store.check_ready(id, Region::new(r..r + 1, c..c + 1))?;
                    let (s, _) = regions
                        .iter()
                        .find(|(_, x)| x.contains(r, c))
                        .ok_or_else(|| self.unmapped(id, r, c))?;
                    by_slice.entry(*s).or_default().push((r, c));
                }
                Ok(by_slice
                    .into_iter()
                    .map(|(s, e)| piece(s, Footprint::Elements(id, e)))
                    .collect())
            }
        }
    }

    fn unmapped(&self, id: MatrixId, row: usize, col: usize) -> Error {
        Error::Unmapped {
            matrix: self.store.name(id).to_string(),
            row,
            col,
        }
    }

    /// Move the remote pieces of job `j` to its slice; start it once all
    /// have arrived.
    fn request(&mut self, j: usize, pieces: Vec<Piece>, t: u64) -> Result<()> {
        let dst = self.jobs[j].slice;
        let task = self.jobs[j].node;
        let mut by_src: BTreeMap<SliceId, Vec<Piece>> = BTreeMap::new();
        for p in pieces.into_iter().filter(|p| p.src != dst) {
            by_src.entry(p.src).or_default().push(p);
        }
        for (src, ps) in by_src {
            let mut messages = Vec::new();
            for p in &ps {
                let id = p.fp.matrix();
                let value = |r: usize, c: usize| {
                    if p.transposed {
                        self.store.get(id, c, r)
                    } else {
                        self.store.get(id, r, c)
                    }
                };
                let mut push = |r, c| {
                    messages.push(Message {
                        dst,
                        matrix: id,
                        index: (r, c),
                        value: value(r, c),
                    })
                };
                match &p.fp {
                    Footprint::Region(_, x) => {
                        for r in x.row0..x.row1 {
                            for c in x.col0..x.col1 {
                                push(r, c);
                            }
                        }
                    }
                    Footprint::Elements(_, e) => e.iter().for_each(|&(r, c)| push(r, c)),
                }
            }
            let bits = messages.len() as u64 * self.width;
            let ready = self.slices[src].mem.access(t, bits, 0);
            let header = PacketHeader {
                src,
                task,
                class: PacketClass::Operand,
                element_width: self.cfg.element_width,
            };
            for mut p in coalesce(header, &messages, self.sys.icn.max_payload) {
                p.id = self.packet_id();
                self.packet_job.insert(p.id, j);
                self.operand_packets += 1;
                self.jobs[j].pending += 1;
                self.push(ready, Event::Inject(p));
            }
        }
        if self.jobs[j].pending == 0 {
            self.push(t, Event::JobStart(j));
        }
        Ok(())
    }
}

fn first_uncovered(r: Region, found: &[(SliceId, Region)]) -> (usize, usize) {
    for row in r.row0..r.row1 {
        for col in r.col0..r.col1 {
            if !found.iter().any(|(_, x)| x.contains(row, col)) {
                return (row, col);
            }
        }
    }
    (r.row0, r.col0)
}

impl Sim<'_> {
    fn job_start(&mut self, j: usize, t: u64) -> Result<()> {
        match self.jobs[j].kind.clone() {
            JobKind::Slab(k) => self.run_slab(j, k, t),
            JobKind::Point(r) => self.run_point(j, r, t),
        }
    }

    fn run_slab(&mut self, j: usize, k: Range<usize>, t: u64) -> Result<()> {
        let (g, cfg) = (self.g, self.cfg);
        let (n, s) = (self.jobs[j].node, self.jobs[j].slice);
        let NodeOp::Matmul { a, b, out, .. } = &g.node(n).op else {
            return Err(Error::Sequencer(format!("{n}: slab job on a pointwise task")));
        };
        let plan = &self.plan.plans[&n];
        let (m, width) = (plan.m, self.width);
        let key = (
            b.parts.iter().map(|p| (p.id.0, p.cols.start, p.cols.end)).collect(),
            b.transpose,
        );
        let store = &self.store;
        let fa = |i: usize, kk: usize| {
            let (id, r, c) = a.locate(i, kk);
            store.get(id, r, c)
        };
        let fb = |kk: usize, jj: usize| {
            let (id, r, c) = b.locate(kk, jj);
            store.get(id, r, c)
        };
        let records = self.slices[s].seq.run_slab(cfg, key, m, k, plan.n, &fa, &fb)?;

        let mut cursor = t;
        for rec in records {
            let (ks, ns) = (rec.tile.k.len() as u64, rec.tile.n.len() as u64);
            let sl = &mut self.slices[s];
            // Register B fills no faster than memory delivers the tile.
            let pre = if rec.preloaded {
                cfg.preload_cost(rec.tile.n.len()).max(sl.mem.cycles(ks * ns * width))
            } else {
                0
            };
            let (start, compute_end) = sl
                .compute
                .reserve(cursor, pre + stream_cycles(cfg, bank_waves(cfg, m, rec.tile.n.len())));
            // k-chunk sums stay in the slice-local accumulator; only the
            // streamed A rows and a freshly loaded Register B touch memory.
            let mut read = m as u64 * ks * width;
            if rec.preloaded {
                read += ks * ns * width;
            }
            let mem_end = sl.mem.access(start, read, 0);
            let end = compute_end.max(mem_end);
            sl.compute.block(compute_end, end);
            self.flops += 2 * m as u64 * ks * ns;

            let issue = start + pre;
            self.record(start, s, Step::Preload, n);
            self.record(issue, s, Step::Shift, n);
            self.record(issue, s, Step::Multiply, n);
            self.record(issue + cfg.mult_latency, s, Step::AdderTree, n);
            if rec.last_of_block {
                // The network interface collects each output row's results
                // across waves; a packet leaves once its last element is out.
                let n0 = rec.tile.n.start;
                let mut messages: Vec<Message> = rec
                    .emits
                    .iter()
                    .flatten()
                    .map(|r| Message {
                        dst: plan.owner(r.col),
                        matrix: *out,
                        index: (r.row, r.col),
                        value: r.value,
                    })
                    .collect();
                messages.sort_by_key(|m| m.index);
                let header = PacketHeader {
                    src: s,
                    task: n,
                    class: PacketClass::Partial,
                    element_width: cfg.element_width,
                };
                let packets = coalesce(header, &messages, self.sys.icn.max_payload);
                let sent = sender_indices(&messages, &packets);
                for (mut p, sent) in packets.into_iter().zip(sent) {
                    let ready = p
                        .indices()
                        .iter()
                        .map(|&(row, col)| issue + wave_done(cfg, result_wave(cfg, m, row, col - n0)))
                        .max()
                        .unwrap_or(issue);
                    p.id = self.packet_id();
                    self.sent.insert(p.id, sent);
                    self.partial_packets += 1;
                    self.record(ready, s, Step::Packetize, n);
                    self.push(ready, Event::Inject(p));
                }
            }
            cursor = end;
        }
        Ok(())
    }

    fn run_point(&mut self, j: usize, r: Region, t: u64) -> Result<()> {
        let (n, s) = (self.jobs[j].node, self.jobs[j].slice);
        let op = &self.g.node(n).op;
        let inputs: u64 = footprint(op, r).iter().map(|f| f.len() as u64).sum();
        let work = execute(op, r, &mut self.store);
        let cycles = (r.len() as u64)
            .div_ceil(self.cfg.array_cols as u64)
            .max(self.compute_cycles(work.flops))
            .max(1);
        let sl = &mut self.slices[s];
        let (_, compute_end) = sl.compute.reserve(t, cycles);
        let mem_end = sl.mem.access(t, inputs * self.width, work.writes * self.width);
        let end = compute_end.max(mem_end);
        sl.compute.block(compute_end, end);
        self.flops += work.flops;
        self.lowering_bits += work.lowered * self.width;
        self.record(end, s, Step::Finalize, n);
        self.record(end, s, Step::WriteBack, n);
        self.push(end, Event::JobDone(j));
        Ok(())
    }

    fn deliver(&mut self, d: Delivery) -> Result<()> {
        let now = self.now;
        let p = d.packet;
        let bits = p.count as u64 * self.width;
        match p.class {
            PacketClass::Operand => {
                let j = self
                    .packet_job
                    .remove(&p.id)
                    .ok_or_else(|| Error::Network(format!("operand packet {} has no job", p.id)))?;
                let end = self.slices[p.dst].mem.access(now, 0, bits);
                let job = &mut self.jobs[j];
                job.pending -= 1;
                job.ready_at = job.ready_at.max(end);
                if job.pending == 0 {
                    let at = job.ready_at;
                    self.push(at, Event::JobStart(j));
                }
                Ok(())
            }
            PacketClass::Partial => self.aggregate(p, now, bits),
            PacketClass::Config => Err(Error::Network("config packet in the compute network".into())),
        }
    }

    fn aggregate(&mut self, p: Packet, now: u64, bits: u64) -> Result<()> {
        let n = p.task;
        let indices = p.indices();
        let sent = self
            .sent
            .remove(&p.id)
            .ok_or_else(|| Error::Network(format!("partial packet {} was never sent", p.id)))?;
        if p.src != p.dst {
            self.index_checks += 1;
            if sent != indices {
                self.index_mismatches += 1;
            }
        }
        self.record(now, p.dst, Step::Aggregate, n);
        let NodeOp::Matmul { out, post, .. } = &self.g.node(n).op else {
            return Err(Error::Network(format!("partials for pointwise task {n}")));
        };
        let (out, post) = (*out, *post);
        let table = self.nodes[n.0 as usize]
            .agg
            .as_mut()
            .ok_or_else(|| Error::Sequencer(format!("{n}: partials before the task started")))?;
        let mut finalized = 0u64;
        let mut done = Vec::new();
        for (idx, v) in indices.iter().zip(&p.payload) {
            if let AggregateOutcome::Finalized(x) = table.aggregate(*idx, *v)? {
                done.push((*idx, x));
                finalized += 1;
            }
        }
        let pending = table.pending();
        for ((r, c), x) in done {
            self.store.set(out, r, c, x);
        }
        let cols = self.cfg.array_cols as u64;
        let post_flops = post.flops() * finalized;
        let peak = self.peak_per_cycle;
        let sl = &mut self.slices[p.dst];
        let (_, agg_end) = sl.agg.reserve(now, (p.count as u64).div_ceil(cols));
        // Read-modify-write of the running sum for every partial.
        let mut end = agg_end.max(sl.mem.access(now, bits, bits));
        if post != PostOp::None && finalized > 0 {
            let (_, e) = sl.compute.reserve(now, (post_flops as f64 / peak).ceil() as u64);
            end = end.max(e);
            self.flops += post_flops;
        }
        if finalized > 0 {
            self.record(end, p.dst, Step::Finalize, n);
            self.record(end, p.dst, Step::WriteBack, n);
        }
        let rt = &mut self.nodes[n.0 as usize];
        rt.finish = rt.finish.max(end);
        if pending == 0 {
            rt.agg = None;
            let f = rt.finish;
            self.push(f, Event::NodeDone(n));
        }
        Ok(())
    }

    pub(super) fn finish(self, workload: &Workload) -> Result<SimOutput> {
        let expected = self.g.flops();
        if self.flops != expected {
            return Err(Error::Sequencer(format!(
                "performed {} FLOPs, graph has {expected}",
                self.flops
            )));
        }
        let total_cycles = self.slices.iter().fold(self.last_done, |acc, s| {
            acc.max(s.compute.free_at()).max(s.agg.free_at()).max(s.mem.free_at())
        });
        let net = self.net.stats();
        let activity = Activity {
            flops: self.flops,
            mem_read_bits: self.slices.iter().map(|s| s.mem.read_bits).sum(),
            mem_write_bits: self.slices.iter().map(|s| s.mem.write_bits).sum(),
            net_flits: net.flits_delivered,
        };
        let sys = self.sys;
        let mut stats = SimStats {
            workload: workload.spec.name().to_string(),
            config_hash: sys.fingerprint(),
            slices: sys.num_slices,
            compute_scale: sys.slice.compute_scale,
            memory: sys.slice.memory.name().to_string(),
            total_cycles,
            activity,
            lowering_bits: self.lowering_bits,
            packets: net.packets_delivered,
            partial_packets: self.partial_packets,
            operand_packets: self.operand_packets,
            mean_packet_latency: net.mean_latency(),
            max_packet_latency: net.latency_max,
            index_checks: self.index_checks,
            index_mismatches: self.index_mismatches,
            energy: energy_account(&activity, sys),
            slice_load_iterations: self.slices.iter().map(|s| s.seq.preloads).collect(),
            slice_busy: self.slices.iter().map(|s| s.compute.busy()).collect(),
            programming_cycles: 0,
            config_packets: 0,
            clock_ghz: sys.slice.clock,
            peak_flops: peak_flops(&sys.slice) * sys.num_slices as f64,
            attainable_flops: 0.0,
        };
        stats.attainable_flops = system_attainable(sys, stats.intensity());
        Ok(SimOutput {
            stats,
            trace: self.trace,
            store: self.store,
        })
    }
}

/// Indices of the messages a packet was built from, as the sender saw them.
/// The sender's own index list for each packet of `coalesce(messages)`:
/// packets to one destination take that destination's messages in order.
fn sender_indices(messages: &[Message], packets: &[Packet]) -> Vec<Vec<(usize, usize)>> {
    let mut by_key: HashMap<(SliceId, MatrixId), std::vec::IntoIter<(usize, usize)>> = HashMap::new();
    let mut lists: HashMap<(SliceId, MatrixId), Vec<(usize, usize)>> = HashMap::new();
    for m in messages {
        lists.entry((m.dst, m.matrix)).or_default().push(m.index);
    }
    for (k, v) in lists {
        by_key.insert(k, v.into_iter());
    }
    packets
        .iter()
        .map(|p| match by_key.get_mut(&(p.dst, p.matrix)) {
            Some(it) => it.take(p.count).collect(),
            None => Vec::new(),
        })
        .collect()
}
