use std::collections::{BTreeSet, VecDeque};

use super::{IcnConfig, Packet};
use crate::error::{Error, Result};
use crate::types::SliceId;

const LOCAL: usize = 0;
const NORTH: usize = 1;
const EAST: usize = 2;
const SOUTH: usize = 3;
const WEST: usize = 4;
const PORTS: usize = 5;

/// Cycles without any flit movement after which the network reports a stall.
const STALL_LIMIT: u64 = 100_000;

#[derive(Debug, Clone, Copy)]
struct Flit {
    packet: usize,
    head: bool,
    tail: bool,
}

#[derive(Debug)]
struct InFlight {
    packet: Packet,
    inject_time: u64,
    flits: usize,
    hops: usize,
}

/// A packet that reached its destination.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub packet: Packet,
    pub inject_time: u64,
    /// Cycle at which the tail flit has been ejected.
    pub deliver_time: u64,
    pub hops: usize,
    pub flits: usize,
}

impl Delivery {
    pub fn latency(&self) -> u64 {
        self.deliver_time - self.inject_time
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkStats {
    pub packets_injected: u64,
    pub packets_delivered: u64,
    pub flits_injected: u64,
    pub flits_delivered: u64,
    pub latency_sum: u64,
    pub latency_max: u64,
    /// Flits carried by the busiest inter-router link.
    pub max_link_flits: u64,
}

impl NetworkStats {
    pub fn mean_latency(&self) -> f64 {
        if self.packets_delivered == 0 {
            0.0
        } else {
            self.latency_sum as f64 / self.packets_delivered as f64
        }
    }
}

/// Cycle-stepped 2D mesh with wormhole switching and dimension-order routing.
///
/// Each router input port owns a FIFO of `buffer_depth` flits with
/// credit-based flow control. An output port is held by one packet from its
/// head flit until its tail flit leaves; competing heads are granted
/// round-robin over input ports. A flit spends `router_latency +
/// link_latency` cycles per hop and the destination ejects one flit per cycle.
#[derive(Debug)]
pub struct Network {
    cfg: IcnConfig,
    time: u64,
    packets: Vec<Option<InFlight>>,
    free_slots: Vec<usize>,
    buffers: Vec<VecDeque<Flit>>,
    /// Flits buffered or in flight toward each input port.
    reserved: Vec<usize>,
    alloc: Vec<Option<usize>>,
    rr: Vec<usize>,
    occupancy: Vec<usize>,
    active: BTreeSet<usize>,
    injection: Vec<VecDeque<(usize, usize)>>,
    injecting: BTreeSet<usize>,
    links: VecDeque<(u64, usize, usize, Flit)>,
    local: VecDeque<usize>,
    link_flits: Vec<u64>,
    in_network: usize,
    idle_cycles: u64,
    stats: NetworkStats,
}

impl Network {
    pub fn new(cfg: &IcnConfig) -> Self {
        let n = cfg.nodes();
        Network {
            cfg: cfg.clone(),
            time: 0,
            packets: Vec::new(),
            free_slots: Vec::new(),
            buffers: vec![VecDeque::new(); n * PORTS],
            reserved: vec![0; n * PORTS],
            alloc: vec![None; n * PORTS],
            rr: vec![0; n * PORTS],
            occupancy: vec![0; n],
            active: BTreeSet::new(),
            injection: vec![VecDeque::new(); n],
            injecting: BTreeSet::new(),
            links: VecDeque::new(),
            local: VecDeque::new(),
            link_flits: vec![0; n * PORTS],
            in_network: 0,
            idle_cycles: 0,
            stats: NetworkStats::default(),
        }
    }

    pub fn config(&self) -> &IcnConfig {
        &self.cfg
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn stats(&self) -> NetworkStats {
        NetworkStats {
            max_link_flits: self.link_flits.iter().copied().max().unwrap_or(0),
            ..self.stats.clone()
        }
    }

    pub fn is_idle(&self) -> bool {
        self.in_network == 0
    }

    /// Move the clock forward while idle.
    pub fn advance_to(&mut self, t: u64) {
        debug_assert!(self.is_idle(), "advance_to on a busy network");
        if t > self.time {
            self.time = t;
        }
    }

    /// Queue a packet at its source at the current cycle.
    pub fn inject(&mut self, packet: Packet) -> Result<()> {
        let nodes = self.cfg.nodes();
        if packet.src >= nodes || packet.dst >= nodes {
            return Err(Error::Network(format!(
                "packet {} -> {} leaves the {}x{} mesh",
                packet.src, packet.dst, self.cfg.mesh_x, self.cfg.mesh_y
            )));
        }
        if packet.count == 0 || packet.payload.len() != packet.count {
            return Err(Error::Network("packet payload does not match its count".into()));
        }
        let flits = packet.flits(self.cfg.flit_width);
        let (sx, sy) = self.cfg.coords(packet.src);
        let (dx, dy) = self.cfg.coords(packet.dst);
        let hops = sx.abs_diff(dx) + sy.abs_diff(dy);
        let src = packet.src;
        let local = packet.src == packet.dst;
        let state = InFlight {
            packet,
            inject_time: self.time,
            flits,
            hops,
        };
        let slot = match self.free_slots.pop() {
            Some(s) => {
                self.packets[s] = Some(state);
                s
            }
            None => {
                self.packets.push(Some(state));
                self.packets.len() - 1
            }
        };
        self.in_network += 1;
        self.stats.packets_injected += 1;
        self.stats.flits_injected += flits as u64;
        if local {
            self.local.push_back(slot);
        } else {
            self.injection[src].push_back((slot, flits));
            self.injecting.insert(src);
        }
        Ok(())
    }

    fn out_port(&self, router: usize, dst: SliceId) -> usize {
        let (x, y) = self.cfg.coords(router);
        let (dx, dy) = self.cfg.coords(dst);
        if dx > x {
            EAST
        } else if dx < x {
            WEST
        } else if dy > y {
            SOUTH
        } else if dy < y {
            NORTH
        } else {
            LOCAL
        }
    }

    fn neighbor(&self, router: usize, port: usize) -> (usize, usize) {
        let mx = self.cfg.mesh_x;
        match port {
            NORTH => (router - mx, SOUTH),
            SOUTH => (router + mx, NORTH),
            EAST => (router + 1, WEST),
            WEST => (router - 1, EAST),
            _ => unreachable!("local port has no neighbor"),
        }
    }

    fn finish(&mut self, slot: usize, deliver_time: u64, out: &mut Vec<Delivery>) {
        let st = self.packets[slot].take().expect("live packet");
        self.free_slots.push(slot);
        self.in_network -= 1;
        let latency = deliver_time - st.inject_time;
        self.stats.packets_delivered += 1;
        self.stats.flits_delivered += st.flits as u64;
        self.stats.latency_sum += latency;
        self.stats.latency_max = self.stats.latency_max.max(latency);
        out.push(Delivery {
            packet: st.packet,
            inject_time: st.inject_time,
            deliver_time,
            hops: st.hops,
            flits: st.flits,
        });
    }

    /// Advance one cycle. Returns packets whose tail left the network.
    pub fn step(&mut self) -> Result<Vec<Delivery>> {
        let t = self.time;
        let depth = self.cfg.buffer_depth;
        let hop = self.cfg.hop_latency();
        let mut delivered = Vec::new();
        let mut moved = false;

        while let Some(slot) = self.local.pop_front() {
            self.finish(slot, t + 1, &mut delivered);
            moved = true;
        }

        while self.links.front().is_some_and(|l| l.0 <= t) {
            let (_, router, port, flit) = self.links.pop_front().expect("front checked");
            self.buffers[router * PORTS + port].push_back(flit);
            if self.occupancy[router] == 0 {
                self.active.insert(router);
            }
            self.occupancy[router] += 1;
        }

        let sources: Vec<usize> = self.injecting.iter().copied().collect();
        for src in sources {
            let idx = src * PORTS + LOCAL;
            if self.reserved[idx] >= depth {
                continue;
            }
            let queue = &mut self.injection[src];
            let (slot, remaining) = queue.front_mut().expect("injecting source has a packet");
            let total = self.packets[*slot].as_ref().expect("live").flits;
            let flit = Flit {
                packet: *slot,
                head: *remaining == total,
                tail: *remaining == 1,
            };
            *remaining -= 1;
            if *remaining == 0 {
                queue.pop_front();
                if queue.is_empty() {
                    self.injecting.remove(&src);
                }
            }
            self.buffers[idx].push_back(flit);
            self.reserved[idx] += 1;
            if self.occupancy[src] == 0 {
                self.active.insert(src);
            }
            self.occupancy[src] += 1;
            moved = true;
        }

        let mut freed: Vec<usize> = Vec::new();
        let routers: Vec<usize> = self.active.iter().copied().collect();
        for r in routers {
            let mut input_used = [false; PORTS];
            for o in 0..PORTS {
                let oi = r * PORTS + o;
                let input = match self.alloc[oi] {
                    Some(p) => p,
                    None => {
                        let mut grant = None;
                        for k in 1..=PORTS {
                            let p = (self.rr[oi] + k) % PORTS;
                            if input_used[p] {
                                continue;
                            }
                            if let Some(f) = self.buffers[r * PORTS + p].front() {
                                let dst = self.packets[f.packet].as_ref().expect("live").packet.dst;
                                if f.head && self.out_port(r, dst) == o {
                                    grant = Some(p);
                                    break;
                                }
                            }
                        }
                        match grant {
                            Some(p) => {
                                self.alloc[oi] = Some(p);
                                self.rr[oi] = p;
                                p
                            }
                            None => continue,
                        }
                    }
                };
                if input_used[input] {
                    continue;
                }
                let ii = r * PORTS + input;
                let Some(&flit) = self.buffers[ii].front() else {
                    continue;
                };
                if o == LOCAL {
                    self.buffers[ii].pop_front();
                    if flit.tail {
                        self.finish(flit.packet, t + 1, &mut delivered);
                    }
                } else {
                    let (n, np) = self.neighbor(r, o);
                    let ni = n * PORTS + np;
                    if self.reserved[ni] >= depth {
                        continue;
                    }
                    self.buffers[ii].pop_front();
                    self.reserved[ni] += 1;
                    self.links.push_back((t + hop, n, np, flit));
                    self.link_flits[oi] += 1;
                }
                input_used[input] = true;
                freed.push(ii);
                self.occupancy[r] -= 1;
                moved = true;
                if flit.tail {
                    self.alloc[oi] = None;
                }
            }
            if self.occupancy[r] == 0 {
                self.active.remove(&r);
            }
        }
        for ii in freed {
            self.reserved[ii] -= 1;
        }

        self.time = t + 1;
        if moved || !self.links.is_empty() || self.in_network == 0 {
            self.idle_cycles = 0;
        } else {
            self.idle_cycles += 1;
            if self.idle_cycles > STALL_LIMIT {
                return Err(Error::Network(format!(
                    "no flit moved for {STALL_LIMIT} cycles with {} packets in flight",
                    self.in_network
                )));
            }
        }
        Ok(delivered)
    }

    /// Step until every packet is delivered.
    pub fn drain(&mut self) -> Result<Vec<Delivery>> {
        let mut out = Vec::new();
        while !self.is_idle() {
            out.extend(self.step()?);
        }
        Ok(out)
    }
}

/// Build the channel dependency graph of X-then-Y routing on the mesh and
/// check that it has no cycle, which rules out routing deadlock.
pub fn channel_graph_is_acyclic(cfg: &IcnConfig) -> bool {
    let n = cfg.nodes();
    let net = Network::new(cfg);
    // Channel = (router, output port); edge c1 -> c2 when some route uses c2
    // right after c1.
    let mut edges: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n * PORTS];
    for src in 0..n {
        for dst in 0..n {
            let mut r = src;
            let mut prev: Option<usize> = None;
            loop {
                let o = net.out_port(r, dst);
                if o == LOCAL {
                    break;
                }
                let ch = r * PORTS + o;
                if let Some(p) = prev {
                    edges[p].insert(ch);
                }
                prev = Some(ch);
                r = net.neighbor(r, o).0;
            }
        }
    }
    // Kahn's algorithm.
    let mut indeg = vec![0usize; n * PORTS];
    for e in &edges {
        for &c in e {
            indeg[c] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..n * PORTS).filter(|&c| indeg[c] == 0).collect();
    let mut seen = 0;
    while let Some(c) = queue.pop() {
        seen += 1;
        for &d in &edges[c] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                queue.push(d);
            }
        }
    }
    seen == n * PORTS
}
