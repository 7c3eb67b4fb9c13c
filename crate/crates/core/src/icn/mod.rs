//! Inter-slice network: packet format with index compression, coalescing,
//! dimension-order routing and a cycle-stepped wormhole mesh.

mod mesh;

pub use mesh::{channel_graph_is_acyclic, Delivery, Network, NetworkStats};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{MatrixId, NodeId, SliceId};

/// Network geometry and timing.
#[derive(Debug, Clone, PartialEq)]
pub struct IcnConfig {
    pub mesh_x: usize,
    pub mesh_y: usize,
    /// Bits per flit.
    pub flit_width: u32,
    /// Cycles per hop spent in the router.
    pub router_latency: u64,
    /// Cycles per hop spent on the link.
    pub link_latency: u64,
    /// Maximum elements carried by one packet.
    pub max_payload: usize,
    /// Flits of buffering per router input port.
    pub buffer_depth: usize,
    pub net_energy_pj_per_bit: f64,
}

impl Default for IcnConfig {
    fn default() -> Self {
        IcnConfig {
            mesh_x: 4,
            mesh_y: 4,
            flit_width: 128,
            router_latency: 1,
            link_latency: 1,
            max_payload: 32,
            buffer_depth: 4,
            net_energy_pj_per_bit: 1.0,
        }
    }
}

impl IcnConfig {
    pub fn nodes(&self) -> usize {
        self.mesh_x * self.mesh_y
    }

    pub fn coords(&self, node: SliceId) -> (usize, usize) {
        (node % self.mesh_x, node / self.mesh_x)
    }

    pub fn hop_latency(&self) -> u64 {
        self.router_latency + self.link_latency
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh_x < 1 || self.mesh_y < 1 {
            return Err(Error::InvalidConfig("icn mesh dimensions must be >= 1".into()));
        }
        if self.flit_width < 1 || self.max_payload < 1 || self.buffer_depth < 1 {
            return Err(Error::InvalidConfig(
                "icn.flit_width, icn.max_payload and icn.buffer_depth must be >= 1".into(),
            ));
        }
        if self.router_latency + self.link_latency < 1 {
            return Err(Error::InvalidConfig("icn hop latency must be >= 1".into()));
        }
        if !(self.net_energy_pj_per_bit >= 0.0 && self.net_energy_pj_per_bit.is_finite()) {
            return Err(Error::InvalidConfig("icn.net_energy_pj_per_bit must be >= 0".into()));
        }
        Ok(())
    }
}

/// How the elements of a packet follow from its first index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexPattern {
    /// `(r + q, c + q)`
    Diagonal,
    /// `(r, c + q)`
    Row,
}

/// What a packet carries; only steady-state classes count toward throughput.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PacketClass {
    /// Partial sums bound for an aggregation engine.
    Partial,
    /// Operand values moved to the slice that streams or preloads them.
    Operand,
    /// PMI programming from the host.
    Config,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub src: SliceId,
    pub dst: SliceId,
    pub matrix: MatrixId,
    pub task: NodeId,
    pub class: PacketClass,
    pub first_index: (usize, usize),
    pub count: usize,
    pub pattern: IndexPattern,
    pub payload: Vec<f32>,
    /// Bits per payload element.
    pub element_width: u32,
    /// Sender-assigned tag, opaque to the network.
    pub id: u64,
}

impl Packet {
    pub fn header_flits(&self) -> usize {
        1
    }

    pub fn payload_flits(&self, flit_width: u32) -> usize {
        (self.count * self.element_width as usize).div_ceil(flit_width as usize)
    }

    pub fn flits(&self, flit_width: u32) -> usize {
        self.header_flits() + self.payload_flits(flit_width)
    }

    /// Every element index, rebuilt from the compressed header.
    pub fn indices(&self) -> Vec<(usize, usize)> {
        let (r, c) = self.first_index;
        (0..self.count)
            .map(|q| match self.pattern {
                IndexPattern::Diagonal => (r + q, c + q),
                IndexPattern::Row => (r, c + q),
            })
            .collect()
    }
}

/// One element waiting in a network interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub dst: SliceId,
    pub matrix: MatrixId,
    pub index: (usize, usize),
    pub value: f32,
}

/// Shared fields of the packets produced by [`coalesce`].
#[derive(Debug, Clone, Copy)]
pub struct PacketHeader {
    pub src: SliceId,
    pub task: NodeId,
    pub class: PacketClass,
    pub element_width: u32,
}

/// Merge messages into packets. Consecutive messages to the same destination
/// and matrix share a packet while their indices continue one pattern, up to
/// `max_payload` elements. Packets come out in the order they were opened.
pub fn coalesce(header: PacketHeader, messages: &[Message], max_payload: usize) -> Vec<Packet> {
    let max_payload = max_payload.max(1);
    let mut packets: Vec<Packet> = Vec::new();
    let mut open: BTreeMap<(SliceId, MatrixId), usize> = BTreeMap::new();
    for m in messages {
        let key = (m.dst, m.matrix);
        if let Some(&idx) = open.get(&key) {
            let p = &mut packets[idx];
            if p.count < max_payload && extends(p, m.index) {
                if p.count == 1 {
                    p.pattern = pattern_of(p.first_index, m.index).expect("checked by extends");
                }
                p.count += 1;
                p.payload.push(m.value);
                continue;
            }
        }
        open.insert(key, packets.len());
        packets.push(Packet {
            src: header.src,
            dst: m.dst,
            matrix: m.matrix,
            task: header.task,
            class: header.class,
            first_index: m.index,
            count: 1,
            pattern: IndexPattern::Row,
            payload: vec![m.value],
            element_width: header.element_width,
            id: 0,
        });
    }
    packets
}

fn pattern_of(first: (usize, usize), next: (usize, usize)) -> Option<IndexPattern> {
    if next == (first.0 + 1, first.1 + 1) {
        Some(IndexPattern::Diagonal)
    } else if next == (first.0, first.1 + 1) {
        Some(IndexPattern::Row)
    } else {
        None
    }
}

fn extends(p: &Packet, index: (usize, usize)) -> bool {
    if p.count == 1 {
        return pattern_of(p.first_index, index).is_some();
    }
    let (r, c) = p.first_index;
    let q = p.count;
    let expected = match p.pattern {
        IndexPattern::Diagonal => (r + q, c + q),
        IndexPattern::Row => (r, c + q),
    };
    index == expected
}

/// Isolated (contention-free) route of a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteInfo {
    pub hops: usize,
    pub latency: u64,
}

/// Dimension-order route: X first, then Y. Latency is the per-hop cost plus
/// one cycle per flit of serialization; a packet to its own slice takes the
/// local port in one cycle.
pub fn route(src: SliceId, dst: SliceId, flits: usize, cfg: &IcnConfig) -> Result<RouteInfo> {
    if src >= cfg.nodes() || dst >= cfg.nodes() {
        return Err(Error::Network(format!(
            "route {src} -> {dst} leaves the {}x{} mesh",
            cfg.mesh_x, cfg.mesh_y
        )));
    }
    if src == dst {
        return Ok(RouteInfo { hops: 0, latency: 1 });
    }
    let (sx, sy) = cfg.coords(src);
    let (dx, dy) = cfg.coords(dst);
    let hops = sx.abs_diff(dx) + sy.abs_diff(dy);
    Ok(RouteInfo {
        hops,
        latency: hops as u64 * cfg.hop_latency() + flits as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> PacketHeader {
        PacketHeader {
            src: 1,
            task: NodeId(0),
            class: PacketClass::Partial,
            element_width: 16,
        }
    }

    fn msg(dst: SliceId, r: usize, c: usize) -> Message {
        Message {
            dst,
            matrix: MatrixId(7),
            index: (r, c),
            value: (r * 10 + c) as f32,
        }
    }

    #[test]
    fn diagonal_triple_is_one_packet() {
        let msgs = [msg(2, 0, 2), msg(2, 1, 3), msg(2, 2, 4)];
        let p = coalesce(header(), &msgs, 32);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].first_index, (0, 2));
        assert_eq!(p[0].count, 3);
        assert_eq!(p[0].pattern, IndexPattern::Diagonal);
        assert_eq!(p[0].indices(), vec![(0, 2), (1, 3), (2, 4)]);
    }

    #[test]
    fn single_message() {
        let p = coalesce(header(), &[msg(0, 5, 5)], 32);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].count, 1);
    }

    #[test]
    fn long_row_splits_at_max_payload() {
        let msgs: Vec<_> = (0..40).map(|c| msg(3, 1, c)).collect();
        let p = coalesce(header(), &msgs, 32);
        assert_eq!(p.iter().map(|p| p.count).collect::<Vec<_>>(), vec![32, 8]);
        assert_eq!(p[1].first_index, (1, 32));
    }

    #[test]
    fn interleaved_destinations_stay_separate() {
        let msgs = [msg(1, 0, 0), msg(2, 0, 8), msg(1, 0, 1), msg(2, 0, 9)];
        let p = coalesce(header(), &msgs, 32);
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|p| p.count == 2 && p.pattern == IndexPattern::Row));
    }

    #[test]
    fn flit_counts() {
        let p = coalesce(header(), &[msg(2, 0, 0)], 32).remove(0);
        assert_eq!(p.flits(128), 2);
        let msgs: Vec<_> = (0..32).map(|c| msg(3, 0, c)).collect();
        let p = coalesce(header(), &msgs, 32).remove(0);
        assert_eq!(p.payload_flits(128), 4);
    }

    #[test]
    fn routes() {
        let cfg = IcnConfig {
            mesh_x: 16,
            mesh_y: 16,
            ..IcnConfig::default()
        };
        assert_eq!(route(5, 5, 3, &cfg).unwrap(), RouteInfo { hops: 0, latency: 1 });
        assert_eq!(route(0, 3, 2, &cfg).unwrap(), RouteInfo { hops: 3, latency: 8 });
        assert_eq!(route(0, 255, 2, &cfg).unwrap().hops, 30);
        assert!(route(0, 256, 2, &cfg).is_err());
    }
}
