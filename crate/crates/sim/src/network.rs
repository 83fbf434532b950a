// SPDX-License-Identifier: Apache-2.0

//! Links between nodes: per-pair latency and bandwidth with step changes,
//! and FIFO serialization of transfers on each directed pair.

use spotlight_core::Millis;

use crate::config::LinkChange;

/// Node 0 is the head node, node `n + 1` is compute node `n`.
pub type NodeId = usize;

pub const HEAD: NodeId = 0;

pub fn compute_node(n: usize) -> NodeId {
    n + 1
}

pub fn node_name(id: NodeId) -> String {
    if id == HEAD {
        "head".into()
    } else {
        format!("node{}", id - 1)
    }
}

pub fn parse_node(name: &str) -> Option<NodeId> {
    if name == "head" {
        return Some(HEAD);
    }
    name.strip_prefix("node")?.parse::<usize>().ok().map(compute_node)
}

/// Milliseconds to push `bytes` through a link.
pub fn transfer_time(bytes: u64, bandwidth: f64, latency: f64) -> f64 {
    latency + bytes as f64 * 1000.0 / bandwidth
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkState {
    /// Bytes per second.
    pub bandwidth: f64,
    /// Milliseconds.
    pub latency: f64,
}

#[derive(Clone, Debug)]
pub struct Links {
    nodes: usize,
    state: Vec<LinkState>,
    busy_until: Vec<f64>,
    last_arrival: Vec<Millis>,
    pub bytes_sent: u64,
}

impl Links {
    pub fn new(nodes: usize, bandwidth: f64, latency: f64) -> Self {
        let n = nodes * nodes;
        Links {
            nodes,
            state: vec![LinkState { bandwidth, latency }; n],
            busy_until: vec![0.0; n],
            last_arrival: vec![0; n],
            bytes_sent: 0,
        }
    }

    fn idx(&self, a: NodeId, b: NodeId) -> usize {
        a * self.nodes + b
    }

    pub fn state(&self, a: NodeId, b: NodeId) -> LinkState {
        self.state[self.idx(a, b)]
    }

    fn set(&mut self, a: NodeId, b: NodeId, c: &LinkChange) {
        for (x, y) in [(a, b), (b, a)] {
            let i = self.idx(x, y);
            if let Some(bw) = c.bandwidth {
                self.state[i].bandwidth = bw;
            }
            if let Some(l) = c.latency {
                self.state[i].latency = l;
            }
        }
    }

    /// Applies a change to future transfers. Returns false if the link name
    /// matches nothing.
    pub fn apply(&mut self, c: &LinkChange) -> bool {
        let pairs: Vec<(NodeId, NodeId)> = match c.link.as_str() {
            "*" => (0..self.nodes).flat_map(|a| (0..self.nodes).map(move |b| (a, b))).collect(),
            "compute" => (1..self.nodes).flat_map(|a| (1..self.nodes).map(move |b| (a, b))).collect(),
            name => {
                let ends = name.split_once('-').and_then(|(a, b)| Some((parse_node(a)?, parse_node(b)?)));
                match ends {
                    Some((a, b)) if a < self.nodes && b < self.nodes => vec![(a, b)],
                    _ => return false,
                }
            }
        };
        for (a, b) in pairs {
            self.set(a, b, c);
        }
        true
    }

    /// Sends `bytes` from `from` to `to` at virtual time `now` and returns
    /// the arrival time. Transfers on one directed pair are serialized and
    /// never overtake each other.
    pub fn send(&mut self, now: Millis, from: NodeId, to: NodeId, bytes: u64) -> Millis {
        if from == to {
            return now;
        }
        let i = self.idx(from, to);
        let s = self.state[i];
        let start = self.busy_until[i].max(now as f64);
        let tx = bytes as f64 * 1000.0 / s.bandwidth;
        self.busy_until[i] = start + tx;
        let arrival = ((start + tx + s.latency).ceil() as Millis).max(self.last_arrival[i]).max(now);
        self.last_arrival[i] = arrival;
        self.bytes_sent += bytes;
        arrival
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        assert_eq!(parse_node("head"), Some(HEAD));
        assert_eq!(parse_node("node3"), Some(4));
        assert_eq!(node_name(4), "node3");
        assert_eq!(parse_node("node3-fc"), None);
    }

    #[test]
    fn transfer_arithmetic() {
        let fast = transfer_time(2900, 125e6, 0.0);
        let slow = transfer_time(2900, 3.75e6, 0.0);
        assert!((fast - 0.0232).abs() < 1e-9);
        assert!((slow - 0.77333).abs() < 1e-4);
    }

    #[test]
    fn serialized_and_changeable() {
        let mut l = Links::new(3, 1e6, 0.5);
        assert_eq!(l.send(0, 1, 1, 1_000_000), 0);
        // 1 MB at 1 MB/s takes 1000 ms
        assert_eq!(l.send(0, 1, 2, 1_000_000), 1001);
        assert_eq!(l.send(0, 1, 2, 1_000_000), 2001);
        assert_eq!(l.send(0, 2, 1, 1000), 2);
        assert!(l.apply(&LinkChange {
            time: 0.0,
            link: "node0-node1".into(),
            bandwidth: Some(2e6),
            latency: Some(0.0),
        }));
        assert_eq!(l.send(5000, 1, 2, 1_000_000), 5500);
        assert!(!l.apply(&LinkChange {
            time: 0.0,
            link: "node9-head".into(),
            bandwidth: None,
            latency: None,
        }));
        assert!(l.apply(&LinkChange {
            time: 0.0,
            link: "*".into(),
            bandwidth: Some(1e9),
            latency: None,
        }));
        assert_eq!(l.state(0, 2).bandwidth, 1e9);
    }
}
