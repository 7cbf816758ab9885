//! Page placement across the DDR and CXL nodes.
//!
//! Weighted interleave places `r` of every 100 consecutive pages on CXL,
//! spread evenly inside the period: page `i` goes to CXL exactly when
//! `floor((k + 1) r / 100) > floor(k r / 100)` with `k = i mod 100`. Any
//! prefix of `n` pages therefore holds `floor(n r / 100)` CXL pages, give or
//! take the partial period.

use std::fmt;

use bitvec::vec::BitVec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INTERLEAVE_PERIOD: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Ddr,
    Cxl,
}

impl Node {
    pub fn other(self) -> Node {
        match self {
            Node::Ddr => Node::Cxl,
            Node::Cxl => Node::Ddr,
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Node::Ddr => "DDR",
            Node::Cxl => "CXL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationPolicy {
    Membind(Node),
    Preferred(Node),
    /// Integer percent of pages placed on CXL.
    WeightedInterleave(u8),
}

impl AllocationPolicy {
    /// Weighted interleave at `ratio`, rounded and clamped to `[0, 100]`.
    pub fn interleave(ratio: f64) -> Self {
        AllocationPolicy::WeightedInterleave(clamp_percent(ratio))
    }

    pub fn ratio(&self) -> Option<u8> {
        match *self {
            AllocationPolicy::WeightedInterleave(r) => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for AllocationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocationPolicy::Membind(n) => write!(f, "membind({n})"),
            AllocationPolicy::Preferred(n) => write!(f, "preferred({n})"),
            AllocationPolicy::WeightedInterleave(r) => write!(f, "weighted_interleave({r})"),
        }
    }
}

fn clamp_percent(ratio: f64) -> u8 {
    if ratio.is_nan() {
        return 0;
    }
    ratio.round().clamp(0.0, 100.0) as u8
}

/// Replaces the interleave ratio. Only future allocations see the change;
/// pages already placed stay where they are.
pub fn set_ratio(current: AllocationPolicy, new_ratio: f64) -> Result<AllocationPolicy> {
    match current {
        AllocationPolicy::WeightedInterleave(_) => Ok(AllocationPolicy::interleave(new_ratio)),
        other => Err(Error::PolicyMode(other.to_string())),
    }
}

/// Per-node page budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capacities {
    pub ddr: u64,
    pub cxl: u64,
}

impl Capacities {
    pub const UNLIMITED: Capacities = Capacities {
        ddr: u64::MAX,
        cxl: u64::MAX,
    };

    pub fn of(&self, node: Node) -> u64 {
        match node {
            Node::Ddr => self.ddr,
            Node::Cxl => self.cxl,
        }
    }
}

/// Placement of a page sequence. Bit `i` set means page `i` lives on CXL.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PageMap {
    placement: BitVec,
    cxl_pages: u64,
}

impl PageMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total_pages(&self) -> u64 {
        self.placement.len() as u64
    }

    pub fn cxl_pages(&self) -> u64 {
        self.cxl_pages
    }

    pub fn ddr_pages(&self) -> u64 {
        self.total_pages() - self.cxl_pages
    }

    pub fn pages_on(&self, node: Node) -> u64 {
        match node {
            Node::Ddr => self.ddr_pages(),
            Node::Cxl => self.cxl_pages(),
        }
    }

    pub fn node_of(&self, page: usize) -> Option<Node> {
        self.placement
            .get(page)
            .map(|bit| if *bit { Node::Cxl } else { Node::Ddr })
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.placement
            .iter()
            .map(|bit| if *bit { Node::Cxl } else { Node::Ddr })
    }

    /// Fraction of resident pages on CXL, in percent.
    pub fn cxl_percent(&self) -> f64 {
        if self.placement.is_empty() {
            0.0
        } else {
            100.0 * self.cxl_pages as f64 / self.total_pages() as f64
        }
    }

    fn push(&mut self, node: Node) {
        let cxl = node == Node::Cxl;
        self.placement.push(cxl);
        self.cxl_pages += u64::from(cxl);
    }

    fn free(&self, node: Node, capacities: &Capacities) -> u64 {
        capacities.of(node).saturating_sub(self.pages_on(node))
    }

    /// Places `n` more pages after the existing ones. Capacities bound the
    /// node totals including pages already resident.
    pub fn allocate(&mut self, policy: AllocationPolicy, n: u64, capacities: &Capacities) -> Result<()> {
        match policy {
            AllocationPolicy::Membind(node) => {
                let available = self.free(node, capacities);
                if n > available {
                    return Err(Error::OutOfMemory {
                        node,
                        requested: n,
                        available,
                    });
                }
                (0..n).for_each(|_| self.push(node));
            }
            AllocationPolicy::Preferred(node) => {
                let first = n.min(self.free(node, capacities));
                let rest = n - first;
                let spill = node.other();
                let available = self.free(spill, capacities);
                if rest > available {
                    return Err(Error::OutOfMemory {
                        node: spill,
                        requested: rest,
                        available,
                    });
                }
                (0..first).for_each(|_| self.push(node));
                (0..rest).for_each(|_| self.push(spill));
            }
            AllocationPolicy::WeightedInterleave(ratio) => {
                let total_free = self
                    .free(Node::Ddr, capacities)
                    .saturating_add(self.free(Node::Cxl, capacities));
                if n > total_free {
                    let node = if self.free(Node::Ddr, capacities) == 0 {
                        Node::Cxl
                    } else {
                        Node::Ddr
                    };
                    return Err(Error::OutOfMemory {
                        node,
                        requested: n,
                        available: total_free,
                    });
                }
                let start = self.total_pages();
                for i in start..start + n {
                    let mut node = interleave_node(ratio, i);
                    if self.free(node, capacities) == 0 {
                        node = node.other();
                    }
                    self.push(node);
                }
            }
        }
        Ok(())
    }
}

/// Node for global page index `page` under weighted interleave at `ratio`.
pub fn interleave_node(ratio: u8, page: u64) -> Node {
    let r = u64::from(ratio.min(100));
    let k = page % INTERLEAVE_PERIOD;
    if (k + 1) * r / INTERLEAVE_PERIOD > k * r / INTERLEAVE_PERIOD {
        Node::Cxl
    } else {
        Node::Ddr
    }
}

/// Fresh placement of `n` pages under `policy`.
pub fn allocate_pages(policy: AllocationPolicy, n: u64, capacities: &Capacities) -> Result<PageMap> {
    let mut map = PageMap::new();
    map.allocate(policy, n, capacities)?;
    Ok(map)
}
