//! Scatternet membership graph.
//!
//! A scatternet is a set of piconets. Each piconet has one master and at
//! most seven active slaves; nodes that belong to more than one piconet are
//! bridges. Links exist only between a master and its slaves, so two slaves
//! of the same piconet never talk directly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

/// Maximum number of active slaves in one piconet.
pub const MAX_SLAVES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PiconetId(pub u32);

impl fmt::Display for PiconetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Master,
    Slave,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piconet {
    pub pid: PiconetId,
    pub master: NodeId,
    pub slaves: Vec<NodeId>,
}

impl Piconet {
    pub fn contains(&self, node: NodeId) -> bool {
        self.master == node || self.slaves.contains(&node)
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::once(self.master).chain(self.slaves.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("piconet {0} already has {MAX_SLAVES} slaves")]
    PiconetFull(PiconetId),
    #[error("node {0} is already the master of a piconet")]
    DuplicateMaster(NodeId),
    #[error("node {0} is listed twice")]
    DuplicateMember(NodeId),
    #[error("piconet {0} already exists")]
    DuplicatePiconet(PiconetId),
    #[error("node {node} is already a member of {pid}")]
    AlreadyMember { node: NodeId, pid: PiconetId },
    #[error("node {node} is not a member of {pid}")]
    NotAMember { node: NodeId, pid: PiconetId },
    #[error("unknown piconet {0}")]
    UnknownPiconet(PiconetId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("scatternet has no nodes")]
    EmptyScatternet,
}

/// What changed when a node left a piconet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaveOutcome {
    /// The piconet was dissolved because its master left.
    pub dissolved: bool,
    /// Node pairs whose direct link no longer exists.
    pub broken_links: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scatternet {
    piconets: BTreeMap<PiconetId, Piconet>,
    membership: BTreeMap<NodeId, BTreeMap<PiconetId, Role>>,
}

impl Scatternet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a piconet under the next free identifier (`P1`, `P2`, ...).
    pub fn add_piconet(
        &mut self,
        master: NodeId,
        slaves: &[NodeId],
    ) -> Result<PiconetId, TopologyError> {
        let next = self.piconets.keys().next_back().map_or(1, |p| p.0 + 1);
        let pid = PiconetId(next);
        self.insert_piconet(pid, master, slaves)?;
        Ok(pid)
    }

    /// Registers a piconet under an explicit identifier.
    pub fn insert_piconet(
        &mut self,
        pid: PiconetId,
        master: NodeId,
        slaves: &[NodeId],
    ) -> Result<(), TopologyError> {
        if self.piconets.contains_key(&pid) {
            return Err(TopologyError::DuplicatePiconet(pid));
        }
        if slaves.len() > MAX_SLAVES {
            return Err(TopologyError::PiconetFull(pid));
        }
        let mut seen = BTreeSet::from([master]);
        for &s in slaves {
            if !seen.insert(s) {
                return Err(TopologyError::DuplicateMember(s));
            }
        }
        if self.master_of(master).is_some() {
            return Err(TopologyError::DuplicateMaster(master));
        }
        self.membership
            .entry(master)
            .or_default()
            .insert(pid, Role::Master);
        for &s in slaves {
            self.membership
                .entry(s)
                .or_default()
                .insert(pid, Role::Slave);
        }
        self.piconets.insert(
            pid,
            Piconet {
                pid,
                master,
                slaves: slaves.to_vec(),
            },
        );
        Ok(())
    }

    /// Adds `node` as a slave of `to`, keeping all of its existing memberships.
    pub fn migrate_as_slave(&mut self, node: NodeId, to: PiconetId) -> Result<(), TopologyError> {
        let piconet = self
            .piconets
            .get_mut(&to)
            .ok_or(TopologyError::UnknownPiconet(to))?;
        if piconet.contains(node) {
            return Err(TopologyError::AlreadyMember { node, pid: to });
        }
        if piconet.slaves.len() >= MAX_SLAVES {
            return Err(TopologyError::PiconetFull(to));
        }
        piconet.slaves.push(node);
        self.membership
            .entry(node)
            .or_default()
            .insert(to, Role::Slave);
        Ok(())
    }

    /// Removes `node` from `pid`. A master leaving dissolves its piconet.
    pub fn leave(&mut self, node: NodeId, pid: PiconetId) -> Result<LeaveOutcome, TopologyError> {
        let piconet = self
            .piconets
            .get(&pid)
            .ok_or(TopologyError::UnknownPiconet(pid))?;
        if !piconet.contains(node) {
            return Err(TopologyError::NotAMember { node, pid });
        }
        let before: BTreeSet<(NodeId, NodeId)> = self.piconet_links(pid).collect();
        let dissolved = piconet.master == node;
        if dissolved {
            let removed = self.piconets.remove(&pid).expect("checked above");
            for member in removed.members() {
                if let Some(roles) = self.membership.get_mut(&member) {
                    roles.remove(&pid);
                }
            }
        } else {
            let piconet = self.piconets.get_mut(&pid).expect("checked above");
            piconet.slaves.retain(|&s| s != node);
            if let Some(roles) = self.membership.get_mut(&node) {
                roles.remove(&pid);
            }
        }
        let broken_links = before
            .into_iter()
            .filter(|&(a, b)| !self.link_exists(a, b).unwrap_or(false))
            .collect();
        Ok(LeaveOutcome {
            dissolved,
            broken_links,
        })
    }

    fn piconet_links(&self, pid: PiconetId) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.piconets
            .get(&pid)
            .into_iter()
            .flat_map(|p| p.slaves.iter().map(move |&s| (p.master, s)))
    }

    /// Masters of piconets where `node` is a slave, plus slaves of the
    /// piconet `node` masters. Co-slaves are never neighbors.
    pub fn neighbors(&self, node: NodeId) -> Result<BTreeSet<NodeId>, TopologyError> {
        let roles = self
            .membership
            .get(&node)
            .ok_or(TopologyError::UnknownNode(node))?;
        let mut out = BTreeSet::new();
        for (pid, role) in roles {
            let p = &self.piconets[pid];
            match role {
                Role::Master => out.extend(p.slaves.iter().copied()),
                Role::Slave => {
                    out.insert(p.master);
                }
            }
        }
        Ok(out)
    }

    pub fn link_exists(&self, a: NodeId, b: NodeId) -> Result<bool, TopologyError> {
        if !self.membership.contains_key(&b) {
            return Err(TopologyError::UnknownNode(b));
        }
        Ok(self.neighbors(a)?.contains(&b))
    }

    /// Breadth-first reachability over master/slave links.
    pub fn is_connected(&self) -> Result<bool, TopologyError> {
        let start = *self
            .membership
            .keys()
            .next()
            .ok_or(TopologyError::EmptyScatternet)?;
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for m in self.neighbors(n)? {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        Ok(seen.len() == self.membership.len())
    }

    /// Hop distances from `source` to every reachable node.
    pub fn hop_distances(&self, source: NodeId) -> Result<BTreeMap<NodeId, u32>, TopologyError> {
        let mut dist = BTreeMap::from([(source, 0)]);
        let mut queue = VecDeque::from([source]);
        while let Some(n) = queue.pop_front() {
            let d = dist[&n];
            for m in self.neighbors(n)? {
                dist.entry(m).or_insert_with(|| {
                    queue.push_back(m);
                    d + 1
                });
            }
        }
        Ok(dist)
    }

    /// Largest hop distance between any two mutually reachable nodes.
    pub fn diameter(&self) -> u32 {
        self.nodes()
            .filter_map(|n| self.hop_distances(n).ok())
            .flat_map(|d| d.into_values())
            .max()
            .unwrap_or(0)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.membership.keys().copied()
    }

    pub fn contains_node(&self, node: NodeId) -> bool {
        self.membership.contains_key(&node)
    }

    pub fn node_count(&self) -> usize {
        self.membership.len()
    }

    pub fn piconets(&self) -> impl Iterator<Item = &Piconet> {
        self.piconets.values()
    }

    pub fn piconet(&self, pid: PiconetId) -> Option<&Piconet> {
        self.piconets.get(&pid)
    }

    /// Memberships of `node` ordered by piconet id.
    pub fn memberships(&self, node: NodeId) -> Option<&BTreeMap<PiconetId, Role>> {
        self.membership.get(&node)
    }

    pub fn master_of(&self, node: NodeId) -> Option<PiconetId> {
        self.membership
            .get(&node)?
            .iter()
            .find(|(_, r)| **r == Role::Master)
            .map(|(p, _)| *p)
    }

    pub fn is_bridge(&self, node: NodeId) -> bool {
        self.membership.get(&node).is_some_and(|m| m.len() >= 2)
    }

    /// Piconets in which `a` and `b` are directly linked.
    pub fn shared_piconets(&self, a: NodeId, b: NodeId) -> Vec<PiconetId> {
        self.piconets
            .values()
            .filter(|p| {
                (p.master == a && p.slaves.contains(&b)) || (p.master == b && p.slaves.contains(&a))
            })
            .map(|p| p.pid)
            .collect()
    }
}
