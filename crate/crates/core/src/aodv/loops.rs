use std::collections::{BTreeMap, BTreeSet};

use super::{NodeAodvState, SeqNum};
use crate::topology::NodeId;
use crate::Micros;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    /// Next-hop pointers toward the destination form a cycle.
    Cycle(Vec<NodeId>),
    /// The next hop's route is not strictly better than the node's own.
    Ordering {
        next_hop: NodeId,
        own: (SeqNum, u32),
        next: (SeqNum, u32),
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopViolation {
    pub dest: NodeId,
    pub at: NodeId,
    pub kind: ViolationKind,
}

/// Checks the usable next-hop graph toward `dest` for cycles, and every
/// edge `n -> m` for `(seq_m, -hops_m) > (seq_n, -hops_n)`.
pub fn check_destination<'a>(
    states: impl IntoIterator<Item = &'a NodeAodvState>,
    dest: NodeId,
    now: Micros,
) -> Vec<LoopViolation> {
    let routes: BTreeMap<NodeId, (NodeId, SeqNum, u32)> = states
        .into_iter()
        .filter_map(|s| {
            s.usable_route(dest, now)
                .map(|e| (s.id(), (e.next_hop, e.dest_seq, e.hop_count)))
        })
        .collect();

    let mut out = Vec::new();
    for (&n, &(m, seq_n, hops_n)) in &routes {
        if let Some(&(_, seq_m, hops_m)) = routes.get(&m) {
            if !super::fresher(seq_m, hops_m, seq_n, hops_n) {
                out.push(LoopViolation {
                    dest,
                    at: n,
                    kind: ViolationKind::Ordering {
                        next_hop: m,
                        own: (seq_n, hops_n),
                        next: (seq_m, hops_m),
                    },
                });
            }
        }
    }

    // functional graph: walk each chain once
    let mut done = BTreeSet::new();
    for &start in routes.keys() {
        let mut path = Vec::new();
        let mut on_path = BTreeSet::new();
        let mut cur = start;
        while routes.contains_key(&cur) && !done.contains(&cur) {
            if !on_path.insert(cur) {
                let from = path.iter().position(|&x| x == cur).expect("on path");
                out.push(LoopViolation {
                    dest,
                    at: cur,
                    kind: ViolationKind::Cycle(path[from..].to_vec()),
                });
                break;
            }
            path.push(cur);
            cur = routes[&cur].0;
        }
        done.extend(path);
    }
    out
}
