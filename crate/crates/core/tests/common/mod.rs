#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use scatsim::topology::{NodeId, PiconetId, Scatternet};

/// A piconet as plain data: (master, slaves).
pub type Layout = Vec<(u32, Vec<u32>)>;

/// Adjacency built straight from master/slave membership, without going
/// through the library's neighbor queries.
pub fn adjacency(layout: &Layout) -> BTreeMap<u32, BTreeSet<u32>> {
    let mut adj: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for (m, slaves) in layout {
        adj.entry(*m).or_default();
        for s in slaves {
            adj.entry(*m).or_default().insert(*s);
            adj.entry(*s).or_default().insert(*m);
        }
    }
    adj
}

/// Breadth-first hop distances from `src`.
pub fn bfs(adj: &BTreeMap<u32, BTreeSet<u32>>, src: u32) -> BTreeMap<u32, u32> {
    let mut dist = BTreeMap::from([(src, 0)]);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        for &v in &adj[&u] {
            if let std::collections::btree_map::Entry::Vacant(slot) = dist.entry(v) {
                slot.insert(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Connected layout of `p` piconets over nodes `1..=n`. Nodes `1..=p` are
/// the masters. Every other node lands in a random piconet, keeping one slot
/// free in each piconet after the first; that slot then takes a random
/// member of an earlier piconet, which becomes a bridge.
pub fn random_layout(rng: &mut impl Rng, p: usize, n: usize) -> Layout {
    assert!(p >= 1 && n > p && n <= 7 * p + 1);
    let mut layout: Layout = (1..=p as u32).map(|m| (m, Vec::new())).collect();
    let cap = |i: usize| if i == 0 { 7 } else { 6 };
    let mut rest: Vec<u32> = (p as u32 + 1..=n as u32).collect();
    rest.shuffle(rng);
    for node in rest {
        let free: Vec<usize> = (0..p).filter(|&i| layout[i].1.len() < cap(i)).collect();
        let i = *free.choose(rng).expect("capacity checked");
        layout[i].1.push(node);
    }
    for i in 1..p {
        let earlier: Vec<u32> = layout[..i]
            .iter()
            .flat_map(|(m, s)| std::iter::once(*m).chain(s.iter().copied()))
            .filter(|&x| x != layout[i].0)
            .collect();
        let bridge = *earlier.choose(rng).unwrap();
        layout[i].1.push(bridge);
    }
    layout
}

pub fn build(layout: &Layout) -> Scatternet {
    let mut t = Scatternet::new();
    for (i, (m, slaves)) in layout.iter().enumerate() {
        let slaves: Vec<NodeId> = slaves.iter().map(|&s| NodeId(s)).collect();
        t.insert_piconet(PiconetId(i as u32 + 1), NodeId(*m), &slaves)
            .unwrap();
    }
    t
}
