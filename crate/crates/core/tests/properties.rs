mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scatsim::aodv::{select_route, RouteCandidate, SeqNum};
use scatsim::metrics::{DropReason, Metrics, ThroughputUnit};
use scatsim::scenario::Scenario;
use scatsim::topology::{NodeId, PiconetId, Role, MAX_SLAVES};

#[derive(Debug, Clone)]
enum Change {
    Join(u32, u32),
    Leave(u32, u32),
}

fn change() -> impl Strategy<Value = Change> {
    prop_oneof![
        (1u32..=30, 1u32..=6).prop_map(|(n, p)| Change::Join(n, p)),
        (1u32..=30, 1u32..=6).prop_map(|(n, p)| Change::Leave(n, p)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 200,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn topology_invariants_survive_changes(
        seed in any::<u64>(),
        p in 2usize..=6,
        extra in 0usize..=20,
        changes in prop::collection::vec(change(), 0..30),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = (p + 1 + extra).min(7 * p + 1);
        let layout = common::random_layout(&mut rng, p, nodes);
        let mut t = common::build(&layout);
        prop_assert!(t.is_connected().unwrap());
        for c in changes {
            let _ = match c {
                Change::Join(n, p) => t.migrate_as_slave(NodeId(n), PiconetId(p)).map(|_| ()),
                Change::Leave(n, p) => t.leave(NodeId(n), PiconetId(p)).map(|_| ()),
            };
            let mut masters = std::collections::BTreeSet::new();
            for pc in t.piconets() {
                prop_assert!(pc.slaves.len() <= MAX_SLAVES);
                prop_assert!(masters.insert(pc.master));
                prop_assert!(!pc.slaves.contains(&pc.master));
                for (i, s) in pc.slaves.iter().enumerate() {
                    prop_assert!(!pc.slaves[i + 1..].contains(s));
                    prop_assert_eq!(t.memberships(*s).unwrap().get(&pc.pid), Some(&Role::Slave));
                    prop_assert!(t.link_exists(pc.master, *s).unwrap());
                }
            }
            for n in t.nodes().collect::<Vec<_>>() {
                let masters_of = t.memberships(n).unwrap().values().filter(|r| **r == Role::Master).count();
                prop_assert!(masters_of <= 1);
                prop_assert_eq!(t.is_bridge(n), t.memberships(n).unwrap().len() >= 2);
                // links only join a master with one of its slaves
                for m in t.neighbors(n).unwrap() {
                    prop_assert!(t.piconets().any(|pc| (pc.master == n && pc.slaves.contains(&m))
                        || (pc.master == m && pc.slaves.contains(&n))));
                }
            }
        }
    }

    #[test]
    fn route_choice_ignores_arrival_order(
        raw in prop::collection::vec((0u64..5, 1u32..6, 1u32..20), 1..8),
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let cands: Vec<RouteCandidate> = raw
            .iter()
            .map(|&(s, h, n)| RouteCandidate { dest_seq: SeqNum(s), hop_count: h, next_hop: NodeId(n) })
            .collect();
        let mut shuffled = cands.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let pick = select_route(&cands).unwrap();
        prop_assert_eq!(pick, select_route(&shuffled).unwrap());
        // independent check: freshest, then shortest, then lowest id
        let best = cands.iter().map(|c| (std::cmp::Reverse(c.dest_seq), c.hop_count, c.next_hop)).min().unwrap();
        prop_assert_eq!(pick, best.2);
    }

    #[test]
    fn metrics_ignore_record_order(
        events in prop::collection::vec((0u64..2_000_000, 0u64..500_000, 0u8..3), 1..60),
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        // (id, send, outcome time offset, outcome kind)
        let packets: Vec<(u64, u64, u64, u8)> = events
            .iter()
            .enumerate()
            .map(|(i, &(t, d, k))| (i as u64, t, t + d, k))
            .collect();
        let fill = |order: &[(u64, u64, u64, u8)]| {
            let mut m = Metrics::new();
            for &(id, t, _, _) in order {
                m.record_send(id, NodeId(1), NodeId(2), 100, t).unwrap();
            }
            for &(id, _, end, kind) in order {
                match kind {
                    0 => m.record_receive(id, end).unwrap(),
                    1 => m.record_drop(id, DropReason::QueueOverflow, end).unwrap(),
                    _ => {}
                }
            }
            m
        };
        let mut shuffled = packets.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let (a, b) = (fill(&packets), fill(&shuffled));
        prop_assert_eq!(a.average_delay(), b.average_delay());
        prop_assert_eq!(a.loss_report(), b.loss_report());
        prop_assert!(a.loss_report().balances());
        let tp = a.throughput_series(100, 2_500_000, ThroughputUnit::Packets).unwrap();
        prop_assert_eq!(&tp, &b.throughput_series(100, 2_500_000, ThroughputUnit::Packets).unwrap());
        prop_assert_eq!(tp.total() as u64, a.loss_report().received);
        for w in tp.buckets.windows(2) {
            prop_assert_eq!(w[1].0, w[0].0 + 100);
        }
    }

    #[test]
    fn scenario_text_round_trips(
        seed in any::<u64>(),
        p in 2usize..=6,
        flows in prop::collection::vec((1u32..=10, 1u32..=10, 0u64..1000, 1u64..1000, 1u32..500, 1u16..=339), 0..4),
        moves in prop::collection::vec((1u32..=10, 1u32..=6, 0u64..2000), 0..4),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = common::random_layout(&mut rng, p, 10);
        let mut text = String::new();
        for (i, (m, s)) in layout.iter().enumerate() {
            let s: Vec<String> = s.iter().map(|x| x.to_string()).collect();
            let s = if s.is_empty() { "-".to_string() } else { s.join(",") };
            text += &format!("piconet P{} master {m} slaves {s}\n", i + 1);
        }
        for (src, dst, start, len, rate, size) in flows {
            if src != dst {
                text += &format!("flow {src} {dst} start {start} stop {} rate {} size {size}\n", start + len, rate as f64 / 7.0);
            }
        }
        for (node, pid, at) in moves {
            if pid as usize <= p {
                text += &format!("migrate {node} to P{pid} at {at}\n");
            }
        }
        let s = Scenario::parse(&text).unwrap();
        let again = Scenario::parse(&s.to_text()).unwrap();
        prop_assert_eq!(&s, &again);
        prop_assert_eq!(s.to_text(), again.to_text());
    }
}
