use std::collections::BTreeSet;

use petgraph::algo::{kosaraju_scc, toposort};
use petgraph::graphmap::DiGraphMap;

use crate::envelope::RequestId;
use crate::trace::Trace;

/// Result of the cross-shard ordering check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderVerdict {
    /// `a` was delivered before `b` on some partition.
    pub edges: BTreeSet<(RequestId, RequestId)>,
    pub acyclic: bool,
    /// Requests forming a cycle, when one exists.
    pub cycle_witness: Vec<RequestId>,
}

/// Builds the "delivered before" relation over multi-shard requests from
/// every (replica, partition) delivery sequence and checks it for cycles.
/// Two such requests sharing partitions must appear in the same relative
/// order on each of them.
pub fn cross_shard_order(trace: &Trace) -> OrderVerdict {
    let mut edges = BTreeSet::new();
    for seq in trace.deliveries().values() {
        let mut seen = BTreeSet::new();
        let mut prev: Option<RequestId> = None;
        for d in seq {
            let Some(r) = d.request else { continue };
            if !d.shards.as_ref().is_some_and(|s| s.len() > 1) || !seen.insert(r) {
                continue;
            }
            if let Some(p) = prev {
                edges.insert((p, r));
            }
            prev = Some(r);
        }
    }
    let mut g = DiGraphMap::<u64, ()>::new();
    for (a, b) in &edges {
        g.add_edge(a.0, b.0, ());
    }
    let acyclic = toposort(&g, None).is_ok();
    let cycle_witness = if acyclic {
        Vec::new()
    } else {
        kosaraju_scc(&g)
            .into_iter()
            .find(|c| c.len() > 1)
            .map(|mut c| {
                c.sort_unstable();
                c.into_iter().map(RequestId).collect()
            })
            .unwrap_or_default()
    };
    OrderVerdict {
        edges,
        acyclic,
        cycle_witness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::EventKind;

    fn deliver(t: &mut Trace, replica: u16, pid: u16, inst: u32, req: u64, shards: &[u16]) {
        t.push(
            inst as u64,
            EventKind::Delivery {
                replica,
                pid,
                inst,
                request: Some(RequestId(req)),
                shards: Some(shards.to_vec()),
                executor: pid == shards[0],
                noop: false,
            },
        );
    }

    #[test]
    fn consistent_order_is_acyclic() {
        let mut t = Trace::new();
        deliver(&mut t, 9, 0, 0, 1, &[0, 1]);
        deliver(&mut t, 9, 0, 1, 2, &[0, 1]);
        deliver(&mut t, 9, 1, 0, 1, &[0, 1]);
        deliver(&mut t, 9, 1, 1, 2, &[0, 1]);
        let v = cross_shard_order(&t);
        assert!(v.acyclic);
        assert_eq!(v.edges.len(), 1);
    }

    #[test]
    fn opposite_orders_form_a_cycle() {
        let mut t = Trace::new();
        deliver(&mut t, 9, 0, 0, 1, &[0, 1]);
        deliver(&mut t, 9, 0, 1, 2, &[0, 1]);
        deliver(&mut t, 9, 1, 0, 2, &[0, 1]);
        deliver(&mut t, 9, 1, 1, 1, &[0, 1]);
        let v = cross_shard_order(&t);
        assert!(!v.acyclic);
        assert_eq!(v.cycle_witness, vec![RequestId(1), RequestId(2)]);
    }

    #[test]
    fn single_shard_requests_ignored() {
        let mut t = Trace::new();
        deliver(&mut t, 9, 0, 0, 1, &[0]);
        deliver(&mut t, 9, 0, 1, 2, &[0]);
        assert!(cross_shard_order(&t).edges.is_empty());
    }
}
