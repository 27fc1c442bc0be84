//! Directed tree networks with a single source, inner junctions and demand
//! leaves.
//!
//! Every non-source node has exactly one incoming arc, so arcs and non-source
//! nodes are in bijection. Following the usual numbering for these networks,
//! the arc that ends in node `v_i` is referred to as "arc i"; [`Network::arc_into`]
//! and [`Network::arc_label`] translate between the two views.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timefuncs::CoefFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArcId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Source,
    Inner,
    Demand,
}

/// A transport arc with linear flux `λ(t) z` and linear damping `μ(t) z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub tail: NodeId,
    pub head: NodeId,
    pub length: f64,
    pub velocity: CoefFn,
    pub damping: CoefFn,
}

impl Arc {
    pub fn new(tail: usize, head: usize, velocity: CoefFn, damping: CoefFn) -> Self {
        Self {
            tail: NodeId(tail),
            head: NodeId(head),
            length: 1.0,
            velocity,
            damping,
        }
    }

    pub fn with_length(mut self, length: f64) -> Self {
        self.length = length;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("network has no source node")]
    NoSource,
    #[error("network has more than one source node ({0} and {1})")]
    MultipleSources(NodeId, NodeId),
    #[error("arc {arc} references unknown node {node}")]
    UnknownNode { arc: usize, node: usize },
    #[error("node {0} has more than one incoming arc")]
    MultipleIncoming(NodeId),
    #[error("source node {0} must not have incoming arcs")]
    SourceHasIncoming(NodeId),
    #[error("cycle detected through node {0}")]
    CycleDetected(NodeId),
    #[error("node {0} is not reachable from the source")]
    DisconnectedNode(NodeId),
    #[error("source node {0} must have exactly one outgoing arc")]
    SourceFanOut(NodeId),
    #[error("demand node {0} must be a leaf")]
    DemandNotLeaf(NodeId),
    #[error("inner node {0} has no outgoing arc")]
    InnerIsLeaf(NodeId),
    #[error("velocity on arc {arc} is not strictly positive on [{t0}, {t_end}]")]
    NonPositiveVelocity { arc: usize, t0: f64, t_end: f64 },
    #[error("damping on arc {arc} is negative on [{t0}, {t_end}]")]
    NegativeDamping { arc: usize, t0: f64, t_end: f64 },
    #[error("arc {0} has non-positive length")]
    NonPositiveLength(usize),
    #[error("invalid coefficient on arc {arc}: {msg}")]
    BadCoefficient { arc: usize, msg: String },
    #[error("no path from {from} to {to}")]
    NoSuchPath { from: NodeId, to: NodeId },
}

/// A validated tree network. Immutable once built.
#[derive(Debug, Clone)]
pub struct Network {
    kinds: Vec<NodeKind>,
    arcs: Vec<Arc>,
    incoming: Vec<Option<ArcId>>,
    outgoing: Vec<Vec<ArcId>>,
    source: NodeId,
    /// Arcs in breadth-first order from the source.
    arc_order: Vec<ArcId>,
    /// Demand leaves below each node, sorted by id.
    descendants: Vec<Vec<NodeId>>,
    depth: Vec<usize>,
}

impl Network {
    /// Builds the network and checks the structural tree invariants.
    /// Coefficient checks that need a time horizon live in [`Network::validate`].
    pub fn new(kinds: Vec<NodeKind>, arcs: Vec<Arc>) -> Result<Self, NetError> {
        let n = kinds.len();
        let mut source = None;
        for (i, k) in kinds.iter().enumerate() {
            if *k == NodeKind::Source {
                if let Some(prev) = source {
                    return Err(NetError::MultipleSources(prev, NodeId(i)));
                }
                source = Some(NodeId(i));
            }
        }
        let source = source.ok_or(NetError::NoSource)?;

        let mut incoming = vec![None; n];
        let mut outgoing = vec![Vec::new(); n];
        for (a, arc) in arcs.iter().enumerate() {
            for node in [arc.tail, arc.head] {
                if node.0 >= n {
                    return Err(NetError::UnknownNode {
                        arc: a,
                        node: node.0,
                    });
                }
            }
            if !(arc.length > 0.0) {
                return Err(NetError::NonPositiveLength(a));
            }
            if arc.tail == arc.head {
                return Err(NetError::CycleDetected(arc.head));
            }
            if arc.head == source {
                return Err(NetError::SourceHasIncoming(source));
            }
            if incoming[arc.head.0].is_some() {
                return Err(NetError::MultipleIncoming(arc.head));
            }
            incoming[arc.head.0] = Some(ArcId(a));
            outgoing[arc.tail.0].push(ArcId(a));
        }

        // Breadth-first walk from the source; anything unreached is either
        // disconnected or sits on a cycle that the source cannot enter.
        let mut depth = vec![usize::MAX; n];
        let mut arc_order = Vec::with_capacity(arcs.len());
        let mut queue = VecDeque::from([source]);
        depth[source.0] = 0;
        while let Some(v) = queue.pop_front() {
            for &a in &outgoing[v.0] {
                let h = arcs[a.0].head;
                if depth[h.0] != usize::MAX {
                    return Err(NetError::CycleDetected(h));
                }
                depth[h.0] = depth[v.0] + 1;
                arc_order.push(a);
                queue.push_back(h);
            }
        }
        for v in 0..n {
            if depth[v] == usize::MAX {
                // Unreached node with an incoming arc is on a cycle.
                return Err(match incoming[v] {
                    Some(_) if Self::on_cycle(&arcs, &incoming, NodeId(v)) => {
                        NetError::CycleDetected(NodeId(v))
                    }
                    _ => NetError::DisconnectedNode(NodeId(v)),
                });
            }
        }

        if outgoing[source.0].len() != 1 {
            return Err(NetError::SourceFanOut(source));
        }
        for (v, k) in kinds.iter().enumerate() {
            match k {
                NodeKind::Demand if !outgoing[v].is_empty() => {
                    return Err(NetError::DemandNotLeaf(NodeId(v)))
                }
                NodeKind::Inner if outgoing[v].is_empty() => {
                    return Err(NetError::InnerIsLeaf(NodeId(v)))
                }
                _ => {}
            }
        }

        let mut descendants = vec![Vec::new(); n];
        for &a in arc_order.iter().rev() {
            let arc = &arcs[a.0];
            if kinds[arc.head.0] == NodeKind::Demand {
                descendants[arc.head.0] = vec![arc.head];
            }
            let below = descendants[arc.head.0].clone();
            descendants[arc.tail.0].extend(below);
        }
        for d in &mut descendants {
            d.sort();
        }

        Ok(Self {
            kinds,
            arcs,
            incoming,
            outgoing,
            source,
            arc_order,
            descendants,
            depth,
        })
    }

    fn on_cycle(arcs: &[Arc], incoming: &[Option<ArcId>], start: NodeId) -> bool {
        let mut v = start;
        for _ in 0..=arcs.len() {
            match incoming[v.0] {
                Some(a) => {
                    v = arcs[a.0].tail;
                    if v == start {
                        return true;
                    }
                }
                None => return false,
            }
        }
        true
    }

    /// Checks the coefficient invariants on the horizon `[t0, t_end]`:
    /// velocities strictly positive and damping non-negative.
    pub fn validate(&self, t0: f64, t_end: f64) -> Result<(), NetError> {
        for (a, arc) in self.arcs.iter().enumerate() {
            arc.velocity
                .check()
                .map_err(|msg| NetError::BadCoefficient { arc: a, msg })?;
            arc.damping
                .check()
                .map_err(|msg| NetError::BadCoefficient { arc: a, msg })?;
            let (lo, _) = arc.velocity.bounds_on(t0, t_end);
            if !(lo > 0.0) {
                return Err(NetError::NonPositiveVelocity { arc: a, t0, t_end });
            }
            let (lo, _) = arc.damping.bounds_on(t0, t_end);
            if lo < 0.0 {
                return Err(NetError::NegativeDamping { arc: a, t0, t_end });
            }
        }
        Ok(())
    }

    /// The standard 1-1 chain `v0 -> v1 -> v2`.
    pub fn chain(velocities: [CoefFn; 2], damping: [CoefFn; 2]) -> Self {
        let [l1, l2] = velocities;
        let [m1, m2] = damping;
        Self::new(
            vec![NodeKind::Source, NodeKind::Inner, NodeKind::Demand],
            vec![Arc::new(0, 1, l1, m1), Arc::new(1, 2, l2, m2)],
        )
        .expect("1-1 chain is a valid tree")
    }

    /// The standard 1-2 network: `v0 -> v1`, then `v1 -> v2` and `v1 -> v3`.
    pub fn one_to_two(velocities: [CoefFn; 3], damping: [CoefFn; 3]) -> Self {
        let [l1, l2, l3] = velocities;
        let [m1, m2, m3] = damping;
        Self::new(
            vec![
                NodeKind::Source,
                NodeKind::Inner,
                NodeKind::Demand,
                NodeKind::Demand,
            ],
            vec![
                Arc::new(0, 1, l1, m1),
                Arc::new(1, 2, l2, m2),
                Arc::new(1, 3, l3, m3),
            ],
        )
        .expect("1-2 network is a valid tree")
    }

    /// Same topology with every arc's damping replaced.
    pub fn with_damping(&self, damping: &[CoefFn]) -> Self {
        assert_eq!(damping.len(), self.arcs.len());
        let mut net = self.clone();
        for (arc, mu) in net.arcs.iter_mut().zip(damping) {
            arc.damping = mu.clone();
        }
        net
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn kind(&self, v: NodeId) -> NodeKind {
        self.kinds[v.0]
    }

    pub fn arc(&self, a: ArcId) -> &Arc {
        &self.arcs[a.0]
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn source(&self) -> NodeId {
        self.source
    }

    /// The single arc leaving the source.
    pub fn source_arc(&self) -> ArcId {
        self.outgoing[self.source.0][0]
    }

    /// Arcs ordered so every arc appears after the arc feeding its tail.
    pub fn arcs_topological(&self) -> &[ArcId] {
        &self.arc_order
    }

    /// All demand leaves, sorted by id.
    pub fn demand_nodes(&self) -> &[NodeId] {
        &self.descendants[self.source.0]
    }

    /// Inner nodes in breadth-first order.
    pub fn inner_nodes(&self) -> Vec<NodeId> {
        self.arc_order
            .iter()
            .map(|a| self.arcs[a.0].head)
            .filter(|v| self.kinds[v.0] == NodeKind::Inner)
            .collect()
    }

    /// The arc ending in `v`; `None` for the source.
    pub fn arc_into(&self, v: NodeId) -> Option<ArcId> {
        self.incoming[v.0]
    }

    /// Conventional arc number: the index of the node it ends in.
    pub fn arc_label(&self, a: ArcId) -> usize {
        self.arcs[a.0].head.0
    }

    pub fn depth(&self, v: NodeId) -> usize {
        self.depth[v.0]
    }

    /// p̃: direct predecessor node.
    pub fn predecessor_node(&self, v: NodeId) -> Option<NodeId> {
        self.incoming[v.0].map(|a| self.arcs[a.0].tail)
    }

    /// q̃: the arc directly preceding arc `a`.
    pub fn preceding_arc(&self, a: ArcId) -> Option<ArcId> {
        self.incoming[self.arcs[a.0].tail.0]
    }

    /// c̃: demand leaves at or below `v`.
    pub fn demand_descendants(&self, v: NodeId) -> &[NodeId] {
        &self.descendants[v.0]
    }

    /// J^out: arcs leaving `v`.
    pub fn outgoing_arcs(&self, v: NodeId) -> &[ArcId] {
        &self.outgoing[v.0]
    }

    /// η: the ordered arcs leading from `from` down to `to`. `to` may be any
    /// node below `from` (or `from` itself, giving an empty path).
    pub fn path_arcs(&self, from: NodeId, to: NodeId) -> Result<Vec<ArcId>, NetError> {
        let mut path = Vec::with_capacity(self.depth[to.0]);
        let mut v = to;
        while v != from {
            match self.incoming[v.0] {
                Some(a) => {
                    path.push(a);
                    v = self.arcs[a.0].tail;
                }
                None => return Err(NetError::NoSuchPath { from, to }),
            }
        }
        path.reverse();
        Ok(path)
    }

    /// True when `anc` lies on the path from the source to `v` (inclusive).
    pub fn is_ancestor(&self, anc: NodeId, v: NodeId) -> bool {
        let mut cur = v;
        loop {
            if cur == anc {
                return true;
            }
            match self.predecessor_node(cur) {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> CoefFn {
        CoefFn::constant(v)
    }

    fn one_two() -> Network {
        Network::one_to_two([c(14.0), c(14.0), c(14.0)], [c(0.0), c(0.0), c(0.0)])
    }

    #[test]
    fn chain_validates() {
        let net = Network::chain([c(14.0), c(14.0)], [c(0.0), c(0.0)]);
        assert!(net.validate(0.0, 2.5).is_ok());
        assert_eq!(net.demand_nodes(), &[NodeId(2)]);
    }

    #[test]
    fn zero_velocity_rejected() {
        let zero_somewhere = CoefFn::piecewise(vec![1.0], vec![14.0, 0.0]);
        let net = Network::chain([c(14.0), zero_somewhere], [c(0.0), c(0.0)]);
        assert!(net.validate(0.0, 0.5).is_ok());
        assert!(matches!(
            net.validate(0.0, 2.5),
            Err(NetError::NonPositiveVelocity { arc: 1, .. })
        ));
    }

    #[test]
    fn negative_damping_rejected() {
        let net = Network::chain(
            [c(14.0), c(14.0)],
            [
                c(0.0),
                CoefFn::sinusoid(0.1, 0.2, std::f64::consts::PI, 0.0),
            ],
        );
        assert!(matches!(
            net.validate(0.0, 2.5),
            Err(NetError::NegativeDamping { arc: 1, .. })
        ));
    }

    #[test]
    fn two_arcs_into_one_node_rejected() {
        let kinds = vec![
            NodeKind::Source,
            NodeKind::Inner,
            NodeKind::Inner,
            NodeKind::Demand,
        ];
        let arcs = vec![
            Arc::new(0, 1, c(1.0), c(0.0)),
            Arc::new(1, 2, c(1.0), c(0.0)),
            Arc::new(1, 3, c(1.0), c(0.0)),
            Arc::new(2, 3, c(1.0), c(0.0)),
        ];
        assert_eq!(
            Network::new(kinds, arcs).unwrap_err(),
            NetError::MultipleIncoming(NodeId(3))
        );
    }

    #[test]
    fn cycle_and_disconnect_detected() {
        let kinds = vec![
            NodeKind::Source,
            NodeKind::Demand,
            NodeKind::Inner,
            NodeKind::Inner,
        ];
        let arcs = vec![
            Arc::new(0, 1, c(1.0), c(0.0)),
            Arc::new(2, 3, c(1.0), c(0.0)),
            Arc::new(3, 2, c(1.0), c(0.0)),
        ];
        assert!(matches!(
            Network::new(kinds, arcs),
            Err(NetError::CycleDetected(_))
        ));

        let kinds = vec![NodeKind::Source, NodeKind::Demand, NodeKind::Demand];
        let arcs = vec![Arc::new(0, 1, c(1.0), c(0.0))];
        assert_eq!(
            Network::new(kinds, arcs).unwrap_err(),
            NetError::DisconnectedNode(NodeId(2))
        );
    }

    #[test]
    fn multiple_sources_rejected() {
        let kinds = vec![NodeKind::Source, NodeKind::Source, NodeKind::Demand];
        let arcs = vec![Arc::new(0, 2, c(1.0), c(0.0))];
        assert!(matches!(
            Network::new(kinds, arcs),
            Err(NetError::MultipleSources(..))
        ));
    }

    #[test]
    fn topology_queries_on_one_to_two() {
        let net = one_two();
        assert_eq!(net.demand_descendants(NodeId(1)), &[NodeId(2), NodeId(3)]);
        assert_eq!(net.demand_descendants(NodeId(2)), &[NodeId(2)]);
        assert_eq!(net.predecessor_node(NodeId(3)), Some(NodeId(1)));
        assert_eq!(net.preceding_arc(ArcId(2)), Some(ArcId(0)));
        assert_eq!(net.preceding_arc(ArcId(0)), None);
        assert_eq!(net.outgoing_arcs(NodeId(1)), &[ArcId(1), ArcId(2)]);

        // Arc labels follow the head node: arc 3 ends in v3.
        let eta = net.path_arcs(NodeId(1), NodeId(3)).unwrap();
        assert_eq!(
            eta.iter().map(|&a| net.arc_label(a)).collect::<Vec<_>>(),
            vec![3]
        );
        let eta = net.path_arcs(NodeId(0), NodeId(3)).unwrap();
        assert_eq!(
            eta.iter().map(|&a| net.arc_label(a)).collect::<Vec<_>>(),
            vec![1, 3]
        );

        assert!(net.path_arcs(NodeId(2), NodeId(3)).is_err());
        assert!(net.path_arcs(NodeId(1), NodeId(1)).unwrap().is_empty());
    }

    fn random_tree(parents: &[usize]) -> Network {
        // parents[k] is the parent of node k+1 and is always < k+1.
        let n = parents.len() + 1;
        let mut has_child = vec![false; n];
        for &p in parents {
            has_child[p] = true;
        }
        let mut kinds: Vec<NodeKind> = (0..n)
            .map(|v| {
                if has_child[v] {
                    NodeKind::Inner
                } else {
                    NodeKind::Demand
                }
            })
            .collect();
        kinds[0] = NodeKind::Source;
        let arcs = parents
            .iter()
            .enumerate()
            .map(|(k, &p)| Arc::new(p, k + 1, c(10.0), c(0.0)))
            .collect();
        Network::new(kinds, arcs).unwrap()
    }

    proptest::proptest! {
        #[test]
        fn descendants_are_disjoint_union(raw in proptest::collection::vec(0usize..1000, 1..12)) {
            // Node 1 hangs off the source, everything else off an earlier non-source node.
            let parents: Vec<usize> = raw
                .iter()
                .enumerate()
                .map(|(k, r)| if k == 0 { 0 } else { 1 + r % k })
                .collect();
            let net = random_tree(&parents);
            for v in net.inner_nodes() {
                let mut union: Vec<NodeId> = net
                    .outgoing_arcs(v)
                    .iter()
                    .flat_map(|&a| net.demand_descendants(net.arc(a).head).to_vec())
                    .collect();
                let before = union.len();
                union.sort();
                union.dedup();
                proptest::prop_assert_eq!(before, union.len());
                proptest::prop_assert_eq!(union.as_slice(), net.demand_descendants(v));
                for &d in net.demand_descendants(v) {
                    let full = net.path_arcs(net.source(), d).unwrap();
                    let tail = net.path_arcs(v, d).unwrap();
                    proptest::prop_assert!(full.ends_with(&tail));
                }
            }
        }
    }
}
