//! Lazily materialised rooted trees.
//!
//! A node's offspring count is drawn the first time its children are
//! requested, so the realised tree depends on the order of expansion. The
//! children of a node always get consecutive ids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caps::{CapKind, Caps};
use crate::law::OffspringLaw;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// The consecutive ids of one node's children.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChildRange {
    start: u32,
    len: u32,
}

impl ChildRange {
    pub const EMPTY: ChildRange = ChildRange { start: 0, len: 0 };

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> NodeId {
        debug_assert!(i < self.len as usize);
        NodeId(self.start + i as u32)
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> {
        (self.start..self.start + self.len).map(NodeId)
    }
}

#[derive(Clone, Copy, Debug)]
struct NodeRecord {
    parent: u32,
    generation: u32,
    first_child: u32,
    child_count: u32,
    expanded: bool,
}

#[derive(Clone, Debug)]
pub struct TreeStore {
    law: OffspringLaw,
    caps: Caps,
    nodes: Vec<NodeRecord>,
    censored: Option<CapKind>,
}

impl TreeStore {
    /// A tree with only the root materialised.
    pub fn new(law: OffspringLaw, caps: Caps) -> Self {
        let mut tree = Self {
            law,
            caps,
            nodes: Vec::new(),
            censored: None,
        };
        tree.reset();
        tree
    }

    /// Drops everything but the root, keeping the allocation.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.nodes.push(NodeRecord {
            parent: u32::MAX,
            generation: 0,
            first_child: 0,
            child_count: 0,
            expanded: false,
        });
        self.censored = None;
    }

    pub fn law(&self) -> &OffspringLaw {
        &self.law
    }

    pub fn caps(&self) -> &Caps {
        &self.caps
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The first cap that prevented an expansion, if any.
    pub fn censored(&self) -> Option<CapKind> {
        self.censored
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.index() < self.nodes.len()
    }

    pub fn generation(&self, node: NodeId) -> u32 {
        self.nodes[node.index()].generation
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        let p = self.nodes[node.index()].parent;
        (p != u32::MAX).then_some(NodeId(p))
    }

    pub fn is_expanded(&self, node: NodeId) -> bool {
        self.nodes[node.index()].expanded
    }

    /// Children of `node`, drawing its offspring count on first use.
    ///
    /// Returns `None` without drawing when a cap forbids the expansion; the
    /// tree is then flagged as censored and a later call may retry. Nodes at
    /// the depth limit are leaves and return an empty range.
    pub fn children(&mut self, node: NodeId, stream: &mut RngStream) -> Option<ChildRange> {
        let rec = self.nodes[node.index()];
        if rec.expanded {
            return Some(ChildRange {
                start: rec.first_child,
                len: rec.child_count,
            });
        }
        let k = if self.caps.is_leaf_depth(rec.generation) {
            0
        } else if rec.generation >= self.caps.max_generation {
            self.censored.get_or_insert(CapKind::Generation);
            return None;
        } else {
            self.law.sample(stream)
        };
        if self.nodes.len() as u64 + k as u64 > self.caps.max_nodes {
            self.censored.get_or_insert(CapKind::Nodes);
            return None;
        }
        let start = self.nodes.len() as u32;
        self.nodes.extend((0..k).map(|_| NodeRecord {
            parent: node.0,
            generation: rec.generation + 1,
            first_child: 0,
            child_count: 0,
            expanded: false,
        }));
        let r = &mut self.nodes[node.index()];
        r.expanded = true;
        r.first_child = start;
        r.child_count = k;
        Some(ChildRange { start, len: k })
    }

    /// Children of an already expanded node; empty otherwise.
    pub fn known_children(&self, node: NodeId) -> ChildRange {
        let rec = &self.nodes[node.index()];
        if rec.expanded {
            ChildRange {
                start: rec.first_child,
                len: rec.child_count,
            }
        } else {
            ChildRange::EMPTY
        }
    }

    /// Follows a root path given as child indices, expanding as needed.
    pub fn resolve(&mut self, path: &[u32], stream: &mut RngStream) -> Result<NodeId, TreeError> {
        let mut node = NodeId::ROOT;
        for (depth, &i) in path.iter().enumerate() {
            let kids = self
                .children(node, stream)
                .ok_or(TreeError::CapReached)?;
            if i as usize >= kids.len() {
                return Err(TreeError::NoSuchChild {
                    depth,
                    index: i,
                    available: kids.len(),
                });
            }
            node = kids.get(i as usize);
        }
        Ok(node)
    }

    /// Expands every node breadth-first down to generation `depth`.
    pub fn expand_to(&mut self, depth: u32, stream: &mut RngStream) {
        let mut i = 0;
        while i < self.nodes.len() {
            if self.nodes[i].generation < depth {
                self.children(NodeId(i as u32), stream);
            }
            i += 1;
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("initial set must contain the root")]
    MissingRoot,
    #[error("initial set is not connected: the parent of node {0:?} is missing")]
    Disconnected(NodeId),
    #[error("node {0:?} is not materialised in the tree")]
    UnknownNode(NodeId),
    #[error("path step {depth} asks for child {index} but only {available} exist")]
    NoSuchChild {
        depth: usize,
        index: u32,
        available: usize,
    },
    #[error("a cap was reached while resolving a path")]
    CapReached,
}

/// Initially infected vertices together with the recovery delay of the
/// phantom parent of the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialSet {
    pub nodes: Vec<NodeId>,
    pub delay: f64,
}

impl InitialSet {
    pub fn root(delay: f64) -> Self {
        Self {
            nodes: vec![NodeId::ROOT],
            delay,
        }
    }
}

/// Accepts `a` iff it contains the root and every other member's parent.
pub fn validate_initial_set(tree: &TreeStore, a: &InitialSet) -> Result<(), TreeError> {
    if let Some(&bad) = a.nodes.iter().find(|n| !tree.contains(**n)) {
        return Err(TreeError::UnknownNode(bad));
    }
    if !a.nodes.contains(&NodeId::ROOT) {
        return Err(TreeError::MissingRoot);
    }
    for &n in &a.nodes {
        if let Some(p) = tree.parent(n) {
            if !a.nodes.contains(&p) {
                return Err(TreeError::Disconnected(n));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;

    fn binary() -> TreeStore {
        TreeStore::new(OffspringLaw::d_ary(2).unwrap(), Caps::default())
    }

    #[test]
    fn sterile_root_has_no_children() {
        let mut t = TreeStore::new(OffspringLaw::sterile(), Caps::default());
        let kids = t.children(NodeId::ROOT, &mut make_stream(0, 0)).unwrap();
        assert!(kids.is_empty());
    }

    #[test]
    fn full_binary_tree_to_generation_three() {
        let mut t = binary();
        t.expand_to(3, &mut make_stream(0, 0));
        assert_eq!(t.len(), 15);
        let per_gen = (0..4)
            .map(|g| (0..t.len() as u32).filter(|&i| t.generation(NodeId(i)) == g).count())
            .collect::<Vec<_>>();
        assert_eq!(per_gen, vec![1, 2, 4, 8]);
    }

    #[test]
    fn expansion_is_idempotent() {
        let mut t = TreeStore::new(OffspringLaw::d_ary(3).unwrap(), Caps::default());
        let mut s = make_stream(0, 0);
        let a = t.children(NodeId::ROOT, &mut s).unwrap();
        let b = t.children(NodeId::ROOT, &mut s).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn parent_and_generation_are_consistent() {
        let law = OffspringLaw::table([(0, 0.2), (1, 0.3), (3, 0.5)]).unwrap();
        let mut t = TreeStore::new(law, Caps::default());
        t.expand_to(6, &mut make_stream(3, 1));
        for i in 1..t.len() as u32 {
            let p = t.parent(NodeId(i)).unwrap();
            assert_eq!(t.generation(NodeId(i)), t.generation(p) + 1);
            assert!(t.known_children(p).iter().any(|c| c == NodeId(i)));
        }
    }

    #[test]
    fn same_stream_same_tree() {
        let law = OffspringLaw::poisson(1.5).unwrap();
        let build = || {
            let mut t = TreeStore::new(law.clone(), Caps::default().with_max_nodes(10_000));
            t.expand_to(8, &mut make_stream(8, 8));
            (0..t.len() as u32)
                .map(|i| t.known_children(NodeId(i)).len())
                .collect::<Vec<_>>()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn generation_cap_censors() {
        let mut t = TreeStore::new(
            OffspringLaw::d_ary(2).unwrap(),
            Caps::default().with_max_generation(2),
        );
        t.expand_to(5, &mut make_stream(0, 0));
        assert_eq!(t.len(), 7);
        assert_eq!(t.censored(), Some(CapKind::Generation));
        assert_eq!(t.children(NodeId(6), &mut make_stream(0, 0)), None);
    }

    #[test]
    fn node_cap_censors() {
        let mut t = TreeStore::new(
            OffspringLaw::d_ary(2).unwrap(),
            Caps::default().with_max_nodes(10),
        );
        t.expand_to(5, &mut make_stream(0, 0));
        assert!(t.len() <= 10);
        assert_eq!(t.censored(), Some(CapKind::Nodes));
    }

    #[test]
    fn depth_limit_makes_leaves_without_censoring() {
        let mut t = TreeStore::new(OffspringLaw::d_ary(2).unwrap(), Caps::default().truncated_at(3));
        t.expand_to(10, &mut make_stream(0, 0));
        assert_eq!(t.len(), 15);
        assert_eq!(t.censored(), None);
    }

    #[test]
    fn critical_galton_watson_dies_out() {
        let law = OffspringLaw::table([(0, 0.5), (2, 0.5)]).unwrap();
        let caps = Caps::default().with_max_nodes(1_000_000);
        let mut t = TreeStore::new(law, caps);
        let (mut extinct, mut censored) = (0, 0);
        let reps = 10_000;
        for r in 0..reps {
            t.reset();
            let mut s = make_stream(12, r);
            t.expand_to(u32::MAX, &mut s);
            match t.censored() {
                None => extinct += 1,
                Some(_) => censored += 1,
            }
        }
        assert_eq!(extinct + censored, reps);
        // P(survive to generation g) ~ 2/g for this law; with the default
        // generation cap the censored share is a few in 10⁴.
        assert!(extinct as f64 / reps as f64 > 0.995, "{extinct}");
    }

    #[test]
    fn initial_set_validation() {
        let mut t = binary();
        t.expand_to(2, &mut make_stream(0, 0));
        assert_eq!(validate_initial_set(&t, &InitialSet::root(0.0)), Ok(()));
        let grandchild = t.known_children(NodeId(1)).get(0);
        let a = InitialSet {
            nodes: vec![NodeId::ROOT, grandchild],
            delay: 0.0,
        };
        assert_eq!(
            validate_initial_set(&t, &a),
            Err(TreeError::Disconnected(grandchild))
        );
        let a = InitialSet {
            nodes: vec![NodeId(1)],
            delay: 0.0,
        };
        assert_eq!(validate_initial_set(&t, &a), Err(TreeError::MissingRoot));
    }

    #[test]
    fn resolve_paths() {
        let mut t = binary();
        let mut s = make_stream(0, 0);
        let n = t.resolve(&[1, 0], &mut s).unwrap();
        assert_eq!(t.generation(n), 2);
        assert!(matches!(
            t.resolve(&[2], &mut s),
            Err(TreeError::NoSuchChild { .. })
        ));
    }
}
