//! Finite scenario trees.
//!
//! A tree encodes a filtration on a finite state space: the nodes at time
//! `t` are the atoms of the time-`t` information, and the leaves are the
//! states. Construction only rejects what cannot be represented at all
//! (duplicate labels, dangling parents, cycles); every other structural
//! requirement is reported by [`ScenarioTree::violations`] so that a
//! malformed input can be diagnosed in full.

use std::collections::HashMap;
use std::fmt;

use num_traits::{One, Signed, Zero};

use crate::rational::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Raw node description, as found in a market file.
#[derive(Clone, Debug)]
pub struct NodeSpec {
    pub label: String,
    pub time: usize,
    pub parent: Option<String>,
    pub branch_prob: Rational,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub label: String,
    pub time: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub branch_prob: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("duplicate node id {0:?}")]
    DuplicateLabel(String),
    #[error("node {node:?} refers to unknown parent {parent:?}")]
    UnknownParent { node: String, parent: String },
    #[error("node {0:?} is not connected to a root (cycle in parent links)")]
    Cycle(String),
    #[error("time {t} is outside 0..={horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },
}

/// Structural invariant violated by a tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeViolation {
    RootCount(usize),
    RootTime { node: String, time: usize },
    ChildTime { node: String, time: usize, parent_time: usize },
    LeafNotAtHorizon { node: String, time: usize, horizon: usize },
    NonPositiveProbability { node: String },
    SiblingSum { parent: Option<String>, sum: Rational },
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeViolation::RootCount(n) => write!(f, "expected exactly one root, found {n}"),
            TreeViolation::RootTime { node, time } => {
                write!(f, "root {node:?} is at time {time}, expected 0")
            }
            TreeViolation::ChildTime { node, time, parent_time } => write!(
                f,
                "node {node:?} at time {time} has parent at time {parent_time}"
            ),
            TreeViolation::LeafNotAtHorizon { node, time, horizon } => write!(
                f,
                "leaf {node:?} at time {time} does not reach the horizon {horizon}"
            ),
            TreeViolation::NonPositiveProbability { node } => {
                write!(f, "branch probability of {node:?} is not positive")
            }
            TreeViolation::SiblingSum { parent, sum } => match parent {
                Some(p) => write!(
                    f,
                    "branch probabilities below {p:?} sum to {}, expected 1",
                    crate::rational::Exact(sum)
                ),
                None => write!(
                    f,
                    "root branch probabilities sum to {}, expected 1",
                    crate::rational::Exact(sum)
                ),
            },
        }
    }
}

/// One atom of the time-`t` information: a node and the states below it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub node: NodeId,
    pub leaves: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct ScenarioTree {
    horizon: usize,
    nodes: Vec<Node>,
    roots: Vec<NodeId>,
    leaves: Vec<NodeId>,
    by_time: Vec<Vec<NodeId>>,
    /// Leaf indices (into `leaves`) below each node.
    leaf_sets: Vec<Vec<usize>>,
    leaf_index: Vec<Option<usize>>,
}

impl ScenarioTree {
    pub fn new(horizon: usize, specs: Vec<NodeSpec>) -> Result<Self, TreeError> {
        let mut index = HashMap::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if index.insert(s.label.clone(), NodeId(i)).is_some() {
                return Err(TreeError::DuplicateLabel(s.label.clone()));
            }
        }
        let mut nodes = Vec::with_capacity(specs.len());
        for s in specs {
            let parent = match &s.parent {
                None => None,
                Some(p) => Some(*index.get(p).ok_or_else(|| TreeError::UnknownParent {
                    node: s.label.clone(),
                    parent: p.clone(),
                })?),
            };
            nodes.push(Node {
                label: s.label,
                time: s.time,
                parent,
                children: Vec::new(),
                branch_prob: s.branch_prob,
            });
        }
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                nodes[p.0].children.push(NodeId(i));
            }
        }
        Self::assemble(horizon, nodes)
    }

    fn assemble(horizon: usize, nodes: Vec<Node>) -> Result<Self, TreeError> {
        let roots: Vec<NodeId> = (0..nodes.len())
            .filter(|&i| nodes[i].parent.is_none())
            .map(NodeId)
            .collect();

        // Depth-first order from the roots; anything unvisited sits on a cycle.
        let mut order = Vec::with_capacity(nodes.len());
        let mut seen = vec![false; nodes.len()];
        let mut stack: Vec<NodeId> = roots.iter().rev().copied().collect();
        while let Some(v) = stack.pop() {
            seen[v.0] = true;
            order.push(v);
            stack.extend(nodes[v.0].children.iter().rev().copied());
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(TreeError::Cycle(nodes[i].label.clone()));
        }

        let leaves: Vec<NodeId> = order
            .iter()
            .copied()
            .filter(|v| nodes[v.0].children.is_empty())
            .collect();
        let mut leaf_index = vec![None; nodes.len()];
        for (k, l) in leaves.iter().enumerate() {
            leaf_index[l.0] = Some(k);
        }
        let mut leaf_sets = vec![Vec::new(); nodes.len()];
        for &v in order.iter().rev() {
            if let Some(k) = leaf_index[v.0] {
                leaf_sets[v.0].push(k);
            } else {
                let mut set: Vec<usize> = nodes[v.0]
                    .children
                    .iter()
                    .flat_map(|c| leaf_sets[c.0].iter().copied())
                    .collect();
                set.sort_unstable();
                leaf_sets[v.0] = set;
            }
        }
        let max_time = nodes.iter().map(|n| n.time).max().unwrap_or(0).max(horizon);
        let mut by_time = vec![Vec::new(); max_time + 1];
        for &v in &order {
            by_time[nodes[v.0].time].push(v);
        }
        Ok(ScenarioTree {
            horizon,
            nodes,
            roots,
            leaves,
            by_time,
            leaf_sets,
            leaf_index,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn time(&self, id: NodeId) -> usize {
        self.nodes[id.0].time
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn find(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.label == label).map(NodeId)
    }

    pub fn root(&self) -> NodeId {
        self.roots[0]
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    /// States of the tree, in depth-first order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf_index(&self, leaf: NodeId) -> Option<usize> {
        self.leaf_index[leaf.0]
    }

    /// Nodes at time `t` (empty when `t` exceeds every node time).
    pub fn nodes_at(&self, t: usize) -> &[NodeId] {
        self.by_time.get(t).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Indices (into [`leaves`](Self::leaves)) of the states below `id`.
    pub fn leaf_set(&self, id: NodeId) -> &[usize] {
        &self.leaf_sets[id.0]
    }

    /// The ancestor of `id` at time `t` (itself when `t` is its own time).
    pub fn ancestor_at(&self, id: NodeId, t: usize) -> NodeId {
        let mut v = id;
        while self.nodes[v.0].time > t {
            v = self.nodes[v.0].parent.expect("ancestor time below root");
        }
        assert_eq!(self.nodes[v.0].time, t, "no ancestor at time {t}");
        v
    }

    /// Path from the root to `id`, indexed by time on a valid tree.
    pub fn path(&self, id: NodeId) -> Vec<NodeId> {
        let mut p = vec![id];
        let mut v = id;
        while let Some(u) = self.nodes[v.0].parent {
            p.push(u);
            v = u;
        }
        p.reverse();
        p
    }

    /// Probability of reaching `id` from the root.
    pub fn prob(&self, id: NodeId) -> Rational {
        let mut p = Rational::one();
        let mut v = Some(id);
        while let Some(u) = v {
            p *= &self.nodes[u.0].branch_prob;
            v = self.nodes[u.0].parent;
        }
        p
    }

    pub fn leaf_probs(&self) -> Vec<Rational> {
        self.leaves.iter().map(|&l| self.prob(l)).collect()
    }

    /// Atoms of the time-`t` information together with their states.
    pub fn atoms_at(&self, t: usize) -> Result<Vec<Atom>, TreeError> {
        if t > self.horizon {
            return Err(TreeError::TimeOutOfRange { t, horizon: self.horizon });
        }
        Ok(self
            .nodes_at(t)
            .iter()
            .map(|&node| Atom {
                node,
                leaves: self.leaf_sets[node.0].iter().map(|&k| self.leaves[k]).collect(),
            })
            .collect())
    }

    pub fn violations(&self) -> Vec<TreeViolation> {
        let mut out = Vec::new();
        if self.roots.len() != 1 {
            out.push(TreeViolation::RootCount(self.roots.len()));
        }
        for &r in &self.roots {
            if self.nodes[r.0].time != 0 {
                out.push(TreeViolation::RootTime {
                    node: self.nodes[r.0].label.clone(),
                    time: self.nodes[r.0].time,
                });
            }
        }
        for (id, n) in self.nodes() {
            if let Some(p) = n.parent {
                let pt = self.nodes[p.0].time;
                if n.time != pt + 1 {
                    out.push(TreeViolation::ChildTime {
                        node: n.label.clone(),
                        time: n.time,
                        parent_time: pt,
                    });
                }
            }
            if n.children.is_empty() && n.time != self.horizon {
                out.push(TreeViolation::LeafNotAtHorizon {
                    node: n.label.clone(),
                    time: n.time,
                    horizon: self.horizon,
                });
            }
            if !n.branch_prob.is_positive() {
                out.push(TreeViolation::NonPositiveProbability { node: n.label.clone() });
            }
            if !n.children.is_empty() {
                let sum: Rational = n.children.iter().map(|c| &self.nodes[c.0].branch_prob).sum();
                if !sum.is_one() {
                    out.push(TreeViolation::SiblingSum {
                        parent: Some(self.label(id).to_string()),
                        sum,
                    });
                }
            }
        }
        let root_sum: Rational = self.roots.iter().map(|r| &self.nodes[r.0].branch_prob).sum();
        if !self.roots.is_empty() && !root_sum.is_one() {
            out.push(TreeViolation::SiblingSum { parent: None, sum: root_sum });
        }
        if self.nodes.is_empty() {
            out.push(TreeViolation::RootCount(0));
        }
        out
    }

    /// Sum of all leaf probabilities; exactly one on a valid tree.
    pub fn total_leaf_prob(&self) -> Rational {
        self.leaf_probs().iter().fold(Rational::zero(), |a, p| a + p)
    }
}

/// Incremental construction with generated path labels (`r`, `r.0`, `r.0.1`, ...).
#[derive(Debug, Default)]
pub struct TreeBuilder {
    nodes: Vec<Node>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn root(&mut self) -> NodeId {
        self.nodes.push(Node {
            label: "r".to_string(),
            time: 0,
            parent: None,
            children: Vec::new(),
            branch_prob: Rational::one(),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn child(&mut self, parent: NodeId, prob: Rational) -> NodeId {
        let k = self.nodes[parent.0].children.len();
        let label = format!("{}.{}", self.nodes[parent.0].label, k);
        self.child_labeled(parent, prob, label)
    }

    pub fn child_labeled(&mut self, parent: NodeId, prob: Rational, label: impl Into<String>) -> NodeId {
        let id = NodeId(self.nodes.len());
        let time = self.nodes[parent.0].time + 1;
        self.nodes.push(Node {
            label: label.into(),
            time,
            parent: Some(parent),
            children: Vec::new(),
            branch_prob: prob,
        });
        self.nodes[parent.0].children.push(id);
        id
    }

    /// Finishes the tree; the horizon is the deepest node time.
    pub fn build(self) -> ScenarioTree {
        let horizon = self.nodes.iter().map(|n| n.time).max().unwrap_or(0);
        ScenarioTree::assemble(horizon, self.nodes).expect("builder produces a forest")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    fn binary(depth: usize) -> ScenarioTree {
        let mut b = TreeBuilder::new();
        let mut frontier = vec![b.root()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for v in frontier {
                next.push(b.child(v, rat(1, 3)));
                next.push(b.child(v, rat(2, 3)));
            }
            frontier = next;
        }
        b.build()
    }

    #[test]
    fn atoms_at_extremes() {
        let tree = binary(3);
        let root = tree.atoms_at(0).unwrap();
        assert_eq!(root.len(), 1);
        assert_eq!(root[0].leaves.len(), 8);
        let last = tree.atoms_at(3).unwrap();
        assert_eq!(last.len(), 8);
        assert!(last.iter().all(|a| a.leaves == vec![a.node]));
        let one = tree.atoms_at(1).unwrap();
        assert_eq!(one.len(), 2);
        assert_eq!(one[0].leaves.len(), one[1].leaves.len());
        assert!(matches!(tree.atoms_at(4), Err(TreeError::TimeOutOfRange { .. })));
    }

    #[test]
    fn leaf_probabilities_sum_to_one() {
        let tree = binary(4);
        assert!(tree.total_leaf_prob().is_one());
        assert!(tree.violations().is_empty());
    }

    #[test]
    fn construction_rejects_unrepresentable_input() {
        let spec = |l: &str, t, p: Option<&str>| NodeSpec {
            label: l.into(),
            time: t,
            parent: p.map(Into::into),
            branch_prob: rat(1, 1),
        };
        assert!(matches!(
            ScenarioTree::new(1, vec![spec("a", 0, None), spec("a", 1, Some("a"))]),
            Err(TreeError::DuplicateLabel(_))
        ));
        assert!(matches!(
            ScenarioTree::new(1, vec![spec("a", 0, None), spec("b", 1, Some("z"))]),
            Err(TreeError::UnknownParent { .. })
        ));
        assert!(matches!(
            ScenarioTree::new(1, vec![spec("a", 0, Some("b")), spec("b", 1, Some("a"))]),
            Err(TreeError::Cycle(_))
        ));
    }

    #[test]
    fn violations_are_all_reported() {
        let spec = |l: &str, t, p: Option<&str>, q| NodeSpec {
            label: l.into(),
            time: t,
            parent: p.map(Into::into),
            branch_prob: q,
        };
        let tree = ScenarioTree::new(
            2,
            vec![
                spec("a", 0, None, rat(1, 1)),
                spec("b", 1, Some("a"), rat(1, 2)),
                spec("c", 2, Some("a"), rat(0, 1)),
            ],
        )
        .unwrap();
        let v = tree.violations();
        assert!(v.iter().any(|x| matches!(x, TreeViolation::ChildTime { .. })));
        assert!(v.iter().any(|x| matches!(x, TreeViolation::LeafNotAtHorizon { .. })));
        assert!(v.iter().any(|x| matches!(x, TreeViolation::NonPositiveProbability { .. })));
        assert!(v.iter().any(|x| matches!(x, TreeViolation::SiblingSum { .. })));
    }
}
