//! Editable view of a testcase where references are (instance, slot) links
//! instead of flat indices, so instances can be inserted and removed without
//! renumbering by hand.

use crate::spec::{BlockId, Specification, TypeId};
use crate::testcase::{BlockInstance, ParamRecord, Testcase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Link {
    pub node: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub block: BlockId,
    /// `None` marks an input whose source was removed.
    pub inputs: Vec<Option<Link>>,
    pub params: ParamRecord,
    /// Set on instances added by the current mutation.
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Graph {
    pub nodes: Vec<Node>,
}

impl Graph {
    /// Builds a graph from a testcase whose references all point backwards.
    /// Forward or out-of-range references become dangling inputs.
    pub fn from_testcase(spec: &Specification, t: &Testcase) -> Graph {
        let offsets = t.output_offsets(spec);
        let mut nodes = Vec::with_capacity(t.instances.len());
        for (i, inst) in t.instances.iter().enumerate() {
            let inputs = inst
                .refs
                .iter()
                .map(|&k| {
                    if k >= offsets[i] {
                        return None;
                    }
                    // last p with offsets[p] <= k
                    let p = offsets[..i].partition_point(|&o| o <= k) - 1;
                    Some(Link {
                        node: p,
                        slot: (k - offsets[p]) as usize,
                    })
                })
                .collect();
            nodes.push(Node {
                block: inst.block,
                inputs,
                params: inst.params.clone(),
                fresh: false,
            });
        }
        Graph { nodes }
    }

    /// Flattens back to a testcase. Dangling inputs are encoded as an index
    /// past the end, which validation reports as a backward-reference error.
    pub fn to_testcase(&self, spec: &Specification) -> Testcase {
        let mut offsets = Vec::with_capacity(self.nodes.len());
        let mut n = 0u32;
        for node in &self.nodes {
            offsets.push(n);
            n += spec.block(node.block).outputs.len() as u32;
        }
        let instances = self
            .nodes
            .iter()
            .map(|node| BlockInstance {
                block: node.block,
                refs: node
                    .inputs
                    .iter()
                    .map(|l| match l {
                        Some(l) => offsets[l.node] + l.slot as u32,
                        None => u32::MAX,
                    })
                    .collect(),
                params: node.params.clone(),
            })
            .collect();
        Testcase::new(instances)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn output_type(&self, spec: &Specification, l: Link) -> TypeId {
        spec.block(self.nodes[l.node].block).outputs[l.slot].ty
    }

    /// Inserts `node` at `pos`, shifting every link at or after `pos`.
    pub fn insert(&mut self, pos: usize, node: Node) {
        for n in &mut self.nodes {
            for l in n.inputs.iter_mut().flatten() {
                if l.node >= pos {
                    l.node += 1;
                }
            }
        }
        self.nodes.insert(pos, node);
    }

    /// Removes the node at `pos`. Inputs that consumed its outputs become
    /// dangling; later links shift down.
    pub fn remove(&mut self, pos: usize) -> Node {
        let removed = self.nodes.remove(pos);
        for n in &mut self.nodes {
            for l in n.inputs.iter_mut() {
                match l {
                    Some(link) if link.node == pos => *l = None,
                    Some(link) if link.node > pos => link.node -= 1,
                    _ => {}
                }
            }
        }
        removed
    }

    /// Keeps nodes `0..len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        for n in &mut self.nodes {
            for l in n.inputs.iter_mut() {
                if matches!(l, Some(link) if link.node >= len) {
                    *l = None;
                }
            }
        }
    }

    /// The (node, input position) consuming `l`, if any.
    pub fn consumer_of(&self, l: Link) -> Option<(usize, usize)> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            n.inputs
                .iter()
                .position(|x| *x == Some(l))
                .map(|j| (i, j))
        })
    }

    /// Outputs of nodes before `pos` that nothing consumes, excluding
    /// `claimed`.
    pub fn unconsumed_before(
        &self,
        spec: &Specification,
        pos: usize,
        claimed: &[Link],
    ) -> Vec<(Link, TypeId)> {
        let mut used: Vec<Link> = self
            .nodes
            .iter()
            .flat_map(|n| n.inputs.iter().flatten().copied())
            .collect();
        used.extend_from_slice(claimed);
        used.sort_unstable();
        let mut out = Vec::new();
        for (i, n) in self.nodes.iter().enumerate().take(pos) {
            for (q, p) in spec.block(n.block).outputs.iter().enumerate() {
                let l = Link { node: i, slot: q };
                if used.binary_search(&l).is_err() {
                    out.push((l, p.ty));
                }
            }
        }
        out
    }

    /// Every node the node at `target` transitively depends on, plus itself.
    pub fn dependency_closure(&self, target: usize) -> Vec<bool> {
        let mut keep = vec![false; self.nodes.len()];
        let mut stack = vec![target];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut keep[i], true) {
                continue;
            }
            stack.extend(self.nodes[i].inputs.iter().flatten().map(|l| l.node));
        }
        keep
    }
}
