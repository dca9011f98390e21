use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::KvState;
use crate::{Error, Result, TokenId};

pub type NodeId = usize;

const ROOT: NodeId = 0;

/// Upper bound on the number of tokens held by a [`PrefixTrie`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Budget {
    pub max_cached_tokens: usize,
}

impl Budget {
    pub const fn tokens(max_cached_tokens: usize) -> Self {
        Self { max_cached_tokens }
    }

    pub const fn unlimited() -> Self {
        Self {
            max_cached_tokens: usize::MAX,
        }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Self::unlimited()
    }
}

#[derive(Debug, Clone)]
struct Node {
    span: Vec<TokenId>,
    /// State for this node's span only; the state of the whole prefix is the
    /// concatenation along the root path.
    kv: Option<KvState>,
    /// Next-token logits after the last span token, when known.
    logits: Option<Vec<f32>>,
    children: BTreeMap<TokenId, NodeId>,
    parent: NodeId,
    ref_count: usize,
    last_use: u64,
}

impl Node {
    fn root() -> Self {
        Self {
            span: Vec::new(),
            kv: None,
            logits: None,
            children: BTreeMap::new(),
            parent: ROOT,
            ref_count: 0,
            last_use: 0,
        }
    }

    fn state(&self) -> &KvState {
        self.kv.as_ref().expect("non-root node without state")
    }
}

/// Read-only view of one trie node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInfo {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub span: Vec<TokenId>,
    /// Length of the root-to-node prefix.
    pub prefix_len: usize,
    pub children: Vec<NodeId>,
    pub ref_count: usize,
    pub last_use: u64,
    /// Estimated storage for this node's span, in bytes.
    pub bytes: usize,
    pub has_logits: bool,
}

/// Result of a longest-prefix lookup.
#[derive(Debug, Clone, Default)]
pub struct PrefixMatch {
    pub matched_len: usize,
    /// State covering `[0, matched_len)`; `None` when nothing matched.
    pub kv: Option<KvState>,
    /// Logits following the matched prefix, available when the match ends
    /// exactly where an earlier insertion ended.
    pub logits: Option<Vec<f32>>,
}

/// Path-compressed radix trie from token prefixes to key/value state.
#[derive(Debug, Clone)]
pub struct PrefixTrie {
    nodes: Vec<Option<Node>>,
    free: Vec<NodeId>,
    clock: u64,
    cached_tokens: usize,
}

impl Default for PrefixTrie {
    fn default() -> Self {
        Self::new()
    }
}

struct Walk {
    /// Visited nodes with the number of their span tokens that matched.
    path: Vec<(NodeId, usize)>,
    matched: usize,
}

fn common_prefix(a: &[TokenId], b: &[TokenId]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

impl PrefixTrie {
    pub fn new() -> Self {
        Self {
            nodes: alloc::vec![Some(Node::root())],
            free: Vec::new(),
            clock: 0,
            cached_tokens: 0,
        }
    }

    /// Total tokens held across all spans.
    pub fn cached_tokens(&self) -> usize {
        self.cached_tokens
    }

    /// Number of nodes, excluding the root.
    pub fn node_count(&self) -> usize {
        self.nodes.iter().flatten().count() - 1
    }

    fn node(&self, id: NodeId) -> &Node {
        self.nodes[id].as_ref().expect("dangling node id")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id].as_mut().expect("dangling node id")
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        match self.free.pop() {
            Some(id) => {
                self.nodes[id] = Some(node);
                id
            }
            None => {
                self.nodes.push(Some(node));
                self.nodes.len() - 1
            }
        }
    }

    fn walk(&self, seq: &[TokenId]) -> Walk {
        let mut path = Vec::new();
        let mut node = ROOT;
        let mut pos = 0;
        while pos < seq.len() {
            let Some(&child) = self.node(node).children.get(&seq[pos]) else {
                break;
            };
            let span = &self.node(child).span;
            let common = common_prefix(span, &seq[pos..]);
            path.push((child, common));
            pos += common;
            if common < span.len() {
                break;
            }
            node = child;
        }
        Walk { path, matched: pos }
    }

    fn assemble(&self, walk: &Walk) -> PrefixMatch {
        let mut kv: Option<KvState> = None;
        for &(id, used) in &walk.path {
            let node = self.node(id);
            let part = if used == node.span.len() {
                node.state().clone()
            } else {
                node.state().slice(0..used)
            };
            match kv.as_mut() {
                None => kv = Some(part),
                Some(acc) => acc.append(&part).expect("trie holds states of one shape"),
            }
        }
        let logits = walk.path.last().and_then(|&(id, used)| {
            let node = self.node(id);
            (used == node.span.len())
                .then(|| node.logits.clone())
                .flatten()
        });
        PrefixMatch {
            matched_len: walk.matched,
            kv,
            logits,
        }
    }

    fn touch(&mut self, walk: &Walk) {
        self.clock += 1;
        let now = self.clock;
        for &(id, _) in &walk.path {
            self.node_mut(id).last_use = now;
        }
    }

    /// Longest cached prefix of `seq`, which may end part-way through an
    /// edge. Marks the traversed nodes as recently used.
    pub fn lookup_longest_prefix(&mut self, seq: &[TokenId]) -> PrefixMatch {
        let walk = self.walk(seq);
        self.touch(&walk);
        self.assemble(&walk)
    }

    /// Same as [`Self::lookup_longest_prefix`] without touching LRU state.
    pub fn peek_longest_prefix(&self, seq: &[TokenId]) -> PrefixMatch {
        self.assemble(&self.walk(seq))
    }

    /// Caches `seq` with its state, splitting edges where needed, then evicts
    /// least-recently-used leaves until the budget holds. Returns the number
    /// of evicted nodes.
    pub fn insert(
        &mut self,
        seq: &[TokenId],
        kv: &KvState,
        logits: Option<Vec<f32>>,
        budget: Budget,
    ) -> Result<usize> {
        if kv.len() != seq.len() {
            return Err(Error::Contract(format!(
                "state covers {} positions but the sequence has {} tokens",
                kv.len(),
                seq.len()
            )));
        }
        if seq.is_empty() {
            return Ok(0);
        }
        let walk = self.walk(seq);
        let mut parent = walk.path.last().map_or(ROOT, |&(id, _)| id);
        if let Some(&(id, used)) = walk.path.last() {
            if used < self.node(id).span.len() {
                parent = self.split(id, used);
            }
        }
        let end = if walk.matched < seq.len() {
            let leaf = Node {
                span: seq[walk.matched..].to_vec(),
                kv: Some(kv.slice(walk.matched..seq.len())),
                logits,
                children: BTreeMap::new(),
                parent,
                ref_count: 0,
                last_use: 0,
            };
            self.cached_tokens += seq.len() - walk.matched;
            let id = self.alloc(leaf);
            self.node_mut(parent).children.insert(seq[walk.matched], id);
            id
        } else {
            let node = self.node_mut(parent);
            if node.logits.is_none() {
                node.logits = logits;
            }
            parent
        };
        self.node_mut(end).ref_count += 1;
        // re-walk so the new leaf and any split node are stamped
        let walk = self.walk(seq);
        self.touch(&walk);
        Ok(self.evict(budget))
    }

    /// Splits node `id` after `at` span tokens; returns the new upper node.
    fn split(&mut self, id: NodeId, at: usize) -> NodeId {
        let (upper, parent) = {
            let node = self.node_mut(id);
            let state = node.kv.take().expect("non-root node without state");
            let upper = Node {
                span: node.span[..at].to_vec(),
                kv: Some(state.slice(0..at)),
                logits: None,
                children: BTreeMap::new(),
                parent: node.parent,
                ref_count: 0,
                last_use: node.last_use,
            };
            node.kv = Some(state.slice(at..state.len()));
            node.span.drain(..at);
            (upper, node.parent)
        };
        let first = upper.span[0];
        let rest_first = self.node(id).span[0];
        let upper_id = self.alloc(upper);
        self.node_mut(upper_id).children.insert(rest_first, id);
        self.node_mut(id).parent = upper_id;
        self.node_mut(parent).children.insert(first, upper_id);
        upper_id
    }

    /// Evicts least-recently-used leaves until at most `budget` tokens remain.
    pub fn evict(&mut self, budget: Budget) -> usize {
        let mut evicted = 0;
        while self.cached_tokens > budget.max_cached_tokens {
            let victim = self
                .nodes
                .iter()
                .enumerate()
                .skip(1)
                .filter_map(|(id, n)| n.as_ref().map(|n| (id, n)))
                .filter(|(_, n)| n.children.is_empty())
                .min_by_key(|(id, n)| (n.last_use, *id))
                .map(|(id, _)| id);
            let Some(victim) = victim else { break };
            let node = self.nodes[victim].take().expect("victim exists");
            self.cached_tokens -= node.span.len();
            self.node_mut(node.parent).children.remove(&node.span[0]);
            self.free.push(victim);
            evicted += 1;
        }
        evicted
    }

    /// Snapshot of every non-root node, in id order.
    pub fn nodes(&self) -> Vec<NodeInfo> {
        let mut out = Vec::new();
        for (id, node) in self.nodes.iter().enumerate().skip(1) {
            let Some(node) = node else { continue };
            let mut prefix_len = node.span.len();
            let mut p = node.parent;
            while p != ROOT {
                prefix_len += self.node(p).span.len();
                p = self.node(p).parent;
            }
            out.push(NodeInfo {
                id,
                parent: (node.parent != ROOT).then_some(node.parent),
                span: node.span.clone(),
                prefix_len,
                children: node.children.values().copied().collect(),
                ref_count: node.ref_count,
                last_use: node.last_use,
                bytes: node.state().float_count() * core::mem::size_of::<f32>(),
                has_logits: node.logits.is_some(),
            });
        }
        out
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut total = 0;
        for (id, node) in self.nodes.iter().enumerate() {
            let Some(node) = node else { continue };
            for (&first, &child) in &node.children {
                let c = self.nodes[child]
                    .as_ref()
                    .ok_or_else(|| format!("node {id} points at freed node {child}"))?;
                if c.span.first() != Some(&first) {
                    return Err(format!(
                        "edge key {first} does not match child {child} span"
                    ));
                }
                if c.parent != id {
                    return Err(format!("child {child} has parent {} not {id}", c.parent));
                }
            }
            if id == ROOT {
                continue;
            }
            if node.span.is_empty() {
                return Err(format!("node {id} has an empty span"));
            }
            if node.state().len() != node.span.len() {
                return Err(format!("node {id} state length differs from its span"));
            }
            if !self.node(node.parent).children.values().any(|&c| c == id) {
                return Err(format!("node {id} is not linked from its parent"));
            }
            total += node.span.len();
        }
        if total != self.cached_tokens {
            return Err(format!(
                "token count {} != tracked {}",
                total, self.cached_tokens
            ));
        }
        Ok(())
    }
}
