//! Search forest: tree nodes with parent/child links, a uniform hash grid
//! for proximity queries, pruning into fragments and component labelling.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dist, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Only meaningful for ids handed out by a forest; used by tests and tracing.
    pub fn from_raw(raw: u32) -> Self {
        NodeId(raw)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ForestError {
    #[error("unknown or pruned node {0}")]
    UnknownNode(NodeId),
    #[error("forest is empty")]
    Empty,
    #[error("attaching {child} under {new_parent} would create a cycle")]
    Cycle { child: NodeId, new_parent: NodeId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub position: Point2,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub tree_label: u32,
}

/// Point `step` along the ray from `from` to `to`, or `to` itself when closer.
pub fn steer(from: Point2, to: Point2, step: f64) -> Point2 {
    debug_assert!(step > 0.0);
    let d = dist(from, to);
    if d <= step {
        to
    } else {
        from.lerp(to, step / d)
    }
}

type CellKey = (i32, i32);

#[derive(Debug, Clone)]
struct HashGrid {
    cell: f64,
    buckets: FxHashMap<CellKey, Vec<NodeId>>,
    // Occupied extent; only ever grows, which keeps ring searches bounded.
    lo: CellKey,
    hi: CellKey,
}

impl HashGrid {
    fn new(cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        Self { cell, buckets: FxHashMap::default(), lo: (i32::MAX, i32::MAX), hi: (i32::MIN, i32::MIN) }
    }

    fn key(&self, p: Point2) -> CellKey {
        ((p.x / self.cell).floor() as i32, (p.y / self.cell).floor() as i32)
    }

    fn insert(&mut self, id: NodeId, p: Point2) {
        let k = self.key(p);
        self.lo = (self.lo.0.min(k.0), self.lo.1.min(k.1));
        self.hi = (self.hi.0.max(k.0), self.hi.1.max(k.1));
        self.buckets.entry(k).or_default().push(id);
    }

    fn remove(&mut self, id: NodeId, p: Point2) {
        let k = self.key(p);
        if let Some(bucket) = self.buckets.get_mut(&k) {
            if let Some(i) = bucket.iter().position(|&x| x == id) {
                bucket.swap_remove(i);
            }
            if bucket.is_empty() {
                self.buckets.remove(&k);
            }
        }
    }

    fn clear(&mut self) {
        self.buckets.clear();
    }
}

#[derive(Debug, Clone)]
pub struct SearchForest {
    nodes: Vec<Option<Node>>,
    roots: BTreeSet<NodeId>,
    grid: HashGrid,
    live: usize,
    next_label: u32,
}

impl SearchForest {
    /// `cell` is the hash-grid bucket size; the steering step is a good choice.
    pub fn new(cell: f64) -> Self {
        Self { nodes: Vec::new(), roots: BTreeSet::new(), grid: HashGrid::new(cell), live: 0, next_label: 0 }
    }

    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    /// Id the next insert will receive. Ids allocated earlier are all smaller.
    pub fn watermark(&self) -> NodeId {
        NodeId(self.nodes.len() as u32)
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.index()).and_then(Option::as_ref)
    }

    fn node(&self, id: NodeId) -> Result<&Node, ForestError> {
        self.get(id).ok_or(ForestError::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id.index()].as_mut().expect("live node")
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.get(id).is_some()
    }

    pub fn position(&self, id: NodeId) -> Point2 {
        self.get(id).expect("live node").position
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.get(id).and_then(|n| n.parent)
    }

    pub fn label(&self, id: NodeId) -> u32 {
        self.get(id).expect("live node").tree_label
    }

    pub fn roots(&self) -> &BTreeSet<NodeId> {
        &self.roots
    }

    /// Live nodes in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Node)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.as_ref().map(|n| (NodeId(i as u32), n)))
    }

    /// Upper bound on the labels in use: every label is below this.
    pub fn label_bound(&self) -> u32 {
        self.next_label
    }

    pub fn insert(&mut self, p: Point2, parent: Option<NodeId>) -> Result<NodeId, ForestError> {
        let label = match parent {
            Some(pid) => self.node(pid)?.tree_label,
            None => {
                self.next_label += 1;
                self.next_label - 1
            }
        };
        let id = NodeId(u32::try_from(self.nodes.len()).expect("node id overflow"));
        self.nodes.push(Some(Node { position: p, parent, children: Vec::new(), tree_label: label }));
        match parent {
            Some(pid) => self.node_mut(pid).children.push(id),
            None => {
                self.roots.insert(id);
            }
        }
        self.grid.insert(id, p);
        self.live += 1;
        Ok(id)
    }

    /// Drop every node while keeping id allocation monotone.
    pub fn clear(&mut self) {
        for slot in self.nodes.iter_mut() {
            *slot = None;
        }
        self.roots.clear();
        self.grid.clear();
        self.live = 0;
        self.next_label = 0;
    }

    pub fn nearest(&self, p: Point2) -> Result<NodeId, ForestError> {
        self.nearest_where(p, |_, _| true).ok_or(ForestError::Empty)
    }

    /// Nearest live node accepted by `keep`; ties go to the smaller id.
    pub fn nearest_where<F>(&self, p: Point2, mut keep: F) -> Option<NodeId>
    where
        F: FnMut(NodeId, &Node) -> bool,
    {
        if self.live == 0 {
            return None;
        }
        let (cx, cy) = self.grid.key(p);
        let (lo, hi) = (self.grid.lo, self.grid.hi);
        let max_ring = [cx - lo.0, hi.0 - cx, cy - lo.1, hi.1 - cy].into_iter().max().unwrap_or(0).max(0);
        let mut best: Option<(f64, NodeId)> = None;
        let mut consider = |id: NodeId, best: &mut Option<(f64, NodeId)>| {
            let n = self.get(id).expect("indexed node is live");
            if !keep(id, n) {
                return;
            }
            let d = dist(p, n.position);
            let better = match best {
                None => true,
                Some((bd, bid)) => d < *bd || (d == *bd && id < *bid),
            };
            if better {
                *best = Some((d, id));
            }
        };
        for ring in 0..=max_ring {
            for key in ring_cells(cx, cy, ring) {
                if let Some(bucket) = self.grid.buckets.get(&key) {
                    for &id in bucket {
                        consider(id, &mut best);
                    }
                }
            }
            if let Some((bd, _)) = best {
                if bd < ring as f64 * self.grid.cell {
                    break;
                }
            }
        }
        best.map(|(_, id)| id)
    }

    /// All live nodes within `radius` (closed disc) of `p`, in ascending id order.
    pub fn near(&self, p: Point2, radius: f64) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.for_each_near(p, radius, |id, _| out.push(id));
        out.sort_unstable();
        out
    }

    /// Visit every live node within `radius` of `p` with its distance, in no
    /// particular order.
    pub fn for_each_near<F: FnMut(NodeId, f64)>(&self, p: Point2, radius: f64, mut f: F) {
        if self.live == 0 || radius < 0.0 {
            return;
        }
        let c = self.grid.cell;
        let (x0, y0) = ((p.x - radius) / c, (p.y - radius) / c);
        let (x1, y1) = ((p.x + radius) / c, (p.y + radius) / c);
        let kx0 = (x0.floor() as i32).max(self.grid.lo.0);
        let ky0 = (y0.floor() as i32).max(self.grid.lo.1);
        let kx1 = (x1.floor() as i32).min(self.grid.hi.0);
        let ky1 = (y1.floor() as i32).min(self.grid.hi.1);
        for ky in ky0..=ky1 {
            for kx in kx0..=kx1 {
                if let Some(bucket) = self.grid.buckets.get(&(kx, ky)) {
                    for &id in bucket {
                        let d = dist(p, self.position(id));
                        if d <= radius {
                            f(id, d);
                        }
                    }
                }
            }
        }
    }

    /// Nodes within `radius` of `p` with their distances, nearest first
    /// (ties by id).
    pub fn near_by_distance(&self, p: Point2, radius: f64) -> Vec<(f64, NodeId)> {
        let mut out = Vec::new();
        self.for_each_near(p, radius, |id, d| out.push((d, id)));
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    /// Remove `victims`; their surviving children become fragment roots.
    pub fn prune(&mut self, victims: &[NodeId]) -> usize {
        self.prune_detached(victims).0
    }

    /// Like [`prune`](Self::prune), also returning the fragment roots it
    /// created, ascending.
    pub fn prune_detached(&mut self, victims: &[NodeId]) -> (usize, Vec<NodeId>) {
        let doomed: HashSet<NodeId> = victims.iter().copied().filter(|&v| self.contains(v)).collect();
        let mut ordered: Vec<NodeId> = doomed.iter().copied().collect();
        ordered.sort_unstable();
        let mut detached = Vec::new();
        for &v in &ordered {
            let node = self.nodes[v.index()].take().expect("live victim");
            self.grid.remove(v, node.position);
            self.roots.remove(&v);
            self.live -= 1;
            if let Some(pid) = node.parent {
                if !doomed.contains(&pid) {
                    self.node_mut(pid).children.retain(|&c| c != v);
                }
            }
            for c in node.children {
                if !doomed.contains(&c) {
                    self.node_mut(c).parent = None;
                    self.roots.insert(c);
                    detached.push(c);
                }
            }
        }
        detached.sort_unstable();
        (ordered.len(), detached)
    }

    /// Give the tree under `root` a fresh label, calling `visit` on every
    /// node of it. Labels stay unique per tree but are no longer dense until
    /// the next full relabel.
    pub fn relabel_tree<F: FnMut(NodeId, Point2)>(&mut self, root: NodeId, mut visit: F) -> u32 {
        let label = self.next_label;
        self.next_label += 1;
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            let n = self.nodes[id.index()].as_mut().expect("live");
            n.tree_label = label;
            visit(id, n.position);
            stack.extend_from_slice(&n.children);
        }
        label
    }

    /// Label connected components 0..k-1 in ascending order of their root ids.
    pub fn floodfill_relabel(&mut self) -> usize {
        let mut label = 0;
        let mut stack = Vec::new();
        for &root in &self.roots {
            stack.push(root);
            while let Some(id) = stack.pop() {
                let n = self.nodes[id.index()].as_mut().expect("live");
                n.tree_label = label;
                stack.extend_from_slice(&n.children);
            }
            label += 1;
        }
        self.next_label = label;
        label as usize
    }

    /// Node ids from `leaf` up to its root, inclusive.
    pub fn chain_to_root(&self, leaf: NodeId) -> Result<Vec<NodeId>, ForestError> {
        let mut out = vec![leaf];
        let mut cur = self.node(leaf)?;
        while let Some(pid) = cur.parent {
            out.push(pid);
            cur = self.node(pid)?;
        }
        Ok(out)
    }

    /// Positions from `leaf` up through its ancestors to its root.
    pub fn extract_path(&self, leaf: NodeId) -> Result<Vec<Point2>, ForestError> {
        Ok(self.chain_to_root(leaf)?.into_iter().map(|id| self.position(id)).collect())
    }

    /// Length of the parent chain from `id` to its root.
    pub fn cost_to_root(&self, id: NodeId) -> f64 {
        let mut total = 0.0;
        let mut cur = id;
        while let Some(pid) = self.parent(cur) {
            total += dist(self.position(cur), self.position(pid));
            cur = pid;
        }
        total
    }

    pub fn root_of(&self, id: NodeId) -> NodeId {
        let mut cur = id;
        while let Some(pid) = self.parent(cur) {
            cur = pid;
        }
        cur
    }

    /// `id` and all of its descendants.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            if let Some(n) = self.get(cur) {
                out.push(cur);
                stack.extend(n.children.iter().copied());
            }
        }
        out
    }

    /// Detach `child` from its parent (if any) and hang it under `new_parent`.
    /// The moved subtree takes the new parent's label.
    pub fn reparent(&mut self, child: NodeId, new_parent: NodeId) -> Result<(), ForestError> {
        self.node(child)?;
        self.node(new_parent)?;
        let mut cur = Some(new_parent);
        while let Some(c) = cur {
            if c == child {
                return Err(ForestError::Cycle { child, new_parent });
            }
            cur = self.parent(c);
        }
        match self.parent(child) {
            Some(old) => self.node_mut(old).children.retain(|&c| c != child),
            None => {
                self.roots.remove(&child);
            }
        }
        self.node_mut(child).parent = Some(new_parent);
        self.node_mut(new_parent).children.push(child);
        let label = self.label(new_parent);
        for id in self.subtree(child) {
            self.node_mut(id).tree_label = label;
        }
        Ok(())
    }

    /// Make `id` the root of its tree by reversing the links on its root path.
    pub fn reroot(&mut self, id: NodeId) -> Result<(), ForestError> {
        let chain = self.chain_to_root(id)?;
        if chain.len() == 1 {
            return Ok(());
        }
        let old_root = *chain.last().expect("non-empty chain");
        self.roots.remove(&old_root);
        for pair in chain.windows(2) {
            let (child, parent) = (pair[0], pair[1]);
            self.node_mut(parent).children.retain(|&c| c != child);
            self.node_mut(parent).parent = Some(child);
            self.node_mut(child).children.push(parent);
        }
        self.node_mut(id).parent = None;
        self.roots.insert(id);
        Ok(())
    }

    /// Full structural self-check, for tests.
    pub fn check_consistency(&self) -> Result<(), String> {
        let mut parentless = BTreeSet::new();
        for (id, n) in self.iter() {
            match n.parent {
                None => {
                    parentless.insert(id);
                }
                Some(p) => {
                    let pn = self.get(p).ok_or(format!("{id} has dead parent {p}"))?;
                    if !pn.children.contains(&id) {
                        return Err(format!("{p} does not list child {id}"));
                    }
                }
            }
            for &c in &n.children {
                let cn = self.get(c).ok_or(format!("{id} has dead child {c}"))?;
                if cn.parent != Some(id) {
                    return Err(format!("child {c} of {id} points elsewhere"));
                }
            }
            if self.chain_to_root(id).map_err(|e| e.to_string())?.len() > self.live {
                return Err(format!("cycle through {id}"));
            }
        }
        if parentless != self.roots {
            return Err("root set mismatch".into());
        }
        let indexed: usize = self.grid.buckets.values().map(Vec::len).sum();
        if indexed != self.live {
            return Err(format!("grid holds {indexed} ids, {} live", self.live));
        }
        Ok(())
    }
}

fn ring_cells(cx: i32, cy: i32, ring: i32) -> impl Iterator<Item = CellKey> {
    let r = ring;
    let top_bottom = (-r..=r).flat_map(move |dx| {
        let row = [(cx + dx, cy - r), (cx + dx, cy + r)];
        let n = if r == 0 { 1 } else { 2 };
        row.into_iter().take(n)
    });
    let sides = (-r + 1..r).flat_map(move |dy| [(cx - r, cy + dy), (cx + r, cy + dy)]);
    top_bottom.chain(sides)
}
