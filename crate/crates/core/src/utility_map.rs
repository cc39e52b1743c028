//! Multi-resolution utility map.
//!
//! Level 0 is a square grid of `min_cell` tiles (padded up to a power of two,
//! at least 4x4). Each coarser level halves the side, ending at a 2x2 top
//! level. Level-0 cells index forest nodes together with their tree labels;
//! a cell is *valid* when its 3x3 neighbourhood holds nodes of at least two
//! different trees, and its utility is the reciprocal of the detour
//! `robot -> cell centre -> goal`. Coarse cells carry the maximum utility of
//! their four children, which drives the bottom-up sampling-cell search.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{NodeId, SearchForest};
use crate::geometry::{dist, Point2, Rect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("minimum cell size must be positive, got {0}")]
    NonPositiveCell(f64),
    #[error("workspace must have positive extent")]
    EmptyWorkspace,
    #[error("point ({}, {}) lies outside the workspace", .0.x, .0.y)]
    OutOfBounds(Point2),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub level: usize,
    pub ix: usize,
    pub iy: usize,
}

impl CellIndex {
    pub fn new(level: usize, ix: usize, iy: usize) -> Self {
        Self { level, ix, iy }
    }

    /// The enclosing cell `levels` levels up.
    pub fn ancestor(self, levels: usize) -> Self {
        Self { level: self.level + levels, ix: self.ix >> levels, iy: self.iy >> levels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CellState {
    /// `I`: sampling here cannot join two trees.
    Invalid,
    /// `V`: the neighbourhood touches two or more trees.
    Valid,
}

#[derive(Debug, Clone)]
pub struct Level0Cell {
    entries: Vec<(NodeId, u32)>,
    pub state: CellState,
    pub utility: f64,
    padding: bool,
}

impl Level0Cell {
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    /// Distinct labels of the nodes indexed here, ascending.
    pub fn tree_labels(&self) -> Vec<u32> {
        let mut labels: Vec<u32> = self.entries.iter().map(|e| e.1).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn is_padding(&self) -> bool {
        self.padding
    }

    /// The common label of the entries, UNSEEN when empty, MIXED when they differ.
    fn signature(&self) -> u32 {
        let mut it = self.entries.iter().map(|e| e.1);
        match it.next() {
            None => UNSEEN,
            Some(first) => {
                if it.any(|l| l != first) {
                    MIXED
                } else {
                    first
                }
            }
        }
    }
}

const UNSEEN: u32 = u32::MAX;
const MIXED: u32 = u32::MAX - 1;

/// Per-level utility grid, row-major (`iy * side + ix`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityLevel {
    pub level: usize,
    pub side: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MultiResolutionMap {
    bounds: Rect,
    min_cell: f64,
    side: usize,
    real_nx: usize,
    real_ny: usize,
    cells: Vec<Level0Cell>,
    // utilities[0] mirrors the level-0 cell utilities.
    utilities: Vec<Vec<f64>>,
    // Level-0 cells holding at least one entry (may include emptied ones).
    occupied: Vec<usize>,
    listed: Vec<bool>,
    // Level-0 cells currently marked valid.
    marked: Vec<usize>,
    // Per-cell (pass stamp, signature), on a grid with a one-cell border so
    // neighbourhoods never need clipping. Slots with an old stamp are empty.
    scratch: Vec<(u32, u32)>,
    // Level-0 cell signatures, kept in step with `entries`.
    sigs: Vec<u32>,
    stamp: u32,
}

impl MultiResolutionMap {
    pub fn build(bounds: Rect, min_cell: f64) -> Result<Self, MapError> {
        if !(min_cell.is_finite() && min_cell > 0.0) {
            return Err(MapError::NonPositiveCell(min_cell));
        }
        if bounds.width() <= 0.0 || bounds.height() <= 0.0 {
            return Err(MapError::EmptyWorkspace);
        }
        let count = |extent: f64| ((extent / min_cell) - 1e-9).ceil().max(1.0) as usize;
        let (real_nx, real_ny) = (count(bounds.width()), count(bounds.height()));
        let side = real_nx.max(real_ny).max(4).next_power_of_two();
        let levels = side.trailing_zeros() as usize;
        let cells = (0..side * side)
            .map(|i| {
                let (ix, iy) = (i % side, i / side);
                Level0Cell {
                    entries: Vec::new(),
                    state: CellState::Invalid,
                    utility: 0.0,
                    padding: ix >= real_nx || iy >= real_ny,
                }
            })
            .collect();
        let utilities = (0..levels).map(|l| vec![0.0; (side >> l) * (side >> l)]).collect();
        let n = side * side;
        Ok(Self {
            bounds,
            min_cell,
            side,
            real_nx,
            real_ny,
            cells,
            utilities,
            occupied: Vec::new(),
            listed: vec![false; n],
            marked: Vec::new(),
            scratch: vec![(0, UNSEEN); (side + 2) * (side + 2)],
            stamp: 0,
            sigs: vec![UNSEEN; n],
        })
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn min_cell(&self) -> f64 {
        self.min_cell
    }

    /// Index of the coarsest (2x2) level.
    pub fn top_level(&self) -> usize {
        self.utilities.len() - 1
    }

    pub fn level_count(&self) -> usize {
        self.utilities.len()
    }

    pub fn level_side(&self, level: usize) -> usize {
        self.side >> level
    }

    /// Cells per level, finest first.
    pub fn cell_counts(&self) -> Vec<usize> {
        (0..self.level_count()).map(|l| self.level_side(l).pow(2)).collect()
    }

    pub fn real_extent(&self) -> (usize, usize) {
        (self.real_nx, self.real_ny)
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &Level0Cell {
        &self.cells[iy * self.side + ix]
    }

    pub fn utility(&self, c: CellIndex) -> f64 {
        self.utilities[c.level][c.iy * self.level_side(c.level) + c.ix]
    }

    /// Half-open cells; points on the workspace's far edges fall in the last real cell.
    pub fn cell_of(&self, p: Point2) -> Result<CellIndex, MapError> {
        if !self.bounds.contains(p) {
            return Err(MapError::OutOfBounds(p));
        }
        let ix = (((p.x - self.bounds.min.x) / self.min_cell).floor() as usize).min(self.real_nx - 1);
        let iy = (((p.y - self.bounds.min.y) / self.min_cell).floor() as usize).min(self.real_ny - 1);
        Ok(CellIndex::new(0, ix, iy))
    }

    /// Geometric extent of a level-0 cell, clipped to the workspace.
    pub fn cell_rect(&self, c: CellIndex) -> Rect {
        debug_assert_eq!(c.level, 0);
        let lo = Point2::new(
            self.bounds.min.x + c.ix as f64 * self.min_cell,
            self.bounds.min.y + c.iy as f64 * self.min_cell,
        );
        let hi =
            Point2::new((lo.x + self.min_cell).min(self.bounds.max.x), (lo.y + self.min_cell).min(self.bounds.max.y));
        Rect::new(Point2::new(lo.x.min(hi.x), lo.y.min(hi.y)), hi)
    }

    pub fn cell_center(&self, c: CellIndex) -> Point2 {
        let size = self.min_cell * (1usize << c.level) as f64;
        Point2::new(self.bounds.min.x + (c.ix as f64 + 0.5) * size, self.bounds.min.y + (c.iy as f64 + 0.5) * size)
    }

    pub fn index_node(&mut self, id: NodeId, p: Point2, label: u32) -> Result<(), MapError> {
        let c = self.cell_of(p)?;
        let i = c.iy * self.side + c.ix;
        self.cells[i].entries.push((id, label));
        self.sigs[i] = match self.sigs[i] {
            UNSEEN => label,
            s if s == label => label,
            _ => MIXED,
        };
        if !self.listed[i] {
            self.listed[i] = true;
            self.occupied.push(i);
        }
        Ok(())
    }

    pub fn remove_node(&mut self, id: NodeId, p: Point2) -> Result<(), MapError> {
        let c = self.cell_of(p)?;
        let i = c.iy * self.side + c.ix;
        let entries = &mut self.cells[i].entries;
        if let Some(k) = entries.iter().position(|e| e.0 == id) {
            entries.swap_remove(k);
            self.sigs[i] = self.cells[i].signature();
        }
        Ok(())
    }

    /// Update the label recorded for an indexed node.
    pub fn set_label(&mut self, id: NodeId, p: Point2, label: u32) -> Result<(), MapError> {
        let c = self.cell_of(p)?;
        let i = c.iy * self.side + c.ix;
        if let Some(e) = self.cells[i].entries.iter_mut().find(|e| e.0 == id) {
            e.1 = label;
            self.sigs[i] = self.cells[i].signature();
        }
        Ok(())
    }

    /// Whether every indexed node carries its forest label.
    pub fn labels_match(&self, forest: &SearchForest) -> bool {
        self.occupied
            .iter()
            .flat_map(|&i| &self.cells[i].entries)
            .all(|&(id, label)| forest.contains(id) && forest.label(id) == label)
    }

    /// Drop all indexed nodes.
    pub fn clear_nodes(&mut self) {
        for i in self.occupied.drain(..) {
            self.cells[i].entries.clear();
            self.sigs[i] = UNSEEN;
            self.listed[i] = false;
        }
    }

    /// Refresh every indexed node's label from the forest.
    pub fn sync_labels(&mut self, forest: &SearchForest) {
        for &i in &self.occupied {
            for e in &mut self.cells[i].entries {
                e.1 = forest.label(e.0);
            }
            self.sigs[i] = self.cells[i].signature();
        }
    }

    /// Mark each level-0 cell valid iff its 3x3 neighbourhood holds two or
    /// more distinct tree labels. Returns the number of valid cells.
    ///
    /// Each occupied cell pushes its label signature onto its neighbours, so
    /// the cost follows the number of occupied cells rather than the map size.
    pub fn mark_validity(&mut self) -> usize {
        let n = self.side;
        for &i in &self.marked {
            self.cells[i].state = CellState::Invalid;
            self.cells[i].utility = 0.0;
            self.utilities[0][i] = 0.0;
        }
        let stale = std::mem::take(&mut self.marked);
        self.repool(&stale);
        self.marked = stale;
        self.marked.clear();
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.scratch.fill((0, UNSEEN));
            self.stamp = 1;
        }
        let stamp = self.stamp;
        let w = n + 2;
        // The side is a power of two; shifts avoid integer division here.
        let shift = n.trailing_zeros();
        let pad = |i: usize| ((i >> shift) + 1) * w + (i & (n - 1)) + 1;
        let Self { sigs, listed, scratch, occupied, .. } = self;
        // Drop emptied cells, stamp each signature into the padded grid and
        // vote for the most common one.
        let (mut common, mut votes) = (UNSEEN, 0usize);
        let mut kept = 0;
        for j in 0..occupied.len() {
            let i = occupied[j];
            let sig = sigs[i];
            if sig == UNSEEN {
                listed[i] = false;
                continue;
            }
            occupied[kept] = i;
            kept += 1;
            scratch[pad(i)] = (stamp, sig);
            if votes == 0 {
                common = sig;
            }
            votes = if sig == common { votes + 1 } else { votes - 1 };
        }
        occupied.truncate(kept);
        // A valid cell has a mixed cell or a label other than `common` in its
        // neighbourhood, so only neighbours of such cells need a look.
        for j in 0..self.occupied.len() {
            let a = self.occupied[j];
            let sig = self.sigs[a];
            if sig == common && sig != MIXED {
                continue;
            }
            let (ax, ay) = ((a & (n - 1)) + 1, (a >> shift) + 1);
            for (px, py) in (ay - 1..=ay + 1).flat_map(|py| (ax - 1..=ax + 1).map(move |px| (px, py))) {
                if !(1..=self.real_nx).contains(&px) || !(1..=self.real_ny).contains(&py) {
                    continue;
                }
                let x = py * w + px;
                let c = (py - 1) * n + px - 1;
                if self.cells[c].state == CellState::Valid {
                    continue;
                }
                let mixed = sig == MIXED
                    || (0..3).any(|r| {
                        self.scratch[x - w - 1 + r * w..x - w + 2 + r * w]
                            .iter()
                            .any(|&(st, other)| st == stamp && other != sig)
                    });
                if mixed {
                    self.cells[c].state = CellState::Valid;
                    self.marked.push(c);
                }
            }
        }
        self.marked.len()
    }

    /// Level-0 utilities from the detour length through each valid cell
    /// centre, then max-pooling up the hierarchy.
    pub fn compute_utilities(&mut self, robot: Point2, goal: Point2) {
        // Level 0 is nonzero only at marked cells, which mark_validity resets.
        for k in 0..self.marked.len() {
            let i = self.marked[k];
            let u = match self.cells[i].state {
                CellState::Invalid => 0.0,
                CellState::Valid => {
                    let c = self.cell_center(self.cell_index(i));
                    1.0 / (dist(robot, c) + dist(c, goal)).max(f64::MIN_POSITIVE)
                }
            };
            self.cells[i].utility = u;
            self.utilities[0][i] = u;
        }
        let marked = std::mem::take(&mut self.marked);
        self.repool(&marked);
        self.marked = marked;
    }

    /// Refresh the coarser levels above the given level-0 cells.
    fn repool(&mut self, changed: &[usize]) {
        if changed.len() * 4 >= self.cells.len() / 4 {
            self.pool_levels();
            return;
        }
        for &i in changed {
            self.repool_ancestors(self.cell_index(i));
        }
    }

    fn cell_index(&self, i: usize) -> CellIndex {
        CellIndex::new(0, i & (self.side - 1), i >> self.side.trailing_zeros())
    }

    fn repool_ancestors(&mut self, c: CellIndex) {
        for level in 1..self.utilities.len() {
            let a = c.ancestor(level);
            let side = self.level_side(level);
            let child_side = side * 2;
            let child = &self.utilities[level - 1];
            let (cx, cy) = (a.ix * 2, a.iy * 2);
            let m = child[cy * child_side + cx]
                .max(child[cy * child_side + cx + 1])
                .max(child[(cy + 1) * child_side + cx])
                .max(child[(cy + 1) * child_side + cx + 1]);
            self.utilities[level][a.iy * side + a.ix] = m;
        }
    }

    /// Overwrite level-0 utilities directly (state follows positivity) and re-pool.
    pub fn assign_level0_utilities(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.cells.len(), "one value per level-0 cell");
        self.marked.clear();
        for (i, &u) in values.iter().enumerate() {
            let u = if self.cells[i].padding { 0.0 } else { u.max(0.0) };
            self.cells[i].utility = u;
            self.cells[i].state = if u > 0.0 { CellState::Valid } else { CellState::Invalid };
            self.utilities[0][i] = u;
            if u > 0.0 {
                self.marked.push(i);
            }
        }
        self.pool_levels();
    }

    fn pool_levels(&mut self) {
        for level in 1..self.utilities.len() {
            let side = self.level_side(level);
            let (finer, coarser) = self.utilities.split_at_mut(level);
            let child = &finer[level - 1];
            let child_side = side * 2;
            let rows = child.chunks_exact(2 * child_side);
            for (out, pair) in coarser[0].chunks_exact_mut(side).zip(rows) {
                let (top, bottom) = pair.split_at(child_side);
                for ((o, t), b) in out.iter_mut().zip(top.chunks_exact(2)).zip(bottom.chunks_exact(2)) {
                    *o = t[0].max(t[1]).max(b[0]).max(b[1]);
                }
            }
        }
    }

    /// Exclude a level-0 cell from further searches.
    pub fn mask_cell(&mut self, c: CellIndex) {
        debug_assert_eq!(c.level, 0);
        let i = c.iy * self.side + c.ix;
        self.cells[i].state = CellState::Invalid;
        self.cells[i].utility = 0.0;
        self.utilities[0][i] = 0.0;
        self.repool_ancestors(c);
    }

    /// Best level-0 cell for repair sampling. Scans the 3x3 neighbourhood of
    /// the robot's cell, widening one level at a time until some cell has
    /// positive utility, then descends through the best child at each level.
    pub fn search_sampling_cell(&self, robot_cell: CellIndex) -> Option<CellIndex> {
        debug_assert_eq!(robot_cell.level, 0);
        for level in 0..self.level_count() {
            let here = robot_cell.ancestor(level);
            let side = self.level_side(level);
            let mut best: Option<(f64, CellIndex)> = None;
            for iy in here.iy.saturating_sub(1)..=(here.iy + 1).min(side - 1) {
                for ix in here.ix.saturating_sub(1)..=(here.ix + 1).min(side - 1) {
                    let c = CellIndex::new(level, ix, iy);
                    let u = self.utility(c);
                    if u > 0.0 && best.is_none_or(|(bu, _)| u > bu) {
                        best = Some((u, c));
                    }
                }
            }
            if let Some((_, mut c)) = best {
                while c.level > 0 {
                    let mut pick: Option<(f64, CellIndex)> = None;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let child = CellIndex::new(c.level - 1, c.ix * 2 + dx, c.iy * 2 + dy);
                            let u = self.utility(child);
                            if pick.is_none_or(|(pu, _)| u > pu) {
                                pick = Some((u, child));
                            }
                        }
                    }
                    c = pick.expect("four children").1;
                }
                return Some(c);
            }
        }
        None
    }

    pub fn snapshot(&self) -> Vec<UtilityLevel> {
        self.utilities
            .iter()
            .enumerate()
            .map(|(level, values)| UtilityLevel { level, side: self.level_side(level), values: values.clone() })
            .collect()
    }
}
