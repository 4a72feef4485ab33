//! Forest-of-trees adaptive mesh with isotropic `2^d` refinement,
//! one-irregular closure and Morton-ordered leaves.
//!
//! All shipped refinement sequences use a single root cell covering the
//! box `[-1,1]^d`. Multi-root forests are representable through
//! [`CellRef::tree_id`], but neighbor lookup across trees is rejected.

use crate::error::{Error, Result};
use crate::morton;
use std::collections::HashSet;
use std::io::Write;

/// One cell of the refinement hierarchy, identified by its path from the
/// root: `d` bits per level, deepest level in the least significant bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellRef {
    pub tree_id: u32,
    pub level: u8,
    pub morton: u64,
}

impl CellRef {
    pub fn root(tree_id: u32) -> Self {
        CellRef {
            tree_id,
            level: 0,
            morton: 0,
        }
    }

    pub fn parent(&self, dim: usize) -> Option<CellRef> {
        if self.level == 0 {
            None
        } else {
            Some(CellRef {
                tree_id: self.tree_id,
                level: self.level - 1,
                morton: self.morton >> dim,
            })
        }
    }

    /// Child `k` in Morton order; bit 0 of `k` is the x offset.
    pub fn child(&self, k: usize, dim: usize) -> CellRef {
        debug_assert!(k < (1 << dim));
        CellRef {
            tree_id: self.tree_id,
            level: self.level + 1,
            morton: (self.morton << dim) | k as u64,
        }
    }

    pub fn children(&self, dim: usize) -> impl Iterator<Item = CellRef> + '_ {
        let cell = *self;
        (0..(1usize << dim)).map(move |k| cell.child(k, dim))
    }

    /// Integer coordinates of the cell's lower corner at its own level.
    pub fn coords(&self, dim: usize) -> [u32; 3] {
        morton::decode(self.morton, self.level as usize, dim)
    }

    /// Level-tagged key, unique across all levels of one tree.
    pub fn key(&self, dim: usize) -> u64 {
        (1u64 << (dim * self.level as usize)) | self.morton
    }

    /// Morton key shifted to a common comparison depth. Equal padded keys
    /// of distinct cells indicate an ancestor/descendant pair.
    pub fn padded_key(&self, depth: usize, dim: usize) -> u64 {
        self.morton << (dim * (depth - self.level as usize))
    }

    /// Depth-first (preorder) sort key; ancestors sort before descendants.
    pub fn dfs_key(&self, depth: usize, dim: usize) -> (u32, u64, u8) {
        (self.tree_id, self.padded_key(depth, dim), self.level)
    }

    fn from_key(key: u64, dim: usize) -> CellRef {
        let level = (63 - key.leading_zeros()) as usize / dim;
        CellRef {
            tree_id: 0,
            level: level as u8,
            morton: key & !(1u64 << (dim * level)),
        }
    }

    /// Closed axis-aligned bounding box in physical coordinates on `[-1,1]^d`.
    pub fn bounds(&self, dim: usize) -> ([f64; 3], [f64; 3]) {
        let c = self.coords(dim);
        let h = 2.0 / (1u64 << self.level) as f64;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for axis in 0..dim {
            lo[axis] = -1.0 + c[axis] as f64 * h;
            hi[axis] = lo[axis] + h;
        }
        (lo, hi)
    }
}

/// Checks whether the closed boxes of two cells of one tree intersect,
/// i.e. whether the cells share at least a vertex.
fn boxes_touch(a: CellRef, b: CellRef, dim: usize) -> bool {
    let depth = a.level.max(b.level) as usize;
    let ca = a.coords(dim);
    let cb = b.coords(dim);
    let sa = depth - a.level as usize;
    let sb = depth - b.level as usize;
    for axis in 0..dim {
        let (alo, ahi) = ((ca[axis] as u64) << sa, ((ca[axis] + 1) as u64) << sa);
        let (blo, bhi) = ((cb[axis] as u64) << sb, ((cb[axis] + 1) as u64) << sb);
        if ahi < blo || bhi < alo {
            return false;
        }
    }
    true
}

/// Result of locating the cell of the hierarchy covering a coordinate.
enum Covering {
    Leaf(CellRef),
    /// The queried cell exists but is refined further.
    Internal(CellRef),
    Outside,
}

fn find_covering(
    leaves: &HashSet<u64>,
    internal: &HashSet<u64>,
    cell: CellRef,
    dim: usize,
) -> Covering {
    let key = cell.key(dim);
    if leaves.contains(&key) {
        return Covering::Leaf(cell);
    }
    if internal.contains(&key) {
        return Covering::Internal(cell);
    }
    let mut cur = cell;
    while let Some(p) = cur.parent(dim) {
        if leaves.contains(&p.key(dim)) {
            return Covering::Leaf(p);
        }
        cur = p;
    }
    Covering::Outside
}

/// Maximum level among leaves inside `region` whose closed box touches the
/// closed box of `probe`.
fn max_adjacent_leaf_level(
    leaves: &HashSet<u64>,
    region: CellRef,
    probe: CellRef,
    dim: usize,
) -> u8 {
    if !boxes_touch(region, probe, dim) {
        return 0;
    }
    if leaves.contains(&region.key(dim)) {
        return region.level;
    }
    let mut max = 0;
    for child in region.children(dim) {
        max = max.max(max_adjacent_leaf_level(leaves, child, probe, dim));
    }
    max
}

/// The view `ℳ_ℓ`: all cells of level `ℓ` together with all coarser leaves.
#[derive(Debug, Clone)]
pub struct LevelMeshView {
    pub level: usize,
    /// Cells in depth-first order.
    pub cells: Vec<CellRef>,
}

impl LevelMeshView {
    pub fn is_strict(&self, cell: &CellRef) -> bool {
        cell.level as usize == self.level
    }

    pub fn strict_cells(&self) -> impl Iterator<Item = &CellRef> {
        self.cells.iter().filter(move |c| self.is_strict(c))
    }

    pub fn lower_cells(&self) -> impl Iterator<Item = &CellRef> {
        self.cells.iter().filter(move |c| !self.is_strict(c))
    }
}

/// An adaptively refined forest mesh over `[-1,1]^d`.
///
/// Immutable after construction; [`ForestMesh::refine`] returns a new mesh.
#[derive(Debug, Clone)]
pub struct ForestMesh {
    dim: usize,
    max_level: usize,
    /// Leaves in depth-first order.
    leaves: Vec<CellRef>,
    /// Non-leaf cells of the hierarchy in depth-first order.
    internal: Vec<CellRef>,
    leaf_set: HashSet<u64>,
    internal_set: HashSet<u64>,
    /// Padded Morton keys of the leaves, ascending.
    leaf_padded: Vec<u64>,
    /// Index of the first descendant leaf of each internal cell.
    internal_first_leaf: Vec<u32>,
}

impl ForestMesh {
    /// A single unrefined root cell.
    pub fn single_root(dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::UnsupportedDim(dim));
        }
        let mut leaf_set = HashSet::new();
        leaf_set.insert(CellRef::root(0).key(dim));
        Ok(Self::from_sets(dim, leaf_set, HashSet::new()))
    }

    fn from_sets(dim: usize, leaf_set: HashSet<u64>, internal_set: HashSet<u64>) -> Self {
        let mut leaves: Vec<CellRef> = leaf_set
            .iter()
            .map(|&k| CellRef::from_key(k, dim))
            .collect();
        let max_level = leaves.iter().map(|c| c.level as usize).max().unwrap_or(0);
        leaves.sort_by_key(|c| c.dfs_key(max_level, dim));
        let mut internal: Vec<CellRef> = internal_set
            .iter()
            .map(|&k| CellRef::from_key(k, dim))
            .collect();
        internal.sort_by_key(|c| c.dfs_key(max_level, dim));
        let leaf_padded: Vec<u64> = leaves
            .iter()
            .map(|c| c.padded_key(max_level, dim))
            .collect();
        let internal_first_leaf = internal
            .iter()
            .map(|c| {
                let lo = c.padded_key(max_level, dim);
                leaf_padded.partition_point(|&k| k < lo) as u32
            })
            .collect();
        ForestMesh {
            dim,
            max_level,
            leaves,
            internal,
            leaf_set,
            internal_set,
            leaf_padded,
            internal_first_leaf,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn leaves(&self) -> &[CellRef] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Non-leaf cells in depth-first order.
    pub fn internal_cells(&self) -> &[CellRef] {
        &self.internal
    }

    /// Total number of cells in the hierarchy (leaves plus ancestors).
    pub fn num_cells(&self) -> usize {
        self.leaves.len() + self.internal.len()
    }

    pub fn is_leaf(&self, cell: &CellRef) -> bool {
        cell.tree_id == 0 && self.leaf_set.contains(&cell.key(self.dim))
    }

    pub fn contains(&self, cell: &CellRef) -> bool {
        cell.tree_id == 0
            && (self.leaf_set.contains(&cell.key(self.dim))
                || self.internal_set.contains(&cell.key(self.dim)))
    }

    /// Position of a leaf in depth-first leaf order.
    pub fn leaf_index(&self, cell: &CellRef) -> Option<usize> {
        if !self.is_leaf(cell) {
            return None;
        }
        let key = cell.padded_key(self.max_level, self.dim);
        let idx = self.leaf_padded.partition_point(|&k| k < key);
        debug_assert_eq!(self.leaves[idx], *cell);
        Some(idx)
    }

    /// Position of a non-leaf cell in the internal cell array.
    pub fn internal_index(&self, cell: &CellRef) -> Option<usize> {
        if cell.tree_id != 0 || !self.internal_set.contains(&cell.key(self.dim)) {
            return None;
        }
        self.internal
            .binary_search_by_key(&cell.dfs_key(self.max_level, self.dim), |c| {
                c.dfs_key(self.max_level, self.dim)
            })
            .ok()
    }

    /// Index of the first descendant leaf (the leaf reached by repeatedly
    /// taking child 0) of any cell of the hierarchy.
    pub fn first_descendant_leaf(&self, cell: &CellRef) -> Option<usize> {
        if self.is_leaf(cell) {
            return self.leaf_index(cell);
        }
        self.internal_index(cell)
            .map(|i| self.internal_first_leaf[i] as usize)
    }

    /// Refines every marked leaf into its `2^d` children and re-establishes
    /// one-irregularity over shared vertices by refining further cells up to
    /// a fixed point. Returns a new mesh; an empty `marked` set returns a
    /// copy of the mesh unchanged.
    pub fn refine(&self, marked: &[CellRef]) -> Result<ForestMesh> {
        for cell in marked {
            if !self.is_leaf(cell) {
                return Err(Error::NotALeaf);
            }
        }
        let dim = self.dim;
        let mut leaf_set = self.leaf_set.clone();
        let mut internal_set = self.internal_set.clone();
        let mut worklist: Vec<CellRef> = marked.to_vec();

        while let Some(cell) = worklist.pop() {
            let key = cell.key(dim);
            if !leaf_set.remove(&key) {
                // Already refined through an earlier closure step.
                continue;
            }
            internal_set.insert(key);
            let span = 1u32 << (cell.level as usize + 1);
            for child in cell.children(dim) {
                leaf_set.insert(child.key(dim));
            }
            // Vertex-neighborhood scan of each new child to detect
            // one-irregularity violations in either direction.
            for child in cell.children(dim) {
                let cc = child.coords(dim);
                let mut offsets = [-1i64; 3];
                loop {
                    // advance the offset odometer over {-1,0,1}^d
                    let mut skip = offsets[..dim].iter().all(|&o| o == 0);
                    let mut ncoords = [0u32; 3];
                    for axis in 0..dim {
                        let v = cc[axis] as i64 + offsets[axis];
                        if v < 0 || v >= span as i64 {
                            skip = true;
                            break;
                        }
                        ncoords[axis] = v as u32;
                    }
                    if !skip {
                        let probe = CellRef {
                            tree_id: 0,
                            level: child.level,
                            morton: morton::encode(ncoords, child.level as usize, dim),
                        };
                        match find_covering(&leaf_set, &internal_set, probe, dim) {
                            Covering::Leaf(leaf) => {
                                if child.level - leaf.level > 1 {
                                    worklist.push(leaf);
                                }
                            }
                            Covering::Internal(region) => {
                                let m = max_adjacent_leaf_level(&leaf_set, region, child, dim);
                                if m > child.level + 1 {
                                    worklist.push(child);
                                }
                            }
                            Covering::Outside => {}
                        }
                    }
                    // increment odometer
                    let mut axis = 0;
                    loop {
                        if axis == dim {
                            break;
                        }
                        offsets[axis] += 1;
                        if offsets[axis] <= 1 {
                            break;
                        }
                        offsets[axis] = -1;
                        axis += 1;
                    }
                    if axis == dim {
                        break;
                    }
                }
            }
        }
        Ok(Self::from_sets(dim, leaf_set, internal_set))
    }

    /// The level mesh `ℳ_ℓ`: all level-`ℓ` cells plus all coarser leaves.
    pub fn level_mesh(&self, level: usize) -> Result<LevelMeshView> {
        if level > self.max_level {
            return Err(Error::LevelOutOfRange(level, self.max_level));
        }
        let mut cells: Vec<CellRef> = self
            .leaves
            .iter()
            .filter(|c| (c.level as usize) <= level)
            .chain(self.internal.iter().filter(|c| c.level as usize == level))
            .copied()
            .collect();
        cells.sort_by_key(|c| c.dfs_key(self.max_level, self.dim));
        Ok(LevelMeshView { level, cells })
    }

    /// All leaves sharing at least one vertex with `cell` (excluding `cell`
    /// itself), computed through Morton arithmetic.
    pub fn vertex_neighbors(&self, cell: &CellRef) -> Result<Vec<CellRef>> {
        if cell.tree_id != 0 {
            return Err(Error::CrossTree(cell.tree_id));
        }
        if !self.contains(cell) {
            return Err(Error::CellNotInMesh);
        }
        let dim = self.dim;
        let span = 1u64 << cell.level;
        let cc = cell.coords(dim);
        let mut found: HashSet<u64> = HashSet::new();
        let mut result = Vec::new();
        let mut offsets = [-1i64; 3];
        if dim == 2 {
            offsets[2] = 0;
        }
        loop {
            let mut skip = offsets[..dim].iter().all(|&o| o == 0);
            let mut ncoords = [0u32; 3];
            for axis in 0..dim {
                let v = cc[axis] as i64 + offsets[axis];
                if v < 0 || v >= span as i64 {
                    skip = true;
                    break;
                }
                ncoords[axis] = v as u32;
            }
            if !skip {
                let probe = CellRef {
                    tree_id: 0,
                    level: cell.level,
                    morton: morton::encode(ncoords, cell.level as usize, dim),
                };
                match find_covering(&self.leaf_set, &self.internal_set, probe, dim) {
                    Covering::Leaf(leaf) => {
                        if found.insert(leaf.key(dim)) {
                            result.push(leaf);
                        }
                    }
                    Covering::Internal(region) => {
                        self.collect_touching_leaves(region, *cell, &mut found, &mut result);
                    }
                    Covering::Outside => {}
                }
            }
            let mut axis = 0;
            loop {
                if axis == dim {
                    break;
                }
                offsets[axis] += 1;
                if offsets[axis] <= 1 {
                    break;
                }
                offsets[axis] = -1;
                axis += 1;
            }
            if axis == dim {
                break;
            }
        }
        result.sort_by_key(|c| c.dfs_key(self.max_level, self.dim));
        Ok(result)
    }

    fn collect_touching_leaves(
        &self,
        region: CellRef,
        probe: CellRef,
        found: &mut HashSet<u64>,
        result: &mut Vec<CellRef>,
    ) {
        if !boxes_touch(region, probe, self.dim) {
            return;
        }
        if self.leaf_set.contains(&region.key(self.dim)) {
            if found.insert(region.key(self.dim)) {
                result.push(region);
            }
            return;
        }
        for child in region.children(self.dim) {
            self.collect_touching_leaves(child, probe, found, result);
        }
    }

    /// Writes the leaf mesh as text lines `tree_id level morton [owner]` in
    /// depth-first leaf order.
    pub fn write_dump(&self, owners: Option<&[u32]>, mut w: impl Write) -> Result<()> {
        for (i, leaf) in self.leaves.iter().enumerate() {
            match owners {
                Some(o) => writeln!(
                    w,
                    "{} {} {} {}",
                    leaf.tree_id, leaf.level, leaf.morton, o[i]
                )?,
                None => writeln!(w, "{} {} {}", leaf.tree_id, leaf.level, leaf.morton)?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Brute-force one-irregularity check over all leaf vertex pairs.
    pub(crate) fn is_one_irregular(mesh: &ForestMesh) -> bool {
        let leaves = mesh.leaves();
        for (i, a) in leaves.iter().enumerate() {
            for b in &leaves[i + 1..] {
                if boxes_touch(*a, *b, mesh.dim()) && (a.level as i32 - b.level as i32).abs() > 1 {
                    return false;
                }
            }
        }
        true
    }

    fn leaf_volume_sum(mesh: &ForestMesh) -> u64 {
        // in units of the finest cell volume
        let d = mesh.dim();
        let depth = mesh.max_level();
        mesh.leaves()
            .iter()
            .map(|c| 1u64 << (d * (depth - c.level as usize)))
            .sum()
    }

    #[test]
    fn first_refinement_gives_four_children() {
        let mesh = ForestMesh::single_root(2).unwrap();
        let refined = mesh.refine(&[CellRef::root(0)]).unwrap();
        assert_eq!(refined.num_leaves(), 4);
        assert!(refined.leaves().iter().all(|c| c.level == 1));
    }

    #[test]
    fn fig2_mesh_has_seven_leaves() {
        // refine the root, then its first child
        let mesh = ForestMesh::single_root(2).unwrap();
        let mesh = mesh.refine(&[CellRef::root(0)]).unwrap();
        let first = mesh.leaves()[0];
        let mesh = mesh.refine(&[first]).unwrap();
        assert_eq!(mesh.num_leaves(), 7);
        let lv2 = mesh.leaves().iter().filter(|c| c.level == 2).count();
        let lv1 = mesh.leaves().iter().filter(|c| c.level == 1).count();
        assert_eq!((lv2, lv1), (4, 3));
        // grandchildren come first in depth-first order
        assert!(mesh.leaves()[..4].iter().all(|c| c.level == 2));
    }

    #[test]
    fn corner_mark_after_two_uniform_does_not_trigger_closure() {
        let mut mesh = ForestMesh::single_root(2).unwrap();
        for _ in 0..2 {
            let all = mesh.leaves().to_vec();
            mesh = mesh.refine(&all).unwrap();
        }
        // leaf at the (-1,-1) corner is the first in depth-first order
        let corner = mesh.leaves()[0];
        assert_eq!(corner.coords(2)[..2], [0, 0]);
        let refined = mesh.refine(&[corner]).unwrap();
        assert_eq!(refined.num_leaves(), 19);
        assert!(is_one_irregular(&refined));
    }

    #[test]
    fn closure_propagates_over_multiple_levels() {
        // Refining the corner repeatedly must grade the mesh outward.
        let mut mesh = ForestMesh::single_root(2).unwrap();
        for _ in 0..5 {
            let corner = mesh.leaves()[0];
            mesh = mesh.refine(&[corner]).unwrap();
            assert!(is_one_irregular(&mesh));
        }
        assert_eq!(mesh.max_level(), 5);
    }

    #[test]
    fn refine_empty_is_identity() {
        let mesh = ForestMesh::single_root(2).unwrap();
        let mesh = mesh.refine(&[CellRef::root(0)]).unwrap();
        let same = mesh.refine(&[]).unwrap();
        assert_eq!(same.leaves(), mesh.leaves());
    }

    #[test]
    fn leaves_tile_domain() {
        let mesh = ForestMesh::single_root(2).unwrap();
        let mesh = mesh.refine(&[CellRef::root(0)]).unwrap();
        let first = mesh.leaves()[0];
        let mesh = mesh.refine(&[first]).unwrap();
        assert_eq!(leaf_volume_sum(&mesh), 1 << (2 * mesh.max_level()));
    }

    #[test]
    fn level_mesh_of_fig2() {
        let mesh = ForestMesh::single_root(2).unwrap();
        let mesh = mesh.refine(&[CellRef::root(0)]).unwrap();
        let first = mesh.leaves()[0];
        let mesh = mesh.refine(&[first]).unwrap();

        let lm2 = mesh.level_mesh(2).unwrap();
        assert_eq!(lm2.strict_cells().count(), 4);
        assert_eq!(lm2.lower_cells().count(), 3);

        let lm0 = mesh.level_mesh(0).unwrap();
        assert_eq!(lm0.cells.len(), 1);
        assert!(lm0.is_strict(&lm0.cells[0]));

        assert!(mesh.level_mesh(3).is_err());
    }

    #[test]
    fn uniform_level_mesh_has_no_lower_cells() {
        let mut mesh = ForestMesh::single_root(2).unwrap();
        for _ in 0..2 {
            let all = mesh.leaves().to_vec();
            mesh = mesh.refine(&all).unwrap();
        }
        let lm1 = mesh.level_mesh(1).unwrap();
        assert_eq!(lm1.cells.len(), 4);
        assert_eq!(lm1.lower_cells().count(), 0);
    }

    #[test]
    fn vertex_neighbors_trivial_cases() {
        let mesh = ForestMesh::single_root(2).unwrap();
        assert!(mesh.vertex_neighbors(&CellRef::root(0)).unwrap().is_empty());

        let mesh = mesh.refine(&[CellRef::root(0)]).unwrap();
        for leaf in mesh.leaves() {
            assert_eq!(mesh.vertex_neighbors(leaf).unwrap().len(), 3);
        }
    }

    /// Brute-force oracle: vertex neighbors by bounding-box comparison.
    fn neighbors_oracle(mesh: &ForestMesh, cell: &CellRef) -> Vec<CellRef> {
        let mut v: Vec<CellRef> = mesh
            .leaves()
            .iter()
            .filter(|l| *l != cell && boxes_touch(**l, *cell, mesh.dim()))
            .copied()
            .collect();
        v.sort_by_key(|c| c.dfs_key(mesh.max_level(), mesh.dim()));
        v
    }

    #[test]
    fn vertex_neighbors_match_oracle_on_fig2() {
        let mesh = ForestMesh::single_root(2).unwrap();
        let mesh = mesh.refine(&[CellRef::root(0)]).unwrap();
        let first = mesh.leaves()[0];
        let mesh = mesh.refine(&[first]).unwrap();
        for leaf in mesh.leaves() {
            assert_eq!(
                mesh.vertex_neighbors(leaf).unwrap(),
                neighbors_oracle(&mesh, leaf),
                "neighbors of {leaf:?}"
            );
        }
    }

    #[test]
    fn leaf_order_is_padded_morton_order() {
        let mesh = ForestMesh::single_root(2).unwrap();
        let mesh = mesh.refine(&[CellRef::root(0)]).unwrap();
        let first = mesh.leaves()[0];
        let mesh = mesh.refine(&[first]).unwrap();
        let keys: Vec<u64> = mesh
            .leaves()
            .iter()
            .map(|c| c.padded_key(mesh.max_level(), 2))
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cross_tree_lookup_is_rejected() {
        let mesh = ForestMesh::single_root(2).unwrap();
        let foreign = CellRef::root(1);
        assert!(matches!(
            mesh.vertex_neighbors(&foreign),
            Err(Error::CrossTree(1))
        ));
    }
}
