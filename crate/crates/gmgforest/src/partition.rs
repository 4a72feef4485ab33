//! Simulated-rank ownership of the mesh hierarchy: space-filling-curve
//! partition of the leaf mesh and first-child-rule ownership of all
//! ancestor cells.

use crate::error::{Error, Result};
use crate::forest::{CellRef, ForestMesh};

pub type Rank = u32;

/// Splits `n` leaves into `p` contiguous intervals in depth-first order.
/// The first `n mod p` ranks receive one extra leaf.
pub fn partition_leaves(mesh: &ForestMesh, n_ranks: usize) -> Result<Vec<Rank>> {
    if n_ranks < 1 {
        return Err(Error::InvalidRankCount);
    }
    let n = mesh.num_leaves();
    Ok((0..n).map(|i| rank_of_leaf(i, n, n_ranks)).collect())
}

/// Rank owning leaf `i` of `n` under the contiguous split.
fn rank_of_leaf(i: usize, n: usize, p: usize) -> Rank {
    let q = n / p;
    let r = n % p;
    let cut = r * (q + 1);
    if i < cut {
        (i / (q + 1)) as Rank
    } else {
        (r + (i - cut) / q.max(1)) as Rank
    }
}

/// Rank ownership of every cell in the hierarchy together with per-level
/// cell tallies.
///
/// Two tally families are kept. `strict` counts only cells whose tree level
/// equals `ℓ`; these are the `N_ℓ`, `N_{ℓ,p}` of the workload model.
/// `carried` additionally counts coarser leaves that persist in the level
/// mesh `ℳ_ℓ`; these drive rank activity queries.
#[derive(Debug, Clone)]
pub struct HierarchyPartition {
    pub n_ranks: usize,
    /// Owner of each leaf, indexed in depth-first leaf order.
    pub leaf_owner: Vec<Rank>,
    /// Owner of each non-leaf cell, aligned with `ForestMesh::internal_cells`.
    pub internal_owner: Vec<Rank>,
    /// `strict[ℓ][q]`: number of level-`ℓ` cells owned by rank `q`.
    pub strict: Vec<Vec<u64>>,
    /// `carried[ℓ][q]`: number of cells of `ℳ_ℓ` owned by rank `q`.
    pub carried: Vec<Vec<u64>>,
}

impl HierarchyPartition {
    /// Total number of cells strictly on level `ℓ` (the model's `N_ℓ`).
    pub fn level_count(&self, level: usize) -> u64 {
        self.strict[level].iter().sum()
    }

    /// Number of levels (max level + 1).
    pub fn num_levels(&self) -> usize {
        self.strict.len()
    }

    /// Owner of an arbitrary cell of the hierarchy.
    pub fn owner_of(&self, mesh: &ForestMesh, cell: &CellRef) -> Option<Rank> {
        if mesh.is_leaf(cell) {
            mesh.leaf_index(cell).map(|i| self.leaf_owner[i])
        } else {
            mesh.internal_index(cell).map(|i| self.internal_owner[i])
        }
    }
}

/// Assigns every interior tree node the owner of its first (Morton-order)
/// child, recursively down to the leaves. Reads only tree structure and
/// leaf ownership; no neighbor information is involved.
pub fn first_child_rule(mesh: &ForestMesh, leaf_owner: &[Rank]) -> HierarchyPartition {
    assert_eq!(leaf_owner.len(), mesh.num_leaves());
    let n_ranks = leaf_owner.iter().copied().max().unwrap_or(0) as usize + 1;
    let levels = mesh.max_level() + 1;

    // The owner of an internal cell is the owner of the leaf reached by
    // repeatedly descending into child 0, which is its first descendant
    // leaf in depth-first order.
    let internal_owner: Vec<Rank> = mesh
        .internal_cells()
        .iter()
        .map(|c| leaf_owner[mesh.first_descendant_leaf(c).unwrap()])
        .collect();

    let mut strict = vec![vec![0u64; n_ranks]; levels];
    let mut leaf_at_level = vec![vec![0u64; n_ranks]; levels];
    for (cell, &owner) in mesh.internal_cells().iter().zip(&internal_owner) {
        strict[cell.level as usize][owner as usize] += 1;
    }
    for (cell, &owner) in mesh.leaves().iter().zip(leaf_owner) {
        strict[cell.level as usize][owner as usize] += 1;
        leaf_at_level[cell.level as usize][owner as usize] += 1;
    }
    // carried[ℓ] = strict[ℓ] + all leaves coarser than ℓ
    let mut carried = strict.clone();
    let mut acc = vec![0u64; n_ranks];
    for level in 0..levels {
        for q in 0..n_ranks {
            carried[level][q] += acc[q];
            acc[q] += leaf_at_level[level][q];
        }
    }

    HierarchyPartition {
        n_ranks: n_ranks.max(
            leaf_owner
                .iter()
                .map(|&r| r as usize + 1)
                .max()
                .unwrap_or(1),
        ),
        leaf_owner: leaf_owner.to_vec(),
        internal_owner,
        strict,
        carried,
    }
}

/// Convenience: SFC leaf partition followed by the first-child rule, with
/// tallies sized for exactly `n_ranks` ranks.
pub fn partition_hierarchy(mesh: &ForestMesh, n_ranks: usize) -> Result<HierarchyPartition> {
    let leaf_owner = partition_leaves(mesh, n_ranks)?;
    let mut part = first_child_rule(mesh, &leaf_owner);
    // pad tallies for ranks that own nothing (possible when p > leaves)
    for row in part.strict.iter_mut().chain(part.carried.iter_mut()) {
        row.resize(n_ranks, 0);
    }
    part.n_ranks = n_ranks;
    Ok(part)
}

/// Counts, among all level-`ℓ` cells, those owned by a different rank than
/// their parent. These are the cells whose data crosses rank boundaries in
/// the level transfer `ℓ-1 ↔ ℓ`. Returns `(ghost, total_children)`.
pub fn ghost_children(
    mesh: &ForestMesh,
    part: &HierarchyPartition,
    level: usize,
) -> Result<(u64, u64)> {
    if level < 1 || level > mesh.max_level() {
        return Err(Error::LevelOutOfRange(level, mesh.max_level()));
    }
    let dim = mesh.dim();
    let mut ghost = 0u64;
    let mut total = 0u64;
    let mut count = |cell: &CellRef, owner: Rank| {
        if cell.level as usize != level {
            return;
        }
        total += 1;
        let parent = cell.parent(dim).expect("level >= 1");
        let parent_owner = part
            .owner_of(mesh, &parent)
            .expect("parent of a mesh cell is in the mesh");
        if parent_owner != owner {
            ghost += 1;
        }
    };
    for (cell, &owner) in mesh.internal_cells().iter().zip(&part.internal_owner) {
        count(cell, owner);
    }
    for (cell, &owner) in mesh.leaves().iter().zip(&part.leaf_owner) {
        count(cell, owner);
    }
    Ok((ghost, total))
}

/// For each rank, the set of levels `ℓ` on which it owns at least one cell
/// of the level mesh `ℳ_ℓ` (coarser leaves carried into finer level meshes
/// keep their leaf owner and keep the rank active there).
pub fn rank_active_levels(part: &HierarchyPartition) -> Vec<Vec<usize>> {
    (0..part.n_ranks)
        .map(|q| {
            (0..part.num_levels())
                .filter(|&l| part.carried[l][q] > 0)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::{build_sequence, fig2_mesh, SequenceKind};

    #[test]
    fn seven_leaves_three_ranks() {
        let mesh = fig2_mesh().unwrap();
        let owners = partition_leaves(&mesh, 3).unwrap();
        assert_eq!(owners, vec![0, 0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn single_rank_owns_everything() {
        let mesh = fig2_mesh().unwrap();
        let owners = partition_leaves(&mesh, 1).unwrap();
        assert!(owners.iter().all(|&r| r == 0));
    }

    #[test]
    fn exact_division_is_contiguous() {
        let mesh = build_sequence(SequenceKind::Uniform, 3, 2).unwrap();
        let owners = partition_leaves(&mesh, 4).unwrap();
        for q in 0..4u32 {
            let idx: Vec<usize> = owners
                .iter()
                .enumerate()
                .filter(|(_, &r)| r == q)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(idx.len(), 16);
            assert_eq!(idx[0], q as usize * 16);
        }
    }

    #[test]
    fn fig2_first_child_rule_tallies() {
        let mesh = fig2_mesh().unwrap();
        let part = partition_hierarchy(&mesh, 3).unwrap();
        // root and the refined first child both belong to rank 0
        assert!(part.internal_owner.iter().all(|&r| r == 0));
        assert_eq!(part.strict[2], vec![3, 1, 0]);
        assert_eq!(part.strict[1], vec![1, 1, 2]);
        assert_eq!(part.strict[0], vec![1, 0, 0]);
    }

    #[test]
    fn uniform_single_rank() {
        let mesh = build_sequence(SequenceKind::Uniform, 1, 2).unwrap();
        let part = partition_hierarchy(&mesh, 1).unwrap();
        assert!(part.leaf_owner.iter().all(|&r| r == 0));
        assert!(part.internal_owner.iter().all(|&r| r == 0));
    }

    /// Brute-force oracle: walk the tree bottom-up, propagating first-child
    /// ownership, and tally levels directly from the level meshes.
    fn oracle_tallies(mesh: &ForestMesh, p: usize) -> (Vec<Vec<u64>>, Vec<Vec<u64>>) {
        use std::collections::HashMap;
        let owners = partition_leaves(mesh, p).unwrap();
        let mut owner_map: HashMap<CellRef, Rank> = HashMap::new();
        for (leaf, &r) in mesh.leaves().iter().zip(&owners) {
            owner_map.insert(*leaf, r);
        }
        // bottom-up: repeatedly assign parents from child 0
        for level in (1..=mesh.max_level()).rev() {
            let cells: Vec<CellRef> = owner_map
                .keys()
                .filter(|c| c.level as usize == level)
                .copied()
                .collect();
            for cell in cells {
                let parent = cell.parent(mesh.dim()).unwrap();
                if cell.morton & ((1 << mesh.dim()) - 1) == 0 && mesh.contains(&parent) {
                    let r = owner_map[&cell];
                    owner_map.insert(parent, r);
                }
            }
        }
        let levels = mesh.max_level() + 1;
        let mut strict = vec![vec![0u64; p]; levels];
        let mut carried = vec![vec![0u64; p]; levels];
        for l in 0..levels {
            let lm = mesh.level_mesh(l).unwrap();
            for cell in &lm.cells {
                let r = owner_map[cell] as usize;
                carried[l][r] += 1;
                if lm.is_strict(cell) {
                    strict[l][r] += 1;
                }
            }
        }
        (strict, carried)
    }

    #[test]
    fn quadrant_tallies_match_bottom_up_oracle() {
        let mesh = build_sequence(SequenceKind::Quadrant, 4, 2).unwrap();
        let part = partition_hierarchy(&mesh, 8).unwrap();
        let (strict, carried) = oracle_tallies(&mesh, 8);
        assert_eq!(part.strict, strict);
        assert_eq!(part.carried, carried);
    }

    #[test]
    fn fig2_ghost_children() {
        let mesh = fig2_mesh().unwrap();
        let part = partition_hierarchy(&mesh, 3).unwrap();
        assert_eq!(ghost_children(&mesh, &part, 2).unwrap(), (1, 4));
        assert_eq!(ghost_children(&mesh, &part, 1).unwrap(), (3, 4));

        let single = partition_hierarchy(&mesh, 1).unwrap();
        assert_eq!(ghost_children(&mesh, &single, 1).unwrap(), (0, 4));
        assert_eq!(ghost_children(&mesh, &single, 2).unwrap(), (0, 4));
    }

    #[test]
    fn fig2_active_levels() {
        let mesh = fig2_mesh().unwrap();
        let part = partition_hierarchy(&mesh, 3).unwrap();
        let active = rank_active_levels(&part);
        assert_eq!(active[0], vec![0, 1, 2]);
        assert_eq!(active[1], vec![1, 2]);
        // rank 2's level-1 leaves persist in the level-2 mesh
        assert_eq!(active[2], vec![1, 2]);
    }

    #[test]
    fn uniform_active_levels() {
        let mesh = build_sequence(SequenceKind::Uniform, 2, 2).unwrap();
        let part = partition_hierarchy(&mesh, 4).unwrap();
        let active = rank_active_levels(&part);
        assert_eq!(active[0], vec![0, 1, 2]);
        for q in 1..4 {
            assert_eq!(active[q], vec![1, 2]);
        }
    }

    #[test]
    fn determinism() {
        let mesh = build_sequence(SequenceKind::Annulus, 5, 2).unwrap();
        let a = partition_hierarchy(&mesh, 7).unwrap();
        let b = partition_hierarchy(&mesh, 7).unwrap();
        assert_eq!(a.leaf_owner, b.leaf_owner);
        assert_eq!(a.internal_owner, b.internal_owner);
        assert_eq!(a.strict, b.strict);
    }

    #[test]
    fn interval_sizes_differ_by_at_most_one() {
        let mesh = build_sequence(SequenceKind::Circle, 4, 2).unwrap();
        for p in [1usize, 2, 3, 5, 7, 11] {
            let owners = partition_leaves(&mesh, p).unwrap();
            let mut sizes = vec![0usize; p];
            for &r in &owners {
                sizes[r as usize] += 1;
            }
            let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(max - min <= 1);
            // contiguity
            assert!(owners.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn perfect_partition_on_power_of_four_ranks() {
        let mesh = build_sequence(SequenceKind::Uniform, 3, 2).unwrap();
        let part = partition_hierarchy(&mesh, 16).unwrap();
        for level in 2..=3usize {
            let n = part.level_count(level);
            let max = *part.strict[level].iter().max().unwrap();
            assert_eq!(max, n / 16, "level {level}");
        }
    }
}
