//! Conforming bilinear (Q1) finite elements on 2D level meshes and on the
//! leaf mesh: dof enumeration, S/I/L classification, hanging-node
//! constraints and sparse assembly of the Poisson bilinear form.
//!
//! Dofs live on the distinct vertices of a mesh view. On level `l` the view
//! is [`ForestMesh::level_mesh`], i.e. the level-`l` cells plus all coarser
//! leaves; the leaf mesh coincides with the view of the deepest level, so
//! the leaf space and the finest level space are identified dof by dof.

use crate::error::{Error, Result};
use crate::forest::{CellRef, ForestMesh};
use crate::morton;
use std::collections::HashMap;
use std::io::Write;

/// Class of a dof in the local-smoothing splitting `V = V^S + V^I + V^L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofClass {
    /// Touches only cells of the strict level mesh; smoothed on this level.
    S,
    /// Lies on the interface between the strict region and coarser leaves
    /// (including hanging edge midpoints); passed through by the smoother.
    I,
    /// Touches only coarser leaves; carried along unchanged.
    L,
}

/// Q1 dof layout for one mesh view.
pub struct LevelSpace {
    pub level: usize,
    /// Vertex coordinates in units of `2^-max_level` of the mesh, on the
    /// integer grid `[0, 2^max_level]^2`; index = dof number.
    pub vertices: Vec<(u32, u32)>,
    pub class: Vec<DofClass>,
    pub dirichlet: Vec<bool>,
    /// Hanging vertices, constrained to the two endpoints of the coarse
    /// edge they sit on, each with weight 1/2.
    pub constraints: Vec<Option<[usize; 2]>>,
    scale: u32,
    index: HashMap<u64, usize>,
}

fn vertex_key(x: u32, y: u32) -> u64 {
    ((x as u64) << 32) | y as u64
}

impl LevelSpace {
    pub fn num_dofs(&self) -> usize {
        self.vertices.len()
    }

    pub fn dof_at(&self, x: u32, y: u32) -> Option<usize> {
        self.index.get(&vertex_key(x, y)).copied()
    }

    /// Physical coordinates of a dof on `[-1,1]^2`.
    pub fn position(&self, dof: usize) -> (f64, f64) {
        let (x, y) = self.vertices[dof];
        let h = 2.0 / self.scale as f64;
        (-1.0 + x as f64 * h, -1.0 + y as f64 * h)
    }

    /// A dof is free when it is neither constrained nor on the boundary.
    pub fn is_free(&self, dof: usize) -> bool {
        !self.dirichlet[dof] && self.constraints[dof].is_none()
    }

    pub fn num_free(&self) -> usize {
        (0..self.num_dofs()).filter(|&i| self.is_free(i)).count()
    }

    /// Overwrites constrained entries with the interpolated master values.
    pub fn distribute(&self, x: &mut [f64]) {
        for (i, c) in self.constraints.iter().enumerate() {
            if let Some([a, b]) = c {
                x[i] = 0.5 * (x[*a] + x[*b]);
            }
        }
    }

    /// Zeroes constrained and boundary entries.
    pub fn zero_constrained(&self, x: &mut [f64]) {
        for i in 0..self.num_dofs() {
            if !self.is_free(i) {
                x[i] = 0.0;
            }
        }
    }
}

/// Square or rectangular sparse matrix in compressed row form.
pub struct SparseOperator {
    pub nrows: usize,
    pub ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<HashMap<usize, f64>> = vec![HashMap::new(); nrows];
        for &(i, j, v) in triplets {
            *per_row[i].entry(j).or_insert(0.0) += v;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in per_row {
            let mut entries: Vec<(usize, f64)> = row.into_iter().collect();
            entries.sort_unstable_by_key(|e| e.0);
            for (j, v) in entries {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseOperator {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&j, &v)| (j, v))
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// `y += s * A x`.
    pub fn matvec_acc(&self, s: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] += s * acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> SparseOperator {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                triplets.push((self.col_idx[k], i, self.values[k]));
            }
        }
        SparseOperator::from_triplets(self.ncols, self.nrows, &triplets)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }

    /// Plain coordinate-format Matrix Market export.
    pub fn write_matrix_market(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                writeln!(
                    w,
                    "{} {} {:.17e}",
                    i + 1,
                    self.col_idx[k] + 1,
                    self.values[k]
                )?;
            }
        }
        Ok(())
    }
}

/// The three operator blocks needed on one level: the strict-region matrix
/// used for smoothing plus the couplings across the refinement interface.
/// All blocks are stored over the full dof index space of the level, with
/// rows/columns outside their class empty.
pub struct LevelOperators {
    pub a_s: SparseOperator,
    pub a_si: SparseOperator,
    pub a_is: SparseOperator,
}

impl LevelOperators {
    /// `y = (A^S + A^SI + A^IS) x`; the residual matrix on S and I rows.
    pub fn residual_matvec(&self, x: &[f64], y: &mut [f64]) {
        self.a_s.matvec(x, y);
        self.a_si.matvec_acc(1.0, x, y);
        self.a_is.matvec_acc(1.0, x, y);
    }
}

/// Element stiffness of the Laplacian for Q1 on an axis-aligned square,
/// integrated with 2x2 Gauss quadrature (exact here, and independent of the
/// cell size in 2D). Local vertex order: (0,0), (1,0), (0,1), (1,1).
pub fn element_stiffness() -> [[f64; 4]; 4] {
    let corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
    let g = 0.5 / 3.0_f64.sqrt();
    let pts = [0.5 - g, 0.5 + g];
    let mut k = [[0.0; 4]; 4];
    for &gx in &pts {
        for &gy in &pts {
            // grad of N_i(x,y) = lx(x)*ly(y) with l0 = 1-t, l1 = t
            let grads: Vec<(f64, f64)> = corners
                .iter()
                .map(|&(cx, cy)| {
                    let lx = if cx == 0.0 { 1.0 - gx } else { gx };
                    let ly = if cy == 0.0 { 1.0 - gy } else { gy };
                    let dlx = if cx == 0.0 { -1.0 } else { 1.0 };
                    let dly = if cy == 0.0 { -1.0 } else { 1.0 };
                    (dlx * ly, lx * dly)
                })
                .collect();
            for i in 0..4 {
                for j in 0..4 {
                    k[i][j] += 0.25 * (grads[i].0 * grads[j].0 + grads[i].1 * grads[j].1);
                }
            }
        }
    }
    k
}

fn cell_corner_vertices(cell: &CellRef, max_level: usize) -> [(u32, u32); 4] {
    let c = cell.coords(2);
    let shift = max_level - cell.level as usize;
    let mut out = [(0u32, 0u32); 4];
    for (k, (dx, dy)) in [(0u32, 0u32), (1, 0), (0, 1), (1, 1)].iter().enumerate() {
        out[k] = ((c[0] + dx) << shift, (c[1] + dy) << shift);
    }
    out
}

/// Builds the Q1 dof layout for the level-`level` view of the mesh. The
/// view of the deepest level is the leaf mesh; its constraint set is the
/// hanging-node elimination of the leaf discretization.
pub fn distribute_dofs(mesh: &ForestMesh, level: usize) -> Result<LevelSpace> {
    if mesh.dim() != 2 {
        return Err(Error::UnsupportedDim(mesh.dim()));
    }
    let view = mesh.level_mesh(level)?;
    let max_level = mesh.max_level();
    let scale = 1u32 << max_level;

    // one dof per distinct vertex, numbered in vertex-key order
    let mut keys: Vec<u64> = Vec::new();
    for cell in &view.cells {
        for (x, y) in cell_corner_vertices(cell, max_level) {
            keys.push(vertex_key(x, y));
        }
    }
    keys.sort_unstable();
    keys.dedup();
    let index: HashMap<u64, usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let vertices: Vec<(u32, u32)> = keys.iter().map(|&k| ((k >> 32) as u32, k as u32)).collect();
    let n = vertices.len();

    // classification: which kind of cell does each vertex touch as a corner
    let mut touches_strict = vec![false; n];
    let mut touches_lower = vec![false; n];
    let mut constraints: Vec<Option<[usize; 2]>> = vec![None; n];
    for cell in &view.cells {
        let strict = view.is_strict(cell);
        let vs = cell_corner_vertices(cell, max_level);
        for &(x, y) in &vs {
            let d = index[&vertex_key(x, y)];
            if strict {
                touches_strict[d] = true;
            } else {
                touches_lower[d] = true;
            }
        }
        // a vertex sitting at the midpoint of one of this cell's edges is
        // hanging, constrained to the edge endpoints (one-irregularity
        // guarantees the midpoint granularity is enough)
        let edges = [(0usize, 1usize), (2, 3), (0, 2), (1, 3)];
        for (a, b) in edges {
            let mx = (vs[a].0 + vs[b].0) / 2;
            let my = (vs[a].1 + vs[b].1) / 2;
            if (mx, my) == vs[a] || (mx, my) == vs[b] {
                continue; // cell at the deepest grid resolution
            }
            if let Some(h) = index.get(&vertex_key(mx, my)).copied() {
                let ma = index[&vertex_key(vs[a].0, vs[a].1)];
                let mb = index[&vertex_key(vs[b].0, vs[b].1)];
                constraints[h] = Some([ma, mb]);
            }
        }
    }

    let mut class = Vec::with_capacity(n);
    for i in 0..n {
        let c = if touches_strict[i] && touches_lower[i] {
            DofClass::I
        } else if touches_strict[i] && constraints[i].is_some() {
            // hanging midpoint on the refinement edge: part of the interface
            DofClass::I
        } else if touches_strict[i] {
            DofClass::S
        } else {
            DofClass::L
        };
        class.push(c);
    }

    let dirichlet: Vec<bool> = vertices
        .iter()
        .map(|&(x, y)| x == 0 || y == 0 || x == scale || y == scale)
        .collect();

    Ok(LevelSpace {
        level,
        vertices,
        class,
        dirichlet,
        constraints,
        scale,
        index,
    })
}

/// The dof layout of the leaf discretization; identical vertex set and
/// numbering as the deepest level space.
pub fn leaf_space(mesh: &ForestMesh) -> Result<LevelSpace> {
    distribute_dofs(mesh, mesh.max_level())
}

/// Expands a local dof into (global dof, weight) pairs, resolving hanging
/// constraints into the masters.
fn expand(space: &LevelSpace, dof: usize) -> Vec<(usize, f64)> {
    match space.constraints[dof] {
        Some([a, b]) => vec![(a, 0.5), (b, 0.5)],
        None => vec![(dof, 1.0)],
    }
}

/// Assembles the level operator blocks over the strict cells of the view:
/// the smoothing matrix `A^S` (Dirichlet rows condensed to the identity)
/// and the interface couplings `A^SI`, `A^IS = (A^SI)^T`.
pub fn assemble_level(mesh: &ForestMesh, space: &LevelSpace) -> Result<LevelOperators> {
    let view = mesh.level_mesh(space.level)?;
    let k = element_stiffness();
    let n = space.num_dofs();
    let mut t_s = Vec::new();
    let mut t_si = Vec::new();
    let mut t_is = Vec::new();
    for cell in view.strict_cells() {
        let vs = cell_corner_vertices(cell, mesh.max_level());
        let dofs: Vec<usize> = vs
            .iter()
            .map(|&(x, y)| space.dof_at(x, y).expect("cell vertex has a dof"))
            .collect();
        for i in 0..4 {
            for (gi, wi) in expand(space, dofs[i]) {
                if space.dirichlet[gi] {
                    continue;
                }
                for j in 0..4 {
                    for (gj, wj) in expand(space, dofs[j]) {
                        if space.dirichlet[gj] {
                            continue;
                        }
                        let v = wi * wj * k[i][j];
                        match (space.class[gi], space.class[gj]) {
                            (DofClass::S, DofClass::S) => t_s.push((gi, gj, v)),
                            (DofClass::S, DofClass::I) => t_si.push((gi, gj, v)),
                            (DofClass::I, DofClass::S) => t_is.push((gi, gj, v)),
                            _ => {} // I-I couplings are never used: x^I is
                                    // only set by prolongation, after which
                                    // only S rows are smoothed
                        }
                    }
                }
            }
        }
    }
    // identity diagonal for condensed boundary rows of the smoothing block
    for i in 0..n {
        if space.dirichlet[i] && space.class[i] == DofClass::S {
            t_s.push((i, i, 1.0));
        }
    }
    Ok(LevelOperators {
        a_s: SparseOperator::from_triplets(n, n, &t_s),
        a_si: SparseOperator::from_triplets(n, n, &t_si),
        a_is: SparseOperator::from_triplets(n, n, &t_is),
    })
}

/// Assembles the plain stiffness matrix over the strict cells without
/// boundary condensation or class routing (used by consistency oracles).
pub fn assemble_level_raw(mesh: &ForestMesh, space: &LevelSpace) -> Result<SparseOperator> {
    let view = mesh.level_mesh(space.level)?;
    let k = element_stiffness();
    let n = space.num_dofs();
    let mut triplets = Vec::new();
    for cell in view.strict_cells() {
        let vs = cell_corner_vertices(cell, mesh.max_level());
        let dofs: Vec<usize> = vs
            .iter()
            .map(|&(x, y)| space.dof_at(x, y).expect("cell vertex has a dof"))
            .collect();
        for i in 0..4 {
            for (gi, wi) in expand(space, dofs[i]) {
                for j in 0..4 {
                    for (gj, wj) in expand(space, dofs[j]) {
                        triplets.push((gi, gj, wi * wj * k[i][j]));
                    }
                }
            }
        }
    }
    Ok(SparseOperator::from_triplets(n, n, &triplets))
}

/// Assembles the constrained leaf system for `-Δu = f` with homogeneous
/// Dirichlet boundary: a cell loop over all leaves with hanging-node
/// condensation, identity rows for constrained and boundary dofs, and a
/// right hand side from 2x2 Gauss quadrature of `f`.
pub fn assemble_leaf(
    mesh: &ForestMesh,
    space: &LevelSpace,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(SparseOperator, Vec<f64>)> {
    let k = element_stiffness();
    let n = space.num_dofs();
    let mut triplets = Vec::new();
    let mut b = vec![0.0; n];
    let g = 0.5 / 3.0_f64.sqrt();
    let pts = [0.5 - g, 0.5 + g];
    for cell in mesh.leaves() {
        let vs = cell_corner_vertices(cell, mesh.max_level());
        let dofs: Vec<usize> = vs
            .iter()
            .map(|&(x, y)| space.dof_at(x, y).expect("leaf vertex has a dof"))
            .collect();
        let (lo, hi) = cell.bounds(2);
        let h = hi[0] - lo[0];
        // element load vector
        let mut be = [0.0; 4];
        for &gx in &pts {
            for &gy in &pts {
                let fx = f(lo[0] + gx * h, lo[1] + gy * h);
                let shapes = [
                    (1.0 - gx) * (1.0 - gy),
                    gx * (1.0 - gy),
                    (1.0 - gx) * gy,
                    gx * gy,
                ];
                for i in 0..4 {
                    be[i] += 0.25 * h * h * fx * shapes[i];
                }
            }
        }
        for i in 0..4 {
            for (gi, wi) in expand(space, dofs[i]) {
                if space.dirichlet[gi] {
                    continue;
                }
                b[gi] += wi * be[i];
                for j in 0..4 {
                    for (gj, wj) in expand(space, dofs[j]) {
                        if space.dirichlet[gj] {
                            continue;
                        }
                        triplets.push((gi, gj, wi * wj * k[i][j]));
                    }
                }
            }
        }
    }
    for i in 0..n {
        if !space.is_free(i) {
            triplets.push((i, i, 1.0));
            b[i] = 0.0;
        }
    }
    Ok((SparseOperator::from_triplets(n, n, &triplets), b))
}

/// Builds the grid transfer between two consecutive level spaces: the
/// prolongation `P` embeds the coarse space into the fine one (identity on
/// persisting vertices, bilinear weights 1/2 and 1/4 on new ones), and the
/// restriction is its transpose.
pub fn build_transfer(
    mesh: &ForestMesh,
    coarse: &LevelSpace,
    fine: &LevelSpace,
) -> Result<(SparseOperator, SparseOperator)> {
    if fine.level != coarse.level + 1 {
        return Err(Error::NonConsecutiveLevels(coarse.level, fine.level));
    }
    let max_level = mesh.max_level();
    let mut triplets = Vec::new();
    for (fd, &(vx, vy)) in fine.vertices.iter().enumerate() {
        // deepest cell of the coarse view whose closed box contains the
        // vertex; ties toward the upper-right cell, which cannot change the
        // resulting weights because the coarse space is continuous
        let mut found = None;
        for level in (0..=coarse.level).rev() {
            let shift = max_level - level;
            let top = (1u32 << level) - 1;
            let cx = (vx >> shift).min(top);
            let cy = (vy >> shift).min(top);
            let cell = CellRef {
                tree_id: 0,
                level: level as u8,
                morton: morton::encode([cx, cy, 0], level, 2),
            };
            let in_view = if level == coarse.level {
                mesh.contains(&cell)
            } else {
                mesh.is_leaf(&cell)
            };
            if in_view {
                found = Some(cell);
                break;
            }
        }
        let cell = found.expect("the root covers every vertex");
        let vs = cell_corner_vertices(&cell, max_level);
        let span = (vs[1].0 - vs[0].0) as f64;
        let xi = (vx - vs[0].0) as f64 / span;
        let eta = (vy - vs[0].1) as f64 / span;
        let weights = [
            (1.0 - xi) * (1.0 - eta),
            xi * (1.0 - eta),
            (1.0 - xi) * eta,
            xi * eta,
        ];
        for (corner, &w) in vs.iter().zip(&weights) {
            if w != 0.0 {
                let cd = coarse
                    .dof_at(corner.0, corner.1)
                    .expect("coarse cell corner has a dof");
                triplets.push((fd, cd, w));
            }
        }
    }
    let p = SparseOperator::from_triplets(fine.num_dofs(), coarse.num_dofs(), &triplets);
    let r = p.transpose();
    Ok((p, r))
}

/// L2 norm of `u_h - exact` over the leaf mesh, with 3x3 Gauss quadrature
/// per cell. Constrained entries of `u` are interpolated first.
pub fn l2_error(
    mesh: &ForestMesh,
    space: &LevelSpace,
    u: &[f64],
    exact: impl Fn(f64, f64) -> f64,
) -> f64 {
    let mut v = u.to_vec();
    space.distribute(&mut v);
    let s = (0.6_f64).sqrt();
    let pts = [
        (0.5 - 0.5 * s, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 + 0.5 * s, 5.0 / 18.0),
    ];
    let mut acc = 0.0;
    for cell in mesh.leaves() {
        let vs = cell_corner_vertices(cell, mesh.max_level());
        let dofs: Vec<usize> = vs
            .iter()
            .map(|&(x, y)| space.dof_at(x, y).expect("leaf vertex has a dof"))
            .collect();
        let (lo, hi) = cell.bounds(2);
        let h = hi[0] - lo[0];
        for &(gx, wx) in &pts {
            for &(gy, wy) in &pts {
                let uh = v[dofs[0]] * (1.0 - gx) * (1.0 - gy)
                    + v[dofs[1]] * gx * (1.0 - gy)
                    + v[dofs[2]] * (1.0 - gx) * gy
                    + v[dofs[3]] * gx * gy;
                let d = uh - exact(lo[0] + gx * h, lo[1] + gy * h);
                acc += wx * wy * h * h * d * d;
            }
        }
    }
    acc.sqrt()
}
