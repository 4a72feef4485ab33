//! The four mesh refinement sequences used throughout: uniform, circle,
//! quadrant and annulus, each built by repeated marking plus closure, and
//! the built-in 7-cell example mesh.

use crate::error::{Error, Result};
use crate::forest::{CellRef, ForestMesh};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceKind {
    Uniform,
    Circle,
    Quadrant,
    Annulus,
    /// The built-in 7-cell example mesh (ignores the depth argument).
    Fig2,
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SequenceKind::Uniform => "uniform",
            SequenceKind::Circle => "circle",
            SequenceKind::Quadrant => "quadrant",
            SequenceKind::Annulus => "annulus",
            SequenceKind::Fig2 => "fig2",
        };
        f.write_str(s)
    }
}

impl FromStr for SequenceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(SequenceKind::Uniform),
            "circle" => Ok(SequenceKind::Circle),
            "quadrant" => Ok(SequenceKind::Quadrant),
            "annulus" => Ok(SequenceKind::Annulus),
            "fig2" => Ok(SequenceKind::Fig2),
            other => Err(format!("unknown mesh sequence `{other}`")),
        }
    }
}

/// Signed center coordinates of a cell, in units of `2^-(level)` relative to
/// the domain center: coordinate = `n / 2^level` with `n` always odd.
fn center_numerators(cell: &CellRef, dim: usize) -> [i64; 3] {
    let c = cell.coords(dim);
    let half = 1i64 << cell.level;
    let mut n = [0i64; 3];
    for axis in 0..dim {
        n[axis] = (2 * c[axis] as i64 + 1) - half;
    }
    n
}

/// `|center|^2 * 4^level`, exact.
fn center_dist_sq_scaled(cell: &CellRef, dim: usize) -> i128 {
    let n = center_numerators(cell, dim);
    n[..dim].iter().map(|&v| (v as i128) * (v as i128)).sum()
}

/// Squared distance from the closed cell box to the domain center.
fn box_dist_sq(cell: &CellRef, dim: usize) -> f64 {
    let (lo, hi) = cell.bounds(dim);
    let mut d2 = 0.0;
    for axis in 0..dim {
        let closest = 0.0f64.clamp(lo[axis], hi[axis]);
        d2 += closest * closest;
    }
    d2
}

/// Exact test `a/b <= |center| <= c/d` (squared radii `a²/b²`, `c²/d²`).
fn center_in_shell(cell: &CellRef, dim: usize, lo: (i128, i128), hi: (i128, i128)) -> bool {
    let scale = 1i128 << (2 * cell.level as u32); // 4^level
    let d2 = center_dist_sq_scaled(cell, dim);
    let (ln, ld) = lo;
    let (hn, hd) = hi;
    d2 * ld * ld >= ln * ln * scale && d2 * hd * hd <= hn * hn * scale
}

fn refine_where(mesh: &ForestMesh, pred: impl Fn(&CellRef) -> bool) -> Result<ForestMesh> {
    let marked: Vec<CellRef> = mesh.leaves().iter().filter(|c| pred(c)).copied().collect();
    mesh.refine(&marked)
}

/// Builds one of the recursive refinement sequences over `[-1,1]^dim`,
/// with the finest cells on level `depth`.
pub fn build_sequence(kind: SequenceKind, depth: usize, dim: usize) -> Result<ForestMesh> {
    if let SequenceKind::Fig2 = kind {
        return fig2_mesh();
    }
    if depth < 1 {
        return Err(Error::InvalidDepth {
            kind: "sequence",
            depth,
            reason: "at least one refinement is required",
        });
    }
    let mut mesh = ForestMesh::single_root(dim)?;
    match kind {
        SequenceKind::Uniform => {
            for _ in 0..depth {
                mesh = refine_where(&mesh, |_| true)?;
            }
        }
        SequenceKind::Circle => {
            let radius = 1.0 / (4.0 * std::f64::consts::PI);
            let r2 = radius * radius;
            for _ in 0..depth {
                mesh = refine_where(&mesh, |c| box_dist_sq(c, dim) <= r2)?;
            }
        }
        SequenceKind::Quadrant => {
            mesh = refine_where(&mesh, |_| true)?;
            for _ in 0..depth.saturating_sub(1) {
                mesh = refine_where(&mesh, |c| {
                    center_numerators(c, dim)[..dim].iter().all(|&n| n < 0)
                })?;
            }
        }
        SequenceKind::Annulus => {
            if depth < 4 {
                return Err(Error::InvalidDepth {
                    kind: "annulus",
                    depth,
                    reason: "needs depth >= 4 so the uniform stage has at least one step",
                });
            }
            for _ in 0..depth - 3 {
                mesh = refine_where(&mesh, |_| true)?;
            }
            // center inside the ball of radius 0.55 = 11/20
            mesh = refine_where(&mesh, |c| center_in_shell(c, dim, (0, 1), (11, 20)))?;
            // shell between 0.3 = 3/10 and 0.43 = 43/100
            mesh = refine_where(&mesh, |c| center_in_shell(c, dim, (3, 10), (43, 100)))?;
            // shell between 0.335 = 67/200 and 0.39 = 39/100
            mesh = refine_where(&mesh, |c| center_in_shell(c, dim, (67, 200), (39, 100)))?;
        }
        SequenceKind::Fig2 => unreachable!(),
    }
    Ok(mesh)
}

/// The 7-leaf example mesh: refine the root, then its first child.
pub fn fig2_mesh() -> Result<ForestMesh> {
    let mesh = ForestMesh::single_root(2)?;
    let mesh = mesh.refine(&[CellRef::root(0)])?;
    let first = mesh.leaves()[0];
    mesh.refine(&[first])
}
