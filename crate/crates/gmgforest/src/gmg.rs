//! Local-smoothing multigrid V-cycle with Chebyshev–Jacobi or damped
//! Jacobi smoothers, coarse solver, and the outer preconditioned
//! conjugate-gradient driver.
//!
//! The smoother on each level acts on S-class dofs only; I and L
//! components pass through untouched. Because every level starts its
//! correction from zero, the level residual needs just the blocks
//! `A^S`, `A^SI` and `A^IS`.

use crate::error::{Error, Result};
use crate::fem2d::{
    assemble_leaf, build_transfer, distribute_dofs, DofClass, LevelOperators, LevelSpace,
    SparseOperator,
};
use crate::forest::ForestMesh;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmootherKind {
    Jacobi,
    ChebyshevJacobi,
}

#[derive(Debug, Clone, Copy)]
pub struct SmootherConfig {
    pub kind: SmootherKind,
    /// Pre-/post-smoothing applications per level (a Chebyshev application
    /// is one full polynomial of the configured degree).
    pub steps: usize,
    /// Jacobi damping.
    pub omega: f64,
    /// Chebyshev polynomial degree (matrix-vector products per application).
    pub degree: usize,
    /// Targeted eigenvalue range as factors of the estimated largest
    /// eigenvalue of the diagonally preconditioned level matrix.
    pub eig_lo: f64,
    pub eig_hi: f64,
    /// CG iterations used for the eigenvalue estimate.
    pub eig_cg_iters: usize,
    /// Overrides the per-level eigenvalue estimation with a fixed range
    /// (used by equivalence oracles that must match bit-for-bit).
    pub explicit_range: Option<(f64, f64)>,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            kind: SmootherKind::ChebyshevJacobi,
            steps: 1,
            omega: 0.5,
            degree: 5,
            eig_lo: 0.08,
            eig_hi: 1.2,
            eig_cg_iters: 10,
            explicit_range: None,
        }
    }
}

impl SmootherConfig {
    /// Damped Jacobi with four steps, the point-smoother alternative.
    pub fn jacobi() -> Self {
        SmootherConfig {
            kind: SmootherKind::Jacobi,
            steps: 4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 || self.steps < 1 || self.eig_cg_iters < 1 {
            return Err(Error::InvalidConfig(
                "degree, steps and eigen-estimate iterations must be at least 1",
            ));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::InvalidConfig("jacobi damping must lie in (0, 1]"));
        }
        if self.eig_lo >= self.eig_hi {
            return Err(Error::InvalidConfig(
                "eigenvalue range factors must satisfy lo < hi",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseSolverKind {
    /// Exact dense factorization of the coarsest matrix.
    Direct,
    /// Chebyshev iteration with an a-priori degree for a 1e3 residual
    /// reduction over the full estimated spectrum.
    Chebyshev,
}

struct LevelData {
    space: LevelSpace,
    ops: LevelOperators,
    /// Inverse diagonal of `A^S`; zero outside the S class.
    inv_diag: Vec<f64>,
    s_dofs: Vec<usize>,
    /// Estimated largest eigenvalue of `D^-1 A^S`.
    lambda_max: f64,
    /// Transfer from the next coarser level to this one (absent on level 0).
    prolong: Option<SparseOperator>,
    restrict: Option<SparseOperator>,
}

enum CoarseSolver {
    Direct(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Chebyshev { range: (f64, f64), degree: usize },
}

pub struct MultigridHierarchy {
    levels: Vec<LevelData>,
    coarse: CoarseSolver,
    config: SmootherConfig,
}

impl MultigridHierarchy {
    pub fn build(mesh: &ForestMesh, config: SmootherConfig) -> Result<Self> {
        Self::build_with_coarse(mesh, config, CoarseSolverKind::Direct)
    }

    pub fn build_with_coarse(
        mesh: &ForestMesh,
        config: SmootherConfig,
        coarse_kind: CoarseSolverKind,
    ) -> Result<Self> {
        config.validate()?;
        let top = mesh.max_level();
        let mut levels = Vec::with_capacity(top + 1);
        for l in 0..=top {
            let space = distribute_dofs(mesh, l)?;
            let ops = crate::fem2d::assemble_level(mesh, &space)?;
            let n = space.num_dofs();
            let mut inv_diag = vec![0.0; n];
            let mut s_dofs = Vec::new();
            // boundary dofs carry condensed identity rows and stay zero
            // throughout; the smoother and the eigenvalue estimate skip them
            for i in 0..n {
                if space.class[i] == DofClass::S && !space.dirichlet[i] {
                    let d = ops.a_s.get(i, i);
                    if d == 0.0 {
                        return Err(Error::ZeroDiagonal(i));
                    }
                    inv_diag[i] = 1.0 / d;
                    s_dofs.push(i);
                }
            }
            let (prolong, restrict) = if l == 0 {
                (None, None)
            } else {
                let data: &LevelData = &levels[l - 1];
                let (p, r) = build_transfer(mesh, &data.space, &space)?;
                (Some(p), Some(r))
            };
            let lambda_max = match config.explicit_range {
                Some(_) => 0.0, // unused
                None => estimate_lambda_max(&ops.a_s, &inv_diag, &s_dofs, config.eig_cg_iters)?,
            };
            levels.push(LevelData {
                space,
                ops,
                inv_diag,
                s_dofs,
                lambda_max,
                prolong,
                restrict,
            });
        }
        let coarse = build_coarse_solver(&levels[0], coarse_kind)?;
        Ok(MultigridHierarchy {
            levels,
            coarse,
            config,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn leaf_space(&self) -> &LevelSpace {
        &self.levels[self.levels.len() - 1].space
    }

    /// In-place level smoother: S components relaxed, I and L untouched.
    /// `g` must already carry the interface correction (`g - A^SI x^I`).
    fn smooth(&self, l: usize, x: &mut [f64], g: &[f64]) {
        let lvl = &self.levels[l];
        for _ in 0..self.config.steps {
            match self.config.kind {
                SmootherKind::Jacobi => jacobi_sweep(lvl, self.config.omega, x, g),
                SmootherKind::ChebyshevJacobi => {
                    let range = self.chebyshev_range(l);
                    chebyshev_sweep(lvl, range, self.config.degree, x, g);
                }
            }
        }
    }

    fn chebyshev_range(&self, l: usize) -> (f64, f64) {
        match self.config.explicit_range {
            Some(r) => r,
            None => {
                let lm = self.levels[l].lambda_max;
                (self.config.eig_lo * lm, self.config.eig_hi * lm)
            }
        }
    }

    /// One multigrid V-cycle for the level-`l` problem `A u = g`.
    pub fn vcycle(&self, l: usize, g: &[f64]) -> Result<Vec<f64>> {
        let n = self.levels[l].space.num_dofs();
        if g.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: g.len(),
            });
        }
        Ok(self.vcycle_inner(l, g))
    }

    fn vcycle_inner(&self, l: usize, g: &[f64]) -> Vec<f64> {
        if l == 0 {
            return self.coarse_solve(g);
        }
        let lvl = &self.levels[l];
        let n = lvl.space.num_dofs();

        // pre-smooth from zero; only S components become nonzero
        let mut x = vec![0.0; n];
        self.smooth(l, &mut x, g);

        // residual on S and I rows; L rows of g pass through unchanged
        // because the residual matrix has no L rows and x^L = 0
        let mut ax = vec![0.0; n];
        lvl.ops.residual_matvec(&x, &mut ax);
        let r: Vec<f64> = (0..n).map(|i| g[i] - ax[i]).collect();

        // restrict and recurse; boundary rows of the coarse rhs are condensed
        let restrict = lvl.restrict.as_ref().expect("level > 0 has transfers");
        let mut gc = restrict.apply(&r);
        let coarse_space = &self.levels[l - 1].space;
        for i in 0..gc.len() {
            if coarse_space.dirichlet[i] {
                gc[i] = 0.0;
            }
        }
        let xc = self.vcycle_inner(l - 1, &gc);

        // prolongate and add; this populates I and L components
        let prolong = lvl.prolong.as_ref().expect("level > 0 has transfers");
        prolong.matvec_acc(1.0, &xc, &mut x);

        // post-smooth against the rhs corrected for interface coupling
        let mut gt = g.to_vec();
        lvl.ops.a_si.matvec_acc(-1.0, &x, &mut gt);
        self.smooth(l, &mut x, &gt);
        x
    }

    fn coarse_solve(&self, g: &[f64]) -> Vec<f64> {
        let lvl = &self.levels[0];
        match &self.coarse {
            CoarseSolver::Direct(lu) => {
                let rhs = DVector::from_column_slice(g);
                let sol = lu.solve(&rhs).expect("factorized matrix is invertible");
                sol.iter().copied().collect()
            }
            CoarseSolver::Chebyshev { range, degree } => {
                let mut x = vec![0.0; g.len()];
                chebyshev_iteration(
                    &lvl.ops.a_s,
                    &lvl.inv_diag,
                    &lvl.s_dofs,
                    *range,
                    *degree,
                    &mut x,
                    g,
                );
                x
            }
        }
    }

    /// Preconditioner application for the leaf problem: one V-cycle on the
    /// finest level, with constrained entries projected out afterwards.
    pub fn apply_preconditioner(&self, r: &[f64]) -> Result<Vec<f64>> {
        let top = self.levels.len() - 1;
        let space = &self.levels[top].space;
        let mut g = r.to_vec();
        space.zero_constrained(&mut g);
        let mut z = self.vcycle(top, &g)?;
        space.zero_constrained(&mut z);
        Ok(z)
    }
}

fn jacobi_sweep(lvl: &LevelData, omega: f64, x: &mut [f64], g: &[f64]) {
    let mut ax = vec![0.0; x.len()];
    lvl.ops.a_s.matvec(x, &mut ax);
    for &i in &lvl.s_dofs {
        x[i] += omega * lvl.inv_diag[i] * (g[i] - ax[i]);
    }
}

/// Chebyshev acceleration of the Jacobi iteration on the S block, damping
/// the eigenvalue range `[a, b]` of `D^-1 A^S` with `degree` matrix-vector
/// products (first-kind three-term recurrence).
fn chebyshev_sweep(lvl: &LevelData, (a, b): (f64, f64), degree: usize, x: &mut [f64], g: &[f64]) {
    chebyshev_iteration(
        &lvl.ops.a_s,
        &lvl.inv_diag,
        &lvl.s_dofs,
        (a, b),
        degree,
        x,
        g,
    );
}

fn chebyshev_iteration(
    a_s: &SparseOperator,
    inv_diag: &[f64],
    s_dofs: &[usize],
    (lo, hi): (f64, f64),
    degree: usize,
    x: &mut [f64],
    g: &[f64],
) {
    let theta = 0.5 * (hi + lo);
    let delta = 0.5 * (hi - lo);
    let sigma = theta / delta;
    let n = x.len();
    let mut ax = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut d = vec![0.0; n];

    a_s.matvec(x, &mut ax);
    for &i in s_dofs {
        z[i] = inv_diag[i] * (g[i] - ax[i]);
        d[i] = z[i] / theta;
    }
    let mut rho = 1.0 / sigma;
    for _ in 1..degree {
        for &i in s_dofs {
            x[i] += d[i];
        }
        a_s.matvec(x, &mut ax);
        for &i in s_dofs {
            z[i] = inv_diag[i] * (g[i] - ax[i]);
        }
        let rho_new = 1.0 / (2.0 * sigma - rho);
        for &i in s_dofs {
            d[i] = rho_new * rho * d[i] + 2.0 * rho_new / delta * z[i];
        }
        rho = rho_new;
    }
    for &i in s_dofs {
        x[i] += d[i];
    }
}

/// Estimates the largest eigenvalue of `D^-1 A` as the largest Ritz value
/// of the Lanczos tridiagonal built from a preconditioned CG run, seeded
/// with the zero-mean vector cycling through -5.5, -4.5, ..., 4.5, 5.5.
pub fn estimate_lambda_max(
    a: &SparseOperator,
    inv_diag: &[f64],
    s_dofs: &[usize],
    iters: usize,
) -> Result<f64> {
    let n = a.nrows;
    let mut r = vec![0.0; n];
    for (k, &i) in s_dofs.iter().enumerate() {
        r[i] = seed_value(k);
    }
    if s_dofs.is_empty() {
        return Ok(1.0);
    }
    let (alphas, betas) = cg_coefficients(a, inv_diag, s_dofs, &mut r, iters, 0.0);
    Ok(tridiagonal_eigen_bounds(&alphas, &betas).1)
}

/// Runs preconditioned CG from `x0 = 0` on the residual `r`, recording the
/// Lanczos coefficients. Stops after `iters` iterations, on breakdown, or
/// when the unpreconditioned residual drops below `rtol` times its start.
fn cg_coefficients(
    a: &SparseOperator,
    inv_diag: &[f64],
    s_dofs: &[usize],
    r: &mut [f64],
    iters: usize,
    rtol: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = a.nrows;
    let norm0 = norm2(r);
    let mut z = vec![0.0; n];
    for &i in s_dofs {
        z[i] = inv_diag[i] * r[i];
    }
    let mut p = z.clone();
    let mut rz = dot(r, &z);
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut ap = vec![0.0; n];
    for _ in 0..iters {
        if rz.abs() < f64::MIN_POSITIVE {
            break;
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        alphas.push(alpha);
        for i in 0..n {
            r[i] -= alpha * ap[i];
        }
        if norm2(r) <= rtol * norm0 {
            break;
        }
        for &i in s_dofs {
            z[i] = inv_diag[i] * r[i];
        }
        let rz_new = dot(r, &z);
        let beta = rz_new / rz;
        betas.push(beta);
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    (alphas, betas)
}

/// Extreme eigenvalues of the CG Lanczos tridiagonal.
fn tridiagonal_eigen_bounds(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let m = alphas.len();
    if m == 0 {
        return (1.0, 1.0);
    }
    let mut t = DMatrix::zeros(m, m);
    for k in 0..m {
        let mut dk = 1.0 / alphas[k];
        if k > 0 {
            dk += betas[k - 1] / alphas[k - 1];
        }
        t[(k, k)] = dk;
        if k + 1 < m {
            let off = betas[k].sqrt() / alphas[k];
            t[(k, k + 1)] = off;
            t[(k + 1, k)] = off;
        }
    }
    let eig = t.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

fn build_coarse_solver(lvl: &LevelData, kind: CoarseSolverKind) -> Result<CoarseSolver> {
    match kind {
        CoarseSolverKind::Direct => {
            let n = lvl.space.num_dofs();
            let mut m = lvl.ops.a_s.to_dense();
            // identity rows for dofs outside the S class keep the dense
            // solve well posed without affecting pass-through components
            for i in 0..n {
                if lvl.space.class[i] != DofClass::S {
                    m[(i, i)] = 1.0;
                }
            }
            let lu = m.lu();
            if lu.determinant().abs() < f64::MIN_POSITIVE {
                return Err(Error::SingularCoarseMatrix);
            }
            Ok(CoarseSolver::Direct(lu))
        }
        CoarseSolverKind::Chebyshev => {
            let (range, degree) = chebyshev_coarse_parameters(lvl)?;
            Ok(CoarseSolver::Chebyshev { range, degree })
        }
    }
}

/// Full-spectrum estimate by CG to relative tolerance 1e-3, then the
/// a-priori Chebyshev degree for a residual reduction by 1e3.
fn chebyshev_coarse_parameters(lvl: &LevelData) -> Result<((f64, f64), usize)> {
    if lvl.s_dofs.is_empty() {
        return Ok(((0.5, 1.5), 1));
    }
    let n = lvl.space.num_dofs();
    let mut r = vec![0.0; n];
    for (k, &i) in lvl.s_dofs.iter().enumerate() {
        r[i] = seed_value(k);
    }
    let (alphas, betas) =
        cg_coefficients(&lvl.ops.a_s, &lvl.inv_diag, &lvl.s_dofs, &mut r, 100, 1e-3);
    let (lo, hi) = tridiagonal_eigen_bounds(&alphas, &betas);
    let lo = lo.max(hi * 1e-12);
    let kappa = hi / lo;
    // error bound 2 q^t with q = (sqrt(kappa)-1)/(sqrt(kappa)+1)
    let q = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
    let degree = if q <= 0.0 {
        1
    } else {
        ((2.0e3_f64).ln() / (1.0 / q).ln()).ceil().max(1.0) as usize
    };
    Ok(((lo, hi), degree))
}

/// Entry `k` of the eigenvalue-estimate seed vector: cycles through
/// -5.5, -4.5, ..., 4.5, 5.5 with period 12, summing to zero per period.
pub fn seed_value(k: usize) -> f64 {
    -5.5 + (k % 12) as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of a preconditioned CG solve.
pub struct SolveStats {
    pub iterations: usize,
    /// Final unpreconditioned residual over the initial one.
    pub reduction: f64,
    /// `(iteration, residual norm)` per iteration.
    pub log: Vec<(usize, f64)>,
}

/// Preconditioned conjugate gradients for the leaf system, stopping on the
/// unpreconditioned residual `|b - Au| <= rtol |b|`. The preconditioner is
/// any symmetric positive map, typically
/// [`MultigridHierarchy::apply_preconditioner`].
pub fn pcg_solve(
    a: &SparseOperator,
    b: &[f64],
    precond: impl Fn(&[f64]) -> Result<Vec<f64>>,
    rtol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.nrows;
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let norm_b = norm2(b);
    let mut x = vec![0.0; n];
    let mut log = Vec::new();
    if norm_b == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                reduction: 0.0,
                log,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z = precond(&r)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iters {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm2(&r);
        log.push((it, res));
        if res <= rtol * norm_b {
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    reduction: res / norm_b,
                    log,
                },
            ));
        }
        z = precond(&r)?;
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    let res = norm2(&r) / norm_b;
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: res,
    })
}

/// Summary of a full mesh-to-solution run.
pub struct SolveReport {
    pub levels: usize,
    pub dofs: usize,
    pub stats: SolveStats,
    pub u: Vec<f64>,
}

/// Builds spaces and hierarchy for the mesh and solves the Poisson problem
/// with right hand side `f` to the given relative tolerance.
pub fn solve_poisson(
    mesh: &ForestMesh,
    config: SmootherConfig,
    f: impl Fn(f64, f64) -> f64,
    rtol: f64,
) -> Result<(SolveReport, LevelSpace)> {
    let space = crate::fem2d::leaf_space(mesh)?;
    let (a, b) = assemble_leaf(mesh, &space, f)?;
    let hierarchy = MultigridHierarchy::build(mesh, config)?;
    let (u, stats) = pcg_solve(&a, &b, |r| hierarchy.apply_preconditioner(r), rtol, 200)?;
    Ok((
        SolveReport {
            levels: hierarchy.num_levels(),
            dofs: space.num_free(),
            stats,
            u,
        },
        space,
    ))
}
