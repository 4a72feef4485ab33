//! Parallel-complexity model of the partitioned multigrid hierarchy and
//! the communication-volume metric, plus the sweep drivers behind the
//! efficiency and communication curves.
//!
//! All tallies are exact integers; ratios are exact rationals.

use crate::error::Result;
use crate::forest::ForestMesh;
use crate::partition::{self, HierarchyPartition};
use crate::sequences::{build_sequence, SequenceKind};
use num_rational::Ratio;
use std::io::Write;

/// Workload figures for one (mesh, partition) configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub n_ranks: usize,
    /// `N_ℓ`: number of cells strictly on each level.
    pub level_counts: Vec<u64>,
    /// `W_ℓ = max_p N_{ℓ,p}` per level (index 0 holds the coarse term `W_0`).
    pub level_work: Vec<u64>,
    /// `W_opt = (W_0 + Σ_{ℓ≥1} N_ℓ) / p`.
    pub w_opt: Ratio<u64>,
    /// `W_sync = Σ_ℓ ⌈N_ℓ/p⌉`.
    pub w_sync: u64,
    /// `W = W_0 + Σ_{ℓ≥1} W_ℓ`.
    pub w: u64,
    /// Partitioning efficiency `η = W_opt / W`.
    pub eta: Ratio<u64>,
}

/// Evaluates the workload model. By default the coarse solver cost `W_0`
/// is the level-0 cell work, treated like any other level; `w0_override`
/// replaces it with a fixed constant.
pub fn compute_balance(part: &HierarchyPartition, w0_override: Option<u64>) -> BalanceReport {
    let p = part.n_ranks as u64;
    let levels = part.num_levels();
    let level_counts: Vec<u64> = (0..levels).map(|l| part.level_count(l)).collect();
    let mut level_work: Vec<u64> = part
        .strict
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .collect();

    let fine_cells: u64 = level_counts[1..].iter().sum();
    let (w0_opt_num, w0_sync, w0_work) = match w0_override {
        // the override is a fixed cost, not divided among ranks
        Some(c) => (c * p, c, c),
        None => (level_counts[0], level_counts[0].div_ceil(p), level_work[0]),
    };
    level_work[0] = w0_work;

    let w_opt = Ratio::new(w0_opt_num + fine_cells, p);
    let w_sync = w0_sync
        + level_counts[1..]
            .iter()
            .map(|&n| n.div_ceil(p))
            .sum::<u64>();
    let w = w0_work + level_work[1..].iter().sum::<u64>();
    let eta = w_opt / w;

    BalanceReport {
        n_ranks: part.n_ranks,
        level_counts,
        level_work,
        w_opt,
        w_sync,
        w,
        eta,
    }
}

/// Total ghost-children count over all level transfers `ℓ-1 ↔ ℓ`,
/// returned as `(ghost, children)`.
pub fn total_ghost_children(mesh: &ForestMesh, part: &HierarchyPartition) -> Result<(u64, u64)> {
    let mut ghost = 0u64;
    let mut children = 0u64;
    for level in 1..=mesh.max_level() {
        let (g, c) = partition::ghost_children(mesh, part, level)?;
        ghost += g;
        children += c;
    }
    Ok((ghost, children))
}

/// One row of a sweep over (sequence, depth, rank count) configurations.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub kind: SequenceKind,
    pub dim: usize,
    pub depth: usize,
    pub n_ranks: usize,
    pub leaves: u64,
    pub total_cells: u64,
    pub report: BalanceReport,
    pub ghost: u64,
    pub children: u64,
    /// ghost / children; zero for meshes without level transfers.
    pub comm_ratio: Ratio<u64>,
    /// Set when the configuration has fewer than 1000 leaves per rank.
    pub under_1000: bool,
}

/// Evaluates the balance model and communication metric for every
/// `(depth, p)` combination. Each mesh is built once and reused.
pub fn sweep(
    kind: SequenceKind,
    dim: usize,
    depths: &[usize],
    rank_counts: &[usize],
    w0_override: Option<u64>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &depth in depths {
        let mesh = build_sequence(kind, depth, dim)?;
        for &p in rank_counts {
            let part = partition::partition_hierarchy(&mesh, p)?;
            let report = compute_balance(&part, w0_override);
            let (ghost, children) = total_ghost_children(&mesh, &part)?;
            rows.push(SweepRow {
                kind,
                dim,
                depth,
                n_ranks: p,
                leaves: mesh.num_leaves() as u64,
                total_cells: mesh.num_cells() as u64,
                comm_ratio: if children == 0 {
                    Ratio::from_integer(0)
                } else {
                    Ratio::new(ghost, children)
                },
                ghost,
                children,
                under_1000: mesh.num_leaves() < 1000 * p,
                report,
            });
        }
    }
    Ok(rows)
}

/// Formats a value with six significant digits in plain decimal notation.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    // trim trailing zeros but keep at least one digit after the point
    if s.contains('.') {
        let t = s.trim_end_matches('0');
        let t = t.strip_suffix('.').unwrap_or(t);
        t.to_string()
    } else {
        s
    }
}

pub const CSV_HEADER: &str =
    "kind,dim,L,p,leaves,total_cells,W_opt,W_sync,W,eta,comm_ratio,under_1000_flag";

/// Writes sweep rows in the versioned CSV format shared by the efficiency
/// and communication reports.
pub fn write_csv(rows: &[SweepRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "# gmgforest sweep csv, schema v1")?;
    writeln!(w, "{CSV_HEADER}")?;
    for row in rows {
        let r = &row.report;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.kind,
            row.dim,
            row.depth,
            row.n_ranks,
            row.leaves,
            row.total_cells,
            sig6(ratio_f64(r.w_opt)),
            r.w_sync,
            r.w,
            sig6(ratio_f64(r.eta)),
            sig6(ratio_f64(row.comm_ratio)),
            row.under_1000 as u8,
        )?;
    }
    Ok(())
}

pub fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::partition_hierarchy;
    use crate::sequences::fig2_mesh;

    #[test]
    fn fig2_worked_example_is_exact() {
        let mesh = fig2_mesh().unwrap();
        let part = partition_hierarchy(&mesh, 3).unwrap();
        let r = compute_balance(&part, None);
        assert_eq!(r.w_opt, Ratio::from_integer(3));
        assert_eq!(r.w_sync, 5);
        assert_eq!(r.w, 6);
        assert_eq!(r.eta, Ratio::new(1, 2));
        assert_eq!(r.level_work, vec![1, 2, 3]);
    }

    #[test]
    fn single_rank_efficiency_is_one() {
        let mesh = fig2_mesh().unwrap();
        let part = partition_hierarchy(&mesh, 1).unwrap();
        let r = compute_balance(&part, None);
        assert_eq!(r.eta, Ratio::from_integer(1));
        assert_eq!(r.w_opt, Ratio::from_integer(9));
    }

    #[test]
    fn uniform_two_levels_four_ranks() {
        let mesh = crate::sequences::build_sequence(SequenceKind::Uniform, 2, 2).unwrap();
        let part = partition_hierarchy(&mesh, 4).unwrap();
        let r = compute_balance(&part, None);
        assert_eq!(r.level_counts, vec![1, 4, 16]);
        assert_eq!(r.w_opt, Ratio::new(21, 4));
        assert_eq!(r.w, 6);
        assert_eq!(r.eta, Ratio::new(21, 24));
    }

    #[test]
    fn w0_override_changes_coarse_term_only() {
        let mesh = fig2_mesh().unwrap();
        let part = partition_hierarchy(&mesh, 3).unwrap();
        let r = compute_balance(&part, Some(10));
        assert_eq!(r.w, 10 + 2 + 3);
        assert_eq!(r.w_sync, 10 + 2 + 2);
        assert_eq!(r.w_opt, Ratio::new(10 * 3 + 8, 3));
    }

    #[test]
    fn sync_bound_between_opt_and_w() {
        for p in [1usize, 2, 3, 5, 8] {
            let mesh = crate::sequences::build_sequence(SequenceKind::Annulus, 5, 2).unwrap();
            let part = partition_hierarchy(&mesh, p).unwrap();
            let r = compute_balance(&part, None);
            assert!(Ratio::from_integer(r.w) >= Ratio::from_integer(r.w_sync));
            assert!(Ratio::from_integer(r.w_sync) >= r.w_opt);
            assert!(r.eta > Ratio::from_integer(0));
            assert!(r.eta <= Ratio::from_integer(1));
        }
    }

    #[test]
    fn fig2_comm_ratio_is_one_half() {
        let mesh = fig2_mesh().unwrap();
        let part = partition_hierarchy(&mesh, 3).unwrap();
        let (ghost, children) = total_ghost_children(&mesh, &part).unwrap();
        assert_eq!((ghost, children), (4, 8));
    }

    #[test]
    fn comm_ratio_zero_for_single_rank() {
        for kind in [SequenceKind::Circle, SequenceKind::Annulus] {
            let mesh = crate::sequences::build_sequence(kind, 4, 2).unwrap();
            let part = partition_hierarchy(&mesh, 1).unwrap();
            let (ghost, _) = total_ghost_children(&mesh, &part).unwrap();
            assert_eq!(ghost, 0);
        }
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(sig6(0.5), "0.5");
        assert_eq!(sig6(0.999512), "0.999512");
        assert_eq!(sig6(21.0 / 4.0), "5.25");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1048575.0 / 192.0), "5461.33");
    }

    #[test]
    fn csv_has_versioned_header() {
        let rows = sweep(SequenceKind::Fig2, 2, &[2], &[3], None).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# gmgforest sweep csv"));
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("fig2,2,2,3,7,9,3,5,6,0.5,0.5,"), "{row}");
    }
}
