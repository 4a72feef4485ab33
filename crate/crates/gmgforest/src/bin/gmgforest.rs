//! Command-line driver for mesh construction, partition sweeps, workload and
//! communication reports, and multigrid solver experiments.
//!
//! All runs are fully deterministic: the same command line (and config file)
//! produces byte-identical output.

use clap::{Args, Parser, Subcommand};
use gmgforest::balance::{sig6, sweep, write_csv};
use gmgforest::fem2d::{assemble_leaf, leaf_space};
use gmgforest::gmg::{pcg_solve, CoarseSolverKind, MultigridHierarchy, SmootherConfig};
use gmgforest::partition::partition_hierarchy;
use gmgforest::sequences::{build_sequence, SequenceKind};
use gmgforest::Error;
use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gmgforest",
    version,
    about = "Adaptive multigrid workload models and Poisson solver on forest meshes",
    after_help = "Exit codes: 0 success, 2 configuration error, 3 solver non-convergence."
)]
struct Cli {
    /// Config file with `key=value` lines providing defaults for any long
    /// flag (command-line flags take precedence).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partitioning-efficiency sweep over rank counts; writes the versioned
    /// sweep CSV (eta column).
    Efficiency(SweepArgs),
    /// Ghost-children communication-ratio sweep; writes the same sweep CSV
    /// (comm_ratio column).
    Commratio(SweepArgs),
    /// Assemble and solve the Poisson model problem with the multigrid
    /// preconditioner; prints one `iter,residual` line per CG iteration and
    /// a `levels,dofs,iterations,reduction` summary.
    Solve(SolveArgs),
    /// Print the leaf cells of a mesh, optionally with their owner ranks.
    DumpMesh(DumpArgs),
}

#[derive(Args, Clone)]
struct MeshArgs {
    /// Refinement sequence: uniform | circle | quadrant | annulus | fig2
    #[arg(long)]
    kind: Option<String>,
    /// Spatial dimension (2 or 3; solver requires 2)
    #[arg(long)]
    dim: Option<usize>,
    /// Finest level, either a single value `L` or an inclusive range `A..B`
    #[arg(long, value_name = "L")]
    level: Option<String>,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Comma-separated list of simulated rank counts
    #[arg(long, value_name = "LIST")]
    p: Option<String>,
    /// Override the coarse-level work term W_0 with a fixed constant
    #[arg(long, value_name = "CELLS")]
    w0: Option<u64>,
    /// Output CSV path (stdout when omitted)
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SolveArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Smoother: chebyshev | jacobi
    #[arg(long)]
    smoother: Option<String>,
    /// Smoothing steps per pre/post application
    #[arg(long, value_name = "STEPS")]
    m: Option<usize>,
    /// Chebyshev polynomial degree
    #[arg(long)]
    degree: Option<usize>,
    /// Jacobi damping factor
    #[arg(long)]
    omega: Option<f64>,
    /// Relative residual tolerance for CG
    #[arg(long)]
    rtol: Option<f64>,
    /// Coarse-level solver: direct | chebyshev
    #[arg(long)]
    coarse: Option<String>,
    /// Output path for the summary CSV (stdout when omitted)
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DumpArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Annotate each leaf with its owner under this many simulated ranks
    #[arg(long, value_name = "RANKS")]
    p: Option<String>,
    /// Output path (stdout when omitted)
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

/// Run-time failures. Configuration problems (bad flag value, unknown key,
/// missing input) exit with status 2, matching clap's own usage errors;
/// solver non-convergence exits with status 3.
enum CliError {
    Config(String),
    NoConvergence(String),
}

/// Shorthand for a configuration error.
fn cfg(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Config(e.to_string())
    }
}

type CResult<T> = std::result::Result<T, CliError>;

const CONFIG_KEYS: &[&str] = &[
    "kind", "dim", "level", "p", "w0", "output", "smoother", "m", "degree", "omega", "rtol",
    "coarse",
];

/// Parses a `key=value` defaults file. Blank lines and `#` comments are
/// ignored; keys must be known long-flag names.
fn read_config(path: &PathBuf) -> CResult<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| cfg(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            cfg(format!(
                "{}:{}: expected key=value",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(cfg(format!(
                "{}:{}: unknown key `{key}` (known: {})",
                path.display(),
                lineno + 1,
                CONFIG_KEYS.join(", ")
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Fills an absent flag from the config map, parsing the stored text.
fn fallback<T: std::str::FromStr>(
    slot: &mut Option<T>,
    map: &HashMap<String, String>,
    key: &str,
) -> CResult<()>
where
    T::Err: std::fmt::Display,
{
    if slot.is_none() {
        if let Some(raw) = map.get(key) {
            *slot = Some(
                raw.parse()
                    .map_err(|e| cfg(format!("config key `{key}`: {e}")))?,
            );
        }
    }
    Ok(())
}

fn parse_kind(mesh: &MeshArgs) -> CResult<SequenceKind> {
    let raw = mesh.kind.as_deref().ok_or_else(|| cfg("missing --kind"))?;
    raw.parse::<SequenceKind>().map_err(|e| cfg(e))
}

/// Parses `--level`: either `L` or an inclusive range `A..B`.
fn parse_levels(mesh: &MeshArgs, kind: SequenceKind) -> CResult<Vec<usize>> {
    let raw = match &mesh.level {
        Some(r) => r,
        // the built-in example mesh has a fixed shape
        None if kind == SequenceKind::Fig2 => return Ok(vec![2]),
        None => return Err(cfg("missing --level")),
    };
    if let Some((a, b)) = raw.split_once("..") {
        let a: usize = a
            .trim()
            .parse()
            .map_err(|e| cfg(format!("--level start: {e}")))?;
        let b: usize = b
            .trim()
            .parse()
            .map_err(|e| cfg(format!("--level end: {e}")))?;
        if a > b {
            return Err(cfg(format!("--level range {a}..{b} is empty")));
        }
        Ok((a..=b).collect())
    } else {
        let l: usize = raw
            .trim()
            .parse()
            .map_err(|e| cfg(format!("--level: {e}")))?;
        Ok(vec![l])
    }
}

fn parse_ranks(raw: &Option<String>) -> CResult<Vec<usize>> {
    let raw = raw.as_deref().ok_or_else(|| cfg("missing --p"))?;
    raw.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|e| cfg(format!("--p entry `{tok}`: {e}")))
        })
        .collect()
}

/// Writes to the given path, or stdout when absent.
fn open_output(path: &Option<PathBuf>) -> CResult<Box<dyn Write>> {
    match path {
        Some(p) => {
            Ok(Box::new(std::fs::File::create(p).map_err(|e| {
                cfg(format!("cannot create {}: {e}", p.display()))
            })?))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn merge_sweep(args: &mut SweepArgs, map: &HashMap<String, String>) -> CResult<()> {
    fallback(&mut args.mesh.kind, map, "kind")?;
    fallback(&mut args.mesh.dim, map, "dim")?;
    fallback(&mut args.mesh.level, map, "level")?;
    fallback(&mut args.p, map, "p")?;
    fallback(&mut args.w0, map, "w0")?;
    fallback(&mut args.output, map, "output")?;
    Ok(())
}

fn run_sweep(mut args: SweepArgs, map: &HashMap<String, String>) -> CResult<()> {
    merge_sweep(&mut args, map)?;
    let kind = parse_kind(&args.mesh)?;
    let dim = args.mesh.dim.unwrap_or(2);
    let levels = parse_levels(&args.mesh, kind)?;
    let ranks = parse_ranks(&args.p)?;
    let rows = sweep(kind, dim, &levels, &ranks, args.w0)?;
    write_csv(&rows, open_output(&args.output)?)?;
    Ok(())
}

fn run_solve(mut args: SolveArgs, map: &HashMap<String, String>) -> CResult<()> {
    fallback(&mut args.mesh.kind, map, "kind")?;
    fallback(&mut args.mesh.dim, map, "dim")?;
    fallback(&mut args.mesh.level, map, "level")?;
    fallback(&mut args.smoother, map, "smoother")?;
    fallback(&mut args.m, map, "m")?;
    fallback(&mut args.degree, map, "degree")?;
    fallback(&mut args.omega, map, "omega")?;
    fallback(&mut args.rtol, map, "rtol")?;
    fallback(&mut args.coarse, map, "coarse")?;
    fallback(&mut args.output, map, "output")?;

    let kind = parse_kind(&args.mesh)?;
    let dim = args.mesh.dim.unwrap_or(2);
    if dim != 2 {
        return Err(cfg("solve supports --dim 2 only"));
    }
    let mut config = match args.smoother.as_deref() {
        None | Some("chebyshev") => SmootherConfig::default(),
        Some("jacobi") => SmootherConfig::jacobi(),
        Some(other) => {
            return Err(cfg(format!(
                "unknown smoother `{other}` (expected chebyshev or jacobi)"
            )))
        }
    };
    if let Some(m) = args.m {
        config.steps = m;
    }
    if let Some(d) = args.degree {
        config.degree = d;
    }
    if let Some(w) = args.omega {
        config.omega = w;
    }
    let coarse = match args.coarse.as_deref() {
        None | Some("direct") => CoarseSolverKind::Direct,
        Some("chebyshev") => CoarseSolverKind::Chebyshev,
        Some(other) => {
            return Err(cfg(format!(
                "unknown coarse solver `{other}` (expected direct or chebyshev)"
            )))
        }
    };
    let rtol = args.rtol.unwrap_or(1e-6);
    if !(rtol > 0.0 && rtol < 1.0) {
        return Err(cfg(format!("--rtol must be in (0, 1), got {rtol}")));
    }
    config.validate()?;

    let levels = parse_levels(&args.mesh, kind)?;
    let mut out = open_output(&args.output)?;
    writeln!(out, "# gmgforest solve csv, schema v1")?;
    writeln!(out, "kind,dim,L,levels,dofs,iterations,reduction")?;
    for &depth in &levels {
        let mesh = build_sequence(kind, depth, dim)?;
        let space = leaf_space(&mesh)?;
        let pi = std::f64::consts::PI;
        let (a, b) = assemble_leaf(&mesh, &space, |x, y| {
            2.0 * pi * pi * (pi * x).sin() * (pi * y).sin()
        })?;
        let hierarchy = MultigridHierarchy::build_with_coarse(&mesh, config, coarse)?;
        let (_, stats) = pcg_solve(&a, &b, |r| hierarchy.apply_preconditioner(r), rtol, 200)
            .map_err(|e| match e {
                Error::NoConvergence { .. } => CliError::NoConvergence(e.to_string()),
                other => CliError::from(other),
            })?;
        for (iter, residual) in &stats.log {
            eprintln!("{iter},{}", sig6(*residual));
        }
        eprintln!(
            "{},{},{},{}",
            hierarchy.num_levels(),
            space.num_free(),
            stats.iterations,
            sig6(stats.reduction)
        );
        writeln!(
            out,
            "{kind},{dim},{depth},{},{},{},{}",
            hierarchy.num_levels(),
            space.num_free(),
            stats.iterations,
            sig6(stats.reduction)
        )?;
    }
    Ok(())
}

fn run_dump(mut args: DumpArgs, map: &HashMap<String, String>) -> CResult<()> {
    fallback(&mut args.mesh.kind, map, "kind")?;
    fallback(&mut args.mesh.dim, map, "dim")?;
    fallback(&mut args.mesh.level, map, "level")?;
    fallback(&mut args.p, map, "p")?;
    fallback(&mut args.output, map, "output")?;

    let kind = parse_kind(&args.mesh)?;
    let dim = args.mesh.dim.unwrap_or(2);
    let levels = parse_levels(&args.mesh, kind)?;
    if levels.len() != 1 {
        return Err(cfg("dump-mesh takes a single --level"));
    }
    let mesh = build_sequence(kind, levels[0], dim)?;
    let out = open_output(&args.output)?;
    match &args.p {
        Some(_) => {
            let ranks = parse_ranks(&args.p)?;
            if ranks.len() != 1 {
                return Err(cfg("dump-mesh takes a single rank count in --p"));
            }
            let part = partition_hierarchy(&mesh, ranks[0])?;
            mesh.write_dump(Some(&part.leaf_owner), out)?;
        }
        None => mesh.write_dump(None, out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let map = match &cli.config {
        Some(path) => match read_config(path) {
            Ok(m) => m,
            Err(e) => return report(e),
        },
        None => HashMap::new(),
    };
    let result = match cli.command {
        Command::Efficiency(a) | Command::Commratio(a) => run_sweep(a, &map),
        Command::Solve(a) => run_solve(a, &map),
        Command::DumpMesh(a) => run_dump(a, &map),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    match e {
        CliError::Config(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        CliError::NoConvergence(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
