use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use jacobian_sdp::certify::{CertifyOptions, FecMode, DEFAULT_RANK_TOL};
use jacobian_sdp::pipeline::{
    self, ExternalSolver, PipelineError, RunOptions, RunReport, EXIT_PARSE,
};
use jacobian_sdp::problem::ProblemFile;
use jacobian_sdp::relaxation::Variant;
use jacobian_sdp::sdp::SolverOptions;

/// Jacobian SDP relaxations for polynomial optimization.
#[derive(Parser)]
#[command(name = "jacsdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one relaxation, certify it and extract minimizers.
    Solve(SolveArgs),
    /// Tabulate bounds over variants and orders.
    Compare(CompareArgs),
    /// Write the relaxation in SDPA sparse format.
    Export(ExportArgs),
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long, default_value_t = 1e-8)]
    gap_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    feas_tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Print interior-point iterations to stderr.
    #[arg(long)]
    verbose: bool,
}

impl SolverFlags {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            gap_tol: self.gap_tol,
            feas_tol: self.feas_tol,
            max_iter: self.max_iter,
            verbose: self.verbose,
            ..SolverOptions::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverKind {
    Internal,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum FecFlag {
    /// every localizing block
    All,
    /// the moment matrix only
    Moment,
}

#[derive(Args)]
struct SolveArgs {
    file: PathBuf,
    #[arg(long, default_value = "jacobian-schmudgen")]
    variant: Variant,
    /// Relaxation order, or `auto` for the minimal admissible one.
    #[arg(long, default_value = "auto")]
    order: String,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    rank_tol: f64,
    #[arg(long, value_enum, default_value = "all")]
    fec: FecFlag,
    /// Seed for the random combination used in extraction.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "internal")]
    solver: SolverKind,
    /// Command template for the external solver, with `{input}` and
    /// `{output}` placeholders. Falls back to $JACSDP_SOLVER_CMD.
    #[arg(long)]
    solver_cmd: Option<String>,
    /// Skip the flat-extension test and extraction.
    #[arg(long)]
    no_certify: bool,
    /// Certify the raw interior-point solution instead of a low-rank one.
    #[arg(long)]
    no_refine: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver_flags: SolverFlags,
}

#[derive(Args)]
struct CompareArgs {
    file: PathBuf,
    /// Comma-separated variant names.
    #[arg(long, value_delimiter = ',', default_value = "jacobian-schmudgen,baseline-putinar")]
    variants: Vec<Variant>,
    /// `N1..N2` or a comma-separated list.
    #[arg(long)]
    orders: String,
    /// JSON table output; markdown goes to stdout unless --markdown is set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 2)]
    jobs: usize,
    #[command(flatten)]
    solver_flags: SolverFlags,
}

#[derive(Args)]
struct ExportArgs {
    file: PathBuf,
    #[arg(long, default_value = "jacobian-schmudgen")]
    variant: Variant,
    #[arg(long, default_value = "auto")]
    order: String,
    /// Output `.dat-s` path; the sidecar is written next to it with a
    /// `.json` suffix appended.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Solve(a) => solve(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Export(a) => export(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<PipelineError>()
                .map(PipelineError::exit_code)
                .unwrap_or(EXIT_PARSE);
            ExitCode::from(code as u8)
        }
    }
}

fn parse_order(s: &str) -> Result<Option<u32>, PipelineError> {
    if s == "auto" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| PipelineError::Guard(format!("order must be a positive integer or 'auto', got '{s}'")))
}

fn parse_orders(s: &str) -> Result<Vec<u32>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u32, u32) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty order range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse::<u32>().with_context(|| format!("bad order '{t}'")))
        .collect()
}

fn read_problem(path: &Path) -> Result<ProblemFile, PipelineError> {
    Ok(ProblemFile::read(path)?)
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    pipeline::write_file(path, text)
}

fn solve(a: SolveArgs) -> Result<i32> {
    let file = read_problem(&a.file)?;
    let external = match a.solver {
        SolverKind::Internal => None,
        SolverKind::External => {
            let command = a
                .solver_cmd
                .clone()
                .or_else(|| std::env::var("JACSDP_SOLVER_CMD").ok())
                .ok_or_else(|| {
                    PipelineError::Guard("external solver needs --solver-cmd or $JACSDP_SOLVER_CMD".into())
                })?;
            Some(ExternalSolver { command })
        }
    };
    let opts = RunOptions {
        variant: a.variant,
        order: parse_order(&a.order)?,
        solver: a.solver_flags.options(),
        certify: (!a.no_certify).then_some(CertifyOptions {
            rank_tol: a.rank_tol,
            mode: match a.fec {
                FecFlag::All => FecMode::AllBlocks,
                FecFlag::Moment => FecMode::MomentOnly,
            },
            seed: a.seed,
            ..CertifyOptions::default()
        }),
        refine: !a.no_refine,
        external,
    };
    let report = pipeline::run(&file, &opts)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(path) => {
            write(path, &json)?;
            eprint!("{}", summary(&report));
        }
        None => println!("{json}"),
    }
    Ok(report.exit_code())
}

fn summary(r: &RunReport) -> String {
    let mut s = format!(
        "{} {} N={}: {:?} primal {:.6e} dual {:.6e} ({} iterations, {:.2} s)\n",
        r.problem, r.variant, r.order, r.status, r.primal, r.dual, r.iterations, r.wall_time_s
    );
    if let Some(c) = &r.certificate {
        s.push_str(&format!("flat extension: {}\n", if c.fec { "yes" } else { "no" }));
        for v in &c.verification {
            s.push_str(&format!(
                "  x = {:?}  f(x) = {:.6e}  certified: {}\n",
                v.point, v.objective, v.certified
            ));
        }
        if let Some(e) = &c.extraction_error {
            s.push_str(&format!("  {e}\n"));
        }
    }
    for w in &r.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}

fn compare(a: CompareArgs) -> Result<i32> {
    let file = read_problem(&a.file)?;
    let orders = parse_orders(&a.orders).map_err(|e| PipelineError::Guard(e.to_string()))?;
    let table = pipeline::compare(&file, &a.variants, &orders, &a.solver_flags.options(), a.jobs)?;
    let markdown = table.to_markdown();
    if let Some(path) = &a.out {
        write(path, &serde_json::to_string_pretty(&table)?)?;
    }
    match &a.markdown {
        Some(path) => write(path, &markdown)?,
        None => print!("{markdown}"),
    }
    Ok(0)
}

fn export(a: ExportArgs) -> Result<i32> {
    let file = read_problem(&a.file)?;
    let (sdpa, sidecar) = pipeline::export(&file, a.variant, parse_order(&a.order)?)?;
    write(&a.out, &sdpa)?;
    let mut side = a.out.clone().into_os_string();
    side.push(".json");
    write(Path::new(&side), &serde_json::to_string_pretty(&sidecar)?)?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use jacobian_sdp::pipeline::EXIT_GUARD;

    #[test]
    fn order_ranges() {
        assert_eq!(parse_orders("3..7").unwrap(), vec![3, 4, 5, 6, 7]);
        assert_eq!(parse_orders("2, 4").unwrap(), vec![2, 4]);
        assert!(parse_orders("5..3").is_err());
        assert_eq!(parse_order("auto").unwrap(), None);
        assert_eq!(parse_order("4").unwrap(), Some(4));
        assert_eq!(parse_order("x").unwrap_err().exit_code(), EXIT_GUARD);
    }
}
