//! End-to-end runs: problem file → relaxation → solve → certify → report.

use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::certify::{certify, CertificateReport, CertifyOptions};
use crate::detvar::DetvarError;
use crate::problem::{ProblemError, ProblemFile};
use crate::relaxation::{build_relaxation, read_sdpa, RelaxationError, RelaxationSdp, Variant};
use crate::sdp::{refine_low_rank, solve_relaxation, SdpError, SdpSolution, SolveStatus, SolverOptions};

pub const REPORT_SCHEMA: &str = "jacsdp-report/1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_GUARD: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_UNCERTIFIED: i32 = 5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Parse(#[from] ProblemError),
    #[error("guard violation: {0}")]
    Guard(String),
    #[error(transparent)]
    Relaxation(RelaxationError),
    #[error(transparent)]
    Solver(#[from] SdpError),
    #[error("external solver: {0}")]
    External(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Parse(ProblemError::Problem(_)) => EXIT_GUARD,
            PipelineError::Parse(_) => EXIT_PARSE,
            PipelineError::Guard(_) => EXIT_GUARD,
            PipelineError::Relaxation(_) | PipelineError::Solver(_) | PipelineError::External(_) => {
                EXIT_SOLVER
            }
            PipelineError::Io { .. } => EXIT_PARSE,
        }
    }
}

impl From<RelaxationError> for PipelineError {
    fn from(e: RelaxationError) -> Self {
        match e {
            RelaxationError::OrderTooSmall { .. }
            | RelaxationError::TooManyInequalities { .. }
            | RelaxationError::Detvar(DetvarError::TooManyEqualities { .. })
            | RelaxationError::Detvar(DetvarError::TooManyColumns { .. }) => {
                PipelineError::Guard(e.to_string())
            }
            e => PipelineError::Relaxation(e),
        }
    }
}

/// External SDPA-format solver. The command template is split on
/// whitespace; `{input}` and `{output}` are replaced by the `.dat-s` path
/// and the solution path. The solution is read either from an SDPA
/// `xVec = {…}` line or, failing that, from the first line of the file
/// (the CSDP layout).
#[derive(Debug, Clone)]
pub struct ExternalSolver {
    pub command: String,
}

impl ExternalSolver {
    pub fn solve(&self, sdp: &RelaxationSdp, workdir: &Path) -> Result<Vec<f64>, PipelineError> {
        let input = workdir.join("relaxation.dat-s");
        let output = workdir.join("relaxation.sol");
        write_file(&input, &sdp.to_sdpa())?;
        let _ = std::fs::remove_file(&output);
        let args: Vec<String> = self
            .command
            .split_whitespace()
            .map(|t| {
                t.replace("{input}", &input.to_string_lossy())
                    .replace("{output}", &output.to_string_lossy())
            })
            .collect();
        let (program, rest) = args
            .split_first()
            .ok_or_else(|| PipelineError::External("empty command template".into()))?;
        let status = Command::new(program)
            .args(rest)
            .status()
            .map_err(|e| PipelineError::External(format!("cannot run '{program}': {e}")))?;
        if !status.success() {
            return Err(PipelineError::External(format!("'{program}' exited with {status}")));
        }
        let text = std::fs::read_to_string(&output).map_err(|source| PipelineError::Io {
            path: output.display().to_string(),
            source,
        })?;
        let y = parse_solution(&text)?;
        if y.len() != sdp.basis.len() {
            return Err(PipelineError::External(format!(
                "solution has {} entries, expected {}",
                y.len(),
                sdp.basis.len()
            )));
        }
        Ok(y)
    }
}

fn parse_solution(text: &str) -> Result<Vec<f64>, PipelineError> {
    let numbers = |s: &str| -> Result<Vec<f64>, PipelineError> {
        s.split(|c: char| c.is_whitespace() || matches!(c, ',' | '{' | '}'))
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| PipelineError::External(format!("bad number '{t}' in solution")))
            })
            .collect()
    };
    if let Some(start) = text.find("xVec") {
        let rest = &text[start..];
        let open = rest.find('{').ok_or_else(|| PipelineError::External("xVec without '{'".into()))?;
        let close = rest.find('}').ok_or_else(|| PipelineError::External("xVec without '}'".into()))?;
        return numbers(&rest[open + 1..close]);
    }
    numbers(text.lines().next().unwrap_or(""))
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub variant: Variant,
    /// `None` picks the minimal admissible order.
    pub order: Option<u32>,
    pub solver: SolverOptions,
    /// `None` skips certification.
    pub certify: Option<CertifyOptions>,
    /// Re-solve for a low-rank optimal moment vector before certifying.
    pub refine: bool,
    pub external: Option<ExternalSolver>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            variant: Variant::JacobianSchmudgen,
            order: None,
            solver: SolverOptions::default(),
            certify: Some(CertifyOptions::default()),
            refine: true,
            external: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SdpSummary {
    pub moments: usize,
    pub block_sizes: Vec<usize>,
    pub equality_rows: usize,
    pub independent_rows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub problem: String,
    pub variant: Variant,
    pub order: u32,
    /// Moment-side value.
    pub primal: f64,
    /// SOS-side value.
    pub dual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub rel_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub known_optimum: Option<f64>,
    pub sdp: SdpSummary,
    pub certificate: Option<CertificateReport>,
    pub minimizers: Vec<Vec<f64>>,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
    /// Moment vector used for certification.
    #[serde(skip)]
    pub y: Vec<f64>,
}

impl RunReport {
    /// Exit code of a completed run: solver failure, missing certificate,
    /// or success.
    pub fn exit_code(&self) -> i32 {
        if !self.status.is_success() {
            return EXIT_SOLVER;
        }
        match &self.certificate {
            Some(c) if !c.fec || c.extraction_error.is_some() => EXIT_UNCERTIFIED,
            _ => EXIT_OK,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Solves the relaxation of one problem and certifies the result.
pub fn run(file: &ProblemFile, opts: &RunOptions) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    let p = file.problem()?;
    let sdp = build_relaxation(&p, opts.variant, opts.order)?;
    let mut warnings = Vec::new();
    let sol = match &opts.external {
        None => solve_relaxation(&sdp, &opts.solver)?,
        Some(ext) => {
            let dir = std::env::temp_dir().join(format!("jacsdp-{}", std::process::id()));
            std::fs::create_dir_all(&dir).map_err(|source| PipelineError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let y = ext.solve(&sdp, &dir)?;
            let _ = std::fs::remove_dir_all(&dir);
            external_solution(&sdp, y, opts.solver.feas_tol)
        }
    };
    if sol.status == SolveStatus::NearOptimal {
        warnings.push("near-optimal: feasibility stalled, bounds carry reduced accuracy".into());
    }
    let mut y = sol.y.clone();
    let certificate = match &opts.certify {
        Some(c) if sol.status.is_success() && sdp.order() >= 2 => {
            if opts.refine {
                let slack = 1e-6 * (1.0 + sol.primal_obj.abs());
                match refine_low_rank(&sdp, sol.primal_obj, slack, &opts.solver) {
                    Ok(r) if r.primal_infeasibility <= 1e-6 => y = r.y,
                    _ => warnings.push("low-rank refinement failed; certifying the raw solution".into()),
                }
            }
            let report = certify(&y, &sdp, &p, sol.primal_obj, c)
                .map_err(|e| PipelineError::Guard(e.to_string()))?;
            Some(report)
        }
        Some(_) if sdp.order() < 2 => {
            warnings.push("order 1 has no lower-order truncation; certification skipped".into());
            None
        }
        _ => None,
    };
    let minimizers = certificate.as_ref().map(|c| c.points.clone()).unwrap_or_default();
    Ok(RunReport {
        schema: REPORT_SCHEMA,
        problem: file.name.clone(),
        variant: opts.variant,
        order: sdp.order(),
        primal: sol.primal_obj,
        dual: sol.dual_obj,
        status: sol.status,
        iterations: sol.iterations,
        rel_gap: sol.rel_gap,
        primal_infeasibility: sol.primal_infeasibility,
        dual_infeasibility: sol.dual_infeasibility,
        known_optimum: file.optimum,
        sdp: SdpSummary {
            moments: sdp.basis.len(),
            block_sizes: sdp.block_sizes(),
            equality_rows: sdp.equalities.len(),
            independent_rows: sol.independent_rows,
        },
        certificate,
        minimizers,
        wall_time_s: start.elapsed().as_secs_f64(),
        warnings,
        y,
    })
}

/// Wraps an externally computed moment vector. Only the moment side is
/// known, so both bounds are `L_f(y)`; the status reflects the feasibility
/// of `y` in the exact relaxation.
fn external_solution(sdp: &RelaxationSdp, y: Vec<f64>, feas_tol: f64) -> SdpSolution {
    let value = sdp.objective_value(&y);
    let scale = 1.0 + y.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let eq = sdp.equality_residual(&y) / scale;
    let psd = sdp
        .blocks
        .iter()
        .map(|b| b.evaluate(&y).symmetric_eigenvalues().min())
        .fold(f64::INFINITY, f64::min);
    let pinf = eq.max((-psd).max(0.0) / scale);
    let status = if pinf <= 1e3 * feas_tol {
        SolveStatus::NearOptimal
    } else {
        SolveStatus::MaxIter
    };
    SdpSolution {
        status,
        primal_obj: value,
        dual_obj: value,
        iterations: 0,
        rel_gap: f64::NAN,
        primal_infeasibility: pinf,
        dual_infeasibility: f64::NAN,
        independent_rows: sdp.equalities.len(),
        dual_blocks: Vec::new(),
        y,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareCell {
    pub variant: Variant,
    pub order: u32,
    pub primal: Option<f64>,
    pub dual: Option<f64>,
    pub status: Option<SolveStatus>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareTable {
    pub schema: &'static str,
    pub problem: String,
    pub variants: Vec<Variant>,
    pub orders: Vec<u32>,
    /// Row-major: variant, then order.
    pub cells: Vec<CompareCell>,
}

impl CompareTable {
    pub fn cell(&self, variant: Variant, order: u32) -> Option<&CompareCell> {
        self.cells.iter().find(|c| c.variant == variant && c.order == order)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("**{}**\n\n| variant |", self.problem);
        for n in &self.orders {
            out.push_str(&format!(" N={n} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.orders.len()));
        out.push('\n');
        for v in &self.variants {
            out.push_str(&format!("| {v} |"));
            for &n in &self.orders {
                let text = self.cell(*v, n).map(cell_text).unwrap_or_default();
                out.push_str(&format!(" {text} |"));
            }
            out.push('\n');
        }
        out.push_str("\n`~` near-optimal, `?` not converged (best iterate shown)\n");
        out
    }
}

fn cell_text(c: &CompareCell) -> String {
    match (c.status, c.primal) {
        (_, None) => "failed".into(),
        (Some(SolveStatus::Unbounded), _) => "unbounded".into(),
        (Some(SolveStatus::Infeasible), _) => "infeasible".into(),
        (Some(SolveStatus::NearOptimal), Some(v)) => format!("{v:.4e}~"),
        (Some(SolveStatus::MaxIter), Some(v)) => format!("{v:.4e}?"),
        (_, Some(v)) => format!("{v:.4e}"),
    }
}

/// Bounds for every `(variant, order)` pair. Cells run on up to `workers`
/// threads; a failing cell is recorded and the rest continue.
pub fn compare(
    file: &ProblemFile,
    variants: &[Variant],
    orders: &[u32],
    solver: &SolverOptions,
    workers: usize,
) -> Result<CompareTable, PipelineError> {
    file.problem()?;
    let jobs: Vec<(Variant, u32)> = variants
        .iter()
        .flat_map(|&v| orders.iter().map(move |&n| (v, n)))
        .collect();
    let results: Mutex<Vec<Option<CompareCell>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(variant, order)) = jobs.get(k) else { break };
                let opts = RunOptions {
                    variant,
                    order: Some(order),
                    solver: *solver,
                    certify: None,
                    refine: false,
                    external: None,
                };
                let start = Instant::now();
                let cell = match run(file, &opts) {
                    Ok(r) => CompareCell {
                        variant,
                        order,
                        primal: Some(r.primal),
                        dual: Some(r.dual),
                        status: Some(r.status),
                        error: None,
                        wall_time_s: r.wall_time_s,
                    },
                    Err(e) => CompareCell {
                        variant,
                        order,
                        primal: None,
                        dual: None,
                        status: None,
                        error: Some(e.to_string()),
                        wall_time_s: start.elapsed().as_secs_f64(),
                    },
                };
                results.lock().expect("no poisoned workers")[k] = Some(cell);
            });
        }
    });
    Ok(CompareTable {
        schema: REPORT_SCHEMA,
        problem: file.name.clone(),
        variants: variants.to_vec(),
        orders: orders.to_vec(),
        cells: results
            .into_inner()
            .expect("no poisoned workers")
            .into_iter()
            .map(|c| c.expect("every job ran"))
            .collect(),
    })
}

/// SDPA text of the relaxation and a sidecar describing the moment
/// indices and blocks.
pub fn export(
    file: &ProblemFile,
    variant: Variant,
    order: Option<u32>,
) -> Result<(String, serde_json::Value), PipelineError> {
    let p = file.problem()?;
    let sdp = build_relaxation(&p, variant, order)?;
    let text = sdp.to_sdpa();
    read_sdpa(&text)?;
    let mut sidecar = sdp.structure_json(&file.variables);
    sidecar["problem"] = serde_json::Value::String(file.name.clone());
    sidecar["schema"] = serde_json::Value::String(REPORT_SCHEMA.into());
    sidecar["variables"] = serde_json::json!(file.variables);
    Ok((text, sidecar))
}

pub fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solution_formats() {
        assert_eq!(parse_solution("1 0.5 -2\n1 1 1 1 1.0\n").unwrap(), vec![1.0, 0.5, -2.0]);
        let sdpa = "objValPrimal = 1\nxVec = \n{1.0,2.5e-1,3}\nxMat = ...";
        assert_eq!(parse_solution(sdpa).unwrap(), vec![1.0, 0.25, 3.0]);
        assert!(parse_solution("1 x 2").is_err());
    }

    #[test]
    fn guard_errors_map_to_exit_code_three() {
        let e = PipelineError::from(RelaxationError::TooManyInequalities { m2: 13 });
        assert_eq!(e.exit_code(), EXIT_GUARD);
        let e = PipelineError::from(RelaxationError::Detvar(DetvarError::TooManyEqualities { m1: 3, n: 2 }));
        assert_eq!(e.exit_code(), EXIT_GUARD);
    }
}
