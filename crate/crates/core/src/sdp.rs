//! Primal-dual interior-point solver for moment SDPs.
//!
//! Solves
//!
//! ```text
//! min  cᵀy   s.t.  E y = b,   S_k(y) = Σ_α A_{k,α} y_α ⪰ 0   (k = 1..K)
//! ```
//!
//! together with its dual
//!
//! ```text
//! max  bᵀλ   s.t.  Σ_k A_k*(X_k) + Eᵀλ = c,   X_k ⪰ 0
//! ```
//!
//! using an infeasible-start path-following method with Nesterov–Todd
//! scaling and Mehrotra predictor-corrector steps. Blocks are dense; the
//! equality rows enter the Newton system through a Schur complement on
//! top of the Cholesky factor of the scaled normal matrix.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::relaxation::{LmiBlock, RelaxationSdp};

/// One PSD block: for each variable, its upper-triangular coefficient
/// entries `(i, j, value)`.
#[derive(Debug, Clone)]
pub struct SdpBlock {
    pub size: usize,
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

/// Floating-point SDP in the moment (LMI) form.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub c: Vec<f64>,
    pub eq_rows: Vec<Vec<(usize, f64)>>,
    pub eq_rhs: Vec<f64>,
    pub blocks: Vec<SdpBlock>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Threshold for dropping linearly dependent equality rows.
    pub eq_pivot_tol: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Give up after this many iterations in which neither the merit nor
    /// any of the infeasibilities or `μ` has halved.
    pub stall_iterations: usize,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 200,
            eq_pivot_tol: 1e-10,
            step_fraction: 0.95,
            stall_iterations: 15,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

impl SolveStatus {
    pub fn is_success(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Moment vector.
    pub y: Vec<f64>,
    /// `cᵀy`, the moment-side value.
    pub primal_obj: f64,
    /// `bᵀλ`, the SOS-side value.
    pub dual_obj: f64,
    pub iterations: usize,
    /// `|cᵀy − bᵀλ| / (1 + |cᵀy| + |bᵀλ|)`.
    pub rel_gap: f64,
    /// Relative residual of `E y = b` and `S = S(y)`.
    pub primal_infeasibility: f64,
    /// Relative residual of the dual equality.
    pub dual_infeasibility: f64,
    /// Number of equality rows kept after removing dependent ones.
    pub independent_rows: usize,
    #[serde(skip)]
    pub dual_blocks: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SdpError {
    #[error("SDP has no PSD block")]
    NoBlocks,
    #[error("equality row or block references variable {0} out of range")]
    BadIndex(usize),
}

/// Numeric localizing matrix `Σ_α A_α y_α` of a block.
pub fn moment_matrix_values(y: &[f64], block: &LmiBlock) -> DMatrix<f64> {
    block.evaluate(y)
}

/// A rescaled copy of an SDP: `y = D ỹ` on the variables, a diagonal
/// congruence `T_k S_k T_k` on each block chosen so the coefficient
/// diagonals are of unit size, and unit-norm equality rows.
pub struct ScaledSdp {
    pub problem: SdpProblem,
    pub var_scale: Vec<f64>,
    pub block_scale: Vec<DVector<f64>>,
}

impl ScaledSdp {
    pub fn new(prob: &SdpProblem, d: &[f64]) -> ScaledSdp {
        let mut eq_rows = Vec::with_capacity(prob.eq_rows.len());
        let mut eq_rhs = Vec::with_capacity(prob.eq_rows.len());
        for (row, rhs) in prob.eq_rows.iter().zip(&prob.eq_rhs) {
            let scaled: Vec<(usize, f64)> = row.iter().map(|&(k, v)| (k, v * d[k])).collect();
            let m = scaled.iter().fold(0.0_f64, |a, (_, v)| a.max(v.abs()));
            let m = if m > 0.0 { m } else { 1.0 };
            eq_rows.push(scaled.into_iter().map(|(k, v)| (k, v / m)).collect());
            eq_rhs.push(rhs / m);
        }
        let mut blocks = Vec::with_capacity(prob.blocks.len());
        let mut block_scale = Vec::with_capacity(prob.blocks.len());
        for b in &prob.blocks {
            let mut diag = vec![0.0_f64; b.size];
            for (k, e) in &b.terms {
                for &(i, j, v) in e {
                    if i == j {
                        diag[i] = diag[i].max((v * d[*k]).abs());
                    }
                }
            }
            let t = DVector::from_iterator(
                b.size,
                diag.iter().map(|&m| if m > 0.0 { 1.0 / m.sqrt() } else { 1.0 }),
            );
            blocks.push(SdpBlock {
                size: b.size,
                terms: b
                    .terms
                    .iter()
                    .map(|(k, e)| {
                        (*k, e.iter().map(|&(i, j, v)| (i, j, v * d[*k] * t[i] * t[j])).collect())
                    })
                    .collect(),
            });
            block_scale.push(t);
        }
        ScaledSdp {
            problem: SdpProblem {
                num_vars: prob.num_vars,
                c: prob.c.iter().zip(d).map(|(c, s)| c * s).collect(),
                eq_rows,
                eq_rhs,
                blocks,
            },
            var_scale: d.to_vec(),
            block_scale,
        }
    }

    /// Maps a solution of the scaled problem back to the original one.
    pub fn unscale(&self, mut sol: SdpSolution) -> SdpSolution {
        for (y, s) in sol.y.iter_mut().zip(&self.var_scale) {
            *y *= s;
        }
        for (x, t) in sol.dual_blocks.iter_mut().zip(&self.block_scale) {
            let n = t.len();
            *x = DMatrix::from_fn(n, n, |i, j| x[(i, j)] * t[i] * t[j]);
        }
        sol
    }
}

fn quality(s: &SdpSolution) -> (u8, f64) {
    let rank = match s.status {
        SolveStatus::Optimal => 0,
        SolveStatus::NearOptimal => 1,
        SolveStatus::Infeasible | SolveStatus::Unbounded => 2,
        SolveStatus::MaxIter => 3,
    };
    (rank, s.rel_gap.max(s.primal_infeasibility).max(s.dual_infeasibility))
}

/// Lifts dual blocks of the face-reduced problem back to the original
/// block sizes.
fn lift_dual_blocks(sdp: &RelaxationSdp, proj: &[Option<DMatrix<f64>>], reduced: Vec<DMatrix<f64>>) -> Vec<DMatrix<f64>> {
    let mut it = reduced.into_iter();
    sdp.blocks
        .iter()
        .zip(proj)
        .map(|(b, p)| match p {
            None => it.next().expect("block count"),
            Some(p) if p.ncols() == 0 => DMatrix::zeros(b.size, b.size),
            Some(p) => {
                let x = it.next().expect("block count");
                p * x * p.transpose()
            }
        })
        .collect()
}

/// Solves a moment relaxation.
///
/// Blocks are first restricted to the face cut out by the equality rows,
/// which restores strict feasibility in the common case. If that attempt
/// does not converge and the moments are badly scaled, it is retried with
/// `y_α = R^{|α|} ỹ_α`, where `R` is the root-mean-square radius read off
/// the degree-2 moments.
pub fn solve_relaxation(sdp: &RelaxationSdp, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    let (num, proj) = sdp.to_numeric_reduced();
    solve_reduced(sdp, &num, &proj, opts)
}

/// Minimizes `trace M_N(y)` over the relaxation's feasible points with
/// `L_f(y) ≤ bound + slack`.
///
/// The trace is the nuclear norm of the moment matrix, so among the
/// near-optimal moment vectors this prefers low-rank ones, concentrated on
/// the minimizers of smallest norm. Interior-point iterates on a
/// non-unique optimal face are otherwise maximal-rank.
pub fn refine_low_rank(
    sdp: &RelaxationSdp,
    bound: f64,
    slack: f64,
    opts: &SolverOptions,
) -> Result<SdpSolution, SdpError> {
    let (mut num, proj) = sdp.to_numeric_reduced();
    let mut cut: Vec<(usize, Vec<(usize, usize, f64)>)> = num
        .c
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(k, v)| (k, vec![(0, 0, -v)]))
        .collect();
    match cut.iter_mut().find(|(k, _)| *k == 0) {
        Some((_, e)) => e[0].2 += bound + slack,
        None => cut.insert(0, (0, vec![(0, 0, bound + slack)])),
    }
    num.blocks.push(SdpBlock { size: 1, terms: cut });
    num.c = vec![0.0; num.num_vars];
    for m in sdp.basis.truncated(sdp.order()) {
        let k = sdp.basis.position(&m.mul(m)).expect("degree 2N");
        num.c[k] += 1.0;
    }
    solve_reduced_with(sdp, &num, &proj, opts, 1)
}

fn solve_reduced(
    sdp: &RelaxationSdp,
    num: &SdpProblem,
    proj: &[Option<DMatrix<f64>>],
    opts: &SolverOptions,
) -> Result<SdpSolution, SdpError> {
    solve_reduced_with(sdp, num, proj, opts, 0)
}

/// `extra` trailing blocks of `num` have no counterpart in `sdp`; their
/// duals are dropped.
fn solve_reduced_with(
    sdp: &RelaxationSdp,
    num: &SdpProblem,
    proj: &[Option<DMatrix<f64>>],
    opts: &SolverOptions,
    extra: usize,
) -> Result<SdpSolution, SdpError> {
    let run = |d: &[f64]| -> Result<SdpSolution, SdpError> {
        let scaled = ScaledSdp::new(num, d);
        let mut sol = scaled.unscale(solve(&scaled.problem, opts)?);
        let mut duals = std::mem::take(&mut sol.dual_blocks);
        duals.truncate(duals.len().saturating_sub(extra));
        sol.dual_blocks = lift_dual_blocks(sdp, proj, duals);
        Ok(sol)
    };
    let first = run(&vec![1.0; num.num_vars])?;
    if first.status == SolveStatus::Optimal {
        return Ok(first);
    }
    let n = sdp.nvars();
    let basis = &sdp.basis;
    let second_moment: f64 = (0..n)
        .filter_map(|i| {
            let mut e = vec![0u32; n];
            e[i] = 2;
            basis.position(&crate::poly::Monomial::new(e))
        })
        .map(|k| first.y[k].abs())
        .sum();
    let radius = second_moment.sqrt();
    if !radius.is_finite() || (0.5..=2.0).contains(&radius) {
        return Ok(first);
    }
    let radius = radius.clamp(1e-3, 1e3);
    let d: Vec<f64> = basis
        .monomials()
        .iter()
        .map(|m| radius.powi(m.degree() as i32))
        .collect();
    let second = run(&d)?;
    if opts.verbose {
        eprintln!("rescaled radius {radius}: {:?} gap {:e}", second.status, second.rel_gap);
    }
    Ok(if quality(&second) <= quality(&first) { second } else { first })
}

/// The affine set `{y : E y = b}` written as `y_p + N z` with orthonormal
/// `N`, after dropping dependent rows.
struct AffineSpace {
    y_p: DVector<f64>,
    null: DMatrix<f64>,
    rank: usize,
    /// Largest right-hand-side residual of a dropped row; nonzero means the
    /// equalities are inconsistent.
    inconsistency: f64,
}

/// Pivoted Gram–Schmidt on the rows of `E`, carrying the right-hand side
/// along so the minimum-norm particular solution comes out directly.
fn affine_space(nv: usize, rows: &[DVector<f64>], rhs: &[f64], tol: f64) -> AffineSpace {
    let mut resid: Vec<DVector<f64>> = rows.to_vec();
    let mut resid_b: Vec<f64> = rhs.to_vec();
    let scale = rows.iter().map(|r| r.norm()).fold(0.0, f64::max).max(1e-300);
    let mut alive = vec![true; rows.len()];
    let mut basis: Vec<(DVector<f64>, f64)> = Vec::new();
    loop {
        let mut best = None;
        let mut best_norm = 0.0;
        for (i, r) in resid.iter().enumerate() {
            if alive[i] {
                let nrm = r.norm();
                if nrm > best_norm {
                    best_norm = nrm;
                    best = Some(i);
                }
            }
        }
        let Some(p) = best else { break };
        if best_norm <= tol * scale {
            break;
        }
        alive[p] = false;
        let mut q = resid[p].clone();
        let mut beta = resid_b[p];
        // one pass of reorthogonalization
        for (qj, bj) in &basis {
            let proj = qj.dot(&q);
            q.axpy(-proj, qj, 1.0);
            beta -= proj * bj;
        }
        let nrm = q.norm();
        q /= nrm;
        beta /= nrm;
        for (i, r) in resid.iter_mut().enumerate() {
            if alive[i] {
                let proj = q.dot(r);
                r.axpy(-proj, &q, 1.0);
                resid_b[i] -= proj * beta;
            }
        }
        basis.push((q, beta));
    }
    let bscale = 1.0 + rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let inconsistency = (0..rows.len())
        .filter(|&i| alive[i])
        .map(|i| resid_b[i].abs() / bscale)
        .fold(0.0, f64::max);

    let mut y_p = DVector::zeros(nv);
    let mut proj = DMatrix::<f64>::identity(nv, nv);
    for (q, beta) in &basis {
        y_p.axpy(*beta, q, 1.0);
        proj.ger(-1.0, q, q, 1.0);
    }
    let rank = basis.len();
    let nz = nv - rank;
    let null = if nz == 0 {
        DMatrix::zeros(nv, 0)
    } else {
        let eig = SymmetricEigen::new(sym(&proj));
        let mut idx: Vec<usize> = (0..nv).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut n = DMatrix::zeros(nv, nz);
        for (c, &i) in idx[..nz].iter().enumerate() {
            n.set_column(c, &eig.eigenvectors.column(i));
        }
        n
    };
    AffineSpace {
        y_p,
        null,
        rank,
        inconsistency,
    }
}

struct Scaling {
    /// `W = G Gᵀ`, with `W S W = X`.
    w: DMatrix<f64>,
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    /// Diagonal of the scaled point `G⁻¹XG⁻ᵀ = GᵀSG`.
    d: DVector<f64>,
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn chol(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(sym(m)).map(|c| c.l())
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<Scaling> {
    let lx = chol(x)?;
    let ls = chol(s)?;
    let svd = (ls.transpose() * &lx).svd(true, true);
    let v = svd.v_t?.transpose();
    let d = svd.singular_values;
    if d.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let n = d.len();
    let mut dm_inv_sqrt = DMatrix::zeros(n, n);
    let mut dm_sqrt = DMatrix::zeros(n, n);
    for i in 0..n {
        dm_inv_sqrt[(i, i)] = 1.0 / d[i].sqrt();
        dm_sqrt[(i, i)] = d[i].sqrt();
    }
    let g = &lx * &v * dm_inv_sqrt;
    let lx_inv = lx.clone().try_inverse()?;
    let g_inv = dm_sqrt * v.transpose() * lx_inv;
    let w = &g * g.transpose();
    Some(Scaling { w, g, g_inv, d })
}

/// Largest `α ∈ (0, ∞]` with `D + α·Δ ⪰ 0` given in the scaled frame, where
/// `D` is diagonal positive.
fn max_step_scaled(d: &DVector<f64>, delta: &DMatrix<f64>) -> f64 {
    let n = d.len();
    let mut m = delta.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] /= (d[i] * d[j]).sqrt();
        }
    }
    let eig = SymmetricEigen::new(sym(&m));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

struct Workspace<'a> {
    prob: &'a SdpProblem,
    c: DVector<f64>,
}

impl Workspace<'_> {
    fn apply_block(&self, k: usize, y: &DVector<f64>) -> DMatrix<f64> {
        let blk = &self.prob.blocks[k];
        let mut m = DMatrix::zeros(blk.size, blk.size);
        for (var, entries) in &blk.terms {
            let yv = y[*var];
            if yv == 0.0 {
                continue;
            }
            for &(i, j, v) in entries {
                m[(i, j)] += v * yv;
                if i != j {
                    m[(j, i)] += v * yv;
                }
            }
        }
        m
    }

    /// `A_k*(M)`, accumulated into `out`.
    fn adjoint_block(&self, k: usize, m: &DMatrix<f64>, out: &mut DVector<f64>) {
        for (var, entries) in &self.prob.blocks[k].terms {
            let mut acc = 0.0;
            for &(i, j, v) in entries {
                acc += if i == j {
                    v * m[(i, j)]
                } else {
                    v * (m[(i, j)] + m[(j, i)])
                };
            }
            out[*var] += acc;
        }
    }

    fn adjoint(&self, ms: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.prob.num_vars);
        for (k, m) in ms.iter().enumerate() {
            self.adjoint_block(k, m, &mut out);
        }
        out
    }

    /// Scaled normal matrix `H_ij = Σ_k ⟨A_{k,i}, W_k A_{k,j} W_k⟩`.
    fn normal_matrix(&self, scalings: &[Scaling]) -> DMatrix<f64> {
        let nv = self.prob.num_vars;
        let mut h = DMatrix::zeros(nv, nv);
        for (k, blk) in self.prob.blocks.iter().enumerate() {
            let w = &scalings[k].w;
            let s = blk.size;
            let mut waw = DMatrix::zeros(s, s);
            for (jdx, (var_j, entries_j)) in blk.terms.iter().enumerate() {
                if entries_j.len() > s {
                    let mut a = DMatrix::zeros(s, s);
                    for &(p, q, v) in entries_j {
                        a[(p, q)] += v;
                        if p != q {
                            a[(q, p)] += v;
                        }
                    }
                    waw = w * (a * w);
                } else {
                    waw.fill(0.0);
                    for &(p, q, v) in entries_j {
                        let wp = w.column(p);
                        let wq = w.column(q);
                        if p == q {
                            waw.ger(v, &wp, &wp, 1.0);
                        } else {
                            waw.ger(v, &wp, &wq, 1.0);
                            waw.ger(v, &wq, &wp, 1.0);
                        }
                    }
                }
                for (var_i, entries_i) in &blk.terms[..=jdx] {
                    let mut acc = 0.0;
                    for &(p, q, v) in entries_i {
                        acc += if p == q {
                            v * waw[(p, q)]
                        } else {
                            v * (waw[(p, q)] + waw[(q, p)])
                        };
                    }
                    h[(*var_i, *var_j)] += acc;
                    if var_i != var_j {
                        h[(*var_j, *var_i)] += acc;
                    }
                }
            }
        }
        h
    }
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Factorization of the projected Schur matrix with Jacobi equilibration,
/// a small diagonal shift if the matrix is numerically indefinite, and
/// iterative refinement against the unshifted matrix.
struct SchurFactor {
    h: DMatrix<f64>,
    d: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl SchurFactor {
    fn new(h: DMatrix<f64>) -> Option<SchurFactor> {
        let n = h.nrows();
        let d = DVector::from_fn(n, |i, _| {
            let v = h[(i, i)];
            if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }
        });
        let mut hs = DMatrix::from_fn(n, n, |i, j| h[(i, j)] * d[i] * d[j]);
        let mut reg = 0.0;
        loop {
            if let Some(chol) = Cholesky::new(hs.clone()) {
                return Some(SchurFactor { h, d, chol });
            }
            let next = if reg == 0.0 { 1e-13 } else { reg * 100.0 };
            if next > 1e-3 {
                return None;
            }
            for i in 0..n {
                hs[(i, i)] += next - reg;
            }
            reg = next;
        }
    }

    fn solve_once(&self, r: &DVector<f64>) -> DVector<f64> {
        let rs = r.component_mul(&self.d);
        self.chol.solve(&rs).component_mul(&self.d)
    }

    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve_once(r);
        for _ in 0..2 {
            let res = r - &self.h * &x;
            x += self.solve_once(&res);
        }
        x
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(sym(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Solves the SDP from an infeasible start.
///
/// The equality rows are eliminated up front: iterates stay on the affine
/// set `y = y_p + N z`, and the Newton system is the projection `Nᵀ H N`.
/// The dual value is `y_pᵀ(c − A*(X))`, which equals `bᵀλ` for the
/// least-squares multiplier `λ`.
pub fn solve(prob: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    if prob.blocks.is_empty() {
        return Err(SdpError::NoBlocks);
    }
    let nv = prob.num_vars;
    for row in &prob.eq_rows {
        if let Some(&(k, _)) = row.iter().find(|(k, _)| *k >= nv) {
            return Err(SdpError::BadIndex(k));
        }
    }
    for blk in &prob.blocks {
        if let Some((k, _)) = blk.terms.iter().find(|(k, _)| *k >= nv) {
            return Err(SdpError::BadIndex(*k));
        }
    }

    let dense_rows: Vec<DVector<f64>> = prob
        .eq_rows
        .iter()
        .map(|r| {
            let mut v = DVector::zeros(nv);
            for &(k, c) in r {
                v[k] += c;
            }
            v
        })
        .collect();
    let aff = affine_space(nv, &dense_rows, &prob.eq_rhs, opts.eq_pivot_tol);
    let ws = Workspace {
        prob,
        c: DVector::from_column_slice(&prob.c),
    };
    let nmat = &aff.null;
    let nz = nmat.ncols();
    let total_dim: usize = prob.blocks.iter().map(|b| b.size).sum();
    let c_norm = ws.c.norm();
    let nblocks = prob.blocks.len();

    let finish = |status, y: DVector<f64>, xs: Vec<DMatrix<f64>>, iterations, gap, pinf, dinf| {
        let g = &ws.c - ws.adjoint(&xs);
        SdpSolution {
            status,
            primal_obj: ws.c.dot(&y),
            dual_obj: aff.y_p.dot(&g),
            y: y.iter().cloned().collect(),
            iterations,
            rel_gap: gap,
            primal_infeasibility: pinf,
            dual_infeasibility: dinf,
            independent_rows: aff.rank,
            dual_blocks: xs,
        }
    };

    if aff.inconsistency > 1e-8 {
        let xs = prob.blocks.iter().map(|b| DMatrix::zeros(b.size, b.size)).collect();
        return Ok(finish(
            SolveStatus::Infeasible,
            aff.y_p.clone(),
            xs,
            0,
            f64::INFINITY,
            aff.inconsistency,
            f64::INFINITY,
        ));
    }

    let init = 10.0_f64.max((total_dim as f64).sqrt());
    let mut xs: Vec<DMatrix<f64>> = prob
        .blocks
        .iter()
        .map(|b| DMatrix::identity(b.size, b.size) * init)
        .collect();
    let mut ss = xs.clone();
    let mut y = aff.y_p.clone();

    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut best: Option<(f64, DVector<f64>, Vec<DMatrix<f64>>, [f64; 3])> = None;
    let mut last = [f64::INFINITY; 3];
    let mut progress_iter = 0;
    let mut reference = [f64::INFINITY; 3];

    for iter in 0..opts.max_iter {
        iterations = iter;
        let rp: Vec<DMatrix<f64>> = (0..nblocks).map(|k| ws.apply_block(k, &y) - &ss[k]).collect();
        let g = &ws.c - ws.adjoint(&xs);
        let rd = nmat.transpose() * &g;

        let pobj = ws.c.dot(&y);
        let dobj = aff.y_p.dot(&g);
        let mu = (0..nblocks).map(|k| inner(&xs[k], &ss[k])).sum::<f64>() / total_dim as f64;
        // relative to the iterate: moments that grow without bound carry
        // roundoff proportional to their own size
        let rp_norm = rp.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        let pinf = rp_norm / (1.0 + aff.y_p.norm().max(y.norm()));
        let dinf = rd.norm() / (1.0 + c_norm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        last = [gap, pinf, dinf];
        if opts.verbose {
            eprintln!(
                "it {iter:3} pobj {pobj:+.10e} dobj {dobj:+.10e} gap {gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e} mu {mu:.2e}"
            );
        }
        let merit = gap.max(pinf).max(dinf);
        if best.as_ref().is_none_or(|(m, ..)| merit < *m) {
            best = Some((merit, y.clone(), xs.clone(), last));
            progress_iter = iter;
        }
        for (r, v) in reference.iter_mut().zip([pinf, dinf, mu]) {
            if v < 0.5 * *r {
                *r = v;
                progress_iter = iter;
            }
        }
        if iter >= progress_iter + opts.stall_iterations {
            if opts.verbose {
                eprintln!("no progress since iteration {progress_iter}");
            }
            break;
        }
        if gap <= opts.gap_tol && pinf <= opts.feas_tol && dinf <= opts.feas_tol {
            status = SolveStatus::Optimal;
            break;
        }
        if nz == 0 && pinf <= opts.feas_tol {
            // y is pinned by the equalities and already feasible
            status = SolveStatus::Optimal;
            break;
        }
        let x_norm = xs.iter().map(|m| m.norm()).fold(0.0, f64::max);
        if dinf <= 1e-6 && dobj > 1e10 && x_norm > 1e10 {
            status = SolveStatus::Infeasible;
            break;
        }
        if rp_norm / (1.0 + y.norm()) <= 1e-8 && pobj < -1e10 {
            status = SolveStatus::Unbounded;
            break;
        }

        let scalings: Option<Vec<Scaling>> = (0..nblocks).map(|k| nt_scaling(&xs[k], &ss[k])).collect();
        let Some(scalings) = scalings else {
            if opts.verbose {
                eprintln!("scaling failed");
            }
            break;
        };
        let h = ws.normal_matrix(&scalings);
        let hz = nmat.transpose() * h * nmat;
        let Some(chol) = SchurFactor::new(hz) else {
            if opts.verbose {
                eprintln!("factorization failed");
            }
            break;
        };

        let direction = |rc: &[DMatrix<f64>]| {
            let t: Vec<DMatrix<f64>> = (0..nblocks)
                .map(|k| &rc[k] - &scalings[k].w * &rp[k] * &scalings[k].w)
                .collect();
            let r1 = nmat.transpose() * (ws.adjoint(&t) - &g);
            let dy = nmat * chol.solve(&r1);
            let ds: Vec<DMatrix<f64>> = (0..nblocks).map(|k| ws.apply_block(k, &dy) + &rp[k]).collect();
            let dx: Vec<DMatrix<f64>> = (0..nblocks)
                .map(|k| sym(&(&rc[k] - &scalings[k].w * &ds[k] * &scalings[k].w)))
                .collect();
            (dy, dx, ds)
        };
        let steps = |dx: &[DMatrix<f64>], ds: &[DMatrix<f64>]| {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for k in 0..nblocks {
                let sc = &scalings[k];
                let dxt = &sc.g_inv * &dx[k] * sc.g_inv.transpose();
                let dst = sc.g.transpose() * &ds[k] * &sc.g;
                ad = ad.min(max_step_scaled(&sc.d, &dxt));
                ap = ap.min(max_step_scaled(&sc.d, &dst));
            }
            (ap, ad)
        };

        // predictor
        let rc_aff: Vec<DMatrix<f64>> = xs.iter().map(|x| -x).collect();
        let (_, dx_a, ds_a) = direction(&rc_aff);
        let (ap, ad) = steps(&dx_a, &ds_a);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = (0..nblocks)
            .map(|k| inner(&(&xs[k] + &dx_a[k] * ad), &(&ss[k] + &ds_a[k] * ap)))
            .sum::<f64>()
            / total_dim as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let rc: Vec<DMatrix<f64>> = (0..nblocks)
            .map(|k| {
                let sc = &scalings[k];
                let dxt = &sc.g_inv * &dx_a[k] * sc.g_inv.transpose();
                let dst = sc.g.transpose() * &ds_a[k] * &sc.g;
                let q = &dxt * &dst + &dst * &dxt;
                let n = sc.d.len();
                let z = DMatrix::from_fn(n, n, |i, j| {
                    let mut v = -q[(i, j)];
                    if i == j {
                        v += 2.0 * sigma * mu - 2.0 * sc.d[i] * sc.d[i];
                    }
                    v / (sc.d[i] + sc.d[j])
                });
                &sc.g * z * sc.g.transpose()
            })
            .collect();
        let (dy, dx, ds) = direction(&rc);
        let (ap, ad) = steps(&dx, &ds);
        let ap = (opts.step_fraction * ap).min(1.0);
        let ad = (opts.step_fraction * ad).min(1.0);
        if opts.verbose {
            eprintln!("      ap {ap:.3e} ad {ad:.3e} sigma {sigma:.2e} |dy| {:.2e}", dy.norm());
        }

        y.axpy(ap, &dy, 1.0);
        for k in 0..nblocks {
            ss[k] = sym(&(&ss[k] + &ds[k] * ap));
            xs[k] = sym(&(&xs[k] + &dx[k] * ad));
        }
        iterations = iter + 1;
    }

    if status != SolveStatus::MaxIter {
        return Ok(finish(status, y, xs, iterations, last[0], last[1], last[2]));
    }
    // not converged: fall back to the best iterate and judge it on its own
    let (_, y, xs, [gap, _, dinf]) = best.expect("at least one iterate");
    let min_eig = (0..nblocks)
        .map(|k| min_eigenvalue(&ws.apply_block(k, &y)))
        .fold(f64::INFINITY, f64::min);
    let pinf = (-min_eig).max(0.0) / (1.0 + y.amax());
    let status = if gap <= 1e-6 && pinf <= 1e-6 {
        SolveStatus::NearOptimal
    } else {
        SolveStatus::MaxIter
    };
    Ok(finish(status, y, xs, iterations, gap, pinf, dinf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hankel_block() -> SdpBlock {
        // [[y0, y1], [y1, y2]]
        SdpBlock {
            size: 2,
            terms: vec![
                (0, vec![(0, 0, 1.0)]),
                (1, vec![(0, 1, 1.0)]),
                (2, vec![(1, 1, 1.0)]),
            ],
        }
    }

    #[test]
    fn toy_unit_correlation() {
        // min y1 s.t. [[y0, y1], [y1, y0]] ⪰ 0, y0 = 1  → −1
        let prob = SdpProblem {
            num_vars: 2,
            c: vec![0.0, 1.0],
            eq_rows: vec![vec![(0, 1.0)]],
            eq_rhs: vec![1.0],
            blocks: vec![SdpBlock {
                size: 2,
                terms: vec![(0, vec![(0, 0, 1.0), (1, 1, 1.0)]), (1, vec![(0, 1, 1.0)])],
            }],
        };
        let sol = solve(&prob, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_obj + 1.0).abs() < 1e-7, "{}", sol.primal_obj);
        assert!(sol.rel_gap <= 1e-8);
    }

    #[test]
    fn toy_minimal_second_moment() {
        let prob = SdpProblem {
            num_vars: 3,
            c: vec![0.0, 0.0, 1.0],
            eq_rows: vec![vec![(0, 1.0)]],
            eq_rhs: vec![1.0],
            blocks: vec![hankel_block()],
        };
        let sol = solve(&prob, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.primal_obj.abs() < 1e-7);
        assert!(sol.dual_obj <= sol.primal_obj + 1e-8);
    }

    #[test]
    fn dependent_rows_are_dropped() {
        let prob = SdpProblem {
            num_vars: 3,
            c: vec![0.0, 0.0, 1.0],
            eq_rows: vec![vec![(0, 1.0)], vec![(0, 2.0)], vec![(1, 1.0)]],
            eq_rhs: vec![1.0, 2.0, 0.5],
            blocks: vec![hankel_block()],
        };
        let sol = solve(&prob, &SolverOptions::default()).unwrap();
        assert_eq!(sol.independent_rows, 2);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_obj - 0.25).abs() < 1e-7);
    }

    #[test]
    fn deterministic() {
        let prob = SdpProblem {
            num_vars: 3,
            c: vec![0.0, 1.0, 1.0],
            eq_rows: vec![vec![(0, 1.0)]],
            eq_rhs: vec![1.0],
            blocks: vec![hankel_block()],
        };
        let a = solve(&prob, &SolverOptions::default()).unwrap();
        let b = solve(&prob, &SolverOptions::default()).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.primal_obj.to_bits(), b.primal_obj.to_bits());
        assert_eq!(a.dual_obj.to_bits(), b.dual_obj.to_bits());
        // min y1 + y2 with y2 >= y1^2 → y1 = -1/2, value -1/4
        assert!((a.primal_obj + 0.25).abs() < 1e-7);
    }

    #[test]
    fn empty_problem_rejected() {
        let prob = SdpProblem {
            num_vars: 1,
            c: vec![1.0],
            eq_rows: vec![],
            eq_rhs: vec![],
            blocks: vec![],
        };
        assert!(matches!(solve(&prob, &SolverOptions::default()), Err(SdpError::NoBlocks)));
    }
}
