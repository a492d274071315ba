//! Flat-extension test and minimizer extraction.
//!
//! A moment vector `y` is flat at order `N` when every localizing matrix
//! keeps its rank after truncation to order `N − 1`. Then `y` is the moment
//! vector of an atomic measure with `r = rank M_N(y)` atoms, which are
//! recovered from the column space of the moment matrix: pick `r` rows that
//! form a basis `w`, express the shifted rows `x_i·w` in that basis to get
//! multiplication matrices `N_i`, and diagonalize a random combination of
//! them with a common orthogonal Schur basis.

use nalgebra::{DMatrix, Schur, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::detvar::OptProblem;
use crate::poly::{binomial, Monomial};
use crate::relaxation::RelaxationSdp;

pub const DEFAULT_RANK_TOL: f64 = 1e-6;
/// Relative spread below which two Schur eigenvalues count as one cluster.
pub const CLUSTER_TOL: f64 = 1e-4;
/// Imaginary parts above this make an eigenvalue complex.
pub const IMAGINARY_TOL: f64 = 1e-6;
pub const EXTRACTION_ATTEMPTS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CertifyError {
    #[error("flat extension needs order N >= 2, got {0}")]
    OrderTooLow(u32),
    #[error("moment vector has {got} entries, basis needs {want}")]
    MomentLength { got: usize, want: usize },
    #[error("flat extension condition fails: {0}")]
    NotFlat(String),
    #[error("extraction failed: {0}")]
    ExtractionFailed(String),
}

/// Which blocks take part in the flatness test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FecMode {
    /// Every localizing block `L_{g_ν}`.
    #[default]
    AllBlocks,
    /// Only the moment matrix `ν = 0`.
    MomentOnly,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockRank {
    pub label: String,
    pub nu: Vec<u8>,
    pub size: usize,
    pub rank: usize,
    /// Size and rank of the order-`(N − 1)` truncation; `None` for blocks
    /// with `d = 0`, which have no lower-order truncation.
    pub previous_size: Option<usize>,
    pub previous_rank: Option<usize>,
    /// Whether the block takes part in the flag under the chosen mode.
    pub checked: bool,
}

impl BlockRank {
    pub fn is_flat(&self) -> bool {
        self.previous_rank.is_none_or(|r| r == self.rank)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub point: Vec<f64>,
    /// `max |h_i(x)|`, 0 without equalities.
    pub max_equality_residual: f64,
    /// `min g_j(x)`, `+∞` without inequalities (serialized as null).
    pub min_inequality: f64,
    pub objective: f64,
    /// `f(x) − bound`.
    pub bound_gap: f64,
    pub feasible: bool,
    pub certified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub rank_tol: f64,
    pub mode: FecMode,
    pub ranks: Vec<BlockRank>,
    pub fec: bool,
    pub points: Vec<Vec<f64>>,
    pub verification: Vec<Verification>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extraction_error: Option<String>,
}

impl CertificateReport {
    /// Rank of the moment matrix `M_N(y)`.
    pub fn moment_rank(&self) -> Option<usize> {
        self.ranks
            .iter()
            .find(|b| b.nu.iter().all(|&v| v == 0))
            .map(|b| b.rank)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Number of eigenvalues above `tol · max(1, λ_max)`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    numerical_rank_scaled(m, tol, None)
}

/// Number of eigenvalues above `tol · max(1, scale)`, where `scale`
/// defaults to the matrix's own `λ_max`.
pub fn numerical_rank_scaled(m: &DMatrix<f64>, tol: f64, scale: Option<f64>) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let cut = tol * scale.unwrap_or_else(|| eig.max()).max(1.0);
    eig.iter().filter(|&&v| v > cut).count()
}

/// Ranks of every localizing block at orders `N` and `N − 1`.
///
/// All blocks share the moment matrix's `λ_max` as the scale for the rank
/// cutoff: a block that vanishes on the support has only noise-level
/// eigenvalues, which are not small relative to its own `λ_max`.
pub fn flat_extension_check(
    y: &[f64],
    sdp: &RelaxationSdp,
    tol: f64,
    mode: FecMode,
) -> Result<CertificateReport, CertifyError> {
    check_input(y, sdp)?;
    let n = sdp.nvars();
    let scale = SymmetricEigen::new(symmetrize(&sdp.moment_block().evaluate(y)))
        .eigenvalues
        .max();
    let rank = |m: &DMatrix<f64>| numerical_rank_scaled(m, tol, Some(scale));
    let ranks: Vec<BlockRank> = sdp
        .blocks
        .iter()
        .map(|b| {
            let m = b.evaluate(y);
            let previous_size = b.previous_order_size(n);
            let previous_rank =
                previous_size.map(|s| rank(&m.view((0, 0), (s, s)).into_owned()));
            BlockRank {
                label: b.label.clone(),
                nu: b.nu.clone(),
                size: b.size,
                rank: rank(&m),
                previous_size,
                previous_rank,
                checked: mode == FecMode::AllBlocks || b.nu.iter().all(|&v| v == 0),
            }
        })
        .collect();
    let fec = ranks.iter().filter(|b| b.checked).all(BlockRank::is_flat);
    Ok(CertificateReport {
        rank_tol: tol,
        mode,
        ranks,
        fec,
        points: Vec::new(),
        verification: Vec::new(),
        extraction_error: None,
    })
}

/// Atoms of the measure represented by a flat moment vector.
pub fn extract_minimizers(
    y: &[f64],
    sdp: &RelaxationSdp,
    tol: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>, CertifyError> {
    check_input(y, sdp)?;
    let n = sdp.nvars();
    let moment = sdp.moment_block().evaluate(y);
    let size = |t: u32| binomial(n + t as usize, t as usize);
    let order = sdp.order();
    let rank = numerical_rank(&moment, tol);
    let previous = numerical_rank(&moment.view((0, 0), (size(order - 1), size(order - 1))).into_owned(), tol);
    if rank != previous {
        return Err(CertifyError::NotFlat(format!(
            "moment matrix rank {rank} at order {order}, {previous} at order {}",
            order - 1
        )));
    }
    if rank == 0 {
        return Err(CertifyError::ExtractionFailed("moment matrix is zero".into()));
    }
    let v = column_basis(&moment, rank);
    let rows = sdp.basis.truncated(order);
    let pivots = pivot_rows(&v, size(order - 1), rank);
    let b = v.select_rows(&pivots);
    let binv = b
        .clone()
        .try_inverse()
        .ok_or_else(|| CertifyError::ExtractionFailed("singular pivot block".into()))?;
    let u = &v * binv;
    let shifts: Vec<DMatrix<f64>> = (0..n)
        .map(|i| {
            let var = Monomial::var(n, i);
            let idx: Vec<usize> = pivots
                .iter()
                .map(|&p| {
                    let m = rows[p].mul(&var);
                    sdp.basis.position(&m).expect("pivot degree below N")
                })
                .collect();
            u.select_rows(&idx)
        })
        .collect();
    let mut last = String::new();
    for attempt in 0..EXTRACTION_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        match diagonalize(&shifts, &weights) {
            Ok(points) => return Ok(points),
            Err(msg) => last = msg,
        }
    }
    Err(CertifyError::ExtractionFailed(format!(
        "{last} after {EXTRACTION_ATTEMPTS} random combinations"
    )))
}

/// Feasibility and objective gap of a candidate minimizer.
pub fn verify_candidate(x: &[f64], p: &OptProblem, bound: f64, tol: f64) -> Verification {
    let eval = |q: &crate::poly::Polynomial| q.eval(x).unwrap_or(f64::NAN);
    let max_equality_residual = p.equalities.iter().map(|h| eval(h).abs()).fold(0.0, f64::max);
    let min_inequality = p.inequalities.iter().map(eval).fold(f64::INFINITY, f64::min);
    let objective = eval(&p.objective);
    let bound_gap = objective - bound;
    let feasible = max_equality_residual <= tol && min_inequality >= -tol;
    Verification {
        point: x.to_vec(),
        max_equality_residual,
        min_inequality,
        objective,
        bound_gap,
        feasible,
        certified: feasible && bound_gap <= tol,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    pub rank_tol: f64,
    pub mode: FecMode,
    pub seed: u64,
    /// Tolerance for feasibility and `f(x) − bound` in verification.
    pub verify_tol: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            rank_tol: DEFAULT_RANK_TOL,
            mode: FecMode::AllBlocks,
            seed: 0,
            verify_tol: 1e-3,
        }
    }
}

/// Flatness test, extraction when flat, and verification of every point.
pub fn certify(
    y: &[f64],
    sdp: &RelaxationSdp,
    p: &OptProblem,
    bound: f64,
    opts: &CertifyOptions,
) -> Result<CertificateReport, CertifyError> {
    let mut report = flat_extension_check(y, sdp, opts.rank_tol, opts.mode)?;
    if !report.fec {
        return Ok(report);
    }
    match extract_minimizers(y, sdp, opts.rank_tol, opts.seed) {
        Ok(points) => {
            report.verification = points
                .iter()
                .map(|x| verify_candidate(x, p, bound, opts.verify_tol))
                .collect();
            report.points = points;
        }
        Err(e) => report.extraction_error = Some(e.to_string()),
    }
    Ok(report)
}

fn check_input(y: &[f64], sdp: &RelaxationSdp) -> Result<(), CertifyError> {
    if sdp.order() < 2 {
        return Err(CertifyError::OrderTooLow(sdp.order()));
    }
    if y.len() != sdp.basis.len() {
        return Err(CertifyError::MomentLength {
            got: y.len(),
            want: sdp.basis.len(),
        });
    }
    Ok(())
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `V` with `V Vᵀ` the best rank-`r` approximation of `m`.
fn column_basis(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut v = DMatrix::zeros(m.nrows(), r);
    for (k, &j) in order.iter().take(r).enumerate() {
        let scale = eig.eigenvalues[j].max(0.0).sqrt();
        v.set_column(k, &(eig.eigenvectors.column(j) * scale));
    }
    v
}

/// `r` well-conditioned rows among the first `limit` rows of `v`, chosen by
/// greedy Gram–Schmidt with largest-residual pivoting.
fn pivot_rows(v: &DMatrix<f64>, limit: usize, r: usize) -> Vec<usize> {
    let mut residual: Vec<_> = (0..limit).map(|i| v.row(i).transpose()).collect();
    let mut pivots = Vec::with_capacity(r);
    for _ in 0..r {
        let (best, _) = residual
            .iter()
            .enumerate()
            .filter(|(i, _)| !pivots.contains(i))
            .map(|(i, x)| (i, x.norm()))
            .fold((usize::MAX, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        pivots.push(best);
        let q = residual[best].normalize();
        for x in residual.iter_mut() {
            let c = q.dot(x);
            *x -= &q * c;
        }
    }
    pivots.sort_unstable();
    pivots
}

fn diagonalize(shifts: &[DMatrix<f64>], weights: &[f64]) -> Result<Vec<Vec<f64>>, String> {
    let r = shifts[0].nrows();
    let mut combo = DMatrix::zeros(r, r);
    for (m, w) in shifts.iter().zip(weights) {
        combo += m * *w;
    }
    let schur = Schur::new(combo);
    let eig = schur.complex_eigenvalues();
    let scale = eig.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if eig.iter().any(|z| z.im.abs() > IMAGINARY_TOL * scale) {
        return Err("complex eigenvalues".into());
    }
    let mut re: Vec<f64> = eig.iter().map(|z| z.re).collect();
    re.sort_by(f64::total_cmp);
    if re.windows(2).any(|w| w[1] - w[0] <= CLUSTER_TOL * scale) {
        return Err("eigenvalues do not separate the atoms".into());
    }
    let (q, _) = schur.unpack();
    Ok((0..r)
        .map(|k| {
            let col = q.column(k);
            shifts.iter().map(|m| col.dot(&(m * col))).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detvar::OptProblem;
    use crate::poly::{default_names, parse_poly};
    use crate::relaxation::{build_relaxation, Variant};

    fn problem(n: usize, f: &str, eqs: &[&str], ges: &[&str]) -> OptProblem {
        let names = default_names(n);
        let parse = |s: &&str| parse_poly(s, &names).unwrap();
        OptProblem::new(
            parse(&f),
            eqs.iter().map(parse).collect(),
            ges.iter().map(parse).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_has_full_rank() {
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), 1e-6), 3);
    }

    #[test]
    fn outer_product_has_rank_one() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        assert_eq!(numerical_rank(&(&v * v.transpose()), 1e-6), 1);
    }

    #[test]
    fn point_mass_is_flat_and_recovered() {
        let p = problem(2, "x1^2 + x2^2", &[], &["1 - x1^2 - x2^2"]);
        let sdp = build_relaxation(&p, Variant::BaselinePutinar, Some(3)).unwrap();
        let u = [0.3, -0.7];
        let y = sdp.basis.point_mass(&u);
        let report = flat_extension_check(&y, &sdp, 1e-6, FecMode::AllBlocks).unwrap();
        assert!(report.fec);
        assert!(report.ranks.iter().all(|b| b.rank == 1));
        let pts = extract_minimizers(&y, &sdp, 1e-6, 7).unwrap();
        assert_eq!(pts.len(), 1);
        assert!((pts[0][0] - u[0]).abs() < 1e-9 && (pts[0][1] - u[1]).abs() < 1e-9);
    }

    #[test]
    fn order_one_is_rejected() {
        let p = problem(1, "x1^2", &[], &[]);
        let sdp = build_relaxation(&p, Variant::BaselinePutinar, Some(1)).unwrap();
        let y = sdp.basis.point_mass(&[0.0]);
        assert_eq!(
            flat_extension_check(&y, &sdp, 1e-6, FecMode::AllBlocks).unwrap_err(),
            CertifyError::OrderTooLow(1)
        );
    }

    #[test]
    fn non_flat_refuses_extraction() {
        let p = problem(1, "x1^2", &[], &[]);
        let sdp = build_relaxation(&p, Variant::BaselinePutinar, Some(2)).unwrap();
        // uniform measure on [-1, 1] has infinitely many atoms
        let y: Vec<f64> = (0..=4).map(|k| if k % 2 == 0 { 1.0 / (k as f64 + 1.0) } else { 0.0 }).collect();
        let report = flat_extension_check(&y, &sdp, 1e-6, FecMode::AllBlocks).unwrap();
        assert!(!report.fec);
        assert!(matches!(extract_minimizers(&y, &sdp, 1e-6, 0), Err(CertifyError::NotFlat(_))));
    }

    #[test]
    fn infeasible_candidate_is_not_certified() {
        let p = problem(3, "x1^4*x2^2 + x1^2*x2^4 + x3^6 - 3*x1^2*x2^2*x3^2", &[], &["1 - x1^2 - x2^2 - x3^2"]);
        let v = verify_candidate(&[1.0, 1.0, 1.0], &p, 0.0, 1e-6);
        assert!(!v.feasible && !v.certified);
        let v = verify_candidate(&[0.0, 0.0, 0.0], &p, -1.6948e-8, 1e-6);
        assert!(v.feasible && v.certified && v.objective == 0.0);
    }
}
