//! Moment-side SDP assembly.
//!
//! A relaxation of order `N` works on the moment vector `y = (y_α)` for
//! `|α| ≤ 2N`. Every polynomial `q` with `deg q ≤ 2N` induces a localizing
//! matrix `L_q(y) = Σ_α A_α y_α` built from `q(x)·[x]_d[x]_dᵀ`,
//! `d = N − ⌈deg q / 2⌉`. Equality constraints become scalar rows (one per
//! distinct entry of `L_q`), inequality multipliers become PSD blocks.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::detvar::{
    inactive_system, phi_system, psi_system, AugmentedSystem, DetvarError, OptProblem,
    SystemVariant,
};
use crate::poly::{binomial, monomials_up_to, rational_to_f64, Monomial, Polynomial};
use crate::sdp::{SdpBlock, SdpProblem};

/// Largest number of inequalities for which all `2^m₂` products are formed.
pub const MAX_CROSS_PRODUCT_INEQUALITIES: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelaxationError {
    #[error("relaxation order {order} too small; minimal admissible order is {minimal}")]
    OrderTooSmall { order: u32, minimal: u32 },
    #[error("{m2} inequalities exceed the cross-product limit of {MAX_CROSS_PRODUCT_INEQUALITIES}")]
    TooManyInequalities { m2: usize },
    #[error("relaxation has no PSD block")]
    NoPsdBlock,
    #[error("variant {variant} expects a {expected:?} system, got {got:?}")]
    SystemMismatch {
        variant: Variant,
        expected: SystemVariant,
        got: SystemVariant,
    },
    #[error(transparent)]
    Detvar(#[from] DetvarError),
    #[error("SDPA parse error at line {line}: {message}")]
    Sdpa { line: usize, message: String },
}

/// Which equations and which inequality multipliers enter the SDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// minimal-η Jacobian equations, all products `g_ν` as PSD blocks
    JacobianSchmudgen,
    /// every maximal minor as an equation, all products `g_ν`
    JacobianAllminors,
    /// minimal-η Jacobian equations, blocks for `1, g₁, …, g_m₂` only
    JacobianPutinar,
    /// `[∇f ∇h]` generators, all products `g_ν`
    InactiveSchmudgen,
    /// `[∇f ∇h]` generators, blocks for `1, g₁, …, g_m₂`
    InactivePutinar,
    /// classical relaxation, blocks for `1, g₁, …, g_m₂`
    BaselinePutinar,
    /// classical relaxation with all products `g_ν`
    BaselineSchmudgen,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::JacobianSchmudgen,
        Variant::JacobianAllminors,
        Variant::JacobianPutinar,
        Variant::InactiveSchmudgen,
        Variant::InactivePutinar,
        Variant::BaselinePutinar,
        Variant::BaselineSchmudgen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::JacobianSchmudgen => "jacobian-schmudgen",
            Variant::JacobianAllminors => "jacobian-allminors",
            Variant::JacobianPutinar => "jacobian-putinar",
            Variant::InactiveSchmudgen => "inactive-schmudgen",
            Variant::InactivePutinar => "inactive-putinar",
            Variant::BaselinePutinar => "baseline-putinar",
            Variant::BaselineSchmudgen => "baseline-schmudgen",
        }
    }

    pub fn from_name(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    /// The generator system this variant adds, if any.
    pub fn system(self) -> Option<SystemVariant> {
        match self {
            Variant::JacobianSchmudgen | Variant::JacobianPutinar => Some(SystemVariant::MinimalEta),
            Variant::JacobianAllminors => Some(SystemVariant::AllMinors),
            Variant::InactiveSchmudgen | Variant::InactivePutinar => Some(SystemVariant::Inactive),
            Variant::BaselinePutinar | Variant::BaselineSchmudgen => None,
        }
    }

    pub fn uses_cross_products(self) -> bool {
        !matches!(
            self,
            Variant::JacobianPutinar | Variant::InactivePutinar | Variant::BaselinePutinar
        )
    }

    /// Builds the generator system for this variant (empty for baselines).
    pub fn build_system(self, p: &OptProblem) -> Result<AugmentedSystem, DetvarError> {
        match self.system() {
            Some(SystemVariant::MinimalEta) => phi_system(p),
            Some(SystemVariant::AllMinors) => psi_system(p),
            Some(SystemVariant::Inactive) => inactive_system(p),
            None => Ok(AugmentedSystem {
                source: p.clone(),
                variant: SystemVariant::MinimalEta,
                generators: Vec::new(),
            }),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::from_name(s).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            format!("unknown variant '{s}' (expected one of {})", names.join(", "))
        })
    }
}

/// Monomials of degree `≤ 2N` with their positions in the moment vector.
#[derive(Debug, Clone)]
pub struct MomentBasis {
    nvars: usize,
    order: u32,
    monomials: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
}

impl MomentBasis {
    pub fn new(nvars: usize, order: u32) -> Self {
        let monomials = monomials_up_to(nvars, 2 * order);
        let index = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        MomentBasis {
            nvars,
            order,
            monomials,
            index,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn position(&self, m: &Monomial) -> Option<usize> {
        self.index.get(m).copied()
    }

    pub fn monomial(&self, i: usize) -> &Monomial {
        &self.monomials[i]
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    /// The first `C(n+d, d)` monomials: the degree-`≤ d` basis `[x]_d`.
    pub fn truncated(&self, d: u32) -> &[Monomial] {
        &self.monomials[..binomial(self.nvars + d as usize, d as usize)]
    }

    /// Moment vector of the Dirac measure at `u`: `y_α = u^α`.
    pub fn point_mass(&self, u: &[f64]) -> Vec<f64> {
        self.monomials.iter().map(|m| m.eval(u)).collect()
    }
}

/// Localizing matrix `L_q(y) = Σ_α A_α y_α` of one polynomial.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub label: String,
    /// Exponent vector `ν ∈ {0,1}^m₂` of the product `g_ν` this block
    /// localizes.
    pub nu: Vec<u8>,
    pub localized: Polynomial,
    /// `d = N − ⌈deg q / 2⌉`.
    pub half_degree: u32,
    pub size: usize,
    /// Moment position → upper-triangular entries `(i, j, coefficient)`.
    pub coeffs: BTreeMap<usize, Vec<(usize, usize, BigRational)>>,
}

impl LmiBlock {
    /// Numeric matrix `Σ_α A_α y_α`.
    pub fn evaluate(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size, self.size);
        for (&pos, entries) in &self.coeffs {
            for (i, j, c) in entries {
                let v = rational_to_f64(c) * y[pos];
                m[(*i, *j)] += v;
                if i != j {
                    m[(*j, *i)] += v;
                }
            }
        }
        m
    }

    /// Size of the order-`(N − 1)` localizing matrix, which is the leading
    /// principal submatrix of this block; `None` when `d = 0`.
    pub fn previous_order_size(&self, nvars: usize) -> Option<usize> {
        (self.half_degree > 0)
            .then(|| binomial(nvars + self.half_degree as usize - 1, self.half_degree as usize - 1))
    }
}

/// Builds the localizing block of `q` for order `N` over `basis`.
pub fn localizing_block(
    q: &Polynomial,
    basis: &MomentBasis,
    label: impl Into<String>,
    nu: Vec<u8>,
) -> Result<LmiBlock, RelaxationError> {
    let order = basis.order();
    let deg = q.degree();
    if deg > 2 * order {
        return Err(RelaxationError::OrderTooSmall {
            order,
            minimal: deg.div_ceil(2),
        });
    }
    let d = order - deg.div_ceil(2);
    let half = basis.truncated(d);
    let mut coeffs: BTreeMap<usize, Vec<(usize, usize, BigRational)>> = BTreeMap::new();
    for i in 0..half.len() {
        for j in i..half.len() {
            let shift = half[i].mul(&half[j]);
            for (m, c) in q.terms() {
                let pos = basis
                    .position(&m.mul(&shift))
                    .expect("degree bounded by 2N");
                coeffs.entry(pos).or_default().push((i, j, c.clone()));
            }
        }
    }
    Ok(LmiBlock {
        label: label.into(),
        nu,
        localized: q.clone(),
        half_degree: d,
        size: half.len(),
        coeffs,
    })
}

/// `L_f`: the coefficient of each basis monomial in `f`.
pub fn objective_vector(
    f: &Polynomial,
    basis: &MomentBasis,
) -> Result<BTreeMap<usize, BigRational>, RelaxationError> {
    if f.degree() > 2 * basis.order() {
        return Err(RelaxationError::OrderTooSmall {
            order: basis.order(),
            minimal: f.degree().div_ceil(2),
        });
    }
    Ok(f.terms()
        .map(|(m, c)| (basis.position(m).expect("degree bounded"), c.clone()))
        .collect())
}

/// All `2^m₂` products `g_ν`, ordered by popcount then lexicographically
/// (`g₁` before `g₂`).
pub fn cross_products(
    g: &[Polynomial],
    nvars: usize,
) -> Result<Vec<(Vec<u8>, Polynomial)>, RelaxationError> {
    let m2 = g.len();
    if m2 > MAX_CROSS_PRODUCT_INEQUALITIES {
        return Err(RelaxationError::TooManyInequalities { m2 });
    }
    let mut out = Vec::with_capacity(1 << m2);
    for k in 0..=m2 {
        for subset in crate::detvar::k_subsets(m2, k) {
            let mut nu = vec![0u8; m2];
            let mut prod = Polynomial::one(nvars);
            for &j in &subset {
                nu[j] = 1;
                prod = &prod * &g[j];
            }
            out.push((nu, prod));
        }
    }
    Ok(out)
}

fn multiplier_label(nu: &[u8]) -> String {
    let parts: Vec<String> = nu
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .map(|(j, _)| format!("g{}", j + 1))
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

/// One scalar equality `Σ coeffs · y = rhs`, normalized so that the
/// coefficient of the highest monomial is 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EqualityRow {
    pub coeffs: Vec<(usize, BigRational)>,
    pub rhs: BigRational,
    /// How many localizing entries produced this same row.
    pub multiplicity: usize,
    pub source: String,
}

/// The machine-level moment SDP.
#[derive(Debug, Clone)]
pub struct RelaxationSdp {
    pub variant: Variant,
    pub basis: MomentBasis,
    pub objective: BTreeMap<usize, BigRational>,
    pub equalities: Vec<EqualityRow>,
    pub blocks: Vec<LmiBlock>,
    pub truncation: EqualityTruncation,
    /// Polynomials whose multiples were set to zero: the `h_i` and, for
    /// Jacobian variants, the generators.
    pub ideal: Vec<Polynomial>,
}

/// Multipliers `g_ν` that become PSD blocks for `variant`.
pub fn multipliers(p: &OptProblem, variant: Variant) -> Result<Vec<(Vec<u8>, Polynomial)>, RelaxationError> {
    if variant.uses_cross_products() {
        cross_products(&p.inequalities, p.nvars())
    } else {
        let m2 = p.m2();
        let mut out = vec![(vec![0u8; m2], Polynomial::one(p.nvars()))];
        for (j, g) in p.inequalities.iter().enumerate() {
            let mut nu = vec![0u8; m2];
            nu[j] = 1;
            out.push((nu, g.clone()));
        }
        Ok(out)
    }
}

/// Smallest `N ≥ 1` with `2N` at least every degree involved.
pub fn minimal_order(
    p: &OptProblem,
    aug: &AugmentedSystem,
    variant: Variant,
) -> Result<u32, RelaxationError> {
    let mut deg = p.objective.degree();
    deg = deg.max(p.equalities.iter().map(Polynomial::degree).max().unwrap_or(0));
    if variant.system().is_some() {
        deg = deg.max(aug.max_degree());
    }
    let mults = multipliers(p, variant)?;
    deg = deg.max(mults.iter().map(|(_, q)| q.degree()).max().unwrap_or(0));
    Ok(deg.div_ceil(2).max(1))
}

/// Which products `q·x^γ` of an equality polynomial `q` are set to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EqualityTruncation {
    /// `deg q + |γ| ≤ 2N`: the degree-`2N` truncated ideal, which is what the
    /// SOS dual pairs with.
    #[default]
    Ideal,
    /// `|γ| ≤ 2(N − ⌈deg q / 2⌉)`: the entries of the localizing matrix.
    /// Differs from `Ideal` only for odd-degree `q`.
    Localizing,
}

impl EqualityTruncation {
    fn max_multiplier_degree(self, q_degree: u32, order: u32) -> u32 {
        match self {
            EqualityTruncation::Ideal => 2 * order - q_degree,
            EqualityTruncation::Localizing => 2 * (order - q_degree.div_ceil(2)),
        }
    }
}

/// Assembles the order-`N` relaxation.
pub fn assemble(
    p: &OptProblem,
    aug: &AugmentedSystem,
    order: u32,
    variant: Variant,
) -> Result<RelaxationSdp, RelaxationError> {
    assemble_with(p, aug, order, variant, EqualityTruncation::default())
}

pub fn assemble_with(
    p: &OptProblem,
    aug: &AugmentedSystem,
    order: u32,
    variant: Variant,
    truncation: EqualityTruncation,
) -> Result<RelaxationSdp, RelaxationError> {
    if let Some(expected) = variant.system() {
        if aug.variant != expected {
            return Err(RelaxationError::SystemMismatch {
                variant,
                expected,
                got: aug.variant,
            });
        }
    }
    let minimal = minimal_order(p, aug, variant)?;
    if order < minimal {
        return Err(RelaxationError::OrderTooSmall { order, minimal });
    }
    let basis = MomentBasis::new(p.nvars(), order);
    let objective = objective_vector(&p.objective, &basis)?;

    let mut ideal: Vec<Polynomial> = p.equalities.iter().filter(|h| !h.is_zero()).cloned().collect();
    if variant.system().is_some() {
        ideal.extend(aug.generators.iter().filter(|g| !g.poly.is_zero()).map(|g| g.poly.clone()));
    }

    let mut rows = RowCollector::default();
    let mut one = BTreeMap::new();
    one.insert(0usize, BigRational::one());
    rows.push(one, BigRational::one(), "y0 = 1".into());
    for (i, h) in p.equalities.iter().enumerate() {
        localizing_rows(h, &basis, truncation, &format!("h{}", i + 1), &mut rows);
    }
    if variant.system().is_some() {
        for g in &aug.generators {
            let label = format!(
                "gen[J={:?},{}]",
                g.subset.iter().map(|j| j + 1).collect::<Vec<_>>(),
                g.index
            );
            localizing_rows(&g.poly, &basis, truncation, &label, &mut rows);
        }
    }

    let blocks = multipliers(p, variant)?
        .into_iter()
        .map(|(nu, q)| {
            let label = multiplier_label(&nu);
            localizing_block(&q, &basis, label, nu)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if blocks.is_empty() {
        return Err(RelaxationError::NoPsdBlock);
    }

    Ok(RelaxationSdp {
        variant,
        basis,
        objective,
        equalities: rows.finish(),
        blocks,
        truncation,
        ideal,
    })
}

/// Convenience: build the variant's generator system and assemble.
pub fn build_relaxation(
    p: &OptProblem,
    variant: Variant,
    order: Option<u32>,
) -> Result<RelaxationSdp, RelaxationError> {
    build_relaxation_with(p, variant, order, EqualityTruncation::default())
}

pub fn build_relaxation_with(
    p: &OptProblem,
    variant: Variant,
    order: Option<u32>,
    truncation: EqualityTruncation,
) -> Result<RelaxationSdp, RelaxationError> {
    let aug = variant.build_system(p)?;
    let order = match order {
        Some(n) => n,
        None => minimal_order(p, &aug, variant)?,
    };
    assemble_with(p, &aug, order, variant, truncation)
}

/// Exact nullspace of the matrix with the given rows (`ncols` columns).
fn rational_nullspace(mut rows: Vec<Vec<BigRational>>, ncols: usize) -> Vec<Vec<BigRational>> {
    let mut pivots: Vec<usize> = Vec::new();
    let mut r = 0;
    for col in 0..ncols {
        let Some(p) = (r..rows.len()).find(|&i| !rows[i][col].is_zero()) else {
            continue;
        };
        rows.swap(r, p);
        let inv = BigRational::one() / rows[r][col].clone();
        for v in rows[r].iter_mut() {
            *v = &*v * &inv;
        }
        let pivot_row = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && !row[col].is_zero() {
                let f = row[col].clone();
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    if !pv.is_zero() {
                        *v = &*v - &f * pv;
                    }
                }
            }
        }
        pivots.push(col);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    let free: Vec<usize> = (0..ncols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![BigRational::zero(); ncols];
            v[f] = BigRational::one();
            for (i, &pc) in pivots.iter().enumerate() {
                v[pc] = -rows[i][f].clone();
            }
            v
        })
        .collect()
}

#[derive(Default)]
struct RowCollector {
    rows: Vec<EqualityRow>,
    seen: HashMap<Vec<(usize, BigRational)>, usize>,
}

impl RowCollector {
    fn push(&mut self, coeffs: BTreeMap<usize, BigRational>, rhs: BigRational, source: String) {
        if coeffs.is_empty() {
            return;
        }
        let (_, lead) = coeffs.iter().next_back().expect("nonempty");
        let inv = BigRational::one() / lead.clone();
        let key: Vec<(usize, BigRational)> =
            coeffs.into_iter().map(|(k, v)| (k, v * &inv)).collect();
        let rhs = rhs * &inv;
        match self.seen.get(&key) {
            Some(&i) if self.rows[i].rhs == rhs => self.rows[i].multiplicity += 1,
            _ => {
                self.seen.insert(key.clone(), self.rows.len());
                self.rows.push(EqualityRow {
                    coeffs: key,
                    rhs,
                    multiplicity: 1,
                    source,
                });
            }
        }
    }

    fn finish(self) -> Vec<EqualityRow> {
        self.rows
    }
}

/// Scalar rows `L(q·x^γ) = 0` for the multipliers `x^γ` allowed by
/// `truncation`.
fn localizing_rows(
    q: &Polynomial,
    basis: &MomentBasis,
    truncation: EqualityTruncation,
    label: &str,
    rows: &mut RowCollector,
) {
    if q.is_zero() {
        return;
    }
    let top = truncation.max_multiplier_degree(q.degree(), basis.order());
    for gamma in basis.truncated(top) {
        let mut coeffs = BTreeMap::new();
        for (m, c) in q.terms() {
            let pos = basis.position(&m.mul(gamma)).expect("degree bounded");
            coeffs.insert(pos, c.clone());
        }
        rows.push(coeffs, BigRational::zero(), format!("{label}*{gamma}"));
    }
}

impl RelaxationSdp {
    pub fn order(&self) -> u32 {
        self.basis.order()
    }

    pub fn nvars(&self) -> usize {
        self.basis.nvars()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.size).collect()
    }

    /// Index of the plain moment matrix block (`ν = 0`).
    pub fn moment_block(&self) -> &LmiBlock {
        self.blocks
            .iter()
            .find(|b| b.nu.iter().all(|&v| v == 0))
            .expect("every relaxation has a moment matrix block")
    }

    /// `max |E y − b|` over the exact equality rows.
    pub fn equality_residual(&self, y: &[f64]) -> f64 {
        self.equalities
            .iter()
            .map(|r| {
                let lhs: f64 = r.coeffs.iter().map(|(k, c)| rational_to_f64(c) * y[*k]).sum();
                (lhs - rational_to_f64(&r.rhs)).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective
            .iter()
            .map(|(k, c)| rational_to_f64(c) * y[*k])
            .sum()
    }

    /// Floating-point SDP for the solver. Each equality row is scaled to
    /// unit ∞-norm.
    pub fn to_numeric(&self) -> SdpProblem {
        let nv = self.basis.len();
        let mut c = vec![0.0; nv];
        for (k, v) in &self.objective {
            c[*k] = rational_to_f64(v);
        }
        let mut eq_rows = Vec::with_capacity(self.equalities.len());
        let mut eq_rhs = Vec::with_capacity(self.equalities.len());
        for r in &self.equalities {
            let scale = r
                .coeffs
                .iter()
                .map(|(_, v)| v.abs())
                .max()
                .unwrap_or_else(BigRational::one);
            let inv = BigRational::one() / scale;
            eq_rows.push(
                r.coeffs
                    .iter()
                    .map(|(k, v)| (*k, rational_to_f64(&(v * &inv))))
                    .collect(),
            );
            eq_rhs.push(rational_to_f64(&(&r.rhs * &inv)));
        }
        let blocks = self
            .blocks
            .iter()
            .map(|b| SdpBlock {
                size: b.size,
                terms: b
                    .coeffs
                    .iter()
                    .map(|(&pos, entries)| {
                        (
                            pos,
                            entries
                                .iter()
                                .map(|(i, j, v)| (*i, *j, rational_to_f64(v)))
                                .collect(),
                        )
                    })
                    .collect(),
            })
            .collect();
        SdpProblem {
            num_vars: nv,
            c,
            eq_rows,
            eq_rhs,
            blocks,
        }
    }

    /// Coefficient vectors (over the block's row basis) of the products
    /// `h·x^β` with `h` in the ideal part and `deg h + |β| ≤ d`. On the
    /// affine set of the equality rows every PSD solution has them in its
    /// kernel.
    pub fn forced_kernel(&self, block: usize) -> Vec<Vec<BigRational>> {
        let b = &self.blocks[block];
        let d = b.half_degree;
        let mut out = Vec::new();
        for h in &self.ideal {
            let dh = h.degree();
            if dh > d {
                continue;
            }
            for beta in self.basis.truncated(d - dh) {
                let mut v = vec![BigRational::zero(); b.size];
                for (m, c) in h.terms() {
                    let pos = self.basis.position(&m.mul(beta)).expect("degree bounded");
                    v[pos] = c.clone();
                }
                out.push(v);
            }
        }
        out
    }

    /// Orthonormal basis `P` of the complement of the forced kernel of each
    /// block, or `None` when the kernel is trivial. Positive
    /// semidefiniteness of `L(y)` on the affine set is equivalent to that of
    /// `Pᵀ L(y) P`.
    pub fn face_projections(&self) -> Vec<Option<DMatrix<f64>>> {
        (0..self.blocks.len())
            .map(|k| {
                let kernel = self.forced_kernel(k);
                if kernel.is_empty() {
                    return None;
                }
                let size = self.blocks[k].size;
                let null = rational_nullspace(kernel, size);
                if null.len() == size {
                    return None;
                }
                if null.is_empty() {
                    return Some(DMatrix::zeros(size, 0));
                }
                let m = DMatrix::from_fn(size, null.len(), |i, j| rational_to_f64(&null[j][i]));
                Some(m.qr().q())
            })
            .collect()
    }

    /// Numeric SDP with each block restricted to its face: block `k`
    /// becomes `P_kᵀ L_k(y) P_k`. Blocks whose face is `{0}` are dropped.
    /// Returns the problem and, per original block, its projection (`None`
    /// for untouched blocks, and for dropped blocks a zero-column matrix).
    pub fn to_numeric_reduced(&self) -> (SdpProblem, Vec<Option<DMatrix<f64>>>) {
        let mut num = self.to_numeric();
        let proj = self.face_projections();
        let mut blocks = Vec::with_capacity(num.blocks.len());
        for (blk, p) in num.blocks.into_iter().zip(&proj) {
            let Some(p) = p else {
                blocks.push(blk);
                continue;
            };
            let r = p.ncols();
            if r == 0 {
                continue;
            }
            let mut terms = Vec::with_capacity(blk.terms.len());
            for (pos, entries) in blk.terms {
                let mut a = DMatrix::<f64>::zeros(blk.size, blk.size);
                for (i, j, v) in entries {
                    a[(i, j)] += v;
                    if i != j {
                        a[(j, i)] += v;
                    }
                }
                let red = p.transpose() * a * p;
                let top = red.amax();
                if top == 0.0 {
                    continue;
                }
                let cut = 1e-13 * top;
                let mut e = Vec::new();
                for i in 0..r {
                    for j in i..r {
                        let v = 0.5 * (red[(i, j)] + red[(j, i)]);
                        if v.abs() > cut {
                            e.push((i, j, v));
                        }
                    }
                }
                terms.push((pos, e));
            }
            blocks.push(SdpBlock { size: r, terms });
        }
        num.blocks = blocks;
        (num, proj)
    }

    /// Block structure as JSON, for debugging and the export sidecar.
    pub fn structure_json(&self, names: &[String]) -> serde_json::Value {
        serde_json::json!({
            "variant": self.variant,
            "order": self.order(),
            "nvars": self.nvars(),
            "moments": self.basis.monomials().iter().map(|m| {
                let t = m.to_text(names);
                if t.is_empty() { "1".to_string() } else { t }
            }).collect::<Vec<_>>(),
            "equality_rows": self.equalities.len(),
            "blocks": self.blocks.iter().map(|b| serde_json::json!({
                "label": b.label,
                "size": b.size,
                "half_degree": b.half_degree,
            })).collect::<Vec<_>>(),
        })
    }

    /// SDPA sparse format. The moment vector is the variable vector
    /// (`mDIM = len(y)`); each PSD block is one SDP block and all equality
    /// rows go into one trailing diagonal block as the pair
    /// `E_r y − b_r ≥ 0`, `−E_r y + b_r ≥ 0`.
    pub fn to_sdpa(&self) -> String {
        let num = self.to_numeric();
        write_sdpa(&num)
    }
}

/// Writes a numeric SDP in SDPA sparse format (see
/// [`RelaxationSdp::to_sdpa`] for the encoding of equalities).
pub fn write_sdpa(num: &SdpProblem) -> String {
    let mut out = String::new();
    let has_eq = !num.eq_rows.is_empty();
    let nblocks = num.blocks.len() + usize::from(has_eq);
    let _ = writeln!(out, "\"moment relaxation: {} moments\"", num.num_vars);
    let _ = writeln!(out, "{}", num.num_vars);
    let _ = writeln!(out, "{nblocks}");
    let mut sizes: Vec<String> = num.blocks.iter().map(|b| b.size.to_string()).collect();
    if has_eq {
        sizes.push(format!("-{}", 2 * num.eq_rows.len()));
    }
    let _ = writeln!(out, "{}", sizes.join(" "));
    let cs: Vec<String> = num.c.iter().map(|v| fmt_float(*v)).collect();
    let _ = writeln!(out, "{}", cs.join(" "));

    // entries grouped by (matrix, block) with deterministic order
    let mut lines: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for (b, blk) in num.blocks.iter().enumerate() {
        for (var, entries) in &blk.terms {
            let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for &(i, j, v) in entries {
                *acc.entry((i, j)).or_default() += v;
            }
            for ((i, j), v) in acc {
                if v != 0.0 {
                    lines.push((var + 1, b + 1, i + 1, j + 1, v));
                }
            }
        }
    }
    if has_eq {
        let b = num.blocks.len() + 1;
        for (r, (row, rhs)) in num.eq_rows.iter().zip(&num.eq_rhs).enumerate() {
            let (p, q) = (2 * r + 1, 2 * r + 2);
            if *rhs != 0.0 {
                lines.push((0, b, p, p, *rhs));
                lines.push((0, b, q, q, -*rhs));
            }
            for &(k, v) in row {
                lines.push((k + 1, b, p, p, v));
                lines.push((k + 1, b, q, q, -v));
            }
        }
    }
    lines.sort_by_key(|a| (a.0, a.1, a.2, a.3));
    for (m, b, i, j, v) in lines {
        let _ = writeln!(out, "{m} {b} {i} {j} {}", fmt_float(v));
    }
    out
}

fn fmt_float(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:e}")
}

/// Parsed SDPA sparse data: `min cᵀx s.t. Σ F_i x_i − F_0 ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpaData {
    pub num_vars: usize,
    /// Positive for SDP blocks, negative for diagonal blocks.
    pub block_struct: Vec<i64>,
    pub c: Vec<f64>,
    /// `(matrix, block, i, j, value)`, all 1-based, matrix 0 is `F_0`.
    pub entries: Vec<(usize, usize, usize, usize, f64)>,
}

/// Reads SDPA sparse format (`.dat-s`).
pub fn read_sdpa(text: &str) -> Result<SdpaData, RelaxationError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('"') && !l.starts_with('*'));
    let err = |line: usize, message: &str| RelaxationError::Sdpa {
        line,
        message: message.to_string(),
    };
    let clean = |l: &str| -> String {
        l.replace([',', '{', '}', '(', ')'], " ")
    };
    let (ln, l) = lines.next().ok_or_else(|| err(0, "missing mDIM"))?;
    let num_vars: usize = clean(l)
        .split_whitespace()
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| err(ln, "bad mDIM"))?;
    let (ln, l) = lines.next().ok_or_else(|| err(ln, "missing nBLOCK"))?;
    let nblock: usize = clean(l)
        .split_whitespace()
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| err(ln, "bad nBLOCK"))?;
    let (ln, l) = lines.next().ok_or_else(|| err(ln, "missing block structure"))?;
    let block_struct: Vec<i64> = clean(l)
        .split_whitespace()
        .take(nblock)
        .map(|t| t.parse().map_err(|_| err(ln, "bad block size")))
        .collect::<Result<_, _>>()?;
    if block_struct.len() != nblock {
        return Err(err(ln, "block structure shorter than nBLOCK"));
    }
    let mut c = Vec::with_capacity(num_vars);
    let mut last = ln;
    while c.len() < num_vars {
        let (ln, l) = lines.next().ok_or_else(|| err(last, "objective vector too short"))?;
        last = ln;
        for t in clean(l).split_whitespace() {
            c.push(t.parse::<f64>().map_err(|_| err(ln, "bad objective coefficient"))?);
        }
    }
    let mut entries = Vec::new();
    for (ln, l) in lines {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 5 {
            return Err(err(ln, "entry line needs 5 fields"));
        }
        let idx = |k: usize| toks[k].parse::<usize>().map_err(|_| err(ln, "bad index"));
        let v: f64 = toks[4].parse().map_err(|_| err(ln, "bad value"))?;
        entries.push((idx(0)?, idx(1)?, idx(2)?, idx(3)?, v));
    }
    Ok(SdpaData {
        num_vars,
        block_struct,
        c,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{default_names, parse_poly};

    fn problem(n: usize, f: &str, h: &[&str], g: &[&str]) -> OptProblem {
        let names = default_names(n);
        OptProblem::new(
            parse_poly(f, &names).unwrap(),
            h.iter().map(|s| parse_poly(s, &names).unwrap()).collect(),
            g.iter().map(|s| parse_poly(s, &names).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn hankel_moment_matrix() {
        let basis = MomentBasis::new(1, 1);
        let b = localizing_block(&Polynomial::one(1), &basis, "1", vec![]).unwrap();
        assert_eq!(b.size, 2);
        let m = b.evaluate(&[10.0, 20.0, 30.0]);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[10.0, 20.0, 20.0, 30.0]));
    }

    #[test]
    fn scalar_localizer() {
        let basis = MomentBasis::new(1, 1);
        let q = parse_poly("1 - x1^2", &default_names(1)).unwrap();
        let b = localizing_block(&q, &basis, "g1", vec![1]).unwrap();
        assert_eq!(b.size, 1);
        assert_eq!(b.evaluate(&[10.0, 20.0, 30.0])[(0, 0)], -20.0);
        let too_high = parse_poly("x1^3", &default_names(1)).unwrap();
        assert!(matches!(
            localizing_block(&too_high, &basis, "q", vec![]),
            Err(RelaxationError::OrderTooSmall { minimal: 2, .. })
        ));
    }

    #[test]
    fn block_size_n3_n4() {
        let basis = MomentBasis::new(3, 4);
        let b = localizing_block(&Polynomial::one(3), &basis, "1", vec![]).unwrap();
        assert_eq!(b.size, 35);
    }

    #[test]
    fn objective_entries() {
        let names = default_names(2);
        let basis = MomentBasis::new(2, 1);
        let f = parse_poly("x1^2 + x2^2", &names).unwrap();
        let v = objective_vector(&f, &basis).unwrap();
        let positions: Vec<_> = v.keys().copied().collect();
        assert_eq!(positions, vec![3, 5]);
        let c = objective_vector(&Polynomial::from_int(2, 7), &basis).unwrap();
        assert_eq!(c.get(&0), Some(&BigRational::from_integer(7.into())));

        let motz = parse_poly("x1^4*x2^2+x1^2*x2^4+x3^6-3*x1^2*x2^2*x3^2", &default_names(3)).unwrap();
        let basis = MomentBasis::new(3, 4);
        let v = objective_vector(&motz, &basis).unwrap();
        assert_eq!(v.len(), 4);
        let pos = basis.position(&Monomial::new(vec![2, 2, 2])).unwrap();
        assert_eq!(v[&pos], BigRational::from_integer((-3).into()));
    }

    #[test]
    fn cross_product_order() {
        let names = default_names(2);
        assert_eq!(cross_products(&[], 2).unwrap().len(), 1);
        let g = vec![parse_poly("x1", &names).unwrap(), parse_poly("x2", &names).unwrap()];
        let cp = cross_products(&g, 2).unwrap();
        let nus: Vec<_> = cp.iter().map(|(nu, _)| nu.clone()).collect();
        assert_eq!(nus, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![1, 1]]);
        assert_eq!(cp[3].1, parse_poly("x1*x2", &names).unwrap());
        let many = vec![Polynomial::one(2); 13];
        assert!(matches!(
            cross_products(&many, 2),
            Err(RelaxationError::TooManyInequalities { m2: 13 })
        ));
    }

    #[test]
    fn m5_structure() {
        let p = problem(
            2,
            "x1^2 + x2^2",
            &[],
            &["x2^2 - 1", "x1^2 - 5*x1*x2 - 1", "x1^2 + 5*x1*x2 - 1"],
        );
        let degs: Vec<u32> = cross_products(&p.inequalities, 2)
            .unwrap()
            .iter()
            .map(|(_, q)| q.degree())
            .collect();
        assert_eq!(degs, vec![0, 2, 2, 2, 4, 4, 4, 6]);
        let sdp = build_relaxation(&p, Variant::JacobianSchmudgen, Some(4)).unwrap();
        assert_eq!(sdp.basis.len(), 45);
        assert_eq!(sdp.block_sizes(), vec![15, 10, 10, 10, 6, 6, 6, 3]);
        assert!(matches!(
            build_relaxation(&p, Variant::JacobianSchmudgen, Some(3)),
            Err(RelaxationError::OrderTooSmall { order: 3, minimal: 4 })
        ));
        assert_eq!(
            build_relaxation(&p, Variant::JacobianSchmudgen, None).unwrap().order(),
            4
        );
    }

    #[test]
    fn one_row_pins_y0() {
        let p = problem(1, "x1^2", &[], &["1 - x1^2"]);
        let sdp = build_relaxation(&p, Variant::BaselinePutinar, Some(2)).unwrap();
        let pins: Vec<_> = sdp
            .equalities
            .iter()
            .filter(|r| r.coeffs == vec![(0, BigRational::one())])
            .collect();
        assert_eq!(pins.len(), 1);
        assert_eq!(pins[0].rhs, BigRational::one());
    }

    #[test]
    fn equality_rows_dedupe() {
        // h and 2h generate identical normalized rows
        let p = problem(2, "x1^2 + x2^2", &["x1 + x2 - 1", "2*x1 + 2*x2 - 2"], &[]);
        let sdp = build_relaxation(&p, Variant::BaselinePutinar, Some(2)).unwrap();
        // y0 row plus the 10 shifts (|γ| <= 3) of the one distinct equality
        assert_eq!(sdp.equalities.len(), 11);
        assert!(sdp.equalities[1..].iter().all(|r| r.multiplicity == 2));
    }

    #[test]
    fn robinson_sizes() {
        let p = problem(
            3,
            "x1^6+x2^6+x3^6+3*x1^2*x2^2*x3^2-3*(x1^2*(x2^4+x3^4)+x2^2*(x3^4+x1^4)+x3^2*(x1^4+x2^4))",
            &["x1 + x2 + x3 - 1"],
            &[],
        );
        let sdp = build_relaxation(&p, Variant::JacobianSchmudgen, Some(4)).unwrap();
        assert_eq!(sdp.block_sizes(), vec![35]);
        assert_eq!(sdp.basis.len(), 165);
    }

    #[test]
    fn sdpa_round_trip() {
        let p = problem(1, "x1", &[], &["1 - x1^2"]);
        let sdp = build_relaxation(&p, Variant::BaselinePutinar, Some(1)).unwrap();
        let text = sdp.to_sdpa();
        let parsed = read_sdpa(&text).unwrap();
        assert_eq!(parsed.num_vars, 3);
        assert_eq!(parsed.block_struct, vec![2, 1, -2]);
        assert_eq!(parsed.c, vec![0.0, 1.0, 0.0]);
        assert_eq!(text, sdp.to_sdpa());
        assert!(read_sdpa("3\n1\n").is_err());
    }

    #[test]
    fn point_mass_is_rank_one_scaled() {
        let names = default_names(2);
        let basis = MomentBasis::new(2, 2);
        let q = parse_poly("1 - x1^2 - x2^2", &names).unwrap();
        let b = localizing_block(&q, &basis, "g", vec![1]).unwrap();
        let u = [0.3, -0.4];
        let m = b.evaluate(&basis.point_mass(&u));
        let v: Vec<f64> = basis.truncated(b.half_degree).iter().map(|m| m.eval(&u)).collect();
        let qu = q.eval(&u).unwrap();
        for i in 0..b.size {
            for j in 0..b.size {
                assert!((m[(i, j)] - qu * v[i] * v[j]).abs() < 1e-12);
            }
        }
    }
}
