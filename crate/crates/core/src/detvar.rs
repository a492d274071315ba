//! Jacobian determinantal-variety generators.
//!
//! For a problem `min f s.t. h = 0, g ≥ 0` and a subset `J` of the
//! inequalities, `B^J = [∇f ∇h ∇g_J]` has rank at most `m₁ + |J|` at every
//! KKT point whose active set is `J`. The rank condition is encoded by the
//! `nk − k² + 1` minimal generators `η_ℓ` (sums of maximal minors of equal
//! index sum), then multiplied by the product of the inequalities outside
//! `J` so that a single system covers every possible active set.

use serde::Serialize;
use thiserror::Error;

use crate::poly::{binomial, PolyError, PolyMatrix, Polynomial};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetvarError {
    #[error("problem has {m1} equalities but only {n} variables (need m1 <= n)")]
    TooManyEqualities { m1: usize, n: usize },
    #[error("Jacobian would have {cols} columns but only {n} rows")]
    TooManyColumns { cols: usize, n: usize },
    #[error("invalid subset: {0}")]
    InvalidSubset(String),
    #[error("invalid minor index set {0:?}")]
    InvalidIndexSet(Vec<usize>),
    #[error("matrix has {cols} columns and {rows} rows; need cols <= rows")]
    WideMatrix { rows: usize, cols: usize },
    #[error("inconsistent variable counts in problem")]
    VarCount,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// `min f(x) s.t. h_i(x) = 0, g_j(x) >= 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptProblem {
    nvars: usize,
    pub objective: Polynomial,
    pub equalities: Vec<Polynomial>,
    pub inequalities: Vec<Polynomial>,
}

impl OptProblem {
    pub fn new(
        objective: Polynomial,
        equalities: Vec<Polynomial>,
        inequalities: Vec<Polynomial>,
    ) -> Result<Self, DetvarError> {
        let nvars = objective.nvars();
        if equalities
            .iter()
            .chain(&inequalities)
            .any(|p| p.nvars() != nvars)
        {
            return Err(DetvarError::VarCount);
        }
        Ok(OptProblem {
            nvars,
            objective,
            equalities,
            inequalities,
        })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn m1(&self) -> usize {
        self.equalities.len()
    }

    pub fn m2(&self) -> usize {
        self.inequalities.len()
    }

    /// Product of the inequalities whose indices are not in `subset`.
    pub fn complement_product(&self, subset: &[usize]) -> Polynomial {
        self.inequalities
            .iter()
            .enumerate()
            .filter(|(j, _)| !subset.contains(j))
            .fold(Polynomial::one(self.nvars), |acc, (_, g)| &acc * g)
    }
}

/// `min(m₁ + m₂, n − 1)`: the largest number of constraints that can be
/// active together with a nonsingular Jacobian.
pub fn m_bound(m1: usize, m2: usize, n: usize) -> usize {
    (m1 + m2).min(n.saturating_sub(1))
}

/// `B^J = [∇f ∇h₁ … ∇h_{m₁} ∇g_j (j ∈ J)]`, an `n × (1 + m₁ + |J|)` matrix.
/// `subset` holds 0-based inequality indices in increasing order.
pub fn jacobian_bj(p: &OptProblem, subset: &[usize]) -> Result<PolyMatrix, DetvarError> {
    if subset.windows(2).any(|w| w[0] >= w[1]) || subset.iter().any(|&j| j >= p.m2()) {
        return Err(DetvarError::InvalidSubset(format!(
            "{subset:?} for {} inequalities",
            p.m2()
        )));
    }
    let cols = 1 + p.m1() + subset.len();
    if cols > p.nvars() {
        return Err(DetvarError::TooManyColumns {
            cols,
            n: p.nvars(),
        });
    }
    let mut columns = vec![p.objective.gradient()];
    columns.extend(p.equalities.iter().map(Polynomial::gradient));
    columns.extend(subset.iter().map(|&j| p.inequalities[j].gradient()));
    Ok(PolyMatrix::from_columns(&columns)?)
}

/// Rank of the maximal minor with 0-based row indices `rows` in the
/// partial order on `k`-minors: `Σ (i_j + 1) − C(k+1, 2) + 1`, which ranges
/// over `1 ..= nk − k² + 1`.
pub fn minor_rank(rows: &[usize], k: usize) -> Result<usize, DetvarError> {
    if rows.len() != k || k == 0 || rows.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DetvarError::InvalidIndexSet(rows.to_vec()));
    }
    let sum: usize = rows.iter().map(|i| i + 1).sum();
    Ok(sum + 1 - k * (k + 1) / 2)
}

/// Number of minimal generators `nk − k² + 1` of the rank-deficiency
/// variety of an `n × k` matrix.
pub fn eta_count(n: usize, k: usize) -> usize {
    if k > n || k == 0 {
        return 0;
    }
    n * k - k * k + 1
}

/// Row index sets grouped by rank: entry `ℓ − 1` lists every strictly
/// increasing `k`-subset of `0..n` whose [`minor_rank`] is `ℓ`.
pub fn eta_index_sets(n: usize, k: usize) -> Vec<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); eta_count(n, k)];
    for set in k_subsets(n, k) {
        let r = minor_rank(&set, k).expect("valid subset");
        groups[r - 1].push(set);
    }
    groups
}

/// The `nk − k² + 1` polynomials `η_ℓ(M) = Σ_{rank(I) = ℓ} det_I(M)`.
pub fn eta_generators(m: &PolyMatrix) -> Result<Vec<Polynomial>, DetvarError> {
    let (n, k) = (m.rows(), m.cols());
    if k > n {
        return Err(DetvarError::WideMatrix { rows: n, cols: k });
    }
    let cols: Vec<usize> = (0..k).collect();
    eta_index_sets(n, k)
        .into_iter()
        .map(|group| {
            let mut acc = Polynomial::zero(m.nvars());
            for rows in group {
                acc = &acc + &m.minor(&rows, &cols)?;
            }
            Ok(acc)
        })
        .collect()
}

/// All strictly increasing `k`-subsets of `0..n` in lexicographic order.
pub fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemVariant {
    /// `η_ℓ(B^J) · Π_{j∉J} g_j`
    MinimalEta,
    /// every maximal minor of `B^J` times `Π_{j∉J} g_j`
    AllMinors,
    /// `η_ℓ([∇f ∇h])` only, for minimizers with all inequalities inactive
    Inactive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generator {
    pub poly: Polynomial,
    /// 0-based inequality indices of `J`.
    pub subset: Vec<usize>,
    /// 1-based position within the subset's block (the `ℓ` of `η_ℓ`, or
    /// the minor's position in lexicographic row order).
    pub index: usize,
}

/// The polynomial equations appended to a problem.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub source: OptProblem,
    pub variant: SystemVariant,
    pub generators: Vec<Generator>,
}

impl AugmentedSystem {
    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn polys(&self) -> impl Iterator<Item = &Polynomial> {
        self.generators.iter().map(|g| &g.poly)
    }

    pub fn max_degree(&self) -> u32 {
        self.polys().map(Polynomial::degree).max().unwrap_or(0)
    }

    /// JSON with the variant, each generator's canonical text and its
    /// provenance (1-based subset, index).
    pub fn to_json(&self, names: &[String]) -> serde_json::Value {
        let gens: Vec<serde_json::Value> = self
            .generators
            .iter()
            .map(|g| {
                serde_json::json!({
                    "subset": g.subset.iter().map(|j| j + 1).collect::<Vec<_>>(),
                    "index": g.index,
                    "poly": g.poly.to_text(names),
                })
            })
            .collect();
        serde_json::json!({
            "variant": self.variant,
            "count": self.generators.len(),
            "generators": gens,
        })
    }
}

/// Subsets `J ⊂ [m₂]` that contribute generators, ordered by cardinality
/// then lexicographically.
pub fn admissible_subsets(p: &OptProblem) -> Vec<Vec<usize>> {
    let (n, m1, m2) = (p.nvars(), p.m1(), p.m2());
    let m = m_bound(m1, m2, n);
    if m1 > m {
        return Vec::new();
    }
    let max_k = m - m1;
    let mut out = Vec::new();
    for k in 0..=max_k.min(m2) {
        if m1 + k + 1 > n {
            break;
        }
        out.extend(k_subsets(m2, k));
    }
    out
}

fn check_m1(p: &OptProblem) -> Result<(), DetvarError> {
    if p.m1() > p.nvars() {
        return Err(DetvarError::TooManyEqualities {
            m1: p.m1(),
            n: p.nvars(),
        });
    }
    Ok(())
}

/// `φ_i^J = η_i(B^J) · Π_{j∉J} g_j` over every admissible `J`.
pub fn phi_system(p: &OptProblem) -> Result<AugmentedSystem, DetvarError> {
    check_m1(p)?;
    let mut generators = Vec::new();
    for subset in admissible_subsets(p) {
        let bj = jacobian_bj(p, &subset)?;
        let mult = p.complement_product(&subset);
        for (i, eta) in eta_generators(&bj)?.into_iter().enumerate() {
            generators.push(Generator {
                poly: &eta * &mult,
                subset: subset.clone(),
                index: i + 1,
            });
        }
    }
    Ok(AugmentedSystem {
        source: p.clone(),
        variant: SystemVariant::MinimalEta,
        generators,
    })
}

/// Every maximal minor of `B^J` times `Π_{j∉J} g_j`; `C(n, m₁+|J|+1)`
/// generators per admissible `J`.
pub fn psi_system(p: &OptProblem) -> Result<AugmentedSystem, DetvarError> {
    check_m1(p)?;
    let mut generators = Vec::new();
    for subset in admissible_subsets(p) {
        let bj = jacobian_bj(p, &subset)?;
        let mult = p.complement_product(&subset);
        let cols: Vec<usize> = (0..bj.cols()).collect();
        for (i, rows) in k_subsets(bj.rows(), bj.cols()).into_iter().enumerate() {
            generators.push(Generator {
                poly: &bj.minor(&rows, &cols)? * &mult,
                subset: subset.clone(),
                index: i + 1,
            });
        }
    }
    Ok(AugmentedSystem {
        source: p.clone(),
        variant: SystemVariant::AllMinors,
        generators,
    })
}

/// Minimal generators of `{rank [∇f ∇h] ≤ m₁}`; empty when `m₁ = n`.
pub fn inactive_system(p: &OptProblem) -> Result<AugmentedSystem, DetvarError> {
    check_m1(p)?;
    let mut generators = Vec::new();
    if p.m1() < p.nvars() {
        let mut columns = vec![p.objective.gradient()];
        columns.extend(p.equalities.iter().map(Polynomial::gradient));
        let b = PolyMatrix::from_columns(&columns)?;
        for (i, eta) in eta_generators(&b)?.into_iter().enumerate() {
            generators.push(Generator {
                poly: eta,
                subset: Vec::new(),
                index: i + 1,
            });
        }
    }
    Ok(AugmentedSystem {
        source: p.clone(),
        variant: SystemVariant::Inactive,
        generators,
    })
}

/// Closed-form generator count of [`phi_system`].
pub fn phi_count(n: usize, m1: usize, m2: usize) -> usize {
    subset_sizes(n, m1, m2)
        .map(|k| binomial(m2, k) * eta_count(n, m1 + k + 1))
        .sum()
}

/// Closed-form generator count of [`psi_system`].
pub fn psi_count(n: usize, m1: usize, m2: usize) -> usize {
    subset_sizes(n, m1, m2)
        .map(|k| binomial(m2, k) * binomial(n, m1 + k + 1))
        .sum()
}

fn subset_sizes(n: usize, m1: usize, m2: usize) -> impl Iterator<Item = usize> {
    let m = m_bound(m1, m2, n);
    let max_k = if m1 > m { None } else { Some((m - m1).min(m2)) };
    (0..=max_k.unwrap_or(0))
        .filter(move |_| max_k.is_some())
        .filter(move |k| m1 + k < n)
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

    fn m5() -> OptProblem {
        problem(
            2,
            "x1^2 + x2^2",
            &[],
            &["x2^2 - 1", "x1^2 - 5*x1*x2 - 1", "x1^2 + 5*x1*x2 - 1"],
        )
    }

    const ROBINSON: &str = "x1^6+x2^6+x3^6+3*x1^2*x2^2*x3^2-3*(x1^2*(x2^4+x3^4)+x2^2*(x3^4+x1^4)+x3^2*(x1^4+x2^4))";

    fn robinson_eq() -> OptProblem {
        problem(3, ROBINSON, &["x1 + x2 + x3 - 1"], &[])
    }

    #[test]
    fn m_bound_examples() {
        assert_eq!(m_bound(0, 3, 2), 1);
        assert_eq!(m_bound(1, 0, 3), 1);
        assert_eq!(m_bound(0, 0, 5), 0);
    }

    #[test]
    fn jacobian_shapes() {
        let p = problem(2, "x1^2 + x2^2", &[], &[]);
        let b = jacobian_bj(&p, &[]).unwrap();
        assert_eq!((b.rows(), b.cols()), (2, 1));

        let b = jacobian_bj(&m5(), &[0]).unwrap();
        let names = default_names(2);
        assert_eq!(b.get(0, 0), &parse_poly("2*x1", &names).unwrap());
        assert_eq!(b.get(1, 0), &parse_poly("2*x2", &names).unwrap());
        assert!(b.get(0, 1).is_zero());
        assert_eq!(b.get(1, 1), &parse_poly("2*x2", &names).unwrap());

        let b = jacobian_bj(&robinson_eq(), &[]).unwrap();
        assert_eq!((b.rows(), b.cols()), (3, 2));
        for i in 0..3 {
            assert_eq!(b.get(i, 1), &Polynomial::one(3));
        }
        assert!(matches!(
            jacobian_bj(&m5(), &[0, 1]),
            Err(DetvarError::TooManyColumns { .. })
        ));
        assert!(jacobian_bj(&m5(), &[1, 0]).is_err());
    }

    #[test]
    fn minor_rank_worked_examples() {
        // 1-based [1,2,3], [1,2,6], [4,5,6] for n = 6, k = 3
        assert_eq!(minor_rank(&[0, 1, 2], 3).unwrap(), 1);
        assert_eq!(minor_rank(&[0, 1, 5], 3).unwrap(), 4);
        assert_eq!(minor_rank(&[3, 4, 5], 3).unwrap(), 10);
        assert!(minor_rank(&[1, 0, 2], 3).is_err());
        assert!(minor_rank(&[0, 1], 3).is_err());
    }

    #[test]
    fn eta_groups_for_n6_k3() {
        let groups = eta_index_sets(6, 3);
        assert_eq!(groups.len(), 10);
        let one_based = |g: &Vec<Vec<usize>>| -> Vec<Vec<usize>> {
            g.iter().map(|s| s.iter().map(|i| i + 1).collect()).collect()
        };
        assert_eq!(
            one_based(&groups[3]),
            vec![vec![1, 2, 6], vec![1, 3, 5], vec![2, 3, 4]]
        );
        assert_eq!(one_based(&groups[0]), vec![vec![1, 2, 3]]);
        assert_eq!(one_based(&groups[7]), vec![vec![2, 5, 6], vec![3, 4, 6]]);
        assert_eq!(one_based(&groups[9]), vec![vec![4, 5, 6]]);
    }

    #[test]
    fn eta_square_is_determinant() {
        let n = 4;
        let m = PolyMatrix::new(2, 2, (0..4).map(|i| Polynomial::var(n, i)).collect()).unwrap();
        let etas = eta_generators(&m).unwrap();
        assert_eq!(etas, vec![m.det().unwrap()]);
        let wide = PolyMatrix::new(1, 2, vec![Polynomial::one(1), Polynomial::one(1)]).unwrap();
        assert!(matches!(eta_generators(&wide), Err(DetvarError::WideMatrix { .. })));
    }

    #[test]
    fn eta_k2_index_sums() {
        for n in 2..8 {
            let groups = eta_index_sets(n, 2);
            assert_eq!(groups.len(), 2 * n - 3);
            for (l, g) in groups.iter().enumerate() {
                for s in g {
                    assert_eq!(s[0] + 1 + s[1] + 1, l + 1 + 2);
                }
            }
        }
    }

    #[test]
    fn phi_m5_counts() {
        let sys = phi_system(&m5()).unwrap();
        assert_eq!(sys.len(), 5);
        assert_eq!(phi_count(2, 0, 3), 5);
        let subsets: Vec<_> = sys.generators.iter().map(|g| g.subset.clone()).collect();
        assert_eq!(
            subsets,
            vec![vec![], vec![], vec![0], vec![1], vec![2]]
        );
        let p = m5();
        let g123 = p.complement_product(&[]);
        assert_eq!(sys.generators[0].poly, &p.objective.partial(0).unwrap() * &g123);
        assert_eq!(sys.generators[1].poly, &p.objective.partial(1).unwrap() * &g123);
    }

    #[test]
    fn single_inequality_count() {
        for n in 2..6 {
            let names = default_names(n);
            let f = names.iter().map(|v| format!("{v}^4")).collect::<Vec<_>>().join("+");
            let g = format!("1 - {}", names.iter().map(|v| format!("{v}^2")).collect::<Vec<_>>().join("-"));
            let p = problem(n, &f, &[], &[&g]);
            assert_eq!(phi_system(&p).unwrap().len(), 3 * (n - 1));
        }
    }

    #[test]
    fn psi_and_inactive_counts() {
        assert_eq!(psi_system(&robinson_eq()).unwrap().len(), 3);
        assert_eq!(inactive_system(&robinson_eq()).unwrap().len(), 3);
        let p = problem(1, "x1^4 - x1", &[], &[]);
        let psi = psi_system(&p).unwrap();
        assert_eq!(psi.len(), 1);
        assert_eq!(psi.generators[0].poly, p.objective.partial(0).unwrap());
        assert_eq!(psi_count(6, 2, 0), 20);
        assert_eq!(phi_count(6, 2, 0), 10);

        let q = problem(3, "x1*x2*x3", &[], &["x1"]);
        let ina = inactive_system(&q).unwrap();
        assert_eq!(ina.len(), 3);
        for (g, d) in ina.generators.iter().zip(q.objective.gradient()) {
            assert_eq!(g.poly, d);
        }

        let full = problem(2, "x1", &["x1", "x2"], &[]);
        assert!(inactive_system(&full).unwrap().is_empty());
        assert!(phi_system(&full).unwrap().is_empty());
        let over = problem(1, "x1", &["x1", "x1 - 1"], &[]);
        assert!(matches!(phi_system(&over), Err(DetvarError::TooManyEqualities { .. })));
    }

    #[test]
    fn json_provenance() {
        let sys = phi_system(&m5()).unwrap();
        let v = sys.to_json(&default_names(2));
        assert_eq!(v["variant"], "minimal-eta");
        assert_eq!(v["count"], 5);
        assert_eq!(v["generators"][2]["subset"], serde_json::json!([1]));
    }
}
