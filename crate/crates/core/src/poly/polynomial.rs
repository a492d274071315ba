use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::monomial::{default_names, Monomial};
use super::PolyError;

/// Sparse multivariate polynomial with exact rational coefficients.
///
/// Terms are kept in a map keyed by [`Monomial`] (graded lex); zero
/// coefficients are never stored, so structural equality is polynomial
/// equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, BigRational>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, BigRational::one())
    }

    pub fn constant(nvars: usize, c: BigRational) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    pub fn from_int(nvars: usize, c: i64) -> Self {
        Self::constant(nvars, BigRational::from_integer(BigInt::from(c)))
    }

    /// The coordinate polynomial `x_i` (0-based).
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::var(nvars, i), BigRational::one());
        p
    }

    pub fn monomial(m: Monomial, c: BigRational) -> Self {
        let mut p = Self::zero(m.nvars());
        p.add_term(m, c);
        p
    }

    /// Builds a polynomial from `(exponents, numerator, denominator)` triples.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Vec<u32>, i64, i64)>,
    {
        let mut p = Self::zero(nvars);
        for (e, num, den) in terms {
            assert_eq!(e.len(), nvars, "exponent length must equal nvars");
            p.add_term(
                Monomial::new(e),
                BigRational::new(BigInt::from(num), BigInt::from(den)),
            );
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Total degree; the zero polynomial reports 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    pub fn coeff(&self, m: &Monomial) -> Option<&BigRational> {
        self.terms.get(m)
    }

    /// Adds `c·m` in place, dropping the term if it cancels.
    pub fn add_term(&mut self, m: Monomial, c: BigRational) {
        debug_assert_eq!(m.nvars(), self.nvars);
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    fn check_nvars(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::VarCountMismatch {
                left: self.nvars,
                right: other.nvars,
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_nvars(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_nvars(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c.clone());
        }
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_nvars(other)?;
        let mut out = Polynomial::zero(self.nvars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: &BigRational) -> Polynomial {
        if c.is_zero() {
            return Polynomial::zero(self.nvars);
        }
        Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect(),
        }
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::one(self.nvars);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Floating-point value at `point`, summed term by term.
    pub fn eval(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: point.len(),
            });
        }
        Ok(self
            .terms
            .iter()
            .map(|(m, c)| rational_to_f64(c) * m.eval(point))
            .sum())
    }

    /// `∂p/∂x_i` with `i` 0-based.
    pub fn partial(&self, i: usize) -> Result<Polynomial, PolyError> {
        if i >= self.nvars {
            return Err(PolyError::IndexOutOfRange {
                index: i,
                nvars: self.nvars,
            });
        }
        let mut out = Polynomial::zero(self.nvars);
        for (m, c) in &self.terms {
            let e = m.exponents()[i];
            if e == 0 {
                continue;
            }
            let mut exps = m.exponents().to_vec();
            exps[i] -= 1;
            out.add_term(
                Monomial::new(exps),
                c * BigRational::from_integer(BigInt::from(e)),
            );
        }
        Ok(out)
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.nvars)
            .map(|i| self.partial(i).expect("index in range"))
            .collect()
    }

    /// Canonical text: terms in descending graded-lex order with explicit
    /// signs, `*` products and `^` powers.
    pub fn to_text(&self, names: &[String]) -> String {
        if self.is_zero() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (k, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            if k == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let abs = c.abs();
            let mono = m.to_text(names);
            if mono.is_empty() {
                out.push_str(&rational_text(&abs));
            } else if abs.is_one() {
                out.push_str(&mono);
            } else {
                out.push_str(&rational_text(&abs));
                out.push('*');
                out.push_str(&mono);
            }
        }
        out
    }

    /// Largest absolute coefficient as `f64`.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms
            .values()
            .map(|c| rational_to_f64(c).abs())
            .fold(0.0, f64::max)
    }
}

pub fn rational_to_f64(c: &BigRational) -> f64 {
    c.to_f64().unwrap_or_else(|| {
        if c.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

fn rational_text(c: &BigRational) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text(&default_names(self.nvars)))
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.checked_add(rhs).expect("polynomial variable counts differ")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.checked_sub(rhs).expect("polynomial variable counts differ")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.checked_mul(rhs).expect("polynomial variable counts differ")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(&-BigRational::one())
    }
}

impl Add for Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: Polynomial) -> Polynomial {
        &self + &rhs
    }
}

impl Sub for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: Polynomial) -> Polynomial {
        &self - &rhs
    }
}

impl Mul for Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: Polynomial) -> Polynomial {
        &self * &rhs
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        -&self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(n: usize, i: usize) -> Polynomial {
        Polynomial::var(n, i)
    }

    fn motzkin() -> Polynomial {
        Polynomial::from_terms(
            3,
            [
                (vec![4, 2, 0], 1, 1),
                (vec![2, 4, 0], 1, 1),
                (vec![0, 0, 6], 1, 1),
                (vec![2, 2, 2], -3, 1),
            ],
        )
    }

    #[test]
    fn additive_inverse() {
        let p = x(2, 0);
        assert!((&p + &(-&p)).is_zero());
    }

    #[test]
    fn difference_of_squares() {
        let (a, b) = (x(2, 0), x(2, 1));
        let prod = &(&a + &b) * &(&a - &b);
        let expect = &(&a * &a) - &(&b * &b);
        assert_eq!(prod, expect);
    }

    #[test]
    fn expand_by_hand() {
        let (a, b) = (x(2, 0), x(2, 1));
        let p = &(&(&a * &a) + &Polynomial::one(2)) * &b;
        let expect = Polynomial::from_terms(2, [(vec![2, 1], 1, 1), (vec![0, 1], 1, 1)]);
        assert_eq!(p, expect);
        assert_eq!(p.degree(), 3);
    }

    #[test]
    fn nvars_mismatch_is_an_error() {
        let err = x(2, 0).checked_add(&x(3, 0)).unwrap_err();
        assert!(matches!(err, PolyError::VarCountMismatch { .. }));
        assert!(x(2, 0).eval(&[1.0]).is_err());
        assert!(x(2, 0).partial(2).is_err());
    }

    #[test]
    fn eval_motzkin() {
        let m = motzkin();
        assert_eq!(m.eval(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(m.eval(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        let q = &(&x(2, 0) * &x(2, 0)) + &(&x(2, 1) * &x(2, 1));
        assert!((q.eval(&[5.1926, 1.0]).unwrap() - 27.9631).abs() < 1e-3);
    }

    #[test]
    fn partials() {
        let p = Polynomial::from_terms(2, [(vec![2, 1], 1, 1)]);
        assert_eq!(
            p.partial(0).unwrap(),
            Polynomial::from_terms(2, [(vec![1, 1], 2, 1)])
        );
        assert!(Polynomial::from_int(3, 7).partial(1).unwrap().is_zero());
        let d3 = motzkin().partial(2).unwrap();
        let expect = Polynomial::from_terms(3, [(vec![0, 0, 5], 6, 1), (vec![2, 2, 1], -6, 1)]);
        assert_eq!(d3, expect);
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let q = &(&x(2, 0) * &x(2, 0)) + &(&x(2, 1) * &x(2, 1));
        let g = q.gradient();
        assert_eq!(g[0], Polynomial::from_terms(2, [(vec![1, 0], 2, 1)]));
        assert_eq!(g[1], Polynomial::from_terms(2, [(vec![0, 1], 2, 1)]));
        assert!(Polynomial::from_int(2, 5).gradient().iter().all(Polynomial::is_zero));
    }

    #[test]
    fn canonical_text() {
        assert_eq!(
            motzkin().to_string(),
            "x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2*x3^2 + x3^6"
        );
        let p = Polynomial::from_terms(2, [(vec![0, 0], -1, 2), (vec![1, 0], -1, 1)]);
        assert_eq!(p.to_string(), "-x1 - 1/2");
        assert_eq!(Polynomial::zero(2).to_string(), "0");
    }
}
