//! Recursive-descent parser for polynomial expressions.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := ('+' | '-') unary | power
//! power  := atom ('^' integer)?
//! atom   := number | identifier | '(' expr ')'
//! number := digits ('.' digits)? (('e' | 'E') ('+' | '-')? digits)?
//! ```
//!
//! Division is only allowed by a nonzero constant. Decimal literals become
//! exact rationals (`0.5` is `1/2`).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Zero};

use super::{PolyError, Polynomial};

pub fn parse_poly(text: &str, vars: &[String]) -> Result<Polynomial, PolyError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        vars,
    };
    let out = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error(format!("unexpected '{}'", p.src[p.pos] as char)));
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn error(&self, message: String) -> PolyError {
        PolyError::Syntax {
            position: self.pos,
            message,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn nvars(&self) -> usize {
        self.vars.len()
    }

    fn expr(&mut self) -> Result<Polynomial, PolyError> {
        let mut acc = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if c == b'+' { &acc + &rhs } else { &acc - &rhs };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial, PolyError> {
        let mut acc = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            let at = self.pos;
            self.pos += 1;
            let rhs = self.unary()?;
            if c == b'*' {
                acc = &acc * &rhs;
            } else {
                let divisor = constant_value(&rhs).ok_or_else(|| PolyError::Syntax {
                    position: at,
                    message: "division is only supported by a constant".into(),
                })?;
                if divisor.is_zero() {
                    return Err(PolyError::Syntax {
                        position: at,
                        message: "division by zero".into(),
                    });
                }
                acc = acc.scale(&(BigRational::one() / divisor));
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Polynomial, PolyError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Polynomial, PolyError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("expected a nonnegative integer exponent".into()));
            }
            let k: u32 = std::str::from_utf8(&self.src[start..self.pos])
                .expect("ascii digits")
                .parse()
                .map_err(|_| PolyError::Syntax {
                    position: start,
                    message: "exponent too large".into(),
                })?;
            return Ok(base.pow(k));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Polynomial, PolyError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let value = self.number()?;
                Ok(Polynomial::constant(self.nvars(), value))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                match self.vars.iter().position(|v| v == name) {
                    Some(i) => Ok(Polynomial::var(self.nvars(), i)),
                    None => Err(PolyError::UnknownIdentifier {
                        name: name.to_string(),
                        position: start,
                    }),
                }
            }
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
            None => Err(self.error("unexpected end of input".into())),
        }
    }

    fn number(&mut self) -> Result<BigRational, PolyError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            std::str::from_utf8(&p.src[s..p.pos]).expect("ascii").to_string()
        };
        let int_part = digits(self);
        let mut frac_part = String::new();
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            frac_part = digits(self);
        }
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(PolyError::Syntax {
                position: start,
                message: "malformed number".into(),
            });
        }
        let mut exp: i64 = 0;
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            let mut sign = 1;
            if let Some(c @ (b'+' | b'-')) = self.src.get(self.pos).copied() {
                sign = if c == b'-' { -1 } else { 1 };
                self.pos += 1;
            }
            let e = digits(self);
            if e.is_empty() {
                self.pos = save;
            } else {
                exp = sign
                    * e.parse::<i64>().map_err(|_| PolyError::Syntax {
                        position: save,
                        message: "exponent too large".into(),
                    })?;
            }
        }
        let mantissa: BigInt = format!("{int_part}{frac_part}")
            .parse::<BigInt>()
            .unwrap_or_else(|_| BigInt::zero());
        exp -= frac_part.len() as i64;
        let ten = BigInt::from(10);
        let value = if exp >= 0 {
            BigRational::from_integer(mantissa * Pow::pow(&ten, exp as u64))
        } else {
            BigRational::new(mantissa, Pow::pow(&ten, (-exp) as u64))
        };
        Ok(value)
    }
}

fn constant_value(p: &Polynomial) -> Option<BigRational> {
    if p.is_zero() {
        return Some(BigRational::zero());
    }
    if p.degree() == 0 {
        return p.terms().next().map(|(_, c)| c.clone());
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::default_names;

    fn names(n: usize) -> Vec<String> {
        default_names(n)
    }

    #[test]
    fn simple_sum_of_squares() {
        let p = parse_poly("x1^2 + x2^2", &names(2)).unwrap();
        let expect = Polynomial::from_terms(2, [(vec![2, 0], 1, 1), (vec![0, 2], 1, 1)]);
        assert_eq!(p, expect);
    }

    #[test]
    fn motzkin() {
        let p = parse_poly("x1^4*x2^2+x1^2*x2^4+x3^6-3*x1^2*x2^2*x3^2", &names(3)).unwrap();
        assert_eq!(p.num_terms(), 4);
        assert_eq!(p.degree(), 6);
    }

    #[test]
    fn m5_constraint() {
        let p = parse_poly("x1^2-5*x1*x2-1", &names(2)).unwrap();
        let expect = Polynomial::from_terms(
            2,
            [(vec![2, 0], 1, 1), (vec![1, 1], -5, 1), (vec![0, 0], -1, 1)],
        );
        assert_eq!(p, expect);
    }

    #[test]
    fn decimals_are_exact() {
        let p = parse_poly("0.5*x1 + 1.25e1", &names(1)).unwrap();
        let expect = Polynomial::from_terms(1, [(vec![1], 1, 2), (vec![0], 25, 2)]);
        assert_eq!(p, expect);
        let q = parse_poly("x1/4 - 3/2", &names(1)).unwrap();
        assert_eq!(q, Polynomial::from_terms(1, [(vec![1], 1, 4), (vec![0], -3, 2)]));
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        let p = parse_poly("-x1^2", &names(1)).unwrap();
        assert_eq!(p, Polynomial::from_terms(1, [(vec![2], -1, 1)]));
        let q = parse_poly("(x1 - 1)^2", &names(1)).unwrap();
        assert_eq!(q.to_string(), "x1^2 - 2*x1 + 1");
    }

    #[test]
    fn errors_carry_positions() {
        match parse_poly("x1 + y", &names(2)) {
            Err(PolyError::UnknownIdentifier { name, position }) => {
                assert_eq!(name, "y");
                assert_eq!(position, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_poly("x1 + * x2", &names(2)),
            Err(PolyError::Syntax { position: 5, .. })
        ));
        assert!(parse_poly("(x1", &names(1)).is_err());
        assert!(parse_poly("x1 / x1", &names(1)).is_err());
        assert!(parse_poly("x1^", &names(1)).is_err());
        assert!(parse_poly("x1 x1", &names(1)).is_err());
    }
}
