use super::{PolyError, Polynomial};

/// Dense row-major matrix of polynomials sharing one variable count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyMatrix {
    rows: usize,
    cols: usize,
    nvars: usize,
    entries: Vec<Polynomial>,
}

impl PolyMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Polynomial>) -> Result<Self, PolyError> {
        if entries.len() != rows * cols {
            return Err(PolyError::Shape(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        let nvars = entries.first().map(Polynomial::nvars).unwrap_or(0);
        if let Some(bad) = entries.iter().find(|p| p.nvars() != nvars) {
            return Err(PolyError::VarCountMismatch {
                left: nvars,
                right: bad.nvars(),
            });
        }
        Ok(PolyMatrix {
            rows,
            cols,
            nvars,
            entries,
        })
    }

    /// Stacks column vectors side by side.
    pub fn from_columns(columns: &[Vec<Polynomial>]) -> Result<Self, PolyError> {
        let cols = columns.len();
        let rows = columns.first().map(Vec::len).unwrap_or(0);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(PolyError::Shape("columns have different lengths".into()));
        }
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for c in columns {
                entries.push(c[i].clone());
            }
        }
        Self::new(rows, cols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn get(&self, i: usize, j: usize) -> &Polynomial {
        &self.entries[i * self.cols + j]
    }

    /// Entrywise numeric evaluation, row-major.
    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>, PolyError> {
        self.entries.iter().map(|p| p.eval(point)).collect()
    }

    /// Exact determinant by cofactor expansion along the sparsest row or
    /// column.
    pub fn det(&self) -> Result<Polynomial, PolyError> {
        if self.rows != self.cols {
            return Err(PolyError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let rows: Vec<usize> = (0..self.rows).collect();
        let cols: Vec<usize> = (0..self.cols).collect();
        Ok(self.cofactor_det(&rows, &cols))
    }

    /// Determinant of the submatrix on `rowset × colset` (0-based, strictly
    /// increasing index lists of equal length).
    pub fn minor(&self, rowset: &[usize], colset: &[usize]) -> Result<Polynomial, PolyError> {
        if rowset.len() != colset.len() {
            return Err(PolyError::InvalidIndexSet(format!(
                "row set has {} indices, column set {}",
                rowset.len(),
                colset.len()
            )));
        }
        check_index_set(rowset, self.rows, "row")?;
        check_index_set(colset, self.cols, "column")?;
        Ok(self.cofactor_det(rowset, colset))
    }

    fn cofactor_det(&self, rows: &[usize], cols: &[usize]) -> Polynomial {
        let k = rows.len();
        match k {
            0 => return Polynomial::one(self.nvars),
            1 => return self.get(rows[0], cols[0]).clone(),
            2 => {
                let a = self.get(rows[0], cols[0]) * self.get(rows[1], cols[1]);
                let b = self.get(rows[0], cols[1]) * self.get(rows[1], cols[0]);
                return &a - &b;
            }
            _ => {}
        }
        let zeros_in_row = |r: usize| cols.iter().filter(|&&c| self.get(r, c).is_zero()).count();
        let zeros_in_col = |c: usize| rows.iter().filter(|&&r| self.get(r, c).is_zero()).count();
        let (best_row, row_zeros) = (0..k)
            .map(|i| (i, zeros_in_row(rows[i])))
            .max_by_key(|&(i, z)| (z, std::cmp::Reverse(i)))
            .expect("nonempty");
        let (best_col, col_zeros) = (0..k)
            .map(|j| (j, zeros_in_col(cols[j])))
            .max_by_key(|&(j, z)| (z, std::cmp::Reverse(j)))
            .expect("nonempty");

        let mut acc = Polynomial::zero(self.nvars);
        if row_zeros >= col_zeros {
            let r = rows[best_row];
            let sub_rows: Vec<usize> = rows.iter().copied().filter(|&x| x != r).collect();
            for (j, &c) in cols.iter().enumerate() {
                let entry = self.get(r, c);
                if entry.is_zero() {
                    continue;
                }
                let sub_cols: Vec<usize> = cols.iter().copied().filter(|&x| x != c).collect();
                let term = entry * &self.cofactor_det(&sub_rows, &sub_cols);
                acc = if (best_row + j) % 2 == 0 {
                    &acc + &term
                } else {
                    &acc - &term
                };
            }
        } else {
            let c = cols[best_col];
            let sub_cols: Vec<usize> = cols.iter().copied().filter(|&x| x != c).collect();
            for (i, &r) in rows.iter().enumerate() {
                let entry = self.get(r, c);
                if entry.is_zero() {
                    continue;
                }
                let sub_rows: Vec<usize> = rows.iter().copied().filter(|&x| x != r).collect();
                let term = entry * &self.cofactor_det(&sub_rows, &sub_cols);
                acc = if (i + best_col) % 2 == 0 {
                    &acc + &term
                } else {
                    &acc - &term
                };
            }
        }
        acc
    }
}

fn check_index_set(set: &[usize], bound: usize, what: &str) -> Result<(), PolyError> {
    if set.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PolyError::InvalidIndexSet(format!(
            "{what} indices {set:?} are not strictly increasing"
        )));
    }
    if let Some(&last) = set.last() {
        if last >= bound {
            return Err(PolyError::InvalidIndexSet(format!(
                "{what} index {last} out of range (size {bound})"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn var(n: usize, i: usize) -> Polynomial {
        Polynomial::var(n, i)
    }

    #[test]
    fn det_2x2_symbolic() {
        let m = PolyMatrix::new(2, 2, (0..4).map(|i| var(4, i)).collect()).unwrap();
        let expect = &(&var(4, 0) * &var(4, 3)) - &(&var(4, 1) * &var(4, 2));
        assert_eq!(m.det().unwrap(), expect);
    }

    #[test]
    fn det_duplicate_columns_vanishes() {
        let c = vec![var(3, 0), var(3, 1), var(3, 2)];
        let other = vec![Polynomial::one(3), var(3, 0), &var(3, 1) * &var(3, 2)];
        let m = PolyMatrix::from_columns(&[c.clone(), other, c]).unwrap();
        assert!(m.det().unwrap().is_zero());
    }

    #[test]
    fn non_square_rejected() {
        let m = PolyMatrix::new(2, 1, vec![var(1, 0), var(1, 0)]).unwrap();
        assert!(matches!(m.det(), Err(PolyError::NotSquare { .. })));
        assert!(m.minor(&[1, 0], &[0, 0]).is_err());
        assert!(m.minor(&[0, 2], &[0, 1]).is_err());
    }

    fn random_poly_matrix(rng: &mut ChaCha8Rng, k: usize, nvars: usize) -> PolyMatrix {
        let mut entries = Vec::new();
        for _ in 0..k * k {
            let mut p = Polynomial::zero(nvars);
            for _ in 0..3 {
                let e: Vec<u32> = (0..nvars).map(|_| rng.gen_range(0..3)).collect();
                let c = rng.gen_range(-4i64..=4);
                p = &p + &Polynomial::from_terms(nvars, [(e, c, 1)]);
            }
            entries.push(p);
        }
        PolyMatrix::new(k, k, entries).unwrap()
    }

    #[test]
    fn det_matches_numeric_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 1..=5 {
            let m = random_poly_matrix(&mut rng, k, 3);
            let d = m.det().unwrap();
            for _ in 0..20 {
                let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let numeric = DMatrix::from_row_slice(k, k, &m.eval(&u).unwrap()).determinant();
                let symbolic = d.eval(&u).unwrap();
                let scale = numeric.abs().max(1.0);
                assert!(
                    (numeric - symbolic).abs() <= 1e-9 * scale,
                    "k={k} numeric={numeric} symbolic={symbolic}"
                );
            }
        }
    }

    #[test]
    fn minor_selection_and_antisymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_poly_matrix(&mut rng, 3, 2);
        assert_eq!(m.minor(&[0], &[0]).unwrap(), m.get(0, 0).clone());
        assert_eq!(m.minor(&[0, 1, 2], &[0, 1, 2]).unwrap(), m.det().unwrap());
        // swapping two rows of the selected submatrix flips the sign
        let swapped = PolyMatrix::new(
            3,
            3,
            [1usize, 0, 2]
                .iter()
                .flat_map(|&r| (0..3).map(move |c| (r, c)))
                .map(|(r, c)| m.get(r, c).clone())
                .collect(),
        )
        .unwrap();
        for _ in 0..10 {
            let u: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = m.minor(&[0, 1], &[1, 2]).unwrap().eval(&u).unwrap();
            let b = swapped.minor(&[0, 1], &[1, 2]).unwrap().eval(&u).unwrap();
            assert!((a + b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
