//! Dense matrices over [`Scalar`] with exact Gaussian elimination.

use crate::coeff::{CoeffError, Scalar};
use std::fmt;

/// Row-major dense matrix of exact scalars.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<Scalar>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![Scalar::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Scalar::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Scalar>>) -> Mat {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        assert!(rows.iter().all(|x| x.len() == c), "ragged matrix rows");
        Mat { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    /// Integer-entry convenience constructor.
    pub fn from_i64(rows: &[&[i64]]) -> Mat {
        Mat::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&x| Scalar::from_i64(x)).collect())
                .collect(),
        )
    }

    pub fn diagonal(entries: &[Scalar]) -> Mat {
        let mut m = Mat::zeros(entries.len(), entries.len());
        for (i, e) in entries.iter().enumerate() {
            m[(i, i)] = e.clone();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Scalar::is_zero)
    }

    pub fn row(&self, i: usize) -> Vec<Scalar> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }

    pub fn col(&self, j: usize) -> Vec<Scalar> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn from_cols(cols: &[Vec<Scalar>]) -> Mat {
        let n = cols.first().map_or(0, |c| c.len());
        let mut m = Mat::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, x) in c.iter().enumerate() {
                m[(i, j)] = x.clone();
            }
        }
        m
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)].clone();
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(&Scalar) -> Scalar) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(f).collect() }
    }

    pub fn scale(&self, c: &Scalar) -> Mat {
        self.map(|x| x * c)
    }

    pub fn add(&self, o: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols), "shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols), "shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn mul(&self, o: &Mat) -> Mat {
        assert_eq!(self.cols, o.rows, "shape mismatch in product");
        let mut out = Mat::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..o.cols {
                    let b = &o[(k, j)];
                    if !b.is_zero() {
                        let p = a * b;
                        out[(i, j)] += &p;
                    }
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Scalar]) -> Vec<Scalar> {
        assert_eq!(self.cols, v.len(), "shape mismatch in product");
        (0..self.rows)
            .map(|i| {
                let mut acc = Scalar::zero();
                for (j, x) in v.iter().enumerate() {
                    let a = &self[(i, j)];
                    if !a.is_zero() && !x.is_zero() {
                        acc += &(a * x);
                    }
                }
                acc
            })
            .collect()
    }

    /// `self * o - o * self`.
    pub fn commutator(&self, o: &Mat) -> Mat {
        self.mul(o).sub(&o.mul(self))
    }

    pub fn trace(&self) -> Scalar {
        (0..self.rows.min(self.cols)).fold(Scalar::zero(), |acc, i| acc + &self[(i, i)])
    }

    /// Row-reduce a copy; returns the reduced matrix and pivot columns.
    pub fn rref(&self) -> Result<(Mat, Vec<usize>), CoeffError> {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let Some(p) = (r..m.rows).find(|&i| !m[(i, c)].is_zero()) else {
                continue;
            };
            m.swap_rows(r, p);
            let inv = m[(r, c)].inv()?;
            for j in c..m.cols {
                let v = &m[(r, j)] * &inv;
                m[(r, j)] = v;
            }
            for i in 0..m.rows {
                if i != r && !m[(i, c)].is_zero() {
                    let f = m[(i, c)].clone();
                    for j in c..m.cols {
                        if !m[(r, j)].is_zero() {
                            let d = &f * &m[(r, j)];
                            m[(i, j)] -= &d;
                        }
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        Ok((m, pivots))
    }

    pub fn rank(&self) -> usize {
        self.rref().map(|(_, p)| p.len()).unwrap_or(0)
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    pub fn det(&self) -> Result<Scalar, CoeffError> {
        assert!(self.is_square(), "determinant of a non-square matrix");
        let mut m = self.clone();
        let n = m.rows;
        let mut det = Scalar::one();
        for c in 0..n {
            let Some(p) = (c..n).find(|&i| !m[(i, c)].is_zero()) else {
                return Ok(Scalar::zero());
            };
            if p != c {
                m.swap_rows(p, c);
                det = -det;
            }
            let piv = m[(c, c)].clone();
            det = det.checked_mul(&piv)?;
            let inv = piv.inv()?;
            for i in c + 1..n {
                if m[(i, c)].is_zero() {
                    continue;
                }
                let f = &m[(i, c)] * &inv;
                for j in c..n {
                    if !m[(c, j)].is_zero() {
                        let d = &f * &m[(c, j)];
                        m[(i, j)] -= &d;
                    }
                }
            }
        }
        Ok(det)
    }

    /// Inverse, or `None` when singular.
    pub fn inverse(&self) -> Option<Mat> {
        assert!(self.is_square(), "inverse of a non-square matrix");
        let n = self.rows;
        let mut aug = Mat::zeros(n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = self[(i, j)].clone();
            }
            aug[(i, n + i)] = Scalar::one();
        }
        let (red, piv) = aug.rref().ok()?;
        if piv.len() < n || piv[n - 1] != n - 1 {
            return None;
        }
        let mut inv = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                inv[(i, j)] = red[(i, n + j)].clone();
            }
        }
        Some(inv)
    }

    /// Some solution of `self * x = rhs`, or `None` when inconsistent.
    pub fn solve(&self, rhs: &[Scalar]) -> Option<Vec<Scalar>> {
        assert_eq!(self.rows, rhs.len(), "shape mismatch in solve");
        let mut aug = Mat::zeros(self.rows, self.cols + 1);
        for i in 0..self.rows {
            for j in 0..self.cols {
                aug[(i, j)] = self[(i, j)].clone();
            }
            aug[(i, self.cols)] = rhs[i].clone();
        }
        let (red, piv) = aug.rref().ok()?;
        if piv.last() == Some(&self.cols) {
            return None;
        }
        let mut x = vec![Scalar::zero(); self.cols];
        for (r, &c) in piv.iter().enumerate() {
            x[c] = red[(r, self.cols)].clone();
        }
        Some(x)
    }

    /// Basis of the right null space.
    pub fn nullspace(&self) -> Vec<Vec<Scalar>> {
        let Ok((red, piv)) = self.rref() else {
            return Vec::new();
        };
        let free: Vec<usize> = (0..self.cols).filter(|c| !piv.contains(c)).collect();
        free.iter()
            .map(|&f| {
                let mut v = vec![Scalar::zero(); self.cols];
                v[f] = Scalar::one();
                for (r, &c) in piv.iter().enumerate() {
                    v[c] = -&red[(r, f)];
                }
                v
            })
            .collect()
    }

    /// Block-diagonal sum.
    pub fn block_diag(blocks: &[Mat]) -> Mat {
        let n: usize = blocks.iter().map(|b| b.rows).sum();
        let m: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = Mat::zeros(n, m);
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            for i in 0..b.rows {
                for j in 0..b.cols {
                    out[(r0 + i, c0 + j)] = b[(i, j)].clone();
                }
            }
            r0 += b.rows;
            c0 += b.cols;
        }
        out
    }

    /// Submatrix with the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Mat {
        let mut out = Mat::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out[(a, b)] = self[(i, j)].clone();
            }
        }
        out
    }

    pub fn entries(&self) -> &[Scalar] {
        &self.data
    }

    /// Rows as text, for reports.
    pub fn to_text(&self) -> Vec<Vec<String>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].to_text()).collect())
            .collect()
    }

    pub fn from_text(rows: &[Vec<String>]) -> Result<Mat, CoeffError> {
        let parsed: Result<Vec<Vec<Scalar>>, CoeffError> = rows
            .iter()
            .map(|r| r.iter().map(|t| Scalar::parse(t)).collect())
            .collect();
        let parsed = parsed?;
        let c = parsed.first().map_or(0, |r| r.len());
        if parsed.iter().any(|r| r.len() != c) {
            return Err(CoeffError::Parse("ragged matrix rows".into()));
        }
        Ok(Mat::from_rows(parsed))
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = Scalar;
    fn index(&self, (i, j): (usize, usize)) -> &Scalar {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Scalar {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Display for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| self[(i, j)].to_text()).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_det() {
        let a = Mat::from_i64(&[&[2, 1], &[1, 1]]);
        let inv = a.inverse().unwrap();
        assert_eq!(a.mul(&inv), Mat::identity(2));
        assert_eq!(a.det().unwrap(), Scalar::one());
        let s = Mat::from_i64(&[&[1, 2], &[2, 4]]);
        assert!(s.inverse().is_none());
        assert!(s.det().unwrap().is_zero());
        assert_eq!(s.rank(), 1);
        let ns = s.nullspace();
        assert_eq!(ns.len(), 1);
        assert!(s.mul_vec(&ns[0]).iter().all(Scalar::is_zero));
    }

    #[test]
    fn solve_consistency() {
        let a = Mat::from_i64(&[&[1, 1], &[2, 2]]);
        assert!(a.solve(&[Scalar::one(), Scalar::from_i64(3)]).is_none());
        let x = a.solve(&[Scalar::one(), Scalar::from_i64(2)]).unwrap();
        assert_eq!(a.mul_vec(&x), vec![Scalar::one(), Scalar::from_i64(2)]);
    }
}
