//! Finite-dimensional graded-commutative algebras given by structure
//! constants, their multiplication operators and the grading operator.
//!
//! Only even degrees are supported. Elements are coordinate vectors in the
//! chosen basis.

use crate::coeff::Scalar;
use crate::linalg::Mat;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Coordinates of an algebra element.
pub type Elem = Vec<Scalar>;

/// Errors from algebra construction and arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AlgebraError {
    #[error("malformed algebra: {0}")]
    Malformed(String),
    #[error("element is not invertible")]
    NotInvertible,
    #[error("algebra axioms violated: {0:?}")]
    Invalid(Vec<Violation>),
}

/// One violated algebra axiom with its witness basis indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    /// `T_unit * T_i != T_i` (or `T_i * T_unit != T_i`).
    UnitLaw { unit: usize, i: usize },
    Commutativity { i: usize, j: usize },
    Associativity { i: usize, j: usize, k: usize },
    /// Nonzero `T_i T_j -> T_k` with `deg T_k != deg T_i + deg T_j`.
    DegreeAdditivity { i: usize, j: usize, k: usize },
    /// Degree is odd or exceeds twice the ambient dimension.
    BadDegree { i: usize, degree: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnitLaw { unit, i } => write!(f, "unit law fails on (T{unit}, T{i})"),
            Violation::Commutativity { i, j } => write!(f, "T{i} T{j} != T{j} T{i}"),
            Violation::Associativity { i, j, k } => {
                write!(f, "(T{i} T{j}) T{k} != T{i} (T{j} T{k})")
            }
            Violation::DegreeAdditivity { i, j, k } => {
                write!(f, "T{i} T{j} has a T{k} component of the wrong degree")
            }
            Violation::BadDegree { i, degree } => write!(f, "T{i} has bad degree {degree}"),
        }
    }
}

/// Graded-commutative unital algebra with a homogeneous basis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GradedAlgebra {
    labels: Vec<String>,
    degrees: Vec<u32>,
    ambient_dim: u32,
    unit: usize,
    /// `products[i][j]` is the sparse expansion of `T_i T_j`.
    products: Vec<Vec<Vec<(usize, Scalar)>>>,
}

/// JSON form of an algebra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgebraDescriptor {
    pub basis: Vec<String>,
    /// Real (even) degrees.
    pub degrees: Vec<u32>,
    /// Complex dimension of the ambient space.
    pub dim: u32,
    #[serde(default)]
    pub unit: usize,
    /// Sparse constants `[i, j, k, "coeff"]` meaning `T_i T_j` has coefficient
    /// `coeff` on `T_k`.
    pub structure: Vec<(usize, usize, usize, String)>,
    /// Also record `T_j T_i` for every listed `T_i T_j` (default true).
    #[serde(default = "default_true")]
    pub symmetric: bool,
    /// Also record the unit products `T_unit T_i = T_i` (default true).
    #[serde(default = "default_true")]
    pub implicit_unit: bool,
}

fn default_true() -> bool {
    true
}

impl GradedAlgebra {
    /// Build from raw structure constants `(i, j, k, c)`: `T_i T_j += c T_k`.
    /// Nothing is symmetrized or filled in.
    pub fn from_structure(
        labels: Vec<String>,
        degrees: Vec<u32>,
        ambient_dim: u32,
        unit: usize,
        structure: &[(usize, usize, usize, Scalar)],
    ) -> Result<GradedAlgebra, AlgebraError> {
        let n = labels.len();
        if degrees.len() != n || n == 0 || unit >= n {
            return Err(AlgebraError::Malformed("basis, degrees and unit disagree".into()));
        }
        let mut products = vec![vec![Vec::new(); n]; n];
        for (i, j, k, c) in structure {
            if *i >= n || *j >= n || *k >= n {
                return Err(AlgebraError::Malformed(format!("index out of range in ({i},{j},{k})")));
            }
            add_sparse(&mut products[*i][*j], *k, c);
        }
        Ok(GradedAlgebra { labels, degrees, ambient_dim, unit, products })
    }

    /// Cohomology of projective space `P^n`: basis `1, h, ..., h^n`.
    pub fn projective_space(n: u32) -> GradedAlgebra {
        let labels = (0..=n).map(|i| if i == 0 { "1".to_string() } else { format!("h^{i}") }).collect();
        let degrees = (0..=n).map(|i| 2 * i).collect();
        let mut st = Vec::new();
        for i in 0..=n as usize {
            for j in 0..=n as usize {
                if i + j <= n as usize {
                    st.push((i, j, i + j, Scalar::one()));
                }
            }
        }
        GradedAlgebra::from_structure(labels, degrees, n, 0, &st).unwrap()
    }

    /// Cohomology of a point.
    pub fn point() -> GradedAlgebra {
        GradedAlgebra::projective_space(0)
    }

    /// Truncated polynomial algebra in named generators of given real degrees,
    /// keeping monomials of total generator count at most `max_count`. The
    /// ambient dimension is set to half the top degree.
    pub fn truncated_polynomial(names: &[&str], degrees: &[u32], max_count: u32) -> GradedAlgebra {
        assert_eq!(names.len(), degrees.len());
        let mut monos: Vec<Vec<u32>> = vec![vec![0; names.len()]];
        for total in 1..=max_count {
            let mut layer = Vec::new();
            enumerate_exponents(names.len(), total, &mut vec![0; names.len()], 0, &mut layer);
            monos.extend(layer);
        }
        let labels: Vec<String> = monos
            .iter()
            .map(|m| {
                let parts: Vec<String> = m
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(v, &e)| if e == 1 { names[v].to_string() } else { format!("{}^{}", names[v], e) })
                    .collect();
                if parts.is_empty() { "1".to_string() } else { parts.join("*") }
            })
            .collect();
        let degs: Vec<u32> = monos
            .iter()
            .map(|m| m.iter().zip(degrees).map(|(e, d)| e * d).sum())
            .collect();
        let mut st = Vec::new();
        for (i, a) in monos.iter().enumerate() {
            for (j, b) in monos.iter().enumerate() {
                let p: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                if let Some(k) = monos.iter().position(|m| *m == p) {
                    st.push((i, j, k, Scalar::one()));
                }
            }
        }
        let top = degs.iter().copied().max().unwrap_or(0);
        GradedAlgebra::from_structure(labels, degs, top / 2, 0, &st).unwrap()
    }

    /// Tensor product; degrees and ambient dimensions add.
    pub fn tensor(&self, other: &GradedAlgebra) -> GradedAlgebra {
        let (n, m) = (self.dim(), other.dim());
        let idx = |i: usize, j: usize| i * m + j;
        let mut labels = Vec::new();
        let mut degrees = Vec::new();
        for i in 0..n {
            for j in 0..m {
                labels.push(match (i == self.unit, j == other.unit) {
                    (true, true) => "1".to_string(),
                    (true, false) => other.labels[j].clone(),
                    (false, true) => self.labels[i].clone(),
                    _ => format!("{}*{}", self.labels[i], other.labels[j]),
                });
                degrees.push(self.degrees[i] + other.degrees[j]);
            }
        }
        let mut st = Vec::new();
        for i1 in 0..n {
            for j1 in 0..m {
                for i2 in 0..n {
                    for j2 in 0..m {
                        for (k1, a) in &self.products[i1][i2] {
                            for (k2, b) in &other.products[j1][j2] {
                                st.push((idx(i1, j1), idx(i2, j2), idx(*k1, *k2), a * b));
                            }
                        }
                    }
                }
            }
        }
        GradedAlgebra::from_structure(
            labels,
            degrees,
            self.ambient_dim + other.ambient_dim,
            idx(self.unit, other.unit),
            &st,
        )
        .unwrap()
    }

    pub fn from_descriptor(d: &AlgebraDescriptor) -> Result<GradedAlgebra, AlgebraError> {
        let n = d.basis.len();
        let mut st = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (i, j, k, c) in &d.structure {
            let c = Scalar::parse(c).map_err(|e| AlgebraError::Malformed(e.to_string()))?;
            seen.insert((*i, *j, *k));
            st.push((*i, *j, *k, c));
        }
        if d.symmetric {
            let extra: Vec<_> = st
                .iter()
                .filter(|(i, j, k, _)| i != j && !seen.contains(&(*j, *i, *k)))
                .map(|(i, j, k, c)| (*j, *i, *k, c.clone()))
                .collect();
            st.extend(extra);
        }
        if d.implicit_unit {
            for i in 0..n {
                let pairs = [(d.unit, i), (i, d.unit)];
                for (a, b) in pairs {
                    if !st.iter().any(|(x, y, _, _)| (*x, *y) == (a, b)) {
                        st.push((a, b, i, Scalar::one()));
                    }
                }
            }
        }
        GradedAlgebra::from_structure(d.basis.clone(), d.degrees.clone(), d.dim, d.unit, &st)
    }

    pub fn descriptor(&self) -> AlgebraDescriptor {
        let mut structure = Vec::new();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                for (k, c) in &self.products[i][j] {
                    structure.push((i, j, *k, c.to_text()));
                }
            }
        }
        AlgebraDescriptor {
            basis: self.labels.clone(),
            degrees: self.degrees.clone(),
            dim: self.ambient_dim,
            unit: self.unit,
            structure,
            symmetric: false,
            implicit_unit: false,
        }
    }

    /// Number of basis elements.
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// Complex dimension of the ambient space.
    pub fn ambient_dim(&self) -> u32 {
        self.ambient_dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn unit_index(&self) -> usize {
        self.unit
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn zero(&self) -> Elem {
        vec![Scalar::zero(); self.dim()]
    }

    pub fn one(&self) -> Elem {
        self.basis(self.unit)
    }

    pub fn basis(&self, i: usize) -> Elem {
        let mut e = self.zero();
        e[i] = Scalar::one();
        e
    }

    pub fn scalar(&self, c: Scalar) -> Elem {
        let mut e = self.zero();
        e[self.unit] = c;
        e
    }

    pub fn add(&self, a: &[Scalar], b: &[Scalar]) -> Elem {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    pub fn sub(&self, a: &[Scalar], b: &[Scalar]) -> Elem {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    pub fn scale(&self, a: &[Scalar], c: &Scalar) -> Elem {
        a.iter().map(|x| x * c).collect()
    }

    pub fn mul(&self, a: &[Scalar], b: &[Scalar]) -> Elem {
        let mut out = self.zero();
        for (i, x) in a.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            for (j, y) in b.iter().enumerate() {
                if y.is_zero() {
                    continue;
                }
                let xy = x * y;
                for (k, c) in &self.products[i][j] {
                    out[*k] += &(&xy * c);
                }
            }
        }
        out
    }

    pub fn is_zero(&self, a: &[Scalar]) -> bool {
        a.iter().all(Scalar::is_zero)
    }

    /// Matrix of `y -> x y`: column `j` holds the coordinates of `x T_j`.
    pub fn mult_operator(&self, x: &[Scalar]) -> Mat {
        let n = self.dim();
        let mut m = Mat::zeros(n, n);
        for j in 0..n {
            let col = self.mul(x, &self.basis(j));
            for i in 0..n {
                m[(i, j)] = col[i].clone();
            }
        }
        m
    }

    /// Grading operator `diag((deg - dim X) / 2)`.
    pub fn grading_operator(&self) -> Mat {
        let d = self.ambient_dim as i64;
        Mat::diagonal(
            &self
                .degrees
                .iter()
                .map(|&g| Scalar::ratio(g as i64 - d, 2))
                .collect::<Vec<_>>(),
        )
    }

    /// Euler weight `deg / 2` of each basis element.
    pub fn weight(&self, i: usize) -> Scalar {
        Scalar::ratio(self.degrees[i] as i64, 2)
    }

    /// Euler derivation: each basis element scaled by its weight.
    pub fn euler(&self, a: &[Scalar]) -> Elem {
        a.iter()
            .enumerate()
            .map(|(i, x)| if x.is_zero() { Scalar::zero() } else { x * &self.weight(i) })
            .collect()
    }

    /// Component of `a` of real degree `deg`.
    pub fn homogeneous_part(&self, a: &[Scalar], deg: u32) -> Elem {
        a.iter()
            .enumerate()
            .map(|(i, x)| if self.degrees[i] == deg { x.clone() } else { Scalar::zero() })
            .collect()
    }

    /// Multiplicative inverse, solving `x a = 1` exactly.
    pub fn inverse(&self, a: &[Scalar]) -> Result<Elem, AlgebraError> {
        let m = self.mult_operator(a);
        let x = m.solve(&self.one()).ok_or(AlgebraError::NotInvertible)?;
        if self.mul(a, &x) != self.one() {
            return Err(AlgebraError::NotInvertible);
        }
        Ok(x)
    }

    /// Whether `a` is a unit.
    pub fn is_unit(&self, a: &[Scalar]) -> bool {
        self.inverse(a).is_ok()
    }

    /// Reduce modulo the ideal of positive degree: keep the degree-0 part.
    pub fn degree_zero_part(&self, a: &[Scalar]) -> Elem {
        self.homogeneous_part(a, 0)
    }

    /// Apply a scalar map to every coordinate (e.g. a field embedding).
    pub fn map_coeffs(&self, a: &[Scalar], f: impl Fn(&Scalar) -> Scalar) -> Elem {
        a.iter().map(f).collect()
    }

    /// Text form `c*label + ...`.
    pub fn elem_to_text(&self, a: &[Scalar]) -> String {
        let parts: Vec<String> = a
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| {
                let ct = c.to_text();
                let ct = if ct.contains(' ') { format!("({ct})") } else { ct };
                if i == self.unit { ct } else { format!("{}*{}", ct, self.labels[i]) }
            })
            .collect();
        if parts.is_empty() { "0".into() } else { parts.join(" + ") }
    }
}

impl GradedAlgebra {
    /// Quotient by the span of basis elements of real degree above
    /// `max_deg`, an ideal since degrees are nonnegative and products are
    /// homogeneous. Returns the quotient and the kept basis indices.
    pub fn truncate_degree(&self, max_deg: u32) -> (GradedAlgebra, Vec<usize>) {
        let keep: Vec<usize> = (0..self.dim()).filter(|&i| self.degrees[i] <= max_deg).collect();
        let pos = |k: usize| keep.iter().position(|&x| x == k);
        let mut st = Vec::new();
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                for (k, c) in &self.products[i][j] {
                    if let Some(p) = pos(*k) {
                        st.push((a, b, p, c.clone()));
                    }
                }
            }
        }
        let labels = keep.iter().map(|&i| self.labels[i].clone()).collect();
        let degrees = keep.iter().map(|&i| self.degrees[i]).collect();
        let unit = pos(self.unit).expect("unit has degree zero");
        let q = GradedAlgebra::from_structure(labels, degrees, self.ambient_dim, unit, &st).expect("valid quotient");
        (q, keep)
    }

    /// Image of an element in a quotient from [`GradedAlgebra::truncate_degree`].
    pub fn project(a: &[Scalar], keep: &[usize]) -> Elem {
        keep.iter().map(|&i| a[i].clone()).collect()
    }
}

impl GradedAlgebra {
    /// Parse the text form produced by [`GradedAlgebra::elem_to_text`]:
    /// terms `coeff*label`, `label`, `-label` or a bare coefficient joined
    /// by ` + ` outside parentheses.
    pub fn parse_elem(&self, text: &str) -> Result<Elem, AlgebraError> {
        let bad = |t: &str| AlgebraError::Malformed(format!("cannot parse element term '{t}'"));
        let mut out = self.zero();
        for term in split_top_level(text) {
            let term = term.trim();
            if term.is_empty() || term == "0" {
                continue;
            }
            let (idx, coeff) = if let Some(i) = self.label_index(term) {
                (i, Scalar::one())
            } else if let Some(i) = term.strip_prefix('-').and_then(|t| self.label_index(t.trim())) {
                (i, -Scalar::one())
            } else {
                let split = term
                    .char_indices()
                    .filter(|&(_, ch)| ch == '*')
                    .find_map(|(p, _)| {
                        let label = self.label_index(term[p + 1..].trim())?;
                        let c = Scalar::parse(unwrap_parens(term[..p].trim())).ok()?;
                        Some((label, c))
                    });
                match split {
                    Some(x) => x,
                    None => (self.unit, Scalar::parse(unwrap_parens(term)).map_err(|_| bad(term))?),
                }
            };
            out[idx] = &out[idx] + &coeff;
        }
        Ok(out)
    }
}

fn unwrap_parens(t: &str) -> &str {
    t.strip_prefix('(').and_then(|x| x.strip_suffix(')')).unwrap_or(t)
}

fn split_top_level(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, &ch) in bytes.iter().enumerate() {
        match ch {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b'+' if depth == 0 && i > 0 && bytes[i - 1] == b' ' => {
                parts.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&text[start..]);
    parts
}

fn add_sparse(v: &mut Vec<(usize, Scalar)>, k: usize, c: &Scalar) {
    if let Some(e) = v.iter_mut().find(|(i, _)| *i == k) {
        e.1 = &e.1 + c;
    } else {
        v.push((k, c.clone()));
    }
    v.retain(|(_, c)| !c.is_zero());
    v.sort_by_key(|(i, _)| *i);
}

fn enumerate_exponents(n: usize, left: u32, cur: &mut Vec<u32>, pos: usize, out: &mut Vec<Vec<u32>>) {
    if pos == n - 1 {
        cur[pos] = left;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        enumerate_exponents(n, left - e, cur, pos + 1, out);
    }
    cur[pos] = 0;
}

/// Check every algebra axiom; an empty list means valid.
pub fn verify_algebra(a: &GradedAlgebra) -> Vec<Violation> {
    let n = a.dim();
    let mut out = Vec::new();
    for i in 0..n {
        let d = a.degrees[i];
        if d % 2 == 1 || d > 2 * a.ambient_dim {
            out.push(Violation::BadDegree { i, degree: d });
        }
    }
    let e = a.one();
    for i in 0..n {
        let ti = a.basis(i);
        if a.mul(&e, &ti) != ti || a.mul(&ti, &e) != ti {
            out.push(Violation::UnitLaw { unit: a.unit, i });
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if a.products[i][j] != a.products[j][i] {
                out.push(Violation::Commutativity { i, j });
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for (k, c) in &a.products[i][j] {
                if !c.is_zero() && a.degrees[*k] != a.degrees[i] + a.degrees[j] {
                    out.push(Violation::DegreeAdditivity { i, j, k: *k });
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let ij = a.mul(&a.basis(i), &a.basis(j));
            for k in 0..n {
                let left = a.mul(&ij, &a.basis(k));
                let jk = a.mul(&a.basis(j), &a.basis(k));
                let right = a.mul(&a.basis(i), &jk);
                if left != right {
                    out.push(Violation::Associativity { i, j, k });
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// matrices over an algebra

/// Square or rectangular matrix with entries in a [`GradedAlgebra`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlgMat {
    pub rows: usize,
    pub cols: usize,
    pub e: Vec<Elem>,
}

impl AlgMat {
    pub fn zeros(a: &GradedAlgebra, rows: usize, cols: usize) -> AlgMat {
        AlgMat { rows, cols, e: vec![a.zero(); rows * cols] }
    }

    pub fn identity(a: &GradedAlgebra, n: usize) -> AlgMat {
        let mut m = AlgMat::zeros(a, n, n);
        for i in 0..n {
            m.e[i * n + i] = a.one();
        }
        m
    }

    /// Embed a scalar matrix.
    pub fn from_mat(a: &GradedAlgebra, m: &Mat) -> AlgMat {
        AlgMat {
            rows: m.rows(),
            cols: m.cols(),
            e: m.entries().iter().map(|c| a.scalar(c.clone())).collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &Elem {
        &self.e[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Elem) {
        self.e[i * self.cols + j] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.e.iter().all(|x| x.iter().all(Scalar::is_zero))
    }

    pub fn add(&self, o: &AlgMat) -> AlgMat {
        AlgMat {
            rows: self.rows,
            cols: self.cols,
            e: self.e.iter().zip(&o.e).map(|(x, y)| x.iter().zip(y).map(|(a, b)| a + b).collect()).collect(),
        }
    }

    pub fn sub(&self, o: &AlgMat) -> AlgMat {
        AlgMat {
            rows: self.rows,
            cols: self.cols,
            e: self.e.iter().zip(&o.e).map(|(x, y)| x.iter().zip(y).map(|(a, b)| a - b).collect()).collect(),
        }
    }

    pub fn scale(&self, c: &Scalar) -> AlgMat {
        AlgMat {
            rows: self.rows,
            cols: self.cols,
            e: self.e.iter().map(|x| x.iter().map(|a| a * c).collect()).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(&Elem) -> Elem) -> AlgMat {
        AlgMat { rows: self.rows, cols: self.cols, e: self.e.iter().map(f).collect() }
    }

    pub fn mul(&self, alg: &GradedAlgebra, o: &AlgMat) -> AlgMat {
        assert_eq!(self.cols, o.rows, "shape mismatch in product");
        let mut out = AlgMat::zeros(alg, self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if alg.is_zero(a) {
                    continue;
                }
                for j in 0..o.cols {
                    let b = o.get(k, j);
                    if alg.is_zero(b) {
                        continue;
                    }
                    let p = alg.mul(a, b);
                    let cur = &mut out.e[i * o.cols + j];
                    for (c, x) in cur.iter_mut().zip(&p) {
                        if !x.is_zero() {
                            *c += x;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn commutator(&self, alg: &GradedAlgebra, o: &AlgMat) -> AlgMat {
        self.mul(alg, o).sub(&o.mul(alg, self))
    }

    /// Inverse by Gaussian elimination with unit pivots.
    pub fn inverse(&self, alg: &GradedAlgebra) -> Result<AlgMat, AlgebraError> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = AlgMat::identity(alg, n);
        for c in 0..n {
            let p = (c..n)
                .find(|&i| alg.is_unit(a.get(i, c)))
                .ok_or(AlgebraError::NotInvertible)?;
            if p != c {
                for j in 0..n {
                    a.e.swap(p * n + j, c * n + j);
                    inv.e.swap(p * n + j, c * n + j);
                }
            }
            let pinv = alg.inverse(a.get(c, c))?;
            for j in 0..n {
                let x = alg.mul(&pinv, a.get(c, j));
                a.set(c, j, x);
                let y = alg.mul(&pinv, inv.get(c, j));
                inv.set(c, j, y);
            }
            for i in 0..n {
                if i == c || alg.is_zero(a.get(i, c)) {
                    continue;
                }
                let f = a.get(i, c).clone();
                for j in 0..n {
                    let x = alg.sub(a.get(i, j), &alg.mul(&f, a.get(c, j)));
                    a.set(i, j, x);
                    let y = alg.sub(inv.get(i, j), &alg.mul(&f, inv.get(c, j)));
                    inv.set(i, j, y);
                }
            }
        }
        Ok(inv)
    }

    /// Expand to a scalar matrix by replacing each entry with its
    /// multiplication operator (block `(i, j)` is `M_{a_ij}`).
    pub fn to_operator(&self, alg: &GradedAlgebra) -> Mat {
        let d = alg.dim();
        let mut out = Mat::zeros(self.rows * d, self.cols * d);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let m = alg.mult_operator(self.get(i, j));
                for a in 0..d {
                    for b in 0..d {
                        out[(i * d + a, j * d + b)] = m[(a, b)].clone();
                    }
                }
            }
        }
        out
    }

    pub fn from_text(alg: &GradedAlgebra, rows: &[Vec<String>]) -> Result<AlgMat, AlgebraError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AlgebraError::Malformed("ragged matrix".into()));
        }
        let e = rows.iter().flatten().map(|t| alg.parse_elem(t)).collect::<Result<Vec<_>, _>>()?;
        Ok(AlgMat { rows: rows.len(), cols, e })
    }

    pub fn to_text(&self, alg: &GradedAlgebra) -> Vec<Vec<String>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| alg.elem_to_text(self.get(i, j))).collect())
            .collect()
    }
}
