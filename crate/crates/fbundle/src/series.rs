//! Truncated multivariate power series over [`Scalar`].
//!
//! A [`Ring`] fixes named base variables (logarithmic or plain), the
//! parameter `u`, a cap on total base degree and a cap on the `u` exponent.
//! Every term beyond either cap is dropped. Base monomials are enumerated in
//! graded-lexicographic order; storage is dense per (base monomial, `u`
//! power).

use crate::coeff::{CoeffError, Scalar};
use crate::linalg::Mat;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

const NONE: u32 = u32::MAX;

/// Errors from series construction and arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SeriesError {
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error("substitution argument {index} has nonzero constant term")]
    NonzeroConstantTerm { index: usize },
    #[error("constant term is singular")]
    SingularConstantTerm,
    #[error("ring mismatch: {0}")]
    RingMismatch(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("malformed series data: {0}")]
    Malformed(String),
}

/// A base variable of a ring.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Var {
    pub name: String,
    /// Logarithmic variables act through `q d/dq`.
    pub log: bool,
}

impl Var {
    pub fn log(name: &str) -> Var {
        Var { name: name.to_string(), log: true }
    }
    pub fn plain(name: &str) -> Var {
        Var { name: name.to_string(), log: false }
    }
}

struct RingData {
    vars: Vec<Var>,
    u_name: String,
    t_cap: u32,
    u_cap: u32,
    monos: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
    degree: Vec<u32>,
    degree_start: Vec<usize>,
    mul_table: Vec<u32>,
    lower: Vec<Vec<u32>>,
    raise: Vec<Vec<u32>>,
}

/// Shared description of a truncated series ring.
#[derive(Clone)]
pub struct Ring(Arc<RingData>);

impl PartialEq for Ring {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.vars == other.0.vars
                && self.0.u_name == other.0.u_name
                && self.0.t_cap == other.0.t_cap
                && self.0.u_cap == other.0.u_cap)
    }
}
impl Eq for Ring {}

impl fmt::Debug for Ring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self
            .0
            .vars
            .iter()
            .map(|v| if v.log { format!("{}(log)", v.name) } else { v.name.clone() })
            .collect();
        write!(
            f,
            "Ring[{}; {}] mod deg {} , {}^{}",
            names.join(","),
            self.0.u_name,
            self.0.t_cap + 1,
            self.0.u_name,
            self.0.u_cap + 1
        )
    }
}

fn monomials_of_degree(nvars: usize, d: u32) -> Vec<Vec<u32>> {
    // later variables vary slowest, so x1 < x2 < ... within a degree
    fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos == 0 {
            cur[0] = left;
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur[pos] = e;
            rec(pos - 1, left - e, cur, out);
        }
        cur[pos] = 0;
    }
    if nvars == 0 {
        return if d == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    let mut cur = vec![0; nvars];
    rec(nvars - 1, d, &mut cur, &mut out);
    out
}

impl Ring {
    /// Ring with base variables `vars`, parameter `u_name`, and caps: terms of
    /// total base degree above `t_cap` or `u` power above `u_cap` vanish.
    pub fn new(vars: Vec<Var>, u_name: &str, t_cap: u32, u_cap: u32) -> Ring {
        let n = vars.len();
        let mut names: Vec<&str> = vars.iter().map(|v| v.name.as_str()).collect();
        names.push(u_name);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "duplicate variable names");
        let mut monos = Vec::new();
        let mut degree_start = Vec::new();
        for d in 0..=t_cap {
            degree_start.push(monos.len());
            monos.extend(monomials_of_degree(n, d));
        }
        degree_start.push(monos.len());
        let index: HashMap<Vec<u32>, usize> =
            monos.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        let degree: Vec<u32> = monos.iter().map(|m| m.iter().sum()).collect();
        let nb = monos.len();
        let mut mul_table = vec![NONE; nb * nb];
        for i in 0..nb {
            for j in 0..nb {
                if degree[i] + degree[j] <= t_cap {
                    let prod: Vec<u32> = monos[i].iter().zip(&monos[j]).map(|(a, b)| a + b).collect();
                    mul_table[i * nb + j] = index[&prod] as u32;
                }
            }
        }
        let mut lower = vec![vec![NONE; nb]; n];
        let mut raise = vec![vec![NONE; nb]; n];
        for v in 0..n {
            for (i, m) in monos.iter().enumerate() {
                if m[v] > 0 {
                    let mut p = m.clone();
                    p[v] -= 1;
                    lower[v][i] = index[&p] as u32;
                }
                if degree[i] < t_cap {
                    let mut p = m.clone();
                    p[v] += 1;
                    raise[v][i] = index[&p] as u32;
                }
            }
        }
        Ring(Arc::new(RingData {
            vars,
            u_name: u_name.to_string(),
            t_cap,
            u_cap,
            monos,
            index,
            degree,
            degree_start,
            mul_table,
            lower,
            raise,
        }))
    }

    pub fn vars(&self) -> &[Var] {
        &self.0.vars
    }

    pub fn nvars(&self) -> usize {
        self.0.vars.len()
    }

    pub fn u_name(&self) -> &str {
        &self.0.u_name
    }

    /// Highest total base degree kept.
    pub fn t_cap(&self) -> u32 {
        self.0.t_cap
    }

    /// Highest `u` power kept.
    pub fn u_cap(&self) -> u32 {
        self.0.u_cap
    }

    pub fn num_base_monomials(&self) -> usize {
        self.0.monos.len()
    }

    pub fn monomial(&self, b: usize) -> &[u32] {
        &self.0.monos[b]
    }

    pub fn monomial_index(&self, exps: &[u32]) -> Option<usize> {
        self.0.index.get(exps).copied()
    }

    pub fn monomial_degree(&self, b: usize) -> u32 {
        self.0.degree[b]
    }

    /// Index range of base monomials of total degree `d`.
    pub fn degree_range(&self, d: u32) -> std::ops::Range<usize> {
        if d > self.0.t_cap {
            return 0..0;
        }
        self.0.degree_start[d as usize]..self.0.degree_start[d as usize + 1]
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.0.vars.iter().position(|v| v.name == name)
    }

    /// Indices of logarithmic variables, in order.
    pub fn log_vars(&self) -> Vec<usize> {
        (0..self.nvars()).filter(|&i| self.0.vars[i].log).collect()
    }

    /// Indices of plain variables, in order.
    pub fn plain_vars(&self) -> Vec<usize> {
        (0..self.nvars()).filter(|&i| !self.0.vars[i].log).collect()
    }

    /// Base monomial index of `b * x_v`, if within the cap.
    pub fn raise(&self, v: usize, b: usize) -> Option<usize> {
        let r = self.0.raise[v][b];
        (r != NONE).then_some(r as usize)
    }

    /// Base monomial index of `b / x_v`, if `x_v` divides `b`.
    pub fn lower(&self, v: usize, b: usize) -> Option<usize> {
        let r = self.0.lower[v][b];
        (r != NONE).then_some(r as usize)
    }

    /// Base monomial index of `b1 * b2`, if within the cap.
    pub fn mul_index(&self, b1: usize, b2: usize) -> Option<usize> {
        let r = self.0.mul_table[b1 * self.0.monos.len() + b2];
        (r != NONE).then_some(r as usize)
    }

    /// Same variables with different caps.
    pub fn with_caps(&self, t_cap: u32, u_cap: u32) -> Ring {
        Ring::new(self.0.vars.clone(), &self.0.u_name, t_cap, u_cap)
    }

    fn nu(&self) -> usize {
        self.0.u_cap as usize + 1
    }

    fn len(&self) -> usize {
        self.0.monos.len() * self.nu()
    }

    /// Serializable description.
    pub fn descriptor(&self) -> RingDescriptor {
        let mut vars: Vec<VarDescriptor> = self
            .0
            .vars
            .iter()
            .map(|v| VarDescriptor {
                name: v.name.clone(),
                kind: if v.log { "log".into() } else { "base".into() },
            })
            .collect();
        vars.push(VarDescriptor { name: self.0.u_name.clone(), kind: "u".into() });
        RingDescriptor { vars, caps: Caps { t: self.0.t_cap, u: self.0.u_cap } }
    }

    pub fn from_descriptor(d: &RingDescriptor) -> Result<Ring, SeriesError> {
        let mut vars = Vec::new();
        let mut u_name = None;
        for v in &d.vars {
            match v.kind.as_str() {
                "log" => vars.push(Var::log(&v.name)),
                "base" | "t" => vars.push(Var::plain(&v.name)),
                "u" => {
                    if u_name.replace(v.name.clone()).is_some() {
                        return Err(SeriesError::Malformed("more than one u variable".into()));
                    }
                }
                other => {
                    return Err(SeriesError::Malformed(format!("unknown variable kind {other:?}")))
                }
            }
        }
        let u_name = u_name.unwrap_or_else(|| "u".to_string());
        let mut names: Vec<&str> = vars.iter().map(|v| v.name.as_str()).collect();
        names.push(&u_name);
        let n = names.len();
        names.sort();
        names.dedup();
        if names.len() != n {
            return Err(SeriesError::Malformed("duplicate variable names".into()));
        }
        Ok(Ring::new(vars, &u_name, d.caps.t, d.caps.u))
    }
}

/// JSON form of a variable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarDescriptor {
    pub name: String,
    /// `"log"`, `"base"` or `"u"`.
    pub kind: String,
}

/// JSON form of truncation caps: highest kept base degree and `u` power.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub t: u32,
    pub u: u32,
}

/// JSON form of a ring.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingDescriptor {
    pub vars: Vec<VarDescriptor>,
    pub caps: Caps,
}

/// One JSON term: exponents (base variables then `u`) and a coefficient that
/// is a scalar string or a matrix of strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermJson {
    pub mono: Vec<u32>,
    pub coeff: serde_json::Value,
}

/// JSON form of a scalar or matrix series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesJson {
    #[serde(flatten)]
    pub ring: RingDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<[usize; 2]>,
    pub terms: Vec<TermJson>,
}

// ---------------------------------------------------------------------------

/// A truncated power series in a [`Ring`].
#[derive(Clone, PartialEq, Eq)]
pub struct Series {
    ring: Ring,
    c: Vec<Scalar>,
}

impl fmt::Debug for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (b, k, c) in self.terms() {
            let mut atoms = Vec::new();
            for (v, &e) in self.ring.monomial(b).iter().enumerate() {
                match e {
                    0 => {}
                    1 => atoms.push(self.ring.0.vars[v].name.clone()),
                    _ => atoms.push(format!("{}^{}", self.ring.0.vars[v].name, e)),
                }
            }
            match k {
                0 => {}
                1 => atoms.push(self.ring.0.u_name.clone()),
                _ => atoms.push(format!("{}^{}", self.ring.0.u_name, k)),
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            let coeff = c.to_text();
            let simple = !coeff.contains(' ');
            if atoms.is_empty() {
                write!(f, "{}", if simple { coeff } else { format!("({coeff})") })?;
            } else if c.is_one() {
                write!(f, "{}", atoms.join("*"))?;
            } else if simple {
                write!(f, "{}*{}", coeff, atoms.join("*"))?;
            } else {
                write!(f, "({})*{}", coeff, atoms.join("*"))?;
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

impl Series {
    pub fn zero(ring: &Ring) -> Series {
        Series { ring: ring.clone(), c: vec![Scalar::zero(); ring.len()] }
    }

    pub fn constant(ring: &Ring, value: Scalar) -> Series {
        let mut s = Series::zero(ring);
        s.c[0] = value;
        s
    }

    pub fn one(ring: &Ring) -> Series {
        Series::constant(ring, Scalar::one())
    }

    /// The variable with the given name (base variable or `u`).
    pub fn var(ring: &Ring, name: &str) -> Result<Series, SeriesError> {
        let mut s = Series::zero(ring);
        if name == ring.u_name() {
            if ring.u_cap() >= 1 {
                s.c[1] = Scalar::one();
            }
            return Ok(s);
        }
        let v = ring.var_index(name).ok_or_else(|| SeriesError::UnknownVariable(name.into()))?;
        if let Some(b) = ring.raise(v, 0) {
            s.c[b * ring.nu()] = Scalar::one();
        }
        Ok(s)
    }

    /// `coeff * x^exps * u^k`, dropped when beyond the caps.
    pub fn monomial(ring: &Ring, exps: &[u32], k: u32, coeff: Scalar) -> Series {
        let mut s = Series::zero(ring);
        s.set_coeff(exps, k, coeff);
        s
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    #[inline]
    fn at(&self, b: usize, k: usize) -> &Scalar {
        &self.c[b * self.ring.nu() + k]
    }

    /// Coefficient by base-monomial index and `u` power.
    pub fn coeff_at(&self, b: usize, k: u32) -> &Scalar {
        self.at(b, k as usize)
    }

    pub fn coeff_at_mut(&mut self, b: usize, k: u32) -> &mut Scalar {
        let nu = self.ring.nu();
        &mut self.c[b * nu + k as usize]
    }

    /// Coefficient of `x^exps u^k` (zero when beyond the caps).
    pub fn coeff(&self, exps: &[u32], k: u32) -> Scalar {
        match self.ring.monomial_index(exps) {
            Some(b) if k <= self.ring.u_cap() => self.at(b, k as usize).clone(),
            _ => Scalar::zero(),
        }
    }

    /// Set a coefficient; silently ignored beyond the caps.
    pub fn set_coeff(&mut self, exps: &[u32], k: u32, value: Scalar) {
        if let Some(b) = self.ring.monomial_index(exps) {
            if k <= self.ring.u_cap() {
                *self.coeff_at_mut(b, k) = value;
            }
        }
    }

    /// Nonzero terms as (base monomial index, `u` power, coefficient).
    pub fn terms(&self) -> impl Iterator<Item = (usize, u32, &Scalar)> + '_ {
        let nu = self.ring.nu();
        self.c
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(move |(i, c)| (i / nu, (i % nu) as u32, c))
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(Scalar::is_zero)
    }

    pub fn constant_term(&self) -> &Scalar {
        &self.c[0]
    }

    fn same_ring(&self, o: &Series) {
        assert!(self.ring == o.ring, "series from different rings");
    }

    pub fn add(&self, o: &Series) -> Series {
        self.same_ring(o);
        let mut out = self.clone();
        out.add_assign(o);
        out
    }

    pub fn add_assign(&mut self, o: &Series) {
        self.same_ring(o);
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            if !b.is_zero() {
                *a += b;
            }
        }
    }

    pub fn sub(&self, o: &Series) -> Series {
        self.same_ring(o);
        let mut out = self.clone();
        for (a, b) in out.c.iter_mut().zip(&o.c) {
            if !b.is_zero() {
                *a -= b;
            }
        }
        out
    }

    pub fn neg(&self) -> Series {
        Series { ring: self.ring.clone(), c: self.c.iter().map(|x| -x).collect() }
    }

    pub fn scale(&self, s: &Scalar) -> Series {
        if s.is_zero() {
            return Series::zero(&self.ring);
        }
        Series {
            ring: self.ring.clone(),
            c: self.c.iter().map(|x| if x.is_zero() { Scalar::zero() } else { x * s }).collect(),
        }
    }

    /// Nonzero entries as (base index, `u` power, coefficient) triples.
    fn nonzeros(&self) -> Vec<(u32, u32, &Scalar)> {
        let nu = self.ring.nu();
        self.c
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| ((i / nu) as u32, (i % nu) as u32, c))
            .collect()
    }

    pub fn mul(&self, o: &Series) -> Series {
        self.same_ring(o);
        let mut out = Series::zero(&self.ring);
        mul_accumulate(&mut out.c, &self.ring, &self.nonzeros(), &o.nonzeros());
        out
    }

    /// `d/dx_v`.
    pub fn derive(&self, v: usize) -> Series {
        let ring = &self.ring;
        let nu = ring.nu();
        let mut out = Series::zero(ring);
        for (b, k, c) in self.terms() {
            let e = ring.monomial(b)[v];
            if e > 0 {
                let lb = ring.lower(v, b).unwrap();
                out.c[lb * nu + k as usize] = c * &Scalar::from_i64(e as i64);
            }
        }
        out
    }

    /// `x_v d/dx_v`.
    pub fn log_derive(&self, v: usize) -> Series {
        let ring = &self.ring;
        let mut out = Series::zero(ring);
        for (i, c) in self.c.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let e = ring.monomial(i / ring.nu())[v];
            if e > 0 {
                out.c[i] = c * &Scalar::from_i64(e as i64);
            }
        }
        out
    }

    /// Frame derivative: `q d/dq` for logarithmic variables, `d/dt` otherwise.
    pub fn frame_derive(&self, v: usize) -> Series {
        if self.ring.0.vars[v].log {
            self.log_derive(v)
        } else {
            self.derive(v)
        }
    }

    /// `d/du`.
    pub fn derive_u(&self) -> Series {
        let nu = self.ring.nu();
        let mut out = Series::zero(&self.ring);
        for (b, k, c) in self.terms() {
            if k > 0 {
                out.c[b * nu + k as usize - 1] = c * &Scalar::from_i64(k as i64);
            }
        }
        out
    }

    /// `u d/du`.
    pub fn log_derive_u(&self) -> Series {
        let mut out = Series::zero(&self.ring);
        for (i, c) in self.c.iter().enumerate() {
            let k = i % self.ring.nu();
            if k > 0 && !c.is_zero() {
                out.c[i] = c * &Scalar::from_i64(k as i64);
            }
        }
        out
    }

    /// Multiply by `u^shift`; negative shifts drop the low `u` powers.
    pub fn shift_u(&self, shift: i64) -> Series {
        let nu = self.ring.nu() as i64;
        let mut out = Series::zero(&self.ring);
        for (b, k, c) in self.terms() {
            let nk = k as i64 + shift;
            if (0..nu).contains(&nk) {
                out.c[b * nu as usize + nk as usize] = c.clone();
            }
        }
        out
    }

    /// Multiply by the monomial with base index `b` and `u^k`.
    pub fn mul_monomial(&self, b: usize, k: u32) -> Series {
        let nu = self.ring.nu();
        let mut out = Series::zero(&self.ring);
        for (b0, k0, c) in self.terms() {
            let nk = (k0 + k) as usize;
            if nk >= nu {
                continue;
            }
            if let Some(nb) = self.ring.mul_index(b0, b) {
                out.c[nb * nu + nk] = c.clone();
            }
        }
        out
    }

    /// Coefficient of `x_v^l`, a series free of `x_v`.
    pub fn var_slice(&self, v: usize, l: u32) -> Series {
        let nu = self.ring.nu();
        let mut out = Series::zero(&self.ring);
        for (b, k, c) in self.terms() {
            if self.ring.monomial(b)[v] != l {
                continue;
            }
            let mut exps = self.ring.monomial(b).to_vec();
            exps[v] = 0;
            let nb = self.ring.monomial_index(&exps).expect("lowered monomial exists");
            out.c[nb * nu + k as usize] = c.clone();
        }
        out
    }

    /// The coefficient of `u^k` as a `u`-free series.
    pub fn u_coeff(&self, k: u32) -> Series {
        let nu = self.ring.nu();
        let mut out = Series::zero(&self.ring);
        if k as usize >= nu {
            return out;
        }
        for b in 0..self.ring.num_base_monomials() {
            out.c[b * nu] = self.at(b, k as usize).clone();
        }
        out
    }

    /// Terms of total base degree exactly `d`.
    pub fn base_degree_part(&self, d: u32) -> Series {
        let nu = self.ring.nu();
        let mut out = Series::zero(&self.ring);
        for b in self.ring.degree_range(d) {
            for k in 0..nu {
                out.c[b * nu + k] = self.at(b, k).clone();
            }
        }
        out
    }

    /// Drop terms of base degree above `t_cap` or `u` power above `u_cap`.
    pub fn truncate(&self, t_cap: u32, u_cap: u32) -> Series {
        let nu = self.ring.nu();
        let mut out = self.clone();
        for (i, c) in out.c.iter_mut().enumerate() {
            if self.ring.monomial_degree(i / nu) > t_cap || (i % nu) as u32 > u_cap {
                *c = Scalar::zero();
            }
        }
        out
    }

    /// Keep only terms whose exponent in every listed variable is zero.
    pub fn restrict_zero(&self, vars: &[usize]) -> Series {
        let nu = self.ring.nu();
        let mut out = self.clone();
        for (i, c) in out.c.iter_mut().enumerate() {
            let m = self.ring.monomial(i / nu);
            if vars.iter().any(|&v| m[v] > 0) {
                *c = Scalar::zero();
            }
        }
        out
    }

    /// Set `u = 0`.
    pub fn at_u_zero(&self) -> Series {
        self.u_coeff(0)
    }

    /// Whether any nonzero term involves variable `v`.
    pub fn depends_on(&self, v: usize) -> bool {
        self.terms().any(|(b, _, _)| self.ring.monomial(b)[v] > 0)
    }

    /// Whether any nonzero term involves `u`.
    pub fn depends_on_u(&self) -> bool {
        self.terms().any(|(_, k, _)| k > 0)
    }

    /// Lowest total base degree of a nonzero term.
    pub fn base_valuation(&self) -> Option<u32> {
        self.terms().map(|(b, _, _)| self.ring.monomial_degree(b)).min()
    }

    /// Lowest `u` power of a nonzero term.
    pub fn u_valuation(&self) -> Option<u32> {
        self.terms().map(|(_, k, _)| k).min()
    }

    /// Move into another ring, matching variables by name. Terms beyond the
    /// target caps are dropped; a nonzero term in a variable the target lacks
    /// is an error.
    pub fn recast(&self, target: &Ring) -> Result<Series, SeriesError> {
        let map: Vec<Option<usize>> =
            self.ring.0.vars.iter().map(|v| target.var_index(&v.name)).collect();
        let mut out = Series::zero(target);
        let mut exps = vec![0u32; target.nvars()];
        for (b, k, c) in self.terms() {
            exps.iter_mut().for_each(|e| *e = 0);
            for (v, &e) in self.ring.monomial(b).iter().enumerate() {
                if e == 0 {
                    continue;
                }
                match map[v] {
                    Some(w) => exps[w] = e,
                    None => {
                        return Err(SeriesError::RingMismatch(format!(
                            "variable {} missing from target ring",
                            self.ring.0.vars[v].name
                        )))
                    }
                }
            }
            out.set_coeff(&exps, k, c.clone());
        }
        Ok(out)
    }

    /// Multiplicative inverse; requires a nonzero constant term.
    pub fn inverse(&self) -> Result<Series, SeriesError> {
        let c0 = self.c[0].clone();
        if c0.is_zero() {
            return Err(SeriesError::SingularConstantTerm);
        }
        let c0inv = c0.inv()?;
        // Newton iteration x <- x (2 - a x)
        let two = Series::constant(&self.ring, Scalar::from_i64(2));
        let mut x = Series::constant(&self.ring, c0inv);
        for _ in 0..64 {
            let ax = self.mul(&x);
            let err = Series::one(&self.ring).sub(&ax);
            if err.is_zero() {
                return Ok(x);
            }
            x = x.mul(&two.sub(&ax));
        }
        Err(SeriesError::Malformed("inverse iteration did not converge".into()))
    }

    /// `exp(self)` for a series with zero constant term.
    pub fn exp(&self) -> Result<Series, SeriesError> {
        if !self.c[0].is_zero() {
            return Err(SeriesError::NonzeroConstantTerm { index: 0 });
        }
        let mut acc = Series::one(&self.ring);
        let mut term = Series::one(&self.ring);
        for k in 1.. {
            term = term.mul(self).scale(&Scalar::ratio(1, k));
            if term.is_zero() {
                break;
            }
            acc.add_assign(&term);
        }
        Ok(acc)
    }

    /// `log(self)` for a series with constant term one.
    pub fn log(&self) -> Result<Series, SeriesError> {
        if !self.c[0].is_one() {
            return Err(SeriesError::Malformed("log needs constant term 1".into()));
        }
        let g = self.sub(&Series::one(&self.ring));
        let mut acc = Series::zero(&self.ring);
        let mut pow = Series::one(&self.ring);
        for k in 1i64.. {
            pow = pow.mul(&g);
            if pow.is_zero() {
                break;
            }
            let sign = if k % 2 == 1 { 1 } else { -1 };
            acc.add_assign(&pow.scale(&Scalar::ratio(sign, k)));
        }
        Ok(acc)
    }

    /// Compose with a substitution of every base variable.
    pub fn substitute(&self, args: &[Series]) -> Result<Series, SeriesError> {
        let sub = Substitution::new(&self.ring, args)?;
        Ok(sub.apply(self))
    }

    /// Parse a polynomial expression in the ring's variables, e.g.
    /// `1 + 2*t1 - 1/2*q*u^2`.
    pub fn parse(ring: &Ring, text: &str) -> Result<Series, SeriesError> {
        let mut p = PolyParser { ring, src: text.as_bytes(), pos: 0 };
        let v = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(SeriesError::Malformed(format!("trailing input in {text:?}")));
        }
        Ok(v)
    }

    /// JSON form.
    pub fn to_json(&self) -> SeriesJson {
        SeriesJson {
            ring: self.ring.descriptor(),
            shape: None,
            terms: self
                .terms()
                .map(|(b, k, c)| {
                    let mut mono = self.ring.monomial(b).to_vec();
                    mono.push(k);
                    TermJson { mono, coeff: serde_json::Value::String(c.to_text()) }
                })
                .collect(),
        }
    }

    pub fn from_json(j: &SeriesJson) -> Result<Series, SeriesError> {
        let ring = Ring::from_descriptor(&j.ring)?;
        Series::from_terms(&ring, &j.ring, &j.terms)
    }

    /// Read terms laid out per `layout` into `ring`.
    pub fn from_terms(
        ring: &Ring,
        layout: &RingDescriptor,
        terms: &[TermJson],
    ) -> Result<Series, SeriesError> {
        let pos = term_layout(ring, layout)?;
        let mut s = Series::zero(ring);
        for t in terms {
            let (exps, k) = read_mono(ring, &pos, &t.mono)?;
            let text = t
                .coeff
                .as_str()
                .ok_or_else(|| SeriesError::Malformed("scalar coefficient must be a string".into()))?;
            let c = Scalar::parse(text)?;
            let cur = s.coeff(&exps, k);
            s.set_coeff(&exps, k, cur + c);
        }
        Ok(s)
    }
}

/// For each JSON exponent slot: `Some(var)` or `None` for `u`.
fn term_layout(ring: &Ring, layout: &RingDescriptor) -> Result<Vec<Option<usize>>, SeriesError> {
    layout
        .vars
        .iter()
        .map(|v| {
            if v.kind == "u" {
                Ok(None)
            } else {
                ring.var_index(&v.name)
                    .map(Some)
                    .ok_or_else(|| SeriesError::UnknownVariable(v.name.clone()))
            }
        })
        .collect()
}

fn read_mono(
    ring: &Ring,
    pos: &[Option<usize>],
    mono: &[u32],
) -> Result<(Vec<u32>, u32), SeriesError> {
    if mono.len() != pos.len() {
        return Err(SeriesError::Malformed(format!(
            "monomial has {} exponents, expected {}",
            mono.len(),
            pos.len()
        )));
    }
    let mut exps = vec![0; ring.nvars()];
    let mut k = 0;
    for (slot, &e) in pos.iter().zip(mono) {
        match slot {
            Some(v) => exps[*v] = e,
            None => k = e,
        }
    }
    Ok((exps, k))
}

fn mul_accumulate(
    out: &mut [Scalar],
    ring: &Ring,
    a: &[(u32, u32, &Scalar)],
    b: &[(u32, u32, &Scalar)],
) {
    let nu = ring.nu() as u32;
    let nb = ring.num_base_monomials();
    let table = &ring.0.mul_table;
    for &(b1, k1, x) in a {
        let row = &table[b1 as usize * nb..(b1 as usize + 1) * nb];
        for &(b2, k2, y) in b {
            let k = k1 + k2;
            if k >= nu {
                continue;
            }
            let b3 = row[b2 as usize];
            if b3 == NONE {
                continue;
            }
            let p = x * y;
            out[(b3 * nu + k) as usize] += &p;
        }
    }
}

/// Cached powers for substituting every base variable of a source ring by
/// series of a target ring. `u` maps to the target's `u`.
pub struct Substitution {
    source: Ring,
    target: Ring,
    powers: Vec<Option<Series>>,
}

impl Substitution {
    pub fn new(source: &Ring, args: &[Series]) -> Result<Substitution, SeriesError> {
        if args.len() != source.nvars() {
            return Err(SeriesError::RingMismatch(format!(
                "expected {} substitution arguments, got {}",
                source.nvars(),
                args.len()
            )));
        }
        let target = match args.first() {
            Some(a) => a.ring.clone(),
            None => source.clone(),
        };
        for (i, a) in args.iter().enumerate() {
            if a.ring != target {
                return Err(SeriesError::RingMismatch("arguments in different rings".into()));
            }
            if !a.c[0].is_zero() {
                return Err(SeriesError::NonzeroConstantTerm { index: i });
            }
        }
        let nb = source.num_base_monomials();
        let mut powers: Vec<Option<Series>> = vec![None; nb];
        powers[0] = Some(Series::one(&target));
        for b in 1..nb {
            let m = source.monomial(b);
            let v = m.iter().position(|&e| e > 0).unwrap();
            let parent = source.lower(v, b).unwrap();
            let p = powers[parent].as_ref().unwrap().mul(&args[v]);
            powers[b] = Some(p);
        }
        Ok(Substitution { source: source.clone(), target, powers })
    }

    pub fn target(&self) -> &Ring {
        &self.target
    }

    pub fn apply(&self, f: &Series) -> Series {
        assert!(f.ring == self.source, "series not in the substitution's source ring");
        let mut out = Series::zero(&self.target);
        let tnu = self.target.nu() as i64;
        for (b, k, c) in f.terms() {
            if k as i64 >= tnu {
                continue;
            }
            let p = self.powers[b].as_ref().unwrap();
            let shifted = if k == 0 { p.clone() } else { p.shift_u(k as i64) };
            out.add_assign(&shifted.scale(c));
        }
        out
    }

    pub fn apply_mat(&self, f: &MatSeries) -> MatSeries {
        MatSeries {
            ring: self.target.clone(),
            rows: f.rows,
            cols: f.cols,
            e: f.e.iter().map(|s| self.apply(s)).collect(),
        }
    }
}

/// Compositional inverse of a map `x -> phi(x)` of a ring to itself with
/// `phi(0) = 0` and invertible linear part.
pub fn compositional_inverse(phi: &[Series]) -> Result<Vec<Series>, SeriesError> {
    let n = phi.len();
    let ring = phi.first().map(|p| p.ring.clone()).ok_or_else(|| {
        SeriesError::Malformed("empty map".into())
    })?;
    if ring.nvars() != n {
        return Err(SeriesError::RingMismatch("map must have one component per variable".into()));
    }
    // linear part L and its inverse
    let mut lin = Mat::zeros(n, n);
    for (i, p) in phi.iter().enumerate() {
        if !p.c[0].is_zero() {
            return Err(SeriesError::NonzeroConstantTerm { index: i });
        }
        for j in 0..n {
            let b = ring.raise(j, 0).unwrap();
            lin[(i, j)] = p.at(b, 0).clone();
        }
    }
    let linv = lin.inverse().ok_or(SeriesError::SingularConstantTerm)?;
    let x: Vec<Series> = ring.vars().iter().map(|v| Series::var(&ring, &v.name).unwrap()).collect();
    // psi <- L^{-1} (x - N(psi)) where N = phi - L
    let mut psi: Vec<Series> = (0..n)
        .map(|i| {
            let mut s = Series::zero(&ring);
            for j in 0..n {
                s.add_assign(&x[j].scale(&linv[(i, j)]));
            }
            s
        })
        .collect();
    for _ in 0..=(ring.t_cap() + 1) {
        let composed: Vec<Series> = phi
            .iter()
            .map(|p| p.substitute(&psi))
            .collect::<Result<_, _>>()?;
        let resid: Vec<Series> = (0..n).map(|i| x[i].sub(&composed[i])).collect();
        if resid.iter().all(Series::is_zero) {
            return Ok(psi);
        }
        for i in 0..n {
            for j in 0..n {
                if !linv[(i, j)].is_zero() {
                    psi[i].add_assign(&resid[j].scale(&linv[(i, j)]));
                }
            }
        }
    }
    Err(SeriesError::Malformed("compositional inverse did not converge".into()))
}

// ---------------------------------------------------------------------------
// matrices of series

/// A matrix whose entries are series of one ring.
#[derive(Clone, PartialEq, Eq)]
pub struct MatSeries {
    ring: Ring,
    rows: usize,
    cols: usize,
    e: Vec<Series>,
}

impl fmt::Debug for MatSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MatSeries {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let s = &self[(i, j)];
                if !s.is_zero() {
                    writeln!(f, "  [{i},{j}] {s}")?;
                }
            }
        }
        Ok(())
    }
}

impl MatSeries {
    pub fn zeros(ring: &Ring, rows: usize, cols: usize) -> MatSeries {
        MatSeries { ring: ring.clone(), rows, cols, e: vec![Series::zero(ring); rows * cols] }
    }

    pub fn identity(ring: &Ring, n: usize) -> MatSeries {
        let mut m = MatSeries::zeros(ring, n, n);
        for i in 0..n {
            m[(i, i)] = Series::one(ring);
        }
        m
    }

    /// Constant matrix.
    pub fn from_mat(ring: &Ring, a: &Mat) -> MatSeries {
        MatSeries::from_mat_term(ring, a, &vec![0; ring.nvars()], 0)
    }

    /// `a * x^exps * u^k`.
    pub fn from_mat_term(ring: &Ring, a: &Mat, exps: &[u32], k: u32) -> MatSeries {
        let mut m = MatSeries::zeros(ring, a.rows(), a.cols());
        m.add_mat_term(a, exps, k);
        m
    }

    /// Add `a * x^exps * u^k` in place.
    pub fn add_mat_term(&mut self, a: &Mat, exps: &[u32], k: u32) {
        for i in 0..self.rows {
            for j in 0..self.cols {
                if !a[(i, j)].is_zero() {
                    let s = &mut self.e[i * self.cols + j];
                    let cur = s.coeff(exps, k);
                    s.set_coeff(exps, k, cur + &a[(i, j)]);
                }
            }
        }
    }

    pub fn from_entries(ring: &Ring, rows: usize, cols: usize, e: Vec<Series>) -> MatSeries {
        assert_eq!(e.len(), rows * cols);
        assert!(e.iter().all(|s| s.ring == *ring), "entries from different rings");
        MatSeries { ring: ring.clone(), rows, cols, e }
    }

    /// Scalar series times identity.
    pub fn scalar(s: &Series, n: usize) -> MatSeries {
        let mut m = MatSeries::zeros(&s.ring, n, n);
        for i in 0..n {
            m[(i, i)] = s.clone();
        }
        m
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[Series] {
        &self.e
    }

    pub fn is_zero(&self) -> bool {
        self.e.iter().all(Series::is_zero)
    }

    /// Coefficient matrix at base monomial index `b` and `u` power `k`.
    pub fn coeff_mat_at(&self, b: usize, k: u32) -> Mat {
        let mut m = Mat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self[(i, j)].coeff_at(b, k).clone();
            }
        }
        m
    }

    /// Coefficient matrix of `x^exps u^k`.
    pub fn coeff_mat(&self, exps: &[u32], k: u32) -> Mat {
        match self.ring.monomial_index(exps) {
            Some(b) if k <= self.ring.u_cap() => self.coeff_mat_at(b, k),
            _ => Mat::zeros(self.rows, self.cols),
        }
    }

    /// Constant term as a matrix.
    pub fn constant_mat(&self) -> Mat {
        self.coeff_mat_at(0, 0)
    }

    pub fn map(&self, f: impl Fn(&Series) -> Series) -> MatSeries {
        MatSeries {
            ring: self.ring.clone(),
            rows: self.rows,
            cols: self.cols,
            e: self.e.iter().map(f).collect(),
        }
    }

    pub fn add(&self, o: &MatSeries) -> MatSeries {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols), "shape mismatch");
        MatSeries {
            ring: self.ring.clone(),
            rows: self.rows,
            cols: self.cols,
            e: self.e.iter().zip(&o.e).map(|(a, b)| a.add(b)).collect(),
        }
    }

    pub fn sub(&self, o: &MatSeries) -> MatSeries {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols), "shape mismatch");
        MatSeries {
            ring: self.ring.clone(),
            rows: self.rows,
            cols: self.cols,
            e: self.e.iter().zip(&o.e).map(|(a, b)| a.sub(b)).collect(),
        }
    }

    pub fn neg(&self) -> MatSeries {
        self.map(Series::neg)
    }

    pub fn scale(&self, c: &Scalar) -> MatSeries {
        self.map(|s| s.scale(c))
    }

    /// Entrywise product with a scalar series.
    pub fn mul_series(&self, s: &Series) -> MatSeries {
        self.map(|x| x.mul(s))
    }

    /// Left product with a constant matrix.
    pub fn left_mul_const(&self, a: &Mat) -> MatSeries {
        assert_eq!(a.cols(), self.rows, "shape mismatch");
        let mut out = MatSeries::zeros(&self.ring, a.rows(), self.cols);
        for i in 0..a.rows() {
            for k in 0..a.cols() {
                if a[(i, k)].is_zero() {
                    continue;
                }
                for j in 0..self.cols {
                    let t = self[(k, j)].scale(&a[(i, k)]);
                    out[(i, j)].add_assign(&t);
                }
            }
        }
        out
    }

    /// Right product with a constant matrix.
    pub fn right_mul_const(&self, a: &Mat) -> MatSeries {
        assert_eq!(self.cols, a.rows(), "shape mismatch");
        let mut out = MatSeries::zeros(&self.ring, self.rows, a.cols());
        for i in 0..self.rows {
            for k in 0..self.cols {
                for j in 0..a.cols() {
                    if !a[(k, j)].is_zero() {
                        let t = self[(i, k)].scale(&a[(k, j)]);
                        out[(i, j)].add_assign(&t);
                    }
                }
            }
        }
        out
    }

    pub fn mul(&self, o: &MatSeries) -> MatSeries {
        assert_eq!(self.cols, o.rows, "shape mismatch in product");
        assert!(self.ring == o.ring, "matrices from different rings");
        let anz: Vec<Vec<(u32, u32, &Scalar)>> = self.e.iter().map(|s| s.nonzeros()).collect();
        let bnz: Vec<Vec<(u32, u32, &Scalar)>> = o.e.iter().map(|s| s.nonzeros()).collect();
        let mut out = MatSeries::zeros(&self.ring, self.rows, o.cols);
        for i in 0..self.rows {
            for j in 0..o.cols {
                let dst = &mut out.e[i * o.cols + j].c;
                for k in 0..self.cols {
                    let a = &anz[i * self.cols + k];
                    let b = &bnz[k * o.cols + j];
                    if !a.is_empty() && !b.is_empty() {
                        mul_accumulate(dst, &self.ring, a, b);
                    }
                }
            }
        }
        out
    }

    /// `self * o - o * self`.
    pub fn commutator(&self, o: &MatSeries) -> MatSeries {
        self.mul(o).sub(&o.mul(self))
    }

    pub fn derive(&self, v: usize) -> MatSeries {
        self.map(|s| s.derive(v))
    }

    pub fn frame_derive(&self, v: usize) -> MatSeries {
        self.map(|s| s.frame_derive(v))
    }

    pub fn derive_u(&self) -> MatSeries {
        self.map(Series::derive_u)
    }

    pub fn shift_u(&self, shift: i64) -> MatSeries {
        self.map(|s| s.shift_u(shift))
    }

    pub fn u_coeff(&self, k: u32) -> MatSeries {
        self.map(|s| s.u_coeff(k))
    }

    pub fn at_u_zero(&self) -> MatSeries {
        self.u_coeff(0)
    }

    pub fn truncate(&self, t_cap: u32, u_cap: u32) -> MatSeries {
        self.map(|s| s.truncate(t_cap, u_cap))
    }

    pub fn restrict_zero(&self, vars: &[usize]) -> MatSeries {
        self.map(|s| s.restrict_zero(vars))
    }

    pub fn depends_on(&self, v: usize) -> bool {
        self.e.iter().any(|s| s.depends_on(v))
    }

    pub fn depends_on_u(&self) -> bool {
        self.e.iter().any(Series::depends_on_u)
    }

    pub fn transpose(&self) -> MatSeries {
        let mut out = MatSeries::zeros(&self.ring, self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].clone();
            }
        }
        out
    }

    /// Apply to a column of series.
    pub fn mul_vec(&self, v: &[Series]) -> Vec<Series> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = Series::zero(&self.ring);
                for (j, x) in v.iter().enumerate() {
                    acc.add_assign(&self[(i, j)].mul(x));
                }
                acc
            })
            .collect()
    }

    pub fn col(&self, j: usize) -> Vec<Series> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn from_cols(ring: &Ring, cols: &[Vec<Series>]) -> MatSeries {
        let n = cols.first().map_or(0, |c| c.len());
        let mut m = MatSeries::zeros(ring, n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, x) in c.iter().enumerate() {
                m[(i, j)] = x.clone();
            }
        }
        m
    }

    /// Submatrix.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> MatSeries {
        let mut out = MatSeries::zeros(&self.ring, rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out[(a, b)] = self[(i, j)].clone();
            }
        }
        out
    }

    pub fn block_diag(ring: &Ring, blocks: &[MatSeries]) -> MatSeries {
        let n: usize = blocks.iter().map(|b| b.rows).sum();
        let mut out = MatSeries::zeros(ring, n, n);
        let mut o = 0;
        for b in blocks {
            for i in 0..b.rows {
                for j in 0..b.cols {
                    out[(o + i, o + j)] = b[(i, j)].clone();
                }
            }
            o += b.rows;
        }
        out
    }

    /// Coefficient of `x_v^l` entrywise.
    pub fn var_slice(&self, v: usize, l: u32) -> MatSeries {
        self.map(|s| s.var_slice(v, l))
    }

    /// Multiply every entry by the monomial with base index `b` and `u^k`.
    pub fn mul_monomial(&self, b: usize, k: u32) -> MatSeries {
        self.map(|s| s.mul_monomial(b, k))
    }

    /// Inverse; requires an invertible constant term.
    pub fn inverse(&self) -> Result<MatSeries, SeriesError> {
        assert_eq!(self.rows, self.cols, "inverse of non-square matrix");
        let c0 = self.constant_mat();
        let c0inv = c0.inverse().ok_or(SeriesError::SingularConstantTerm)?;
        let n = self.rows;
        let id = MatSeries::identity(&self.ring, n);
        let mut x = MatSeries::from_mat(&self.ring, &c0inv);
        for _ in 0..64 {
            let err = id.sub(&self.mul(&x));
            if err.is_zero() {
                return Ok(x);
            }
            x = x.add(&x.mul(&err));
        }
        Err(SeriesError::Malformed("inverse iteration did not converge".into()))
    }

    pub fn recast(&self, target: &Ring) -> Result<MatSeries, SeriesError> {
        Ok(MatSeries {
            ring: target.clone(),
            rows: self.rows,
            cols: self.cols,
            e: self.e.iter().map(|s| s.recast(target)).collect::<Result<_, _>>()?,
        })
    }

    pub fn substitute(&self, args: &[Series]) -> Result<MatSeries, SeriesError> {
        let sub = Substitution::new(&self.ring, args)?;
        Ok(sub.apply_mat(self))
    }

    /// Nonzero (base index, `u` power) keys in increasing order.
    pub fn support(&self) -> Vec<(usize, u32)> {
        let mut keys: Vec<(usize, u32)> =
            self.e.iter().flat_map(|s| s.terms().map(|(b, k, _)| (b, k))).collect();
        keys.sort();
        keys.dedup();
        keys
    }

    /// JSON form with matrix coefficients.
    pub fn to_json(&self) -> SeriesJson {
        SeriesJson {
            ring: self.ring.descriptor(),
            shape: Some([self.rows, self.cols]),
            terms: self.terms_json(),
        }
    }

    /// Terms with matrix coefficients, exponents ordered as the ring's
    /// descriptor.
    pub fn terms_json(&self) -> Vec<TermJson> {
        self.support()
            .into_iter()
            .map(|(b, k)| {
                let mut mono = self.ring.monomial(b).to_vec();
                mono.push(k);
                let m = self.coeff_mat_at(b, k);
                TermJson { mono, coeff: serde_json::to_value(m.to_text()).unwrap() }
            })
            .collect()
    }

    pub fn from_json(j: &SeriesJson) -> Result<MatSeries, SeriesError> {
        let ring = Ring::from_descriptor(&j.ring)?;
        let [r, c] = j
            .shape
            .ok_or_else(|| SeriesError::Malformed("matrix series needs a shape".into()))?;
        MatSeries::from_terms(&ring, &j.ring, r, c, &j.terms)
    }

    /// Read matrix terms laid out per `layout` into `ring`.
    pub fn from_terms(
        ring: &Ring,
        layout: &RingDescriptor,
        rows: usize,
        cols: usize,
        terms: &[TermJson],
    ) -> Result<MatSeries, SeriesError> {
        let pos = term_layout(ring, layout)?;
        let mut m = MatSeries::zeros(ring, rows, cols);
        for t in terms {
            let (exps, k) = read_mono(ring, &pos, &t.mono)?;
            let text: Vec<Vec<String>> = serde_json::from_value(t.coeff.clone())
                .map_err(|e| SeriesError::Malformed(format!("matrix coefficient: {e}")))?;
            let a = Mat::from_text(&text)?;
            if a.rows() != rows || a.cols() != cols {
                return Err(SeriesError::Malformed("coefficient shape mismatch".into()));
            }
            m.add_mat_term(&a, &exps, k);
        }
        Ok(m)
    }
}

impl std::ops::Index<(usize, usize)> for MatSeries {
    type Output = Series;
    fn index(&self, (i, j): (usize, usize)) -> &Series {
        &self.e[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for MatSeries {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Series {
        &mut self.e[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// polynomial text parser

struct PolyParser<'a> {
    ring: &'a Ring,
    src: &'a [u8],
    pos: usize,
}

impl PolyParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn err(&self, what: &str) -> SeriesError {
        SeriesError::Malformed(format!(
            "{what} at byte {} in {:?}",
            self.pos,
            String::from_utf8_lossy(self.src)
        ))
    }

    fn expr(&mut self) -> Result<Series, SeriesError> {
        let mut acc = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                self.term()?.neg()
            }
            Some(b'+') => {
                self.pos += 1;
                self.term()?
            }
            _ => self.term()?,
        };
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = acc.add(&self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = acc.sub(&self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Series, SeriesError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc = acc.mul(&self.factor()?);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let d = self.factor()?;
                    acc = acc.mul(&d.inverse()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Series, SeriesError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let e: u32 = std::str::from_utf8(&self.src[start..self.pos])
                .unwrap()
                .parse()
                .map_err(|_| self.err("expected exponent"))?;
            let mut acc = Series::one(self.ring);
            for _ in 0..e {
                acc = acc.mul(&base);
            }
            return Ok(acc);
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Series, SeriesError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(b'[') => {
                // bracketed scalar literal, e.g. [s^-1 + 2] or [zeta_3]
                let start = self.pos + 1;
                let end = start
                    + self.src[start..].iter().position(|&c| c == b']').ok_or_else(|| self.err("expected ']'"))?;
                self.pos = end + 1;
                let text = std::str::from_utf8(&self.src[start..end]).unwrap();
                Ok(Series::constant(self.ring, Scalar::parse(text)?))
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                Ok(Series::constant(self.ring, Scalar::parse(text)?))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                if let Some(m) = name.strip_prefix("zeta_") {
                    let text = format!("zeta_{m}");
                    return Ok(Series::constant(self.ring, Scalar::parse(&text)?));
                }
                Series::var(self.ring, name)
            }
            _ => Err(self.err("unexpected token")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_t(t_cap: u32, u_cap: u32) -> Ring {
        Ring::new(vec![Var::plain("t")], "u", t_cap, u_cap)
    }

    #[test]
    fn bracketed_scalar_literal() {
        let r = ring_t(2, 0);
        let f = Series::parse(&r, "[s^-1]*t + 2").unwrap();
        assert_eq!(f.coeff(&[1], 0).laurent_valuation(), Some(-1));
    }

    #[test]
    fn monomial_order_is_graded() {
        let r = Ring::new(vec![Var::log("q"), Var::plain("t")], "u", 2, 0);
        let monos: Vec<Vec<u32>> = (0..r.num_base_monomials()).map(|b| r.monomial(b).to_vec()).collect();
        assert_eq!(
            monos,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
    }

    #[test]
    fn geometric_series_substitution() {
        let rx = Ring::new(vec![Var::plain("x")], "u", 3, 0);
        let f = Series::parse(&rx, "1 + x + x^2 + x^3").unwrap();
        let rt = ring_t(3, 0);
        let t = Series::var(&rt, "t").unwrap();
        let g = f.substitute(&[t]).unwrap();
        assert_eq!(g, Series::parse(&rt, "1 + t + t^2 + t^3").unwrap());
    }

    #[test]
    fn substitution_rejects_constant_term() {
        let rx = Ring::new(vec![Var::plain("x")], "u", 3, 0);
        let f = Series::parse(&rx, "x").unwrap();
        let rt = ring_t(3, 0);
        let arg = Series::parse(&rt, "1 + t").unwrap();
        assert_eq!(
            f.substitute(&[arg]),
            Err(SeriesError::NonzeroConstantTerm { index: 0 })
        );
    }

    #[test]
    fn inverse_and_exp_log() {
        let r = Ring::new(vec![Var::plain("t"), Var::plain("s")], "u", 5, 3);
        let a = Series::parse(&r, "2 + t - 3*s*u + u^2").unwrap();
        let inv = a.inverse().unwrap();
        assert_eq!(a.mul(&inv), Series::one(&r));
        let g = Series::parse(&r, "t + s^2 - u").unwrap();
        assert_eq!(g.exp().unwrap().log().unwrap(), g);
        assert_eq!(Series::parse(&r, "t").unwrap().inverse(), Err(SeriesError::SingularConstantTerm));
    }

    #[test]
    fn json_round_trip() {
        let r = Ring::new(vec![Var::log("q"), Var::plain("t")], "u", 3, 2);
        let s = Series::parse(&r, "1/2 + q*t - 3*u^2*t + zeta_3*q^2").unwrap();
        let j = serde_json::to_string(&s.to_json()).unwrap();
        let back = Series::from_json(&serde_json::from_str(&j).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn matrix_inverse() {
        let r = ring_t(4, 3);
        let mut m = MatSeries::identity(&r, 2);
        m[(0, 1)] = Series::parse(&r, "t + u").unwrap();
        m[(1, 0)] = Series::parse(&r, "t*u").unwrap();
        m[(1, 1)] = Series::parse(&r, "3 + t^2").unwrap();
        let inv = m.inverse().unwrap();
        assert_eq!(m.mul(&inv), MatSeries::identity(&r, 2));
    }

    #[test]
    fn compositional_inverse_of_exp() {
        let r = ring_t(6, 0);
        let phi = Series::parse(&r, "t").unwrap().exp().unwrap().sub(&Series::one(&r));
        let psi = compositional_inverse(&[phi.clone()]).unwrap();
        let log1p = Series::parse(&r, "1 + t").unwrap().log().unwrap();
        assert_eq!(psi[0], log1p);
    }
}
