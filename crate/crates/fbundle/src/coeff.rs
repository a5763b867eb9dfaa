//! Exact scalars: rationals, cyclotomic fields and truncated Laurent series.
//!
//! A [`Scalar`] carries its field at runtime. Rationals mix freely with every
//! other field, so zero and one are canonical. Two cyclotomic values with
//! different orders cannot be combined and yield [`CoeffError::MixedFields`].
//! Laurent series in `s` carry an absolute truncation cap: terms `s^k` with
//! `k >= cap` are dropped.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::{Arc, Mutex, OnceLock};

/// Cap used for Laurent scalars parsed without an explicit `O(s^N)` term.
pub const DEFAULT_LAURENT_CAP: i64 = 32;

/// Errors raised by scalar arithmetic and parsing.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoeffError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("mixed coefficient fields: {0} and {1}")]
    MixedFields(String, String),
    #[error("cannot parse scalar: {0}")]
    Parse(String),
}

/// Runtime description of the field a scalar lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Rational,
    /// `Q(zeta_m)`.
    Cyclotomic(u32),
    /// Truncated Laurent series in `s` over `Q` or `Q(zeta_m)`.
    Laurent { cyclotomic: Option<u32>, cap: i64 },
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Rational => write!(f, "Q"),
            Field::Cyclotomic(m) => write!(f, "Q(zeta_{m})"),
            Field::Laurent { cyclotomic: None, cap } => write!(f, "Q((s)) mod s^{cap}"),
            Field::Laurent { cyclotomic: Some(m), cap } => {
                write!(f, "Q(zeta_{m})((s)) mod s^{cap}")
            }
        }
    }
}

/// Element of `Q(zeta_m)` stored as a polynomial reduced modulo the m-th
/// cyclotomic polynomial. Always of degree at least one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cyclo {
    order: u32,
    coeffs: Vec<BigRational>,
}

/// Truncated Laurent series `sum_i coeffs[i] s^(start+i) + O(s^cap)`.
/// Coefficients are rationals or cyclotomic values; the first and last are
/// nonzero.
#[derive(Debug, Clone)]
pub struct Laurent {
    start: i64,
    coeffs: Vec<Scalar>,
    cap: i64,
}

/// An exact scalar.
#[derive(Debug, Clone)]
pub enum Scalar {
    Rat(BigRational),
    Cyc(Cyclo),
    Laurent(Laurent),
}

impl PartialEq for Laurent {
    fn eq(&self, other: &Self) -> bool {
        self.start == other.start && self.coeffs == other.coeffs
    }
}
impl Eq for Laurent {}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => a == b,
            (Scalar::Cyc(a), Scalar::Cyc(b)) => a == b,
            (Scalar::Laurent(a), Scalar::Laurent(b)) => a == b,
            _ => false,
        }
    }
}
impl Eq for Scalar {}

impl Default for Scalar {
    fn default() -> Self {
        Scalar::zero()
    }
}

// ---------------------------------------------------------------------------
// cyclotomic polynomials

fn cyclotomic_cache() -> &'static Mutex<HashMap<u32, Arc<Vec<BigInt>>>> {
    static CACHE: OnceLock<Mutex<HashMap<u32, Arc<Vec<BigInt>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Integer coefficients (low to high) of the m-th cyclotomic polynomial.
pub fn cyclotomic_polynomial(order: u32) -> Arc<Vec<BigInt>> {
    assert!(order >= 1, "cyclotomic order must be positive");
    if let Some(p) = cyclotomic_cache().lock().unwrap().get(&order) {
        return p.clone();
    }
    // x^m - 1 divided by every proper divisor's cyclotomic polynomial
    let mut num = vec![BigInt::zero(); order as usize + 1];
    num[0] = -BigInt::one();
    num[order as usize] = BigInt::one();
    for d in 1..order {
        if order % d == 0 {
            let div = cyclotomic_polynomial(d);
            num = exact_monic_division(&num, &div);
        }
    }
    let arc = Arc::new(num);
    cyclotomic_cache()
        .lock()
        .unwrap()
        .insert(order, arc.clone());
    arc
}

fn exact_monic_division(num: &[BigInt], den: &[BigInt]) -> Vec<BigInt> {
    let dn = den.len() - 1;
    let mut rem = num.to_vec();
    let qlen = num.len() - dn;
    let mut quot = vec![BigInt::zero(); qlen];
    for i in (0..qlen).rev() {
        let c = rem[i + dn].clone();
        if c.is_zero() {
            continue;
        }
        for (k, dk) in den.iter().enumerate() {
            rem[i + k] -= &c * dk;
        }
        quot[i] = c;
    }
    debug_assert!(rem.iter().all(|r| r.is_zero()));
    quot
}

/// Euler totient, the degree of `Q(zeta_m)` over `Q`.
pub fn totient(order: u32) -> usize {
    cyclotomic_polynomial(order).len() - 1
}

fn reduce_mod_cyclotomic(order: u32, mut p: Vec<BigRational>) -> Vec<BigRational> {
    let phi = cyclotomic_polynomial(order);
    let d = phi.len() - 1;
    if p.len() > d {
        for i in (d..p.len()).rev() {
            let c = std::mem::take(&mut p[i]);
            if c.is_zero() {
                continue;
            }
            for k in 0..d {
                if !phi[k].is_zero() {
                    p[i - d + k] -= &c * BigRational::from_integer(phi[k].clone());
                }
            }
        }
        p.truncate(d);
    }
    trim_poly(&mut p);
    p
}

fn trim_poly(p: &mut Vec<BigRational>) {
    while p.last().is_some_and(|c| c.is_zero()) {
        p.pop();
    }
}

fn poly_mul(a: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![BigRational::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            if !y.is_zero() {
                out[i + j] += x * y;
            }
        }
    }
    out
}

fn poly_sub(a: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    let n = a.len().max(b.len());
    let mut out = vec![BigRational::zero(); n];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] -= y;
    }
    trim_poly(&mut out);
    out
}

fn poly_divrem(a: &[BigRational], b: &[BigRational]) -> (Vec<BigRational>, Vec<BigRational>) {
    let mut rem = a.to_vec();
    trim_poly(&mut rem);
    let db = b.len() - 1;
    if rem.len() < b.len() {
        return (Vec::new(), rem);
    }
    let lead = b[db].clone();
    let mut quot = vec![BigRational::zero(); rem.len() - db];
    for i in (0..quot.len()).rev() {
        let c = &rem[i + db] / &lead;
        if c.is_zero() {
            continue;
        }
        for (k, bk) in b.iter().enumerate() {
            rem[i + k] -= &c * bk;
        }
        quot[i] = c;
    }
    rem.truncate(db);
    trim_poly(&mut rem);
    trim_poly(&mut quot);
    (quot, rem)
}

impl Cyclo {
    /// Cyclotomic order `m`.
    pub fn order(&self) -> u32 {
        self.order
    }

    /// Coefficients in the power basis `1, zeta, zeta^2, ...`.
    pub fn coeffs(&self) -> &[BigRational] {
        &self.coeffs
    }

    fn inverse(&self) -> Scalar {
        // extended Euclid: find a with a * self == 1 mod phi
        let phi: Vec<BigRational> = cyclotomic_polynomial(self.order)
            .iter()
            .map(|c| BigRational::from_integer(c.clone()))
            .collect();
        let (mut r0, mut r1) = (phi, self.coeffs.clone());
        let (mut s0, mut s1): (Vec<BigRational>, Vec<BigRational>) =
            (Vec::new(), vec![BigRational::one()]);
        while !r1.is_empty() {
            let (q, r) = poly_divrem(&r0, &r1);
            let s2 = poly_sub(&s0, &poly_mul(&q, &s1));
            r0 = std::mem::replace(&mut r1, r);
            s0 = std::mem::replace(&mut s1, s2);
        }
        // r0 is a nonzero constant because phi is irreducible
        let c = r0[0].clone();
        let inv: Vec<BigRational> = s0.into_iter().map(|x| x / &c).collect();
        Scalar::from_cyclo_poly(self.order, inv)
    }
}

// ---------------------------------------------------------------------------
// constructors and queries

impl Scalar {
    pub fn zero() -> Scalar {
        Scalar::Rat(BigRational::zero())
    }

    pub fn one() -> Scalar {
        Scalar::Rat(BigRational::one())
    }

    pub fn from_i64(n: i64) -> Scalar {
        Scalar::Rat(BigRational::from_integer(BigInt::from(n)))
    }

    /// The rational `num/den`; panics when `den == 0`.
    pub fn ratio(num: i64, den: i64) -> Scalar {
        Scalar::Rat(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_rational(r: BigRational) -> Scalar {
        Scalar::Rat(r)
    }

    /// `zeta_m^k` for a primitive m-th root of unity.
    pub fn zeta(order: u32, power: i64) -> Scalar {
        let k = power.rem_euclid(order as i64) as usize;
        let mut p = vec![BigRational::zero(); k + 1];
        p[k] = BigRational::one();
        Scalar::from_cyclo_poly(order, p)
    }

    /// Element of `Q(zeta_m)` from power-basis coefficients (any length).
    pub fn from_cyclo_poly(order: u32, coeffs: Vec<BigRational>) -> Scalar {
        let p = reduce_mod_cyclotomic(order, coeffs);
        match p.len() {
            0 => Scalar::zero(),
            1 => Scalar::Rat(p.into_iter().next().unwrap()),
            _ => Scalar::Cyc(Cyclo { order, coeffs: p }),
        }
    }

    /// `s^k` truncated at `cap`.
    pub fn s_power(power: i64, cap: i64) -> Scalar {
        Scalar::from_laurent_terms(power, vec![Scalar::one()], cap)
    }

    /// Laurent series `sum_i coeffs[i] s^(start+i) + O(s^cap)`.
    pub fn from_laurent_terms(start: i64, coeffs: Vec<Scalar>, cap: i64) -> Scalar {
        normalize_laurent(start, coeffs, cap)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Scalar::Rat(r) if r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Scalar::Rat(r) if r.is_one())
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        match self {
            Scalar::Rat(r) => Some(r),
            _ => None,
        }
    }

    /// The value as an `i64` when it is an integer that fits.
    pub fn to_i64(&self) -> Option<i64> {
        match self {
            Scalar::Rat(r) if r.is_integer() => r.to_integer().to_i64(),
            _ => None,
        }
    }

    pub fn field(&self) -> Field {
        match self {
            Scalar::Rat(_) => Field::Rational,
            Scalar::Cyc(c) => Field::Cyclotomic(c.order),
            Scalar::Laurent(l) => Field::Laurent {
                cyclotomic: l.coeffs.iter().find_map(|c| match c {
                    Scalar::Cyc(z) => Some(z.order),
                    _ => None,
                }),
                cap: l.cap,
            },
        }
    }

    /// Additive `s`-adic valuation: `None` for zero, `Some(0)` for nonzero
    /// constants.
    pub fn laurent_valuation(&self) -> Option<i64> {
        match self {
            Scalar::Laurent(l) => Some(l.start),
            s if s.is_zero() => None,
            _ => Some(0),
        }
    }

    /// Coefficient of `s^k` (the value itself at `k == 0` for constants).
    pub fn laurent_coeff(&self, k: i64) -> Scalar {
        match self {
            Scalar::Laurent(l) => {
                let i = k - l.start;
                if i >= 0 && (i as usize) < l.coeffs.len() {
                    l.coeffs[i as usize].clone()
                } else {
                    Scalar::zero()
                }
            }
            s if k == 0 => s.clone(),
            _ => Scalar::zero(),
        }
    }

    /// Truncation cap for Laurent values, `None` otherwise.
    pub fn laurent_cap(&self) -> Option<i64> {
        match self {
            Scalar::Laurent(l) => Some(l.cap),
            _ => None,
        }
    }

    pub fn checked_add(&self, other: &Scalar) -> Result<Scalar, CoeffError> {
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => Ok(Scalar::Rat(a + b)),
            (Scalar::Rat(a), Scalar::Cyc(c)) | (Scalar::Cyc(c), Scalar::Rat(a)) => {
                let mut p = c.coeffs.clone();
                p[0] += a;
                Ok(Scalar::from_cyclo_poly(c.order, p))
            }
            (Scalar::Cyc(x), Scalar::Cyc(y)) => {
                if x.order != y.order {
                    return Err(mixed(self, other));
                }
                let n = x.coeffs.len().max(y.coeffs.len());
                let mut p = vec![BigRational::zero(); n];
                for (i, c) in x.coeffs.iter().enumerate() {
                    p[i] += c;
                }
                for (i, c) in y.coeffs.iter().enumerate() {
                    p[i] += c;
                }
                Ok(Scalar::from_cyclo_poly(x.order, p))
            }
            _ => laurent_add(self, other),
        }
    }

    pub fn checked_sub(&self, other: &Scalar) -> Result<Scalar, CoeffError> {
        self.checked_add(&other.neg_ref())
    }

    pub fn checked_mul(&self, other: &Scalar) -> Result<Scalar, CoeffError> {
        if self.is_zero() || other.is_zero() {
            // still reject incompatible fields
            check_compatible(self, other)?;
            return Ok(Scalar::zero());
        }
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => Ok(Scalar::Rat(a * b)),
            (Scalar::Rat(a), Scalar::Cyc(c)) | (Scalar::Cyc(c), Scalar::Rat(a)) => Ok(Scalar::Cyc(
                Cyclo { order: c.order, coeffs: c.coeffs.iter().map(|x| x * a).collect() },
            )),
            (Scalar::Cyc(x), Scalar::Cyc(y)) => {
                if x.order != y.order {
                    return Err(mixed(self, other));
                }
                Ok(Scalar::from_cyclo_poly(x.order, poly_mul(&x.coeffs, &y.coeffs)))
            }
            _ => laurent_mul(self, other),
        }
    }

    pub fn checked_div(&self, other: &Scalar) -> Result<Scalar, CoeffError> {
        let inv = other.inv()?;
        self.checked_mul(&inv)
    }

    /// Multiplicative inverse; Laurent inverses are truncated at the cap.
    pub fn inv(&self) -> Result<Scalar, CoeffError> {
        match self {
            Scalar::Rat(r) => {
                if r.is_zero() {
                    Err(CoeffError::DivisionByZero)
                } else {
                    Ok(Scalar::Rat(r.recip()))
                }
            }
            Scalar::Cyc(c) => Ok(c.inverse()),
            Scalar::Laurent(l) => laurent_inverse(l),
        }
    }

    fn neg_ref(&self) -> Scalar {
        match self {
            Scalar::Rat(r) => Scalar::Rat(-r),
            Scalar::Cyc(c) => Scalar::Cyc(Cyclo {
                order: c.order,
                coeffs: c.coeffs.iter().map(|x| -x).collect(),
            }),
            Scalar::Laurent(l) => Scalar::Laurent(Laurent {
                start: l.start,
                coeffs: l.coeffs.iter().map(|c| c.neg_ref()).collect(),
                cap: l.cap,
            }),
        }
    }

    /// Integer power (negative powers invert).
    pub fn pow(&self, e: i64) -> Result<Scalar, CoeffError> {
        let base = if e < 0 { self.inv()? } else { self.clone() };
        let mut n = e.unsigned_abs();
        let mut acc = Scalar::one();
        let mut sq = base;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.checked_mul(&sq)?;
            }
            n >>= 1;
            if n > 0 {
                sq = sq.checked_mul(&sq)?;
            }
        }
        Ok(acc)
    }

    /// Re-truncate a Laurent value at a new cap (no-op for constants).
    pub fn truncate_laurent(&self, cap: i64) -> Scalar {
        match self {
            Scalar::Laurent(l) => normalize_laurent(l.start, l.coeffs.clone(), cap.min(l.cap)),
            s => s.clone(),
        }
    }

    /// Canonical text form: `p/q`, `zeta_m` polynomials or `c*s^k` sums.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    /// Parse the text form produced by [`Scalar::to_text`].
    pub fn parse(text: &str) -> Result<Scalar, CoeffError> {
        Scalar::parse_with_cap(text, DEFAULT_LAURENT_CAP)
    }

    /// Parse, using `default_cap` for Laurent values without an `O(s^N)` term.
    pub fn parse_with_cap(text: &str, default_cap: i64) -> Result<Scalar, CoeffError> {
        let mut p = Parser { src: text.as_bytes(), pos: 0, cap: default_cap, explicit_cap: None };
        // an explicit O(s^N) term fixes the cap for the whole expression
        if let Some(n) = find_order_term(text)? {
            p.cap = n;
            p.explicit_cap = Some(n);
        }
        let v = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(CoeffError::Parse(format!(
                "unexpected trailing input at byte {} in {:?}",
                p.pos, text
            )));
        }
        Ok(match p.explicit_cap {
            Some(cap) => match v {
                Scalar::Laurent(l) => normalize_laurent(l.start, l.coeffs, cap),
                other => other,
            },
            None => v,
        })
    }
}

fn mixed(a: &Scalar, b: &Scalar) -> CoeffError {
    CoeffError::MixedFields(a.field().to_string(), b.field().to_string())
}

fn cyclo_order(s: &Scalar) -> Option<u32> {
    match s {
        Scalar::Rat(_) => None,
        Scalar::Cyc(c) => Some(c.order),
        Scalar::Laurent(l) => l.coeffs.iter().find_map(cyclo_order),
    }
}

fn check_compatible(a: &Scalar, b: &Scalar) -> Result<(), CoeffError> {
    match (cyclo_order(a), cyclo_order(b)) {
        (Some(x), Some(y)) if x != y => Err(mixed(a, b)),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Laurent arithmetic

fn normalize_laurent(start: i64, mut coeffs: Vec<Scalar>, cap: i64) -> Scalar {
    // drop terms at or beyond the cap
    let keep = (cap - start).max(0);
    if (coeffs.len() as i64) > keep {
        coeffs.truncate(keep as usize);
    }
    while coeffs.last().is_some_and(|c| c.is_zero()) {
        coeffs.pop();
    }
    let lead = coeffs.iter().position(|c| !c.is_zero());
    let Some(lead) = lead else {
        return Scalar::zero();
    };
    let start = start + lead as i64;
    coeffs.drain(..lead);
    if start == 0 && coeffs.len() == 1 {
        return coeffs.pop().unwrap();
    }
    Scalar::Laurent(Laurent { start, coeffs, cap })
}

/// View any scalar as `(start, coeffs, cap)`; constants have an infinite cap.
fn laurent_view(s: &Scalar) -> (i64, Vec<Scalar>, i64) {
    match s {
        Scalar::Laurent(l) => (l.start, l.coeffs.clone(), l.cap),
        c if c.is_zero() => (0, Vec::new(), i64::MAX),
        c => (0, vec![c.clone()], i64::MAX),
    }
}

fn laurent_add(a: &Scalar, b: &Scalar) -> Result<Scalar, CoeffError> {
    check_compatible(a, b)?;
    let (sa, ca, capa) = laurent_view(a);
    let (sb, cb, capb) = laurent_view(b);
    let cap = capa.min(capb);
    if ca.is_empty() {
        return Ok(normalize_laurent(sb, cb, cap));
    }
    if cb.is_empty() {
        return Ok(normalize_laurent(sa, ca, cap));
    }
    let start = sa.min(sb);
    let end = (sa + ca.len() as i64).max(sb + cb.len() as i64).min(cap.max(start));
    let mut out = vec![Scalar::zero(); (end - start).max(0) as usize];
    for (i, c) in ca.iter().enumerate() {
        let k = (sa - start) as usize + i;
        if k < out.len() {
            out[k] = out[k].checked_add(c)?;
        }
    }
    for (i, c) in cb.iter().enumerate() {
        let k = (sb - start) as usize + i;
        if k < out.len() {
            out[k] = out[k].checked_add(c)?;
        }
    }
    Ok(normalize_laurent(start, out, cap))
}

fn laurent_mul(a: &Scalar, b: &Scalar) -> Result<Scalar, CoeffError> {
    check_compatible(a, b)?;
    let (sa, ca, capa) = laurent_view(a);
    let (sb, cb, capb) = laurent_view(b);
    let cap = capa.min(capb);
    let start = sa + sb;
    let full = ca.len() + cb.len() - 1;
    let len = ((cap - start).max(0) as usize).min(full);
    let mut out = vec![Scalar::zero(); len];
    for (i, x) in ca.iter().enumerate() {
        if i >= len {
            break;
        }
        for (j, y) in cb.iter().enumerate() {
            if i + j >= len {
                break;
            }
            out[i + j] = out[i + j].checked_add(&x.checked_mul(y)?)?;
        }
    }
    Ok(normalize_laurent(start, out, cap))
}

fn laurent_inverse(l: &Laurent) -> Result<Scalar, CoeffError> {
    // s^start * (c0 + c1 s + ...) inverted term by term
    let start = -l.start;
    let len = (l.cap - start).max(0) as usize;
    let c0inv = l.coeffs[0].inv()?;
    let mut out: Vec<Scalar> = Vec::with_capacity(len);
    for k in 0..len {
        if k == 0 {
            out.push(c0inv.clone());
            continue;
        }
        let mut acc = Scalar::zero();
        for j in 1..=k.min(l.coeffs.len() - 1) {
            acc = acc.checked_add(&l.coeffs[j].checked_mul(&out[k - j])?)?;
        }
        out.push(acc.neg_ref().checked_mul(&c0inv)?);
    }
    Ok(normalize_laurent(start, out, l.cap))
}

// ---------------------------------------------------------------------------
// operator sugar; panics on incompatible fields or division by zero

macro_rules! binop {
    ($tr:ident, $m:ident, $checked:ident) => {
        impl $tr<&Scalar> for &Scalar {
            type Output = Scalar;
            fn $m(self, rhs: &Scalar) -> Scalar {
                self.$checked(rhs).expect("scalar arithmetic")
            }
        }
        impl $tr<Scalar> for Scalar {
            type Output = Scalar;
            fn $m(self, rhs: Scalar) -> Scalar {
                (&self).$checked(&rhs).expect("scalar arithmetic")
            }
        }
        impl $tr<&Scalar> for Scalar {
            type Output = Scalar;
            fn $m(self, rhs: &Scalar) -> Scalar {
                (&self).$checked(rhs).expect("scalar arithmetic")
            }
        }
    };
}
binop!(Add, add, checked_add);
binop!(Sub, sub, checked_sub);
binop!(Mul, mul, checked_mul);
binop!(Div, div, checked_div);

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        self.neg_ref()
    }
}
impl Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        self.neg_ref()
    }
}

impl AddAssign<&Scalar> for Scalar {
    fn add_assign(&mut self, rhs: &Scalar) {
        // in-place fast path for rationals
        if let (Scalar::Rat(a), Scalar::Rat(b)) = (&mut *self, rhs) {
            *a += b;
            return;
        }
        *self = self.checked_add(rhs).expect("scalar arithmetic");
    }
}
impl SubAssign<&Scalar> for Scalar {
    fn sub_assign(&mut self, rhs: &Scalar) {
        if let (Scalar::Rat(a), Scalar::Rat(b)) = (&mut *self, rhs) {
            *a -= b;
            return;
        }
        *self = self.checked_sub(rhs).expect("scalar arithmetic");
    }
}
impl MulAssign<&Scalar> for Scalar {
    fn mul_assign(&mut self, rhs: &Scalar) {
        *self = self.checked_mul(rhs).expect("scalar arithmetic");
    }
}

impl From<i64> for Scalar {
    fn from(n: i64) -> Self {
        Scalar::from_i64(n)
    }
}
impl From<BigRational> for Scalar {
    fn from(r: BigRational) -> Self {
        Scalar::Rat(r)
    }
}

// ---------------------------------------------------------------------------
// text form

fn write_signed_terms(f: &mut fmt::Formatter<'_>, terms: &[(BigRational, String)]) -> fmt::Result {
    for (i, (c, atom)) in terms.iter().enumerate() {
        let neg = c.is_negative();
        let mag = c.abs();
        if i == 0 {
            if neg {
                write!(f, "-")?;
            }
        } else {
            write!(f, "{}", if neg { " - " } else { " + " })?;
        }
        if atom.is_empty() {
            write!(f, "{mag}")?;
        } else if mag.is_one() {
            write!(f, "{atom}")?;
        } else {
            write!(f, "{mag}*{atom}")?;
        }
    }
    Ok(())
}

impl fmt::Display for Cyclo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<(BigRational, String)> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| {
                let atom = match i {
                    0 => String::new(),
                    1 => format!("zeta_{}", self.order),
                    _ => format!("zeta_{}^{}", self.order, i),
                };
                (c.clone(), atom)
            })
            .collect();
        write_signed_terms(f, &terms)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Rat(r) => write!(f, "{r}"),
            Scalar::Cyc(c) => write!(f, "{c}"),
            Scalar::Laurent(l) => {
                let mut first = true;
                for (i, c) in l.coeffs.iter().enumerate() {
                    if c.is_zero() {
                        continue;
                    }
                    let k = l.start + i as i64;
                    match c {
                        Scalar::Rat(r) => {
                            let neg = r.is_negative();
                            if first {
                                if neg {
                                    write!(f, "-")?;
                                }
                            } else {
                                write!(f, "{}", if neg { " - " } else { " + " })?;
                            }
                            write!(f, "{}*s^{}", r.abs(), k)?;
                        }
                        other => {
                            if !first {
                                write!(f, " + ")?;
                            }
                            write!(f, "({other})*s^{k}")?;
                        }
                    }
                    first = false;
                }
                write!(f, " + O(s^{})", l.cap)
            }
        }
    }
}

fn find_order_term(text: &str) -> Result<Option<i64>, CoeffError> {
    let Some(at) = text.find("O(") else {
        return Ok(None);
    };
    let rest = &text[at + 2..];
    let close = rest
        .find(')')
        .ok_or_else(|| CoeffError::Parse(format!("unclosed O( in {text:?}")))?;
    let inner: String = rest[..close].chars().filter(|c| !c.is_whitespace()).collect();
    let exp = inner
        .strip_prefix("s^")
        .ok_or_else(|| CoeffError::Parse(format!("expected O(s^N) in {text:?}")))?;
    exp.parse::<i64>()
        .map(Some)
        .map_err(|_| CoeffError::Parse(format!("bad order term in {text:?}")))
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    cap: i64,
    explicit_cap: Option<i64>,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn err(&self, what: &str) -> CoeffError {
        CoeffError::Parse(format!(
            "{what} at byte {} in {:?}",
            self.pos,
            String::from_utf8_lossy(self.src)
        ))
    }

    fn expr(&mut self) -> Result<Scalar, CoeffError> {
        let mut acc = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                self.term()?.neg_ref()
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
                    let t = self.term()?;
                    acc = acc.checked_add(&t)?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    let t = self.term()?;
                    acc = acc.checked_sub(&t)?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Scalar, CoeffError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let f = self.factor()?;
                    acc = acc.checked_mul(&f)?;
                }
                Some(b'/') => {
                    self.pos += 1;
                    let f = self.factor()?;
                    acc = acc.checked_div(&f)?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Scalar, CoeffError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let e = self.signed_int()?;
            return base.pow(e);
        }
        Ok(base)
    }

    fn signed_int(&mut self) -> Result<i64, CoeffError> {
        let neg = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                true
            }
            Some(b'+') => {
                self.pos += 1;
                false
            }
            _ => false,
        };
        let n = self.digits()?;
        let v = n.to_i64().ok_or_else(|| self.err("exponent too large"))?;
        Ok(if neg { -v } else { v })
    }

    fn digits(&mut self) -> Result<BigInt, CoeffError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected digits"));
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        Ok(s.parse::<BigInt>().unwrap())
    }

    fn primary(&mut self) -> Result<Scalar, CoeffError> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() => Ok(Scalar::Rat(BigRational::from_integer(self.digits()?))),
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(b'O') => {
                // the order term was already read; it contributes zero
                let close = self.src[self.pos..]
                    .iter()
                    .position(|&b| b == b')')
                    .ok_or_else(|| self.err("unclosed O("))?;
                self.pos += close + 1;
                Ok(Scalar::zero())
            }
            Some(b'z') => {
                let rest = &self.src[self.pos..];
                if !rest.starts_with(b"zeta_") {
                    return Err(self.err("unknown identifier"));
                }
                self.pos += 5;
                let m = self.digits()?;
                let m = m.to_u32().filter(|&m| m >= 1).ok_or_else(|| self.err("bad zeta order"))?;
                Ok(Scalar::zeta(m, 1))
            }
            Some(b's') => {
                self.pos += 1;
                Ok(Scalar::s_power(1, self.cap))
            }
            _ => Err(self.err("unexpected token")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Scalar {
        Scalar::ratio(n, d)
    }

    #[test]
    fn cyclotomic_polynomials_match_known_values() {
        let as_i64 = |m| -> Vec<i64> {
            cyclotomic_polynomial(m).iter().map(|c| c.to_i64().unwrap()).collect()
        };
        assert_eq!(as_i64(1), vec![-1, 1]);
        assert_eq!(as_i64(3), vec![1, 1, 1]);
        assert_eq!(as_i64(4), vec![1, 0, 1]);
        assert_eq!(as_i64(6), vec![1, -1, 1]);
        assert_eq!(as_i64(12), vec![1, 0, -1, 0, 1]);
        assert_eq!(totient(10), 4);
    }

    #[test]
    fn zeta_powers_wrap() {
        let z = Scalar::zeta(5, 1);
        assert_eq!(z.pow(5).unwrap(), Scalar::one());
        let sum = (0..5).fold(Scalar::zero(), |acc, k| acc + Scalar::zeta(5, k));
        assert!(sum.is_zero());
        assert_eq!(Scalar::zeta(4, 2), Scalar::from_i64(-1));
        assert_eq!(Scalar::zeta(6, -1), Scalar::zeta(6, 5));
    }

    #[test]
    fn cyclotomic_inverse() {
        let x = Scalar::from_i64(1) + Scalar::zeta(7, 2) * r(3, 2);
        let y = x.inv().unwrap();
        assert_eq!(&x * &y, Scalar::one());
    }

    #[test]
    fn mixed_fields_rejected() {
        let a = Scalar::zeta(5, 1);
        let b = Scalar::zeta(7, 1);
        assert!(matches!(a.checked_add(&b), Err(CoeffError::MixedFields(_, _))));
        assert!(matches!(a.checked_mul(&b), Err(CoeffError::MixedFields(_, _))));
        assert_eq!(Scalar::zero().inv(), Err(CoeffError::DivisionByZero));
    }

    #[test]
    fn laurent_arithmetic() {
        let s = Scalar::s_power(1, 6);
        let one_minus_s = Scalar::one() - &s;
        let inv = one_minus_s.inv().unwrap();
        for k in 0..6 {
            assert_eq!(inv.laurent_coeff(k), Scalar::one());
        }
        assert_eq!(inv.laurent_coeff(6), Scalar::zero());
        let sinv = s.inv().unwrap();
        assert_eq!(sinv.laurent_valuation(), Some(-1));
        assert_eq!(&sinv * &s, Scalar::one());
        assert_eq!(Scalar::zero().laurent_valuation(), None);
        assert_eq!(Scalar::from_i64(3).laurent_valuation(), Some(0));
    }

    #[test]
    fn text_round_trip() {
        let cases = vec![
            r(-3, 4),
            Scalar::from_i64(7),
            Scalar::zero(),
            Scalar::zeta(5, 2) * r(3, 2) - Scalar::one(),
            Scalar::s_power(-2, 10) * r(5, 3) + Scalar::s_power(3, 10) - Scalar::one(),
            (Scalar::s_power(1, 8) * (Scalar::zeta(4, 1) + Scalar::one())).truncate_laurent(8),
        ];
        for c in cases {
            let text = c.to_text();
            let back = Scalar::parse(&text).unwrap();
            assert_eq!(back, c, "{text}");
            assert_eq!(back.laurent_cap(), c.laurent_cap(), "{text}");
        }
        assert_eq!(Scalar::parse("3/4").unwrap(), r(3, 4));
        assert_eq!(Scalar::parse("zeta_3^3").unwrap(), Scalar::one());
        assert!(Scalar::parse("3 +").is_err());
        assert!(Scalar::parse("foo").is_err());
    }
}
