//! Framings: extending a framing at the center over the whole base, and
//! reconstructing bundle and base maps between framed maximal connections.
//!
//! A connection is framed when every direction matrix is free of `u` and
//! `U = K + u G`. Extensions treat the input matrices as exact polynomials:
//! each recursion step consumes `u` orders, so the work happens with an
//! enlarged `u` cap and the result is cut back to the requested caps.

use crate::coeff::Scalar;
use crate::connection::{gauge_apply, maximality_and_euler, pullback, Connection, ConnectionError};
use crate::linalg::Mat;
use crate::series::{MatSeries, Ring, Series, SeriesError, Substitution};
use serde::Serialize;

/// Errors raised by framing operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FramingError {
    #[error(transparent)]
    Connection(#[from] ConnectionError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("not framed at the center: {0}")]
    NotFramedAtPoint(String),
    #[error("ad of the residue of {0} is not nilpotent")]
    AdNotNilpotent(String),
    #[error("direction {0} is not residue-only on the slice")]
    PreconditionNotFramedAtSlice(String),
    #[error("U keeps a u^{u_power} term after framing")]
    UDirectionResidual { u_power: u32 },
    #[error("direction {0} keeps positive powers of u after framing")]
    FramingResidual(String),
    #[error("the point data does not extend to an intertwiner")]
    NoIntertwiner,
    #[error("not maximal: {0}")]
    NotMaximal(String),
    #[error("non-integrable form: {0}")]
    NonIntegrableForm(String),
    #[error("malformed input: {0}")]
    Malformed(String),
}

// ---------------------------------------------------------------------------
// nilpotency and the framing at the center

/// `X -> A X - X A` on row-major vectorized matrices.
pub fn ad_operator(a: &Mat) -> Mat {
    let n = a.rows();
    let mut op = Mat::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let col = i * n + j;
            // image of e_ij: A e_ij - e_ij A
            for r in 0..n {
                op[(r * n + j, col)] += &a[(r, i)];
                op[(i * n + r, col)] -= &a[(j, r)];
            }
        }
    }
    op
}

/// Smallest `k` with `op^k = 0`.
pub fn nilpotency_index(op: &Mat) -> Option<usize> {
    let mut p = Mat::identity(op.rows());
    for k in 0..=op.rows() {
        if p.is_zero() {
            return Some(k);
        }
        p = p.mul(op);
    }
    None
}

/// Nilpotency of `ad` of one logarithmic residue at the center.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NilpotencyEntry {
    pub direction: String,
    pub nilpotent: bool,
    pub index: Option<usize>,
}

/// Outcome of [`check_nilpotency`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NilpotencyReport {
    pub entries: Vec<NilpotencyEntry>,
}

impl NilpotencyReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.nilpotent)
    }
}

/// For every logarithmic direction, whether `ad` of its residue at the
/// center is nilpotent.
pub fn check_nilpotency(c: &Connection) -> NilpotencyReport {
    let ring = c.ring();
    let entries = ring
        .log_vars()
        .into_iter()
        .map(|v| {
            let index = nilpotency_index(&ad_operator(&c.direction(v).constant_mat()));
            NilpotencyEntry { direction: ring.vars()[v].name.clone(), nilpotent: index.is_some(), index }
        })
        .collect();
    NilpotencyReport { entries }
}

/// Point data of a framing: `U(0, u) = K + u G` and the residues at the
/// center.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramingAtPoint {
    pub k: Mat,
    pub g: Mat,
    pub residues: Vec<Mat>,
}

/// Validate the framing at the center: `U(0, u)` has no `u^2` or higher
/// terms and every logarithmic direction is residue-only there. Plain
/// directions need no condition: their higher terms at the center are
/// removed by the extension.
pub fn framing_at_point(c: &Connection) -> Result<FramingAtPoint, FramingError> {
    let ring = c.ring();
    for k in 2..=ring.u_cap() {
        if !c.u_matrix().coeff_mat_at(0, k).is_zero() {
            return Err(FramingError::NotFramedAtPoint(format!("U has a u^{k} term at the center")));
        }
    }
    for v in ring.log_vars() {
        for k in 1..=ring.u_cap() {
            if !c.direction(v).coeff_mat_at(0, k).is_zero() {
                return Err(FramingError::NotFramedAtPoint(format!(
                    "direction {} has a u^{k} term at the center",
                    ring.vars()[v].name
                )));
            }
        }
    }
    Ok(FramingAtPoint {
        k: c.u_matrix().coeff_mat_at(0, 0),
        g: c.u_matrix().coeff_mat_at(0, 1),
        residues: c.directions().iter().map(MatSeries::constant_mat).collect(),
    })
}

// ---------------------------------------------------------------------------
// one-direction steps

fn assemble(slices: &[MatSeries], v: usize) -> MatSeries {
    let ring = slices[0].ring().clone();
    let mut exps = vec![0u32; ring.nvars()];
    let mut out = MatSeries::zeros(&ring, slices[0].rows(), slices[0].cols());
    for (l, s) in slices.iter().enumerate() {
        exps[v] = l as u32;
        if let Some(b) = ring.monomial_index(&exps) {
            out = out.add(&s.mul_monomial(b, 0));
        }
    }
    out
}

/// Gauge `P` with `P = id` on `t_v = 0` making the plain direction matrix
/// `a` free of `u`: `u dP/dt = P R - a P` solved order by order in `t_v`.
fn t_step(a: &MatSeries, v: usize) -> MatSeries {
    let ring = a.ring().clone();
    let n = a.rows();
    let deg = ring.t_cap();
    let t: Vec<MatSeries> = (0..=deg).map(|l| a.var_slice(v, l)).collect();
    let mut p = vec![MatSeries::identity(&ring, n)];
    let mut r: Vec<MatSeries> = Vec::new();
    for l in 0..deg as usize {
        let mut rest = MatSeries::zeros(&ring, n, n);
        for l1 in 1..=l {
            rest = rest.add(&p[l1].mul(&r[l - l1]));
        }
        for l1 in 0..=l {
            rest = rest.sub(&t[l1].mul(&p[l - l1]));
        }
        let rl = rest.at_u_zero().neg();
        let next = rest.add(&rl).shift_u(-1).scale(&Scalar::ratio(1, l as i64 + 1));
        r.push(rl);
        p.push(next);
    }
    assemble(&p, v)
}

/// Gauge `P` with `P = id` on `q_v = 0` making the logarithmic direction
/// matrix `a` free of `u`. At order `l` in `q_v` the equation
/// `u l P_l + [Q_0, P_l] - R_l = S_l` is inverted by a finite Neumann sum.
fn q_step(a: &MatSeries, v: usize, name: &str) -> Result<MatSeries, FramingError> {
    let ring = a.ring().clone();
    let n = a.rows();
    let deg = ring.t_cap() as usize;
    let q: Vec<MatSeries> = (0..=deg as u32).map(|l| a.var_slice(v, l)).collect();
    if q[0].depends_on_u() {
        return Err(FramingError::PreconditionNotFramedAtSlice(name.into()));
    }
    let ad = |x: &MatSeries| q[0].mul(x).sub(&x.mul(&q[0]));
    let mut p = vec![MatSeries::identity(&ring, n)];
    let mut r = vec![q[0].clone()];
    let limit = ring.u_cap() as usize + n * n + 2;
    for l in 1..=deg {
        let mut s = q[l].neg();
        for l1 in 1..l {
            s = s.sub(&q[l1].mul(&p[l - l1])).add(&p[l1].mul(&r[l - l1]));
        }
        let inv = Scalar::ratio(1, l as i64);
        let mut pl = MatSeries::zeros(&ring, n, n);
        let mut rl = MatSeries::zeros(&ring, n, n);
        let mut y = s;
        for _ in 0..limit {
            if y.is_zero() {
                break;
            }
            rl = rl.sub(&y.at_u_zero());
            let sy = y.shift_u(-1);
            pl = pl.add(&sy.scale(&inv));
            y = ad(&sy).scale(&-&inv);
        }
        if !y.is_zero() {
            return Err(FramingError::AdNotNilpotent(name.into()));
        }
        p.push(pl);
        r.push(rl);
    }
    Ok(assemble(&p, v))
}

/// Framing gauge along one plain direction, `P = id` on `t_v = 0`.
pub fn extend_framing_t(c: &Connection, v: usize) -> Result<MatSeries, FramingError> {
    let ring = c.ring();
    if v >= ring.nvars() || ring.vars()[v].log {
        return Err(FramingError::Malformed("expected a plain direction".into()));
    }
    Ok(t_step(c.direction(v), v))
}

/// Framing gauge along one logarithmic direction, `P = id` on `q_v = 0`.
pub fn extend_framing_q(c: &Connection, v: usize) -> Result<MatSeries, FramingError> {
    let ring = c.ring();
    if v >= ring.nvars() || !ring.vars()[v].log {
        return Err(FramingError::Malformed("expected a logarithmic direction".into()));
    }
    let name = &ring.vars()[v].name;
    if nilpotency_index(&ad_operator(&c.direction(v).constant_mat())).is_none() {
        return Err(FramingError::AdNotNilpotent(name.clone()));
    }
    q_step(c.direction(v), v, name)
}

// ---------------------------------------------------------------------------
// full extension

/// A framed presentation with the gauge producing it.
#[derive(Clone, Debug)]
pub struct FramingResult {
    /// `P` with `P(0, u) = id`.
    pub gauge: MatSeries,
    /// The framed connection; direction matrices are exact below the top
    /// base degree.
    pub connection: Connection,
    /// `K(q, t) = U|_{u=0}`.
    pub k: MatSeries,
    /// `G(q, t)`, the `u` coefficient of `U`.
    pub g: MatSeries,
    /// Framed direction matrices, free of `u`.
    pub residues: Vec<MatSeries>,
    /// Highest base degree at which the direction matrices are verified.
    pub verified_t_cap: u32,
}

/// Extend the framing at the center over the base: logarithmic directions
/// first, then plain ones, each solved on the slice where the later
/// variables vanish. The `u` direction is not solved; it is re-verified.
pub fn extend_framing(c: &Connection) -> Result<FramingResult, FramingError> {
    let ring = c.ring().clone();
    framing_at_point(c)?;
    let nil = check_nilpotency(c);
    if let Some(e) = nil.entries.iter().find(|e| !e.nilpotent) {
        return Err(FramingError::AdNotNilpotent(e.direction.clone()));
    }
    let (dt, du) = (ring.t_cap(), ring.u_cap());
    let order: Vec<usize> = ring.log_vars().into_iter().chain(ring.plain_vars()).collect();
    let budget: u32 = nil.entries.iter().map(|e| e.index.unwrap_or(1).max(1) as u32 * dt).sum::<u32>()
        + ring.plain_vars().len() as u32 * dt;
    let work = ring.with_caps(dt, du + budget);
    let cw = c.recast(&work)?;
    let rank = c.rank();
    let mut p = MatSeries::identity(&work, rank);
    for (idx, &v) in order.iter().enumerate() {
        let later = &order[idx + 1..];
        let pinv = p.inverse()?;
        // p does not depend on v or later variables
        let a = pinv.mul(&cw.direction(v).mul(&p)).restrict_zero(later);
        let name = &ring.vars()[v].name;
        let step = if ring.vars()[v].log { q_step(&a, v, name)? } else { t_step(&a, v) };
        p = p.mul(&step);
    }
    let framed = gauge_apply(&cw, &p)?;
    let top = dt.saturating_sub(1);
    for (_, k) in framed.u_matrix().support() {
        if (2..=du).contains(&k) {
            return Err(FramingError::UDirectionResidual { u_power: k });
        }
    }
    for (v, m) in framed.directions().iter().enumerate() {
        if m.support().iter().any(|&(b, k)| k >= 1 && k <= du && work.monomial_degree(b) <= top) {
            return Err(FramingError::FramingResidual(ring.vars()[v].name.clone()));
        }
    }
    let out = framed.recast(&ring)?;
    let u = out.u_matrix().truncate(dt, 1);
    let dirs: Vec<MatSeries> = out.directions().iter().map(|m| m.truncate(top, 0)).collect();
    let connection = Connection::new(&ring, u.clone(), dirs.clone())?;
    Ok(FramingResult {
        gauge: p.recast(&ring)?,
        k: u.at_u_zero(),
        g: u.u_coeff(1),
        residues: dirs,
        connection,
        verified_t_cap: top,
    })
}

/// Rank-one closed form: `P = exp(-phi)` where `phi` integrates the
/// positive-`u` parts of the direction entries divided by `u`, variable by
/// variable on the slices where later variables vanish. Used to cross-check
/// the general recursion.
pub fn rank_one_framing_gauge(c: &Connection) -> Result<Series, FramingError> {
    let ring = c.ring();
    if c.rank() != 1 {
        return Err(FramingError::Malformed("expected a rank-one connection".into()));
    }
    let order: Vec<usize> = ring.log_vars().into_iter().chain(ring.plain_vars()).collect();
    let mut phi = Series::zero(ring);
    for (idx, &v) in order.iter().enumerate() {
        let a = c.direction(v)[(0, 0)].restrict_zero(&order[idx + 1..]);
        let positive = a.sub(&a.at_u_zero()).shift_u(-1);
        let log = ring.vars()[v].log;
        for (b, k, x) in positive.terms() {
            let e = ring.monomial(b)[v];
            let (target, div) = if log {
                if e == 0 {
                    return Err(FramingError::PreconditionNotFramedAtSlice(ring.vars()[v].name.clone()));
                }
                (Some(b), e)
            } else {
                (ring.raise(v, b), e + 1)
            };
            if let Some(t) = target {
                *phi.coeff_at_mut(t, k) = phi.coeff_at(t, k) + &(x * &Scalar::ratio(1, div as i64));
            }
        }
    }
    Ok(phi.neg().exp()?)
}

// ---------------------------------------------------------------------------
// reconstruction

fn agree_below_top(a: &Connection, b: &Connection) -> bool {
    let ring = a.ring();
    let top = ring.t_cap().saturating_sub(1);
    let cut = |m: &MatSeries| m.truncate(top, ring.u_cap());
    cut(a.u_matrix()) == cut(b.u_matrix())
        && a.directions().iter().zip(b.directions()).all(|(x, y)| cut(x) == cut(y))
}

/// The bundle map `Phi` with `gauge(C1, Phi) = C2` whose restriction to the
/// center is `Phi_pt = sum_k point[k] u^k`. `C1` must be framed.
pub fn reconstruct_bundle_map(c1: &Connection, c2: &Connection, point: &[Mat]) -> Result<MatSeries, FramingError> {
    let ring = c1.ring();
    let c2 = c2.recast(ring).map_err(|_| FramingError::Malformed("connections live on different bases".into()))?;
    let rank = c1.rank();
    if c2.rank() != rank || point.is_empty() {
        return Err(FramingError::Malformed("rank mismatch".into()));
    }
    let mut phi_pt = MatSeries::zeros(ring, rank, rank);
    for (k, m) in point.iter().enumerate() {
        if m.rows() != rank || m.cols() != rank {
            return Err(FramingError::Malformed("point data has wrong shape".into()));
        }
        phi_pt = phi_pt.add(&MatSeries::from_mat_term(ring, m, &vec![0; ring.nvars()], k as u32));
    }
    let psi_pt = phi_pt.inverse().map_err(|_| FramingError::NoIntertwiner)?;
    let transported = gauge_apply(&c2, &psi_pt)?;
    let framing = match extend_framing(&transported) {
        Ok(f) => f,
        Err(FramingError::NotFramedAtPoint(_)) => return Err(FramingError::NoIntertwiner),
        Err(e) => return Err(e),
    };
    let phi = framing.gauge.inverse()?.mul(&phi_pt);
    if !agree_below_top(&gauge_apply(c1, &phi)?, &c2) {
        return Err(FramingError::NoIntertwiner);
    }
    Ok(phi)
}

/// One component of a base map: a logarithmic target `p = c q_e exp(g)` or
/// a plain target `s`.
#[derive(Clone, Debug)]
enum Component {
    Log { source: usize, constant: Scalar, g: Series },
    Plain(Series),
}

impl Component {
    fn value(&self, ring: &Ring) -> Result<Series, SeriesError> {
        match self {
            Component::Log { source, constant, g } => {
                let mut exps = vec![0u32; ring.nvars()];
                exps[*source] = 1;
                Ok(Series::monomial(ring, &exps, 0, constant.clone()).mul(&g.exp()?))
            }
            Component::Plain(s) => Ok(s.clone()),
        }
    }

    /// `xi_k` of `log p` or of `s`.
    fn frame_derivative(&self, ring: &Ring, k: usize) -> Series {
        match self {
            Component::Log { source, g, .. } => {
                let d = g.frame_derive(k);
                if k == *source {
                    d.add(&Series::one(ring))
                } else {
                    d
                }
            }
            Component::Plain(s) => s.frame_derive(k),
        }
    }

    fn unknown(&mut self) -> &mut Series {
        match self {
            Component::Log { g, .. } => g,
            Component::Plain(s) => s,
        }
    }
}

fn jacobian(ring: &Ring, comps: &[Component]) -> MatSeries {
    let n1 = ring.nvars();
    let e = comps.iter().flat_map(|c| (0..n1).map(move |k| c.frame_derivative(ring, k))).collect();
    MatSeries::from_entries(ring, comps.len(), n1, e)
}

/// Solve `A x = y` for a consistent, possibly overdetermined system.
fn solve_consistent(rows: &[Vec<Scalar>], rhs: &[Scalar], n: usize) -> Option<Vec<Scalar>> {
    let aug: Vec<Vec<Scalar>> =
        rows.iter().zip(rhs).map(|(r, y)| r.iter().cloned().chain(std::iter::once(y.clone())).collect()).collect();
    let (red, pivots) = Mat::from_rows(aug).rref().ok()?;
    if pivots.contains(&n) {
        return None;
    }
    let mut x = vec![Scalar::zero(); n];
    for (r, &p) in pivots.iter().enumerate() {
        x[p] = red[(r, n)].clone();
    }
    Some(x)
}

/// The base map `f: B1 -> B2` with `f^* C2 = gauge(C1, Phi)`, recovered from
/// `eta_2(f) J_f = Phi_0^-1 eta_1` degree by degree. Logarithmic targets take
/// the constants `log_constants` (default one), which the data cannot fix.
pub fn reconstruct_base_map(
    c1: &Connection,
    c2: &Connection,
    phi: &MatSeries,
    h1: &[Series],
    log_constants: Option<&[Scalar]>,
) -> Result<Vec<Series>, FramingError> {
    let r1 = c1.ring().clone();
    let r2 = c2.ring().clone();
    let (n1, n2) = (r1.nvars(), r2.nvars());
    let md1 = maximality_and_euler(c1, h1).map_err(|e| FramingError::NotMaximal(e.to_string()))?;
    let phi0_inv = phi.at_u_zero().inverse()?;
    let rhs = phi0_inv.mul(&md1.eta);
    let h2s = phi0_inv.mul_vec(h1);
    if h2s.iter().any(|s| !s.sub(&Series::constant(&r1, s.constant_term().clone())).is_zero()) {
        return Err(FramingError::NonIntegrableForm("the transported cyclic vector is not constant".into()));
    }
    let h2: Vec<Series> = h2s.iter().map(|s| Series::constant(&r2, s.constant_term().clone())).collect();
    let md2 = maximality_and_euler(c2, &h2).map_err(|e| FramingError::NotMaximal(e.to_string()))?;
    let eta2 = md2.eta;
    let eta2_0 = eta2.constant_mat();
    let eta2_0_inv = eta2_0.inverse().ok_or_else(|| FramingError::NotMaximal("eta_2 singular".into()))?;
    let j0 = eta2_0_inv.mul(&rhs.constant_mat());
    let log1 = r1.log_vars();
    let mut comps = Vec::with_capacity(n2);
    let mut log_index = 0;
    for l in 0..n2 {
        if r2.vars()[l].log {
            let row: Vec<usize> = (0..n1).filter(|&k| !j0[(l, k)].is_zero() && log1.contains(&k)).collect();
            let source = match row.as_slice() {
                [k] if j0[(l, *k)].is_one() => *k,
                _ => {
                    return Err(FramingError::NonIntegrableForm(format!(
                        "logarithmic target {} is not sent to a single logarithmic source",
                        r2.vars()[l].name
                    )))
                }
            };
            let constant = log_constants.and_then(|c| c.get(log_index).cloned()).unwrap_or_else(Scalar::one);
            log_index += 1;
            comps.push(Component::Log { source, constant, g: Series::zero(&r1) });
        } else {
            if log1.iter().any(|&k| !j0[(l, k)].is_zero()) {
                return Err(FramingError::NonIntegrableForm(format!(
                    "plain target {} has a logarithmic derivative at the center",
                    r2.vars()[l].name
                )));
            }
            comps.push(Component::Plain(Series::zero(&r1)));
        }
    }
    let plain2 = r2.plain_vars();
    let d_eta: Vec<Mat> = plain2.iter().map(|&j| eta2.derive(j).constant_mat()).collect();
    for d in 1..=r1.t_cap() {
        let args = comps.iter().map(|c| c.value(&r1)).collect::<Result<Vec<_>, _>>()?;
        let sub = Substitution::new(&r2, &args)?;
        let jac = jacobian(&r1, &comps);
        let resid = rhs.sub(&sub.apply_mat(&eta2).mul(&jac));
        let jac0 = jac.constant_mat();
        let mut solved = Vec::new();
        for b in r1.degree_range(d) {
            let mono = r1.monomial(b).to_vec();
            let mut rows = Vec::new();
            let mut ys = Vec::new();
            for k in 0..n1 {
                let mk = Scalar::from_i64(mono[k] as i64);
                let (mut block, at) = if r1.vars()[k].log {
                    (eta2_0.scale(&mk), b)
                } else if mono[k] > 0 {
                    (eta2_0.scale(&mk), r1.lower(k, b).unwrap())
                } else {
                    continue;
                };
                if r1.vars()[k].log {
                    for (jj, &j) in plain2.iter().enumerate() {
                        let col = d_eta[jj].mul_vec(&jac0.col(k));
                        for (i, c) in col.into_iter().enumerate() {
                            block[(i, j)] += &c;
                        }
                    }
                }
                for i in 0..n2 {
                    rows.push(block.row(i));
                    ys.push(resid[(i, k)].coeff_at(at, 0).clone());
                }
            }
            let x = solve_consistent(&rows, &ys, n2).ok_or_else(|| {
                FramingError::NonIntegrableForm(format!("inconsistent equations at degree {d}"))
            })?;
            solved.push((b, x));
        }
        for (b, x) in solved {
            for (c, v) in comps.iter_mut().zip(x) {
                *c.unknown().coeff_at_mut(b, 0) = v;
            }
        }
    }
    let map = comps.iter().map(|c| c.value(&r1)).collect::<Result<Vec<_>, _>>()?;
    let pulled = pullback(c2, &r1, &map)?;
    if !agree_below_top(&pulled, &gauge_apply(c1, phi)?) {
        return Err(FramingError::NonIntegrableForm("the pulled-back connection does not match".into()));
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::rank_one_from_potential;
    use crate::series::Var;

    fn rank_one(ring: &Ring, t_matrix: &str) -> Connection {
        let t = MatSeries::from_entries(ring, 1, 1, vec![Series::parse(ring, t_matrix).unwrap()]);
        Connection::new(ring, MatSeries::zeros(ring, 1, 1), vec![t]).unwrap()
    }

    #[test]
    fn exponential_gauge_for_constant_higher_term() {
        let r = Ring::new(vec![Var::plain("t")], "u", 5, 3);
        let p = extend_framing_t(&rank_one(&r, "1 + u"), 0).unwrap();
        let expect = Series::parse(&r, "-t").unwrap().exp().unwrap();
        assert_eq!(p[(0, 0)], expect);
    }

    #[test]
    fn t_step_resubstitution() {
        let r = Ring::new(vec![Var::plain("t")], "u", 4, 8);
        let c = rank_one(&r, "1 + t*u");
        let p = extend_framing_t(&c, 0).unwrap();
        let out = gauge_apply(&c, &p).unwrap();
        let a = out.direction(0).truncate(3, 4);
        assert!(!a.depends_on_u(), "{a:?}");
        assert_eq!(p[(0, 0)].coeff(&[2], 0), Scalar::ratio(-1, 2));
    }

    #[test]
    fn closed_form_agrees_with_recursion_in_rank_one() {
        let r = Ring::new(vec![Var::log("q"), Var::plain("t")], "u", 4, 3);
        let psi = Series::parse(&r, "q*t + q*u + t^2*u + q*t*u^2").unwrap();
        let c = rank_one_from_potential(&psi);
        let f = extend_framing(&c).unwrap();
        assert_eq!(rank_one_framing_gauge(&c).unwrap(), f.gauge[(0, 0)]);
    }

    #[test]
    fn q_step_residue_feeds_higher_orders() {
        // the u^0 part of the q-slice enters R_1 and must cancel at order 3
        let r = Ring::new(vec![Var::log("q")], "u", 4, 4);
        let c = rank_one_from_potential(&Series::parse(&r, "2 + q + q^2*u^2").unwrap());
        let p = extend_framing_q(&c, 0).unwrap();
        assert_eq!(p[(0, 0)], Series::parse(&r, "-q^2*u").unwrap().exp().unwrap());
        assert_eq!(rank_one_framing_gauge(&c).unwrap(), p[(0, 0)]);
    }

    #[test]
    fn q_without_residue_form_rejected() {
        let r = Ring::new(vec![Var::log("q")], "u", 3, 3);
        let c = rank_one(&r, "u");
        assert_eq!(extend_framing_q(&c, 0), Err(FramingError::PreconditionNotFramedAtSlice("q".into())));
        assert!(matches!(extend_framing(&c), Err(FramingError::NotFramedAtPoint(_))));
    }

    #[test]
    fn q_step_with_nilpotent_residue() {
        let r = Ring::new(vec![Var::log("q")], "u", 4, 10);
        let n = MatSeries::from_mat(&r, &Mat::from_i64(&[&[0, 0], &[1, 0]]));
        let q = n.add(&MatSeries::from_mat_term(&r, &Mat::from_i64(&[&[0, 1], &[0, 0]]), &[1], 1));
        let c = Connection::new(&r, MatSeries::zeros(&r, 2, 2), vec![q]).unwrap();
        let p = extend_framing_q(&c, 0).unwrap();
        let out = gauge_apply(&c, &p).unwrap();
        assert!(!out.direction(0).truncate(4, 6).depends_on_u());
    }

    #[test]
    fn rank_one_potential_framing() {
        let r = Ring::new(vec![Var::plain("t")], "u", 4, 3);
        let c = rank_one_from_potential(&Series::parse(&r, "t + t*u").unwrap());
        let f = extend_framing(&c).unwrap();
        assert_eq!(f.gauge[(0, 0)], Series::parse(&r, "-t").unwrap().exp().unwrap());
        assert_eq!(f.k[(0, 0)], Series::parse(&r, "-t").unwrap());
        assert!(f.g.is_zero());
        assert_eq!(rank_one_framing_gauge(&c).unwrap(), f.gauge[(0, 0)]);
    }

    /// Framed, flat and maximal with cyclic vector `e_1`.
    pub(crate) fn framed_example(ring: &Ring, log: &str, plain: &str) -> Connection {
        let nil = Mat::from_i64(&[&[0, 0], &[1, 0]]);
        let k = MatSeries::from_mat(ring, &Mat::from_i64(&[&[2, 0], &[3, 2]]))
            .sub(&MatSeries::scalar(&Series::var(ring, plain).unwrap(), 2));
        let u = k.add(&MatSeries::from_mat_term(ring, &Mat::from_i64(&[&[0, 0], &[0, 1]]), &vec![0; ring.nvars()], 1));
        let mut dirs = vec![MatSeries::zeros(ring, 2, 2); 2];
        dirs[ring.var_index(log).unwrap()] = MatSeries::from_mat(ring, &nil);
        dirs[ring.var_index(plain).unwrap()] = MatSeries::identity(ring, 2);
        Connection::new(ring, u, dirs).unwrap()
    }

    #[test]
    fn bundle_map_round_trip() {
        let r = Ring::new(vec![Var::log("q"), Var::plain("t")], "u", 4, 4);
        let c1 = framed_example(&r, "q", "t");
        assert!(crate::connection::is_flat(&c1));
        let x = MatSeries::from_entries(
            &r,
            2,
            2,
            vec![
                Series::zero(&r),
                Series::parse(&r, "t*u + u^2 + q*u").unwrap(),
                Series::zero(&r),
                Series::zero(&r),
            ],
        );
        let p = MatSeries::identity(&r, 2).add(&x);
        let c2 = gauge_apply(&c1, &p).unwrap();
        let point = vec![Mat::identity(2), Mat::zeros(2, 2), Mat::from_i64(&[&[0, 1], &[0, 0]])];
        let phi = reconstruct_bundle_map(&c1, &c2, &point).unwrap();
        assert_eq!(phi.truncate(3, 4), p.truncate(3, 4));
    }

    #[test]
    fn base_map_round_trip_up_to_log_constant() {
        let r2 = Ring::new(vec![Var::log("p"), Var::plain("s")], "u", 4, 2);
        let r1 = Ring::new(vec![Var::log("q"), Var::plain("t")], "u", 4, 2);
        let c2 = framed_example(&r2, "p", "s");
        let f0 = vec![Series::parse(&r1, "5*q + 10*q*t").unwrap(), Series::parse(&r1, "t + 3*t^2").unwrap()];
        let c1 = pullback(&c2, &r1, &f0).unwrap();
        let one = Series::one(&r1);
        let zero = Series::zero(&r1);
        let f = reconstruct_base_map(&c1, &c2, &MatSeries::identity(&r1, 2), &[one, zero], None).unwrap();
        assert_eq!(f[0], Series::parse(&r1, "q + 2*q*t").unwrap());
        assert_eq!(f[1], f0[1]);
    }
}
