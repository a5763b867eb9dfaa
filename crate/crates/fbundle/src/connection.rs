//! F-bundle presentations: flatness, gauge action, products, pullbacks,
//! maximality with the Euler field, and the induced F-manifold structure.
//!
//! A presentation stores, in a fixed trivialization, the connection form
//! `sum_q u^-1 Q^q dlog q + sum_t u^-1 T^t dt + u^-2 U du`. Every base
//! variable owns one direction matrix (`Q` for logarithmic variables, `T`
//! for plain ones); `frame_derive` is `q d/dq` or `d/dt` accordingly, so the
//! frame fields commute.

use crate::coeff::Scalar;
use crate::linalg::Mat;
use crate::series::{Caps, MatSeries, Ring, RingDescriptor, Series, SeriesError, TermJson, Var};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Errors raised by connection operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConnectionError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("gauge transformation has a singular constant term")]
    SingularGauge,
    #[error("variable {0:?} appears in both factors")]
    VariableCollision(String),
    #[error("invalid logarithmic map for {0:?}: {1}")]
    InvalidLogMap(String, String),
    #[error("not maximal: {0}")]
    NotMaximal(String),
    #[error("malformed connection: {0}")]
    Malformed(String),
}

/// A connection in a fixed trivialization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connection {
    ring: Ring,
    rank: usize,
    u_matrix: MatSeries,
    directions: Vec<MatSeries>,
}

/// JSON form of a connection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectionJson {
    pub rank: usize,
    #[serde(flatten)]
    pub ring: RingDescriptor,
    #[serde(rename = "U")]
    pub u_matrix: Vec<TermJson>,
    /// Direction matrices keyed by base variable name.
    pub directions: BTreeMap<String, Vec<TermJson>>,
}

/// A named flatness defect with poles cleared.
#[derive(Clone, Debug)]
pub struct Defect {
    pub pair: (String, String),
    pub matrix: MatSeries,
}

impl Connection {
    /// Build from `U` and one direction matrix per base variable (ring order).
    pub fn new(
        ring: &Ring,
        u_matrix: MatSeries,
        directions: Vec<MatSeries>,
    ) -> Result<Connection, ConnectionError> {
        let rank = u_matrix.rows();
        if u_matrix.cols() != rank {
            return Err(ConnectionError::Malformed("U must be square".into()));
        }
        if directions.len() != ring.nvars() {
            return Err(ConnectionError::Malformed(format!(
                "expected {} direction matrices, got {}",
                ring.nvars(),
                directions.len()
            )));
        }
        for m in std::iter::once(&u_matrix).chain(&directions) {
            if m.rows() != rank || m.cols() != rank {
                return Err(ConnectionError::Malformed("matrix shape differs from rank".into()));
            }
            if m.ring() != ring {
                return Err(ConnectionError::Malformed("matrix lives in another ring".into()));
            }
        }
        Ok(Connection { ring: ring.clone(), rank, u_matrix, directions })
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// The `du` numerator `U`.
    pub fn u_matrix(&self) -> &MatSeries {
        &self.u_matrix
    }

    /// Direction matrix of base variable `v`.
    pub fn direction(&self, v: usize) -> &MatSeries {
        &self.directions[v]
    }

    pub fn directions(&self) -> &[MatSeries] {
        &self.directions
    }

    /// Direction matrix by variable name.
    pub fn direction_by_name(&self, name: &str) -> Option<&MatSeries> {
        self.ring.var_index(name).map(|v| &self.directions[v])
    }

    /// `K = U|_{u=0}` at the center.
    pub fn k_at_center(&self) -> Mat {
        self.u_matrix.constant_mat()
    }

    /// Residue `mu(xi_v) = A_v|_{u=0}` as a series.
    pub fn residue(&self, v: usize) -> MatSeries {
        self.directions[v].at_u_zero()
    }

    /// Apply a function to every matrix.
    pub fn map_matrices(&self, f: impl Fn(&MatSeries) -> MatSeries) -> Connection {
        Connection {
            ring: self.ring.clone(),
            rank: self.rank,
            u_matrix: f(&self.u_matrix),
            directions: self.directions.iter().map(f).collect(),
        }
    }

    /// Restrict to the center: `U(0, u)` coefficients in `u`.
    pub fn restrict_to_center(&self) -> PointConnection {
        let coeffs = (0..=self.ring.u_cap()).map(|k| self.u_matrix.coeff_mat_at(0, k)).collect();
        PointConnection { coeffs }
    }

    /// Move every matrix into another ring (variables matched by name).
    pub fn recast(&self, target: &Ring) -> Result<Connection, ConnectionError> {
        let mut dirs = Vec::new();
        for v in target.vars() {
            match self.ring.var_index(&v.name) {
                Some(i) => dirs.push(self.directions[i].recast(target)?),
                None => dirs.push(MatSeries::zeros(target, self.rank, self.rank)),
            }
        }
        Connection::new(target, self.u_matrix.recast(target)?, dirs)
    }

    /// Truncate all matrices.
    pub fn truncate(&self, t_cap: u32, u_cap: u32) -> Connection {
        self.map_matrices(|m| m.truncate(t_cap, u_cap))
    }

    pub fn to_json(&self) -> ConnectionJson {
        let mut directions = BTreeMap::new();
        for (v, var) in self.ring.vars().iter().enumerate() {
            directions.insert(var.name.clone(), self.directions[v].terms_json());
        }
        ConnectionJson {
            rank: self.rank,
            ring: self.ring.descriptor(),
            u_matrix: self.u_matrix.terms_json(),
            directions,
        }
    }

    pub fn from_json(j: &ConnectionJson) -> Result<Connection, ConnectionError> {
        let ring = Ring::from_descriptor(&j.ring)?;
        let read = |terms: &[TermJson]| MatSeries::from_terms(&ring, &j.ring, j.rank, j.rank, terms);
        let u = read(&j.u_matrix)?;
        for name in j.directions.keys() {
            if ring.var_index(name).is_none() {
                return Err(ConnectionError::Malformed(format!("unknown direction {name:?}")));
            }
        }
        let dirs = ring
            .vars()
            .iter()
            .map(|v| match j.directions.get(&v.name) {
                Some(t) => read(t),
                None => Ok(MatSeries::zeros(&ring, j.rank, j.rank)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Connection::new(&ring, u, dirs)
    }
}

/// A connection restricted to the center: `U(u) = sum_k coeffs[k] u^k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointConnection {
    pub coeffs: Vec<Mat>,
}

impl PointConnection {
    /// `K = U(0)`.
    pub fn k(&self) -> &Mat {
        &self.coeffs[0]
    }
}

// ---------------------------------------------------------------------------
// flatness

/// Every pairwise curvature component with poles cleared:
/// `u (xi_a A_b - xi_b A_a) + [A_a, A_b]` for base pairs and
/// `u^2 dA/du - u A - u xi U + [U, A]` for `u` against a base direction.
/// Pairs involving a plain variable are compared below the top base degree,
/// where derivatives of truncated data are exact.
pub fn flatness_defect(c: &Connection) -> Vec<Defect> {
    let ring = &c.ring;
    let n = ring.nvars();
    let t_top = ring.t_cap().saturating_sub(1);
    let u_top = ring.u_cap();
    let name = |v: usize| ring.vars()[v].name.clone();
    let clip = |v: usize, m: MatSeries| {
        if ring.vars()[v].log { m } else { m.truncate(t_top, u_top) }
    };
    let mut out = Vec::new();
    for a in 0..n {
        let aa = &c.directions[a];
        let term = aa
            .derive_u()
            .shift_u(2)
            .sub(&aa.shift_u(1))
            .sub(&c.u_matrix.frame_derive(a).shift_u(1))
            .add(&c.u_matrix.commutator(aa));
        out.push(Defect { pair: (ring.u_name().to_string(), name(a)), matrix: clip(a, term) });
    }
    for a in 0..n {
        for b in a + 1..n {
            let (aa, bb) = (&c.directions[a], &c.directions[b]);
            let m = bb
                .frame_derive(a)
                .sub(&aa.frame_derive(b))
                .shift_u(1)
                .add(&aa.commutator(bb));
            let m = if ring.vars()[a].log && ring.vars()[b].log {
                m
            } else {
                m.truncate(t_top, u_top)
            };
            out.push(Defect { pair: (name(a), name(b)), matrix: m });
        }
    }
    out
}

/// Whether every flatness defect vanishes.
pub fn is_flat(c: &Connection) -> bool {
    flatness_defect(c).iter().all(|d| d.matrix.is_zero())
}

// ---------------------------------------------------------------------------
// gauge action

/// Change of trivialization by `P`: `U -> P^-1 U P + u^2 P^-1 dP/du`,
/// `A -> P^-1 A P + u P^-1 xi(P)`.
pub fn gauge_apply(c: &Connection, p: &MatSeries) -> Result<Connection, ConnectionError> {
    let pinv = p.inverse().map_err(|_| ConnectionError::SingularGauge)?;
    gauge_apply_with_inverse(c, p, &pinv)
}

/// [`gauge_apply`] with a precomputed inverse.
pub fn gauge_apply_with_inverse(
    c: &Connection,
    p: &MatSeries,
    pinv: &MatSeries,
) -> Result<Connection, ConnectionError> {
    if p.rows() != c.rank || p.cols() != c.rank || p.ring() != &c.ring {
        return Err(ConnectionError::Malformed("gauge shape or ring mismatch".into()));
    }
    let u = pinv
        .mul(&c.u_matrix.mul(p))
        .add(&pinv.mul(&p.derive_u()).shift_u(2));
    let dirs = c
        .directions
        .iter()
        .enumerate()
        .map(|(v, a)| pinv.mul(&a.mul(p)).add(&pinv.mul(&p.frame_derive(v)).shift_u(1)))
        .collect();
    Connection::new(&c.ring, u, dirs)
}

// ---------------------------------------------------------------------------
// product and pullback

/// Product over the product base: block-diagonal, each block acting by zero
/// in the other factor's directions. Caps are the smaller of the two.
pub fn product(c1: &Connection, c2: &Connection) -> Result<Connection, ConnectionError> {
    for v in c2.ring.vars() {
        if c1.ring.var_index(&v.name).is_some() {
            return Err(ConnectionError::VariableCollision(v.name.clone()));
        }
    }
    if c1.ring.u_name() != c2.ring.u_name() {
        return Err(ConnectionError::Malformed("factors use different u names".into()));
    }
    let mut vars: Vec<Var> = c1.ring.vars().to_vec();
    vars.extend(c2.ring.vars().iter().cloned());
    let ring = Ring::new(
        vars,
        c1.ring.u_name(),
        c1.ring.t_cap().min(c2.ring.t_cap()),
        c1.ring.u_cap().min(c2.ring.u_cap()),
    );
    let a = c1.recast(&ring)?;
    let b = c2.recast(&ring)?;
    let u = MatSeries::block_diag(&ring, &[a.u_matrix.clone(), b.u_matrix.clone()]);
    let dirs = (0..ring.nvars())
        .map(|v| MatSeries::block_diag(&ring, &[a.directions[v].clone(), b.directions[v].clone()]))
        .collect();
    Connection::new(&ring, u, dirs)
}

/// Pull back along a base map `f` from a source ring into the connection's
/// base. `map[i]` is the image of the connection's variable `i`, a series in
/// the source ring. Plain targets need zero constant term; a logarithmic
/// target must be `q' * w` for one logarithmic source variable `q'` and a
/// unit `w`.
pub fn pullback(c: &Connection, source: &Ring, map: &[Series]) -> Result<Connection, ConnectionError> {
    let tgt = &c.ring;
    if map.len() != tgt.nvars() {
        return Err(ConnectionError::Malformed("map needs one component per target variable".into()));
    }
    // Jacobian in frames: jac[i][k] = xi'_k(F_i), F_i = log f_i or f_i
    let mut jac: Vec<Vec<Series>> = Vec::new();
    for (i, f) in map.iter().enumerate() {
        if f.ring() != source {
            return Err(ConnectionError::Malformed("map component in wrong ring".into()));
        }
        let var = &tgt.vars()[i];
        if var.log {
            let (j, unit) = split_log_component(source, f)
                .map_err(|why| ConnectionError::InvalidLogMap(var.name.clone(), why))?;
            let winv = unit.inverse()?;
            let row = (0..source.nvars())
                .map(|k| {
                    let mut d = unit.frame_derive(k).mul(&winv);
                    if k == j {
                        d.add_assign(&Series::one(source));
                    }
                    d
                })
                .collect();
            jac.push(row);
        } else {
            if !f.constant_term().is_zero() {
                return Err(ConnectionError::Series(SeriesError::NonzeroConstantTerm { index: i }));
            }
            jac.push((0..source.nvars()).map(|k| f.frame_derive(k)).collect());
        }
    }
    let sub = crate::series::Substitution::new(tgt, map)?;
    let u = sub.apply_mat(&c.u_matrix);
    let pulled: Vec<MatSeries> = c.directions.iter().map(|a| sub.apply_mat(a)).collect();
    let dirs = (0..source.nvars())
        .map(|k| {
            let mut acc = MatSeries::zeros(source, c.rank, c.rank);
            for (i, a) in pulled.iter().enumerate() {
                if !jac[i][k].is_zero() {
                    acc = acc.add(&a.mul_series(&jac[i][k]));
                }
            }
            acc
        })
        .collect();
    Connection::new(source, u, dirs)
}

/// Split `f = q_j * w` with `q_j` a logarithmic variable and `w` a unit.
pub fn split_log_component(ring: &Ring, f: &Series) -> Result<(usize, Series), String> {
    let mut found = None;
    for j in ring.log_vars() {
        if f.terms().all(|(b, _, _)| ring.monomial(b)[j] > 0) {
            let mut w = Series::zero(ring);
            for (b, k, c) in f.terms() {
                let lb = ring.lower(j, b).unwrap();
                *w.coeff_at_mut(lb, k) = c.clone();
            }
            if w.constant_term().is_zero() {
                continue;
            }
            if found.is_some() {
                return Err("divisible by several logarithmic variables".into());
            }
            found = Some((j, w));
        }
    }
    found.ok_or_else(|| "not a unit multiple of a logarithmic source variable".into())
}

/// Outcome of [`is_pullback`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PullbackReport {
    /// Residues `A_s|_{u=0}` vanish for every tested direction.
    pub residues_vanish: bool,
    /// The tested direction matrices vanish identically.
    pub directions_vanish: bool,
    /// No matrix depends on the tested variables.
    pub independent: bool,
}

impl PullbackReport {
    pub fn is_pullback(&self) -> bool {
        self.residues_vanish && self.directions_vanish && self.independent
    }
}

/// Whether the connection is pulled back from the base with the variables
/// `subset` forgotten.
pub fn is_pullback(c: &Connection, subset: &[usize]) -> PullbackReport {
    let residues_vanish = subset.iter().all(|&s| c.residue(s).is_zero());
    let directions_vanish = subset.iter().all(|&s| c.directions[s].is_zero());
    let independent = std::iter::once(&c.u_matrix)
        .chain(&c.directions)
        .all(|m| subset.iter().all(|&s| !m.depends_on(s)));
    PullbackReport { residues_vanish, directions_vanish, independent }
}

// ---------------------------------------------------------------------------
// maximality, Euler field, F-manifold

/// Cyclic-vector data of a maximal connection.
#[derive(Clone, Debug)]
pub struct MaximalData {
    /// Columns `mu(xi_k) h`.
    pub eta: MatSeries,
    pub eta_inv: MatSeries,
    /// Euler field in the frame `xi_k`.
    pub euler: Vec<Series>,
    /// Whether `mu(Eu) = K` to caps.
    pub euler_check: bool,
}

/// `eta(xi) = mu(xi) h`; maximal iff `eta` is square with invertible
/// constant term. The Euler field solves `eta(Eu) = K h`.
pub fn maximality_and_euler(c: &Connection, h: &[Series]) -> Result<MaximalData, ConnectionError> {
    let ring = &c.ring;
    let n = ring.nvars();
    if h.len() != c.rank {
        return Err(ConnectionError::Malformed("cyclic vector has wrong length".into()));
    }
    if n != c.rank {
        return Err(ConnectionError::NotMaximal(format!(
            "base dimension {n} differs from rank {}",
            c.rank
        )));
    }
    let cols: Vec<Vec<Series>> = (0..n).map(|k| c.residue(k).mul_vec(h)).collect();
    let eta = MatSeries::from_cols(ring, &cols);
    let eta_inv = eta
        .inverse()
        .map_err(|_| ConnectionError::NotMaximal("eta is singular at the center".into()))?;
    let k = c.u_matrix.at_u_zero();
    let kh = k.mul_vec(h);
    let euler = eta_inv.mul_vec(&kh);
    let mut mu_eu = MatSeries::zeros(ring, c.rank, c.rank);
    for (v, e) in euler.iter().enumerate() {
        mu_eu = mu_eu.add(&c.residue(v).mul_series(e));
    }
    let euler_check = mu_eu.sub(&k).is_zero();
    Ok(MaximalData { eta, eta_inv, euler, euler_check })
}

/// A vector field in the commuting frame `xi_k`.
pub type VectorField = Vec<Series>;

/// Commutative product on tangent fields with an identity field.
#[derive(Clone, Debug)]
pub struct FManifold {
    ring: Ring,
    /// `structure[a][b]` is `xi_a * xi_b` in the frame.
    structure: Vec<Vec<VectorField>>,
    unit: VectorField,
}

/// Failures found by [`FManifold::verify`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FManifoldReport {
    pub commutativity: Vec<(usize, usize)>,
    pub associativity: Vec<(usize, usize, usize)>,
    pub unit: Vec<usize>,
    pub f_identity: Vec<(usize, usize, usize, usize)>,
    /// Highest base degree compared.
    pub checked_degree: u32,
}

impl FManifoldReport {
    pub fn passed(&self) -> bool {
        self.commutativity.is_empty()
            && self.associativity.is_empty()
            && self.unit.is_empty()
            && self.f_identity.is_empty()
    }
}

/// Product `eta^-1(mu(xi_b) mu(xi_a) h)` and identity `eta^-1(h)`.
pub fn fmanifold_structure(c: &Connection, h: &[Series]) -> Result<FManifold, ConnectionError> {
    let md = maximality_and_euler(c, h)?;
    Ok(fmanifold_from_maximal(c, h, &md))
}

/// [`fmanifold_structure`] reusing computed maximality data.
pub fn fmanifold_from_maximal(c: &Connection, h: &[Series], md: &MaximalData) -> FManifold {
    let n = c.ring.nvars();
    let res: Vec<MatSeries> = (0..n).map(|k| c.residue(k)).collect();
    let mut structure = vec![vec![Vec::new(); n]; n];
    for a in 0..n {
        let ah = res[a].mul_vec(h);
        for b in 0..n {
            if b < a {
                structure[a][b] = structure[b][a].clone();
                continue;
            }
            let bah = res[b].mul_vec(&ah);
            structure[a][b] = md.eta_inv.mul_vec(&bah);
        }
    }
    let unit = md.eta_inv.mul_vec(h);
    FManifold { ring: c.ring.clone(), structure, unit }
}

impl FManifold {
    /// Build from explicit structure series.
    pub fn new(ring: &Ring, structure: Vec<Vec<VectorField>>, unit: VectorField) -> FManifold {
        FManifold { ring: ring.clone(), structure, unit }
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    pub fn dim(&self) -> usize {
        self.unit.len()
    }

    pub fn unit(&self) -> &VectorField {
        &self.unit
    }

    /// `xi_a * xi_b`.
    pub fn structure(&self, a: usize, b: usize) -> &VectorField {
        &self.structure[a][b]
    }

    pub fn basis_field(&self, a: usize) -> VectorField {
        (0..self.dim())
            .map(|k| if k == a { Series::one(&self.ring) } else { Series::zero(&self.ring) })
            .collect()
    }

    pub fn star(&self, x: &[Series], y: &[Series]) -> VectorField {
        let n = self.dim();
        let mut out = vec![Series::zero(&self.ring); n];
        for a in 0..n {
            if x[a].is_zero() {
                continue;
            }
            for b in 0..n {
                if y[b].is_zero() {
                    continue;
                }
                let coef = x[a].mul(&y[b]);
                for (o, s) in out.iter_mut().zip(&self.structure[a][b]) {
                    if !s.is_zero() {
                        o.add_assign(&coef.mul(s));
                    }
                }
            }
        }
        out
    }

    /// Derivative of a function along a field.
    pub fn apply(&self, x: &[Series], f: &Series) -> Series {
        let mut acc = Series::zero(&self.ring);
        for (a, xa) in x.iter().enumerate() {
            if !xa.is_zero() {
                acc.add_assign(&xa.mul(&f.frame_derive(a)));
            }
        }
        acc
    }

    /// Lie bracket in the commuting frame.
    pub fn bracket(&self, x: &[Series], y: &[Series]) -> VectorField {
        bracket(x, y)
    }

    /// `(Lie_X *)(Z, W) = [X, Z*W] - [X,Z]*W - Z*[X,W]`.
    pub fn lie_star(&self, x: &[Series], z: &[Series], w: &[Series]) -> VectorField {
        let zw = self.star(z, w);
        let a = bracket(x, &zw);
        let b = self.star(&bracket(x, z), w);
        let c = self.star(z, &bracket(x, w));
        sub_fields(&sub_fields(&a, &b), &c)
    }

    /// Check commutativity, associativity, the unit and the F-identity on all
    /// basis tuples, below the top base degree.
    pub fn verify(&self) -> FManifoldReport {
        let n = self.dim();
        let top = self.ring.t_cap().saturating_sub(1);
        let ucap = self.ring.u_cap();
        let clip = |v: VectorField| -> VectorField { v.iter().map(|s| s.truncate(top, ucap)).collect() };
        let zero = |v: &VectorField| v.iter().all(Series::is_zero);
        let mut rep = FManifoldReport { checked_degree: top, ..Default::default() };
        let basis: Vec<VectorField> = (0..n).map(|a| self.basis_field(a)).collect();
        for a in 0..n {
            for b in a + 1..n {
                if self.structure[a][b] != self.structure[b][a] {
                    rep.commutativity.push((a, b));
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                let ab = &self.structure[a][b];
                for c in 0..n {
                    let left = self.star(ab, &basis[c]);
                    let right = self.star(&basis[a], &self.structure[b][c]);
                    if left != right {
                        rep.associativity.push((a, b, c));
                    }
                }
            }
        }
        for a in 0..n {
            if self.star(&self.unit, &basis[a]) != basis[a] {
                rep.unit.push(a);
            }
        }
        // F-identity: Lie_{X*Y}(*) = X * Lie_Y(*) + Y * Lie_X(*)
        for a in 0..n {
            for b in a..n {
                let xy = &self.structure[a][b];
                for c in 0..n {
                    for d in c..n {
                        let lhs = self.lie_star(xy, &basis[c], &basis[d]);
                        let r1 = self.star(&basis[a], &self.lie_star(&basis[b], &basis[c], &basis[d]));
                        let r2 = self.star(&basis[b], &self.lie_star(&basis[a], &basis[c], &basis[d]));
                        let diff = clip(sub_fields(&lhs, &add_fields(&r1, &r2)));
                        if !zero(&diff) {
                            rep.f_identity.push((a, b, c, d));
                        }
                    }
                }
            }
        }
        rep
    }

    /// Structure constants at the center as matrices: entry `[c]` of
    /// `xi_a * xi_b`.
    pub fn structure_at_center(&self, a: usize, b: usize) -> Vec<Scalar> {
        self.structure[a][b].iter().map(|s| s.constant_term().clone()).collect()
    }
}

/// Lie bracket of frame-expanded fields.
pub fn bracket(x: &[Series], y: &[Series]) -> VectorField {
    let n = x.len();
    let ring = x[0].ring().clone();
    let apply = |v: &[Series], f: &Series| {
        let mut acc = Series::zero(&ring);
        for (a, va) in v.iter().enumerate() {
            if !va.is_zero() {
                acc.add_assign(&va.mul(&f.frame_derive(a)));
            }
        }
        acc
    };
    (0..n).map(|k| apply(x, &y[k]).sub(&apply(y, &x[k]))).collect()
}

pub fn add_fields(a: &[Series], b: &[Series]) -> VectorField {
    a.iter().zip(b).map(|(x, y)| x.add(y)).collect()
}

pub fn sub_fields(a: &[Series], b: &[Series]) -> VectorField {
    a.iter().zip(b).map(|(x, y)| x.sub(y)).collect()
}

/// Rank-one connection `d + d(psi/u)`: `U = u dpsi/du - psi`,
/// `T^v = xi_v psi`.
pub fn rank_one_from_potential(psi: &Series) -> Connection {
    let ring = psi.ring();
    let u = psi.log_derive_u().sub(psi);
    let dirs = (0..ring.nvars())
        .map(|v| MatSeries::scalar(&psi.frame_derive(v), 1))
        .collect();
    Connection::new(ring, MatSeries::scalar(&u, 1), dirs).expect("rank-one shapes agree")
}

/// Caps of a ring as a JSON pair.
pub fn caps_of(ring: &Ring) -> Caps {
    Caps { t: ring.t_cap(), u: ring.u_cap() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_t() -> Ring {
        Ring::new(vec![Var::plain("t")], "u", 5, 4)
    }

    #[test]
    fn rank_one_potential_is_flat() {
        let r = ring_t();
        let psi = Series::parse(&r, "t").unwrap();
        let c = rank_one_from_potential(&psi);
        assert_eq!(c.u_matrix()[(0, 0)], Series::parse(&r, "-t").unwrap());
        assert!(is_flat(&c));
        let md = maximality_and_euler(&c, &[Series::one(&r)]).unwrap();
        assert!(md.euler_check);
        let bad = rank_one_from_potential(&Series::parse(&r, "t^2").unwrap());
        assert!(matches!(maximality_and_euler(&bad, &[Series::one(&r)]), Err(ConnectionError::NotMaximal(_))));
    }

    #[test]
    fn perturbed_rank_one_has_defect() {
        let r = ring_t();
        let c = rank_one_from_potential(&Series::parse(&r, "t").unwrap());
        let t = MatSeries::scalar(&Series::parse(&r, "1 + t").unwrap(), 1);
        let bad = Connection::new(&r, c.u_matrix().clone(), vec![t]).unwrap();
        let d = flatness_defect(&bad);
        assert_eq!(d[0].matrix[(0, 0)], Series::parse(&r, "-u*t").unwrap());
    }

    #[test]
    fn gauge_round_trip() {
        let r = ring_t();
        let c = rank_one_from_potential(&Series::parse(&r, "t + t^2*u + 3*t^3").unwrap());
        let p = MatSeries::scalar(&Series::parse(&r, "2 + t*u - u^2").unwrap(), 1);
        let g = gauge_apply(&c, &p).unwrap();
        assert!(is_flat(&g));
        // the inverse gauge is a truncated series, so compare below the top degree
        let back = gauge_apply(&g, &p.inverse().unwrap()).unwrap();
        assert_eq!(back.truncate(4, 4), c.truncate(4, 4));
    }
}
