//! Limiting-point data of projective bundles and blowups: the residue
//! matrices at the limiting point, eigenvalues lifted over the nilpotent
//! Chern classes, the diagonalizer, base-point coordinates and the point
//! isomorphism to the split side.
//!
//! Everything here is classical: the quantum product at the limiting point
//! reduces to cup products plus the fiber-class correction in the companion
//! matrix.

use crate::algebra::{AlgMat, AlgebraDescriptor, AlgebraError, Elem, GradedAlgebra};
use crate::coeff::Scalar;
use crate::linalg::Mat;
use crate::pointgauge::{
    check_equivalence_conditions, conjugation_residual, solve_point_gauge, EquivalenceVerdict, PointFamilyConnection,
    PointGaugeError,
};
use serde::{Deserialize, Serialize};

/// Errors raised by the limiting-point computations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QuantumError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    PointGauge(#[from] PointGaugeError),
    #[error("class {0} has the wrong degree")]
    DegreeMismatch(String),
    #[error("input coefficients must be rational: {0}")]
    FieldMismatch(String),
    #[error("roots {0} and {1} agree modulo nilpotents")]
    RepeatedRoots(usize, usize),
    #[error("Newton lifting of root {0} did not converge")]
    NoConvergence(usize),
    #[error("codimension must be at least 2, got {0}")]
    BadCodimension(usize),
    #[error("base point equation has no solution in block {block} along basis element {basis}")]
    UnsolvableDegree { block: usize, basis: usize },
    #[error("malformed input: {0}")]
    Malformed(String),
}

fn ensure_rational(alg: &GradedAlgebra, x: &[Scalar], what: &str) -> Result<(), QuantumError> {
    if x.len() != alg.dim() {
        return Err(QuantumError::Malformed(format!("{what} has the wrong length")));
    }
    if x.iter().any(|c| c.as_rational().is_none()) {
        return Err(QuantumError::FieldMismatch(what.into()));
    }
    Ok(())
}

fn ensure_degree(alg: &GradedAlgebra, x: &[Scalar], deg: u32, what: &str) -> Result<(), QuantumError> {
    if alg.homogeneous_part(x, deg) != x {
        return Err(QuantumError::DegreeMismatch(what.into()));
    }
    Ok(())
}

/// A vector bundle `V` of rank `m` over `X`, given by the cohomology of `X`
/// and Chern classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjBundleInput {
    pub algebra: GradedAlgebra,
    pub rank: usize,
    /// `c_1(V), ..., c_m(V)`.
    pub chern: Vec<Elem>,
    /// `c_1(T_X)`.
    pub c1_tangent: Elem,
}

/// JSON form of [`ProjBundleInput`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjBundleJson {
    pub algebra: AlgebraDescriptor,
    pub rank: usize,
    pub chern: Vec<String>,
    pub c1_tangent: String,
}

impl ProjBundleInput {
    pub fn new(algebra: &GradedAlgebra, rank: usize, chern: Vec<Elem>, c1_tangent: Elem) -> Result<Self, QuantumError> {
        if rank == 0 || chern.len() != rank {
            return Err(QuantumError::Malformed("need rank >= 1 and one Chern class per rank".into()));
        }
        for (i, c) in chern.iter().enumerate() {
            let what = format!("c_{}(V)", i + 1);
            ensure_rational(algebra, c, &what)?;
            ensure_degree(algebra, c, 2 * (i as u32 + 1), &what)?;
        }
        ensure_rational(algebra, &c1_tangent, "c_1(T_X)")?;
        ensure_degree(algebra, &c1_tangent, 2, "c_1(T_X)")?;
        Ok(ProjBundleInput { algebra: algebra.clone(), rank, chern, c1_tangent })
    }

    /// Trivial bundle of rank `m`.
    pub fn trivial(algebra: &GradedAlgebra, rank: usize, c1_tangent: Elem) -> Result<Self, QuantumError> {
        ProjBundleInput::new(algebra, rank, vec![algebra.zero(); rank], c1_tangent)
    }

    pub fn from_json(j: &ProjBundleJson) -> Result<Self, QuantumError> {
        let alg = GradedAlgebra::from_descriptor(&j.algebra)?;
        let chern = j.chern.iter().map(|t| alg.parse_elem(t)).collect::<Result<Vec<_>, _>>()?;
        let c1 = alg.parse_elem(&j.c1_tangent)?;
        ProjBundleInput::new(&alg, j.rank, chern, c1)
    }
}

/// Residue data at the limiting point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LimitData {
    /// `K_lim = (c_1 T_X + c_1 V) id + m M`, entries acting by
    /// multiplication.
    pub k_lim: AlgMat,
    /// The companion matrix `M`.
    pub companion: AlgMat,
    /// Block shifts `(2i - (m - 1)) / 2` added to the grading operator of
    /// `X` in `G_lim`.
    pub g_shifts: Vec<Scalar>,
    /// `K_lim` as a scalar matrix on the split fiber.
    pub k_operator: Mat,
    /// `G_lim` as a scalar matrix on the split fiber.
    pub g_operator: Mat,
}

/// Companion matrix with subdiagonal ones and last column
/// `(1 - c_m, -c_{m-1}, ..., -c_1)`.
pub fn companion_matrix(alg: &GradedAlgebra, chern: &[Elem]) -> AlgMat {
    let m = chern.len();
    let mut out = AlgMat::zeros(alg, m, m);
    for r in 1..m {
        out.set(r, r - 1, alg.one());
    }
    let neg = |x: &Elem| alg.scale(x, &-Scalar::one());
    out.set(0, m - 1, alg.sub(&alg.one(), &chern[m - 1]));
    for r in 1..m {
        out.set(r, m - 1, neg(&chern[m - 1 - r]));
    }
    out
}

/// Build `K_lim` and `G_lim` on the split fiber `sum_i H*(X)[-2i]`.
pub fn build_klim_glim(inp: &ProjBundleInput) -> LimitData {
    let alg = &inp.algebra;
    let m = inp.rank;
    let companion = companion_matrix(alg, &inp.chern);
    let diag = alg.add(&inp.c1_tangent, &inp.chern[0]);
    let k_lim = companion.scale(&Scalar::from_i64(m as i64)).add(&AlgMat::identity(alg, m).map(|e| alg.mul(e, &diag)));
    let g_shifts: Vec<Scalar> = (0..m).map(|i| Scalar::ratio(2 * i as i64 - (m as i64 - 1), 2)).collect();
    let gx = alg.grading_operator();
    let blocks: Vec<Mat> = g_shifts.iter().map(|s| gx.add(&Mat::identity(alg.dim()).scale(s))).collect();
    LimitData { k_operator: k_lim.to_operator(alg), g_operator: Mat::block_diag(&blocks), k_lim, companion, g_shifts }
}

// ---------------------------------------------------------------------------
// eigenvalues

/// Coefficients (constant term first) of the characteristic polynomial of
/// the projective-bundle companion matrix:
/// `x^m + c_1 x^(m-1) + ... + c_(m-1) x + c_m - 1`.
pub fn projective_polynomial(inp: &ProjBundleInput) -> Vec<Elem> {
    let alg = &inp.algebra;
    let m = inp.rank;
    let mut p = vec![alg.zero(); m + 1];
    p[m] = alg.one();
    for i in 1..=m {
        p[m - i] = inp.chern[i - 1].clone();
    }
    p[0] = alg.sub(&p[0], &alg.one());
    p
}

/// Blowup polynomial `x^m + sum_(i=1)^(m-1) c_(m-i) x^i + x`; its constant
/// term vanishes so that `x = 0` is a root.
pub fn blowup_polynomial(alg: &GradedAlgebra, codim: usize, normal_chern: &[Elem]) -> Vec<Elem> {
    let mut p = vec![alg.zero(); codim + 1];
    p[codim] = alg.one();
    for i in 1..codim {
        p[i] = normal_chern[codim - i - 1].clone();
    }
    p[1] = alg.add(&p[1], &alg.one());
    p
}

/// Evaluate a polynomial with algebra coefficients at `x` (Horner).
pub fn eval_poly(alg: &GradedAlgebra, p: &[Elem], x: &[Scalar]) -> Elem {
    p.iter().rev().fold(alg.zero(), |acc, c| alg.add(&alg.mul(&acc, x), c))
}

fn derivative(alg: &GradedAlgebra, p: &[Elem]) -> Vec<Elem> {
    p.iter().enumerate().skip(1).map(|(k, c)| alg.scale(c, &Scalar::from_i64(k as i64))).collect()
}

/// Lift a simple root of `p` modulo nilpotents to an exact root by Newton
/// iteration.
pub fn lift_root(alg: &GradedAlgebra, p: &[Elem], start: Scalar, label: usize) -> Result<Elem, QuantumError> {
    let dp = derivative(alg, p);
    let mut x = alg.scalar(start);
    for _ in 0..64 {
        let v = eval_poly(alg, p, &x);
        if alg.is_zero(&v) {
            return Ok(x);
        }
        let d = alg.inverse(&eval_poly(alg, &dp, &x)).map_err(|_| QuantumError::NoConvergence(label))?;
        x = alg.sub(&x, &alg.mul(&v, &d));
    }
    Err(QuantumError::NoConvergence(label))
}

/// Lifted roots over `Q(zeta_order)`, ordered by the power of the root of
/// unity in their constant terms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EigenRoots {
    pub field_order: u32,
    pub roots: Vec<Elem>,
}

fn ensure_distinct(alg: &GradedAlgebra, roots: &[Elem]) -> Result<(), QuantumError> {
    for i in 0..roots.len() {
        for j in i + 1..roots.len() {
            if !alg.is_unit(&alg.sub(&roots[i], &roots[j])) {
                return Err(QuantumError::RepeatedRoots(i, j));
            }
        }
    }
    Ok(())
}

/// Roots `lambda_i = zeta_m^(i-1) + nilpotent` of the projective-bundle
/// polynomial.
pub fn lift_eigenvalues(inp: &ProjBundleInput) -> Result<EigenRoots, QuantumError> {
    let alg = &inp.algebra;
    let m = inp.rank;
    let p = projective_polynomial(inp);
    let roots = (0..m)
        .map(|i| lift_root(alg, &p, Scalar::zeta(m as u32, i as i64), i))
        .collect::<Result<Vec<_>, _>>()?;
    ensure_distinct(alg, &roots)?;
    Ok(EigenRoots { field_order: m as u32, roots })
}

/// Cohomology data of a blowup of `X` along `Z` of codimension `m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlowupInput {
    pub x: GradedAlgebra,
    pub z: GradedAlgebra,
    pub codim: usize,
    /// `c_1(N), ..., c_m(N)` of the normal bundle, in `H*(Z)`.
    pub normal_chern: Vec<Elem>,
    /// Restriction `H*(X) -> H*(Z)` as a `dim Z x dim X` matrix.
    pub pullback: Mat,
}

/// JSON form of [`BlowupInput`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupJson {
    pub x: AlgebraDescriptor,
    pub z: AlgebraDescriptor,
    pub codim: usize,
    pub normal_chern: Vec<String>,
    pub pullback: Vec<Vec<String>>,
}

impl BlowupInput {
    pub fn new(
        x: &GradedAlgebra,
        z: &GradedAlgebra,
        codim: usize,
        normal_chern: Vec<Elem>,
        pullback: Mat,
    ) -> Result<Self, QuantumError> {
        if codim < 2 {
            return Err(QuantumError::BadCodimension(codim));
        }
        if normal_chern.len() != codim {
            return Err(QuantumError::Malformed("need one normal Chern class per codimension".into()));
        }
        for (i, c) in normal_chern.iter().enumerate() {
            let what = format!("c_{}(N)", i + 1);
            ensure_rational(z, c, &what)?;
            ensure_degree(z, c, 2 * (i as u32 + 1), &what)?;
        }
        if pullback.rows() != z.dim() || pullback.cols() != x.dim() {
            return Err(QuantumError::Malformed("restriction matrix has the wrong shape".into()));
        }
        let restrict = |a: &[Scalar]| pullback.mul_vec(a);
        if restrict(&x.one()) != z.one() {
            return Err(QuantumError::Malformed("restriction does not preserve the unit".into()));
        }
        for i in 0..x.dim() {
            for j in 0..x.dim() {
                let (a, b) = (x.basis(i), x.basis(j));
                if restrict(&x.mul(&a, &b)) != z.mul(&restrict(&a), &restrict(&b)) {
                    return Err(QuantumError::Malformed(format!("restriction is not multiplicative on ({i}, {j})")));
                }
            }
        }
        Ok(BlowupInput { x: x.clone(), z: z.clone(), codim, normal_chern, pullback })
    }

    pub fn from_json(j: &BlowupJson) -> Result<Self, QuantumError> {
        let x = GradedAlgebra::from_descriptor(&j.x)?;
        let z = GradedAlgebra::from_descriptor(&j.z)?;
        let chern = j.normal_chern.iter().map(|t| z.parse_elem(t)).collect::<Result<Vec<_>, _>>()?;
        let pb = Mat::from_text(&j.pullback).map_err(|e| QuantumError::Malformed(e.to_string()))?;
        BlowupInput::new(&x, &z, j.codim, chern, pb)
    }
}

/// One summand of the blowup fiber: `H*(X)` or `H*(Z)[-2 shift]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FiberSummand {
    pub source: String,
    pub shift: u32,
    pub dim: usize,
}

/// Split fiber and lifted roots of a blowup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlowupData {
    pub fiber: Vec<FiberSummand>,
    pub roots: EigenRoots,
}

/// The split fiber `H*(X) + sum_(i=1)^(m-1) H*(Z)[-2i]` and the roots of the
/// blowup polynomial over `Q(zeta_(2(m-1)))`: `lambda_1 = 0` and
/// `lambda_i = zeta^(2(i-1)-1) + nilpotent` for `i >= 2`.
pub fn build_blowup_data(inp: &BlowupInput) -> Result<BlowupData, QuantumError> {
    let m = inp.codim;
    let z = &inp.z;
    let mut fiber = vec![FiberSummand { source: "X".into(), shift: 0, dim: inp.x.dim() }];
    fiber.extend((1..m).map(|i| FiberSummand { source: "Z".into(), shift: i as u32, dim: z.dim() }));
    let order = 2 * (m as u32 - 1);
    let p = blowup_polynomial(z, m, &inp.normal_chern);
    let mut roots = vec![lift_root(z, &p, Scalar::zero(), 0)?];
    for i in 2..=m {
        roots.push(lift_root(z, &p, Scalar::zeta(order, 2 * (i as i64 - 1) - 1), i - 1)?);
    }
    ensure_distinct(z, &roots)?;
    Ok(BlowupData { fiber, roots: EigenRoots { field_order: order, roots } })
}

/// Part of `x` in real degrees below `deg`.
pub fn below_degree(alg: &GradedAlgebra, x: &[Scalar], deg: u32) -> Elem {
    x.iter()
        .enumerate()
        .map(|(i, c)| if alg.degrees()[i] < deg { c.clone() } else { Scalar::zero() })
        .collect()
}

// ---------------------------------------------------------------------------
// diagonalizer

/// `phi` with `M phi = phi diag(lambda)` and its inverse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagonalizer {
    pub phi: AlgMat,
    pub phi_inv: AlgMat,
}

/// Columns are eigenvectors of the companion matrix normalized by a unit
/// last entry: `v_(m-1) = 1`, `v_(r-1) = lambda v_r - a_r`.
pub fn build_phi_diagonalizer(
    alg: &GradedAlgebra,
    roots: &[Elem],
    companion: &AlgMat,
) -> Result<Diagonalizer, QuantumError> {
    let m = roots.len();
    if companion.rows != m || companion.cols != m {
        return Err(QuantumError::Malformed("companion matrix size differs from the number of roots".into()));
    }
    ensure_distinct(alg, roots)?;
    let mut phi = AlgMat::zeros(alg, m, m);
    for (i, lam) in roots.iter().enumerate() {
        let mut v = vec![alg.zero(); m];
        v[m - 1] = alg.one();
        for r in (1..m).rev() {
            v[r - 1] = alg.sub(&alg.mul(lam, &v[r]), companion.get(r, m - 1));
        }
        for (r, x) in v.into_iter().enumerate() {
            phi.set(r, i, x);
        }
    }
    let lambda = diag_mat(alg, roots);
    if companion.mul(alg, &phi) != phi.mul(alg, &lambda) {
        return Err(QuantumError::Malformed("eigenvector relation fails; roots are not roots".into()));
    }
    let phi_inv = phi.inverse(alg)?;
    Ok(Diagonalizer { phi, phi_inv })
}

fn diag_mat(alg: &GradedAlgebra, entries: &[Elem]) -> AlgMat {
    let mut out = AlgMat::zeros(alg, entries.len(), entries.len());
    for (i, e) in entries.iter().enumerate() {
        out.set(i, i, e.clone());
    }
    out
}

/// Diagonal entries of `phi^-1 diag(shifts) phi`.
pub fn conjugated_diagonal(alg: &GradedAlgebra, d: &Diagonalizer, shifts: &[Scalar]) -> Vec<Elem> {
    let h = diag_mat(alg, &shifts.iter().map(|s| alg.scalar(s.clone())).collect::<Vec<_>>());
    let c = d.phi_inv.mul(alg, &h.mul(alg, &d.phi));
    (0..shifts.len()).map(|i| c.get(i, i).clone()).collect()
}

// ---------------------------------------------------------------------------
// base point and point isomorphism

/// Coordinates of the base point on the split side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasePoint {
    /// `coords[i][j]`: coordinate of block `i` along basis element `j`;
    /// degree-two coordinates are set to zero.
    pub coords: Vec<Vec<Scalar>>,
    /// Free `(block, basis)` pairs: the degree-two directions.
    pub free: Vec<(usize, usize)>,
    /// `m dim H^2(X)`.
    pub shift_dimension: usize,
}

/// Solve `sum_(deg T_j != 2) ((deg T_j - 2) / 2) a_(i,j) T_j = c_1 V + m lambda_i`.
pub fn solve_base_point(inp: &ProjBundleInput, roots: &EigenRoots) -> Result<BasePoint, QuantumError> {
    let alg = &inp.algebra;
    let m = inp.rank;
    let mut coords = Vec::with_capacity(m);
    let mut free = Vec::new();
    for (i, lam) in roots.roots.iter().enumerate() {
        let rhs = alg.add(&inp.chern[0], &alg.scale(lam, &Scalar::from_i64(m as i64)));
        let mut row = vec![Scalar::zero(); alg.dim()];
        for (j, &deg) in alg.degrees().iter().enumerate() {
            if deg == 2 {
                free.push((i, j));
                if !rhs[j].is_zero() {
                    return Err(QuantumError::UnsolvableDegree { block: i, basis: j });
                }
                continue;
            }
            row[j] = &rhs[j] * &Scalar::ratio(2, deg as i64 - 2);
        }
        coords.push(row);
    }
    let shift_dimension = free.len();
    Ok(BasePoint { coords, free, shift_dimension })
}

/// Classical residue at the base point for one block:
/// `c_1 T_X + sum_j ((deg T_j - 2) / 2) a_j T_j`.
pub fn split_residue(inp: &ProjBundleInput, coords: &[Scalar]) -> Elem {
    let alg = &inp.algebra;
    let mut out = inp.c1_tangent.clone();
    for (j, &deg) in alg.degrees().iter().enumerate() {
        if deg != 2 {
            out[j] = &out[j] + &(&coords[j] * &Scalar::ratio(deg as i64 - 2, 2));
        }
    }
    out
}

/// The point isomorphism between the limiting side and the split side.
#[derive(Clone, Debug)]
pub struct PointIsomorphism {
    pub limit: LimitData,
    pub roots: EigenRoots,
    pub diagonalizer: Diagonalizer,
    pub base_point: BasePoint,
    /// `u d/du - u^-1 K_lim + D + (G_lim - G_X)`.
    pub limit_connection: PointFamilyConnection,
    /// `u d/du - u^-1 K_split + D`.
    pub split_connection: PointFamilyConnection,
    /// Conditions checked on the diagonalized limit side.
    pub verdict: EquivalenceVerdict,
    /// `Phi = sum_k phi[k] u^k` with `Phi^-1 limit Phi = split`.
    pub phi: Vec<AlgMat>,
    pub verified: bool,
}

/// Assemble both point connections, check the equivalence conditions and
/// solve for the gauge through `u^u_cap`.
pub fn build_point_isomorphism(inp: &ProjBundleInput, u_cap: u32) -> Result<PointIsomorphism, QuantumError> {
    let alg = &inp.algebra;
    let m = inp.rank;
    let limit = build_klim_glim(inp);
    let roots = lift_eigenvalues(inp)?;
    let diagonalizer = build_phi_diagonalizer(alg, &roots.roots, &limit.companion)?;
    let base_point = solve_base_point(inp, &roots)?;
    let neg = |x: &AlgMat| x.scale(&-Scalar::one());
    let shifts = diag_mat(alg, &limit.g_shifts.iter().map(|s| alg.scalar(s.clone())).collect::<Vec<_>>());
    let limit_connection =
        PointFamilyConnection { algebra: alg.clone(), k: neg(&limit.k_lim), h: shifts.clone(), mu: Scalar::one() };
    let (phi, phi_inv) = (&diagonalizer.phi, &diagonalizer.phi_inv);
    let k_diag = phi_inv.mul(alg, &limit.k_lim.mul(alg, phi));
    let h_diag = phi_inv.mul(alg, &shifts.mul(alg, phi)).add(&phi_inv.mul(alg, &phi.map(|e| alg.euler(e))));
    let diagonalized = PointFamilyConnection::new(alg, neg(&k_diag), h_diag, Scalar::one())?;
    let split_entries: Vec<Elem> = base_point.coords.iter().map(|c| split_residue(inp, c)).collect();
    let split_connection =
        PointFamilyConnection::new(alg, neg(&diag_mat(alg, &split_entries)), AlgMat::zeros(alg, m, m), Scalar::one())?;
    let id = AlgMat::identity(alg, m);
    let verdict = check_equivalence_conditions(&diagonalized, &split_connection, &id)?;
    let gauge = solve_point_gauge(&diagonalized, &split_connection, &id, u_cap)?;
    let phi_total: Vec<AlgMat> = gauge.phi.iter().map(|p| phi.mul(alg, p)).collect();
    let verified = gauge.verified && conjugation_residual(&limit_connection, &split_connection, &phi_total).is_none();
    Ok(PointIsomorphism {
        limit,
        roots,
        diagonalizer,
        base_point,
        limit_connection,
        split_connection,
        verdict,
        phi: phi_total,
        verified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_input(m: usize) -> ProjBundleInput {
        let alg = GradedAlgebra::point();
        ProjBundleInput::trivial(&alg, m, alg.zero()).unwrap()
    }

    #[test]
    fn point_rank_two_limit_data() {
        let lim = build_klim_glim(&point_input(2));
        assert_eq!(lim.k_operator, Mat::from_i64(&[&[0, 2], &[2, 0]]));
        assert_eq!(lim.g_operator, Mat::diagonal(&[Scalar::ratio(-1, 2), Scalar::ratio(1, 2)]));
    }

    #[test]
    fn trivial_bundle_roots_are_roots_of_unity() {
        for m in 2..=4 {
            let alg = GradedAlgebra::projective_space(2);
            let inp = ProjBundleInput::trivial(&alg, m, alg.scale(&alg.basis(1), &Scalar::from_i64(3))).unwrap();
            let roots = lift_eigenvalues(&inp).unwrap();
            for (i, r) in roots.roots.iter().enumerate() {
                assert_eq!(*r, alg.scalar(Scalar::zeta(m as u32, i as i64)));
            }
        }
    }

    #[test]
    fn rank_two_roots_match_quadratic_formula() {
        let alg = GradedAlgebra::truncated_polynomial(&["c1", "c2"], &[2, 4], 2);
        let (c1, c2) = (alg.basis(1), alg.basis(2));
        let inp = ProjBundleInput::new(&alg, 2, vec![c1.clone(), c2.clone()], alg.zero()).unwrap();
        let roots = lift_eigenvalues(&inp).unwrap();
        // x = c1^2/4 - c2, sqrt(1 + x) = 1 + x/2 - x^2/8 + ...
        let x = alg.sub(&alg.scale(&alg.mul(&c1, &c1), &Scalar::ratio(1, 4)), &c2);
        let mut sqrt = alg.one();
        let mut power = alg.one();
        let mut binom = Scalar::one();
        for n in 1..4i64 {
            binom = &binom * &Scalar::ratio(3 - 2 * n, 2 * n);
            power = alg.mul(&power, &x);
            sqrt = alg.add(&sqrt, &alg.scale(&power, &binom));
        }
        let half_c1 = alg.scale(&c1, &Scalar::ratio(-1, 2));
        assert_eq!(roots.roots[0], alg.add(&half_c1, &sqrt));
        assert_eq!(roots.roots[1], alg.sub(&half_c1, &sqrt));
    }

    #[test]
    fn projective_line_bundle_template() {
        let alg = GradedAlgebra::projective_space(1);
        let h = alg.basis(1);
        let inp = ProjBundleInput::new(&alg, 2, vec![h.clone(), alg.zero()], alg.scale(&h, &Scalar::from_i64(2))).unwrap();
        let lim = build_klim_glim(&inp);
        let three_h = alg.scale(&h, &Scalar::from_i64(3));
        assert_eq!(lim.k_lim.get(0, 0), &three_h);
        assert_eq!(lim.k_lim.get(1, 0), &alg.scalar(Scalar::from_i64(2)));
        assert_eq!(lim.k_lim.get(0, 1), &alg.scalar(Scalar::from_i64(2)));
        assert_eq!(lim.k_lim.get(1, 1), &alg.sub(&three_h, &alg.scale(&h, &Scalar::from_i64(2))));
        let d = build_phi_diagonalizer(&alg, &lift_eigenvalues(&inp).unwrap().roots, &lim.companion).unwrap();
        assert_eq!(d.phi.mul(&alg, &d.phi_inv), AlgMat::identity(&alg, 2));
    }

    #[test]
    fn limit_data_weights() {
        // [G_lim, K_lim] = K_lim except the fiber-class entry 1 in block
        // (0, m - 1), which carries no cohomological degree
        let alg = GradedAlgebra::projective_space(2);
        let h = alg.basis(1);
        let c2 = alg.basis(2);
        let inp = ProjBundleInput::new(&alg, 2, vec![h.clone(), c2], alg.scale(&h, &Scalar::from_i64(3))).unwrap();
        let lim = build_klim_glim(&inp);
        let defect = lim.g_operator.commutator(&lim.k_operator).sub(&lim.k_operator);
        let d = alg.dim();
        let mut expect = Mat::zeros(2 * d, 2 * d);
        for a in 0..d {
            expect[(a, d + a)] = Scalar::from_i64(-4);
        }
        assert_eq!(defect, expect);
        let hx = AlgMat::identity(&alg, 2).map(|e| alg.mul(e, &h));
        assert_eq!(hx.mul(&alg, &lim.k_lim), lim.k_lim.mul(&alg, &hx));
    }

    #[test]
    fn trace_free_shifts_have_vanishing_conjugated_diagonal() {
        for m in 1..=4 {
            let inp = point_input(m);
            let lim = build_klim_glim(&inp);
            let roots = lift_eigenvalues(&inp).unwrap();
            let d = build_phi_diagonalizer(&inp.algebra, &roots.roots, &lim.companion).unwrap();
            for e in conjugated_diagonal(&inp.algebra, &d, &lim.g_shifts) {
                assert!(inp.algebra.is_zero(&e));
            }
        }
    }

    #[test]
    fn base_point_for_trivial_bundle() {
        let alg = GradedAlgebra::projective_space(2);
        let inp = ProjBundleInput::trivial(&alg, 3, alg.scale(&alg.basis(1), &Scalar::from_i64(3))).unwrap();
        let bp = solve_base_point(&inp, &lift_eigenvalues(&inp).unwrap()).unwrap();
        for i in 0..3 {
            assert_eq!(bp.coords[i][0], &Scalar::from_i64(-3) * &Scalar::zeta(3, i as i64));
            assert!(bp.coords[i][1..].iter().all(Scalar::is_zero));
        }
        assert_eq!(bp.shift_dimension, 3);
    }

    #[test]
    fn point_isomorphism_for_projective_line() {
        let iso = build_point_isomorphism(&point_input(2), 8).unwrap();
        assert!(iso.verdict.passed());
        assert!(iso.verified);
        assert_eq!(iso.phi[0], iso.diagonalizer.phi);
        assert_eq!(iso.diagonalizer.phi.to_operator(&GradedAlgebra::point()), Mat::from_i64(&[&[1, -1], &[1, 1]]));
    }

    #[test]
    fn point_isomorphism_over_projective_line_base() {
        let alg = GradedAlgebra::projective_space(1);
        let h = alg.basis(1);
        let inp = ProjBundleInput::new(&alg, 2, vec![h.clone(), alg.zero()], alg.scale(&h, &Scalar::from_i64(2))).unwrap();
        let iso = build_point_isomorphism(&inp, 5).unwrap();
        assert!(iso.verified);
    }

    #[test]
    fn blowup_roots() {
        for m in 2..=3usize {
            let z = GradedAlgebra::truncated_polynomial(&["n1", "n2", "n3"], &[2, 4, 6], 2);
            let x = GradedAlgebra::point();
            let mut pb = Mat::zeros(z.dim(), 1);
            pb[(0, 0)] = Scalar::one();
            let chern: Vec<Elem> = (0..m).map(|i| z.basis(i + 1)).collect();
            let data = build_blowup_data(&BlowupInput::new(&x, &z, m, chern, pb).unwrap()).unwrap();
            assert!(z.is_zero(&data.roots.roots[0]));
            let order = 2 * (m as u32 - 1);
            for i in 2..=m {
                let expect = z.sub(
                    &z.scalar(Scalar::zeta(order, 2 * (i as i64 - 1) - 1)),
                    &z.scale(&z.basis(1), &Scalar::ratio(1, m as i64 - 1)),
                );
                assert_eq!(below_degree(&z, &data.roots.roots[i - 1], 3), expect);
            }
            assert_eq!(data.fiber.len(), m);
        }
    }

    #[test]
    fn bad_inputs_rejected() {
        let alg = GradedAlgebra::projective_space(1);
        let h = alg.basis(1);
        assert!(matches!(
            ProjBundleInput::new(&alg, 1, vec![alg.one()], h.clone()),
            Err(QuantumError::DegreeMismatch(_))
        ));
        let x = GradedAlgebra::point();
        assert_eq!(
            BlowupInput::new(&x, &x, 1, vec![x.zero()], Mat::identity(1)),
            Err(QuantumError::BadCodimension(1))
        );
    }
}
