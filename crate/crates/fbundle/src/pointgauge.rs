//! Gauge equivalence of framed connections over a point with a nilpotent
//! parameter algebra `A = k[c_1..c_r]/(high powers)`.
//!
//! A point family connection is `u d/du + u^-1 K + mu D + H` where `D` acts
//! on `A` through the Euler derivation (weight `deg / 2` on homogeneous
//! elements). The noncommutative lift is never built: conjugating `D` by a
//! matrix `P` only contributes `P^-1 Eu(P)`.
//!
//! Orientation: the gauge `Phi` satisfies
//! `Phi^-1 (u d/du + u^-1 K + mu D + H) Phi = u d/du + u^-1 K' + mu' D + H'`
//! with `Phi|_{u=0} = Q` modulo the parameters.

use crate::algebra::{AlgMat, AlgebraDescriptor, AlgebraError, Elem, GradedAlgebra};
use crate::coeff::Scalar;
use serde::{Deserialize, Serialize};

/// Errors raised by point gauge operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PointGaugeError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("Q is not invertible over the parameter algebra")]
    SingularQ,
    #[error("equivalence conditions fail: {0}")]
    ConditionsFail(String),
    #[error("zero denominator k + mu w at k = {k}, w = {w}")]
    DenominatorZero { k: u32, w: Scalar },
    #[error("not in normal form: {0}")]
    NotNormalForm(String),
    #[error("malformed input: {0}")]
    Malformed(String),
}

/// `u d/du + u^-1 K + mu D + H` with `K` diagonal and pairwise distinct
/// eigenvalues modulo the parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointFamilyConnection {
    pub algebra: GradedAlgebra,
    pub k: AlgMat,
    pub h: AlgMat,
    pub mu: Scalar,
}

/// JSON form of a [`PointFamilyConnection`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFamilyJson {
    pub algebra: AlgebraDescriptor,
    pub k: Vec<Vec<String>>,
    pub h: Vec<Vec<String>>,
    pub mu: String,
}

impl PointFamilyConnection {
    /// Validate the normal form: square matrices of equal size, `K`
    /// diagonal with `K_ii - K_jj` invertible for `i != j`, `mu` not a
    /// negative rational.
    pub fn new(algebra: &GradedAlgebra, k: AlgMat, h: AlgMat, mu: Scalar) -> Result<Self, PointGaugeError> {
        let m = k.rows;
        if k.cols != m || h.rows != m || h.cols != m {
            return Err(PointGaugeError::Malformed("K and H must be square of the same size".into()));
        }
        for i in 0..m {
            for j in 0..m {
                if i != j && !algebra.is_zero(k.get(i, j)) {
                    return Err(PointGaugeError::NotNormalForm(format!("K has an off-diagonal entry at ({i}, {j})")));
                }
                if i < j && !algebra.is_unit(&algebra.sub(k.get(i, i), k.get(j, j))) {
                    return Err(PointGaugeError::NotNormalForm(format!(
                        "eigenvalues {i} and {j} of K agree modulo the parameters"
                    )));
                }
            }
        }
        if mu.as_rational().is_some_and(|r| r < &num_rational::BigRational::from_integer(0.into())) {
            return Err(PointGaugeError::NotNormalForm("mu is a negative rational".into()));
        }
        Ok(PointFamilyConnection { algebra: algebra.clone(), k, h, mu })
    }

    pub fn size(&self) -> usize {
        self.k.rows
    }

    pub fn from_json(j: &PointFamilyJson) -> Result<Self, PointGaugeError> {
        let alg = GradedAlgebra::from_descriptor(&j.algebra)?;
        let k = AlgMat::from_text(&alg, &j.k)?;
        let h = AlgMat::from_text(&alg, &j.h)?;
        let mu = Scalar::parse(&j.mu).map_err(|e| PointGaugeError::Malformed(e.to_string()))?;
        PointFamilyConnection::new(&alg, k, h, mu)
    }

    pub fn to_json(&self) -> PointFamilyJson {
        PointFamilyJson {
            algebra: self.algebra.descriptor(),
            k: self.k.to_text(&self.algebra),
            h: self.h.to_text(&self.algebra),
            mu: self.mu.to_text(),
        }
    }
}

/// Outcome of [`check_equivalence_conditions`] with the first failure of
/// each condition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EquivalenceVerdict {
    /// `Q^-1 K Q = K'`.
    pub conjugate_residues: bool,
    pub conjugate_witness: Option<(usize, usize)>,
    /// `mu = mu'`.
    pub same_mu: bool,
    /// `(Q^-1 H Q)_ii = H'_ii` modulo the parameters.
    pub diagonals_agree: bool,
    pub diagonal_witness: Option<usize>,
}

impl EquivalenceVerdict {
    pub fn passed(&self) -> bool {
        self.conjugate_residues && self.same_mu && self.diagonals_agree
    }
}

fn euler_mat(alg: &GradedAlgebra, m: &AlgMat) -> AlgMat {
    m.map(|e| alg.euler(e))
}

fn same_algebra(a: &PointFamilyConnection, b: &PointFamilyConnection) -> Result<(), PointGaugeError> {
    if a.algebra != b.algebra || a.size() != b.size() {
        return Err(PointGaugeError::Malformed("connections over different algebras or sizes".into()));
    }
    Ok(())
}

/// Check the three conditions for `Q` to extend to a gauge equivalence.
pub fn check_equivalence_conditions(
    a: &PointFamilyConnection,
    b: &PointFamilyConnection,
    q: &AlgMat,
) -> Result<EquivalenceVerdict, PointGaugeError> {
    same_algebra(a, b)?;
    let alg = &a.algebra;
    let qinv = q.inverse(alg).map_err(|_| PointGaugeError::SingularQ)?;
    let kc = qinv.mul(alg, &a.k.mul(alg, q));
    let m = a.size();
    let conjugate_witness =
        (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).find(|&(i, j)| kc.get(i, j) != b.k.get(i, j));
    let hc = qinv.mul(alg, &a.h.mul(alg, q));
    let diagonal_witness = (0..m).find(|&i| {
        alg.degree_zero_part(hc.get(i, i)) != alg.degree_zero_part(b.h.get(i, i))
    });
    Ok(EquivalenceVerdict {
        conjugate_residues: conjugate_witness.is_none(),
        conjugate_witness,
        same_mu: a.mu == b.mu,
        diagonals_agree: diagonal_witness.is_none(),
        diagonal_witness,
    })
}

/// A solved gauge `Phi = sum_k phi[k] u^k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointGauge {
    pub phi: Vec<AlgMat>,
    /// The conjugation identity holds through `u^(u_cap - 1)`.
    pub verified: bool,
}

/// Distinct real degrees present in the algebra, ascending.
fn degrees(alg: &GradedAlgebra) -> Vec<u32> {
    let mut d = alg.degrees().to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

/// Solve for `Phi` with `Phi|_{u=0} = Q` modulo the parameters, through
/// `u^u_cap`.
///
/// After replacing the source by its conjugate under `Q`, the residues agree
/// and `Phi = Q P` with `P_0 = id` modulo the parameters. At order `u^k`:
/// `[K, P_{k+1}] = -(k P_k + mu Eu(P_k) + H~ P_k - P_k H')`. Off-diagonal
/// entries of `P_{k+1}` follow by dividing by `K_ii - K_jj`; the diagonal of
/// the right side must vanish, which fixes the diagonal of `P_k` weight by
/// weight with denominators `k + mu w`.
pub fn solve_point_gauge(
    a: &PointFamilyConnection,
    b: &PointFamilyConnection,
    q: &AlgMat,
    u_cap: u32,
) -> Result<PointGauge, PointGaugeError> {
    let verdict = check_equivalence_conditions(a, b, q)?;
    if !verdict.passed() {
        return Err(PointGaugeError::ConditionsFail(format!("{verdict:?}")));
    }
    let alg = &a.algebra;
    let m = a.size();
    let mu = &a.mu;
    let degs = degrees(alg);
    for k in 0..=u_cap {
        for &g in &degs {
            let w = Scalar::ratio(g as i64, 2);
            if (k, g) != (0, 0) && (&Scalar::from_i64(k as i64) + &(mu * &w)).is_zero() {
                return Err(PointGaugeError::DenominatorZero { k, w });
            }
        }
    }
    let qinv = q.inverse(alg).map_err(|_| PointGaugeError::SingularQ)?;
    let kk = &b.k;
    let ht = qinv.mul(alg, &a.h.mul(alg, q)).add(&qinv.mul(alg, &euler_mat(alg, q)).scale(mu));
    let hp = &b.h;
    let mut gaps = vec![vec![alg.zero(); m]; m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                gaps[i][j] = alg.inverse(&alg.sub(kk.get(i, i), kk.get(j, j)))?;
            }
        }
    }
    let alpha: Vec<Elem> = (0..m).map(|i| alg.sub(hp.get(i, i), ht.get(i, i))).collect();
    let mut p: Vec<AlgMat> = vec![AlgMat::zeros(alg, m, m)];
    for k in 0..=u_cap {
        let kscal = Scalar::from_i64(k as i64);
        // diagonal of P_k from the vanishing diagonal at order u^k
        let pk = p[k as usize].clone();
        for i in 0..m {
            let mut off = alg.zero();
            for j in 0..m {
                if j != i {
                    off = alg.add(&off, &alg.mul(ht.get(i, j), pk.get(j, i)));
                    off = alg.sub(&off, &alg.mul(pk.get(i, j), hp.get(j, i)));
                }
            }
            let mut delta = alg.zero();
            for &g in &degs {
                // (k + mu Eu) delta - alpha delta = -off, read in degree g
                let rhs = alg.sub(&alg.mul(&alpha[i], &delta), &off);
                let part = alg.homogeneous_part(&rhs, g);
                if (k, g) == (0, 0) {
                    if !alg.is_zero(&part) {
                        return Err(PointGaugeError::ConditionsFail(format!("diagonal {i} at weight zero")));
                    }
                    delta = alg.add(&delta, &alg.one());
                    continue;
                }
                let den = &kscal + &(mu * &Scalar::ratio(g as i64, 2));
                let inv = den.inv().map_err(|_| PointGaugeError::DenominatorZero { k, w: Scalar::ratio(g as i64, 2) })?;
                delta = alg.add(&delta, &alg.scale(&part, &inv));
            }
            p[k as usize].set(i, i, delta);
        }
        let pk = &p[k as usize];
        let x = pk
            .scale(&kscal)
            .add(&euler_mat(alg, pk).scale(mu))
            .add(&ht.mul(alg, pk))
            .sub(&pk.mul(alg, hp));
        for i in 0..m {
            if !alg.is_zero(x.get(i, i)) {
                return Err(PointGaugeError::ConditionsFail(format!("diagonal {i} does not vanish at order u^{k}")));
            }
        }
        if k < u_cap {
            let mut next = AlgMat::zeros(alg, m, m);
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        next.set(i, j, alg.scale(&alg.mul(x.get(i, j), &gaps[i][j]), &-Scalar::one()));
                    }
                }
            }
            p.push(next);
        }
    }
    let phi: Vec<AlgMat> = p.iter().map(|pk| q.mul(alg, pk)).collect();
    let verified = conjugation_residual(a, b, &phi).is_none();
    Ok(PointGauge { phi, verified })
}

/// First order `u^k` (with `k = -1` for the `u^-1` term) at which
/// `(u d/du + u^-1 K + mu Eu + H) Phi = Phi (u^-1 K' + H')` fails, checked
/// through `u^(len - 2)`; `None` when it holds.
pub fn conjugation_residual(a: &PointFamilyConnection, b: &PointFamilyConnection, phi: &[AlgMat]) -> Option<i64> {
    let alg = &a.algebra;
    let n = phi.len();
    if n == 0 {
        return Some(-1);
    }
    if a.k.mul(alg, &phi[0]) != phi[0].mul(alg, &b.k) {
        return Some(-1);
    }
    for k in 0..n - 1 {
        let lhs = phi[k]
            .scale(&Scalar::from_i64(k as i64))
            .add(&euler_mat(alg, &phi[k]).scale(&a.mu))
            .add(&a.h.mul(alg, &phi[k]))
            .sub(&phi[k].mul(alg, &b.h))
            .add(&a.k.mul(alg, &phi[k + 1]))
            .sub(&phi[k + 1].mul(alg, &b.k));
        // a differing mu' leaves mu' D - mu D = (mu' - mu) D uncancelled
        if !lhs.is_zero() || a.mu != b.mu {
            return Some(k as i64);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    fn point_conn(alg: &GradedAlgebra, k: &[&[&str]], h: &[&[&str]], mu: i64) -> PointFamilyConnection {
        let txt = |rows: &[&[&str]]| rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect::<Vec<_>>();
        let k = AlgMat::from_text(alg, &txt(k)).unwrap();
        let h = AlgMat::from_text(alg, &txt(h)).unwrap();
        PointFamilyConnection::new(alg, k, h, Scalar::from_i64(mu)).unwrap()
    }

    #[test]
    fn identical_connections_trivial_gauge() {
        let alg = GradedAlgebra::point();
        let c = point_conn(&alg, &[&["1", "0"], &["0", "-1"]], &[&["1/2", "0"], &["0", "3"]], 1);
        let id = AlgMat::identity(&alg, 2);
        assert!(check_equivalence_conditions(&c, &c, &id).unwrap().passed());
        let g = solve_point_gauge(&c, &c, &id, 4).unwrap();
        assert!(g.verified);
        assert_eq!(g.phi[0], id);
        assert!(g.phi[1..].iter().all(AlgMat::is_zero));
    }

    #[test]
    fn conditions_fail_individually() {
        let alg = GradedAlgebra::point();
        let c = point_conn(&alg, &[&["1", "0"], &["0", "-1"]], &[&["0", "1"], &["1", "0"]], 1);
        let mu_shift = point_conn(&alg, &[&["1", "0"], &["0", "-1"]], &[&["0", "1"], &["1", "0"]], 2);
        let id = AlgMat::identity(&alg, 2);
        assert!(!check_equivalence_conditions(&c, &mu_shift, &id).unwrap().same_mu);
        let h_shift = point_conn(&alg, &[&["1", "0"], &["0", "-1"]], &[&["1", "1"], &["1", "0"]], 1);
        let v = check_equivalence_conditions(&c, &h_shift, &id).unwrap();
        assert_eq!(v.diagonal_witness, Some(0));
        assert!(matches!(solve_point_gauge(&c, &h_shift, &id, 3), Err(PointGaugeError::ConditionsFail(_))));
        let singular = AlgMat::from_mat(&alg, &Mat::from_i64(&[&[1, 1], &[1, 1]]));
        assert_eq!(check_equivalence_conditions(&c, &c, &singular), Err(PointGaugeError::SingularQ));
    }

    #[test]
    fn simple_two_by_two_first_order() {
        let alg = GradedAlgebra::point();
        let c = point_conn(&alg, &[&["1", "0"], &["0", "-1"]], &[&["0", "1"], &["1", "0"]], 1);
        let c2 = point_conn(&alg, &[&["1", "0"], &["0", "-1"]], &[&["0", "2"], &["3", "0"]], 1);
        let g = solve_point_gauge(&c, &c2, &AlgMat::identity(&alg, 2), 6).unwrap();
        assert!(g.verified);
        assert_eq!(g.phi[1].get(0, 1)[0], Scalar::ratio(1, 2));
        assert_eq!(g.phi[1].get(1, 0)[0], Scalar::from_i64(-1));
    }

    #[test]
    fn nilpotent_parameter_with_weight_recursion() {
        let alg = GradedAlgebra::truncated_polynomial(&["c"], &[2], 3);
        let c = point_conn(&alg, &[&["1 + c", "0"], &["0", "-1"]], &[&["0", "1"], &["c", "0"]], 1);
        let c2 = point_conn(&alg, &[&["1 + c", "0"], &["0", "-1"]], &[&["c", "1 + c"], &["1", "2*c^2"]], 1);
        let id = AlgMat::identity(&alg, 2);
        let g = solve_point_gauge(&c, &c2, &id, 5).unwrap();
        assert!(g.verified);
        assert_eq!(solve_point_gauge(&c, &c2, &id, 5).unwrap(), g);
        // the c-linear diagonal entry of Phi_0 solves mu Eu(delta) = alpha delta
        assert_eq!(alg.degree_zero_part(g.phi[0].get(0, 0)), alg.one());
        assert!(!alg.is_zero(&alg.sub(g.phi[0].get(0, 0), &alg.one())));
    }

    #[test]
    fn nontrivial_initial_matrix() {
        let alg = GradedAlgebra::truncated_polynomial(&["c"], &[2], 2);
        let c = point_conn(&alg, &[&["2 + c", "0"], &["0", "-1"]], &[&["0", "1"], &["c", "5"]], 1);
        // Q swaps the blocks and rescales by units
        let q = AlgMat::from_text(&alg, &[vec!["0".into(), "2".into()], vec!["1 + c".into(), "0".into()]]).unwrap();
        let qinv = q.inverse(&alg).unwrap();
        let kp = qinv.mul(&alg, &c.k.mul(&alg, &q));
        let base = qinv.mul(&alg, &c.h.mul(&alg, &q)).add(&qinv.mul(&alg, &euler_mat(&alg, &q)));
        let mut hp = base.clone();
        hp.set(0, 1, alg.add(base.get(0, 1), &alg.basis(1)));
        hp.set(1, 1, alg.add(base.get(1, 1), &alg.scale(&alg.basis(1), &Scalar::from_i64(3))));
        let c2 = PointFamilyConnection::new(&alg, kp, hp, Scalar::one()).unwrap();
        let g = solve_point_gauge(&c, &c2, &q, 4).unwrap();
        assert!(g.verified);
    }

    #[test]
    fn zero_denominator_reported() {
        let alg = GradedAlgebra::truncated_polynomial(&["c"], &[2], 2);
        let c = point_conn(&alg, &[&["1", "0"], &["0", "-1"]], &[&["0", "0"], &["0", "0"]], 0);
        let err = solve_point_gauge(&c, &c, &AlgMat::identity(&alg, 2), 2).unwrap_err();
        assert_eq!(err, PointGaugeError::DenominatorZero { k: 0, w: Scalar::one() });
    }
}
