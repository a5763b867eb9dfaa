//! Spectral decomposition of a maximal connection: lifting fiber idempotents
//! to the tangent algebra, straightening the resulting distributions, the
//! u-direction splitting gauge and assembly into a product of factors.

use crate::coeff::Scalar;
use crate::connection::{
    bracket, fmanifold_from_maximal, gauge_apply, is_pullback, maximality_and_euler, pullback, Connection,
    ConnectionError, FManifold, PullbackReport, VectorField,
};
use crate::linalg::Mat;
use crate::pde::{frobenius_normalize, solve_generalized_flat, FlatSystem, PdeError, Rhs};
use crate::series::{MatSeries, Ring, Series, SeriesError, Var};
use serde::Serialize;

/// Errors raised by the decomposition stages.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecomposeError {
    #[error(transparent)]
    Connection(#[from] ConnectionError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("the given idempotents are not an orthogonal system at the center")]
    NotIdempotentAtCenter,
    #[error("idempotent lifting stalls with a defect of degree {degree}")]
    ObstructionDetected { degree: u32 },
    #[error("bracket of fields {i} and {j} leaves the distribution")]
    NotIntegrable { i: usize, j: usize },
    #[error("no coordinate subspace complements the distributions")]
    BadComplement,
    #[error("ad(K) is not invertible between blocks {0} and {1}")]
    AdNotInvertible(usize, usize),
    #[error("U at u = 0 is not block-diagonal")]
    NotBlockDiagonalAtOrderZero,
    #[error("direction {direction} couples blocks at entry ({row}, {col})")]
    BlockCoupling { direction: String, row: usize, col: usize },
    #[error("invalid splitting: {0}")]
    InvalidSplitting(String),
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("stage {stage}: {source}")]
    Stage { stage: String, source: Box<DecomposeError> },
}

fn at<T, E: Into<DecomposeError>>(stage: &str, r: Result<T, E>) -> Result<T, DecomposeError> {
    r.map_err(|e| DecomposeError::Stage { stage: stage.into(), source: Box::new(e.into()) })
}

// ---------------------------------------------------------------------------
// fiber splittings

/// A partition of fiber indices into blocks, optionally in a basis given by
/// the columns of `basis`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSplitting {
    pub blocks: Vec<Vec<usize>>,
    pub basis: Option<Mat>,
}

impl BlockSplitting {
    /// Validate that the blocks partition `0..rank` and the basis is invertible.
    pub fn new(blocks: Vec<Vec<usize>>, basis: Option<Mat>) -> Result<BlockSplitting, DecomposeError> {
        let rank: usize = blocks.iter().map(Vec::len).sum();
        let mut seen = vec![false; rank];
        for b in &blocks {
            if b.is_empty() {
                return Err(DecomposeError::InvalidSplitting("empty block".into()));
            }
            for &i in b {
                if i >= rank || seen[i] {
                    return Err(DecomposeError::InvalidSplitting(format!("index {i} repeated or out of range")));
                }
                seen[i] = true;
            }
        }
        if let Some(m) = &basis {
            if m.rows() != rank || m.cols() != rank || m.inverse().is_none() {
                return Err(DecomposeError::InvalidSplitting("basis must be an invertible rank x rank matrix".into()));
            }
        }
        Ok(BlockSplitting { blocks, basis })
    }

    /// Consecutive blocks of the given sizes.
    pub fn consecutive(sizes: &[usize]) -> BlockSplitting {
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&s| {
                let b = (start..start + s).collect();
                start += s;
                b
            })
            .collect();
        BlockSplitting { blocks, basis: None }
    }

    pub fn rank(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Block label of every fiber index.
    pub fn labels(&self) -> Vec<usize> {
        let mut lab = vec![0; self.rank()];
        for (l, b) in self.blocks.iter().enumerate() {
            for &i in b {
                lab[i] = l;
            }
        }
        lab
    }

    /// Constant gauge to a basis in which the blocks are consecutive.
    pub fn aligning_matrix(&self) -> Mat {
        let n = self.rank();
        let mut perm = Mat::zeros(n, n);
        for (p, &i) in self.blocks.iter().flatten().enumerate() {
            perm[(i, p)] = Scalar::one();
        }
        match &self.basis {
            Some(b) => b.mul(&perm),
            None => perm,
        }
    }
}

/// Positions `(i, j)` lying in different blocks.
fn off_positions(labels: &[usize]) -> Vec<(usize, usize)> {
    let n = labels.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if labels[i] != labels[j] {
                out.push((i, j));
            }
        }
    }
    out
}

fn is_block_diagonal(m: &Mat, labels: &[usize]) -> bool {
    off_positions(labels).iter().all(|&(i, j)| m[(i, j)].is_zero())
}

/// Inverse of `X -> K X - X K` on off-diagonal matrices, as a matrix acting
/// on the coordinates listed by [`off_positions`].
pub fn off_diagonal_ad_inverse(k: &Mat, labels: &[usize]) -> Result<Mat, DecomposeError> {
    if !is_block_diagonal(k, labels) {
        return Err(DecomposeError::NotBlockDiagonalAtOrderZero);
    }
    let pos = off_positions(labels);
    let n = labels.len();
    let mut ad = Mat::zeros(pos.len(), pos.len());
    for (c, &(i, j)) in pos.iter().enumerate() {
        // image of the unit matrix e_ij
        for (r, &(a, b)) in pos.iter().enumerate() {
            let mut v = Scalar::zero();
            if b == j {
                v += &k[(a, i)];
            }
            if a == i {
                v -= &k[(j, b)];
            }
            ad[(r, c)] = v;
        }
    }
    let nblocks = labels.iter().max().map_or(0, |m| m + 1);
    for p in 0..nblocks {
        for q in 0..nblocks {
            if p == q {
                continue;
            }
            let idx: Vec<usize> =
                (0..pos.len()).filter(|&r| labels[pos[r].0] == p && labels[pos[r].1] == q).collect();
            if ad.select(&idx, &idx).inverse().is_none() {
                return Err(DecomposeError::AdNotInvertible(p, q));
            }
        }
    }
    let _ = n;
    ad.inverse().ok_or(DecomposeError::AdNotInvertible(0, 1))
}

// ---------------------------------------------------------------------------
// idempotents

fn const_field(ring: &Ring, v: &[Scalar]) -> VectorField {
    v.iter().map(|c| Series::constant(ring, c.clone())).collect()
}

fn field_trunc(v: &[Series], t_cap: u32) -> VectorField {
    v.iter().map(|s| s.truncate(t_cap, s.ring().u_cap())).collect()
}

fn field_is_zero(v: &[Series]) -> bool {
    v.iter().all(Series::is_zero)
}

fn field_valuation(v: &[Series]) -> Option<u32> {
    v.iter().filter_map(Series::base_valuation).min()
}

/// Lift orthogonal idempotents `e0` of the algebra at the center to
/// orthogonal idempotent series by the Newton step `e -> 3e^2 - 2e^3`.
pub fn lift_idempotents(
    family: &FManifold,
    e0: &[Vec<Scalar>],
    cap: u32,
) -> Result<Vec<VectorField>, DecomposeError> {
    let ring = family.ring();
    let cap = cap.min(ring.t_cap());
    let n = family.dim();
    if e0.iter().any(|e| e.len() != n) {
        return Err(DecomposeError::InvalidSplitting("idempotent has wrong length".into()));
    }
    let at_center = |v: &[Series]| -> Vec<Scalar> { v.iter().map(|s| s.constant_term().clone()).collect() };
    let unit0 = at_center(family.unit());
    let mut sum = vec![Scalar::zero(); n];
    for (i, ei) in e0.iter().enumerate() {
        for (s, c) in sum.iter_mut().zip(ei) {
            *s += c;
        }
        for (j, ej) in e0.iter().enumerate() {
            let p = at_center(&family.star(&const_field(ring, ei), &const_field(ring, ej)));
            let want = if i == j { ei.clone() } else { vec![Scalar::zero(); n] };
            if p != want {
                return Err(DecomposeError::NotIdempotentAtCenter);
            }
        }
    }
    if sum != unit0 {
        return Err(DecomposeError::NotIdempotentAtCenter);
    }
    let three = Scalar::from_i64(3);
    let two = Scalar::from_i64(2);
    let mut out = Vec::with_capacity(e0.len());
    for ei in e0 {
        let mut e = const_field(ring, ei);
        let mut last: Option<u32> = None;
        loop {
            let sq = field_trunc(&family.star(&e, &e), cap);
            let defect: VectorField = sq.iter().zip(&e).map(|(a, b)| a.sub(b)).collect();
            let Some(v) = field_valuation(&defect) else { break };
            if last.is_some_and(|l| v <= l) {
                return Err(DecomposeError::ObstructionDetected { degree: v });
            }
            last = Some(v);
            let cube = field_trunc(&family.star(&sq, &e), cap);
            e = sq.iter().zip(&cube).map(|(a, b)| a.scale(&three).sub(&b.scale(&two))).collect();
        }
        out.push(e);
    }
    // the lifts of an orthogonal system are orthogonal and sum to the unit
    let mut total = vec![Series::zero(ring); n];
    for (i, ei) in out.iter().enumerate() {
        total = total.iter().zip(ei).map(|(a, b)| a.add(b)).collect();
        for ej in &out[i + 1..] {
            let p = field_trunc(&family.star(ei, ej), cap);
            if let Some(v) = field_valuation(&p) {
                return Err(DecomposeError::ObstructionDetected { degree: v });
            }
        }
    }
    let diff: VectorField =
        field_trunc(&total, cap).iter().zip(&field_trunc(family.unit(), cap)).map(|(a, b)| a.sub(b)).collect();
    if let Some(v) = field_valuation(&diff) {
        return Err(DecomposeError::ObstructionDetected { degree: v });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// commuting bases

/// Commuting fields grouped by distribution.
#[derive(Clone, Debug)]
pub struct CommutingBasis {
    /// Fields in group order: those of the first distribution, then the next.
    pub fields: Vec<VectorField>,
    /// Coordinate index attached to each field, per distribution.
    pub groups: Vec<Vec<usize>>,
    /// When the distributions span the tangent space: coordinates `phi` with
    /// `d phi (d/ds_j)` equal to field `j`.
    pub coordinates: Option<Vec<Series>>,
}

/// Columns of `span` chosen greedily so that their values at the center are
/// independent.
fn independent_columns(span: &MatSeries) -> Vec<usize> {
    let c0 = span.constant_mat();
    let mut chosen: Vec<usize> = Vec::new();
    for j in 0..c0.cols() {
        let mut trial = chosen.clone();
        trial.push(j);
        if c0.select(&(0..c0.rows()).collect::<Vec<_>>(), &trial).rank() == trial.len() {
            chosen = trial;
        }
    }
    chosen
}

fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &x) in pool.iter().enumerate() {
        for mut rest in combinations(&pool[i + 1..], k - 1) {
            rest.insert(0, x);
            out.push(rest);
        }
    }
    out
}

/// Disjoint row sets, one per matrix, with invertible square minors; the
/// first assignment in lexicographic order wins.
fn assign_rows(mats: &[Mat], used: &mut Vec<bool>, acc: &mut Vec<Vec<usize>>) -> bool {
    let i = acc.len();
    if i == mats.len() {
        return true;
    }
    let free: Vec<usize> = (0..used.len()).filter(|&r| !used[r]).collect();
    let cols: Vec<usize> = (0..mats[i].cols()).collect();
    for rows in combinations(&free, mats[i].cols()) {
        if mats[i].select(&rows, &cols).inverse().is_none() {
            continue;
        }
        rows.iter().for_each(|&r| used[r] = true);
        acc.push(rows.clone());
        if assign_rows(mats, used, acc) {
            return true;
        }
        acc.pop();
        rows.iter().for_each(|&r| used[r] = false);
    }
    false
}

/// Basis `V (V[rows])^-1` of the span of `v`, normalized on `rows`.
fn normalize_on_rows(v: &MatSeries, rows: &[usize]) -> Result<MatSeries, DecomposeError> {
    let cols: Vec<usize> = (0..v.cols()).collect();
    let minor_inv = v.select(rows, &cols).inverse().map_err(|_| DecomposeError::BadComplement)?;
    Ok(v.mul(&minor_inv))
}

fn check_commuting(fields: &[VectorField], labels: &[usize], top: u32) -> Result<(), DecomposeError> {
    for a in 0..fields.len() {
        for b in a + 1..fields.len() {
            if !field_is_zero(&field_trunc(&bracket(&fields[a], &fields[b]), top)) {
                return Err(DecomposeError::NotIntegrable { i: labels[a], j: labels[b] });
            }
        }
    }
    Ok(())
}

/// Commuting basis adapted to distributions given by spanning columns.
///
/// Each distribution gets the basis normalized on a coordinate subset
/// (greedy, lexicographic). When the distributions together span the
/// tangent space, these bases need not commute across distributions, so the
/// fields are instead taken to be coordinate fields of a chart in which every
/// distribution is a coordinate subspace: after a linear change adapting the
/// distributions at the center, the coordinates of group `i` are first
/// integrals of the sum of the other distributions.
pub fn commuting_basis(spans: &[MatSeries], cap: u32) -> Result<CommutingBasis, DecomposeError> {
    let ring = spans.first().map(|s| s.ring().clone()).ok_or(DecomposeError::BadComplement)?;
    let n = ring.nvars();
    let cap = cap.min(ring.t_cap());
    let all_rows: Vec<usize> = (0..n).collect();
    let chosen: Vec<MatSeries> = spans.iter().map(|s| s.select(&all_rows, &independent_columns(s))).collect();
    let total: usize = chosen.iter().map(MatSeries::cols).sum();
    if total > n {
        return Err(DecomposeError::BadComplement);
    }
    if total < n {
        let centers: Vec<Mat> = chosen.iter().map(MatSeries::constant_mat).collect();
        let mut used = vec![false; n];
        let mut groups = Vec::new();
        if !assign_rows(&centers, &mut used, &mut groups) {
            return Err(DecomposeError::BadComplement);
        }
        let mut fields = Vec::new();
        for (v, rows) in chosen.iter().zip(&groups) {
            let x = normalize_on_rows(v, rows)?;
            let own: Vec<VectorField> = (0..x.cols()).map(|a| x.col(a)).collect();
            check_commuting(&own, rows, cap.saturating_sub(1))?;
            fields.extend(own);
        }
        return Ok(CommutingBasis { fields, groups, coordinates: None });
    }
    adapted_chart(&ring, &chosen, cap)
}

fn adapted_chart(ring: &Ring, chosen: &[MatSeries], cap: u32) -> Result<CommutingBasis, DecomposeError> {
    let n = ring.nvars();
    let mut groups = Vec::new();
    let mut start = 0;
    for v in chosen {
        groups.push((start..start + v.cols()).collect::<Vec<usize>>());
        start += v.cols();
    }
    // linear change t = L t' with L[J_i] spanning D_i at the center
    let cols: Vec<Vec<Scalar>> = chosen.iter().flat_map(|v| {
        let c = v.constant_mat();
        (0..c.cols()).map(move |j| c.col(j))
    }).collect();
    let lin = Mat::from_cols(&cols);
    let lin_inv = lin.inverse().ok_or(DecomposeError::BadComplement)?;
    let linear = |m: &Mat| -> Vec<Series> {
        (0..n)
            .map(|a| {
                let mut s = Series::zero(ring);
                for b in 0..n {
                    if !m[(a, b)].is_zero() {
                        s.add_assign(&Series::monomial(ring, &unit_exps(n, b), 0, m[(a, b)].clone()));
                    }
                }
                s
            })
            .collect()
    };
    let to_adapted = crate::series::Substitution::new(ring, &linear(&lin))?;
    let adapted: Vec<MatSeries> = chosen.iter().map(|v| to_adapted.apply_mat(v).left_mul_const(&lin_inv)).collect();
    let labels: Vec<usize> = (0..n).collect();
    for (v, g) in adapted.iter().zip(&groups) {
        let x = normalize_on_rows(v, g)?;
        let own: Vec<VectorField> = (0..x.cols()).map(|a| x.col(a)).collect();
        check_commuting(&own, g, cap.saturating_sub(1))?;
    }
    // first integrals sigma_J of the complementary distributions
    let mut sigma: Vec<Series> = (0..n).map(|j| Series::monomial(ring, &unit_exps(n, j), 0, Scalar::one())).collect();
    for (i, g) in groups.iter().enumerate() {
        let rest: Vec<usize> = (0..n).filter(|j| !g.contains(j)).collect();
        if rest.is_empty() {
            continue;
        }
        let comp: Vec<VectorField> = adapted
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .flat_map(|(_, v)| (0..v.cols()).map(move |a| v.col(a)))
            .collect();
        let y = normalize_on_rows(&MatSeries::from_cols(ring, &comp), &rest)?;
        let yfields: Vec<VectorField> = (0..y.cols()).map(|a| y.col(a)).collect();
        check_commuting(&yfields, &rest, cap.saturating_sub(1))?;
        let gg = g.clone();
        let rhs: Rhs = Box::new(move |s: &[Series]| {
            Ok(yfields
                .iter()
                .map(|yl| {
                    s.iter()
                        .map(|sj| {
                            let mut acc = Series::zero(sj.ring());
                            for &j in &gg {
                                acc.add_assign(&yl[j].mul(&sj.derive(j)));
                            }
                            acc.neg()
                        })
                        .collect()
                })
                .collect())
        });
        let sys = FlatSystem {
            ring: ring.clone(),
            solve_vars: rest.clone(),
            dim: g.len(),
            rhs,
            initial: Some(g.iter().map(|&j| sigma[j].clone()).collect()),
            check_locality: true,
        };
        let sol = solve_generalized_flat(&sys, cap)?;
        for (&j, s) in g.iter().zip(sol) {
            sigma[j] = s;
        }
    }
    // the chart: t = L sigma^-1(s); coordinate fields are L (D sigma)^-1
    let sigma_inv = crate::series::compositional_inverse(&sigma)?;
    let coordinates: Vec<Series> = {
        let l = linear(&lin);
        let sub = crate::series::Substitution::new(ring, &sigma_inv)?;
        l.iter().map(|s| sub.apply(s)).collect()
    };
    let jac: Vec<Series> = sigma.iter().flat_map(|s| (0..n).map(move |b| s.derive(b))).collect();
    let jac_inv = MatSeries::from_entries(ring, n, n, jac).inverse()?;
    let from_adapted = crate::series::Substitution::new(ring, &linear(&lin_inv))?;
    let fields_mat = from_adapted.apply_mat(&jac_inv).left_mul_const(&lin);
    let fields: Vec<VectorField> = (0..n).map(|j| fields_mat.col(j)).collect();
    check_commuting(&fields, &labels, cap.saturating_sub(2))?;
    Ok(CommutingBasis { fields, groups, coordinates: Some(coordinates) })
}

fn unit_exps(n: usize, j: usize) -> Vec<u32> {
    (0..n).map(|k| u32::from(k == j)).collect()
}

// ---------------------------------------------------------------------------
// u-direction splitting

/// One factor `id + u^m t^v T` of the splitting gauge.
#[derive(Clone, Debug)]
pub struct SplitStep {
    pub u_power: u32,
    pub exponents: Vec<u32>,
    pub matrix: Mat,
    /// Off-diagonal part of `U` at this order before the step.
    pub off_part: Mat,
}

/// Valuation profile of the remainder `U - U(0, 0)` at one point of the
/// split recursion: `(base degree, u power, minimal entry valuation)` per
/// nonzero coefficient.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RemainderSnapshot {
    pub u_power: u32,
    pub exponents: Vec<u32>,
    pub profile: Vec<(u32, u32, i64)>,
    /// Index into the recorded steps when a step follows this snapshot.
    pub step: Option<usize>,
}

fn remainder_profile(ring: &Ring, ut: &MatSeries) -> Vec<(u32, u32, i64)> {
    let mut out = Vec::new();
    for (b, k) in ut.support() {
        if b == 0 && k == 0 {
            continue;
        }
        let val = ut.coeff_mat_at(b, k).entries().iter().filter_map(Scalar::laurent_valuation).min();
        if let Some(v) = val {
            out.push((ring.monomial_degree(b), k, v));
        }
    }
    out
}

/// Output of [`split_u_gauge`].
#[derive(Clone, Debug)]
pub struct SplitGauge {
    pub gauge: MatSeries,
    /// Transformed `U`.
    pub u_matrix: MatSeries,
    pub steps: Vec<SplitStep>,
    /// Inverse of `ad(K)` on off-diagonal coordinates.
    pub ad_inverse: Mat,
    /// Remainder profiles at the head of every u order and before every
    /// step; empty unless tracing was requested.
    pub snapshots: Vec<RemainderSnapshot>,
}

/// Gauge `P = prod_m prod_v (id + u^m t^v T_{m,v})`, ordered by increasing `m`
/// and graded-lex `v`, making `U` block-diagonal. With a basis in the
/// splitting the returned gauge starts with that constant change of basis.
pub fn split_u_gauge(c: &Connection, s: &BlockSplitting, cap: (u32, u32)) -> Result<SplitGauge, DecomposeError> {
    split_u_gauge_traced(c, s, cap, false)
}

/// [`split_u_gauge`] optionally recording remainder snapshots.
pub fn split_u_gauge_traced(
    c: &Connection,
    s: &BlockSplitting,
    cap: (u32, u32),
    trace: bool,
) -> Result<SplitGauge, DecomposeError> {
    if s.rank() != c.rank() {
        return Err(DecomposeError::InvalidSplitting("splitting rank differs from connection rank".into()));
    }
    let ring = c.ring().clone();
    let (t_cap, u_cap) = (cap.0.min(ring.t_cap()), cap.1.min(ring.u_cap()));
    let base = s.basis.as_ref().map(|b| MatSeries::from_mat(&ring, b));
    let mut ut = match &base {
        Some(b) => gauge_apply(c, b)?.u_matrix().clone(),
        None => c.u_matrix().clone(),
    };
    let labels = s.labels();
    let u0 = ut.at_u_zero();
    for (i, j) in off_positions(&labels) {
        if !u0[(i, j)].is_zero() {
            return Err(DecomposeError::NotBlockDiagonalAtOrderZero);
        }
    }
    let ad_inverse = off_diagonal_ad_inverse(&ut.constant_mat(), &labels)?;
    let pos = off_positions(&labels);
    let n = c.rank();
    let mut p = base.unwrap_or_else(|| MatSeries::identity(&ring, n));
    let mut steps = Vec::new();
    let mut snapshots = Vec::new();
    for m in 1..=u_cap {
        for b in 0..ring.num_base_monomials() {
            if ring.monomial_degree(b) > t_cap {
                break;
            }
            let coeff = ut.coeff_mat_at(b, m);
            let off: Vec<Scalar> = pos.iter().map(|&(i, j)| coeff[(i, j)].clone()).collect();
            let idle = off.iter().all(Scalar::is_zero);
            if trace && (b == 0 || !idle) {
                let profile = remainder_profile(&ring, &ut);
                snapshots.push(RemainderSnapshot { u_power: m, exponents: ring.monomial(b).to_vec(), profile, step: None });
            }
            if idle {
                continue;
            }
            let sol = ad_inverse.mul_vec(&off);
            let mut t = Mat::zeros(n, n);
            let mut off_part = Mat::zeros(n, n);
            for (r, &(i, j)) in pos.iter().enumerate() {
                t[(i, j)] = -&sol[r];
                off_part[(i, j)] = off[r].clone();
            }
            // U <- P^-1 (U P + u^2 dP/du) with P = id + X, X = u^m t^v T
            let mut y = ut.add(&ut.right_mul_const(&t).mul_monomial(b, m));
            let mut du = MatSeries::zeros(&ring, n, n);
            du.add_mat_term(&t.scale(&Scalar::from_i64(m as i64)), ring.monomial(b), m + 1);
            y = y.add(&du);
            let mut acc = y.clone();
            let mut term = y;
            loop {
                term = term.left_mul_const(&t).mul_monomial(b, m).neg();
                if term.is_zero() {
                    break;
                }
                acc = acc.add(&term);
            }
            ut = acc;
            p = p.add(&p.right_mul_const(&t).mul_monomial(b, m));
            if trace {
                if let Some(last) = snapshots.last_mut() {
                    last.step = Some(steps.len());
                }
            }
            steps.push(SplitStep { u_power: m, exponents: ring.monomial(b).to_vec(), matrix: t, off_part });
        }
    }
    Ok(SplitGauge { gauge: p, u_matrix: ut, steps, ad_inverse, snapshots })
}

/// First coefficient coupling two blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Offense {
    pub direction: String,
    pub row: usize,
    pub col: usize,
    pub exponents: Vec<u32>,
    pub u_power: u32,
}

/// Outcome of [`check_t_split`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TSplitReport {
    pub passed: bool,
    pub first_offense: Option<Offense>,
}

/// Check that `U` and every direction matrix are block-diagonal to caps.
pub fn check_t_split(c: &Connection, s: &BlockSplitting) -> TSplitReport {
    let ring = c.ring();
    let labels = s.labels();
    let named = std::iter::once(("U".to_string(), c.u_matrix()))
        .chain(ring.vars().iter().map(|v| v.name.clone()).zip(c.directions()));
    for (name, m) in named {
        for (b, k) in m.support() {
            for &(i, j) in &off_positions(&labels) {
                if !m[(i, j)].coeff_at(b, k).is_zero() {
                    let first_offense = Some(Offense {
                        direction: name,
                        row: i,
                        col: j,
                        exponents: ring.monomial(b).to_vec(),
                        u_power: k,
                    });
                    return TSplitReport { passed: false, first_offense };
                }
            }
        }
    }
    TSplitReport { passed: true, first_offense: None }
}

// ---------------------------------------------------------------------------
// the pipeline

/// Checks gathered along [`spectral_decompose`].
#[derive(Clone, Debug, Serialize)]
pub struct DecompositionReport {
    pub split_steps: usize,
    pub t_split: TSplitReport,
    pub factor_pullback: Vec<PullbackReport>,
    pub factor_maximal: Vec<bool>,
    /// Whether the gauge-transformed pullback equals the product of the
    /// factors below `verified_t_cap + 1`.
    pub product_matches: bool,
    pub verified_t_cap: u32,
}

impl DecompositionReport {
    pub fn passed(&self) -> bool {
        self.t_split.passed
            && self.factor_pullback.iter().all(PullbackReport::is_pullback)
            && self.factor_maximal.iter().all(|&b| b)
            && self.product_matches
    }
}

/// A decomposition into a product of factors.
#[derive(Clone, Debug)]
pub struct DecompositionResult {
    /// Coordinate change: image of each base variable, in the input ring.
    pub phi: Vec<Series>,
    /// Base variables of each factor.
    pub groups: Vec<Vec<String>>,
    /// Gauge on the pulled-back connection, in the ring with reduced caps.
    pub gauge: MatSeries,
    pub factors: Vec<Connection>,
    /// Cyclic vector of each factor.
    pub factor_vectors: Vec<Vec<Series>>,
    pub report: DecompositionReport,
}

/// Decompose a maximal connection with cyclic vector `h` along a fiber
/// splitting stable under `K`. The base coordinate change and the
/// t-dependent gauges each lose one order in the base, so factors carry base
/// cap `t_cap - 2`.
pub fn spectral_decompose(
    c: &Connection,
    h: &[Series],
    s: &BlockSplitting,
) -> Result<DecompositionResult, DecomposeError> {
    let ring = c.ring().clone();
    if !ring.log_vars().is_empty() {
        return Err(DecomposeError::Unsupported("logarithmic base variables".into()));
    }
    if s.rank() != c.rank() || h.len() != c.rank() {
        return Err(DecomposeError::InvalidSplitting("splitting or vector rank differs from connection rank".into()));
    }
    if ring.t_cap() < 2 {
        return Err(DecomposeError::Unsupported("base cap must be at least 2".into()));
    }
    let n = ring.nvars();
    let rank = c.rank();
    let sizes = s.sizes();
    let blocks = BlockSplitting::consecutive(&sizes);
    let labels = blocks.labels();

    // align the fiber basis with the blocks
    let align = s.aligning_matrix();
    let align_inv = align.inverse().expect("validated splitting");
    let c1 = at("align", gauge_apply(c, &MatSeries::from_mat(&ring, &align)))?;
    let h1 = MatSeries::from_mat(&ring, &align_inv).mul_vec(h);
    at("spectrum", off_diagonal_ad_inverse(&c1.k_at_center(), &labels))?;

    // tangent idempotents
    let md = at("maximality", maximality_and_euler(&c1, h1.as_slice()))?;
    let fam = fmanifold_from_maximal(&c1, &h1, &md);
    let eta0_inv = md.eta_inv.constant_mat();
    let h0: Vec<Scalar> = h1.iter().map(|x| x.constant_term().clone()).collect();
    let e0: Vec<Vec<Scalar>> = blocks
        .blocks
        .iter()
        .map(|b| {
            let proj: Vec<Scalar> =
                (0..rank).map(|i| if b.contains(&i) { h0[i].clone() } else { Scalar::zero() }).collect();
            eta0_inv.mul_vec(&proj)
        })
        .collect();
    let eps = at("lift_idempotents", lift_idempotents(&fam, &e0, ring.t_cap()))?;

    // distributions and straightening coordinates
    let spans: Vec<MatSeries> = eps
        .iter()
        .map(|e| {
            let cols: Vec<VectorField> = (0..n).map(|k| fam.star(e, &fam.basis_field(k))).collect();
            MatSeries::from_cols(&ring, &cols)
        })
        .collect();
    let basis = at("commuting_basis", commuting_basis(&spans, ring.t_cap()))?;
    for (g, &sz) in basis.groups.iter().zip(&sizes) {
        if g.len() != sz {
            return Err(DecomposeError::Stage {
                stage: "commuting_basis".into(),
                source: Box::new(DecomposeError::BadComplement),
            });
        }
    }
    let phi = match &basis.coordinates {
        Some(c) => c.clone(),
        None => at("frobenius", frobenius_normalize(&basis.fields, ring.t_cap()))?,
    };

    // pull back; derivatives of phi are exact one order lower
    let ring2 = ring.with_caps(ring.t_cap() - 1, ring.u_cap());
    let c2 = at("pullback", pullback(&c1, &ring, &phi))?;
    let c2 = at("pullback", c2.recast(&ring2))?;
    let sub = at("pullback", crate::series::Substitution::new(&ring, &phi))?;
    let h2: Vec<Series> = at("pullback", h1.iter().map(|x| sub.apply(x).recast(&ring2)).collect::<Result<Vec<_>, _>>())?;

    // order-zero splitting from the fiber projectors mu(eps_i)
    let mut p0 = MatSeries::zeros(&ring, rank, rank);
    for (e, b) in eps.iter().zip(&blocks.blocks) {
        let mut proj = MatSeries::zeros(&ring, rank, rank);
        for (k, ek) in e.iter().enumerate() {
            proj = proj.add(&c1.residue(k).mul_series(ek));
        }
        let proj = sub.apply_mat(&proj);
        for &j in b {
            for i in 0..rank {
                p0[(i, j)] = proj[(i, j)].clone();
            }
        }
    }
    let p0 = at("order_zero", p0.recast(&ring2))?;
    let p0_inv = at("order_zero", p0.inverse())?;
    let c3 = at("order_zero", gauge_apply(&c2, &p0))?;
    let h3 = p0_inv.mul_vec(&h2);

    let split = at("split_u", split_u_gauge(&c3, &blocks, (ring2.t_cap(), ring2.u_cap())))?;
    let c4 = at("split_u", gauge_apply(&c3, &split.gauge))?;
    let h4 = at("split_u", split.gauge.inverse())?.mul_vec(&h3);
    // t-dependent gauges leave the direction matrices exact one order lower
    let verified = ring2.t_cap() - 1;
    let c4 = Connection::new(
        &ring2,
        c4.u_matrix().truncate(verified, ring2.u_cap()),
        c4.directions().iter().map(|m| m.truncate(verified, ring2.u_cap())).collect(),
    )?;
    let t_split = check_t_split(&c4, &blocks);
    if let Some(o) = &t_split.first_offense {
        return Err(DecomposeError::Stage {
            stage: "check_t_split".into(),
            source: Box::new(DecomposeError::BlockCoupling { direction: o.direction.clone(), row: o.row, col: o.col }),
        });
    }

    // factors
    let mut factors = Vec::new();
    let mut factor_vectors = Vec::new();
    let mut factor_pullback = Vec::new();
    let mut factor_maximal = Vec::new();
    let mut factor_gauges = Vec::new();
    let mut groups = Vec::new();
    for (g, b) in basis.groups.iter().zip(&blocks.blocks) {
        let others: Vec<usize> = (0..n).filter(|v| !g.contains(v)).collect();
        let block = at(
            "factor",
            Connection::new(&ring2, c4.u_matrix().select(b, b), c4.directions().iter().map(|m| m.select(b, b)).collect()),
        )?;
        let pf = at("factor_gauge", factor_gauge(&block, &others))?;
        let gauged = at("factor_gauge", gauge_apply(&block, &pf))?.map_matrices(|m| m.truncate(verified, ring2.u_cap()));
        factor_pullback.push(is_pullback(&gauged, &others));
        factor_gauges.push(pf);

        let names: Vec<String> = g.iter().map(|&v| ring.vars()[v].name.clone()).collect();
        let fring = Ring::new(names.iter().map(|x| Var::plain(x)).collect(), ring.u_name(), verified, ring2.u_cap());
        let restrict = |m: &MatSeries| m.restrict_zero(&others);
        let u = at("factor", restrict(block.u_matrix()).recast(&fring))?;
        let dirs = at("factor", g.iter().map(|&v| restrict(block.direction(v)).recast(&fring)).collect::<Result<Vec<_>, _>>())?;
        let factor = at("factor", Connection::new(&fring, u, dirs))?;
        let hv: Vec<Series> = at("factor", b.iter().map(|&i| h4[i].restrict_zero(&others).recast(&fring)).collect::<Result<Vec<_>, _>>())?;
        factor_maximal.push(maximality_and_euler(&factor, &hv).is_ok());
        factors.push(factor);
        factor_vectors.push(hv);
        groups.push(names);
    }

    // the product of the factors, read back in the reduced ring
    let pf_total = MatSeries::block_diag(&ring2, &factor_gauges);
    let c5 = at("verify", gauge_apply(&c4, &pf_total))?;
    let mut product_matches = true;
    let lift = |m: &MatSeries| m.recast(&ring2);
    let mut expect_u = Vec::new();
    for f in &factors {
        expect_u.push(at("verify", lift(f.u_matrix()))?);
    }
    let cmp = |a: &MatSeries, b: &MatSeries| a.truncate(verified, ring2.u_cap()) == b.truncate(verified, ring2.u_cap());
    product_matches &= cmp(c5.u_matrix(), &MatSeries::block_diag(&ring2, &expect_u));
    for v in 0..n {
        let mut parts = Vec::new();
        for (f, b) in factors.iter().zip(&blocks.blocks) {
            parts.push(match f.ring().var_index(&ring.vars()[v].name) {
                Some(w) => at("verify", lift(f.direction(w)))?,
                None => MatSeries::zeros(&ring2, b.len(), b.len()),
            });
        }
        product_matches &= cmp(c5.direction(v), &MatSeries::block_diag(&ring2, &parts));
    }

    let gauge = MatSeries::from_mat(&ring2, &align).mul(&p0).mul(&split.gauge).mul(&pf_total);
    let report = DecompositionReport {
        split_steps: split.steps.len(),
        t_split,
        factor_pullback,
        factor_maximal,
        product_matches,
        verified_t_cap: verified,
    };
    Ok(DecompositionResult { phi, groups, gauge, factors, factor_vectors, report })
}

/// Gauge `P` on one block with `d/dt_k P = -(A_k / u) P` along the foreign
/// directions `k` and `P = id` on the slice where they vanish; afterwards the
/// foreign direction matrices vanish.
fn factor_gauge(block: &Connection, others: &[usize]) -> Result<MatSeries, DecomposeError> {
    let ring = block.ring().clone();
    let r = block.rank();
    if others.is_empty() {
        return Ok(MatSeries::identity(&ring, r));
    }
    for &k in others {
        if !block.residue(k).is_zero() {
            return Err(DecomposeError::BlockCoupling {
                direction: ring.vars()[k].name.clone(),
                row: 0,
                col: 0,
            });
        }
    }
    let scaled: Vec<MatSeries> = others.iter().map(|&k| block.direction(k).shift_u(-1).neg()).collect();
    let rr = ring.clone();
    let rhs: Rhs = Box::new(move |flat: &[Series]| {
        let p = MatSeries::from_entries(&rr, r, r, flat.to_vec());
        Ok(scaled.iter().map(|a| a.mul(&p).entries().to_vec()).collect())
    });
    let id = MatSeries::identity(&ring, r);
    let sys = FlatSystem {
        ring: ring.clone(),
        solve_vars: others.to_vec(),
        dim: r * r,
        rhs,
        initial: Some(id.entries().to_vec()),
        check_locality: false,
    };
    let flat = solve_generalized_flat(&sys, ring.t_cap())?;
    Ok(MatSeries::from_entries(&ring, r, r, flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::rank_one_from_potential;

    #[test]
    fn newton_lift_of_quadratic_family() {
        let r = Ring::new(vec![Var::plain("t")], "u", 4, 0);
        let one = Series::one(&r);
        let zero = Series::zero(&r);
        let t = Series::var(&r, "t").unwrap();
        // basis {1, y} with y^2 = t + y
        let structure = vec![
            vec![vec![one.clone(), zero.clone()], vec![zero.clone(), one.clone()]],
            vec![vec![zero.clone(), one.clone()], vec![t.clone(), one.clone()]],
        ];
        let fam = FManifold::new(&r, structure, vec![one.clone(), zero.clone()]);
        let e = lift_idempotents(&fam, &[vec![Scalar::zero(), Scalar::one()], vec![Scalar::one(), Scalar::from_i64(-1)]], 4)
            .unwrap();
        let alpha = &e[0][0];
        assert_eq!(alpha.coeff(&[1], 0), Scalar::one());
        assert_eq!(alpha.coeff(&[2], 0), Scalar::from_i64(-3));
        let beta = one.sub(&alpha.scale(&Scalar::from_i64(2)));
        assert_eq!(e[0][1], beta);
    }

    #[test]
    fn split_example_rank_two() {
        let r = Ring::new(vec![], "u", 0, 3);
        let u = MatSeries::from_mat(&r, &Mat::from_i64(&[&[0, 0], &[0, 1]]))
            .add(&MatSeries::from_mat_term(&r, &Mat::from_i64(&[&[0, 1], &[1, 0]]), &[], 1));
        let c = Connection::new(&r, u, vec![]).unwrap();
        let s = BlockSplitting::consecutive(&[1, 1]);
        let g = split_u_gauge(&c, &s, (0, 3)).unwrap();
        assert_eq!(g.steps[0].matrix, Mat::from_i64(&[&[0, 1], &[-1, 0]]));
        let out = gauge_apply(&c, &g.gauge).unwrap();
        assert!(check_t_split(&out, &s).passed);
        assert_eq!(out.u_matrix(), &g.u_matrix);
    }

    #[test]
    fn scalar_k_rejected() {
        let r = Ring::new(vec![], "u", 0, 2);
        let u = MatSeries::from_mat_term(&r, &Mat::from_i64(&[&[0, 1], &[1, 0]]), &[], 1);
        let c = Connection::new(&r, u, vec![]).unwrap();
        let err = split_u_gauge(&c, &BlockSplitting::consecutive(&[1, 1]), (0, 2)).unwrap_err();
        assert_eq!(err, DecomposeError::AdNotInvertible(0, 1));
    }

    #[test]
    fn product_is_already_split() {
        let r1 = Ring::new(vec![Var::plain("a")], "u", 3, 2);
        let r2 = Ring::new(vec![Var::plain("b")], "u", 3, 2);
        let c1 = rank_one_from_potential(&Series::parse(&r1, "1 + a + a^2*u").unwrap());
        let c2 = rank_one_from_potential(&Series::parse(&r2, "2 + b + b^3").unwrap());
        let c = crate::connection::product(&c1, &c2).unwrap();
        let one = Series::one(c.ring());
        let out = spectral_decompose(&c, &[one.clone(), one], &BlockSplitting::consecutive(&[1, 1])).unwrap();
        assert!(out.report.passed(), "{:?}", out.report);
        assert_eq!(out.groups, vec![vec!["a".to_string()], vec!["b".to_string()]]);
        assert_eq!(out.report.split_steps, 0);
        assert_eq!(out.gauge, MatSeries::identity(out.gauge.ring(), 2));
    }
    #[test]
    fn scrambled_product_round_trip() {
        let r1 = Ring::new(vec![Var::plain("a")], "u", 4, 2);
        let r2 = Ring::new(vec![Var::plain("b")], "u", 4, 2);
        let c1 = rank_one_from_potential(&Series::parse(&r1, "1 + a + a^2*u").unwrap());
        let c2 = rank_one_from_potential(&Series::parse(&r2, "3 + 2*b + b^2").unwrap());
        let prod = crate::connection::product(&c1, &c2).unwrap();
        let r = prod.ring().clone();
        let f = vec![Series::parse(&r, "a + b^2").unwrap(), Series::parse(&r, "b + a*b + a^2").unwrap()];
        let pulled = pullback(&prod, &r, &f).unwrap();
        let g0 = Mat::from_i64(&[&[1, 2], &[1, 3]]);
        let g = MatSeries::from_mat(&r, &g0)
            .add(&MatSeries::from_mat_term(&r, &Mat::from_i64(&[&[0, 1], &[2, 0]]), &[0, 0], 1))
            .add(&MatSeries::from_mat_term(&r, &Mat::from_i64(&[&[1, 0], &[1, 1]]), &[1, 0], 0));
        let scrambled = gauge_apply(&pulled, &g).unwrap();
        let one = Series::one(&r);
        let h = g.inverse().unwrap().mul_vec(&[one.clone(), one]);
        let s = BlockSplitting::new(vec![vec![0], vec![1]], Some(g0.inverse().unwrap())).unwrap();
        let out = spectral_decompose(&scrambled, &h, &s).unwrap();
        assert!(out.report.passed(), "{:?}", out.report);
        assert!(out.report.split_steps > 0);
        let spectra: Vec<Scalar> = out.factors.iter().map(|f| f.k_at_center()[(0, 0)].clone()).collect();
        assert_eq!(spectra, vec![Scalar::from_i64(-1), Scalar::from_i64(-3)]);
    }
}
