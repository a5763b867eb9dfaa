//! Shared generators for the integration suites.
#![allow(dead_code)]

use fbundle::coeff::Scalar;
use fbundle::connection::{product, rank_one_from_potential, Connection};
use fbundle::linalg::Mat;
use fbundle::series::{MatSeries, Ring, Series, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn nonzero(rng: &mut ChaCha8Rng, bound: i64) -> i64 {
    loop {
        let v = rng.gen_range(-bound..=bound);
        if v != 0 {
            return v;
        }
    }
}

/// Random polynomial with base degree in `min_deg..=max_deg`, `u` powers up
/// to `u_max`, each monomial present with probability `density`.
pub fn random_poly(ring: &Ring, rng: &mut ChaCha8Rng, min_deg: u32, max_deg: u32, u_max: u32, density: f64) -> Series {
    let mut s = Series::zero(ring);
    let max_deg = max_deg.min(ring.t_cap());
    for b in 0..ring.num_base_monomials() {
        let d = ring.monomial_degree(b);
        if d < min_deg || d > max_deg {
            continue;
        }
        for k in 0..=u_max.min(ring.u_cap()) {
            if rng.gen_bool(density) {
                let exps = ring.monomial(b).to_vec();
                s = s.add(&Series::monomial(ring, &exps, k, Scalar::from_i64(nonzero(rng, 2))));
            }
        }
    }
    s
}

/// Integer matrix with determinant +-1: a permuted product of unitriangular
/// factors.
pub fn random_unimodular(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let mut lower = Mat::identity(n);
    let mut upper = Mat::identity(n);
    for i in 0..n {
        for j in 0..i {
            lower[(i, j)] = Scalar::from_i64(rng.gen_range(-1..=1));
            upper[(j, i)] = Scalar::from_i64(rng.gen_range(-1..=1));
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut p = Mat::zeros(n, n);
    for (i, &j) in perm.iter().enumerate() {
        p[(i, j)] = Scalar::one();
    }
    p.mul(&lower).mul(&upper)
}

/// Polynomial automorphism of the formal disk fixing the origin: invertible
/// linear part plus sparse quadratic and cubic terms.
pub fn random_automorphism(ring: &Ring, rng: &mut ChaCha8Rng) -> Vec<Series> {
    let n = ring.nvars();
    let lin = random_unimodular(rng, n);
    let vars: Vec<Series> = ring.vars().iter().map(|v| Series::var(ring, &v.name).unwrap()).collect();
    (0..n)
        .map(|i| {
            let mut s = random_poly(ring, rng, 2, 3, 0, 0.3);
            for j in 0..n {
                s = s.add(&vars[j].scale(&lin[(i, j)]));
            }
            s
        })
        .collect()
}

/// Gauge `P = P0 + X` with `X` built from monomials of base degree at least
/// `min_deg` and `u` powers up to `u_max`.
pub fn random_gauge(ring: &Ring, rng: &mut ChaCha8Rng, p0: &Mat, min_deg: u32, u_max: u32) -> MatSeries {
    let n = p0.rows();
    let mut p = MatSeries::from_mat(ring, p0);
    for i in 0..n {
        for j in 0..n {
            let x = random_poly(ring, rng, min_deg, 2, u_max, 0.25);
            p[(i, j)] = p[(i, j)].add(&x);
        }
    }
    p
}

/// Product of rank-one connections with potentials `c_i + x_i + (random
/// higher terms in x_i)`, one plain variable `x_i` per factor.
pub fn rank_one_product(
    rng: &mut ChaCha8Rng,
    constants: &[i64],
    t_cap: u32,
    u_cap: u32,
    with_u: bool,
) -> Connection {
    let mut acc: Option<Connection> = None;
    for (i, c) in constants.iter().enumerate() {
        let name = format!("x{}", i + 1);
        let r = Ring::new(vec![Var::plain(&name)], "u", t_cap, u_cap);
        let x = Series::var(&r, &name).unwrap();
        let mut psi = Series::constant(&r, Scalar::from_i64(*c)).add(&x.scale(&Scalar::from_i64(nonzero(rng, 2))));
        psi = psi.add(&random_poly(&r, rng, 2, 3, if with_u { 2 } else { 0 }, 0.5));
        let f = rank_one_from_potential(&psi);
        acc = Some(match acc {
            None => f,
            Some(a) => product(&a, &f).unwrap(),
        });
    }
    acc.unwrap()
}

/// Rank-two framed connection over `(q, t)` with nilpotent residue along the
/// logarithmic variable; `e_1` is a cyclic vector.
pub fn framed_log_example(ring: &Ring, log: &str, plain: &str) -> Connection {
    let nil = Mat::from_i64(&[&[0, 0], &[1, 0]]);
    let k = MatSeries::from_mat(ring, &Mat::from_i64(&[&[2, 0], &[3, 2]]))
        .sub(&MatSeries::scalar(&Series::var(ring, plain).unwrap(), 2));
    let zero = vec![0; ring.nvars()];
    let u = k.add(&MatSeries::from_mat_term(ring, &Mat::from_i64(&[&[0, 0], &[0, 1]]), &zero, 1));
    let mut dirs = vec![MatSeries::zeros(ring, 2, 2); 2];
    dirs[ring.var_index(log).unwrap()] = MatSeries::from_mat(ring, &nil);
    dirs[ring.var_index(plain).unwrap()] = MatSeries::identity(ring, 2);
    Connection::new(ring, u, dirs).unwrap()
}

/// Small nonzero rational.
pub fn small_scalar(rng: &mut ChaCha8Rng) -> Scalar {
    Scalar::ratio(nonzero(rng, 4), rng.gen_range(1..=3))
}
