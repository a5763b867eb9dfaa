//! Algebraic invariants checked on randomly generated inputs.

mod common;

use common::{random_gauge, random_poly, random_unimodular, rng};
use fbundle::coeff::Scalar;
use fbundle::connection::{gauge_apply, is_flat, Connection, ConnectionJson};
use fbundle::linalg::Mat;
use fbundle::series::{compositional_inverse, MatSeries, Ring, Series, SeriesJson, Var};
use proptest::prelude::*;

fn ring() -> Ring {
    Ring::new(vec![Var::plain("x"), Var::log("q")], "u", 4, 3)
}

fn poly(seed: u64, min_deg: u32) -> Series {
    random_poly(&ring(), &mut rng(seed), min_deg, 4, 3, 0.4)
}

fn same_conn(a: &Connection, b: &Connection) -> bool {
    a.u_matrix() == b.u_matrix() && a.directions() == b.directions()
}

/// Equality below the caps; derivatives of truncated data lose the top
/// coefficient.
fn same_conn_below_caps(a: &Connection, b: &Connection) -> bool {
    let (t, u) = (a.ring().t_cap() - 1, a.ring().u_cap() - 1);
    same_conn(&a.truncate(t, u), &b.truncate(t, u))
}

/// Flat rank-two connection over `(x, q)`: constant spectrum, log residue
/// along `q` commuting with everything.
fn flat_base(r: &Ring) -> Connection {
    let k = MatSeries::from_mat(r, &Mat::from_i64(&[&[1, 0], &[0, -1]]))
        .sub(&MatSeries::scalar(&Series::var(r, "x").unwrap(), 2));
    let dirs = vec![MatSeries::identity(r, 2), MatSeries::zeros(r, 2, 2)];
    Connection::new(r, k, dirs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn multiplication_is_commutative_and_associative(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let (f, g, h) = (poly(a, 0), poly(b, 0), poly(c, 0));
        prop_assert!(f.mul(&g) == g.mul(&f));
        prop_assert!(f.mul(&g).mul(&h) == f.mul(&g.mul(&h)));
    }

    #[test]
    fn multiplication_distributes(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let (f, g, h) = (poly(a, 0), poly(b, 0), poly(c, 0));
        prop_assert!(f.mul(&g.add(&h)) == f.mul(&g).add(&f.mul(&h)));
        prop_assert!(f.sub(&f).is_zero());
    }

    #[test]
    fn inverse_of_unit(a in any::<u64>(), c in 1i64..5) {
        let r = ring();
        let f = poly(a, 1).add(&Series::constant(&r, Scalar::from_i64(c)));
        let inv = f.inverse().unwrap();
        prop_assert!(f.mul(&inv) == Series::one(&r));
    }

    #[test]
    fn exp_and_log_are_inverse(a in any::<u64>()) {
        let f = poly(a, 1);
        prop_assert!(f.exp().unwrap().log().unwrap() == f);
    }

    #[test]
    fn derivations_obey_leibniz(a in any::<u64>(), b in any::<u64>()) {
        let (f, g) = (poly(a, 0), poly(b, 0));
        let below = |s: Series| s.truncate(3, 2);
        for v in 0..2 {
            let lhs = f.mul(&g).frame_derive(v);
            let rhs = f.frame_derive(v).mul(&g).add(&f.mul(&g.frame_derive(v)));
            prop_assert!(below(lhs) == below(rhs));
        }
        let lhs = f.mul(&g).derive_u();
        let rhs = f.derive_u().mul(&g).add(&f.mul(&g.derive_u()));
        prop_assert!(below(lhs) == below(rhs));
    }

    #[test]
    fn series_json_round_trip(a in any::<u64>()) {
        let f = poly(a, 0);
        let text = serde_json::to_string(&f.to_json()).unwrap();
        let j: SeriesJson = serde_json::from_str(&text).unwrap();
        prop_assert!(Series::from_json(&j).unwrap() == f);
    }

    #[test]
    fn compositional_inverse_undoes_map(seed in any::<u64>()) {
        let r = Ring::new(vec![Var::plain("x"), Var::plain("y")], "u", 4, 0);
        let mut g = rng(seed);
        let lin = random_unimodular(&mut g, 2);
        let vars = [Series::var(&r, "x").unwrap(), Series::var(&r, "y").unwrap()];
        let map: Vec<Series> = (0..2)
            .map(|i| {
                let mut s = random_poly(&r, &mut g, 2, 3, 0, 0.4);
                for (j, v) in vars.iter().enumerate() {
                    s = s.add(&v.scale(&lin[(i, j)]));
                }
                s
            })
            .collect();
        let inv = compositional_inverse(&map).unwrap();
        for (i, v) in vars.iter().enumerate() {
            prop_assert!(map[i].substitute(&inv).unwrap() == *v);
        }
    }

    #[test]
    fn gauge_action_composes_and_keeps_flatness(a in any::<u64>(), b in any::<u64>()) {
        let r = ring();
        let c = flat_base(&r);
        prop_assert!(is_flat(&c));
        let p = random_gauge(&r, &mut rng(a), &random_unimodular(&mut rng(a ^ 1), 2), 1, 2);
        let q = random_gauge(&r, &mut rng(b), &random_unimodular(&mut rng(b ^ 1), 2), 1, 2);
        let cp = gauge_apply(&c, &p).unwrap();
        prop_assert!(is_flat(&cp));
        let two_steps = gauge_apply(&cp, &q).unwrap();
        let one_step = gauge_apply(&c, &p.mul(&q)).unwrap();
        prop_assert!(same_conn(&two_steps, &one_step));
        let back = gauge_apply(&cp, &p.inverse().unwrap()).unwrap();
        prop_assert!(same_conn_below_caps(&back, &c));
    }

    #[test]
    fn connection_json_round_trip(a in any::<u64>()) {
        let r = ring();
        let p = random_gauge(&r, &mut rng(a), &Mat::identity(2), 1, 2);
        let c = gauge_apply(&flat_base(&r), &p).unwrap();
        let text = serde_json::to_string(&c.to_json()).unwrap();
        let j: ConnectionJson = serde_json::from_str(&text).unwrap();
        prop_assert!(same_conn(&Connection::from_json(&j).unwrap(), &c));
    }
}
