//! Non-archimedean convergence certificates.
//!
//! Solvers run over truncated Laurent series `Q((s))`; norms are handled
//! additively through the `s`-adic valuation (`|x| = r^val(x)` with
//! `r < 1`), so every norm inequality becomes an integer inequality checked
//! exactly. A missing valuation (`None`) stands for a zero value, that is
//! `+infinity`.

use crate::coeff::Scalar;
use crate::connection::Connection;
use crate::decompose::{split_u_gauge_traced, BlockSplitting, DecomposeError, RemainderSnapshot};
use crate::linalg::Mat;
use crate::pde::{solve_generalized_flat, FlatSystem, PdeError, Rhs};
use crate::series::{MatSeries, Ring, Series, SeriesError, Substitution, Var};
use serde::{Deserialize, Serialize};

/// Errors raised while producing certificates.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NaCertError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error("no admissible radii among {tested} tested pairs")]
    NoAdmissibleRegion { tested: usize },
    #[error("malformed input: {0}")]
    Malformed(String),
}

/// `s`-adic valuation; `None` for zero.
pub fn valuation(x: &Scalar) -> Option<i64> {
    x.laurent_valuation()
}

/// Minimal coefficient valuation of a series.
pub fn series_valuation(f: &Series) -> Option<i64> {
    f.terms().filter_map(|(_, _, c)| valuation(c)).min()
}

/// Minimal entry valuation of a matrix.
pub fn mat_valuation(m: &Mat) -> Option<i64> {
    m.entries().iter().filter_map(valuation).min()
}

fn add_val(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    Some(a? + b?)
}

fn ge(a: Option<i64>, b: Option<i64>) -> bool {
    match (a, b) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(x), Some(y)) => x >= y,
    }
}

fn gt(a: Option<i64>, b: Option<i64>) -> bool {
    match (a, b) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(x), Some(y)) => x > y,
    }
}

/// One checked inequality `lhs >= rhs` (or `>` when strict).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Inequality {
    pub label: String,
    pub lhs: Option<i64>,
    pub rhs: Option<i64>,
    pub strict: bool,
    pub holds: bool,
}

impl Inequality {
    fn new(label: String, lhs: Option<i64>, rhs: Option<i64>, strict: bool) -> Inequality {
        let holds = if strict { gt(lhs, rhs) } else { ge(lhs, rhs) };
        Inequality { label, lhs, rhs, strict, holds }
    }
}

/// A list of checked inequalities; passes iff every one holds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValuationCertificate {
    pub solver: String,
    pub parameters: Vec<(String, Option<i64>)>,
    pub inequalities: Vec<Inequality>,
    pub passed: bool,
}

impl ValuationCertificate {
    fn new(solver: &str, parameters: Vec<(String, Option<i64>)>, inequalities: Vec<Inequality>) -> Self {
        let passed = inequalities.iter().all(|i| i.holds);
        ValuationCertificate { solver: solver.into(), parameters, inequalities, passed }
    }

    pub fn first_failure(&self) -> Option<&Inequality> {
        self.inequalities.iter().find(|i| !i.holds)
    }
}

// ---------------------------------------------------------------------------
// generalized flat systems

/// `d f / d t_i = Y_i(t, f)` with `Y_i` polynomial in the unknowns `f`.
#[derive(Clone, Debug)]
pub struct PolynomialFlatSystem {
    pub base: Ring,
    /// Base variables followed by the unknowns.
    pub joint: Ring,
    pub unknowns: Vec<String>,
    /// `rhs[i][k]`: component `k` of `Y_i`, in the joint ring.
    pub rhs: Vec<Vec<Series>>,
}

/// JSON form of a [`PolynomialFlatSystem`]; coefficients may be bracketed
/// Laurent literals such as `[s^-1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatSystemJson {
    pub vars: Vec<String>,
    pub unknowns: Vec<String>,
    pub rhs: Vec<Vec<String>>,
    pub order: u32,
}

impl PolynomialFlatSystem {
    pub fn new(base: &Ring, unknowns: &[String], rhs: &[Vec<String>]) -> Result<Self, NaCertError> {
        if !base.log_vars().is_empty() {
            return Err(NaCertError::Malformed("logarithmic variables are not supported".into()));
        }
        if rhs.len() != base.nvars() || rhs.iter().any(|r| r.len() != unknowns.len()) {
            return Err(NaCertError::Malformed("need one right-hand side per variable and unknown".into()));
        }
        let vars: Vec<Var> = base.vars().iter().cloned().chain(unknowns.iter().map(|n| Var::plain(n))).collect();
        let joint = Ring::new(vars, base.u_name(), base.t_cap(), base.u_cap());
        let rhs = rhs
            .iter()
            .map(|r| r.iter().map(|t| Series::parse(&joint, t)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PolynomialFlatSystem { base: base.clone(), joint, unknowns: unknowns.to_vec(), rhs })
    }

    pub fn from_json(j: &FlatSystemJson) -> Result<Self, NaCertError> {
        let vars = j.vars.iter().map(|n| Var::plain(n)).collect();
        let base = Ring::new(vars, "u", j.order, 0);
        PolynomialFlatSystem::new(&base, &j.unknowns, &j.rhs)
    }

    /// `min(0, minimal coefficient valuation of the right-hand sides)`.
    pub fn y_valuation(&self) -> i64 {
        self.rhs.iter().flatten().filter_map(series_valuation).min().unwrap_or(0).min(0)
    }

    /// Formal solution with zero initial data.
    pub fn solve(&self, cap: u32) -> Result<Vec<Series>, NaCertError> {
        let base = self.base.clone();
        let rhs_data = self.rhs.clone();
        let joint = self.joint.clone();
        let rhs: Rhs = Box::new(move |f: &[Series]| {
            let args: Vec<Series> = (0..base.nvars())
                .map(|v| Series::var(&base, &base.vars()[v].name))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .chain(f.iter().cloned())
                .collect();
            let sub = Substitution::new(&joint, &args)?;
            Ok(rhs_data.iter().map(|y| y.iter().map(|c| sub.apply(c)).collect()).collect())
        });
        let sys = FlatSystem::new(&self.base, self.unknowns.len(), rhs);
        Ok(solve_generalized_flat(&sys, cap)?)
    }
}

/// Check `val(f_(k, alpha)) >= |alpha| v_Y` for every stored coefficient of
/// the solution, `v_Y` being the system's [`PolynomialFlatSystem::y_valuation`].
pub fn certify_generalized_flat(sys: &PolynomialFlatSystem, solution: &[Series]) -> ValuationCertificate {
    let vy = sys.y_valuation();
    let ring = &sys.base;
    let mut ineqs = Vec::new();
    for (k, f) in solution.iter().enumerate() {
        for (b, upow, c) in f.terms() {
            let deg = ring.monomial_degree(b) as i64;
            ineqs.push(Inequality::new(
                format!("component {k} at {:?} u^{upow}", ring.monomial(b)),
                valuation(c),
                Some(deg * vy),
                false,
            ));
        }
    }
    ValuationCertificate::new("generalized_flat", vec![("v_Y".into(), Some(vy))], ineqs)
}

// ---------------------------------------------------------------------------
// the u-split gauge

/// Additive norm of a remainder profile at radii with valuations
/// `(u_radius, t_radius)`.
fn profile_valuation(profile: &[(u32, u32, i64)], u_radius: i64, t_radius: i64) -> Option<i64> {
    profile.iter().map(|&(tdeg, upow, v)| v + tdeg as i64 * t_radius + upow as i64 * u_radius).min()
}

/// Admissible radii and the certificate at the chosen pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SplitCertificate {
    /// Every admissible `(u radius, t radius)` valuation pair in the grid.
    pub region: Vec<(i64, i64)>,
    pub chosen: (i64, i64),
    pub certificate: ValuationCertificate,
}

/// Check the chain
/// `val(u^m t^v T) >= val(phi) + val(V_(m,v)) >= val(phi) + val(V_(m,0))
///  >= val(phi) + val(V_(1,0)) > 0`
/// at every recorded step, plus `val(u radius) + val(phi) >= 0`. Radii are
/// given by valuations `(u_radius, t_radius)`.
pub fn split_chain_certificate(
    snapshots: &[RemainderSnapshot],
    steps: &[(u32, u32, Option<i64>)],
    phi_val: Option<i64>,
    radii: (i64, i64),
) -> ValuationCertificate {
    let (ur, tr) = radii;
    let head = |m: u32| snapshots.iter().find(|s| s.u_power == m && s.exponents.iter().all(|&e| e == 0));
    let v10 = snapshots.first().and_then(|s| profile_valuation(&s.profile, ur, tr));
    let mut ineqs = vec![
        Inequality::new("u radius times |phi| <= 1".into(), add_val(Some(ur), phi_val), Some(0), false),
        Inequality::new("|phi| |V_(1,0)| < 1".into(), add_val(phi_val, v10), Some(0), true),
    ];
    for snap in snapshots {
        let vmv = profile_valuation(&snap.profile, ur, tr);
        let vm0 = head(snap.u_power).and_then(|s| profile_valuation(&s.profile, ur, tr));
        let at = format!("(m = {}, v = {:?})", snap.u_power, snap.exponents);
        if let Some(&(m, tdeg, tval)) = snap.step.and_then(|i| steps.get(i)) {
            let lhs = tval.map(|v| v + tdeg as i64 * tr + m as i64 * ur);
            ineqs.push(Inequality::new(format!("|u^m t^v T| <= |phi| |V| at {at}"), lhs, add_val(phi_val, vmv), false));
        }
        ineqs.push(Inequality::new(format!("|V_(m,v)| <= |V_(m,0)| at {at}"), vmv, vm0, false));
        ineqs.push(Inequality::new(format!("|V_(m,0)| <= |V_(1,0)| at {at}"), vm0, v10, false));
    }
    ValuationCertificate::new(
        "split_u",
        vec![("u_radius".into(), Some(ur)), ("t_radius".into(), Some(tr)), ("phi".into(), phi_val)],
        ineqs,
    )
}

/// Run the split gauge with tracing and search the grid
/// `0..=grid x 0..=grid` of radius valuations for pairs where the whole
/// chain holds. `phi_override` replaces the valuation of the ad-inverse
/// (used to inflate `|phi|`).
pub fn certify_split_u(
    c: &Connection,
    s: &BlockSplitting,
    caps: (u32, u32),
    grid: i64,
    phi_override: Option<i64>,
) -> Result<SplitCertificate, NaCertError> {
    let split = split_u_gauge_traced(c, s, caps, true)?;
    let phi_val = phi_override.or_else(|| mat_valuation(&split.ad_inverse));
    let steps: Vec<(u32, u32, Option<i64>)> = split
        .steps
        .iter()
        .map(|st| {
            let tdeg: u32 = st.exponents.iter().sum();
            (st.u_power, tdeg, mat_valuation(&st.matrix))
        })
        .collect();
    let mut region = Vec::new();
    let mut tested = 0;
    for ur in 0..=grid {
        for tr in 0..=grid {
            tested += 1;
            if split_chain_certificate(&split.snapshots, &steps, phi_val, (ur, tr)).passed {
                region.push((ur, tr));
            }
        }
    }
    let Some(&chosen) = region.first() else {
        return Err(NaCertError::NoAdmissibleRegion { tested });
    };
    let certificate = split_chain_certificate(&split.snapshots, &steps, phi_val, chosen);
    Ok(SplitCertificate { region, chosen, certificate })
}

// ---------------------------------------------------------------------------
// framing transcripts

/// Check that the framing gauge converges on the disk of radius
/// `min(1, 1/|T|)`: every coefficient of `P` at base degree `l` has
/// valuation at least `l min(0, v_T)`, with `v_T` the minimal coefficient
/// valuation of the connection data.
pub fn certify_framing(c: &Connection, gauge: &MatSeries) -> ValuationCertificate {
    let ring = c.ring();
    let data_val = std::iter::once(c.u_matrix())
        .chain(c.directions().iter())
        .flat_map(|m| m.entries().iter().filter_map(series_valuation).collect::<Vec<_>>())
        .min()
        .unwrap_or(0)
        .min(0);
    let mut ineqs = Vec::new();
    for (b, k) in gauge.support() {
        let v = mat_valuation(&gauge.coeff_mat_at(b, k));
        let deg = ring.monomial_degree(b) as i64;
        ineqs.push(Inequality::new(format!("P at {:?} u^{k}", ring.monomial(b)), v, Some(deg * data_val), false));
    }
    ValuationCertificate::new("framing", vec![("alpha".into(), Some(data_val))], ineqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framing::extend_framing;

    fn one_var(cap: u32) -> Ring {
        Ring::new(vec![Var::plain("t")], "u", cap, 0)
    }

    #[test]
    fn exponential_instance_is_tight() {
        let sys = PolynomialFlatSystem::new(&one_var(10), &["f".into()], &[vec!["[s^-1] + [s^-1]*f".into()]]).unwrap();
        let f = sys.solve(10).unwrap();
        let cert = certify_generalized_flat(&sys, &f);
        assert!(cert.passed);
        assert_eq!(cert.inequalities.len(), 10);
        assert!(cert.inequalities.iter().all(|i| i.lhs == i.rhs));
        let mut fact = Scalar::one();
        for k in 1..=10i64 {
            fact = &fact * &Scalar::from_i64(k);
            let expect = &Scalar::s_power(-k, crate::coeff::DEFAULT_LAURENT_CAP) * &fact.inv().unwrap();
            assert_eq!(f[0].coeff(&[k as u32], 0), expect);
        }
    }

    #[test]
    fn zero_and_integral_systems() {
        let sys = PolynomialFlatSystem::new(&one_var(4), &["f".into()], &[vec!["0".into()]]).unwrap();
        let f = sys.solve(4).unwrap();
        assert!(f[0].is_zero());
        assert!(certify_generalized_flat(&sys, &f).passed);
        let sys = PolynomialFlatSystem::new(&one_var(5), &["f".into()], &[vec!["[1 + s] + [s]*f^2".into()]]).unwrap();
        let f = sys.solve(5).unwrap();
        let cert = certify_generalized_flat(&sys, &f);
        assert!(cert.passed);
        assert!(cert.inequalities.iter().all(|i| i.lhs.is_none_or(|v| v >= 0)));
    }

    #[test]
    fn laurent_run_reduces_to_rational_run() {
        let sys = PolynomialFlatSystem::new(&one_var(6), &["f".into()], &[vec!["[1 + s] + [1 - s]*f^2".into()]]).unwrap();
        let red = PolynomialFlatSystem::new(&one_var(6), &["f".into()], &[vec!["1 + f^2".into()]]).unwrap();
        let (f, g) = (sys.solve(6).unwrap(), red.solve(6).unwrap());
        for (b, k, c) in g[0].terms() {
            assert_eq!(&f[0].coeff_at(b, k).laurent_coeff(0), c);
        }
    }

    fn laurent_instance(ring: &Ring) -> Connection {
        let cap = crate::coeff::DEFAULT_LAURENT_CAP;
        let k = Mat::from_i64(&[&[1, 0], &[0, -1]]);
        let v1 = Mat::from_rows(vec![vec![Scalar::zero(), Scalar::s_power(-1, cap)], vec![Scalar::one(), Scalar::zero()]]);
        let v2 = Mat::from_rows(vec![vec![Scalar::one(), Scalar::s_power(1, cap)], vec![Scalar::s_power(2, cap), Scalar::zero()]]);
        let zero = vec![0; ring.nvars()];
        let u = MatSeries::from_mat(ring, &k)
            .add(&MatSeries::from_mat_term(ring, &v1, &zero, 1))
            .add(&MatSeries::from_mat_term(ring, &v2, &zero, 2));
        Connection::new(ring, u, vec![MatSeries::zeros(ring, 2, 2)]).unwrap()
    }

    #[test]
    fn split_chain_admissible_and_inflated() {
        let ring = Ring::new(vec![Var::plain("t")], "u", 2, 5);
        let c = laurent_instance(&ring);
        let s = BlockSplitting::consecutive(&[1, 1]);
        let cert = certify_split_u(&c, &s, (2, 5), 6, None).unwrap();
        assert!(cert.certificate.passed);
        // monotone: loosening either radius keeps the pass
        for &(a, b) in &cert.region {
            for next in [(a + 1, b), (a, b + 1)] {
                if next.0 <= 6 && next.1 <= 6 {
                    assert!(cert.region.contains(&next), "{next:?}");
                }
            }
        }
        let err = certify_split_u(&c, &s, (2, 5), 6, Some(-100)).unwrap_err();
        assert_eq!(err, NaCertError::NoAdmissibleRegion { tested: 49 });
    }

    #[test]
    fn constant_remainder_passes_trivially() {
        let ring = Ring::new(vec![Var::plain("t")], "u", 2, 3);
        let u = MatSeries::from_mat(&ring, &Mat::from_i64(&[&[1, 0], &[0, -1]]));
        let c = Connection::new(&ring, u, vec![MatSeries::zeros(&ring, 2, 2)]).unwrap();
        let cert = certify_split_u(&c, &BlockSplitting::consecutive(&[1, 1]), (2, 3), 0, None).unwrap();
        assert!(cert.certificate.passed);
        assert_eq!(cert.chosen, (0, 0));
    }

    #[test]
    fn framing_gauge_bound() {
        let ring = Ring::new(vec![Var::plain("t")], "u", 6, 2);
        let t = MatSeries::from_entries(&ring, 1, 1, vec![Series::parse(&ring, "1 + [s^-1]*u").unwrap()]);
        let c = Connection::new(&ring, MatSeries::zeros(&ring, 1, 1), vec![t]).unwrap();
        let f = extend_framing(&c).unwrap();
        let cert = certify_framing(&c, &f.gauge);
        assert!(cert.passed, "{:?}", cert.first_failure());
    }
}
