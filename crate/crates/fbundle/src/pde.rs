//! Order-by-order solvers: generalized flat systems `d/dt_i phi = f_i(phi)`
//! and the formal Frobenius normalization of commuting vector fields.

use crate::connection::bracket;
use crate::linalg::Mat;
use crate::series::{Ring, Series, SeriesError, Substitution};

/// Errors raised by the solvers.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PdeError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("integrability fails at order {order} for directions ({i}, {j})")]
    FlatnessViolation { order: u32, i: usize, j: usize },
    #[error("right-hand side below order {order} depends on higher-order data")]
    DegreeLocalityViolation { order: u32 },
    #[error("residual of direction {direction}, component {component} does not vanish")]
    Residual { direction: usize, component: usize },
    #[error("vector fields {i} and {j} do not commute")]
    NonCommutingFields { i: usize, j: usize },
    #[error("vector fields are linearly dependent at the origin")]
    DegenerateFrame,
    #[error("malformed system: {0}")]
    Malformed(String),
}

/// Evaluator returning `f_i(phi)` for every solve direction `i`.
pub type Rhs<'a> = Box<dyn Fn(&[Series]) -> Result<Vec<Vec<Series>>, PdeError> + 'a>;

/// The system `d/dx_i phi = f_i(phi)` for the solve variables `x_i`; other
/// base variables and `u` act as parameters.
pub struct FlatSystem<'a> {
    pub ring: Ring,
    /// Indices (in the ring) of the differentiated variables.
    pub solve_vars: Vec<usize>,
    /// Number of components of `phi`.
    pub dim: usize,
    pub rhs: Rhs<'a>,
    /// Values of `phi` on the slice where every solve variable vanishes;
    /// zero when absent.
    pub initial: Option<Vec<Series>>,
    /// Re-evaluate with a perturbed top-degree term to confirm that lower
    /// orders of `f_i` do not depend on it.
    pub check_locality: bool,
}

impl<'a> FlatSystem<'a> {
    /// System with zero initial data in all ring variables (all plain).
    pub fn new(ring: &Ring, dim: usize, rhs: Rhs<'a>) -> FlatSystem<'a> {
        FlatSystem {
            ring: ring.clone(),
            solve_vars: (0..ring.nvars()).collect(),
            dim,
            rhs,
            initial: None,
            check_locality: true,
        }
    }
}

/// Solve up to total base degree `cap` (clamped to the ring's cap).
///
/// Degree-`d` coefficients come from degree `d-1` coefficients of `f_{i0}`
/// where `i0` is the first solve variable present in the monomial. At every
/// order the integrability condition `d_i f_j = d_j f_i` is re-checked on the
/// coefficients that order relies on.
pub fn solve_generalized_flat(sys: &FlatSystem, cap: u32) -> Result<Vec<Series>, PdeError> {
    let ring = &sys.ring;
    let cap = cap.min(ring.t_cap());
    let ns = sys.solve_vars.len();
    if sys.solve_vars.iter().any(|&v| v >= ring.nvars() || ring.vars()[v].log) {
        return Err(PdeError::Malformed("solve variables must be plain ring variables".into()));
    }
    let mut phi: Vec<Series> = match &sys.initial {
        Some(init) => {
            if init.len() != sys.dim {
                return Err(PdeError::Malformed("initial data has wrong length".into()));
            }
            init.iter().map(|s| s.restrict_zero(&sys.solve_vars)).collect()
        }
        None => vec![Series::zero(ring); sys.dim],
    };
    let eval = |phi: &[Series]| -> Result<Vec<Vec<Series>>, PdeError> {
        let f = (sys.rhs)(phi)?;
        if f.len() != ns || f.iter().any(|fi| fi.len() != sys.dim) {
            return Err(PdeError::Malformed("evaluator returned wrong shape".into()));
        }
        Ok(f)
    };
    for d in 1..=cap {
        let f = eval(&phi)?;
        check_integrability(ring, &sys.solve_vars, &f, d)?;
        if sys.check_locality && d >= 2 {
            check_locality(ring, &phi, &f, d - 1, &eval)?;
        }
        for b in ring.degree_range(d) {
            let mono = ring.monomial(b);
            let Some(pos) = sys.solve_vars.iter().position(|&v| mono[v] > 0) else {
                continue;
            };
            let v = sys.solve_vars[pos];
            let e = mono[v] as i64;
            let lb = ring.lower(v, b).unwrap();
            for (c, fc) in f[pos].iter().enumerate() {
                for k in 0..=ring.u_cap() {
                    let val = fc.coeff_at(lb, k);
                    if !val.is_zero() {
                        *phi[c].coeff_at_mut(b, k) = val * &crate::coeff::Scalar::ratio(1, e);
                    }
                }
            }
        }
    }
    // residual: d_i phi - f_i(phi) vanishes below the top degree
    let f = eval(&phi)?;
    let top = cap.saturating_sub(1);
    for (pos, &v) in sys.solve_vars.iter().enumerate() {
        for c in 0..sys.dim {
            let r = phi[c].derive(v).sub(&f[pos][c]).truncate(top, ring.u_cap());
            if !r.is_zero() {
                return Err(PdeError::Residual { direction: v, component: c });
            }
        }
    }
    Ok(phi)
}

fn check_integrability(
    ring: &Ring,
    solve_vars: &[usize],
    f: &[Vec<Series>],
    d: u32,
) -> Result<(), PdeError> {
    // degree d coefficients use f up to degree d-1, whose cross derivatives
    // must agree in degree d-2
    if d < 2 {
        return Ok(());
    }
    for a in 0..solve_vars.len() {
        for b in a + 1..solve_vars.len() {
            for c in 0..f[a].len() {
                let lhs = f[b][c].derive(solve_vars[a]).base_degree_part(d - 2);
                let rhs = f[a][c].derive(solve_vars[b]).base_degree_part(d - 2);
                if lhs != rhs {
                    return Err(PdeError::FlatnessViolation { order: d, i: solve_vars[a], j: solve_vars[b] });
                }
            }
        }
    }
    let _ = ring;
    Ok(())
}

fn check_locality(
    ring: &Ring,
    phi: &[Series],
    f: &[Vec<Series>],
    below: u32,
    eval: &dyn Fn(&[Series]) -> Result<Vec<Vec<Series>>, PdeError>,
) -> Result<(), PdeError> {
    // perturb phi in degree `below + 1`; f must not change up to `below`
    let Some(b) = ring.degree_range(below + 1).next() else {
        return Ok(());
    };
    let mut pert: Vec<Series> = phi.to_vec();
    for p in pert.iter_mut() {
        *p.coeff_at_mut(b, 0) = p.coeff_at(b, 0) + &crate::coeff::Scalar::from_i64(7);
    }
    let g = eval(&pert)?;
    for (fi, gi) in f.iter().zip(&g) {
        for (x, y) in fi.iter().zip(gi) {
            if x.truncate(below, ring.u_cap()) != y.truncate(below, ring.u_cap()) {
                return Err(PdeError::DegreeLocalityViolation { order: below + 1 });
            }
        }
    }
    Ok(())
}

/// Given commuting vector fields `Y_i = sum_j Y_i^j d/dt_j` with independent
/// values at the origin, find `phi` with `phi(0) = 0` and
/// `d phi / dt_i = Y_i(phi)`.
pub fn frobenius_normalize(fields: &[Vec<Series>], cap: u32) -> Result<Vec<Series>, PdeError> {
    let n = fields.len();
    let ring = fields
        .first()
        .map(|f| f[0].ring().clone())
        .ok_or_else(|| PdeError::Malformed("no vector fields".into()))?;
    if ring.nvars() != n || fields.iter().any(|f| f.len() != n) {
        return Err(PdeError::Malformed("need n fields with n components on an n-dimensional base".into()));
    }
    if !ring.log_vars().is_empty() {
        return Err(PdeError::Malformed("logarithmic variables are not supported here".into()));
    }
    let top = cap.min(ring.t_cap()).saturating_sub(1);
    for i in 0..n {
        for j in i + 1..n {
            let br = bracket(&fields[i], &fields[j]);
            if br.iter().any(|s| !s.truncate(top, ring.u_cap()).is_zero()) {
                return Err(PdeError::NonCommutingFields { i, j });
            }
        }
    }
    let mut frame = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            frame[(i, j)] = fields[i][j].constant_term().clone();
        }
    }
    if frame.inverse().is_none() {
        return Err(PdeError::DegenerateFrame);
    }
    let rhs: Rhs = Box::new(move |phi: &[Series]| {
        let sub = Substitution::new(&ring, phi)?;
        Ok(fields.iter().map(|y| y.iter().map(|c| sub.apply(c)).collect()).collect())
    });
    let ring = fields[0][0].ring();
    let sys = FlatSystem::new(ring, n, rhs);
    solve_generalized_flat(&sys, cap)
}
