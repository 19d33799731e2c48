//! Dense convex quadratic programming.
//!
//! Solves `min ½xᵀHx + cᵀx  s.t.  A x = b,  G x ≤ h` with `H` positive
//! semi-definite. Equalities are eliminated with a rank-revealing SVD, the
//! remaining inequality-constrained problem is solved by a Mehrotra
//! predictor-corrector interior-point method, and the result is polished by an
//! exact solve on the detected active set.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const MAX_ITERATIONS: usize = 200;
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("equality constraints are inconsistent (residual {residual:.3e})")]
    InconsistentEqualities { residual: f64 },
    #[error("inequality constraints are infeasible")]
    Infeasible,
    #[error("interior-point method did not converge in {0} iterations")]
    NotConverged(usize),
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_vector: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_vector: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `A x = b` (sign convention: `Hx + c + Aᵀy + Gᵀz = 0`).
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub iterations: usize,
    pub polished: bool,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        QpProblem {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, n),
            eq_vector: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_vector: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_vector = b;
        self
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.ineq_matrix = g;
        self.ineq_vector = h;
        self
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    /// Stationarity residual `‖Hx + c + Aᵀy + Gᵀz‖∞`.
    pub fn stationarity(&self, sol: &QpSolution) -> f64 {
        let r = &self.hessian * &sol.x
            + &self.gradient
            + self.eq_matrix.transpose() * &sol.eq_multipliers
            + self.ineq_matrix.transpose() * &sol.ineq_multipliers;
        r.amax()
    }

    /// Largest `|z_i (h_i - G_i x)|`.
    pub fn complementarity(&self, sol: &QpSolution) -> f64 {
        let slack = &self.ineq_vector - &self.ineq_matrix * &sol.x;
        slack.iter().zip(sol.ineq_multipliers.iter()).map(|(s, z)| (s * z).abs()).fold(0.0, f64::max)
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = if self.eq_vector.is_empty() { 0.0 } else { (&self.eq_matrix * x - &self.eq_vector).amax() };
        let ineq = (&self.ineq_matrix * x - &self.ineq_vector).iter().fold(0.0f64, |m, v| m.max(*v));
        eq.max(ineq)
    }
}

/// Orthonormal null-space basis and minimum-norm particular solution of `A x = b`.
pub struct EqualityElimination {
    pub particular: DVector<f64>,
    pub null_basis: DMatrix<f64>,
    pub residual: f64,
    pub rank: usize,
}

pub fn eliminate_equalities(a: &DMatrix<f64>, b: &DVector<f64>) -> EqualityElimination {
    let (p, n) = a.shape();
    if p == 0 {
        return EqualityElimination {
            particular: DVector::zeros(n),
            null_basis: DMatrix::identity(n, n),
            residual: 0.0,
            rank: 0,
        };
    }
    // pad to a square matrix so the SVD returns a complete right basis
    let rows = p.max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (p, n)).copy_from(a);
    let svd = padded.svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let smax = svd.singular_values.max();
    let tol = RANK_TOL * smax.max(1e-300);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).unwrap());
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > tol).count();

    let mut padded_b = DVector::zeros(rows);
    padded_b.rows_mut(0, p).copy_from(b);
    let mut x = DVector::zeros(n);
    for &i in order.iter().take(rank) {
        let coeff = u.column(i).dot(&padded_b) / svd.singular_values[i];
        x += vt.row(i).transpose() * coeff;
    }
    let mut basis = DMatrix::zeros(n, n - rank);
    for (c, &i) in order.iter().skip(rank).take(n - rank).enumerate() {
        basis.set_column(c, &vt.row(i).transpose());
    }
    let residual = (a * &x - b).amax();
    EqualityElimination { particular: x, null_basis: basis, residual, rank }
}

pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    let n = problem.gradient.len();
    let elim = eliminate_equalities(&problem.eq_matrix, &problem.eq_vector);
    let scale = 1.0 + problem.eq_vector.amax();
    if elim.residual > 1e-9 * scale {
        return Err(QpError::InconsistentEqualities { residual: elim.residual });
    }
    let z_basis = &elim.null_basis;
    let x0 = &elim.particular;
    let h_red = z_basis.transpose() * &problem.hessian * z_basis;
    let c_red = z_basis.transpose() * (&problem.hessian * x0 + &problem.gradient);
    let g_red = &problem.ineq_matrix * z_basis;
    let b_red = &problem.ineq_vector - &problem.ineq_matrix * x0;

    let (y, z, iterations, polished) = if z_basis.ncols() == 0 {
        let slack = &b_red;
        if slack.iter().any(|s| *s < -1e-9 * (1.0 + s.abs())) {
            return Err(QpError::Infeasible);
        }
        (DVector::zeros(0), DVector::zeros(problem.ineq_vector.len()), 0, false)
    } else {
        let r = interior_point(&h_red, &c_red, &g_red, &b_red)?;
        let (y, z, polished) = polish(&h_red, &c_red, &g_red, &b_red, &r.x, &r.z, &r.s).map_or((r.x, r.z, false), |(x, z)| (x, z, true));
        (y, z, r.iterations, polished)
    };
    let x = if y.is_empty() { x0.clone() } else { x0 + z_basis * &y };

    // equality multipliers by least squares on the stationarity condition
    let eq_multipliers = if problem.eq_vector.is_empty() {
        DVector::zeros(0)
    } else {
        let rhs = -(&problem.hessian * &x + &problem.gradient + problem.ineq_matrix.transpose() * &z);
        let at = problem.eq_matrix.transpose();
        at.svd(true, true).solve(&rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(problem.eq_vector.len()))
    };
    debug_assert_eq!(x.len(), n);
    Ok(QpSolution { x, eq_multipliers, ineq_multipliers: z, iterations, polished })
}

struct IpmResult {
    x: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    iterations: usize,
}

fn factor_solve(k: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = k.clone().cholesky() {
        return ch.solve(rhs);
    }
    let n = k.nrows();
    let reg = 1e-12 * (1.0 + k.diagonal().amax());
    let mut kr = k.clone();
    for i in 0..n {
        kr[(i, i)] += reg;
    }
    match kr.clone().cholesky() {
        Some(ch) => ch.solve(rhs),
        None => kr.svd(true, true).solve(rhs, 1e-14).unwrap_or_else(|_| DVector::zeros(n)),
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = 1.0f64;
    for (x, d) in v.iter().zip(dv.iter()) {
        if *d < 0.0 {
            a = a.min(-x / d);
        }
    }
    a
}

fn interior_point(h: &DMatrix<f64>, c: &DVector<f64>, g: &DMatrix<f64>, b: &DVector<f64>) -> Result<IpmResult, QpError> {
    let n = c.len();
    let m = b.len();
    if m == 0 {
        let x = factor_solve(h, &(-c));
        return Ok(IpmResult { x, z: DVector::zeros(0), s: DVector::zeros(0), iterations: 0 });
    }
    let gt = g.transpose();
    // initial point from the regularized least-squares system
    let mut x = factor_solve(&(h + &gt * g), &(-c + &gt * b));
    let mut s = b - g * &x;
    let smin = s.min();
    if smin < 1.0 {
        s.add_scalar_mut(1.0 - smin);
    }
    let mut z = DVector::from_element(m, 1.0);

    let scale_d = 1.0 + c.amax() + h.amax();
    let scale_p = 1.0 + b.amax();
    for it in 0..MAX_ITERATIONS {
        let r_d = h * &x + c + &gt * &z;
        let r_p = g * &x + &s - b;
        let mu = s.dot(&z) / m as f64;
        if r_d.amax() <= 1e-11 * scale_d && r_p.amax() <= 1e-11 * scale_p && mu <= 1e-13 * scale_d.max(scale_p) {
            return Ok(IpmResult { x, z, s, iterations: it });
        }
        let w = z.component_div(&s);
        let mut k = h.clone();
        let gw = DMatrix::from_fn(m, n, |i, j| g[(i, j)] * w[i]);
        k += &gt * gw;

        let solve_dir = |r_c: &DVector<f64>| {
            let t = (z.component_mul(&r_p) - r_c).component_div(&s);
            let dx = factor_solve(&k, &(-&r_d - &gt * t));
            let ds = -&r_p - g * &dx;
            let dz = (z.component_mul(&(g * &dx + &r_p)) - r_c).component_div(&s);
            (dx, ds, dz)
        };

        let rc_aff = s.component_mul(&z);
        let (_, ds_a, dz_a) = solve_dir(&rc_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        let rc = rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dx, ds, dz) = solve_dir(&rc);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        // keep strictly interior
        s.apply(|v| *v = v.max(1e-300));
        z.apply(|v| *v = v.max(1e-300));

        if z.amax() > 1e14 * scale_d {
            return Err(QpError::Infeasible);
        }
    }
    let r_p = g * &x + &s - b;
    if r_p.amax() > 1e-6 * scale_p {
        Err(QpError::Infeasible)
    } else {
        Err(QpError::NotConverged(MAX_ITERATIONS))
    }
}

/// Exact solve on the active set guessed from the interior-point iterate.
fn polish(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    b: &DVector<f64>,
    x_ipm: &DVector<f64>,
    z_ipm: &DVector<f64>,
    s_ipm: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = c.len();
    let m = b.len();
    let active: Vec<usize> = (0..m).filter(|&i| z_ipm[i] > s_ipm[i]).collect();
    let na = active.len();
    let mut kkt = DMatrix::zeros(n + na, n + na);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    let mut rhs = DVector::zeros(n + na);
    rhs.rows_mut(0, n).copy_from(&(-c));
    for (r, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = g[(i, j)];
            kkt[(j, n + r)] = g[(i, j)];
        }
        rhs[n + r] = b[i];
    }
    let sol = kkt.clone().lu().solve(&rhs)?;
    if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut z = DVector::zeros(m);
    for (r, &i) in active.iter().enumerate() {
        z[i] = sol[n + r];
    }
    let tol = 1e-9 * (1.0 + b.amax());
    if z.iter().any(|v| *v < -1e-9 * (1.0 + z_ipm.amax())) {
        return None;
    }
    if (g * &x - b).iter().any(|v| *v > tol) {
        return None;
    }
    let obj = |v: &DVector<f64>| 0.5 * v.dot(&(h * v)) + c.dot(v);
    if obj(&x) > obj(x_ipm) + 1e-9 * (1.0 + obj(x_ipm).abs()) {
        return None;
    }
    z.apply(|v| *v = v.max(0.0));
    Some((x, z))
}
