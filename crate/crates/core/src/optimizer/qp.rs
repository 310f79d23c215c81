//! Dense primal-dual interior-point solver for small convex QPs
//! `min ½ xᵀQx + cᵀx  s.t.  Gx ≤ h`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;
const STEP_FRACTION: f64 = 0.99;
/// Phase-1 optimum above this means the constraints cannot all hold.
const INFEASIBLE_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

/// First-order optimality residuals, all in infinity norm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `‖Qx + c + Gᵀz‖`
    pub stationarity: f64,
    /// `max(Gx − h, 0)`
    pub primal: f64,
    /// `max(−z, 0)`
    pub dual: f64,
    /// `max |z_i (h − Gx)_i|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Inequality multipliers.
    pub z: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.h.len()
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.n();
        if self.q.nrows() != n || self.q.ncols() != n || self.g.ncols() != n || self.g.nrows() != self.m()
        {
            return Err(Error::contract("qp dimensions do not agree"));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    pub fn residuals(&self, x: &DVector<f64>, z: &DVector<f64>) -> KktResiduals {
        let stat = &self.q * x + &self.c + self.g.transpose() * z;
        let slack = &self.h - &self.g * x;
        KktResiduals {
            stationarity: stat.amax(),
            primal: slack.iter().fold(0.0f64, |a, &s| a.max(-s)),
            dual: z.iter().fold(0.0f64, |a, &v| a.max(-v)),
            complementarity: slack
                .iter()
                .zip(z.iter())
                .fold(0.0f64, |a, (s, v)| a.max((s * v).abs())),
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0f64;
    for (a, d) in v.iter().zip(dv.iter()) {
        if *d < 0.0 {
            alpha = alpha.min(-a / d);
        }
    }
    alpha
}

fn factor(mut k: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = k.diagonal().amax().max(1.0);
    let mut reg = 0.0;
    loop {
        if let Some(ch) = k.clone().cholesky() {
            return Ok(ch);
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 10.0 };
        if reg > 1e-4 * scale {
            return Err(Error::Solver("normal matrix is not positive definite".into()));
        }
        for i in 0..k.nrows() {
            k[(i, i)] += reg;
        }
    }
}

/// Mehrotra predictor-corrector iterations from a strictly interior slack.
pub fn solve_ipm(p: &QpProblem) -> Result<QpSolution> {
    p.check_shapes()?;
    let (n, m) = (p.n(), p.m());
    let gt = p.g.transpose();
    let mut x = DVector::zeros(n);
    let mut s = (&p.h - &p.g * &x).map(|v| v.max(1.0));
    let mut z = DVector::from_element(m, 1.0);
    let scale_d = 1.0 + p.c.amax();
    let scale_p = 1.0 + p.h.amax();

    for iter in 0..MAX_ITER {
        let r_d = &p.q * &x + &p.c + &gt * &z;
        let r_p = &p.g * &x + &s - &p.h;
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
        if r_d.amax() <= TOL * scale_d && r_p.amax() <= TOL * scale_p && mu <= TOL {
            let kkt = p.residuals(&x, &z);
            return Ok(QpSolution {
                objective: p.objective(&x),
                x,
                z,
                iterations: iter,
                kkt,
            });
        }

        let w = z.component_div(&s);
        let mut k = p.q.clone();
        for i in 0..m {
            let gi = p.g.row(i);
            k += gi.transpose() * gi * w[i];
        }
        let chol = factor(k)?;

        let direction = |r_c: &DVector<f64>| {
            let t = (z.component_mul(&r_p) - r_c).component_div(&s);
            let rhs = -&r_d - &gt * t;
            let dx = chol.solve(&rhs);
            let gdx = &p.g * &dx;
            let dz = (-r_c + z.component_mul(&r_p) + z.component_mul(&gdx)).component_div(&s);
            let ds = -&r_p - gdx;
            (dx, ds, dz)
        };

        let r_c = s.component_mul(&z);
        let (_, ds_a, dz_a) = direction(&r_c);
        let alpha_a = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_a = if m > 0 {
            (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a)) / m as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_a / mu).powi(3) } else { 0.0 };
        let r_c = &r_c + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dx, ds, dz) = direction(&r_c);
        let alpha = (STEP_FRACTION * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        if !x.iter().chain(s.iter()).chain(z.iter()).all(|v| v.is_finite()) {
            return Err(Error::Solver("interior-point iterate diverged".into()));
        }
    }
    Err(Error::Solver(format!(
        "interior-point method did not converge in {MAX_ITER} iterations"
    )))
}

/// Phase-1 result: the smallest uniform relaxation `t` making `Gx ≤ h + t`
/// feasible (floored at −1), and the row carrying the largest multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub violation: f64,
    pub worst_row: Option<usize>,
}

pub fn feasibility(p: &QpProblem) -> Result<FeasibilityReport> {
    p.check_shapes()?;
    let (n, m) = (p.n(), p.m());
    let mut g = DMatrix::zeros(m + 1, n + 1);
    g.view_mut((0, 0), (m, n)).copy_from(&p.g);
    for i in 0..m {
        g[(i, n)] = -1.0;
    }
    g[(m, n)] = -1.0;
    let mut h = DVector::zeros(m + 1);
    h.rows_mut(0, m).copy_from(&p.h);
    h[m] = 1.0;
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    // A tiny proximal term keeps the normal matrix definite when x is
    // otherwise unconstrained by the LP.
    let q = DMatrix::identity(n + 1, n + 1) * 1e-12;
    let sol = solve_ipm(&QpProblem { q, c, g, h })?;
    let t = sol.x[n];
    let worst_row = (0..m)
        .max_by(|&a, &b| sol.z[a].total_cmp(&sol.z[b]))
        .filter(|_| t > INFEASIBLE_MARGIN);
    Ok(FeasibilityReport {
        violation: t,
        worst_row,
    })
}

pub fn is_infeasible(report: &FeasibilityReport) -> bool {
    report.violation > INFEASIBLE_MARGIN
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constrained_quadratic() {
        // min (x-2)^2 s.t. x <= 1
        let p = QpProblem {
            q: DMatrix::from_element(1, 1, 2.0),
            c: DVector::from_element(1, -4.0),
            g: DMatrix::from_element(1, 1, 1.0),
            h: DVector::from_element(1, 1.0),
        };
        let sol = solve_ipm(&p).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-8);
        assert!((sol.z[0] - 2.0).abs() < 1e-7);
        assert!(sol.kkt.max() < 1e-7);
    }

    #[test]
    fn unconstrained_optimum_inside() {
        let p = QpProblem {
            q: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            c: DVector::from_row_slice(&[-1.0, -1.0]),
            g: DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            h: DVector::from_element(4, 10.0),
        };
        let sol = solve_ipm(&p).unwrap();
        let exact = p.q.clone().lu().solve(&(-&p.c)).unwrap();
        assert!((&sol.x - exact).amax() < 1e-8);
    }

    #[test]
    fn linear_program() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0 → (1.6, 1.2)
        let p = QpProblem {
            q: DMatrix::zeros(2, 2),
            c: DVector::from_row_slice(&[-1.0, -1.0]),
            g: DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            h: DVector::from_row_slice(&[4.0, 6.0, 0.0, 0.0]),
        };
        let sol = solve_ipm(&p).unwrap();
        assert!((sol.x[0] - 1.6).abs() < 1e-7 && (sol.x[1] - 1.2).abs() < 1e-7);
    }

    #[test]
    fn detects_infeasibility() {
        // x <= -1 and x >= 1
        let p = QpProblem {
            q: DMatrix::identity(1, 1),
            c: DVector::zeros(1),
            g: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            h: DVector::from_row_slice(&[-1.0, -1.0]),
        };
        let rep = feasibility(&p).unwrap();
        assert!(is_infeasible(&rep));
        assert!((rep.violation - 1.0).abs() < 1e-6);
        assert!(rep.worst_row.is_some());
    }

    #[test]
    fn feasible_problem_passes_phase_one() {
        let p = QpProblem {
            q: DMatrix::identity(1, 1),
            c: DVector::zeros(1),
            g: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            h: DVector::from_row_slice(&[1.0, 1.0]),
        };
        assert!(!is_infeasible(&feasibility(&p).unwrap()));
    }
}
