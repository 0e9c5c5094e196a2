//! Dense Newton-Raphson core shared by the step solver, the equilibrium
//! initialization and the algebraic projection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    /// Convergence tolerance on `max |X^{k+1} − X^k|`.
    pub epsilon: f64,
    pub k_max: usize,
    /// Optional cap on the max-norm of a single update.
    pub max_step: Option<f64>,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            k_max: 20,
            max_step: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Max-norm of every update, in iteration order.
    pub update_norms: Vec<f64>,
    /// Max-norm of the residual at the last evaluated iterate.
    pub residual_norm: f64,
}

pub(crate) fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `J·dx = F` by LU with partial pivoting.
pub fn solve_dense(j: DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    if j.nrows() != j.ncols() || j.nrows() != f.len() {
        return Err(Error::Dimension(format!(
            "Jacobian {}x{} against residual of length {}",
            j.nrows(),
            j.ncols(),
            f.len()
        )));
    }
    let lu = j.lu();
    let singular = || {
        let u = lu.u();
        let (pivot, value) = u
            .diagonal()
            .iter()
            .enumerate()
            .map(|(k, v)| (k, v.abs()))
            .fold((0, f64::INFINITY), |best, cur| {
                if !(cur.1 >= best.1) {
                    cur
                } else {
                    best
                }
            });
        Error::SingularJacobian { pivot, value }
    };
    match lu.solve(f) {
        Some(dx) if dx.iter().all(|v| v.is_finite()) => Ok(dx),
        _ => Err(singular()),
    }
}

/// Iterates `X ← X − J⁻¹F` until the update max-norm drops below epsilon.
///
/// `system` returns the residual and its Jacobian at the given iterate. On
/// success `x` holds the converged point.
pub fn newton<F>(
    x: &mut DVector<f64>,
    settings: &NewtonSettings,
    mut system: F,
) -> Result<NewtonReport>
where
    F: FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let mut report = NewtonReport::default();
    for _ in 0..settings.k_max {
        let (f, j) = system(x)?;
        report.residual_norm = max_abs(&f);
        if !report.residual_norm.is_finite() {
            return Err(Error::NotConverged {
                iterations: report.iterations,
                last_update: report.update_norms.last().copied().unwrap_or(f64::NAN),
                residual: report.residual_norm,
            });
        }
        let mut dx = solve_dense(j, &f)?;
        let mut norm = max_abs(&dx);
        if let Some(cap) = settings.max_step {
            if norm > cap {
                dx *= cap / norm;
                norm = cap;
            }
        }
        *x -= &dx;
        report.iterations += 1;
        report.update_norms.push(norm);
        if norm < settings.epsilon {
            return Ok(report);
        }
    }
    Err(Error::NotConverged {
        iterations: report.iterations,
        last_update: report.update_norms.last().copied().unwrap_or(f64::NAN),
        residual: report.residual_norm,
    })
}
