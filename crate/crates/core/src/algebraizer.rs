//! Per-step algebraization of component dynamics.
//!
//! Each rule turns the integral of `ẋ = f(x, y)` over one step into a residual
//! `r(x_{n+1}, y_{n+1}) = 0` plus its Jacobian blocks. Boundary values `y` are
//! bus voltages in rectangular form; rules that work in polar coordinates
//! convert internally and chain the conversion into `∂r/∂y`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::machine::Polar;

/// Inputs of one component over one step.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub h: f64,
    pub x_n: &'a [f64],
    pub y_n: Complex64,
    pub y_np1: Complex64,
    /// Current Newton iterate of the end-of-step states.
    pub x_np1: &'a [f64],
}

/// `f(x, y)` and its partials; `df_dy` columns are `(Re y, Im y)`.
#[derive(Clone, Debug)]
pub struct DynEval {
    pub f: DVector<f64>,
    pub df_dx: DMatrix<f64>,
    pub df_dy: DMatrix<f64>,
}

/// Continuous-time right-hand side of a component.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], y: Complex64) -> Result<DynEval>;
}

/// Per-unit-time state increment over a step and its sensitivity to the
/// end-of-step boundary value, columns `(V_{n+1}, θ_{n+1})`.
#[derive(Clone, Debug)]
pub struct Increment {
    pub value: DVector<f64>,
    pub d_y_np1: DMatrix<f64>,
}

/// A surrogate integrator: `x_{n+1} = x_n + h·g(h, x_n, y_n, y_{n+1})`.
pub trait IncrementModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Largest step the model accepts.
    fn h_max(&self) -> f64 {
        f64::INFINITY
    }

    fn increment(&self, h: f64, x_n: &[f64], y_n: Polar, y_np1: Polar) -> Result<Increment>;
}

#[derive(Clone, Debug)]
pub enum AlgebraizerKind {
    Trapezoidal,
    BackwardEuler,
    /// Neural or exact-linear surrogate.
    Surrogate(Arc<dyn IncrementModel>),
}

impl AlgebraizerKind {
    pub fn label(&self) -> &'static str {
        match self {
            AlgebraizerKind::Trapezoidal => "trap",
            AlgebraizerKind::BackwardEuler => "be",
            AlgebraizerKind::Surrogate(_) => "nn",
        }
    }
}

/// Residual of one component with its Jacobian blocks; `dr_dy` is taken
/// with respect to the rectangular end-of-step voltage.
#[derive(Clone, Debug)]
pub struct AlgebraicResidual {
    pub r: DVector<f64>,
    pub dr_dx: DMatrix<f64>,
    pub dr_dy: DMatrix<f64>,
}

fn check_dims(ctx: &StepContext<'_>, dim: usize) -> Result<()> {
    if ctx.x_n.len() != dim || ctx.x_np1.len() != dim {
        return Err(Error::Dimension(format!(
            "component has {dim} states, step context has {} and {}",
            ctx.x_n.len(),
            ctx.x_np1.len()
        )));
    }
    Ok(())
}

/// `r = x_{n+1} − x_n − (h/2)(f(x_n, y_n) + f(x_{n+1}, y_{n+1}))`.
pub fn trapezoidal_residual(ctx: &StepContext<'_>, f: &dyn Dynamics) -> Result<AlgebraicResidual> {
    let n = f.dim();
    check_dims(ctx, n)?;
    let start = f.eval(ctx.x_n, ctx.y_n)?;
    let end = f.eval(ctx.x_np1, ctx.y_np1)?;
    let half = 0.5 * ctx.h;
    let r = DVector::from_fn(n, |i, _| {
        ctx.x_np1[i] - ctx.x_n[i] - half * (start.f[i] + end.f[i])
    });
    Ok(AlgebraicResidual {
        r,
        dr_dx: DMatrix::identity(n, n) - end.df_dx * half,
        dr_dy: end.df_dy * -half,
    })
}

/// `r = x_{n+1} − x_n − h·f(x_{n+1}, y_{n+1})`.
pub fn backward_euler_residual(
    ctx: &StepContext<'_>,
    f: &dyn Dynamics,
) -> Result<AlgebraicResidual> {
    let n = f.dim();
    check_dims(ctx, n)?;
    let end = f.eval(ctx.x_np1, ctx.y_np1)?;
    let r = DVector::from_fn(n, |i, _| ctx.x_np1[i] - ctx.x_n[i] - ctx.h * end.f[i]);
    Ok(AlgebraicResidual {
        r,
        dr_dx: DMatrix::identity(n, n) - end.df_dx * ctx.h,
        dr_dy: end.df_dy * -ctx.h,
    })
}

/// `r = x_{n+1} − x_n − h·g(h, x_n, y_n, y_{n+1})`. The increment does not
/// depend on `x_{n+1}`, so `∂r/∂x_{n+1} = I`.
pub fn surrogate_residual(
    ctx: &StepContext<'_>,
    net: &dyn IncrementModel,
) -> Result<AlgebraicResidual> {
    let n = net.dim();
    check_dims(ctx, n)?;
    if ctx.h > net.h_max() {
        return Err(Error::StepTooLarge {
            h: ctx.h,
            h_max: net.h_max(),
        });
    }
    let inc = net.increment(
        ctx.h,
        ctx.x_n,
        Polar::from_complex(ctx.y_n),
        Polar::from_complex(ctx.y_np1),
    )?;
    if inc.value.len() != n || inc.d_y_np1.shape() != (n, 2) {
        return Err(Error::Dimension(
            "surrogate increment has the wrong shape".into(),
        ));
    }
    let r = DVector::from_fn(n, |i, _| ctx.x_np1[i] - ctx.x_n[i] - ctx.h * inc.value[i]);
    let conv = polar_jacobian(ctx.y_np1);
    let mut dr_dy = DMatrix::zeros(n, 2);
    for i in 0..n {
        for c in 0..2 {
            dr_dy[(i, c)] =
                -ctx.h * (inc.d_y_np1[(i, 0)] * conv[(0, c)] + inc.d_y_np1[(i, 1)] * conv[(1, c)]);
        }
    }
    Ok(AlgebraicResidual {
        r,
        dr_dx: DMatrix::identity(n, n),
        dr_dy,
    })
}

/// `∂(V, θ)/∂(Re v, Im v)`.
pub fn polar_jacobian(v: Complex64) -> Matrix2<f64> {
    let m2 = v.norm_sqr();
    let m = m2.sqrt();
    Matrix2::new(v.re / m, v.im / m, -v.im / m2, v.re / m2)
}

/// Maps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

fn check_time(t: f64, h: f64) -> Result<()> {
    if !(0.0..=h).contains(&t) {
        return Err(Error::ProfileTime { t, h });
    }
    Ok(())
}

/// Linear evolution of a boundary value inside the step.
pub fn linear_profile(y_n: f64, y_np1: f64, t: f64, h: f64) -> Result<f64> {
    check_time(t, h)?;
    if t == h {
        return Ok(y_np1);
    }
    Ok(y_n + (y_np1 - y_n) * t / h)
}

/// Linear profile of an angle along the shorter arc. The result continues
/// from `theta_n` and is not re-wrapped.
pub fn angle_profile(theta_n: f64, theta_np1: f64, t: f64, h: f64) -> Result<f64> {
    check_time(t, h)?;
    Ok(theta_n + wrap_angle(theta_np1 - theta_n) * t / h)
}

/// Exact increment map of a linear component `ẋ = A x + B ŷ(t) + e`, where
/// `ŷ = (V, θ)` follows the linear profile over the step.
///
/// Uses the block-matrix exponential of the augmented system
/// `[x; ŷ; Δy; 1]`, so input sensitivities come out of the same exponential.
#[derive(Clone, Debug)]
pub struct ExactLinearSurrogate {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DVector<f64>,
}

impl ExactLinearSurrogate {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, e: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.shape() != (n, 2) || e.len() != n {
            return Err(Error::Dimension(format!(
                "linear component needs A n×n, B n×2, e n; got {:?}, {:?}, {}",
                a.shape(),
                b.shape(),
                e.len()
            )));
        }
        Ok(Self { a, b, e })
    }

    /// Propagator blocks `(Φ, Γ_a, Γ_b, γ)` with
    /// `x(h) = Φ x_n + Γ_a y_n + Γ_b Δy + γ`.
    pub fn propagator(&self, h: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let n = self.a.nrows();
        let dim = n + 5;
        let mut m = DMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (n, n)).copy_from(&(&self.a * h));
        m.view_mut((0, n), (n, 2)).copy_from(&(&self.b * h));
        m.view_mut((0, n + 4), (n, 1)).copy_from(&(&self.e * h));
        m[(n, n + 2)] = 1.0;
        m[(n + 1, n + 3)] = 1.0;
        let ex = m.exp();
        (
            ex.view((0, 0), (n, n)).into_owned(),
            ex.view((0, n), (n, 2)).into_owned(),
            ex.view((0, n + 2), (n, 2)).into_owned(),
            ex.view((0, n + 4), (n, 1)).column(0).into_owned(),
        )
    }
}

impl IncrementModel for ExactLinearSurrogate {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn increment(&self, h: f64, x_n: &[f64], y_n: Polar, y_np1: Polar) -> Result<Increment> {
        let n = self.dim();
        if x_n.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} states, got {}",
                x_n.len()
            )));
        }
        let xn = DVector::from_column_slice(x_n);
        let yn = DVector::from_vec(vec![y_n.v, y_n.theta]);
        let dy = DVector::from_vec(vec![y_np1.v - y_n.v, wrap_angle(y_np1.theta - y_n.theta)]);
        if h == 0.0 {
            // limit of (x(h) − x_n)/h
            let value = &self.a * &xn + &self.b * (&yn + &dy * 0.5) + &self.e;
            return Ok(Increment {
                value,
                d_y_np1: &self.b * 0.5,
            });
        }
        let (phi, ga, gb, gamma) = self.propagator(h);
        let x_h = &phi * &xn + ga * yn + &gb * dy + gamma;
        Ok(Increment {
            value: (x_h - xn) / h,
            d_y_np1: gb / h,
        })
    }
}
