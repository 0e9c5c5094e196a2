//! Two-axis synchronous machine model.
//!
//! State order is always `[E'_q, E'_d, δ, Δω]`. The terminal voltage enters in
//! rectangular form `v = V·e^{jθ}`, which keeps every partial derivative free
//! of polar singularities. Δω is expressed per-unit of nominal frequency, so
//! `δ̇ = 2πf·Δω`.
//!
//! The dq frame is tied to the network frame by `Ī = (I_d + jI_q)·e^{j(δ−π/2)}`.

mod equilibrium;

pub use equilibrium::{init_equilibrium, Equilibrium, EquilibriumOptions};

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const E_Q: usize = 0;
pub const E_D: usize = 1;
pub const DELTA: usize = 2;
pub const D_OMEGA: usize = 3;

/// Machine constants and setpoints, all per-unit on the system base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    /// Inertia constant (s).
    pub h: f64,
    /// Damping (p.u.).
    pub d: f64,
    pub xd: f64,
    pub xd_prime: f64,
    pub xq: f64,
    pub xq_prime: f64,
    pub rs: f64,
    /// d-axis open-circuit transient time constant (s).
    pub td0_prime: f64,
    /// q-axis open-circuit transient time constant (s).
    pub tq0_prime: f64,
    pub p_m: f64,
    pub e_fd: f64,
    /// Classical model: internal voltages frozen and `X_q = X'_q = X'_d`.
    #[serde(default)]
    pub classical: bool,
}

impl MachineParams {
    /// Returns the classical reduction of these parameters.
    pub fn classical(mut self) -> Self {
        self.classical = true;
        self.xq = self.xd_prime;
        self.xq_prime = self.xd_prime;
        self
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let fields = [
            ("h", self.h),
            ("d", self.d),
            ("xd", self.xd),
            ("xd_prime", self.xd_prime),
            ("xq", self.xq),
            ("xq_prime", self.xq_prime),
            ("rs", self.rs),
            ("td0_prime", self.td0_prime),
            ("tq0_prime", self.tq0_prime),
            ("p_m", self.p_m),
            ("e_fd", self.e_fd),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(schema(path, name, "must be finite"));
            }
        }
        if self.h <= 0.0 {
            return Err(schema(path, "h", "inertia constant must be positive"));
        }
        if self.xd_prime <= 0.0 {
            return Err(schema(path, "xd_prime", "must be positive"));
        }
        if !self.classical && (self.td0_prime <= 0.0 || self.tq0_prime <= 0.0) {
            return Err(schema(path, "td0_prime", "time constants must be positive"));
        }
        if self.classical && (self.xq != self.xd_prime || self.xq_prime != self.xd_prime) {
            return Err(schema(
                path,
                "xq",
                "classical machines need xq = xq_prime = xd_prime",
            ));
        }
        Ok(())
    }

    fn stator_det(&self) -> f64 {
        self.rs * self.rs + self.xd_prime * self.xq_prime
    }
}

fn schema(path: &str, field: &str, message: &str) -> Error {
    Error::Schema {
        path: format!("{path}.{field}"),
        message: message.to_string(),
    }
}

/// Differential states of one machine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    pub e_q_prime: f64,
    pub e_d_prime: f64,
    pub delta: f64,
    pub d_omega: f64,
}

impl MachineState {
    pub fn to_array(self) -> [f64; 4] {
        [self.e_q_prime, self.e_d_prime, self.delta, self.d_omega]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            e_q_prime: a[E_Q],
            e_d_prime: a[E_D],
            delta: a[DELTA],
            d_omega: a[D_OMEGA],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DqCurrents {
    pub i_d: f64,
    pub i_q: f64,
}

/// Voltage phasor in magnitude/angle form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Polar {
    pub v: f64,
    pub theta: f64,
}

impl Polar {
    pub fn new(v: f64, theta: f64) -> Self {
        Self { v, theta }
    }

    pub fn from_complex(v: Complex64) -> Self {
        Self {
            v: v.norm(),
            theta: v.arg(),
        }
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.v, self.theta)
    }
}

/// Terminal voltage projected on the rotor axes: `(V sin(δ−θ), V cos(δ−θ))`.
fn dq_voltage(delta: f64, v: Complex64) -> (f64, f64) {
    let (s, c) = delta.sin_cos();
    (s * v.re - c * v.im, c * v.re + s * v.im)
}

/// Stator currents from the 2×2 stator relation, terminal voltage in polar form.
pub fn machine_currents(
    p: &MachineParams,
    s: &MachineState,
    v: f64,
    theta: f64,
) -> Result<DqCurrents> {
    stator_currents(p, s, Complex64::from_polar(v, theta))
}

/// Stator currents for a rectangular terminal voltage.
pub fn stator_currents(p: &MachineParams, s: &MachineState, v: Complex64) -> Result<DqCurrents> {
    let det = p.stator_det();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::SingularStator { det });
    }
    let (vd, vq) = dq_voltage(s.delta, v);
    let a = s.e_d_prime - vd;
    let b = s.e_q_prime - vq;
    Ok(DqCurrents {
        i_d: (p.rs * a + p.xq_prime * b) / det,
        i_q: (-p.xd_prime * a + p.rs * b) / det,
    })
}

/// Air-gap power `E'_d I_d + E'_q I_q + (X'_q − X'_d) I_d I_q`.
pub fn electrical_power(p: &MachineParams, s: &MachineState, i: DqCurrents) -> f64 {
    s.e_d_prime * i.i_d + s.e_q_prime * i.i_q + (p.xq_prime - p.xd_prime) * i.i_d * i.i_q
}

/// Current injected into the network frame.
pub fn network_injection(s: &MachineState, i: DqCurrents) -> Complex64 {
    let (sd, cd) = s.delta.sin_cos();
    Complex64::new(i.i_d * sd + i.i_q * cd, i.i_q * sd - i.i_d * cd)
}

/// Time derivatives of `[E'_q, E'_d, δ, Δω]`, terminal voltage in polar form.
pub fn machine_f(
    p: &MachineParams,
    s: &MachineState,
    v: f64,
    theta: f64,
    frequency_hz: f64,
) -> Result<[f64; 4]> {
    rates(p, s, Complex64::from_polar(v, theta), frequency_hz)
}

/// Time derivatives of `[E'_q, E'_d, δ, Δω]` for a rectangular terminal voltage.
pub fn rates(
    p: &MachineParams,
    s: &MachineState,
    v: Complex64,
    frequency_hz: f64,
) -> Result<[f64; 4]> {
    let i = stator_currents(p, s, v)?;
    Ok(rates_from_currents(p, s, i, frequency_hz))
}

fn rates_from_currents(p: &MachineParams, s: &MachineState, i: DqCurrents, f_hz: f64) -> [f64; 4] {
    let (deq, ded) = if p.classical {
        (0.0, 0.0)
    } else {
        (
            (-s.e_q_prime - (p.xd - p.xd_prime) * i.i_d + p.e_fd) / p.td0_prime,
            (-s.e_d_prime + (p.xq - p.xq_prime) * i.i_q) / p.tq0_prime,
        )
    };
    let pe = electrical_power(p, s, i);
    [
        deq,
        ded,
        2.0 * PI * f_hz * s.d_omega,
        (p.p_m - pe - p.d * s.d_omega) / (2.0 * p.h),
    ]
}

/// Values and analytic partial derivatives of one machine at an operating point.
///
/// Columns of the `_dx` blocks follow the state order, columns of the `_dv`
/// blocks are `(Re v, Im v)`; injection rows are `(Re Ī, Im Ī)`.
#[derive(Clone, Debug)]
pub struct MachinePartials {
    pub currents: DqCurrents,
    pub rates: [f64; 4],
    pub injection: Complex64,
    pub df_dx: Matrix4<f64>,
    pub df_dv: Matrix4x2<f64>,
    pub di_dx: Matrix2x4<f64>,
    pub di_dv: Matrix2<f64>,
}

pub fn machine_jacobians(
    p: &MachineParams,
    s: &MachineState,
    v: Complex64,
    frequency_hz: f64,
) -> Result<MachinePartials> {
    let i = stator_currents(p, s, v)?;
    let det = p.stator_det();
    let (vd, vq) = dq_voltage(s.delta, v);
    let (sd, cd) = s.delta.sin_cos();

    // Partials of (a, b) = (E'_d − V_d, E'_q − V_q) with respect to
    // [E'_q, E'_d, δ, Δω, v_re, v_im].
    let da = [0.0, 1.0, -vq, 0.0, -sd, cd];
    let db = [1.0, 0.0, vd, 0.0, -cd, -sd];
    let mut did = [0.0; 6];
    let mut diq = [0.0; 6];
    for k in 0..6 {
        did[k] = (p.rs * da[k] + p.xq_prime * db[k]) / det;
        diq[k] = (-p.xd_prime * da[k] + p.rs * db[k]) / det;
    }

    let mut dpe = [0.0; 6];
    for k in 0..6 {
        dpe[k] = s.e_d_prime * did[k]
            + s.e_q_prime * diq[k]
            + (p.xq_prime - p.xd_prime) * (i.i_q * did[k] + i.i_d * diq[k]);
    }
    dpe[E_Q] += i.i_q;
    dpe[E_D] += i.i_d;

    let mut df = [[0.0; 6]; 4];
    if !p.classical {
        for k in 0..6 {
            df[E_Q][k] = -(p.xd - p.xd_prime) * did[k] / p.td0_prime;
            df[E_D][k] = (p.xq - p.xq_prime) * diq[k] / p.tq0_prime;
        }
        df[E_Q][E_Q] -= 1.0 / p.td0_prime;
        df[E_D][E_D] -= 1.0 / p.tq0_prime;
    }
    df[DELTA][D_OMEGA] = 2.0 * PI * frequency_hz;
    for k in 0..6 {
        df[D_OMEGA][k] = -dpe[k] / (2.0 * p.h);
    }
    df[D_OMEGA][D_OMEGA] -= p.d / (2.0 * p.h);

    // Ī = (I_d sδ + I_q cδ) + j(I_q sδ − I_d cδ)
    let mut dir = [0.0; 6];
    let mut dii = [0.0; 6];
    for k in 0..6 {
        dir[k] = did[k] * sd + diq[k] * cd;
        dii[k] = diq[k] * sd - did[k] * cd;
    }
    dir[DELTA] += i.i_d * cd - i.i_q * sd;
    dii[DELTA] += i.i_q * cd + i.i_d * sd;

    Ok(MachinePartials {
        currents: i,
        rates: rates_from_currents(p, s, i, frequency_hz),
        injection: network_injection(s, i),
        df_dx: Matrix4::from_fn(|r, c| df[r][c]),
        df_dv: Matrix4x2::from_fn(|r, c| df[r][4 + c]),
        di_dx: Matrix2x4::from_fn(|r, c| if r == 0 { dir[c] } else { dii[c] }),
        di_dv: Matrix2::from_fn(|r, c| if r == 0 { dir[4 + c] } else { dii[4 + c] }),
    })
}

/// Parameters of Table-1-style reference machines used by the bundled presets.
pub fn preset_params(name: &str) -> Option<MachineParams> {
    let (h, d, xd, xd_prime, xq, xq_prime, td0, tq0, p_m, e_fd) = match name {
        "m1" => (
            23.64, 2.364, 0.146, 0.0608, 0.0969, 0.0969, 8.96, 0.31, 0.71, 1.08,
        ),
        "m2" => (
            6.4, 1.28, 0.8958, 0.1969, 0.8645, 0.1969, 6.0, 0.535, 1.612, 1.32,
        ),
        "m3" => (
            3.01, 0.903, 1.3125, 0.1813, 1.2578, 0.25, 5.89, 0.6, 0.859, 1.04,
        ),
        _ => return None,
    };
    Some(
        MachineParams {
            h,
            d,
            xd,
            xd_prime,
            xq,
            xq_prime,
            rs: 0.0,
            td0_prime: td0,
            tq0_prime: tq0,
            p_m,
            e_fd,
            classical: false,
        }
        .classical(),
    )
}
