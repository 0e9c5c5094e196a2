//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use hybrid_dae::machine::{machine_f, MachineParams, MachineState};
use hybrid_dae::netmodel::load_network;
use hybrid_dae::stepper::{LinearComponent, Plant, SystemState, Unit, UnitKind};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0, |m, (x, y)| m.max(rel(*x, *y)))
}

/// Central differences of `f` at `x`, one column per coordinate.
pub fn fd_jacobian(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let rows = f(x).len();
    let mut out = DMatrix::zeros(rows, x.len());
    let mut p = x.to_vec();
    for c in 0..x.len() {
        p[c] = x[c] + step;
        let up = f(&p);
        p[c] = x[c] - step;
        let down = f(&p);
        p[c] = x[c];
        for r in 0..rows {
            out[(r, c)] = (up[r] - down[r]) / (2.0 * step);
        }
    }
    out
}

/// `exp(M)` by scaling and squaring of a truncated Taylor series.
pub fn taylor_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = m.iter().fold(0.0_f64, |s, v| s.max(v.abs())) * m.nrows() as f64;
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.1 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = m * scale;
    let n = m.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Exact discrete step of `ẋ = A x + B y(t) + e` with `y` linear from
/// `y_n` to `y_np1`, from an augmented exponential built independently.
pub fn linear_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e: &DVector<f64>,
    h: f64,
    x: &DVector<f64>,
    y_n: [f64; 2],
    y_np1: [f64; 2],
) -> DVector<f64> {
    // z = [x; y; 1], ż = [A x + B y + e; (y_np1 − y_n)/h; 0]
    let n = a.nrows();
    let mut m = DMatrix::zeros(n + 3, n + 3);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((0, n), (n, 2)).copy_from(b);
    m.view_mut((0, n + 2), (n, 1)).copy_from(e);
    m[(n, n + 2)] = (y_np1[0] - y_n[0]) / h;
    m[(n + 1, n + 2)] = (y_np1[1] - y_n[1]) / h;
    let phi = taylor_exp(&(m * h));
    let mut z = DVector::zeros(n + 3);
    z.rows_mut(0, n).copy_from(x);
    z[n] = y_n[0];
    z[n + 1] = y_n[1];
    z[n + 2] = 1.0;
    (phi * z).rows(0, n).into_owned()
}

/// One-bus network with a constant shunt `g + jb` and no machines.
pub fn shunt_bus(g: f64, b: f64) -> hybrid_dae::netmodel::NetworkModel {
    load_network(&format!(
        r#"{{"name": "shunt", "frequency_hz": 60.0,
            "buses": [{{"id": 0, "kind": "load"}}],
            "bus_shunts": [{{"bus": 0, "g": {g}, "b": {b}}}]}}"#
    ))
    .unwrap()
}

/// Linearized swing dynamics `[Δδ, Δω]` driven by the bus angle.
pub fn swing_component(injection: Vec<Complex64>, i0: Complex64) -> LinearComponent {
    let w = 2.0 * PI * 60.0;
    let (k, d, two_h) = (1.5, 1.28, 12.8);
    LinearComponent {
        a: DMatrix::from_row_slice(2, 2, &[0.0, w, -k / two_h, -d / two_h]),
        b: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.3 / two_h, k / two_h]),
        e: DVector::from_vec(vec![0.0, 0.05 / two_h]),
        injection,
        i0,
    }
}

pub fn single_linear_plant(c: LinearComponent, y: Complex64) -> Plant {
    let mut model = shunt_bus(y.re, y.im);
    model.name = "linear".into();
    Plant::new(
        model,
        vec![Unit {
            bus: 0,
            kind: UnitKind::Linear(c),
        }],
    )
    .unwrap()
}

/// Consistent start: `V` solves `i0 + c·x = Y V`.
pub fn linear_start(c: &LinearComponent, y: Complex64, x0: &[f64]) -> SystemState {
    let i = c
        .injection
        .iter()
        .zip(x0)
        .fold(c.i0, |acc, (k, v)| acc + k * v);
    SystemState {
        t: 0.0,
        x: x0.to_vec(),
        v: vec![i / y],
    }
}

/// Dormand-Prince 5(4) with step-size control.
pub fn dopri<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> [f64; N],
    t_end: f64,
    x0: [f64; N],
    rtol: f64,
    atol: f64,
) -> [f64; N] {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut t = 0.0;
    let mut x = x0;
    let mut dt = t_end / 100.0;
    while t < t_end {
        if t + dt > t_end {
            dt = t_end - t;
        }
        let mut k = [[0.0; N]; 7];
        for s in 0..7 {
            let mut xs = x;
            for (j, kj) in k.iter().enumerate().take(s) {
                for i in 0..N {
                    xs[i] += dt * A[s][j] * kj[i];
                }
            }
            k[s] = f(t + C[s] * dt, &xs);
        }
        let mut x5 = x;
        let mut err = 0.0_f64;
        for i in 0..N {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][i];
                d4 += B4[s] * k[s][i];
            }
            x5[i] += dt * d5;
            let sc = atol + rtol * x[i].abs().max(x5[i].abs());
            err = err.max((dt * (d5 - d4)).abs() / sc);
        }
        if err <= 1.0 {
            t += dt;
            x = x5;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        dt *= factor;
    }
    x
}

/// Single machine under a linear terminal-voltage profile, integrated by
/// [`dopri`] with internal voltages of classical machines held.
pub fn machine_adaptive(
    p: &MachineParams,
    f_hz: f64,
    h: f64,
    x: MachineState,
    y_n: (f64, f64),
    y_np1: (f64, f64),
) -> MachineState {
    let mut dth = y_np1.1 - y_n.1;
    while dth > PI {
        dth -= 2.0 * PI;
    }
    while dth <= -PI {
        dth += 2.0 * PI;
    }
    let out = dopri(
        |t, s: &[f64; 4]| {
            let v = y_n.0 + (y_np1.0 - y_n.0) * t / h;
            let th = y_n.1 + dth * t / h;
            machine_f(p, &MachineState::from_array(*s), v, th, f_hz).unwrap()
        },
        h,
        x.to_array(),
        1e-13,
        1e-14,
    );
    MachineState::from_array(out)
}
