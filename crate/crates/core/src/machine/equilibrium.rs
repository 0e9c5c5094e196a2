//! Steady operating point of the whole system.
//!
//! Solves `f = 0`, `g = 0` by Newton-Raphson from a flat start. Each machine
//! holds its terminal voltage magnitude at `v_set`; its internal voltages (and
//! for two-axis machines the field voltage) are unknowns. The reference
//! machine's rotor angle is pinned to zero and its mechanical power becomes
//! the balancing unknown.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{machine_jacobians, MachineState, DELTA, D_OMEGA, E_D, E_Q};
use crate::error::{Error, Result};
use crate::netmodel::NetworkModel;
use crate::stepper::newton::{max_abs, newton, NewtonSettings};

#[derive(Clone, Copy, Debug)]
pub struct EquilibriumOptions {
    pub epsilon: f64,
    pub k_max: usize,
    pub reference_machine: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-11,
            k_max: 50,
            reference_machine: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    /// Model with the balancing mechanical power (and two-axis field
    /// voltages) written back.
    pub model: NetworkModel,
    pub states: Vec<MachineState>,
    pub voltages: Vec<Complex64>,
    pub iterations: usize,
    /// `max(|f|, |g|)` at the solution.
    pub residual_norm: f64,
}

struct Layout {
    offsets: Vec<usize>,
    n_machine_vars: usize,
}

impl Layout {
    fn new(model: &NetworkModel) -> Self {
        let mut offsets = Vec::with_capacity(model.n_machines());
        let mut off = 0;
        for m in &model.machines {
            offsets.push(off);
            off += if m.params.classical { 2 } else { 4 };
        }
        Self {
            offsets,
            n_machine_vars: off,
        }
    }
}

pub fn init_equilibrium(model: &NetworkModel, opts: &EquilibriumOptions) -> Result<Equilibrium> {
    let n = model.n_bus();
    let nm = model.n_machines();
    if opts.reference_machine >= nm.max(1) {
        return Err(Error::Config(format!(
            "reference machine {} does not exist",
            opts.reference_machine
        )));
    }
    let layout = Layout::new(model);
    let nx = layout.n_machine_vars;
    let dim = nx + 2 * n;
    let f_hz = model.frequency_hz;
    let reference = opts.reference_machine;

    // Unknowns per machine: classical [E'_q, δ | P_m], two-axis
    // [E'_q, E'_d, δ | P_m, E_fd]; then Re V, Im V for every bus.
    let mut x = DVector::zeros(dim);
    for (k, m) in model.machines.iter().enumerate() {
        let o = layout.offsets[k];
        x[o] = 1.0;
        let angle_slot = if m.params.classical { o + 1 } else { o + 2 };
        if k == reference {
            x[angle_slot] = m.params.p_m;
        }
        if !m.params.classical {
            x[o + 3] = m.params.e_fd;
        }
    }
    for i in 0..n {
        x[nx + i] = 1.0;
    }

    let unpack = |x: &DVector<f64>, k: usize| {
        let m = &model.machines[k];
        let o = layout.offsets[k];
        let mut params = m.params.clone();
        let mut s = MachineState {
            e_q_prime: x[o],
            ..MachineState::default()
        };
        let angle_slot = if params.classical {
            o + 1
        } else {
            s.e_d_prime = x[o + 1];
            params.e_fd = x[o + 3];
            o + 2
        };
        if k == reference {
            params.p_m = x[angle_slot];
        } else {
            s.delta = x[angle_slot];
        }
        (params, s, angle_slot)
    };

    let system = |x: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut f = DVector::zeros(dim);
        let mut j = DMatrix::zeros(dim, dim);
        let v: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(x[nx + i], x[nx + n + i]))
            .collect();

        for (k, site) in model.machines.iter().enumerate() {
            let (params, s, angle_slot) = unpack(x, k);
            let o = layout.offsets[k];
            let b = site.bus;
            let mp = machine_jacobians(&params, &s, v[b], f_hz)?;
            let (vr_col, vi_col) = (nx + b, nx + n + b);

            // unknown columns: (slot, state index or None for P_m / E_fd)
            let mut cols: Vec<(usize, Option<usize>)> = vec![(o, Some(E_Q))];
            if !params.classical {
                cols.push((o + 1, Some(E_D)));
            }
            cols.push((angle_slot, if k == reference { None } else { Some(DELTA) }));

            // equation rows
            let mut rows: Vec<(usize, usize)> = Vec::new();
            if params.classical {
                rows.push((o, D_OMEGA));
            } else {
                rows.push((o, E_Q));
                rows.push((o + 1, E_D));
                rows.push((o + 2, D_OMEGA));
            }
            for &(row, state_row) in &rows {
                f[row] = mp.rates[state_row];
                for &(col, state_col) in &cols {
                    if let Some(sc) = state_col {
                        j[(row, col)] = mp.df_dx[(state_row, sc)];
                    }
                }
                j[(row, vr_col)] = mp.df_dv[(state_row, 0)];
                j[(row, vi_col)] = mp.df_dv[(state_row, 1)];
            }
            if k == reference {
                j[(o + if params.classical { 0 } else { 2 }, angle_slot)] = 1.0 / (2.0 * params.h);
            }
            if !params.classical {
                j[(o, o + 3)] = 1.0 / params.td0_prime;
            }

            let vrow = o + if params.classical { 1 } else { 3 };
            f[vrow] = v[b].norm_sqr() - site.v_set * site.v_set;
            j[(vrow, vr_col)] = 2.0 * v[b].re;
            j[(vrow, vi_col)] = 2.0 * v[b].im;

            // injection into the network rows
            f[nx + b] += mp.injection.re;
            f[nx + n + b] += mp.injection.im;
            for &(col, state_col) in &cols {
                if let Some(sc) = state_col {
                    j[(nx + b, col)] += mp.di_dx[(0, sc)];
                    j[(nx + n + b, col)] += mp.di_dx[(1, sc)];
                }
            }
            j[(nx + b, vr_col)] += mp.di_dv[(0, 0)];
            j[(nx + b, vi_col)] += mp.di_dv[(0, 1)];
            j[(nx + n + b, vr_col)] += mp.di_dv[(1, 0)];
            j[(nx + n + b, vi_col)] += mp.di_dv[(1, 1)];
        }

        for r in 0..n {
            for c in 0..n {
                let y = model.ybus[(r, c)];
                f[nx + r] -= y.re * v[c].re - y.im * v[c].im;
                f[nx + n + r] -= y.im * v[c].re + y.re * v[c].im;
                j[(nx + r, nx + c)] -= y.re;
                j[(nx + r, nx + n + c)] += y.im;
                j[(nx + n + r, nx + c)] -= y.im;
                j[(nx + n + r, nx + n + c)] -= y.re;
            }
        }
        Ok((f, j))
    };

    let settings = NewtonSettings {
        epsilon: opts.epsilon,
        k_max: opts.k_max,
        max_step: Some(0.5),
    };
    let report = newton(&mut x, &settings, system)?;

    let mut out = model.clone();
    let mut states = Vec::with_capacity(nm);
    for k in 0..nm {
        let (params, s, _) = unpack(&x, k);
        out.machines[k].params = params;
        states.push(s);
    }
    let voltages: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x[nx + i], x[nx + n + i]))
        .collect();

    let mut currents = Vec::with_capacity(nm);
    let mut worst = 0.0_f64;
    for (site, s) in out.machines.iter().zip(&states) {
        let mp = machine_jacobians(&site.params, s, voltages[site.bus], f_hz)?;
        worst = mp.rates.iter().fold(worst, |m, r| m.max(r.abs()));
        currents.push(mp.injection);
    }
    worst = worst.max(max_abs(&out.residual(&currents, &voltages)));

    Ok(Equilibrium {
        model: out,
        states,
        voltages,
        iterations: report.iterations,
        residual_norm: worst,
    })
}
