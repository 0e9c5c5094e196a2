//! Simultaneous step solution of all component residuals and the network
//! equations.
//!
//! The unknown vector is `X = [x_{n+1} of every unit; Re V; Im V]`. Unit rows
//! come from each unit's algebraizer, network rows are the current mismatch
//! `I_inj − Y·V`. Units only couple through bus voltages, so the differential
//! block of the Jacobian is block diagonal.

pub mod newton;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub use newton::{newton, solve_dense, NewtonReport, NewtonSettings};

use crate::algebraizer::{
    backward_euler_residual, polar_jacobian, surrogate_residual, trapezoidal_residual,
    AlgebraicResidual, AlgebraizerKind, DynEval, Dynamics, ExactLinearSurrogate, StepContext,
};
use crate::error::{Error, Result};
use crate::machine::{
    machine_jacobians, Equilibrium, MachineParams, MachineState, Polar, DELTA, D_OMEGA,
};
use crate::netmodel::{Disturbance, NetworkModel};

const CLASSICAL_ACTIVE: [usize; 2] = [DELTA, D_OMEGA];
const TWO_AXIS_ACTIVE: [usize; 4] = [0, 1, 2, 3];

/// Linear test component `ẋ = A x + B (V, θ) + e` injecting
/// `i0 + Σ c_k x_k` into its bus.
#[derive(Clone, Debug)]
pub struct LinearComponent {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DVector<f64>,
    pub injection: Vec<Complex64>,
    pub i0: Complex64,
}

impl LinearComponent {
    pub fn surrogate(&self) -> Result<ExactLinearSurrogate> {
        ExactLinearSurrogate::new(self.a.clone(), self.b.clone(), self.e.clone())
    }

    fn current(&self, x: &[f64]) -> Complex64 {
        self.injection
            .iter()
            .zip(x)
            .fold(self.i0, |acc, (c, v)| acc + c * v)
    }
}

impl Dynamics for LinearComponent {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: &[f64], y: Complex64) -> Result<DynEval> {
        let p = Polar::from_complex(y);
        let xv = DVector::from_column_slice(x);
        let f = &self.a * xv + &self.b * DVector::from_vec(vec![p.v, p.theta]) + &self.e;
        let conv = polar_jacobian(y);
        let df_dy = &self.b * DMatrix::from_fn(2, 2, |r, c| conv[(r, c)]);
        Ok(DynEval {
            f,
            df_dx: self.a.clone(),
            df_dy,
        })
    }
}

/// Machine dynamics restricted to its active states.
struct MachineDynamics<'a> {
    params: &'a MachineParams,
    frozen: MachineState,
    f_hz: f64,
}

impl MachineDynamics<'_> {
    fn active(&self) -> &'static [usize] {
        if self.params.classical {
            &CLASSICAL_ACTIVE
        } else {
            &TWO_AXIS_ACTIVE
        }
    }

    fn expand(&self, x: &[f64]) -> MachineState {
        let mut full = self.frozen.to_array();
        for (k, &i) in self.active().iter().enumerate() {
            full[i] = x[k];
        }
        MachineState::from_array(full)
    }
}

impl Dynamics for MachineDynamics<'_> {
    fn dim(&self) -> usize {
        self.active().len()
    }

    fn eval(&self, x: &[f64], y: Complex64) -> Result<DynEval> {
        let mp = machine_jacobians(self.params, &self.expand(x), y, self.f_hz)?;
        let act = self.active();
        let n = act.len();
        Ok(DynEval {
            f: DVector::from_fn(n, |r, _| mp.rates[act[r]]),
            df_dx: DMatrix::from_fn(n, n, |r, c| mp.df_dx[(act[r], act[c])]),
            df_dy: DMatrix::from_fn(n, 2, |r, c| mp.df_dv[(act[r], c)]),
        })
    }
}

#[derive(Clone, Debug)]
pub enum UnitKind {
    /// Machine `index` of the network model. States not active in the
    /// stepper (internal voltages of classical machines) stay at `frozen`.
    Machine {
        index: usize,
        frozen: MachineState,
    },
    Linear(LinearComponent),
}

#[derive(Clone, Debug)]
pub struct Unit {
    pub bus: usize,
    pub kind: UnitKind,
}

struct Injection {
    current: Complex64,
    di_dx: DMatrix<f64>,
    di_dv: [[f64; 2]; 2],
}

/// A network together with the dynamic units attached to it.
#[derive(Clone, Debug)]
pub struct Plant {
    pub model: NetworkModel,
    pub units: Vec<Unit>,
}

/// Time, stacked active unit states and complex bus voltages.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<Complex64>,
}

impl Plant {
    pub fn new(model: NetworkModel, units: Vec<Unit>) -> Result<Self> {
        for (k, u) in units.iter().enumerate() {
            if u.bus >= model.n_bus() {
                return Err(Error::DanglingBus {
                    path: format!("units[{k}].bus"),
                    bus: u.bus,
                });
            }
            match &u.kind {
                UnitKind::Machine { index, .. } => {
                    let site = model
                        .machines
                        .get(*index)
                        .ok_or_else(|| Error::UnknownTarget(format!("machine {index}")))?;
                    if site.bus != u.bus {
                        return Err(Error::Config(format!(
                            "unit {k} is not at the bus of machine {index}"
                        )));
                    }
                }
                UnitKind::Linear(c) => {
                    let n = c.a.nrows();
                    if c.a.ncols() != n
                        || c.b.shape() != (n, 2)
                        || c.e.len() != n
                        || c.injection.len() != n
                    {
                        return Err(Error::Dimension(format!(
                            "linear unit {k} has inconsistent shapes"
                        )));
                    }
                }
            }
        }
        Ok(Self { model, units })
    }

    /// One unit per machine, starting from the equilibrium point.
    pub fn from_equilibrium(eq: &Equilibrium) -> Result<(Self, SystemState)> {
        let units = eq
            .model
            .machines
            .iter()
            .enumerate()
            .map(|(index, site)| Unit {
                bus: site.bus,
                kind: UnitKind::Machine {
                    index,
                    frozen: eq.states[index],
                },
            })
            .collect();
        let plant = Self::new(eq.model.clone(), units)?;
        let states = eq.states.clone();
        let state = plant.state_from_machines(0.0, &states, eq.voltages.clone())?;
        Ok((plant, state))
    }

    /// Stacks active states of the given machine states (one per machine unit,
    /// in unit order). Linear units start at zero.
    pub fn state_from_machines(
        &self,
        t: f64,
        machines: &[MachineState],
        v: Vec<Complex64>,
    ) -> Result<SystemState> {
        let mut x = Vec::with_capacity(self.n_states());
        let mut it = machines.iter();
        for u in &self.units {
            match &u.kind {
                UnitKind::Machine { index, .. } => {
                    let s = it
                        .next()
                        .ok_or_else(|| Error::Dimension("too few machine states".into()))?;
                    let act = self.machine_dynamics(*index, &self.frozen_of(u)).active();
                    let a = s.to_array();
                    x.extend(act.iter().map(|&i| a[i]));
                }
                UnitKind::Linear(c) => x.extend(std::iter::repeat_n(0.0, c.a.nrows())),
            }
        }
        if v.len() != self.model.n_bus() {
            return Err(Error::Dimension(format!(
                "{} voltages for {} buses",
                v.len(),
                self.model.n_bus()
            )));
        }
        Ok(SystemState { t, x, v })
    }

    fn frozen_of(&self, u: &Unit) -> MachineState {
        match &u.kind {
            UnitKind::Machine { frozen, .. } => *frozen,
            UnitKind::Linear(_) => MachineState::default(),
        }
    }

    fn machine_dynamics(&self, index: usize, frozen: &MachineState) -> MachineDynamics<'_> {
        MachineDynamics {
            params: &self.model.machines[index].params,
            frozen: *frozen,
            f_hz: self.model.frequency_hz,
        }
    }

    pub fn unit_dim(&self, k: usize) -> usize {
        match &self.units[k].kind {
            UnitKind::Machine { index, frozen } => self.machine_dynamics(*index, frozen).dim(),
            UnitKind::Linear(c) => c.a.nrows(),
        }
    }

    /// Start offset of each unit in the stacked state vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        (0..self.units.len())
            .map(|k| {
                let o = off;
                off += self.unit_dim(k);
                o
            })
            .collect()
    }

    pub fn n_states(&self) -> usize {
        (0..self.units.len()).map(|k| self.unit_dim(k)).sum()
    }

    /// Full machine states, in machine-unit order.
    pub fn machine_states(&self, x: &[f64]) -> Vec<MachineState> {
        let offsets = self.offsets();
        self.units
            .iter()
            .enumerate()
            .filter_map(|(k, u)| match &u.kind {
                UnitKind::Machine { index, frozen } => {
                    let d = self.machine_dynamics(*index, frozen);
                    Some(d.expand(&x[offsets[k]..offsets[k] + d.dim()]))
                }
                UnitKind::Linear(_) => None,
            })
            .collect()
    }

    /// Buses of the machine units, in machine-unit order.
    pub fn machine_buses(&self) -> Vec<usize> {
        self.units
            .iter()
            .filter(|u| matches!(u.kind, UnitKind::Machine { .. }))
            .map(|u| u.bus)
            .collect()
    }

    fn dynamics(&self, k: usize) -> Box<dyn Dynamics + '_> {
        match &self.units[k].kind {
            UnitKind::Machine { index, frozen } => Box::new(self.machine_dynamics(*index, frozen)),
            UnitKind::Linear(c) => Box::new(c.clone()),
        }
    }

    fn injection(&self, k: usize, x: &[f64], v: Complex64) -> Result<Injection> {
        match &self.units[k].kind {
            UnitKind::Machine { index, frozen } => {
                let d = self.machine_dynamics(*index, frozen);
                let mp = machine_jacobians(d.params, &d.expand(x), v, d.f_hz)?;
                let act = d.active();
                Ok(Injection {
                    current: mp.injection,
                    di_dx: DMatrix::from_fn(2, act.len(), |r, c| mp.di_dx[(r, act[c])]),
                    di_dv: [
                        [mp.di_dv[(0, 0)], mp.di_dv[(0, 1)]],
                        [mp.di_dv[(1, 0)], mp.di_dv[(1, 1)]],
                    ],
                })
            }
            UnitKind::Linear(c) => Ok(Injection {
                current: c.current(x),
                di_dx: DMatrix::from_fn(2, x.len(), |r, i| {
                    if r == 0 {
                        c.injection[i].re
                    } else {
                        c.injection[i].im
                    }
                }),
                di_dv: [[0.0; 2]; 2],
            }),
        }
    }

    /// Returns the plant with a disturbance applied to its network model.
    pub fn disturbed(&self, d: &Disturbance) -> Result<Self> {
        Ok(Self {
            model: self.model.apply_disturbance(d)?,
            units: self.units.clone(),
        })
    }

    /// Max-norm of the network mismatch at a state.
    pub fn algebraic_residual(&self, x: &[f64], v: &[Complex64]) -> Result<f64> {
        let offsets = self.offsets();
        let mut currents = vec![Complex64::new(0.0, 0.0); self.model.n_bus()];
        for (k, u) in self.units.iter().enumerate() {
            let xs = &x[offsets[k]..offsets[k] + self.unit_dim(k)];
            currents[u.bus] += self.injection(k, xs, v[u.bus])?.current;
        }
        let mut worst = 0.0_f64;
        let n = self.model.n_bus();
        for (i, &c) in currents.iter().enumerate() {
            let mut m = c;
            for (j, vj) in v.iter().enumerate().take(n) {
                m -= self.model.ybus[(i, j)] * vj;
            }
            worst = worst.max(m.re.abs()).max(m.im.abs());
        }
        Ok(worst)
    }
}

/// Step size, Newton settings and the algebraizer of every unit.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub h: f64,
    pub newton: NewtonSettings,
    pub schemes: Vec<AlgebraizerKind>,
    /// Record every `record_stride`-th grid point.
    pub record_stride: usize,
}

impl SolverConfig {
    pub fn new(h: f64, schemes: Vec<AlgebraizerKind>) -> Self {
        Self {
            h,
            newton: NewtonSettings::default(),
            schemes,
            record_stride: 1,
        }
    }

    pub fn uniform(h: f64, kind: AlgebraizerKind, units: usize) -> Self {
        Self::new(h, vec![kind; units])
    }

    pub fn validate(&self, plant: &Plant) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.h
            )));
        }
        if !(self.newton.epsilon > 0.0) || self.newton.k_max == 0 {
            return Err(Error::Config(
                "epsilon must be positive and k_max at least 1".into(),
            ));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record stride must be at least 1".into()));
        }
        if self.schemes.len() != plant.units.len() {
            return Err(Error::Config(format!(
                "{} algebraizers for {} units",
                self.schemes.len(),
                plant.units.len()
            )));
        }
        for (k, s) in self.schemes.iter().enumerate() {
            if let AlgebraizerKind::Surrogate(m) = s {
                if m.dim() != plant.unit_dim(k) {
                    return Err(Error::Config(format!(
                        "surrogate for unit {k} predicts {} states, unit has {}",
                        m.dim(),
                        plant.unit_dim(k)
                    )));
                }
                if self.h > m.h_max() {
                    return Err(Error::StepTooLarge {
                        h: self.h,
                        h_max: m.h_max(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Residual vector and Jacobian of one step.
#[derive(Clone, Debug)]
pub struct ResidualSystem {
    pub f: DVector<f64>,
    pub j: DMatrix<f64>,
}

fn unit_residual(
    plant: &Plant,
    scheme: &AlgebraizerKind,
    k: usize,
    ctx: &StepContext<'_>,
) -> Result<AlgebraicResidual> {
    match scheme {
        AlgebraizerKind::Trapezoidal => trapezoidal_residual(ctx, plant.dynamics(k).as_ref()),
        AlgebraizerKind::BackwardEuler => backward_euler_residual(ctx, plant.dynamics(k).as_ref()),
        AlgebraizerKind::Surrogate(m) => surrogate_residual(ctx, m.as_ref()),
    }
}

/// `F(x_{n+1}, y_{n+1}; h, x_n, y_n)` and `∂F/∂X` at the iterate `X`.
pub fn assemble(
    plant: &Plant,
    cfg: &SolverConfig,
    state_n: &SystemState,
    iterate: &DVector<f64>,
) -> Result<ResidualSystem> {
    let n = plant.model.n_bus();
    let nx = plant.n_states();
    let dim = nx + 2 * n;
    if iterate.len() != dim || state_n.x.len() != nx || state_n.v.len() != n {
        return Err(Error::Dimension(format!(
            "iterate of length {} for a system of dimension {dim}",
            iterate.len()
        )));
    }
    let v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(iterate[nx + i], iterate[nx + n + i]))
        .collect();
    let mut f = DVector::zeros(dim);
    let mut j = DMatrix::zeros(dim, dim);
    let offsets = plant.offsets();

    for (k, unit) in plant.units.iter().enumerate() {
        let (o, d, b) = (offsets[k], plant.unit_dim(k), unit.bus);
        let x_np1 = &iterate.as_slice()[o..o + d];
        let ctx = StepContext {
            h: cfg.h,
            x_n: &state_n.x[o..o + d],
            y_n: state_n.v[b],
            y_np1: v[b],
            x_np1,
        };
        let res = unit_residual(plant, &cfg.schemes[k], k, &ctx)?;
        f.rows_mut(o, d).copy_from(&res.r);
        j.view_mut((o, o), (d, d)).copy_from(&res.dr_dx);
        for r in 0..d {
            j[(o + r, nx + b)] += res.dr_dy[(r, 0)];
            j[(o + r, nx + n + b)] += res.dr_dy[(r, 1)];
        }

        let inj = plant.injection(k, x_np1, v[b])?;
        f[nx + b] += inj.current.re;
        f[nx + n + b] += inj.current.im;
        for c in 0..d {
            j[(nx + b, o + c)] += inj.di_dx[(0, c)];
            j[(nx + n + b, o + c)] += inj.di_dx[(1, c)];
        }
        j[(nx + b, nx + b)] += inj.di_dv[0][0];
        j[(nx + b, nx + n + b)] += inj.di_dv[0][1];
        j[(nx + n + b, nx + b)] += inj.di_dv[1][0];
        j[(nx + n + b, nx + n + b)] += inj.di_dv[1][1];
    }
    subtract_network(plant, &v, nx, &mut f, &mut j);
    Ok(ResidualSystem { f, j })
}

/// Adds `−Y·V` to the network rows and `−Y` to their voltage columns.
fn subtract_network(
    plant: &Plant,
    v: &[Complex64],
    col0: usize,
    f: &mut DVector<f64>,
    j: &mut DMatrix<f64>,
) {
    let n = v.len();
    let row0 = f.len() - 2 * n;
    for r in 0..n {
        for c in 0..n {
            let y = plant.model.ybus[(r, c)];
            if y.re == 0.0 && y.im == 0.0 {
                continue;
            }
            f[row0 + r] -= y.re * v[c].re - y.im * v[c].im;
            f[row0 + n + r] -= y.im * v[c].re + y.re * v[c].im;
            j[(row0 + r, col0 + c)] -= y.re;
            j[(row0 + r, col0 + n + c)] += y.im;
            j[(row0 + n + r, col0 + c)] -= y.im;
            j[(row0 + n + r, col0 + n + c)] -= y.re;
        }
    }
}

fn pack(state: &SystemState) -> DVector<f64> {
    let n = state.v.len();
    let mut x = DVector::zeros(state.x.len() + 2 * n);
    x.rows_mut(0, state.x.len()).copy_from_slice(&state.x);
    for (i, v) in state.v.iter().enumerate() {
        x[state.x.len() + i] = v.re;
        x[state.x.len() + n + i] = v.im;
    }
    x
}

fn unpack(x: &DVector<f64>, nx: usize, n: usize, t: f64) -> SystemState {
    SystemState {
        t,
        x: x.as_slice()[..nx].to_vec(),
        v: (0..n)
            .map(|i| Complex64::new(x[nx + i], x[nx + n + i]))
            .collect(),
    }
}

/// Advances one step from `state_n`, starting Newton at `state_n`.
pub fn newton_solve(
    plant: &Plant,
    cfg: &SolverConfig,
    state_n: &SystemState,
) -> Result<(SystemState, NewtonReport)> {
    let mut x = pack(state_n);
    let report = newton(&mut x, &cfg.newton, |it| {
        let sys = assemble(plant, cfg, state_n, it)?;
        Ok((sys.f, sys.j))
    })?;
    Ok((
        unpack(&x, state_n.x.len(), state_n.v.len(), state_n.t + cfg.h),
        report,
    ))
}

/// Solves the network equations for the voltages with unit states held fixed.
pub fn project_algebraic(
    plant: &Plant,
    x: &[f64],
    v_guess: &[Complex64],
    settings: &NewtonSettings,
) -> Result<Vec<Complex64>> {
    let n = plant.model.n_bus();
    let offsets = plant.offsets();
    let mut vv = DVector::zeros(2 * n);
    for (i, v) in v_guess.iter().enumerate() {
        vv[i] = v.re;
        vv[n + i] = v.im;
    }
    newton(&mut vv, settings, |it| {
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::new(it[i], it[n + i])).collect();
        let mut f = DVector::zeros(2 * n);
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for (k, u) in plant.units.iter().enumerate() {
            let b = u.bus;
            let inj = plant.injection(k, &x[offsets[k]..offsets[k] + plant.unit_dim(k)], v[b])?;
            f[b] += inj.current.re;
            f[n + b] += inj.current.im;
            j[(b, b)] += inj.di_dv[0][0];
            j[(b, n + b)] += inj.di_dv[0][1];
            j[(n + b, b)] += inj.di_dv[1][0];
            j[(n + b, n + b)] += inj.di_dv[1][1];
        }
        subtract_network(plant, &v, 0, &mut f, &mut j);
        Ok((f, j))
    })?;
    Ok((0..n).map(|i| Complex64::new(vv[i], vv[n + i])).collect())
}

/// One recorded grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Full machine states in machine-unit order.
    pub machines: Vec<MachineState>,
    pub x: Vec<f64>,
    pub v: Vec<Complex64>,
    pub newton_iters: usize,
    /// Whether the last Newton update was smaller than the one before.
    pub contracting: bool,
    /// Max-norm of the network mismatch after the step.
    pub g_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    /// Time between recorded samples.
    pub record_h: f64,
    pub machine_buses: Vec<usize>,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn n_bus(&self) -> usize {
        self.samples.first().map_or(0, |s| s.v.len())
    }

    pub fn final_sample(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_string()];
        for i in 0..self.machine_buses.len() {
            cols.push(format!("delta_{i}"));
            cols.push(format!("domega_{i}"));
        }
        for j in 0..self.n_bus() {
            cols.push(format!("V_{j}"));
            cols.push(format!("theta_{j}"));
        }
        cols.push("newton_iters".into());
        cols.join(",")
    }

    /// Writes one row per recorded sample, numbers with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            line.push_str(&format!("{:.16e}", s.t));
            for m in &s.machines {
                line.push_str(&format!(",{:.16e},{:.16e}", m.delta, m.d_omega));
            }
            for v in &s.v {
                let p = Polar::from_complex(*v);
                line.push_str(&format!(",{:.16e},{:.16e}", p.v, p.theta));
            }
            line.push_str(&format!(",{}", s.newton_iters));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

fn sample(plant: &Plant, state: &SystemState, report: Option<&NewtonReport>) -> Result<Sample> {
    let (iters, contracting) = match report {
        Some(r) => {
            let u = &r.update_norms;
            let c = u.len() < 2 || u[u.len() - 1] < u[u.len() - 2] || u[u.len() - 1] == 0.0;
            (r.iterations, c)
        }
        None => (0, true),
    };
    Ok(Sample {
        t: state.t,
        machines: plant.machine_states(&state.x),
        x: state.x.clone(),
        v: state.v.clone(),
        newton_iters: iters,
        contracting,
        g_norm: plant.algebraic_residual(&state.x, &state.v)?,
    })
}

/// Fixed-step march from `initial` to `t_end`.
///
/// Disturbances take effect at the grid point nearest to their time. When
/// one alters the network, the voltages at that point are re-solved with
/// states held fixed and the recorded sample is replaced.
pub fn simulate(
    plant: &Plant,
    cfg: &SolverConfig,
    initial: &SystemState,
    t_end: f64,
    disturbances: &[Disturbance],
) -> Result<Trajectory> {
    cfg.validate(plant)?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::Config(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    if initial.x.len() != plant.n_states() || initial.v.len() != plant.model.n_bus() {
        return Err(Error::Dimension(
            "initial state does not match the plant".into(),
        ));
    }
    let n_steps = (t_end / cfg.h).round().max(1.0) as usize;
    let mut schedule: Vec<(usize, Disturbance)> = Vec::with_capacity(disturbances.len());
    for d in disturbances {
        if !(d.time.is_finite() && d.time >= 0.0) {
            return Err(Error::Config(format!(
                "disturbance time must be nonnegative, got {}",
                d.time
            )));
        }
        // validate the target up front
        plant.model.apply_disturbance(d)?;
        let k = (d.time / cfg.h).round() as usize;
        if k > n_steps {
            log::warn!(
                "disturbance at t = {} s lies beyond the horizon and is ignored",
                d.time
            );
            continue;
        }
        schedule.push((k, *d));
    }
    schedule.sort_by_key(|(k, _)| *k);

    let mut plant = plant.clone();
    let mut state = initial.clone();
    state.t = 0.0;
    let mut traj = Trajectory {
        h: cfg.h,
        record_h: cfg.h * cfg.record_stride as f64,
        machine_buses: plant.machine_buses(),
        samples: Vec::with_capacity(n_steps / cfg.record_stride + 1),
    };
    let mut last_report: Option<NewtonReport> = None;
    let mut next = 0;
    let abort = |traj: &Trajectory, t: f64, steps: usize, e: Error| Error::Aborted {
        t,
        steps,
        partial: Box::new(traj.clone()),
        source: Box::new(e),
    };

    for k in 0..=n_steps {
        let mut reproject = false;
        while next < schedule.len() && schedule[next].0 == k {
            let d = schedule[next].1;
            plant = plant.disturbed(&d)?;
            reproject |= d.alters_network();
            log::debug!("applied {:?} at step {k}", d.kind);
            next += 1;
        }
        if reproject {
            state.v = project_algebraic(&plant, &state.x, &state.v, &cfg.newton)
                .map_err(|e| abort(&traj, state.t, k, e))?;
        }
        if k % cfg.record_stride == 0 {
            traj.samples
                .push(sample(&plant, &state, last_report.as_ref())?);
        }
        if k == n_steps {
            break;
        }
        let (mut new_state, report) =
            newton_solve(&plant, cfg, &state).map_err(|e| abort(&traj, state.t, k, e))?;
        new_state.t = (k + 1) as f64 * cfg.h;
        state = new_state;
        last_report = Some(report);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{init_equilibrium, EquilibriumOptions};
    use crate::netmodel::preset;

    fn ieee9() -> (Plant, SystemState) {
        let eq =
            init_equilibrium(&preset("ieee9").unwrap(), &EquilibriumOptions::default()).unwrap();
        Plant::from_equilibrium(&eq).unwrap()
    }

    #[test]
    fn classical_units_have_two_states() {
        let (plant, state) = ieee9();
        assert_eq!(plant.n_states(), 6);
        assert_eq!(state.x.len(), 6);
        assert_eq!(plant.offsets(), vec![0, 2, 4]);
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_the_step() {
        let (plant, state) = ieee9();
        let cfg = SolverConfig::uniform(0.01, AlgebraizerKind::Trapezoidal, 3);
        let sys = assemble(&plant, &cfg, &state, &pack(&state)).unwrap();
        assert!(newton::max_abs(&sys.f) < 1e-9);
        let (_, report) = newton_solve(&plant, &cfg, &state).unwrap();
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn differential_cross_blocks_vanish() {
        let (plant, mut state) = ieee9();
        state.x[1] = 0.004;
        state.x[3] = -0.002;
        let cfg = SolverConfig::uniform(0.01, AlgebraizerKind::Trapezoidal, 3);
        let sys = assemble(&plant, &cfg, &state, &pack(&state)).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                if a == b {
                    continue;
                }
                for r in 0..2 {
                    for c in 0..2 {
                        assert_eq!(sys.j[(2 * a + r, 2 * b + c)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let (plant, state) = ieee9();
        let mut cfg = SolverConfig::uniform(0.01, AlgebraizerKind::Trapezoidal, 2);
        assert!(matches!(
            simulate(&plant, &cfg, &state, 1.0, &[]),
            Err(Error::Config(_))
        ));
        cfg.schemes.push(AlgebraizerKind::Trapezoidal);
        cfg.h = -1.0;
        assert!(matches!(
            simulate(&plant, &cfg, &state, 1.0, &[]),
            Err(Error::Config(_))
        ));
        cfg.h = 0.01;
        let bad = Disturbance::pm_step(7, 0.1, 0.0);
        assert!(matches!(
            simulate(&plant, &cfg, &state, 1.0, &[bad]),
            Err(Error::UnknownTarget(_))
        ));
    }

    #[test]
    fn load_step_reprojects_voltages() {
        let (plant, state) = ieee9();
        let cfg = SolverConfig::uniform(0.01, AlgebraizerKind::Trapezoidal, 3);
        let d = Disturbance::load_step(4, 0.2, 0.05, 0.05);
        let traj = simulate(&plant, &cfg, &state, 0.2, &[d]).unwrap();
        let s5 = &traj.samples[5];
        assert!(s5.g_norm < 1e-8, "{}", s5.g_norm);
        assert_ne!(s5.v, traj.samples[4].v);
        // states at the disturbance point are those of the previous step
        assert!(traj.samples.iter().all(|s| s.g_norm < 1e-7));
    }

    #[test]
    fn csv_layout() {
        let (plant, state) = ieee9();
        let cfg = SolverConfig::uniform(0.02, AlgebraizerKind::Trapezoidal, 3);
        let traj = simulate(&plant, &cfg, &state, 0.1, &[]).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("t,delta_0,domega_0,delta_1"));
        assert!(header.ends_with("V_8,theta_8,newton_iters"));
        assert_eq!(lines.count(), 6);
        assert_eq!(header.split(',').count(), 1 + 6 + 18 + 1);
    }
}
