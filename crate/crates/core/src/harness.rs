//! Accuracy studies comparing solver configurations against the reference
//! oracle: global error over a horizon, max error against step size,
//! one-step local error distributions, Monte-Carlo error fans and the
//! aggregated accuracy gain of one solver over another.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algebraizer::{wrap_angle, AlgebraizerKind, IncrementModel};
use crate::error::{Error, Result};
use crate::machine::{init_equilibrium, EquilibriumOptions, MachineState, Polar};
use crate::netmodel::{Disturbance, NetworkModel};
use crate::oracle::{component_truth, reference_trajectory, MachineSpec, OracleOptions};
use crate::stepper::{
    newton_solve, project_algebraic, simulate, Plant, Sample, SolverConfig, SystemState, Trajectory,
};
use crate::surrogate::InputDomain;

/// A plant, its starting point and the disturbances applied to it.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub plant: Plant,
    pub initial: SystemState,
    pub disturbances: Vec<Disturbance>,
    pub t_end: f64,
}

impl Scenario {
    /// Starts from the operating point of `model`.
    pub fn from_equilibrium(
        model: &NetworkModel,
        disturbances: Vec<Disturbance>,
        t_end: f64,
    ) -> Result<Self> {
        let eq = init_equilibrium(model, &EquilibriumOptions::default())?;
        let (plant, initial) = Plant::from_equilibrium(&eq)?;
        Ok(Self {
            plant,
            initial,
            disturbances,
            t_end,
        })
    }

    pub fn with_initial(&self, initial: SystemState) -> Self {
        Self {
            initial,
            ..self.clone()
        }
    }

    pub fn reference(&self, opts: &OracleOptions) -> Result<Trajectory> {
        Ok(reference_trajectory(
            &self.plant,
            &self.initial,
            self.t_end,
            &self.disturbances,
            opts,
        )?
        .truth)
    }
}

/// Named per-unit algebraizer assignment.
#[derive(Clone, Debug)]
pub struct SolverSpec {
    pub name: String,
    pub schemes: Vec<AlgebraizerKind>,
}

impl SolverSpec {
    pub fn uniform(name: &str, kind: AlgebraizerKind, units: usize) -> Self {
        Self {
            name: name.to_string(),
            schemes: vec![kind; units],
        }
    }

    /// Trapezoidal everywhere.
    pub fn pure(units: usize) -> Self {
        Self::uniform("pure", AlgebraizerKind::Trapezoidal, units)
    }

    /// Trapezoidal everywhere except `machines`, which use `surrogate`.
    pub fn hybrid(
        units: usize,
        machines: &[usize],
        surrogate: Arc<dyn IncrementModel>,
    ) -> Result<Self> {
        let mut spec = Self::pure(units);
        spec.name = "hybrid".into();
        for &m in machines {
            let slot = spec
                .schemes
                .get_mut(m)
                .ok_or_else(|| Error::UnknownTarget(format!("machine {m}")))?;
            *slot = AlgebraizerKind::Surrogate(surrogate.clone());
        }
        Ok(spec)
    }

    pub fn config(&self, h: f64) -> SolverConfig {
        SolverConfig::new(h, self.schemes.clone())
    }
}

/// Report variable. Indices are machine indices for the rotor quantities
/// and bus indices for the voltage quantities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variable {
    Delta(usize),
    /// `δ_i − θ` at the machine's bus.
    DeltaRel(usize),
    DOmega(usize),
    V(usize),
    Theta(usize),
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variable::Delta(i) => write!(f, "delta_{i}"),
            Variable::DeltaRel(i) => write!(f, "delta_rel_{i}"),
            Variable::DOmega(i) => write!(f, "domega_{i}"),
            Variable::V(j) => write!(f, "v_{j}"),
            Variable::Theta(j) => write!(f, "theta_{j}"),
        }
    }
}

impl std::str::FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown report variable `{s}`"));
        let (stem, idx) = s.rsplit_once('_').ok_or_else(bad)?;
        let idx: usize = idx.parse().map_err(|_| bad())?;
        Ok(match stem {
            "delta" => Variable::Delta(idx),
            "delta_rel" => Variable::DeltaRel(idx),
            "domega" => Variable::DOmega(idx),
            "v" => Variable::V(idx),
            "theta" => Variable::Theta(idx),
            _ => return Err(bad()),
        })
    }
}

impl Variable {
    /// Every rotor quantity of every machine, then every bus voltage.
    pub fn all(n_machines: usize, n_bus: usize) -> Vec<Variable> {
        let mut out = Vec::with_capacity(3 * n_machines + 2 * n_bus);
        for i in 0..n_machines {
            out.extend([
                Variable::Delta(i),
                Variable::DeltaRel(i),
                Variable::DOmega(i),
            ]);
        }
        for j in 0..n_bus {
            out.extend([Variable::V(j), Variable::Theta(j)]);
        }
        out
    }

    fn check(&self, machine_buses: &[usize], n_bus: usize) -> Result<()> {
        let ok = match *self {
            Variable::Delta(i) | Variable::DeltaRel(i) | Variable::DOmega(i) => {
                i < machine_buses.len()
            }
            Variable::V(j) | Variable::Theta(j) => j < n_bus,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnknownTarget(format!("report variable {self}")))
        }
    }

    pub fn value(&self, s: &Sample, machine_buses: &[usize]) -> f64 {
        match *self {
            Variable::Delta(i) => s.machines[i].delta,
            Variable::DeltaRel(i) => wrap_angle(s.machines[i].delta - s.v[machine_buses[i]].arg()),
            Variable::DOmega(i) => s.machines[i].d_omega,
            Variable::V(j) => s.v[j].norm(),
            Variable::Theta(j) => s.v[j].arg(),
        }
    }

    /// `|a − b|`, on the wrapped difference for angles measured against a bus.
    pub fn error(&self, a: &Sample, b: &Sample, machine_buses: &[usize]) -> f64 {
        let d = self.value(a, machine_buses) - self.value(b, machine_buses);
        match self {
            Variable::DeltaRel(_) | Variable::Theta(_) => wrap_angle(d).abs(),
            _ => d.abs(),
        }
    }
}

/// Boxplot statistics with type-7 quantiles; the upper whisker is
/// `Q3 + 1.5·IQR` capped at the sample maximum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub max: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub upper_whisker: f64,
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return Summary {
            count: 0,
            max: f64::NAN,
            median: f64::NAN,
            q1: f64::NAN,
            q3: f64::NAN,
            iqr: f64::NAN,
            upper_whisker: f64::NAN,
        };
    }
    let max = *v.last().unwrap();
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    Summary {
        count: v.len(),
        max,
        median: quantile_sorted(&v, 0.5),
        q1,
        q3,
        iqr,
        upper_whisker: (q3 + 1.5 * iqr).min(max),
    }
}

/// Error time series of one solver run against the truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub solver: String,
    pub h: f64,
    pub variables: Vec<Variable>,
    pub times: Vec<f64>,
    /// `errors[k][i]`: variable `k` at `times[i]`.
    pub errors: Vec<Vec<f64>>,
    pub summaries: Vec<Summary>,
    /// Why the run stopped early, if it did; errors cover the accepted part.
    pub failure: Option<String>,
}

impl ErrorReport {
    fn index(&self, v: Variable) -> Result<usize> {
        self.variables
            .iter()
            .position(|&x| x == v)
            .ok_or_else(|| Error::UnknownTarget(format!("variable {v} not in report")))
    }

    pub fn series(&self, v: Variable) -> Result<&[f64]> {
        Ok(&self.errors[self.index(v)?])
    }

    pub fn max_error(&self, v: Variable) -> Result<f64> {
        Ok(self.summaries[self.index(v)?].max)
    }

    pub fn final_error(&self, v: Variable) -> Result<f64> {
        Ok(self.series(v)?.last().copied().unwrap_or(f64::NAN))
    }
}

fn truth_index(t: f64, record_h: f64) -> Result<usize> {
    let r = t / record_h;
    let k = r.round();
    if (r - k).abs() > 1e-6 {
        return Err(Error::GridMismatch(format!(
            "t = {t} s is not on the truth grid of spacing {record_h} s"
        )));
    }
    Ok(k as usize)
}

/// Errors of `traj` at its own grid points, the truth taken at the nearest
/// point of its (finer, nested) grid.
pub fn compare(
    solver: &str,
    traj: &Trajectory,
    truth: &Trajectory,
    variables: &[Variable],
) -> Result<ErrorReport> {
    for v in variables {
        v.check(&traj.machine_buses, traj.n_bus())?;
    }
    if traj.machine_buses != truth.machine_buses {
        return Err(Error::GridMismatch(
            "trajectories describe different plants".into(),
        ));
    }
    let mut times = Vec::with_capacity(traj.samples.len());
    let mut errors = vec![Vec::with_capacity(traj.samples.len()); variables.len()];
    for s in &traj.samples {
        let k = truth_index(s.t, truth.record_h)?;
        let t = truth
            .samples
            .get(k)
            .ok_or_else(|| Error::GridMismatch(format!("truth ends before t = {} s", s.t)))?;
        times.push(s.t);
        for (col, v) in errors.iter_mut().zip(variables) {
            col.push(v.error(s, t, &traj.machine_buses));
        }
    }
    let summaries = errors.iter().map(|e| summarize(e)).collect();
    Ok(ErrorReport {
        solver: solver.to_string(),
        h: traj.h,
        variables: variables.to_vec(),
        times,
        errors,
        summaries,
        failure: None,
    })
}

fn run_and_compare(
    scenario: &Scenario,
    solver: &SolverSpec,
    h: f64,
    truth: &Trajectory,
    variables: &[Variable],
) -> Result<ErrorReport> {
    let cfg = solver.config(h);
    match simulate(
        &scenario.plant,
        &cfg,
        &scenario.initial,
        scenario.t_end,
        &scenario.disturbances,
    ) {
        Ok(traj) => compare(&solver.name, &traj, truth, variables),
        Err(Error::Aborted {
            partial, source, t, ..
        }) => {
            log::warn!(
                "solver {} at h = {h} s failed at t = {t} s: {source}",
                solver.name
            );
            let mut report = compare(&solver.name, &partial, truth, variables)?;
            report.h = h;
            report.failure = Some(format!("t = {t}: {source}"));
            Ok(report)
        }
        Err(e) => Err(e),
    }
}

/// Every solver against the reference at step `h`. Runs in parallel; a
/// solver that aborts keeps the errors of its accepted steps.
pub fn global_error_study(
    scenario: &Scenario,
    solvers: &[SolverSpec],
    h: f64,
    variables: &[Variable],
    oracle: &OracleOptions,
) -> Result<Vec<ErrorReport>> {
    if solvers.is_empty() {
        return Err(Error::Config("at least one solver is required".into()));
    }
    let truth = scenario.reference(oracle)?;
    solvers
        .par_iter()
        .map(|s| run_and_compare(scenario, s, h, &truth, variables))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub solver: String,
    pub h: f64,
    pub variable: Variable,
    pub max_error: f64,
    pub failed: bool,
}

/// Max error over the horizon for every solver, step size and variable.
pub fn step_sweep(
    scenario: &Scenario,
    solvers: &[SolverSpec],
    hs: &[f64],
    variables: &[Variable],
    oracle: &OracleOptions,
) -> Result<Vec<SweepRow>> {
    if solvers.is_empty() || hs.is_empty() {
        return Err(Error::Config("a sweep needs solvers and step sizes".into()));
    }
    let truth = scenario.reference(oracle)?;
    let jobs: Vec<(usize, f64)> = (0..solvers.len())
        .flat_map(|s| hs.iter().map(move |&h| (s, h)))
        .collect();
    let reports: Vec<ErrorReport> = jobs
        .par_iter()
        .map(|&(s, h)| run_and_compare(scenario, &solvers[s], h, &truth, variables))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(reports
        .iter()
        .flat_map(|r| {
            r.variables
                .iter()
                .zip(&r.summaries)
                .map(move |(v, s)| SweepRow {
                    solver: r.solver.clone(),
                    h: r.h,
                    variable: *v,
                    max_error: s.max,
                    failed: r.failure.is_some(),
                })
        })
        .collect())
}

/// Least-squares slope of `ln(error)` against `ln(h)`.
pub fn loglog_slope(hs: &[f64], errors: &[f64]) -> f64 {
    let n = hs.len().min(errors.len()) as f64;
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// Draws a starting point: each machine in `machines` gets a rotor angle
/// `θ_eq + δ'` and speed deviation `Δω` drawn uniformly from `domain`;
/// the others stay at the operating point. Voltages are then re-solved
/// with the states held fixed.
pub fn sample_initial_condition<R: Rng>(
    scenario: &Scenario,
    machines: &[usize],
    domain: &InputDomain,
    rng: &mut R,
) -> Result<SystemState> {
    let mut states = scenario.plant.machine_states(&scenario.initial.x);
    let buses = scenario.plant.machine_buses();
    for &m in machines {
        let s = states
            .get_mut(m)
            .ok_or_else(|| Error::UnknownTarget(format!("machine {m}")))?;
        let rel = rng.gen_range(domain.delta_minus_theta.0..=domain.delta_minus_theta.1);
        s.delta = scenario.initial.v[buses[m]].arg() + rel;
        s.d_omega = rng.gen_range(domain.domega.0..=domain.domega.1);
    }
    let mut state = scenario
        .plant
        .state_from_machines(0.0, &states, scenario.initial.v.clone())?;
    state.v = project_algebraic(&scenario.plant, &state.x, &state.v, &Default::default())?;
    Ok(state)
}

fn ic_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LocalTruth {
    /// Fine trapezoidal run of the whole system over the step.
    System,
    /// Exact integration of the machine alone under the solver's own
    /// linear boundary profile.
    Component,
}

impl fmt::Display for LocalTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LocalTruth::System => "system",
            LocalTruth::Component => "component",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalErrorRow {
    pub solver: String,
    pub h: f64,
    pub variable: String,
    pub truth: LocalTruth,
    pub summary: Summary,
    /// Initial conditions on which the solver or the truth failed.
    pub failures: usize,
}

#[derive(Clone)]
struct LocalSample {
    errors: Vec<(String, LocalTruth, f64)>,
}

/// One-step errors of machine `machine` after a single step from `n`
/// sampled initial conditions, for every solver and step size.
#[allow(clippy::too_many_arguments)]
pub fn local_error_study(
    scenario: &Scenario,
    solvers: &[SolverSpec],
    machine: usize,
    domain: &InputDomain,
    n: usize,
    hs: &[f64],
    seed: u64,
    oracle: &OracleOptions,
) -> Result<Vec<LocalErrorRow>> {
    let buses = scenario.plant.machine_buses();
    let bus = *buses
        .get(machine)
        .ok_or_else(|| Error::UnknownTarget(format!("machine {machine}")))?;
    let spec = {
        let site = &scenario.plant.model.machines[machine];
        let frozen = scenario.plant.machine_states(&scenario.initial.x)[machine];
        MachineSpec {
            params: site.params.clone(),
            e_q_prime: frozen.e_q_prime,
            frequency_hz: scenario.plant.model.frequency_hz,
        }
    };
    let no_disturbance = Scenario {
        disturbances: Vec::new(),
        ..scenario.clone()
    };

    let jobs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..hs.len()).map(move |k| (i, k)))
        .collect();
    let results: Vec<Vec<Option<LocalSample>>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let h = hs[k];
            let ic = match sample_initial_condition(
                &no_disturbance,
                &[machine],
                domain,
                &mut ic_rng(seed, i as u64),
            ) {
                Ok(ic) => ic,
                Err(e) => {
                    log::warn!("initial condition {i} could not be projected: {e}");
                    return vec![None; solvers.len()];
                }
            };
            let one_step = Scenario {
                t_end: h,
                ..no_disturbance.with_initial(ic.clone())
            };
            let truth = one_step
                .reference(&OracleOptions {
                    record_h: h,
                    ..*oracle
                })
                .ok()
                .and_then(|t| t.samples.last().cloned());
            let x0 = scenario.plant.machine_states(&ic.x)[machine];
            solvers
                .iter()
                .map(|s| {
                    let cfg = s.config(h);
                    let (next, _) = match newton_solve(&scenario.plant, &cfg, &ic) {
                        Ok(r) => r,
                        Err(e) => {
                            log::warn!(
                                "solver {} failed on initial condition {i} at h = {h}: {e}",
                                s.name
                            );
                            return None;
                        }
                    };
                    let xm = scenario.plant.machine_states(&next.x)[machine];
                    let mut errors = Vec::new();
                    if let Some(t) = &truth {
                        let tm = t.machines[machine];
                        errors.push((
                            format!("delta_{machine}"),
                            LocalTruth::System,
                            (xm.delta - tm.delta).abs(),
                        ));
                        errors.push((
                            format!("domega_{machine}"),
                            LocalTruth::System,
                            (xm.d_omega - tm.d_omega).abs(),
                        ));
                        errors.push((
                            format!("v_{bus}"),
                            LocalTruth::System,
                            (next.v[bus].norm() - t.v[bus].norm()).abs(),
                        ));
                    } else {
                        return None;
                    }
                    let exact = component_truth(
                        &spec,
                        h,
                        &x0,
                        Polar::from_complex(ic.v[bus]),
                        Polar::from_complex(next.v[bus]),
                    )
                    .ok()?;
                    errors.push((
                        format!("delta_{machine}"),
                        LocalTruth::Component,
                        (xm.delta - exact.delta).abs(),
                    ));
                    errors.push((
                        format!("domega_{machine}"),
                        LocalTruth::Component,
                        (xm.d_omega - exact.d_omega).abs(),
                    ));
                    Some(LocalSample { errors })
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for (si, solver) in solvers.iter().enumerate() {
        for (k, &h) in hs.iter().enumerate() {
            let mut failures = 0;
            let mut groups: Vec<((String, LocalTruth), Vec<f64>)> = Vec::new();
            for (job, res) in jobs.iter().zip(&results) {
                if job.1 != k {
                    continue;
                }
                match &res[si] {
                    None => failures += 1,
                    Some(sample) => {
                        for (var, truth, e) in &sample.errors {
                            let key = (var.clone(), *truth);
                            match groups.iter_mut().find(|(g, _)| *g == key) {
                                Some((_, vals)) => vals.push(*e),
                                None => groups.push((key, vec![*e])),
                            }
                        }
                    }
                }
            }
            if failures > 0 {
                log::warn!(
                    "{failures} of {n} initial conditions excluded for {} at h = {h}",
                    solver.name
                );
            }
            for ((variable, truth), vals) in groups {
                rows.push(LocalErrorRow {
                    solver: solver.name.clone(),
                    h,
                    variable,
                    truth,
                    summary: summarize(&vals),
                    failures,
                });
            }
        }
    }
    Ok(rows)
}

/// Error trajectories of every solver from `n` sampled initial conditions.
/// Returns one report per (run, solver), run-major. If runs fail, the error
/// of the lowest-numbered one is returned.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_fan(
    scenario: &Scenario,
    solvers: &[SolverSpec],
    machines: &[usize],
    domain: &InputDomain,
    n: usize,
    h: f64,
    seed: u64,
    variables: &[Variable],
    oracle: &OracleOptions,
) -> Result<Vec<(usize, ErrorReport)>> {
    if n == 0 {
        return Err(Error::Config("the fan needs at least one run".into()));
    }
    let per_run: Vec<Vec<(usize, ErrorReport)>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<(usize, ErrorReport)>> {
            let ic =
                sample_initial_condition(scenario, machines, domain, &mut ic_rng(seed, i as u64))?;
            let run = scenario.with_initial(ic);
            let reports = global_error_study(&run, solvers, h, variables, oracle)?;
            Ok(reports.into_iter().map(|r| (i, r)).collect())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(per_run.into_iter().flatten().collect())
}

/// `100·(1 − mean_v max_t e_hybrid / mean_v max_t e_pure)`.
pub fn accuracy_boost(
    pure: &ErrorReport,
    hybrid: &ErrorReport,
    variables: &[Variable],
) -> Result<f64> {
    if pure.times != hybrid.times {
        return Err(Error::GridMismatch(format!(
            "reports have {} and {} time points",
            pure.times.len(),
            hybrid.times.len()
        )));
    }
    if variables.is_empty() {
        return Err(Error::Config(
            "accuracy boost needs at least one variable".into(),
        ));
    }
    let mean = |r: &ErrorReport| -> Result<f64> {
        let mut sum = 0.0;
        for v in variables {
            sum += r.max_error(*v)?;
        }
        Ok(sum / variables.len() as f64)
    };
    let (p, q) = (mean(pure)?, mean(hybrid)?);
    if p == 0.0 {
        return Ok(if q == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(100.0 * (1.0 - q / p))
}

// ---------------------------------------------------------------------------
// CSV output

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `solver,h,t,<variables…>`, one row per time point of each report.
pub fn write_error_reports<W: Write>(reports: &[ErrorReport], mut w: W) -> Result<()> {
    let vars: Vec<String> = reports
        .first()
        .map(|r| r.variables.iter().map(|v| v.to_string()).collect())
        .unwrap_or_default();
    writeln!(w, "solver,h,t,{}", vars.join(","))?;
    for r in reports {
        for (i, t) in r.times.iter().enumerate() {
            let cols: Vec<String> = r.errors.iter().map(|e| num(e[i])).collect();
            writeln!(
                w,
                "{},{},{},{}",
                r.solver,
                num(r.h),
                num(*t),
                cols.join(",")
            )?;
        }
    }
    Ok(())
}

/// `study,solver,h,t,variable,value` rows.
pub fn write_error_reports_long<W: Write>(
    study: &str,
    reports: &[(Option<usize>, &ErrorReport)],
    mut w: W,
) -> Result<()> {
    writeln!(w, "study,run,solver,h,t,variable,value")?;
    for (run, r) in reports {
        let run = run.map(|i| i.to_string()).unwrap_or_default();
        for (k, v) in r.variables.iter().enumerate() {
            for (i, t) in r.times.iter().enumerate() {
                writeln!(
                    w,
                    "{study},{run},{},{},{},{v},{}",
                    r.solver,
                    num(r.h),
                    num(*t),
                    num(r.errors[k][i])
                )?;
            }
        }
    }
    Ok(())
}

/// `solver,h,variable,max,median,q1,q3,iqr,upper_whisker,failed` per report
/// and variable.
pub fn write_summaries<W: Write>(reports: &[ErrorReport], mut w: W) -> Result<()> {
    writeln!(
        w,
        "solver,h,variable,max,median,q1,q3,iqr,upper_whisker,failed"
    )?;
    for r in reports {
        for (v, s) in r.variables.iter().zip(&r.summaries) {
            writeln!(
                w,
                "{},{},{v},{},{},{},{},{},{},{}",
                r.solver,
                num(r.h),
                num(s.max),
                num(s.median),
                num(s.q1),
                num(s.q3),
                num(s.iqr),
                num(s.upper_whisker),
                r.failure.is_some()
            )?;
        }
    }
    Ok(())
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "solver,h,variable,max_error,failed")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.solver,
            num(r.h),
            r.variable,
            num(r.max_error),
            r.failed
        )?;
    }
    Ok(())
}

pub fn write_local_errors<W: Write>(rows: &[LocalErrorRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "solver,h,variable,truth,count,failures,median,q1,q3,iqr,upper_whisker,max"
    )?;
    for r in rows {
        let s = &r.summary;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.solver,
            num(r.h),
            r.variable,
            r.truth,
            s.count,
            r.failures,
            num(s.median),
            num(s.q1),
            num(s.q3),
            num(s.iqr),
            num(s.upper_whisker),
            num(s.max)
        )?;
    }
    Ok(())
}

/// `run,solver,h,t,<variables…>`.
pub fn write_fan<W: Write>(runs: &[(usize, ErrorReport)], mut w: W) -> Result<()> {
    let vars: Vec<String> = runs
        .first()
        .map(|(_, r)| r.variables.iter().map(|v| v.to_string()).collect())
        .unwrap_or_default();
    writeln!(w, "run,solver,h,t,{}", vars.join(","))?;
    for (run, r) in runs {
        for (i, t) in r.times.iter().enumerate() {
            let cols: Vec<String> = r.errors.iter().map(|e| num(e[i])).collect();
            writeln!(
                w,
                "{run},{},{},{},{}",
                r.solver,
                num(r.h),
                num(*t),
                cols.join(",")
            )?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoostRow {
    pub set: String,
    pub variables: Vec<Variable>,
    pub err_pure: f64,
    pub err_hybrid: f64,
    pub boost_percent: f64,
}

pub fn write_boost<W: Write>(rows: &[BoostRow], mut w: W) -> Result<()> {
    writeln!(w, "set,variables,err_pure,err_hybrid,boost_percent")?;
    for r in rows {
        let vars: Vec<String> = r.variables.iter().map(|v| v.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            r.set,
            vars.join(" "),
            num(r.err_pure),
            num(r.err_hybrid),
            num(r.boost_percent)
        )?;
    }
    Ok(())
}

/// Boost row over a named variable set.
pub fn boost_row(
    set: &str,
    pure: &ErrorReport,
    hybrid: &ErrorReport,
    variables: &[Variable],
) -> Result<BoostRow> {
    let mean = |r: &ErrorReport| -> Result<f64> {
        let mut s = 0.0;
        for v in variables {
            s += r.max_error(*v)?;
        }
        Ok(s / variables.len() as f64)
    };
    Ok(BoostRow {
        set: set.to_string(),
        variables: variables.to_vec(),
        err_pure: mean(pure)?,
        err_hybrid: mean(hybrid)?,
        boost_percent: accuracy_boost(pure, hybrid, variables)?,
    })
}

/// Machine state `m` of a system state.
pub fn machine_state(plant: &Plant, state: &SystemState, m: usize) -> MachineState {
    plant.machine_states(&state.x)[m]
}
