//! Electrical network: buses, branches, constant-impedance loads and machine
//! placements, the bus admittance matrix, and the current-balance equations.
//!
//! All quantities are per-unit. Loads are folded into the admittance matrix
//! as `Y = P − jQ` (their consumption at 1.0 p.u. voltage), which keeps the
//! network equations linear in the bus voltages.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::MachineParams;

const IEEE9: &str = include_str!("../presets/ieee9.json");
const IEEE57: &str = include_str!("../presets/ieee57.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusKind {
    Generator,
    Load,
    Connection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub impedance: Complex64,
    /// Total line charging; half is placed at each end.
    pub b_shunt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub admittance: Complex64,
    /// Accumulated load-step disturbances, kept apart from the nominal value
    /// so that a step followed by its negation restores the original matrix.
    pub step: Complex64,
}

impl Load {
    pub fn from_power(bus: usize, p: f64, q: f64) -> Self {
        Self {
            bus,
            admittance: Complex64::new(p, -q),
            step: Complex64::new(0.0, 0.0),
        }
    }

    pub fn effective_admittance(&self) -> Complex64 {
        self.admittance + self.step
    }
}

/// Fixed shunt element at a bus (e.g. a capacitor bank).
#[derive(Clone, Debug, PartialEq)]
pub struct BusShunt {
    pub bus: usize,
    pub admittance: Complex64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MachineSite {
    pub bus: usize,
    pub params: MachineParams,
    /// Terminal voltage magnitude held by the equilibrium initialization.
    pub v_set: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DisturbanceKind {
    /// Adds `delta` to the mechanical power of machine `machine`.
    MechanicalPowerStep { machine: usize, delta: f64 },
    /// Adds a constant-impedance load of `p + jq` (at 1.0 p.u.) to `bus`.
    LoadStep { bus: usize, p: f64, q: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    /// Application time (s).
    pub time: f64,
}

impl Disturbance {
    pub fn pm_step(machine: usize, delta: f64, time: f64) -> Self {
        Self {
            kind: DisturbanceKind::MechanicalPowerStep { machine, delta },
            time,
        }
    }

    pub fn load_step(bus: usize, p: f64, q: f64, time: f64) -> Self {
        Self {
            kind: DisturbanceKind::LoadStep { bus, p, q },
            time,
        }
    }

    /// The disturbance that undoes this one.
    pub fn inverse(&self) -> Self {
        let kind = match self.kind {
            DisturbanceKind::MechanicalPowerStep { machine, delta } => {
                DisturbanceKind::MechanicalPowerStep {
                    machine,
                    delta: -delta,
                }
            }
            DisturbanceKind::LoadStep { bus, p, q } => {
                DisturbanceKind::LoadStep { bus, p: -p, q: -q }
            }
        };
        Self { kind, ..*self }
    }

    /// Whether the disturbance changes the admittance matrix.
    pub fn alters_network(&self) -> bool {
        matches!(self.kind, DisturbanceKind::LoadStep { .. })
    }
}

/// Validated network with its admittance matrix. Immutable once built;
/// disturbances produce modified copies.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    pub name: String,
    pub frequency_hz: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<Load>,
    pub shunts: Vec<BusShunt>,
    pub machines: Vec<MachineSite>,
    /// Machines that the bundled "hybrid" solver assigns to a surrogate.
    pub hybrid_machines: Vec<usize>,
    pub ybus: DMatrix<Complex64>,
}

// ---------------------------------------------------------------------------
// Document schema

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    #[serde(default)]
    name: Option<String>,
    frequency_hz: f64,
    buses: Vec<Bus>,
    #[serde(default)]
    branches: Vec<BranchDoc>,
    #[serde(default)]
    loads: Vec<LoadDoc>,
    #[serde(default)]
    bus_shunts: Vec<ShuntDoc>,
    #[serde(default)]
    machines: Vec<MachineDoc>,
    #[serde(default)]
    hybrid_machines: Vec<usize>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct BranchDoc {
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    #[serde(default)]
    b_shunt: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct LoadDoc {
    bus: usize,
    p: f64,
    q: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ShuntDoc {
    bus: usize,
    #[serde(default)]
    g: f64,
    #[serde(default)]
    b: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct MachineDoc {
    bus: usize,
    #[serde(flatten)]
    params: MachineParams,
    #[serde(default = "unit_voltage")]
    v_set: f64,
}

fn unit_voltage() -> f64 {
    1.0
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses and validates a network document (JSON text).
pub fn load_network(source: &str) -> Result<NetworkModel> {
    let doc: NetworkDoc = serde_json::from_str(source).map_err(|e| {
        schema(
            format!("line {}, column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    NetworkModel::from_doc(doc)
}

/// Resolves a bundled preset name (`ieee9`, `ieee57`) or reads a file.
pub fn load_network_from(name_or_path: &str) -> Result<NetworkModel> {
    match preset_source(name_or_path) {
        Some(src) => load_network(src),
        None => load_network(&std::fs::read_to_string(Path::new(name_or_path))?),
    }
}

pub fn preset(name: &str) -> Result<NetworkModel> {
    let src =
        preset_source(name).ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    load_network(src)
}

fn preset_source(name: &str) -> Option<&'static str> {
    match name {
        "ieee9" => Some(IEEE9),
        "ieee57" => Some(IEEE57),
        _ => None,
    }
}

impl NetworkModel {
    fn from_doc(doc: NetworkDoc) -> Result<Self> {
        if !(doc.frequency_hz.is_finite() && doc.frequency_hz > 0.0) {
            return Err(schema("frequency_hz", "must be positive"));
        }
        let n = doc.buses.len();
        if n == 0 {
            return Err(schema("buses", "at least one bus is required"));
        }
        let mut seen = vec![false; n];
        for (k, bus) in doc.buses.iter().enumerate() {
            if bus.id >= n || seen[bus.id] {
                return Err(schema(
                    format!("buses[{k}].id"),
                    "bus ids must be unique and contiguous from 0",
                ));
            }
            seen[bus.id] = true;
        }
        let mut buses = doc.buses;
        buses.sort_by_key(|b| b.id);

        let check_bus = |path: String, bus: usize| -> Result<()> {
            if bus >= n {
                Err(Error::DanglingBus { path, bus })
            } else {
                Ok(())
            }
        };

        let mut branches = Vec::with_capacity(doc.branches.len());
        for (k, b) in doc.branches.iter().enumerate() {
            check_bus(format!("branches[{k}].from"), b.from)?;
            check_bus(format!("branches[{k}].to"), b.to)?;
            if b.from == b.to {
                return Err(schema(format!("branches[{k}]"), "from and to must differ"));
            }
            if ![b.r, b.x, b.b_shunt].iter().all(|v| v.is_finite()) {
                return Err(schema(format!("branches[{k}]"), "values must be finite"));
            }
            if b.r == 0.0 && b.x == 0.0 {
                return Err(Error::ZeroImpedance {
                    path: format!("branches[{k}]"),
                });
            }
            branches.push(Branch {
                from: b.from,
                to: b.to,
                impedance: Complex64::new(b.r, b.x),
                b_shunt: b.b_shunt,
            });
        }

        let mut loads = Vec::with_capacity(doc.loads.len());
        for (k, l) in doc.loads.iter().enumerate() {
            check_bus(format!("loads[{k}].bus"), l.bus)?;
            if !(l.p.is_finite() && l.q.is_finite()) {
                return Err(schema(format!("loads[{k}]"), "values must be finite"));
            }
            loads.push(Load::from_power(l.bus, l.p, l.q));
        }

        let mut shunts = Vec::with_capacity(doc.bus_shunts.len());
        for (k, s) in doc.bus_shunts.iter().enumerate() {
            check_bus(format!("bus_shunts[{k}].bus"), s.bus)?;
            if !(s.g.is_finite() && s.b.is_finite()) {
                return Err(schema(format!("bus_shunts[{k}]"), "values must be finite"));
            }
            shunts.push(BusShunt {
                bus: s.bus,
                admittance: Complex64::new(s.g, s.b),
            });
        }

        let mut machines = Vec::with_capacity(doc.machines.len());
        let mut machines_at = vec![0usize; n];
        for (k, m) in doc.machines.into_iter().enumerate() {
            let path = format!("machines[{k}]");
            check_bus(format!("{path}.bus"), m.bus)?;
            if buses[m.bus].kind != BusKind::Generator {
                return Err(schema(
                    format!("{path}.bus"),
                    "machines must sit on generator buses",
                ));
            }
            let params = if m.params.classical {
                m.params.classical()
            } else {
                m.params
            };
            params.validate(&path)?;
            if !(m.v_set.is_finite() && m.v_set > 0.0) {
                return Err(schema(format!("{path}.v_set"), "must be positive"));
            }
            machines_at[m.bus] += 1;
            machines.push(MachineSite {
                bus: m.bus,
                params,
                v_set: m.v_set,
            });
        }
        for bus in &buses {
            if bus.kind == BusKind::Generator && machines_at[bus.id] != 1 {
                return Err(schema(
                    format!("buses[{}]", bus.id),
                    "generator buses must reference exactly one machine",
                ));
            }
        }
        for (k, &m) in doc.hybrid_machines.iter().enumerate() {
            if m >= machines.len() {
                return Err(schema(
                    format!("hybrid_machines[{k}]"),
                    format!("machine {m} does not exist"),
                ));
            }
        }

        let ybus = build_ybus(&buses, &branches, &loads, &shunts)?;
        Ok(Self {
            name: doc.name.unwrap_or_else(|| "network".to_string()),
            frequency_hz: doc.frequency_hz,
            buses,
            branches,
            loads,
            shunts,
            machines,
            hybrid_machines: doc.hybrid_machines,
            ybus,
        })
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    /// Returns a copy of the model with `d` applied (its time is ignored).
    pub fn apply_disturbance(&self, d: &Disturbance) -> Result<NetworkModel> {
        let mut out = self.clone();
        match d.kind {
            DisturbanceKind::MechanicalPowerStep { machine, delta } => {
                let site = out
                    .machines
                    .get_mut(machine)
                    .ok_or_else(|| Error::UnknownTarget(format!("machine {machine}")))?;
                site.params.p_m += delta;
            }
            DisturbanceKind::LoadStep { bus, p, q } => {
                if bus >= out.n_bus() {
                    return Err(Error::UnknownTarget(format!("bus {bus}")));
                }
                let delta = Complex64::new(p, -q);
                match out.loads.iter_mut().find(|l| l.bus == bus) {
                    Some(load) => load.step += delta,
                    None => out.loads.push(Load {
                        bus,
                        admittance: Complex64::new(0.0, 0.0),
                        step: delta,
                    }),
                }
                out.ybus = build_ybus(&out.buses, &out.branches, &out.loads, &out.shunts)?;
            }
        }
        Ok(out)
    }

    /// Kirchhoff current mismatch at every bus, see [`network_residual`].
    pub fn residual(&self, machine_currents: &[Complex64], v: &[Complex64]) -> DVector<f64> {
        let n = self.n_bus();
        let mut injected = vec![Complex64::new(0.0, 0.0); n];
        for (site, i) in self.machines.iter().zip(machine_currents) {
            injected[site.bus] += *i;
        }
        bus_mismatch(&self.ybus, &injected, v)
    }
}

/// `Y[i][i] = Σ(1/z + j·b/2)` over incident branches plus load and shunt
/// admittance at `i`; `Y[i][j] = −Σ 1/z_ij` over branches joining `i` and `j`.
pub fn build_ybus(
    buses: &[Bus],
    branches: &[Branch],
    loads: &[Load],
    shunts: &[BusShunt],
) -> Result<DMatrix<Complex64>> {
    let n = buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (k, br) in branches.iter().enumerate() {
        if br.impedance.norm_sqr() == 0.0 {
            return Err(Error::ZeroImpedance {
                path: format!("branches[{k}]"),
            });
        }
        let ys = br.impedance.inv();
        let half = Complex64::new(0.0, br.b_shunt / 2.0);
        y[(br.from, br.from)] += ys + half;
        y[(br.to, br.to)] += ys + half;
        y[(br.from, br.to)] -= ys;
        y[(br.to, br.from)] -= ys;
    }
    for s in shunts {
        y[(s.bus, s.bus)] += s.admittance;
    }
    for l in loads {
        y[(l.bus, l.bus)] += l.effective_admittance();
    }
    Ok(y)
}

/// Current-balance mismatch `I_inj − Y·V`, stacked as `[Re; Im]` (length 2·N).
pub fn network_residual(
    model: &NetworkModel,
    machine_currents: &[Complex64],
    v: &[Complex64],
) -> DVector<f64> {
    model.residual(machine_currents, v)
}

fn bus_mismatch(
    ybus: &DMatrix<Complex64>,
    injected: &[Complex64],
    v: &[Complex64],
) -> DVector<f64> {
    let n = injected.len();
    let mut out = DVector::zeros(2 * n);
    for i in 0..n {
        let mut yv = Complex64::new(0.0, 0.0);
        for j in 0..n {
            yv += ybus[(i, j)] * v[j];
        }
        let m = injected[i] - yv;
        out[i] = m.re;
        out[n + i] = m.im;
    }
    out
}
