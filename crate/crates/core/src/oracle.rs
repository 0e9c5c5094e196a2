//! Ground truth: fine-step reference trajectories of the whole system,
//! single-machine truth under a linear boundary profile, and surrogate
//! training datasets.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebraizer::{angle_profile, linear_profile, wrap_angle, AlgebraizerKind};
use crate::error::{Error, Result};
use crate::machine::{machine_f, MachineParams, MachineState, Polar};
use crate::netmodel::Disturbance;
use crate::stepper::{
    simulate, NewtonSettings, Plant, Sample, SolverConfig, SystemState, Trajectory,
};
use crate::surrogate::{fingerprint, InputDomain, INPUT_NAMES};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptions {
    pub h_ref: f64,
    /// Spacing of the recorded truth samples; a multiple of `h_ref`.
    pub record_h: f64,
    /// Bound on the deviation between the `h_ref` and `h_ref/2` runs.
    pub tolerance: f64,
    pub newton: NewtonSettings,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            h_ref: 5e-5,
            record_h: 1e-3,
            tolerance: 1e-8,
            newton: NewtonSettings {
                epsilon: 1e-10,
                k_max: 20,
                max_step: None,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Reference {
    /// The `h_ref/2` run.
    pub truth: Trajectory,
    /// Max deviation between the two runs over every recorded state.
    pub deviation: f64,
}

fn stride(record_h: f64, h: f64) -> Result<usize> {
    let r = record_h / h;
    let k = r.round();
    if k < 1.0 || (r - k).abs() > 1e-9 * k {
        return Err(Error::GridMismatch(format!(
            "record spacing {record_h} s is not a multiple of {h} s"
        )));
    }
    Ok(k as usize)
}

/// Max absolute difference of machine states and bus voltages.
pub fn sample_deviation(a: &Sample, b: &Sample) -> f64 {
    let mut d = 0.0_f64;
    for (x, y) in a.machines.iter().zip(&b.machines) {
        for (p, q) in x.to_array().iter().zip(y.to_array()) {
            d = d.max((p - q).abs());
        }
    }
    for (x, y) in a.x.iter().zip(&b.x) {
        d = d.max((x - y).abs());
    }
    for (x, y) in a.v.iter().zip(&b.v) {
        d = d.max((x.re - y.re).abs()).max((x.im - y.im).abs());
    }
    d
}

/// Runs the trapezoidal rule on every unit at `h_ref` and `h_ref/2` (in
/// parallel) and returns the finer run once the two agree.
pub fn reference_trajectory(
    plant: &Plant,
    initial: &SystemState,
    t_end: f64,
    disturbances: &[Disturbance],
    opts: &OracleOptions,
) -> Result<Reference> {
    let run = |h: f64| -> Result<Trajectory> {
        let mut cfg = SolverConfig::uniform(h, AlgebraizerKind::Trapezoidal, plant.units.len());
        cfg.newton = opts.newton;
        cfg.record_stride = stride(opts.record_h, h)?;
        simulate(plant, &cfg, initial, t_end, disturbances)
    };
    let (coarse, fine) = rayon::join(|| run(opts.h_ref), || run(opts.h_ref / 2.0));
    let (coarse, fine) = (coarse?, fine?);
    if coarse.samples.len() != fine.samples.len() {
        return Err(Error::GridMismatch(format!(
            "{} and {} reference samples",
            coarse.samples.len(),
            fine.samples.len()
        )));
    }
    let deviation = coarse
        .samples
        .iter()
        .zip(&fine.samples)
        .map(|(a, b)| sample_deviation(a, b))
        .fold(0.0, f64::max);
    log::info!("reference self-check deviation {deviation:e}");
    if !(deviation < opts.tolerance) {
        return Err(Error::SelfCheck {
            what: "reference trajectory halving",
            deviation,
            tolerance: opts.tolerance,
        });
    }
    Ok(Reference {
        truth: fine,
        deviation,
    })
}

/// Single machine with its frozen internal voltages.
#[derive(Clone, Debug, PartialEq)]
pub struct MachineSpec {
    pub params: MachineParams,
    /// Internal voltage used for classical machines.
    pub e_q_prime: f64,
    pub frequency_hz: f64,
}

pub const TRUTH_SUBSTEPS: usize = 1000;
pub const TRUTH_TOLERANCE: f64 = 1e-10;

fn rk4(
    spec: &MachineSpec,
    h: f64,
    x_n: &MachineState,
    y_n: Polar,
    y_np1: Polar,
    substeps: usize,
) -> Result<MachineState> {
    let dt = h / substeps as f64;
    let boundary = |t: f64| -> Result<(f64, f64)> {
        let t = t.min(h);
        Ok((
            linear_profile(y_n.v, y_np1.v, t, h)?,
            angle_profile(y_n.theta, y_np1.theta, t, h)?,
        ))
    };
    let rhs = |t: f64, x: [f64; 4]| -> Result<[f64; 4]> {
        let (v, theta) = boundary(t)?;
        machine_f(
            &spec.params,
            &MachineState::from_array(x),
            v,
            theta,
            spec.frequency_hz,
        )
    };
    let axpy = |x: [f64; 4], k: [f64; 4], a: f64| {
        let mut o = x;
        for i in 0..4 {
            o[i] += a * k[i];
        }
        o
    };
    let mut x = x_n.to_array();
    for s in 0..substeps {
        let t = s as f64 * dt;
        let k1 = rhs(t, x)?;
        let k2 = rhs(t + dt / 2.0, axpy(x, k1, dt / 2.0))?;
        let k3 = rhs(t + dt / 2.0, axpy(x, k2, dt / 2.0))?;
        let k4 = rhs(t + dt, axpy(x, k3, dt))?;
        for i in 0..4 {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(MachineState::from_array(x))
}

/// End-of-step state of one machine whose terminal voltage follows the
/// linear profile between `y_n` and `y_np1`. Classical RK4 with
/// [`TRUTH_SUBSTEPS`] substeps, checked against twice as many.
pub fn component_truth(
    spec: &MachineSpec,
    h: f64,
    x_n: &MachineState,
    y_n: Polar,
    y_np1: Polar,
) -> Result<MachineState> {
    let (coarse, fine) = component_truth_pair(spec, h, x_n, y_n, y_np1, TRUTH_SUBSTEPS)?;
    let deviation = coarse
        .to_array()
        .iter()
        .zip(fine.to_array())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    if !(deviation < TRUTH_TOLERANCE) {
        return Err(Error::SelfCheck {
            what: "component truth halving",
            deviation,
            tolerance: TRUTH_TOLERANCE,
        });
    }
    Ok(coarse)
}

/// RK4 results at `substeps` and `2·substeps`.
pub fn component_truth_pair(
    spec: &MachineSpec,
    h: f64,
    x_n: &MachineState,
    y_n: Polar,
    y_np1: Polar,
    substeps: usize,
) -> Result<(MachineState, MachineState)> {
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::Config(format!(
            "step size must be nonnegative, got {h}"
        )));
    }
    if substeps == 0 {
        return Err(Error::Config("at least one substep is required".into()));
    }
    if h == 0.0 {
        return Ok((*x_n, *x_n));
    }
    Ok((
        rk4(spec, h, x_n, y_n, y_np1, substeps)?,
        rk4(spec, h, x_n, y_n, y_np1, 2 * substeps)?,
    ))
}

/// Surrogate inputs in [`INPUT_NAMES`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetRecordC {
    pub inputs: [f64; 6],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetRecordX {
    pub inputs: [f64; 6],
    /// `(δ_{n+1}, Δω_{n+1})` in the frame where `θ_n = 0`.
    pub label: [f64; 2],
}

const COLLOCATION_STREAM: u64 = 1 << 63;

fn sample_inputs(domain: &InputDomain, seed: u64, stream: u64) -> [f64; 6] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let ranges = [
        domain.h,
        domain.delta_minus_theta,
        domain.domega,
        domain.v,
        domain.v,
        domain.dtheta,
    ];
    let mut out = [0.0; 6];
    for (o, (lo, hi)) in out.iter_mut().zip(ranges) {
        *o = rng.gen_range(lo..=hi);
    }
    out
}

/// Labelled records; record `i` depends only on `(seed, i)`.
pub fn generate_dataset_x(
    spec: &MachineSpec,
    domain: &InputDomain,
    n: usize,
    seed: u64,
) -> Result<Vec<DatasetRecordX>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let inputs = sample_inputs(domain, seed, i);
            let [h, dmt, dw, v_n, v_np1, dtheta] = inputs;
            let x_n = MachineState {
                e_q_prime: spec.e_q_prime,
                e_d_prime: 0.0,
                delta: dmt,
                d_omega: dw,
            };
            let x = component_truth(
                spec,
                h,
                &x_n,
                Polar::new(v_n, 0.0),
                Polar::new(v_np1, dtheta),
            )?;
            Ok(DatasetRecordX {
                inputs,
                label: [x.delta, x.d_omega],
            })
        })
        .collect()
}

/// Collocation records, drawn from a stream family disjoint from the
/// labelled set.
pub fn generate_dataset_c(domain: &InputDomain, n: usize, seed: u64) -> Vec<DatasetRecordC> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| DatasetRecordC {
            inputs: sample_inputs(domain, seed, COLLOCATION_STREAM | i),
        })
        .collect()
}

pub fn write_dataset_x<W: Write>(records: &[DatasetRecordX], mut w: W) -> Result<()> {
    writeln!(w, "{},x_np1_delta,x_np1_domega", INPUT_NAMES.join(","))?;
    for r in records {
        let cols: Vec<String> = r
            .inputs
            .iter()
            .chain(&r.label)
            .map(|v| format!("{v:.16e}"))
            .collect();
        writeln!(w, "{}", cols.join(","))?;
    }
    Ok(())
}

pub fn write_dataset_c<W: Write>(records: &[DatasetRecordC], mut w: W) -> Result<()> {
    writeln!(w, "{}", INPUT_NAMES.join(","))?;
    for r in records {
        let cols: Vec<String> = r.inputs.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", cols.join(","))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DatasetMeta<'a> {
    machine: &'a MachineParams,
    machine_params_hash: String,
    e_q_prime: f64,
    frequency_hz: f64,
    seed: u64,
    n_x: usize,
    n_c: usize,
    inputs: Vec<serde_json::Value>,
    labels: [&'static str; 2],
}

/// Writes `dx.csv`, `dc.csv` and a `meta.json` sidecar into `dir`.
pub fn write_datasets(
    dir: &Path,
    spec: &MachineSpec,
    domain: &InputDomain,
    n_x: usize,
    n_c: usize,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dx = generate_dataset_x(spec, domain, n_x, seed)?;
    write_dataset_x(
        &dx,
        std::io::BufWriter::new(std::fs::File::create(dir.join("dx.csv"))?),
    )?;
    let dc = generate_dataset_c(domain, n_c, seed);
    write_dataset_c(
        &dc,
        std::io::BufWriter::new(std::fs::File::create(dir.join("dc.csv"))?),
    )?;
    let meta = DatasetMeta {
        machine: &spec.params,
        machine_params_hash: fingerprint(&spec.params),
        e_q_prime: spec.e_q_prime,
        frequency_hz: spec.frequency_hz,
        seed,
        n_x,
        n_c,
        inputs: domain
            .specs()
            .into_iter()
            .map(|s| serde_json::json!({"name": s.name, "lo": s.lo, "hi": s.hi}))
            .collect(),
        labels: ["x_np1_delta", "x_np1_domega"],
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(dir.join("meta.json"), text)?;
    Ok(())
}

/// Wraps `δ − θ` of a label back into the relative encoding.
pub fn relative_angle(delta: f64, theta: f64) -> f64 {
    wrap_angle(delta - theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::preset_params;

    fn m3() -> MachineSpec {
        MachineSpec {
            params: preset_params("m3").unwrap(),
            e_q_prime: 1.05,
            frequency_hz: 60.0,
        }
    }

    #[test]
    fn tiny_step_is_identity() {
        let x = MachineState {
            e_q_prime: 1.05,
            e_d_prime: 0.0,
            delta: 0.5,
            d_omega: 0.001,
        };
        let out = component_truth(
            &m3(),
            1e-9,
            &x,
            Polar::new(1.0, 0.0),
            Polar::new(1.01, 0.01),
        )
        .unwrap();
        for (a, b) in out.to_array().iter().zip(x.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn machine_at_rest_stays_put() {
        // P_e = E'_q V sin(δ−θ)/X'_d = P_m at this angle
        let spec = m3();
        let p = &spec.params;
        let angle = (p.p_m * p.xd_prime / (spec.e_q_prime * 1.0)).asin();
        let x = MachineState {
            e_q_prime: spec.e_q_prime,
            e_d_prime: 0.0,
            delta: angle,
            d_omega: 0.0,
        };
        let y = Polar::new(1.0, 0.0);
        let out = component_truth(&spec, 0.04, &x, y, y).unwrap();
        for (a, b) in out.to_array().iter().zip(x.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn datasets_are_seeded_and_in_range() {
        let spec = m3();
        let domain = InputDomain::default();
        let a = generate_dataset_x(&spec, &domain, 50, 7).unwrap();
        let b = generate_dataset_x(&spec, &domain, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset_c(&domain, 50, 7);
        assert_eq!(c.len(), 50);
        assert_ne!(c[0].inputs, a[0].inputs);
        for r in &a {
            assert!(r.inputs[0] >= 0.001 && r.inputs[0] <= 0.04);
            assert!(r.inputs[2].abs() <= 0.015);
        }
        // prefix stability: record i depends only on (seed, i)
        let short = generate_dataset_x(&spec, &domain, 10, 7).unwrap();
        assert_eq!(&a[..10], &short[..]);
    }

    #[test]
    fn empty_dataset_has_header() {
        let mut buf = Vec::new();
        write_dataset_x(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "h,delta_minus_theta,domega,v_n,v_np1,dtheta,x_np1_delta,x_np1_domega\n"
        );
    }

    #[test]
    fn stride_requires_nesting() {
        assert_eq!(stride(1e-3, 5e-5).unwrap(), 20);
        assert_eq!(stride(1e-3, 2.5e-5).unwrap(), 40);
        assert!(stride(1e-3, 3e-4).is_err());
    }
}
