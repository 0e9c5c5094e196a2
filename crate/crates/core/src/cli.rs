//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::algebraizer::{AlgebraizerKind, IncrementModel};
use crate::error::{Error, Result};
use crate::harness::{self, Scenario, SolverSpec, Variable};
use crate::machine::{init_equilibrium, preset_params, EquilibriumOptions};
use crate::netmodel::{load_network_from, Disturbance, NetworkModel};
use crate::oracle::{write_datasets, MachineSpec, OracleOptions};
use crate::stepper::{simulate, Plant};
use crate::surrogate::{fingerprint, DomainPolicy, InputDomain, NeuralIncrement, SurrogateNet};

#[derive(Debug, Parser)]
#[command(
    name = "hybrid-dae",
    version,
    about = "Transient power-system simulation with pluggable integration rules"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// JSON object of flag defaults, e.g. {"h-ms": 8, "network": "ieee9"};
    /// flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// March one solver over a scenario and write the trajectory.
    Simulate(SimulateArgs),
    /// Solve for the operating point and print it as JSON.
    Equilibrium(EquilibriumArgs),
    /// Write labelled and collocation datasets for surrogate training.
    GenDataset(GenDatasetArgs),
    /// Load a weight file and run forward, Jacobian and hard-constraint checks.
    ValidateWeights(ValidateArgs),
    /// Error over time of each solver against the reference.
    GlobalError(GlobalErrorArgs),
    /// Max error against step size.
    Sweep(SweepArgs),
    /// One-step error distributions from sampled initial conditions.
    LocalError(LocalErrorArgs),
    /// Error trajectories from sampled initial conditions.
    Fan(FanArgs),
    /// Aggregated accuracy gain of the hybrid solver over the pure one.
    Boost(BoostArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Preset name (ieee9, ieee57) or path to a network JSON file.
    #[arg(long, default_value = "ieee9")]
    pub network: String,

    /// `pm:<machine>:<delta>@<t>` or `load:<bus>:<p>[:<q>]@<t>`, 0-based
    /// indices. Repeatable.
    #[arg(long, value_parser = parse_disturbance, allow_hyphen_values = true)]
    pub disturb: Vec<Disturbance>,
}

#[derive(Debug, Args)]
pub struct SurrogateArgs {
    /// Surrogate weight file used by `hybrid` and `nn` entries.
    #[arg(long)]
    pub weights: Option<PathBuf>,

    /// Machines driven by the surrogate under `hybrid`; defaults to the
    /// network file's `hybrid_machines`.
    #[arg(long, value_delimiter = ',')]
    pub hybrid_machines: Option<Vec<usize>>,

    #[arg(long, value_enum, default_value = "reject")]
    pub domain_policy: PolicyArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PolicyArg {
    Reject,
    Clamp,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Reference step (ms).
    #[arg(long, default_value_t = 0.05)]
    pub oracle_h_ms: f64,

    /// Reference recording interval (ms).
    #[arg(long, default_value_t = 1.0)]
    pub oracle_record_ms: f64,

    /// Bound on the reference self-check deviation.
    #[arg(long, default_value_t = 1e-8)]
    pub oracle_tol: f64,
}

impl OracleArgs {
    fn options(&self) -> OracleOptions {
        OracleOptions {
            h_ref: self.oracle_h_ms * 1e-3,
            record_h: self.oracle_record_ms * 1e-3,
            tolerance: self.oracle_tol,
            ..OracleOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,

    /// Write `study,run,solver,h,t,variable,value` rows instead of one column per variable.
    #[arg(long)]
    pub long: bool,

    /// Report variables such as delta_rel_2,v_2; defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub variables: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub surrogate: SurrogateArgs,

    /// pure, hybrid, backward-euler, or custom:<map> with one of
    /// trap/be/nn per machine, e.g. custom:trap+trap+nn.
    #[arg(long, default_value = "pure")]
    pub solver: String,

    #[arg(long, default_value_t = 8.0)]
    pub h_ms: f64,

    #[arg(long, default_value_t = 10.0)]
    pub t_end: f64,

    /// Record every N-th grid point.
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,

    /// Trajectory CSV; `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EquilibriumArgs {
    #[arg(long, default_value = "ieee9")]
    pub network: String,

    /// JSON file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// m1, m2 or m3.
    #[arg(long, default_value = "m3")]
    pub machine_preset: String,

    /// Internal voltage of the classical machine; defaults to its value at
    /// the ieee9 operating point.
    #[arg(long)]
    pub e_q_prime: Option<f64>,

    #[arg(long, default_value_t = 100_000)]
    pub n_x: usize,

    #[arg(long, default_value_t = 100_000)]
    pub n_c: usize,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub weights: PathBuf,

    #[arg(long, default_value_t = 100)]
    pub points: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also require the weight file's fingerprint to match this machine preset.
    #[arg(long)]
    pub machine_preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub surrogate: SurrogateArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    pub report: ReportArgs,

    /// Solvers to compare. Repeatable.
    #[arg(long = "solver", default_values = ["pure", "hybrid"])]
    pub solvers: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GlobalErrorArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, default_value_t = 8.0)]
    pub h_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    pub t_end: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, value_delimiter = ',', default_values = ["1", "2", "4", "8"])]
    pub h_ms: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub t_end: f64,
}

#[derive(Debug, Args)]
pub struct LocalErrorArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// Machine whose initial state is sampled.
    #[arg(long, default_value_t = 2)]
    pub machine: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_values = ["5", "10", "15", "20", "25", "30", "35", "40"])]
    pub h_ms: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FanArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// Machines whose initial state is sampled; defaults to the hybrid machines.
    #[arg(long, value_delimiter = ',')]
    pub machines: Option<Vec<usize>>,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value_t = 10.0)]
    pub h_ms: f64,
    #[arg(long, default_value_t = 2.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BoostArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub surrogate: SurrogateArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    pub h_ms: f64,
    #[arg(long, default_value_t = 3.0)]
    pub t_end: f64,
}

/// Parses `pm:<machine>:<delta>@<t>` and `load:<bus>:<p>[:<q>]@<t>`.
pub fn parse_disturbance(s: &str) -> std::result::Result<Disturbance, String> {
    let bad =
        || format!("expected pm:<machine>:<delta>@<t> or load:<bus>:<p>[:<q>]@<t>, got `{s}`");
    let (body, time) = s.rsplit_once('@').ok_or_else(bad)?;
    let time: f64 = time.parse().map_err(|_| bad())?;
    let parts: Vec<&str> = body.split(':').collect();
    let index = |p: &str| p.parse::<usize>().map_err(|_| bad());
    let value = |p: &str| p.parse::<f64>().map_err(|_| bad());
    match parts.as_slice() {
        ["pm", m, d] => Ok(Disturbance::pm_step(index(m)?, value(d)?, time)),
        ["load", b, p] => Ok(Disturbance::load_step(index(b)?, value(p)?, 0.0, time)),
        ["load", b, p, q] => Ok(Disturbance::load_step(
            index(b)?,
            value(p)?,
            value(q)?,
            time,
        )),
        _ => Err(bad()),
    }
}

/// Turns a JSON object of flag values into command-line tokens.
fn overlay_tokens(doc: &Value) -> Result<Vec<OsString>> {
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Config("config file must hold a JSON object".into()))?;
    let mut out = Vec::new();
    for (key, value) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &Value| -> Result<String> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err(Error::Config(format!(
                    "config value for `{key}` must be a string or number"
                ))),
            }
        };
        match value {
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for item in items {
                    out.push(flag.clone().into());
                    out.push(scalar(item)?.into());
                }
            }
            v => {
                out.push(flag.into());
                out.push(scalar(v)?.into());
            }
        }
    }
    Ok(out)
}

/// Inserts config-file tokens directly after the subcommand so that
/// explicit flags, parsed later, take precedence.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut subcommand_at = None;
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].to_string_lossy();
        if tok == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(path) = tok.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
        } else if tok == "--jobs" {
            i += 2;
            continue;
        } else if subcommand_at.is_none() && !tok.starts_with('-') {
            subcommand_at = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(at)) = (config, subcommand_at) else {
        return Ok(argv);
    };
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let mut out = argv[..=at].to_vec();
    out.extend(overlay_tokens(&doc)?);
    out.extend_from_slice(&argv[at + 1..]);
    Ok(out)
}

fn load_surrogate(args: &SurrogateArgs) -> Result<Option<Arc<dyn IncrementModel>>> {
    let Some(path) = &args.weights else {
        return Ok(None);
    };
    let net = SurrogateNet::load(path)?;
    let policy = match args.domain_policy {
        PolicyArg::Reject => DomainPolicy::Reject,
        PolicyArg::Clamp => DomainPolicy::Clamp,
    };
    Ok(Some(Arc::new(NeuralIncrement::new(net, policy))))
}

fn warn_on_fingerprint(
    args: &SurrogateArgs,
    model: &NetworkModel,
    machines: &[usize],
) -> Result<()> {
    let Some(path) = &args.weights else {
        return Ok(());
    };
    let net = SurrogateNet::load(path)?;
    for &m in machines {
        if let Some(site) = model.machines.get(m) {
            if net.provenance.machine_params_hash != fingerprint(&site.params) {
                log::warn!(
                    "weights in {} were not trained for machine {m} (fingerprint mismatch)",
                    path.display()
                );
            }
        }
    }
    Ok(())
}

fn solver_spec(
    name: &str,
    plant: &Plant,
    surrogate: &Option<Arc<dyn IncrementModel>>,
    hybrid_machines: &[usize],
) -> Result<SolverSpec> {
    let units = plant.units.len();
    let nn = || {
        surrogate
            .clone()
            .ok_or_else(|| Error::Config(format!("solver `{name}` needs --weights")))
    };
    match name {
        "pure" | "trap" => Ok(SolverSpec::pure(units)),
        "backward-euler" | "be" => Ok(SolverSpec::uniform(
            "backward-euler",
            AlgebraizerKind::BackwardEuler,
            units,
        )),
        "hybrid" => SolverSpec::hybrid(units, hybrid_machines, nn()?),
        _ => {
            let map = name
                .strip_prefix("custom:")
                .ok_or_else(|| Error::Config(format!("unknown solver `{name}`")))?;
            let entries: Vec<&str> = map.split(['+', ',']).collect();
            if entries.len() != units {
                return Err(Error::Config(format!(
                    "solver map `{map}` has {} entries for {units} units",
                    entries.len()
                )));
            }
            let schemes = entries
                .iter()
                .map(|e| match *e {
                    "trap" => Ok(AlgebraizerKind::Trapezoidal),
                    "be" => Ok(AlgebraizerKind::BackwardEuler),
                    "nn" => Ok(AlgebraizerKind::Surrogate(nn()?)),
                    other => Err(Error::Config(format!("unknown algebraizer `{other}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SolverSpec {
                name: format!("custom:{}", entries.join("+")),
                schemes,
            })
        }
    }
}

struct Prepared {
    scenario: Scenario,
    surrogate: Option<Arc<dyn IncrementModel>>,
    hybrid_machines: Vec<usize>,
}

fn prepare(scenario: &ScenarioArgs, surrogate: &SurrogateArgs, t_end: f64) -> Result<Prepared> {
    let model = load_network_from(&scenario.network)?;
    let hybrid_machines = surrogate
        .hybrid_machines
        .clone()
        .unwrap_or_else(|| model.hybrid_machines.clone());
    warn_on_fingerprint(surrogate, &model, &hybrid_machines)?;
    let sc = Scenario::from_equilibrium(&model, scenario.disturb.clone(), t_end)?;
    Ok(Prepared {
        scenario: sc,
        surrogate: load_surrogate(surrogate)?,
        hybrid_machines,
    })
}

impl Prepared {
    fn solvers(&self, names: &[String]) -> Result<Vec<SolverSpec>> {
        names
            .iter()
            .map(|n| {
                solver_spec(
                    n,
                    &self.scenario.plant,
                    &self.surrogate,
                    &self.hybrid_machines,
                )
            })
            .collect()
    }

    fn variables(&self, requested: &Option<Vec<String>>) -> Result<Vec<Variable>> {
        match requested {
            Some(names) => names.iter().map(|n| n.parse()).collect(),
            None => Ok(Variable::all(
                self.scenario.plant.model.n_machines(),
                self.scenario.plant.model.n_bus(),
            )),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn finish(mut w: BufWriter<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn run_simulate(a: &SimulateArgs) -> Result<()> {
    let p = prepare(&a.scenario, &a.surrogate, a.t_end)?;
    let solver = solver_spec(
        &a.solver,
        &p.scenario.plant,
        &p.surrogate,
        &p.hybrid_machines,
    )?;
    let mut cfg = solver.config(a.h_ms * 1e-3);
    cfg.record_stride = a.record_every;
    let sc = &p.scenario;
    let (traj, failure) = match simulate(&sc.plant, &cfg, &sc.initial, sc.t_end, &sc.disturbances) {
        Ok(t) => (t, None),
        Err(Error::Aborted {
            partial,
            source,
            t,
            steps,
        }) => {
            let partial_copy = (*partial).clone();
            (
                partial_copy,
                Some(Error::Aborted {
                    partial,
                    source,
                    t,
                    steps,
                }),
            )
        }
        Err(e) => return Err(e),
    };
    if a.out.as_os_str() == "-" {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        traj.write_csv(&mut lock)?;
        lock.flush()?;
    } else {
        let mut w = create(&a.out)?;
        traj.write_csv(&mut w)?;
        finish(w)?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run_equilibrium(a: &EquilibriumArgs) -> Result<()> {
    let model = load_network_from(&a.network)?;
    let eq = init_equilibrium(&model, &EquilibriumOptions::default())?;
    let machines: Vec<Value> = eq
        .states
        .iter()
        .zip(&eq.model.machines)
        .map(|(s, site)| {
            json!({
                "bus": site.bus,
                "e_q_prime": s.e_q_prime,
                "e_d_prime": s.e_d_prime,
                "delta": s.delta,
                "d_omega": s.d_omega,
                "p_m": site.params.p_m,
                "e_fd": site.params.e_fd,
            })
        })
        .collect();
    let buses: Vec<Value> = eq
        .voltages
        .iter()
        .map(|v| json!({"v": v.norm(), "theta": v.arg()}))
        .collect();
    let doc = json!({
        "network": eq.model.name,
        "iterations": eq.iterations,
        "residual_norm": eq.residual_norm,
        "machines": machines,
        "buses": buses,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    match &a.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn preset_machine(name: &str) -> Result<(usize, crate::machine::MachineParams)> {
    let index = match name {
        "m1" => 0,
        "m2" => 1,
        "m3" => 2,
        _ => {
            return Err(Error::Config(format!(
                "unknown machine preset `{name}`; expected m1, m2 or m3"
            )))
        }
    };
    let params = preset_params(name)
        .ok_or_else(|| Error::Config(format!("unknown machine preset `{name}`")))?;
    Ok((index, params))
}

fn run_gen_dataset(a: &GenDatasetArgs) -> Result<()> {
    let (index, params) = preset_machine(&a.machine_preset)?;
    let model = load_network_from("ieee9")?;
    let e_q_prime = match a.e_q_prime {
        Some(e) => e,
        None => init_equilibrium(&model, &EquilibriumOptions::default())?.states[index].e_q_prime,
    };
    let spec = MachineSpec {
        params,
        e_q_prime,
        frequency_hz: model.frequency_hz,
    };
    write_datasets(&a.out, &spec, &InputDomain::default(), a.n_x, a.n_c, a.seed)?;
    log::info!(
        "wrote {} labelled and {} collocation records to {}",
        a.n_x,
        a.n_c,
        a.out.display()
    );
    Ok(())
}

fn run_validate(a: &ValidateArgs) -> Result<()> {
    let net = SurrogateNet::load(&a.weights)?;
    let report = net.self_check(a.points, a.seed)?;
    let mut fingerprint_ok = Value::Null;
    if let Some(name) = &a.machine_preset {
        let (_, params) = preset_machine(name)?;
        let expected = fingerprint(&params);
        if net.provenance.machine_params_hash != expected {
            return Err(Error::WeightFile(format!(
                "fingerprint {} does not match machine preset {name} ({expected})",
                net.provenance.machine_params_hash
            )));
        }
        fingerprint_ok = Value::Bool(true);
    }
    let doc = json!({
        "weights": a.weights.display().to_string(),
        "layers": net.layers.len(),
        "points": report.points,
        "hard_constraint_violations": report.hard_constraint_violations,
        "jacobian_max_rel": report.jacobian_max_rel,
        "fingerprint_matches": fingerprint_ok,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

fn write_reports(study: &str, report: &ReportArgs, reports: &[harness::ErrorReport]) -> Result<()> {
    std::fs::create_dir_all(&report.out)?;
    let w = create(&report.out.join(format!("{study}.csv")))?;
    if report.long {
        let rows: Vec<(Option<usize>, &harness::ErrorReport)> =
            reports.iter().map(|r| (None, r)).collect();
        harness::write_error_reports_long(study, &rows, w)?;
    } else {
        let mut w = w;
        harness::write_error_reports(reports, &mut w)?;
        finish(w)?;
    }
    let s = create(&report.out.join(format!("{study}_summary.csv")))?;
    harness::write_summaries(reports, s)?;
    Ok(())
}

fn run_global_error(a: &GlobalErrorArgs) -> Result<()> {
    let st = &a.study;
    let p = prepare(&st.scenario, &st.surrogate, a.t_end)?;
    let solvers = p.solvers(&st.solvers)?;
    let vars = p.variables(&st.report.variables)?;
    let reports = harness::global_error_study(
        &p.scenario,
        &solvers,
        a.h_ms * 1e-3,
        &vars,
        &st.oracle.options(),
    )?;
    write_reports("global_error", &st.report, &reports)
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let st = &a.study;
    let p = prepare(&st.scenario, &st.surrogate, a.t_end)?;
    let solvers = p.solvers(&st.solvers)?;
    let vars = p.variables(&st.report.variables)?;
    let hs: Vec<f64> = a.h_ms.iter().map(|h| h * 1e-3).collect();
    let rows = harness::step_sweep(&p.scenario, &solvers, &hs, &vars, &st.oracle.options())?;
    std::fs::create_dir_all(&st.report.out)?;
    let w = create(&st.report.out.join("sweep.csv"))?;
    harness::write_sweep(&rows, w)
}

fn run_local_error(a: &LocalErrorArgs) -> Result<()> {
    let st = &a.study;
    let p = prepare(&st.scenario, &st.surrogate, 1.0)?;
    let solvers = p.solvers(&st.solvers)?;
    let hs: Vec<f64> = a.h_ms.iter().map(|h| h * 1e-3).collect();
    let rows = harness::local_error_study(
        &p.scenario,
        &solvers,
        a.machine,
        &InputDomain::default(),
        a.n,
        &hs,
        a.seed,
        &st.oracle.options(),
    )?;
    std::fs::create_dir_all(&st.report.out)?;
    let w = create(&st.report.out.join("local_error.csv"))?;
    harness::write_local_errors(&rows, w)
}

fn run_fan(a: &FanArgs) -> Result<()> {
    let st = &a.study;
    let p = prepare(&st.scenario, &st.surrogate, a.t_end)?;
    let solvers = p.solvers(&st.solvers)?;
    let vars = p.variables(&st.report.variables)?;
    let machines = a
        .machines
        .clone()
        .unwrap_or_else(|| p.hybrid_machines.clone());
    let runs = harness::monte_carlo_fan(
        &p.scenario,
        &solvers,
        &machines,
        &InputDomain::default(),
        a.n,
        a.h_ms * 1e-3,
        a.seed,
        &vars,
        &st.oracle.options(),
    )?;
    std::fs::create_dir_all(&st.report.out)?;
    let mut w = create(&st.report.out.join("fan.csv"))?;
    if st.report.long {
        let rows: Vec<(Option<usize>, &harness::ErrorReport)> =
            runs.iter().map(|(i, r)| (Some(*i), r)).collect();
        harness::write_error_reports_long("fan", &rows, &mut w)?;
    } else {
        harness::write_fan(&runs, &mut w)?;
    }
    finish(w)
}

fn run_boost(a: &BoostArgs) -> Result<()> {
    let p = prepare(&a.scenario, &a.surrogate, a.t_end)?;
    let solvers = p.solvers(&["pure".to_string(), "hybrid".to_string()])?;
    let model = &p.scenario.plant.model;
    let angles: Vec<Variable> = p
        .hybrid_machines
        .iter()
        .map(|&m| Variable::Delta(m))
        .collect();
    let voltages: Vec<Variable> = (0..model.n_bus()).map(Variable::V).collect();
    let mut vars = angles.clone();
    vars.extend(&voltages);
    let reports = harness::global_error_study(
        &p.scenario,
        &solvers,
        a.h_ms * 1e-3,
        &vars,
        &a.oracle.options(),
    )?;
    let rows = vec![
        harness::boost_row("machine_angles", &reports[0], &reports[1], &angles)?,
        harness::boost_row("bus_voltages", &reports[0], &reports[1], &voltages)?,
    ];
    std::fs::create_dir_all(&a.out)?;
    let w = create(&a.out.join("boost.csv"))?;
    harness::write_boost(&rows, w)
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv = expand_config(argv.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            e.print()?;
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        // a second build in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Equilibrium(a) => run_equilibrium(a),
        Command::GenDataset(a) => run_gen_dataset(a),
        Command::ValidateWeights(a) => run_validate(a),
        Command::GlobalError(a) => run_global_error(a),
        Command::Sweep(a) => run_sweep(a),
        Command::LocalError(a) => run_local_error(a),
        Command::Fan(a) => run_fan(a),
        Command::Boost(a) => run_boost(a),
    }
}

/// Machine-readable form of an error for stderr.
pub fn error_json(e: &Error) -> String {
    json!({"error": e.to_string(), "kind": e.kind()}).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::DisturbanceKind;

    #[test]
    fn disturbance_syntax() {
        let d = parse_disturbance("pm:2:-0.2@0.1").unwrap();
        assert_eq!(
            d.kind,
            DisturbanceKind::MechanicalPowerStep {
                machine: 2,
                delta: -0.2
            }
        );
        assert_eq!(d.time, 0.1);
        let l = parse_disturbance("load:44:0.5@1").unwrap();
        assert_eq!(
            l.kind,
            DisturbanceKind::LoadStep {
                bus: 44,
                p: 0.5,
                q: 0.0
            }
        );
        let q = parse_disturbance("load:4:0.5:0.2@0").unwrap();
        assert_eq!(
            q.kind,
            DisturbanceKind::LoadStep {
                bus: 4,
                p: 0.5,
                q: 0.2
            }
        );
        for bad in ["pm:2:-0.2", "pm:x:1@0", "fault:1@0", "load:1@0"] {
            assert!(parse_disturbance(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn config_overlay_sits_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(
            &cfg,
            r#"{"h_ms": 4, "disturb": ["pm:1:-0.2@0"], "long": true}"#,
        )
        .unwrap();
        let argv: Vec<OsString> = [
            "hybrid-dae",
            "--config",
            cfg.to_str().unwrap(),
            "simulate",
            "--h-ms",
            "2",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let out = expand_config(argv).unwrap();
        let text: Vec<String> = out
            .iter()
            .map(|s| s.to_string_lossy().into_owned())
            .collect();
        let at = text.iter().position(|t| t == "simulate").unwrap();
        assert_eq!(
            &text[at + 1..],
            [
                "--disturb",
                "pm:1:-0.2@0",
                "--h-ms",
                "4",
                "--long",
                "--h-ms",
                "2"
            ]
        );
    }

    #[test]
    fn explicit_flag_beats_overlay() {
        let cli =
            Cli::try_parse_from(["hybrid-dae", "simulate", "--h-ms", "4", "--h-ms", "2"]).unwrap();
        match cli.command {
            Command::Simulate(a) => assert_eq!(a.h_ms, 2.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn solver_names() {
        let model = load_network_from("ieee9").unwrap();
        let sc = Scenario::from_equilibrium(&model, vec![], 1.0).unwrap();
        assert_eq!(
            solver_spec("pure", &sc.plant, &None, &[2])
                .unwrap()
                .schemes
                .len(),
            3
        );
        assert!(matches!(
            solver_spec("hybrid", &sc.plant, &None, &[2]),
            Err(Error::Config(_))
        ));
        let custom = solver_spec("custom:trap,be,trap", &sc.plant, &None, &[]).unwrap();
        assert_eq!(custom.name, "custom:trap+be+trap");
        assert_eq!(custom.schemes[1].label(), "be");
        assert!(solver_spec("custom:trap", &sc.plant, &None, &[]).is_err());
        assert!(solver_spec("rk4", &sc.plant, &None, &[]).is_err());
    }
}
