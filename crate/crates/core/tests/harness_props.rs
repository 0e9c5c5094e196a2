use hybrid_dae::algebraizer::AlgebraizerKind;
use hybrid_dae::harness::{
    global_error_study, local_error_study, loglog_slope, monte_carlo_fan, sample_initial_condition,
    step_sweep, LocalTruth, Scenario, SolverSpec, Variable,
};
use hybrid_dae::netmodel::{preset, Disturbance};
use hybrid_dae::oracle::OracleOptions;
use hybrid_dae::surrogate::InputDomain;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenario(t_end: f64) -> Scenario {
    Scenario::from_equilibrium(
        &preset("ieee9").unwrap(),
        vec![Disturbance::pm_step(1, -0.2, 0.0)],
        t_end,
    )
    .unwrap()
}

fn oracle() -> OracleOptions {
    OracleOptions {
        h_ref: 2.5e-5,
        ..Default::default()
    }
}

fn vars() -> Vec<Variable> {
    Variable::all(3, 9)
}

#[test]
fn twin_solvers_report_identical_errors() {
    let sc = scenario(0.2);
    let mut twin = SolverSpec::pure(3);
    twin.name = "twin".into();
    let reports =
        global_error_study(&sc, &[SolverSpec::pure(3), twin], 0.01, &vars(), &oracle()).unwrap();
    assert_eq!(reports[0].errors, reports[1].errors);
    assert_eq!(reports[0].summaries, reports[1].summaries);
    assert_eq!(reports[0].times.len(), 21);
    assert!(reports[0]
        .errors
        .iter()
        .flatten()
        .all(|e| *e >= 0.0 && e.is_finite()));
    // the first point is the shared initial condition
    assert!(reports[0].errors.iter().all(|series| series[0] == 0.0));
}

#[test]
fn sweep_rows_equal_global_maxima() {
    let sc = scenario(0.2);
    let solvers = [
        SolverSpec::pure(3),
        SolverSpec::uniform("be", AlgebraizerKind::BackwardEuler, 3),
    ];
    let rows = step_sweep(&sc, &solvers, &[0.005, 0.01], &vars(), &oracle()).unwrap();
    assert_eq!(rows.len(), 2 * 2 * vars().len());
    let reports = global_error_study(&sc, &solvers, 0.01, &vars(), &oracle()).unwrap();
    for r in &reports {
        for v in vars() {
            let row = rows
                .iter()
                .find(|x| x.solver == r.solver && x.h == 0.01 && x.variable == v)
                .unwrap();
            assert_eq!(row.max_error, r.max_error(v).unwrap());
            assert!(!row.failed);
        }
    }
    // halving the step cuts the trapezoidal error about fourfold
    let pick = |s: &str, h: f64| {
        rows.iter()
            .find(|x| x.solver == s && x.h == h && x.variable == Variable::DeltaRel(1))
            .unwrap()
            .max_error
    };
    let slope = loglog_slope(&[0.005, 0.01], &[pick("pure", 0.005), pick("pure", 0.01)]);
    assert!((slope - 2.0).abs() < 0.2, "{slope}");
}

#[test]
fn single_run_fan_is_a_global_study_from_the_sampled_start() {
    let sc = scenario(0.1);
    let d = InputDomain::default();
    let solvers = [SolverSpec::pure(3)];
    let fan = monte_carlo_fan(&sc, &solvers, &[2], &d, 1, 0.01, 17, &vars(), &oracle()).unwrap();
    assert_eq!(fan.len(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    rng.set_stream(0);
    let ic = sample_initial_condition(&sc, &[2], &d, &mut rng).unwrap();
    let direct =
        global_error_study(&sc.with_initial(ic), &solvers, 0.01, &vars(), &oracle()).unwrap();
    assert_eq!(fan[0].1, direct[0]);

    let again = monte_carlo_fan(&sc, &solvers, &[2], &d, 1, 0.01, 17, &vars(), &oracle()).unwrap();
    assert_eq!(again, fan);
    let other = monte_carlo_fan(&sc, &solvers, &[2], &d, 1, 0.01, 18, &vars(), &oracle()).unwrap();
    assert_ne!(other[0].1.errors, fan[0].1.errors);
}

#[test]
fn sampled_start_respects_the_domain() {
    let sc = scenario(0.1);
    let d = InputDomain::default();
    for stream in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.set_stream(stream);
        let ic = sample_initial_condition(&sc, &[1, 2], &d, &mut rng).unwrap();
        assert!(sc.plant.algebraic_residual(&ic.x, &ic.v).unwrap() < 1e-8);
        let ms = sc.plant.machine_states(&ic.x);
        let buses = sc.plant.machine_buses();
        assert_eq!(ms[0], sc.plant.machine_states(&sc.initial.x)[0]);
        for m in [1, 2] {
            let rel = ms[m].delta - sc.initial.v[buses[m]].arg();
            assert!((d.delta_minus_theta.0..=d.delta_minus_theta.1).contains(&rel));
            assert!((d.domega.0..=d.domega.1).contains(&ms[m].d_omega));
        }
    }
}

#[test]
fn local_errors_of_twins_match_and_scale_with_h() {
    let sc = scenario(0.1);
    let mut twin = SolverSpec::pure(3);
    twin.name = "twin".into();
    let hs = [0.005, 0.01, 0.02];
    let rows = local_error_study(
        &sc,
        &[SolverSpec::pure(3), twin],
        2,
        &InputDomain::default(),
        12,
        &hs,
        4,
        &oracle(),
    )
    .unwrap();
    let of = |s: &str| {
        rows.iter()
            .filter(|r| r.solver == s)
            .map(|r| (r.h, r.variable.clone(), r.truth, r.summary))
            .collect::<Vec<_>>()
    };
    assert_eq!(of("pure"), of("twin"));
    assert!(rows
        .iter()
        .all(|r| r.failures == 0 && r.summary.count == 12));
    assert!(rows
        .iter()
        .all(|r| r.summary.q1 >= 0.0 && r.summary.upper_whisker <= r.summary.max));
    for truth in [LocalTruth::System, LocalTruth::Component] {
        let med: Vec<f64> = hs
            .iter()
            .map(|&h| {
                rows.iter()
                    .find(|r| {
                        r.solver == "pure"
                            && r.h == h
                            && r.variable == "domega_2"
                            && r.truth == truth
                    })
                    .unwrap()
                    .summary
                    .median
            })
            .collect();
        let slope = loglog_slope(&hs, &med);
        assert!((slope - 3.0).abs() < 0.5, "{truth}: {slope} from {med:?}");
    }
}
