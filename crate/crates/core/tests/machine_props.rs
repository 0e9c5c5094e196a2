use std::f64::consts::PI;

use hybrid_dae::algebraizer::AlgebraizerKind;
use hybrid_dae::machine::{
    electrical_power, init_equilibrium, network_injection, preset_params, rates, stator_currents,
    EquilibriumOptions, MachineParams, MachineState,
};
use hybrid_dae::netmodel::{preset, Disturbance, NetworkModel};
use hybrid_dae::stepper::{simulate, Plant, SolverConfig};
use num_complex::Complex64;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = MachineParams> {
    (
        prop_oneof![Just("m1"), Just("m2"), Just("m3")],
        0.0f64..0.01,
        any::<bool>(),
    )
        .prop_map(|(name, rs, classical)| {
            let mut p = preset_params(name).unwrap();
            p.rs = rs;
            p.classical = classical;
            p
        })
}

fn state() -> impl Strategy<Value = MachineState> {
    (0.8f64..1.3, -0.3f64..0.3, -PI..PI, -0.02f64..0.02).prop_map(
        |(e_q_prime, e_d_prime, delta, d_omega)| MachineState {
            e_q_prime,
            e_d_prime,
            delta,
            d_omega,
        },
    )
}

fn two_axis(model: &NetworkModel) -> NetworkModel {
    let mut m = model.clone();
    for site in &mut m.machines {
        site.params.classical = false;
    }
    m
}

proptest! {
    #[test]
    fn rotating_frame_and_voltage_together_changes_nothing(p in params(), s in state(), v in 0.8f64..1.1, th in -PI..PI, phi in -PI..PI) {
        let v0 = Complex64::from_polar(v, th);
        let v1 = v0 * Complex64::from_polar(1.0, phi);
        let s1 = MachineState { delta: s.delta + phi, ..s };
        let r0 = rates(&p, &s, v0, 60.0).unwrap();
        let r1 = rates(&p, &s1, v1, 60.0).unwrap();
        for k in 0..4 {
            prop_assert!((r0[k] - r1[k]).abs() < 1e-12 * (1.0 + r0[k].abs()));
        }
        let i0 = network_injection(&s, stator_currents(&p, &s, v0).unwrap());
        let i1 = network_injection(&s1, stator_currents(&p, &s1, v1).unwrap());
        prop_assert!((i0 * Complex64::from_polar(1.0, phi) - i1).norm() < 1e-12);
    }

    #[test]
    fn lossless_stator_delivers_air_gap_power(p in params(), s in state(), v in 0.8f64..1.1, th in -PI..PI) {
        let p = MachineParams { rs: 0.0, ..p };
        let v = Complex64::from_polar(v, th);
        let i = stator_currents(&p, &s, v).unwrap();
        let delivered = (v * network_injection(&s, i).conj()).re;
        prop_assert!((electrical_power(&p, &s, i) - delivered).abs() < 1e-12);
    }

    #[test]
    fn stator_equations_hold(p in params(), s in state(), v in 0.8f64..1.1, th in -PI..PI) {
        let i = stator_currents(&p, &s, Complex64::from_polar(v, th)).unwrap();
        let vd = v * (s.delta - th).sin();
        let vq = v * (s.delta - th).cos();
        let rd = s.e_d_prime - vd - p.rs * i.i_d + p.xq_prime * i.i_q;
        let rq = s.e_q_prime - vq - p.rs * i.i_q - p.xd_prime * i.i_d;
        prop_assert!(rd.abs() < 1e-12 && rq.abs() < 1e-12);
    }
}

#[test]
fn third_machine_stator_residual_at_equilibrium() {
    for model in [
        preset("ieee9").unwrap(),
        two_axis(&preset("ieee9").unwrap()),
    ] {
        let eq = init_equilibrium(&model, &EquilibriumOptions::default()).unwrap();
        let site = &eq.model.machines[2];
        let (p, s) = (&site.params, &eq.states[2]);
        let v = eq.voltages[site.bus];
        let i = stator_currents(p, s, v).unwrap();
        let vd = v.norm() * (s.delta - v.arg()).sin();
        let vq = v.norm() * (s.delta - v.arg()).cos();
        let rd = s.e_d_prime - vd - p.rs * i.i_d + p.xq_prime * i.i_q;
        let rq = s.e_q_prime - vq - p.rs * i.i_q - p.xd_prime * i.i_d;
        assert!(rd.abs() < 1e-14 && rq.abs() < 1e-14, "{rd:e} {rq:e}");
    }
}

#[test]
fn equilibrium_derivatives_vanish() {
    for name in ["ieee9", "ieee57"] {
        for model in [preset(name).unwrap(), two_axis(&preset(name).unwrap())] {
            let eq = init_equilibrium(&model, &EquilibriumOptions::default()).unwrap();
            assert_eq!(eq.states[0].delta, 0.0);
            for (site, s) in eq.model.machines.iter().zip(&eq.states) {
                let r = rates(
                    &site.params,
                    s,
                    eq.voltages[site.bus],
                    eq.model.frequency_hz,
                )
                .unwrap();
                assert!(r.iter().all(|d| d.abs() < 1e-9), "{name}: {r:?}");
                assert!((eq.voltages[site.bus].norm() - site.v_set).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn classical_internal_voltages_stay_frozen() {
    let eq = init_equilibrium(&preset("ieee9").unwrap(), &EquilibriumOptions::default()).unwrap();
    let (plant, state) = Plant::from_equilibrium(&eq).unwrap();
    for kind in [AlgebraizerKind::Trapezoidal, AlgebraizerKind::BackwardEuler] {
        let cfg = SolverConfig::uniform(0.008, kind, plant.units.len());
        let traj = simulate(
            &plant,
            &cfg,
            &state,
            1.0,
            &[Disturbance::pm_step(1, -0.2, 0.0)],
        )
        .unwrap();
        let last = traj.final_sample().unwrap();
        assert!((last.machines[1].delta - eq.states[1].delta).abs() > 1e-3);
        for sample in &traj.samples {
            for (m, s0) in sample.machines.iter().zip(&eq.states) {
                assert_eq!(m.e_q_prime, s0.e_q_prime);
                assert_eq!(m.e_d_prime, s0.e_d_prime);
            }
        }
    }
}
