mod common;

use hybrid_dae::machine::{preset_params, MachineParams, MachineState, Polar};
use hybrid_dae::oracle::{
    component_truth, component_truth_pair, generate_dataset_c, generate_dataset_x, write_datasets,
    MachineSpec,
};
use hybrid_dae::surrogate::{fingerprint, InputDomain};
use proptest::prelude::*;

use common::machine_adaptive;

fn spec(classical: bool) -> MachineSpec {
    MachineSpec {
        params: MachineParams {
            classical,
            ..preset_params("m3").unwrap()
        },
        e_q_prime: 1.0566,
        frequency_hz: 60.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn truth_agrees_with_adaptive_integration(classical in any::<bool>(), h in 0.001f64..0.04, dmt in 0.0f64..1.0, dw in -0.015f64..0.015, v0 in 0.97f64..1.03, v1 in 0.97f64..1.03, dth in -0.3f64..0.3) {
        let s = spec(classical);
        let x = MachineState { e_q_prime: 1.0566, e_d_prime: 0.05, delta: dmt, d_omega: dw };
        let got = component_truth(&s, h, &x, Polar::new(v0, 0.0), Polar::new(v1, dth)).unwrap();
        let want = machine_adaptive(&s.params, 60.0, h, x, (v0, 0.0), (v1, dth));
        for (a, b) in got.to_array().iter().zip(want.to_array()) {
            prop_assert!((a - b).abs() < 1e-8, "{got:?} {want:?}");
        }
    }
}

#[test]
fn halving_substeps_shrinks_error_sixteenfold() {
    let s = spec(false);
    let x = MachineState {
        e_q_prime: 1.0,
        e_d_prime: 0.2,
        delta: 0.9,
        d_omega: 0.01,
    };
    let (y0, y1) = (Polar::new(1.03, 0.0), Polar::new(0.97, 2.5));
    let exact = machine_adaptive(&s.params, 60.0, 0.04, x, (1.03, 0.0), (0.97, 2.5));
    let err = |n| {
        let (c, _) = component_truth_pair(&s, 0.04, &x, y0, y1, n).unwrap();
        (c.delta - exact.delta)
            .abs()
            .max((c.d_omega - exact.d_omega).abs())
    };
    let (e1, e2) = (err(4), err(8));
    let ratio = e1 / e2;
    assert!((12.0..20.0).contains(&ratio), "{e1:e} {e2:e} ratio {ratio}");
}

#[test]
fn zero_step_is_identity() {
    let x = MachineState {
        e_q_prime: 1.0,
        e_d_prime: 0.0,
        delta: 0.4,
        d_omega: 0.002,
    };
    let got = component_truth(
        &spec(true),
        0.0,
        &x,
        Polar::new(1.0, 0.0),
        Polar::new(1.0, 0.1),
    )
    .unwrap();
    assert_eq!(got, x);
}

#[test]
fn records_nest_across_sizes() {
    let s = spec(true);
    let d = InputDomain::default();
    let small = generate_dataset_x(&s, &d, 10, 5).unwrap();
    let large = generate_dataset_x(&s, &d, 40, 5).unwrap();
    assert_eq!(&large[..10], &small[..]);
    assert_eq!(
        &generate_dataset_c(&d, 40, 5)[..10],
        &generate_dataset_c(&d, 10, 5)[..]
    );
    assert_ne!(generate_dataset_x(&s, &d, 10, 6).unwrap(), small);
}

fn read_rows(path: &std::path::Path) -> (String, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn dataset_files_cover_the_domain() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(true);
    let d = InputDomain::default();
    write_datasets(dir.path(), &s, &d, 1000, 1000, 9).unwrap();
    let (hx, dx) = read_rows(&dir.path().join("dx.csv"));
    let (hc, dc) = read_rows(&dir.path().join("dc.csv"));
    assert_eq!(
        hx,
        "h,delta_minus_theta,domega,v_n,v_np1,dtheta,x_np1_delta,x_np1_domega"
    );
    assert_eq!(hc, "h,delta_minus_theta,domega,v_n,v_np1,dtheta");
    assert_eq!((dx.len(), dc.len()), (1000, 1000));
    let ranges = [d.h, d.delta_minus_theta, d.domega, d.v, d.v, d.dtheta];
    for rows in [&dx, &dc] {
        for (c, (lo, hi)) in ranges.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            let (mn, mx) = col
                .iter()
                .fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
            assert!(mn >= *lo && mx <= *hi, "column {c}: [{mn}, {mx}]");
            // a thousand uniform draws reach well into both ends
            assert!(
                mn < lo + 0.02 * (hi - lo) && mx > hi - 0.02 * (hi - lo),
                "column {c}"
            );
        }
    }
    let shared = dx
        .iter()
        .filter(|r| dc.iter().any(|c| c[..] == r[..6]))
        .count();
    assert_eq!(shared, 0);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["machine_params_hash"], fingerprint(&s.params));
    assert_eq!(meta["seed"], 9);
    assert_eq!(meta["n_x"], 1000);
    assert_eq!(meta["inputs"].as_array().unwrap().len(), 6);
    assert_eq!(meta["labels"][1], "x_np1_domega");
}

#[test]
fn empty_datasets_have_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    write_datasets(dir.path(), &spec(true), &InputDomain::default(), 0, 0, 1).unwrap();
    for f in ["dx.csv", "dc.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}");
        assert!(text.starts_with("h,delta_minus_theta"));
    }
}
