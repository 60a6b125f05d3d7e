use ips::harness::{export_results, run_experiment, ExperimentConfig, GridSpec};
use ips::io::{read_estimates, read_measurements, write_estimates, write_measurements, EstimateRow, MeasurementRow, RowKind};
use ips::stats::cdf;
use ips::Error;
use ips_core::pipeline::Variant;
use proptest::prelude::*;

fn small() -> ExperimentConfig {
    ExperimentConfig {
        grid: GridSpec { spacing_m: 5.0, ..Default::default() },
        trials: 3,
        methods: vec![Variant::UnawareLls, Variant::UnawareIppa, Variant::AwareDnlsFacade],
        ..Default::default()
    }
}

#[test]
fn sample_accounting_and_cdf_shape() {
    let config = small();
    let r = run_experiment(&config).unwrap();
    for m in &config.methods {
        assert_eq!(r.samples(*m).count(), r.nodes.len() * config.trials as usize);
        let c = cdf(&r.errors(*m));
        assert!(c.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    }
    let dir = tempfile::tempdir().unwrap();
    export_results(&r, dir.path()).unwrap();
    let errors = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert_eq!(errors.lines().filter(|l| !l.starts_with('#')).count(), 1 + r.nodes.len() * 3 * 3);
}

#[test]
fn config_validation() {
    assert!(matches!(ExperimentConfig::from_json(r#"{"trials": 0}"#), Err(Error::Parse(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{"methods": []}"#), Err(Error::Parse(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{"grid": {"spacing_m": -1}}"#), Err(Error::Parse(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{"schema_version": 7}"#), Err(Error::Parse(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{"surprise": 1}"#), Err(Error::Parse(_))));
    let c = ExperimentConfig::from_json(r#"{"band": "FR2", "methods": ["aware_dnls_map"]}"#).unwrap();
    assert_eq!(c.methods, vec![Variant::AwareDnlsMap]);
}

fn arb_row() -> impl Strategy<Value = MeasurementRow> {
    (0u64..1000, any::<bool>(), "[A-Z][0-9]{1,2}", -50.0..50.0f64, 0.1..200.0f64, 0.0..1.0f64).prop_map(
        |(node_index, fap, anchor_id, x, range_m, sigma_m)| MeasurementRow {
            node_index,
            kind: if fap { RowKind::Fap } else { RowKind::Mpc },
            anchor_id,
            anchor_x: x,
            anchor_y: -x,
            anchor_z: 2.5,
            range_m,
            sigma_m,
            true_mechanism: "diffraction:w0-l".into(),
            los_label: "nlos".into(),
            edge_id: "w0-l".into(),
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn measurement_csv_roundtrip(rows in proptest::collection::vec(arb_row(), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_measurements(&path, &rows).unwrap();
        prop_assert_eq!(read_measurements(&path).unwrap(), rows);
    }

    #[test]
    fn estimate_csv_roundtrip(x in proptest::option::of(-30.0..30.0f64), n in 0u64..100) {
        let row = EstimateRow {
            node_index: n,
            method_tag: "lls".into(),
            status: if x.is_some() { "ok".into() } else { "coverage".into() },
            x,
            y: x,
            z: x,
            err_3d_m: x.map(f64::abs),
            err_z_m: None,
            floor_true: Some(1),
            floor_est: x.map(|_| 2),
            iterations: x.map(|_| 4),
            converged: x.map(|_| true),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_estimates(&path, std::slice::from_ref(&row)).unwrap();
        prop_assert_eq!(read_estimates(&path).unwrap(), vec![row]);
    }
}
