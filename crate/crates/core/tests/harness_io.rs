mod common;

use std::sync::Arc;

use calsub::harness::{
    emit_report, load_csv, read_csv, run_experiment, write_csv, ExperimentConfig, MetricsReport,
};
use calsub::model::{
    generate_physical_data, ComputerModel, DesignSource, GenConfig, Greenshields, TrueProcess,
};

fn example1_config(replications: usize) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "model": "example1",
            "data": {{"source": "synthetic", "n": 2000, "sigma": 0.2, "truth": [0.2, 0.3]}},
            "criteria": ["uniform", "mvc"],
            "r_grid": [100],
            "replications": {replications},
            "theta_star": [0.2, 0.3],
            "seed": 99
        }}"#
    ))
    .unwrap()
}

#[test]
fn csv_round_trip_is_bit_equal() {
    let m: Arc<dyn ComputerModel> = Arc::new(Greenshields::default());
    let data = generate_physical_data(
        &GenConfig {
            truth: TrueProcess::Model {
                model: m.clone(),
                theta: vec![18.0, 115.0, 150.0, 5.0, 240.0, 4.0],
            },
            omega: m.omega().to_vec(),
            sigma: 4.0,
            seed: 3,
            design: DesignSource::Uniform,
        },
        1000,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traffic.csv");
    let cols = vec!["density".to_string()];
    write_csv(&path, &data, &cols, "speed").unwrap();
    let back = load_csv(&path, &cols, "speed").unwrap();
    assert_eq!(back.skipped, 0);
    assert_eq!(back.data.n(), data.n());
    for (a, b) in back.data.x_flat().iter().zip(data.x_flat()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    for (a, b) in back.data.y().iter().zip(data.y()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn malformed_rows_are_skipped_and_counted() {
    let text = "speed,density,lane\n100,10,1\nabc,12,1\n90\n80,NaN,2\n70,30,2\n";
    let l = read_csv(text.as_bytes(), &["density".to_string()], "speed").unwrap();
    assert_eq!(l.skipped, 3);
    assert_eq!(l.data.y(), &[100.0, 70.0]);
    assert_eq!(l.data.x_flat(), &[10.0, 30.0]);
    assert!(read_csv(text.as_bytes(), &["flow".to_string()], "speed").is_err());
}

#[test]
fn empty_grid_gives_header_only_csv() {
    let report = MetricsReport {
        config: example1_config(1),
        n: 0,
        r0: 14.0,
        cells: Vec::new(),
        replications: Vec::new(),
    };
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv, "criterion,r,metric,coordinate,value\n");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["cells"], serde_json::json!([]));
}

#[test]
fn report_json_round_trips_and_is_reproducible() {
    let cfg = example1_config(3);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(&a, da.path()).unwrap();
    emit_report(&b, db.path()).unwrap();
    let ja = std::fs::read(da.path().join("report.json")).unwrap();
    let jb = std::fs::read(db.path().join("report.json")).unwrap();
    assert_eq!(ja, jb);
    let parsed: MetricsReport = serde_json::from_slice(&ja).unwrap();
    assert_eq!(parsed.cells.len(), 2);
    assert_eq!(parsed.replications.len(), 6);
    for c in &parsed.cells {
        for v in c.coverage.iter().flatten() {
            assert!((0.0..=1.0).contains(v));
        }
        assert!(c.ci_length.iter().all(|&l| l >= 0.0));
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let mut cfg = example1_config(4);
    cfg.threads = Some(1);
    let one = run_experiment(&cfg).unwrap();
    cfg.threads = Some(3);
    let three = run_experiment(&cfg).unwrap();
    let key = |r: &MetricsReport| -> Vec<_> {
        r.replications
            .iter()
            .map(|x| (x.criterion, x.replication, x.theta.clone(), x.sigma.clone()))
            .collect()
    };
    assert_eq!(key(&one), key(&three));
}

#[test]
fn replications_are_independent_of_their_count() {
    let short = run_experiment(&example1_config(50)).unwrap();
    let long = run_experiment(&example1_config(100)).unwrap();
    for c in &short.config.criteria {
        let a: Vec<_> = short.records(*c, 100.0).collect();
        let b: Vec<_> = long.records(*c, 100.0).take(50).collect();
        assert_eq!(a.len(), 50);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.replication, y.replication);
            assert_eq!(x.theta, y.theta);
        }
    }
}

#[test]
fn noiseless_single_replication_has_zero_rmse() {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "model": "example1",
            "data": {"source": "synthetic", "n": 2000, "sigma": 0.0, "truth": [0.2, 0.3]},
            "r_grid": [100],
            "replications": 1,
            "theta_star": [0.2, 0.3],
            "seed": 5
        }"#,
    )
    .unwrap();
    let report = run_experiment(&cfg).unwrap();
    for c in &report.cells {
        assert_eq!(c.failed, 0);
        assert!(c.rmse.unwrap() < 1e-12, "{} rmse {:?}", c.criterion, c.rmse);
    }
}

#[test]
fn csv_config_path_is_relative_to_the_file() {
    let cfg = common::load_config("greenshields.json");
    let calsub::harness::DataSpec::Csv { path, .. } = &cfg.data else {
        panic!("csv source expected");
    };
    assert!(path.exists(), "{}", path.display());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let err = ExperimentConfig::from_json(
        r#"{"model": "example1", "data": {"source": "synthetic", "n": 10, "sigma": 0.1, "truth": [0.2, 0.3]},
            "r_grid": [5], "replication": 3}"#,
    );
    assert!(err.is_err());
}
