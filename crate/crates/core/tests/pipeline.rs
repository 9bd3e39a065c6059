use std::fs;
use std::path::{Path, PathBuf};

use satcause::pipeline::{self, RunConfig, SimulateConfig, QUARANTINE_DIR};
use serde_json::{json, Value};

fn write_json(path: &Path, value: &Value) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn simulate(dir: &Path, n_rows: usize, intercept_treatment: f64) -> PathBuf {
    let out = dir.join("sim");
    let config = json!({
        "n_rows": n_rows,
        "p": 3,
        "alpha": [1.5, 1.0, 0.5],
        "beta": [1.5, 0.5, 1.0],
        "tau": 1.0986122886681098,
        "intercept_treatment": intercept_treatment,
        "intercept_outcome": -1.5,
        "seed": 9,
        "output_dir": out,
    });
    let path = dir.join("simulate.json");
    write_json(&path, &config);
    let config: SimulateConfig = pipeline::load_config(&path).unwrap();
    pipeline::simulate(&config).unwrap();
    out
}

/// The generated run template with smaller grids and attribution budget.
fn run_config(sim: &Path, output: &str) -> RunConfig {
    let mut template: Value =
        serde_json::from_str(&fs::read_to_string(sim.join("run.json")).unwrap()).unwrap();
    template["output_dir"] = json!(output);
    template["models"][0]["grid"]["values"] = json!([2, 4]);
    template["attribution"] = json!({"n_permutations": 20, "background_rows": 20, "instance_rows": 30});
    template["learning_curve"] = json!({"fractions": [0.5, 1.0]});
    let path = sim.join(format!("{output}.json"));
    write_json(&path, &template);
    pipeline::load_config(&path).unwrap()
}

#[test]
fn simulated_bundle_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), 8_000, -1.5);
    for f in ["data.csv", "schema.json", "truth.json", "run.json"] {
        assert!(sim.join(f).is_file(), "{f}");
    }
    let truth = pipeline::read_envelope(&fs::read_to_string(sim.join("truth.json")).unwrap()).unwrap();
    let true_ate = truth.content["true_ate"]["value"].as_f64().unwrap();

    let config = run_config(&sim, "run");
    let outcome = pipeline::run(&config).unwrap();
    let report = &outcome.report;
    for f in [
        "report.json",
        "pipeline.json",
        "metrics.csv",
        "attributions.csv",
        "shapley_importance.csv",
        "roc_decision_tree.csv",
        "learning_curve_decision_tree.csv",
        "roc_logistic_regression.csv",
        "importance_decision_tree.csv",
        "love_treatment_rating.csv",
        "propensity_treatment_rating.csv",
    ] {
        assert!(outcome.out_dir.join(f).is_file(), "{f} missing");
    }
    assert_eq!(pipeline::verify_bundle(&outcome.out_dir).unwrap(), report.files);
    assert!(!outcome.out_dir.join(QUARANTINE_DIR).exists());

    assert_eq!(
        report.n_train + report.n_test,
        8_000 - report.preprocess.duplicates_removed
    );
    assert_eq!(report.models.len(), 2);
    let t = &report.treatments[0];
    assert!(!t.covariates.iter().any(|c| c.starts_with("Treatment Rating")));
    assert!(
        (t.effects.ate - true_ate).abs() <= 0.05,
        "ate {} true {true_ate}",
        t.effects.ate
    );
    assert!(t.max_smd_weighted < t.max_smd_unweighted);
    let shapley = report.shapley.as_ref().unwrap();
    assert!(shapley.max_efficiency_gap <= 1e-9);

    let metrics = fs::read_to_string(outcome.out_dir.join("metrics.csv")).unwrap();
    let (seed, body) = pipeline::read_hashed_csv(&metrics).unwrap();
    assert_eq!(seed, config.seed);
    assert_eq!(body.lines().count(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), 3_000, -1.5);
    let a = pipeline::run(&run_config(&sim, "a")).unwrap();
    let b = pipeline::run(&run_config(&sim, "b")).unwrap();
    assert_eq!(a.files, b.files);
    for f in a.files.iter().chain(["report.json".to_string()].iter()) {
        assert_eq!(
            fs::read(a.out_dir.join(f)).unwrap(),
            fs::read(b.out_dir.join(f)).unwrap(),
            "{f} differs"
        );
    }
    fs::create_dir(tmp.path().join("again")).unwrap();
    let sim_again = simulate(&tmp.path().join("again"), 3_000, -1.5);
    assert_eq!(
        fs::read(sim.join("data.csv")).unwrap(),
        fs::read(sim_again.join("data.csv")).unwrap()
    );
}

#[test]
fn tampering_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), 2_000, -1.5);
    let out = pipeline::run(&run_config(&sim, "run")).unwrap();
    let path = out.out_dir.join("metrics.csv");
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("decision_tree", "decision_trees");
    fs::write(&path, text).unwrap();
    let err = pipeline::verify_bundle(&out.out_dir).unwrap_err();
    assert!(err.to_string().contains("metrics.csv"), "{err}");
}

#[test]
fn failed_run_is_quarantined() {
    let tmp = tempfile::tempdir().unwrap();
    // nobody is treated, so the causal stage fails after models are fit
    let sim = simulate(tmp.path(), 2_000, -60.0);
    let config = run_config(&sim, "run");
    let err = pipeline::run(&config).unwrap_err();
    assert!(!err.is_config());
    assert!(err.to_string().starts_with("causal:"), "{err}");
    let quarantine = config.output_dir.join(QUARANTINE_DIR);
    let error = fs::read_to_string(quarantine.join("error.txt")).unwrap();
    assert!(error.contains("degenerate treatment"), "{error}");
    assert!(quarantine.join("metrics.csv").is_file());
    assert!(!config.output_dir.join("report.json").exists());
}

#[test]
fn config_errors_precede_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), 500, -1.5);
    let cases: Vec<(&str, Value)> = vec![
        ("k_folds", json!(1)),
        ("test_fraction", json!(1.0)),
        (
            "treatments",
            json!([{"column": "Treatment Rating", "threshold": 9, "propensity": "logistic_regression"}]),
        ),
        (
            "treatments",
            json!([{"column": "x1", "propensity": "logistic_regression"}]),
        ),
        (
            "treatments",
            json!([{"column": "Treatment Rating", "propensity": "knn"}]),
        ),
        ("models", json!([{"family": "decision_tree", "max_depth": 0}])),
    ];
    for (key, value) in cases {
        let mut config: Value =
            serde_json::from_str(&fs::read_to_string(sim.join("run.json")).unwrap()).unwrap();
        config[key] = value.clone();
        config["output_dir"] = json!("bad");
        let path = sim.join("bad.json");
        write_json(&path, &config);
        let config: RunConfig = pipeline::load_config(&path).unwrap();
        let err = pipeline::run(&config).unwrap_err();
        assert!(err.is_config(), "{key}={value}: {err}");
        assert!(!sim.join("bad").exists(), "{key}={value} wrote output");
    }

    let path = sim.join("missing_seed.json");
    write_json(&path, &json!({"input": "data.csv", "models": []}));
    assert!(pipeline::load_config::<RunConfig>(&path).unwrap_err().is_config());
    assert!(pipeline::load_config::<RunConfig>(&sim.join("nope.json"))
        .unwrap_err()
        .is_config());
}

#[test]
fn missing_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), 500, -1.5);
    let mut config = run_config(&sim, "run");
    config.input = sim.join("absent.csv");
    let err = pipeline::run(&config).unwrap_err();
    assert!(!err.is_config());
    assert!(err.to_string().starts_with("ingest:"), "{err}");
}

#[test]
fn inspect_summarizes_exported_data() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), 1_000, -1.5);
    let summary = pipeline::inspect(&sim.join("data.csv"), Some(&sim.join("schema.json")), None).unwrap();
    assert_eq!(summary.n_rows, 1_000);
    assert_eq!(summary.group_column, "satisfaction");
    assert_eq!(summary.groups.iter().map(|g| g.count).sum::<usize>(), 1_000);
}
