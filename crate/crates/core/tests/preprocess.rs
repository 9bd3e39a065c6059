use proptest::prelude::*;
use rand::Rng;
use satcause::preprocess::{self, FittedPipeline, MinMaxScaler, ScalingParams};
use satcause::seed;
use satcause::tabular::{Column, ColumnSpec, Dataset};

fn numeric_dataset(columns: Vec<Vec<Option<f64>>>) -> Dataset {
    let n = columns.first().map_or(0, Vec::len);
    let mut schema: Vec<ColumnSpec> = (0..columns.len())
        .map(|j| ColumnSpec::numeric(&format!("c{j}")))
        .collect();
    schema.push(ColumnSpec::target("y", "yes", "no"));
    let mut cols: Vec<Column> = columns.into_iter().map(Column::Numeric).collect();
    cols.push(Column::Target((0..n).map(|i| i % 3 == 0).collect()));
    Dataset::new(schema, cols).unwrap()
}

fn mixed_dataset(n: usize, seed_value: u64) -> Dataset {
    let mut rng = seed::rng(seed_value);
    let classes = ["Business", "Eco", "Eco Plus"];
    let schema = vec![
        ColumnSpec::numeric("age"),
        ColumnSpec::ordinal("wifi", 5),
        ColumnSpec::nominal("class", &classes),
        ColumnSpec::numeric("delay"),
        ColumnSpec::target("y", "yes", "no"),
    ];
    let mut age = Vec::new();
    let mut wifi = Vec::new();
    let mut class = Vec::new();
    let mut delay = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        age.push(Some(rng.random_range(7..=85) as f64));
        wifi.push(Some(rng.random_range(0..=5) as f64));
        class.push(Some(classes[rng.random_range(0..3)].to_string()));
        let d = rng.random_range(0..300) as f64;
        // about 3% missing
        delay.push(if rng.random::<f64>() < 0.03 { None } else { Some(d) });
        y.push(rng.random::<bool>());
    }
    Dataset::new(
        schema,
        vec![
            Column::Numeric(age),
            Column::Numeric(wifi),
            Column::Nominal(class),
            Column::Numeric(delay),
            Column::Target(y),
        ],
    )
    .unwrap()
}

#[test]
fn minmax_worked_examples() {
    let data = numeric_dataset(vec![vec![Some(2.0), Some(4.0), Some(6.0)]]);
    let (scaled, params) = preprocess::scale_minmax(&data, &["c0".into()]).unwrap();
    assert_eq!(scaled.numeric("c0").unwrap(), &[Some(0.0), Some(0.5), Some(1.0)]);
    assert_eq!(params[0].scale(8.0), (1.0, true));
    assert_eq!(params[0].scale(0.0), (0.0, true));

    let constant = numeric_dataset(vec![vec![Some(3.0); 4]]);
    let (scaled, params) = preprocess::scale_minmax(&constant, &["c0".into()]).unwrap();
    assert!(params[0].is_degenerate());
    assert!(scaled.numeric("c0").unwrap().iter().all(|v| *v == Some(0.0)));
}

#[test]
fn split_sizes() {
    let (train, test) = preprocess::split_indices(10, 0.2, 1).unwrap();
    assert_eq!((train.len(), test.len()), (8, 2));
    let (train, test) = preprocess::split_indices(103_904, 0.2, 7).unwrap();
    assert_eq!((train.len(), test.len()), (83_123, 20_781));
    assert!(preprocess::split_indices(1, 0.2, 0).is_err());
    assert!(preprocess::split_indices(10, 1.0, 0).is_err());
    assert!(preprocess::split_indices(10, 0.01, 0).is_err());
}

#[test]
fn split_depends_on_seed_only() {
    let a = preprocess::split_indices(500, 0.2, 42).unwrap();
    let b = preprocess::split_indices(500, 0.2, 42).unwrap();
    let c = preprocess::split_indices(500, 0.2, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn independent_columns_are_not_flagged() {
    let mut rng = seed::rng(5);
    let cols = (0..4)
        .map(|_| (0..10_000).map(|_| Some(rng.random::<f64>())).collect())
        .collect();
    let pairs = preprocess::correlation_screen(&numeric_dataset(cols), 0.9).unwrap();
    assert!(pairs.is_empty());
}

#[test]
fn exact_linear_relation_is_flagged() {
    let x: Vec<Option<f64>> = (0..200).map(|i| Some((i * 37 % 101) as f64)).collect();
    let y = x.iter().map(|v| v.map(|v| 2.0 * v)).collect();
    let pairs = preprocess::correlation_screen(&numeric_dataset(vec![x, y]), 0.9).unwrap();
    assert_eq!(pairs.len(), 1);
    assert!((pairs[0].pearson_r - 1.0).abs() <= 1e-12);
    assert_eq!(pairs[0].drop_for_linear, "c1");
    assert_eq!(preprocess::linear_drop_set(&pairs), vec!["c1".to_string()]);
    assert!(preprocess::correlation_screen(&numeric_dataset(vec![vec![Some(1.0)]]), 1.5).is_err());
}

#[test]
fn full_chain_lands_in_unit_interval() {
    let data = mixed_dataset(2_000, 3);
    let (train, _) = preprocess::deduplicate(&data);
    let (pipeline, report) = FittedPipeline::fit(&train, 0.9).unwrap();
    let (features, clamped) = pipeline.transform(&train).unwrap();
    assert_eq!(clamped, 0);
    assert!(features.rows.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    // age, wifi, delay plus one indicator per class
    assert_eq!(features.n_features(), 6);
    for c in ["Business", "Eco", "Eco Plus"] {
        let name = preprocess::indicator_name("class", c);
        let j = features.feature_index(&name).unwrap();
        assert!(features.rows.rows().all(|r| r[j] == 0.0 || r[j] == 1.0));
    }
    let delay = report.imputation.iter().find(|r| r.column == "delay").unwrap();
    assert!(delay.filled > 0);

    let restored = FittedPipeline::from_json(&pipeline.to_json().unwrap()).unwrap();
    let fresh = mixed_dataset(300, 4);
    assert_eq!(
        restored.transform(&fresh).unwrap(),
        pipeline.transform(&fresh).unwrap()
    );
}

#[test]
fn unseen_rows_are_clamped() {
    let data = numeric_dataset(vec![vec![Some(0.0), Some(10.0), Some(5.0)]]);
    let scaler = MinMaxScaler::fit(&data, &["c0".into()]).unwrap();
    let probe = numeric_dataset(vec![vec![Some(-5.0), Some(20.0), Some(2.5)]]);
    let (scaled, clamped) = scaler.apply(&probe).unwrap();
    assert_eq!(clamped, 2);
    assert_eq!(scaled.numeric("c0").unwrap(), &[Some(0.0), Some(1.0), Some(0.25)]);
}

fn finite() -> impl Strategy<Value = f64> {
    -1e6f64..1e6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scaling_is_monotone(lo in finite(), width in 1e-3f64..1e6, a in finite(), b in finite()) {
        let p = ScalingParams { column: "c".into(), min: lo, max: lo + width };
        let (sa, _) = p.scale(a.min(b));
        let (sb, _) = p.scale(a.max(b));
        prop_assert!(sa <= sb);
        prop_assert!((0.0..=1.0).contains(&sa) && (0.0..=1.0).contains(&sb));
    }

    #[test]
    fn split_is_a_partition(n in 2usize..2_000, frac in 0.05f64..0.95, s in any::<u64>()) {
        let n_test = (n as f64 * frac).round() as usize;
        prop_assume!(n_test > 0 && n_test < n);
        let (train, test) = preprocess::split_indices(n, frac, s).unwrap();
        prop_assert_eq!(test.len(), n_test);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn dedup_is_idempotent(rows in prop::collection::vec((0u8..4, 0u8..3), 1..60)) {
        let a = rows.iter().map(|r| Some(r.0 as f64)).collect();
        let b = rows.iter().map(|r| Some(r.1 as f64)).collect();
        let data = numeric_dataset(vec![a, b]);
        let (once, removed) = preprocess::deduplicate(&data);
        prop_assert_eq!(once.n_rows() + removed, data.n_rows());
        let (twice, again) = preprocess::deduplicate(&once);
        prop_assert_eq!(again, 0);
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn imputation_keeps_observed_values(
        cells in prop::collection::vec(prop::option::weighted(0.8, finite()), 1..80)
    ) {
        prop_assume!(cells.iter().any(Option::is_some));
        let data = numeric_dataset(vec![cells.clone()]);
        let (filled, records) = preprocess::impute_median(&data, &["c0".into()]).unwrap();
        let out = filled.numeric("c0").unwrap();
        prop_assert_eq!(records[0].filled, cells.iter().filter(|c| c.is_none()).count());
        for (before, after) in cells.iter().zip(out) {
            match before {
                Some(v) => prop_assert_eq!(Some(*v), *after),
                None => prop_assert_eq!(Some(records[0].median), *after),
            }
        }
    }
}
