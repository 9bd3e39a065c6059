use proptest::prelude::*;
use satcause::tabular::{self, Column, ColumnKind, ColumnSpec, Dataset};

const AIRLINE_SAMPLE: &str = "\
,id,Gender,Customer Type,Age,Type of Travel,Class,Flight Distance,Inflight wifi service,Departure/Arrival time convenient,Ease of Online booking,Gate location,Food and drink,Online boarding,Seat comfort,Inflight entertainment,On-board service,Leg room service,Baggage handling,Checkin service,Inflight service,Cleanliness,Departure Delay in Minutes,Arrival Delay in Minutes,satisfaction
0,70172,Male,Loyal Customer,13,Personal Travel,Eco Plus,460,3,4,3,1,5,3,5,5,4,3,4,4,5,5,25,18.0,neutral or dissatisfied
1,5047,Male,disloyal Customer,25,Business travel,Business,235,3,2,3,3,1,3,1,1,1,5,3,1,4,1,1,6.0,neutral or dissatisfied
2,110028,Female,Loyal Customer,26,Business travel,Business,1142,2,2,2,2,5,5,5,5,4,3,4,4,4,5,0,,satisfied
";

#[test]
fn airline_schema_has_twenty_two_predictors() {
    let schema = tabular::airline_schema();
    tabular::validate_schema(&schema).unwrap();
    let targets = schema
        .iter()
        .filter(|s| matches!(s.kind, ColumnKind::BinaryTarget { .. }))
        .count();
    assert_eq!(targets, 1);
    assert_eq!(schema.len() - targets, 22);
}

#[test]
fn airline_sample_ingests() {
    let data = tabular::read_csv(AIRLINE_SAMPLE.as_bytes(), &tabular::airline_schema()).unwrap();
    assert_eq!(data.n_rows(), 3);
    assert!(data.column_index("id").is_none());
    let arrival = data.numeric("Arrival Delay in Minutes").unwrap();
    assert_eq!(arrival, &[Some(18.0), Some(6.0), None]);
    let (_, target) = data.target().unwrap();
    assert_eq!(target, &[false, false, true]);
    let Some(Column::Nominal(class)) = data.column("Class") else {
        panic!("Class is nominal")
    };
    assert_eq!(class[0].as_deref(), Some("Eco Plus"));
}

#[test]
fn missing_declared_column_is_named() {
    let without_age = AIRLINE_SAMPLE.replace(",Age,", ",Years,");
    let err = tabular::read_csv(without_age.as_bytes(), &tabular::airline_schema()).unwrap_err();
    assert!(err.to_string().contains("\"Age\""), "{err}");
}

#[test]
fn summary_of_airline_sample() {
    let data = tabular::read_csv(AIRLINE_SAMPLE.as_bytes(), &tabular::airline_schema()).unwrap();
    let s = tabular::summarize(&data, "satisfaction").unwrap();
    assert_eq!(s.groups.iter().map(|g| g.count).sum::<usize>(), 3);
    let satisfied = s.groups.iter().find(|g| g.label == "satisfied").unwrap();
    let age = satisfied.columns.iter().find(|c| c.column == "Age").unwrap();
    assert_eq!(age.median, Some(26.0));
}

fn numeric_dataset(columns: Vec<Vec<Option<f64>>>, target: Vec<bool>) -> Dataset {
    let mut schema: Vec<ColumnSpec> = (0..columns.len())
        .map(|j| ColumnSpec::numeric(&format!("c{j}")))
        .collect();
    schema.push(ColumnSpec::target("y", "yes", "no"));
    let mut cols: Vec<Column> = columns.into_iter().map(Column::Numeric).collect();
    cols.push(Column::Target(target));
    Dataset::new(schema, cols).unwrap()
}

#[test]
fn affine_transform_has_unit_correlation() {
    let x: Vec<Option<f64>> = (0..500).map(|i| Some(((i * 7919) % 503) as f64 / 7.0)).collect();
    let y: Vec<Option<f64>> = x.iter().map(|v| v.map(|v| 3.5 * v - 2.0)).collect();
    let data = numeric_dataset(vec![x, y], (0..500).map(|i| i % 2 == 0).collect());
    let s = tabular::summarize(&data, "y").unwrap();
    let r = &s.correlation.values;
    assert_eq!(r[0][0], Some(1.0));
    assert!((r[0][1].unwrap() - 1.0).abs() <= 1e-12);
}

#[test]
fn constant_column_is_flagged_undefined() {
    let x = vec![Some(2.0); 4];
    let z = vec![Some(1.0), Some(2.0), Some(4.0), Some(8.0)];
    let data = numeric_dataset(vec![x, z], vec![true, false, true, false]);
    let s = tabular::summarize(&data, "y").unwrap();
    assert_eq!(s.correlation.undefined, vec!["c0".to_string()]);
    assert!(!s.correlation.columns.contains(&"c0".to_string()));
    let stats = &s.groups[0].columns[0];
    assert_eq!(stats.variance, Some(0.0));
    assert_eq!(stats.min, stats.max);
}

fn cell() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![
        1 => Just(None),
        6 => any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Some),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_bit_exact(
        rows in prop::collection::vec((cell(), cell(), any::<bool>()), 1..40)
    ) {
        let a: Vec<Option<f64>> = rows.iter().map(|r| r.0).collect();
        let b: Vec<Option<f64>> = rows.iter().map(|r| r.1).collect();
        let t: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let data = numeric_dataset(vec![a, b], t);
        let mut buf = Vec::new();
        tabular::write_csv(&data, &mut buf).unwrap();
        let back = tabular::read_csv(buf.as_slice(), data.schema()).unwrap();
        for (x, y) in data.columns().iter().zip(back.columns()) {
            match (x, y) {
                (Column::Numeric(x), Column::Numeric(y)) => {
                    let xb: Vec<Option<u64>> = x.iter().map(|v| v.map(|v| (v + 0.0).to_bits())).collect();
                    let yb: Vec<Option<u64>> = y.iter().map(|v| v.map(|v| (v + 0.0).to_bits())).collect();
                    prop_assert_eq!(xb, yb);
                }
                _ => prop_assert_eq!(x, y),
            }
        }
    }

    #[test]
    fn group_counts_sum_to_rows(labels in prop::collection::vec(0usize..4, 1..80)) {
        let categories = ["a", "b", "c"];
        let schema = vec![
            ColumnSpec::nominal("g", &categories),
            ColumnSpec::numeric("x"),
            ColumnSpec::target("y", "yes", "no"),
        ];
        let g = labels.iter().map(|&l| categories.get(l).map(|s| s.to_string())).collect();
        let x = labels.iter().map(|&l| Some(l as f64)).collect();
        let y = labels.iter().map(|&l| l % 2 == 0).collect();
        let data = Dataset::new(schema, vec![Column::Nominal(g), Column::Numeric(x), Column::Target(y)]).unwrap();
        let s = tabular::summarize(&data, "g").unwrap();
        prop_assert_eq!(s.groups.iter().map(|g| g.count).sum::<usize>(), labels.len());
    }
}
