use upmi::cohort::{generate_cohort, CohortSpec};
use upmi::table::{load_feature_table, read_feature_table, save_feature_table, write_feature_table, TableSchema};

#[test]
fn generated_tables_round_trip_through_csv() {
    let spec = CohortSpec { n_subjects: 30, n_features_per_modality: 12, seed: 9, ..CohortSpec::default() };
    let data = generate_cohort(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t1.csv");
    save_feature_table(data.t1(), &path).unwrap();
    let back = load_feature_table(&path, &TableSchema::default()).unwrap();
    assert_eq!(&back, data.t1());
}

#[test]
fn explicit_feature_columns_pick_a_subset() {
    let text = "subject_id,label,a,b,c\ns1,0,1.0,2.0,3.0\ns2,1,4.0,5.0,6.0\n";
    let schema = TableSchema {
        feature_columns: Some(vec!["c".into(), "a".into()]),
        ..TableSchema::default()
    };
    let table = read_feature_table(text.as_bytes(), &schema).unwrap();
    assert_eq!(table.n_features(), 2);
    let mut buf = Vec::new();
    write_feature_table(&table, &mut buf).unwrap();
    let again = read_feature_table(buf.as_slice(), &TableSchema::default()).unwrap();
    assert_eq!(again, table);
}

#[test]
fn non_numeric_cell_is_an_error() {
    let text = "subject_id,label,a\ns1,0,abc\ns2,1,1.0\n";
    let err = read_feature_table(text.as_bytes(), &TableSchema::default()).unwrap_err();
    assert_eq!(err.kind(), "non_numeric");
}
