use std::fs;

use proxycal::dgp::{sample_dataset, DgpConfig};
use proxycal::io::{manifest_path, read_dataset, sha256_file, write_dataset};
use proxycal::Error;

#[test]
fn rewriting_a_generated_dataset_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = sample_dataset(&DgpConfig::new(5000, 10, 5, 5.0, 3)).unwrap();
    let first = dir.path().join("a.csv");
    let second = dir.path().join("b.csv");
    write_dataset(&ds, &first).unwrap();
    let back = read_dataset(&first).unwrap();
    write_dataset(&back, &second).unwrap();
    assert_eq!(sha256_file(&first).unwrap(), sha256_file(&second).unwrap());
    assert_eq!(back.meta.alpha, Some(5.0));
    for (x, y) in back.env.data().iter().zip(ds.env.data()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn missing_optional_columns_read_as_absent() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("plain.csv");
    fs::write(&p, "E_1,Yproxy_1,Yobs,A,Ytrue\n0.5,1.0,2.0,,\n-0.5,0.0,1.0,,\n").unwrap();
    let ds = read_dataset(&p).unwrap();
    assert!(ds.a_true.is_none() && ds.y_true.is_none() && ds.z_true.is_none() && ds.group.is_none());
    assert_eq!(ds.y_obs, vec![2.0, 1.0]);

    let out = dir.path().join("out.csv");
    write_dataset(&ds, &out).unwrap();
    assert_eq!(fs::read_to_string(&out).unwrap().lines().next().unwrap(), "E_1,Yproxy_1,Yobs");
    assert!(manifest_path(&out).exists());
}

#[test]
fn column_order_is_canonicalized() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("shuffled.csv");
    fs::write(&p, "Yobs,group,Yproxy_1,E_2,E_1\n1.5,roof,0.25,2,1\n").unwrap();
    let ds = read_dataset(&p).unwrap();
    assert_eq!(ds.env.row(0), &[1.0, 2.0]);
    let out = dir.path().join("canon.csv");
    write_dataset(&ds, &out).unwrap();
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("E_1,E_2,Yproxy_1,Yobs,group\n"), "{text}");
}

#[test]
fn nan_cell_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nan.csv");
    fs::write(&p, "E_1,Yproxy_1,Yobs\n1,2,3\n4,NaN,6\n").unwrap();
    match read_dataset(&p) {
        Err(e @ Error::Data(_)) => {
            let msg = e.to_string();
            assert!(msg.contains("row 2") && msg.contains("Yproxy_1"), "{msg}");
            assert_eq!(e.exit_code(), 3);
        }
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn malformed_numbers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for cell in ["1,5", "1 000", "abc", "0x10"] {
        let p = dir.path().join("bad.csv");
        fs::write(&p, format!("E_1,Yproxy_1,Yobs\n1,2,\"{cell}\"\n")).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Data(_))), "accepted `{cell}`");
    }
}

#[test]
fn missing_outcome_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("noy.csv");
    fs::write(&p, "E_1,Yproxy_1\n1,2\n").unwrap();
    assert!(matches!(read_dataset(&p), Err(Error::Schema(_))));
}
