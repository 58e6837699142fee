use std::fs;

use epr_core::io::{config_hash, read_dataset, read_truth, write_dataset, write_truth, Header, Table};
use epr_core::sim::{generate_dataset, SimConfig, SimGeometry};
use epr_core::Error;

fn header() -> Header {
    Header {
        config_hash: config_hash("io test"),
        seed: 17,
    }
}

#[test]
fn dataset_and_truth_round_trip_exactly() {
    let cfg = SimConfig::tiny();
    let geom = SimGeometry::build(&cfg).unwrap();
    let (ds, truth) = generate_dataset(&cfg, &geom, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds, &header()).unwrap();
    write_truth(dir.path(), &ds, &truth, &header()).unwrap();

    let (back, h) = read_dataset(dir.path()).unwrap();
    assert_eq!(h, header());
    assert_eq!(back, ds);
    assert_eq!(read_truth(dir.path(), &back).unwrap(), truth);
}

#[test]
fn rewriting_a_read_dataset_is_byte_identical() {
    let cfg = SimConfig::tiny();
    let geom = SimGeometry::build(&cfg).unwrap();
    let (ds, _) = generate_dataset(&cfg, &geom, 1).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_dataset(a.path(), &ds, &header()).unwrap();
    let (back, _) = read_dataset(a.path()).unwrap();
    write_dataset(b.path(), &back, &header()).unwrap();
    for f in ["grid.tsv", "points.tsv", "regions.tsv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn z1_without_z3_is_rejected_with_the_row_id() {
    let cfg = SimConfig::tiny();
    let geom = SimGeometry::build(&cfg).unwrap();
    let (ds, _) = generate_dataset(&cfg, &geom, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds, &header()).unwrap();

    let victim = ds.points.iter().find(|p| p.z3).unwrap().id.clone();
    let path = dir.path().join("points.tsv");
    let text = fs::read_to_string(&path).unwrap();
    let edited: Vec<String> = text
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split('\t').collect();
            if f[0] == victim {
                f[4] = "0";
            }
            f.join("\t")
        })
        .collect();
    fs::write(&path, edited.join("\n") + "\n").unwrap();

    let err = read_dataset(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    match err.root() {
        Error::Data { row, reason } => {
            assert_eq!(row, &format!("point {victim}"));
            assert!(reason.contains("z3 = 0"), "{reason}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn metadata_comment_lines_are_skipped() {
    let text = "# epr config_hash=abc seed=3\n\
                id\tvalue\n\
                # points_total = 80817\n\
                # regions_total = 3109\n\
                a\t1.5\n\
                b\t2.5\n";
    let t = Table::parse(text, "meta.tsv").unwrap();
    assert_eq!(t.header.seed, 3);
    assert_eq!(t.rows.len(), 2);
    assert_eq!(t.rows[1][t.col("value").unwrap()], "2.5");
}

#[test]
fn missing_files_and_bad_headers_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap_err().exit_code(), 3);
    let err = Table::parse("id\tvalue\n", "nohdr.tsv").unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("nohdr.tsv:1"), "{err}");
}
