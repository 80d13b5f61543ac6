use flate2::write::GzEncoder;
use flate2::Compression;
use lsnn_tasks::dataset::{load_csv, load_idx, DatasetSource};
use lsnn_tasks::TaskError;
use std::io::Write;
use std::path::Path;

/// Four 2x3 images whose pixel k of image i is `10 * i + k`.
fn fixture_images() -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 3];
    for i in 0..4u8 {
        for k in 0..6u8 {
            b.push(10 * i + k);
        }
    }
    b
}

fn fixture_labels() -> Vec<u8> {
    vec![0, 0, 8, 1, 0, 0, 0, 4, 7, 0, 9, 3]
}

fn write(path: &Path, bytes: &[u8]) {
    std::fs::write(path, bytes).unwrap();
}

fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap()
}

fn parse_offset(e: TaskError) -> usize {
    match e {
        TaskError::Parse { offset, .. } => offset,
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn idx_fixture_parses_to_expected_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write(&img, &fixture_images());
    write(&lab, &fixture_labels());
    let d = load_idx(&img, &lab).unwrap();
    assert_eq!((d.rows, d.cols, d.len()), (2, 3, 4));
    assert_eq!(d.labels, vec![7, 0, 9, 3]);
    assert_eq!(d.image(2)[5], 25.0 / 255.0);
    assert!(d.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn gzipped_idx_matches_plain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    write(&p("img"), &fixture_images());
    write(&p("lab"), &fixture_labels());
    write(&p("img.gz"), &gzip(&fixture_images()));
    write(&p("lab.gz"), &gzip(&fixture_labels()));
    assert_eq!(load_idx(&p("img"), &p("lab")).unwrap(), load_idx(&p("img.gz"), &p("lab.gz")).unwrap());
}

#[test]
fn csv_fixture_matches_idx() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let mut text = String::from("label,p0,p1,p2,p3\n");
    for (i, l) in [7, 0, 9, 3].iter().enumerate() {
        let px: Vec<String> = (0..4).map(|k| (10 * i + k).to_string()).collect();
        text.push_str(&format!("{l},{}\n", px.join(",")));
    }
    write(&csv, text.as_bytes());
    let d = DatasetSource::Csv { path: csv }.load().unwrap();
    assert_eq!((d.rows, d.cols, d.len()), (2, 2, 4));
    assert_eq!(d.labels, vec![7, 0, 9, 3]);
    assert_eq!(d.image(3), &[30.0 / 255.0, 31.0 / 255.0, 32.0 / 255.0, 33.0 / 255.0]);
}

#[test]
fn empty_files_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    write(&empty, &[]);
    let lab = dir.path().join("lab");
    write(&lab, &fixture_labels());
    assert_eq!(parse_offset(load_idx(&empty, &lab).unwrap_err()), 0);
    assert_eq!(parse_offset(load_csv(&empty).unwrap_err()), 0);
}

#[test]
fn malformed_files_report_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    let mut short = fixture_images();
    short.truncate(30);
    write(&img, &short);
    write(&lab, &fixture_labels());
    assert_eq!(parse_offset(load_idx(&img, &lab).unwrap_err()), 30);

    write(&img, &fixture_images());
    let mut bad = fixture_labels();
    bad[9] = 12;
    write(&lab, &bad);
    assert_eq!(parse_offset(load_idx(&img, &lab).unwrap_err()), 9);

    let csv = dir.path().join("d.csv");
    write(&csv, b"1,0,0,0,0\n2,0,x,0,0\n");
    assert_eq!(parse_offset(load_csv(&csv).unwrap_err()), 10);
}

#[test]
fn downsampling_28_to_14_halves_each_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    let mut b = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 28, 0, 0, 0, 28];
    b.extend((0..784).map(|k| if (k / 28) % 2 == 0 { 255u8 } else { 0 }));
    write(&img, &b);
    write(&lab, &[0, 0, 8, 1, 0, 0, 0, 1, 5]);
    let d = load_idx(&img, &lab).unwrap().downsample(2).unwrap();
    assert_eq!((d.rows, d.cols, d.len()), (14, 14, 1));
    assert!(d.pixels.iter().all(|&p| (p - 0.5).abs() < 1e-12));
}
