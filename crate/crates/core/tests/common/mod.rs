#![allow(dead_code)]

use std::path::PathBuf;

use jdr_core::io::{load_pnm, parse_jpeg, ParsedJpeg};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/jpeg")
}

/// Baseline fixtures with a reference decode, as `(name, reference file)`.
pub fn baseline_fixtures() -> Vec<(String, PathBuf)> {
    let mut out: Vec<_> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .filter_map(|e| {
            let path = e.unwrap().path();
            let ext = path.extension()?.to_str()?;
            (ext == "pgm" || ext == "ppm").then(|| (path.file_stem().unwrap().to_str().unwrap().to_string(), path))
        })
        .collect();
    out.sort();
    out
}

pub fn parse_fixture(name: &str) -> ParsedJpeg {
    let bytes = std::fs::read(fixture_dir().join(format!("{name}.jpg"))).unwrap();
    parse_jpeg(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Largest per-pixel difference between our reconstruction and the
/// reference decoder, over every plane present in the reference file.
pub fn reconstruction_error(name: &str, reference: &PathBuf) -> u8 {
    let parsed = parse_fixture(name);
    let reference = load_pnm(&std::fs::read(reference).unwrap(), false).unwrap();
    let mut worst = 0u8;
    for (plane, component) in reference.planes.iter().zip(&parsed.components) {
        assert_eq!((component.width, component.height), (reference.width, reference.height), "{name}");
        let ours = component.reconstruct();
        for (&a, &b) in ours.iter().zip(plane.data()) {
            worst = worst.max((a as f64 - b).abs() as u8);
        }
    }
    worst
}
