//! End-to-end runs of the `onsigma` binary.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use onsigma::runner::parse_config;
use sha2::{Digest, Sha256};

const SMALL: &str = "[grid]\nmodes = 8\nmass = 1.0\n[dynamics]\ncomponents = 4\nt_burn = 1.0\nt_sample = 5.0\n";

fn onsigma(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_onsigma"));
    cmd.args(&args[..1]);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(&args[1..]).arg("--out").arg(out);
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("c.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn metadata(dir: &Path) -> toml::Table {
    std::fs::read_to_string(dir.join("metadata.toml")).unwrap().parse().unwrap()
}

#[test]
fn spectrum_run_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = onsigma(&["spectrum", "--seed", "7"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metadata.toml", "spectrum.csv", "spectrum_shells.csv", "o2.csv", "o2_summary.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let meta = metadata(&out);
    assert_eq!(meta["run"]["seed"].as_integer(), Some(7));
    assert_eq!(meta["stability"]["stable"].as_bool(), Some(true));
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = onsigma(&["spectrum"], Some(&tmp.path().join("absent.toml")), &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("absent.toml"), "{err}");
    assert!(err.to_lowercase().contains("usage"), "{err}");

    let o = onsigma(&["spectrum"], None, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_value_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[grid]\nmodes = 8\nmass = -1.0\n");
    let o = onsigma(&["spectrum"], Some(&cfg), &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.mass"));
}

#[test]
fn blow_up_exits_with_numerical_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[grid]\nmodes = 8\nmass = 1.0\n[dynamics]\ncomponents = 2\ndt = 0.5\ncoupling = 1e12\n\
         init_amplitude = 10.0\nt_burn = 0.0\nt_sample = 50.0\n",
    );
    let out = tmp.path().join("out");
    let o = onsigma(&["simulate"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let meta = metadata(&out);
    assert_eq!(meta["stability"]["stable"].as_bool(), Some(false));
    assert!(meta["stability"]["abort"].as_str().is_some());
}

#[test]
fn same_seed_gives_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = tmp.path().join(name);
            let o = onsigma(&["spectrum", "--seed", "3"], Some(&cfg), &out);
            assert!(o.status.success());
            csv_files(&out)
        })
        .collect();
    assert!(!runs[0].is_empty());
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn scaling_rows_and_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "seed = 4\n[grid]\nmodes = 8\nmass = 1.0\n[dynamics]\ncomponents = [8, 16, 32]\nt_burn = 2.0\nt_sample = 20.0\n",
    );
    let out = tmp.path().join("out");
    let o = onsigma(&["scaling"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("scaling.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), [8.0, 16.0, 32.0]);
    // least squares through three points of (ln N, ln gap)
    let x: Vec<f64> = rows.iter().map(|r| r[0].ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[1].ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / 3.0, y.iter().sum::<f64>() / 3.0);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = metadata(&out)["results"]["h1_gap_slope"].as_float().unwrap();
    assert!((slope - sxy / sxx).abs() <= 1e-12 * (1.0 + slope.abs()), "{slope} vs {}", sxy / sxx);
}

#[test]
fn manifest_config_and_csv_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    assert!(onsigma(&["spectrum", "--seed", "9"], Some(&cfg), &out).status.success());
    let meta = metadata(&out);

    let files = meta["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let bytes = std::fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_integer(), Some(bytes.len() as i64));
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"].as_str(), Some(digest.as_str()));
    }

    let embedded = toml::to_string(&meta["config"]).unwrap();
    let reparsed = parse_config(&embedded).unwrap();
    assert_eq!(reparsed.seed, 9);
    assert_eq!(reparsed.to_toml(), parse_config(&reparsed.to_toml()).unwrap().to_toml());
    let hash = meta["run"]["config_hash"].as_str().unwrap();
    assert_eq!(reparsed.hash(), hash);

    for (name, bytes) in csv_files(&out) {
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(format!("# config_hash={hash}").as_str()), "{name}");
        let header = lines.next().unwrap();
        assert!(!header.is_empty() && !header.starts_with('#'), "{name}");
        let cols = header.split(',').count();
        assert!(lines.all(|l| l.split(',').count() == cols), "{name}");
    }
}
