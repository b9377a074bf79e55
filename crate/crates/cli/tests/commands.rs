//! Runs the `ice` binary end to end on small synthetic inputs.

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn ice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ice"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = ice(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path, dgp: &str, n: usize) -> String {
    let out = dir.join(format!("gen-{dgp}"));
    let n = n.to_string();
    ok(&["generate", "--dgp", dgp, "--n", &n, "--seed", "1", "--out", out.to_str().unwrap()]);
    out.join("data.csv").to_string_lossy().into_owned()
}

const ROLES: [&str; 6] = ["--outcome", "y", "--treatment", "a", "--covariates", "x"];

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "appendix", 200);
    let out = dir.path().join("o").to_string_lossy().into_owned();

    let conflicting = ice(&["fit", "--data", &data, "--outcome", "a", "--treatment", "a", "--covariates", "x", "--delta", "1", "--out", &out]);
    assert_eq!(conflicting.status.code(), Some(2));

    let bad_level = ice(&[&["fit", "--data", &data][..], &ROLES, &["--delta", "1", "--level", "1.5", "--out", &out]].concat());
    assert_eq!(bad_level.status.code(), Some(2));

    let missing = dir.path().join("absent.csv").to_string_lossy().into_owned();
    let absent = ice(&[&["fit", "--data", &missing][..], &ROLES, &["--delta", "1", "--out", &out]].concat());
    assert_eq!(absent.status.code(), Some(1));

    let odd = dir.path().join("odd.csv");
    std::fs::write(&odd, "x,a,y\n0.1,0,1\n0.2,2,1\n").unwrap();
    let odd = odd.to_string_lossy().into_owned();
    let non_binary = ice(&[&["fit", "--data", &odd][..], &ROLES, &["--delta", "1", "--out", &out]].concat());
    assert_eq!(non_binary.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&non_binary.stderr).contains("row 2"));
}

#[test]
fn intercept_projection_is_the_average_effect() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "appendix", 800);
    let out = dir.path().join("fit");
    let deltas = "0.5,2";
    ok(&[
        &["fit", "--data", &data][..],
        &ROLES,
        &["--delta", deltas, "--basis", "1", "--out", out.to_str().unwrap()],
    ]
    .concat());
    let (_, rows) = read_csv(&out.join("coefficients.csv"));
    assert_eq!(rows.len(), 2);
    let doc = read_json(&out.join("result.json"));
    let averages = doc["summary"]["average_effects"].as_array().unwrap();
    let n = doc["summary"]["n"].as_f64().unwrap();
    for (row, avg) in rows.iter().zip(averages) {
        assert_eq!(row[2], "1");
        let beta: f64 = row[3].parse().unwrap();
        let se: f64 = row[4].parse().unwrap();
        let est = avg["estimate"].as_f64().unwrap();
        assert!((beta - est).abs() < 1e-10 * est.abs().max(1.0), "{beta} vs {est}");
        // The sandwich divides by n where the sample variance divides by n − 1.
        let expected = avg["se"].as_f64().unwrap() * ((n - 1.0) / n).sqrt();
        assert!((se - expected).abs() < 1e-8 * expected, "{se} vs {expected}");
    }
}

#[test]
fn curves_cover_every_delta_on_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "appendix", 800);
    let out = dir.path().join("idr");
    ok(&[
        &["fit", "--data", &data][..],
        &ROLES,
        &["--delta", "0.2,0.5,1,2,5", "--learner", "idr", "--grid-points", "31", "--out", out.to_str().unwrap()],
    ]
    .concat());
    let (header, rows) = read_csv(&out.join("curves.csv"));
    assert_eq!(header, ["delta", "delta_lower", "v", "estimate", "se", "ci_lower", "ci_upper"]);
    assert_eq!(rows.len(), 5 * 31);
    for (k, chunk) in rows.chunks(31).enumerate() {
        let want = [0.2, 0.5, 1.0, 2.0, 5.0][k];
        for row in chunk {
            assert_eq!(row[0].parse::<f64>().unwrap(), want);
            let vals: Vec<f64> = row[3..].iter().map(|s| s.parse().unwrap()).collect();
            assert!(vals[2] <= vals[0] && vals[0] <= vals[3] && vals[1] >= 0.0);
        }
    }
}

#[test]
fn homogeneous_process_is_not_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "null", 2000);
    let out = dir.path().join("v");
    ok(&[&["vcide", "--data", &data][..], &ROLES, &["--delta", "0.5,1,2", "--out", out.to_str().unwrap()]].concat());
    let (header, rows) = read_csv(&out.join("vcide.csv"));
    let reject = header.iter().position(|h| h == "reject").unwrap();
    let p = header.iter().position(|h| h == "p_value").unwrap();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(row[reject], "false", "{row:?}");
        assert!(row[p].parse::<f64>().unwrap() >= 0.05);
    }
}

#[test]
fn randomized_treatment_fills_a_single_bin() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rct.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut text = String::from("x,a,y\n");
    for _ in 0..2000 {
        let x: f64 = rng.random_range(-1.0..1.0);
        let a = u8::from(rng.random_bool(0.5));
        text.push_str(&format!("{x},{a},{}\n", x + f64::from(a)));
    }
    std::fs::write(&path, text).unwrap();
    let out = dir.path().join("diag");
    ok(&[
        &["diagnose", "--data", path.to_str().unwrap()][..],
        &ROLES,
        &["--bins", "5", "--out", out.to_str().unwrap()],
    ]
    .concat());
    let (_, rows) = read_csv(&out.join("positivity.csv"));
    let occupied: Vec<_> = rows.iter().filter(|r| r[3] != "0").collect();
    assert_eq!(occupied.len(), 1, "{occupied:?}");
    assert_eq!((occupied[0][1].as_str(), occupied[0][2].as_str()), ("0.4", "0.6"));
    let doc = read_json(&out.join("result.json"));
    assert_eq!(doc["summary"]["groups"][0]["flagged"], Value::Bool(false));
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "appendix", 500);
    let first = dir.path().join("first");
    ok(&[
        &["fit", "--data", &data][..],
        &ROLES,
        &["--effect", "cice", "--delta-u", "5", "--delta-l", "0.2", "--basis", "1 + x + x^2", "--out", first.to_str().unwrap()],
    ]
    .concat());
    let second = dir.path().join("second");
    ok(&["replay", "--from", first.join("result.json").to_str().unwrap(), "--out", second.to_str().unwrap()]);
    for file in ["result.json", "coefficients.csv"] {
        assert_eq!(std::fs::read(first.join(file)).unwrap(), std::fs::read(second.join(file)).unwrap(), "{file}");
    }
}
