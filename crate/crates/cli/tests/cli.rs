use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_speciescope"));
    c.env_remove("SPECIESCOPE_DATA").env_remove("SPECIESCOPE_PORT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn speciescope")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, features: bool) -> PathBuf {
    let mut args = vec!["synth", "--out", p(dir), "--image-size", "48"];
    let n = n.to_string();
    args.extend(["--n", &n]);
    if features {
        args.push("--features");
    }
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("manifest.csv")
}

fn json_of(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

const HEADER: &str = "id,image,g0,g1,g2,g3,g4,g5,g6,g7,g8,g9,g10,g11,score,category,split";

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["measure"])), 1);
    assert_eq!(code(&run(&["train", "--manifest", "x.csv", "--out", "m", "--kind", "forest"])), 1);
}

#[test]
fn seeded_training_writes_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 60, false);
    let train = |out: &str| {
        let out = dir.path().join(out);
        let o = run(&[
            "--json", "--seed", "1", "train", "--manifest", p(&manifest), "--hidden", "16", "--schedule", "2:0.01", "--out", p(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v = json_of(&o);
        assert!(v["validation"]["accuracy"].as_f64().is_some());
        (v["sha256"].as_str().unwrap().to_string(), std::fs::read(out).unwrap())
    };
    let (a, bytes_a) = train("a.spcm");
    let (b, bytes_b) = train("b.spcm");
    assert_eq!(a, b);
    assert_eq!(bytes_a, bytes_b);
    assert_eq!(&bytes_a[..4], b"SPCM");
}

#[test]
fn bad_schedule_and_hidden_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 30, false);
    let out = dir.path().join("m.spcm");
    for extra in [["--schedule", "4-0.01"], ["--schedule", "0:0.01"], ["--hidden", "8,x"]] {
        let mut args = vec!["train", "--manifest", p(&manifest), "--out", p(&out)];
        args.extend(extra);
        assert_eq!(code(&run(&args)), 1, "{extra:?}");
    }
    assert!(!out.exists());
}

#[test]
fn empty_manifest_measures_to_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.csv");
    std::fs::write(&manifest, format!("{HEADER}\n")).unwrap();
    let out = dir.path().join("m.csv");
    let o = run(&["measure", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, ["# r_cg=5 delta=0.23", "id,entropy,energy,contours,euler,acomplex,scomplex,fdim"]);
}

#[test]
fn missing_image_is_a_data_error_unless_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 12, false);
    std::fs::remove_file(dir.path().join("images/sp00003.png")).unwrap();
    let out = dir.path().join("m.csv");
    let o = run(&["measure", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--skip-bad"));
    assert!(!out.exists());

    let o = run(&["--json", "measure", "--manifest", p(&manifest), "--out", p(&out), "--skip-bad"]);
    assert_eq!(code(&o), 0);
    let v = json_of(&o);
    assert_eq!(v["rows"], 11);
    assert_eq!(v["skipped"][0]["id"], "sp00003");
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2 + 11);
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["measure", "--manifest", p(&dir.path().join("nope.csv")), "--out", p(&dir.path().join("m.csv"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn correlate_reports_and_constant_scores_are_numeric_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 40, false);
    let measures = dir.path().join("m.csv");
    assert_eq!(code(&run(&["measure", "--manifest", p(&manifest), "--out", p(&measures)])), 0);

    let corr = dir.path().join("corr");
    let o = run(&["--json", "correlate", "--measures", p(&measures), "--manifest", p(&manifest), "--out", p(&corr)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_of(&o);
    for variant in ["all", "no_empty"] {
        let ee = v[variant]["entropy_energy"].as_f64().unwrap();
        assert!((-1.0..=1.0).contains(&ee));
        assert!(corr.join(format!("correlations_{variant}.csv")).is_file());
    }

    let text = std::fs::read_to_string(&manifest).unwrap();
    let flat: String = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 0 {
                return format!("{line}\n");
            }
            let mut cols: Vec<&str> = line.split(',').collect();
            cols[14] = "5";
            format!("{}\n", cols.join(","))
        })
        .collect();
    std::fs::write(&manifest, flat).unwrap();
    let o = run(&["correlate", "--measures", p(&measures), "--manifest", p(&manifest), "--variant", "all"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn map_rejects_equal_dims_and_renders_otherwise() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 40, false);
    let model = dir.path().join("t.spcm");
    let o = run(&["train", "--manifest", p(&manifest), "--hidden", "8", "--schedule", "2:0.01", "--out", p(&model)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let stem = dir.path().join("map");
    let base = ["map", "--model", p(&model), "--manifest", p(&manifest), "--base-id", "sp00000", "--res", "6", "--out", p(&stem)];
    let mut same = base.to_vec();
    same.extend(["--dim-x", "2", "--dim-y", "2"]);
    assert_eq!(code(&run(&same)), 1);

    let mut ok = base.to_vec();
    ok.extend(["--dim-x", "0", "--dim-y", "5"]);
    let o = run(&ok);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let map: Value = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json")).unwrap()).unwrap();
    assert_eq!(map["cells"].as_array().unwrap().len(), 36);
    assert!(std::fs::read(stem.with_extension("png")).unwrap().starts_with(b"\x89PNG"));

    let mut unknown = base.to_vec();
    unknown[6] = "nobody";
    unknown.extend(["--dim-x", "0", "--dim-y", "1"]);
    assert_eq!(code(&run(&unknown)), 1);
}

#[test]
fn propose_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 20, false);
    let propose = |out: &str, seed: &str| {
        let out = dir.path().join(out);
        let o = run(&[
            "--seed", seed, "propose", "--manifest", p(&manifest), "--strategy", "mutation", "--parents", "sp00001,sp00002", "--n", "5",
            "--out", p(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let a = propose("a.csv", "3");
    assert_eq!(a, propose("b.csv", "3"));
    assert_ne!(a, propose("c.csv", "4"));
    assert!(a.starts_with(HEADER));
    assert_eq!(a.lines().count(), 6);
    assert!(a.lines().skip(1).all(|l| l.starts_with("prop-")));

    let o = run(&["propose", "--manifest", p(&manifest), "--strategy", "mutation", "--parents", "ghost", "--out", p(&dir.path().join("x.csv"))]);
    assert_ne!(code(&o), 0);
}

#[test]
fn eval_prints_the_benchmark_table() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 60, false);
    let out = dir.path().join("bench.csv");
    let o = run(&["eval", "--manifest", p(&manifest), "--hidden", "8", "--schedule", "2:0.01", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    for predictor in ["tabular", "knn_k1", "knn_k7", "knn_best"] {
        assert!(table.contains(predictor), "{predictor} missing from\n{table}");
    }
    assert!(std::fs::read_to_string(out).unwrap().lines().count() > 4);
}

#[test]
fn embed_writes_rows_for_every_specimen() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 30, false);
    let out = dir.path().join("e.csv");
    let o = run(&["--json", "embed", "--manifest", p(&manifest), "--perplexity", "5", "--iterations", "300", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json_of(&o)["n"], 30);
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 31);

    let o = run(&["embed", "--manifest", p(&manifest), "--space", "feature", "--out", p(&dir.path().join("f.csv"))]);
    assert_eq!(code(&o), 1);
}
