use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tadcmh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tadcmh")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = tadcmh(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_into(dir: &Path, dy: &str) {
    ok(&["synth", "--n", "120", "--c", "4", "--dx", "16", "--dy", dy, "--seed", "1", "--out", s(dir)]);
}

#[test]
fn synth_writes_manifest_and_split() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("d");
    let printed = ok(&["synth", "--n", "500", "--c", "4", "--dx", "16", "--dy", "32", "--seed", "1", "--out", s(&dir)]);
    assert!(printed.trim().ends_with("manifest.json"));
    for f in ["manifest.json", "query.ids", "retrieval.ids", "train.ids", "image.f32", "text.f32", "labels.u8"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth_into(&a, "32");
    synth_into(&b, "32");
    for f in fs::read_dir(&a).unwrap().flatten() {
        assert_eq!(fs::read(f.path()).unwrap(), fs::read(b.join(f.file_name())).unwrap());
    }
}

#[test]
fn missing_out_is_a_usage_error() {
    let out = tadcmh(&["synth", "--n", "50"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}

#[test]
fn bad_train_flags_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    synth_into(&d, "32");
    let m = tmp.path().join("m");
    for extra in [&["--bits", "0"][..], &["--lr-image", "2"], &["--variant", "v9"], &["--hp-i2t", "1,2,3"]] {
        let mut args = vec!["train", "--data", s(&d), "--out", s(&m)];
        args.extend_from_slice(extra);
        assert_eq!(tadcmh(&args).status.code(), Some(2), "{extra:?}");
    }
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tadcmh(&["train", "--data", s(&tmp.path().join("nope")), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, m, e) = (tmp.path().join("d"), tmp.path().join("m"), tmp.path().join("e"));
    synth_into(&d, "32");
    ok(&["train", "--data", s(&d), "--task", "i2t", "--variant", "full", "--bits", "16", "--epochs", "50", "--hidden", "32", "--out", s(&m)]);
    assert!(m.join("model_i2t.tadc").is_file());
    assert!(!m.join("model_t2i.tadc").exists());
    let log = fs::read_to_string(m.join("train_i2t.csv")).unwrap();
    assert_eq!(log.lines().count(), 51);

    let printed = ok(&["eval", "--data", s(&d), "--model", s(&m.join("model_i2t.tadc")), "--ks", "10,20", "--out", s(&e)]);
    let map: f64 = printed.trim().rsplit('=').next().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&map));
    let curve = fs::read_to_string(e.join("curve_i2t_full_r16.csv")).unwrap();
    assert_eq!(curve.lines().filter(|l| !l.starts_with('#')).count(), 2);
    let grid = fs::read_to_string(e.join("map_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2);
}

#[test]
fn both_tasks_and_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    synth_into(&d, "32");
    for variant in ["full", "v1", "v2", "v3"] {
        let m = tmp.path().join(variant);
        ok(&["train", "--data", s(&d), "--task", "both", "--variant", variant, "--epochs", "3", "--hidden", "16", "--out", s(&m)]);
        assert!(m.join("model_i2t.tadc").is_file() && m.join("model_t2i.tadc").is_file(), "{variant}");
    }
    let m = tmp.path().join("hp");
    ok(&["train", "--data", s(&d), "--task", "t2i", "--preset", "iaprtc12", "--hp-t2i", "1,1,0.5,0.1", "--epochs", "2", "--hidden", "16", "--out", s(&m)]);
}

#[test]
fn eval_rejects_mismatched_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, d2, m) = (tmp.path().join("d"), tmp.path().join("d2"), tmp.path().join("m"));
    synth_into(&d, "32");
    synth_into(&d2, "40");
    ok(&["train", "--data", s(&d), "--task", "t2i", "--epochs", "2", "--hidden", "16", "--out", s(&m)]);
    let out = tadcmh(&["eval", "--data", s(&d2), "--model", s(&m.join("model_t2i.tadc")), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn encode_and_retrieve() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, m) = (tmp.path().join("d"), tmp.path().join("m"));
    synth_into(&d, "32");
    ok(&["train", "--data", s(&d), "--task", "i2t", "--epochs", "5", "--hidden", "16", "--out", s(&m)]);
    let model = m.join("model_i2t.tadc");
    let codes = tmp.path().join("q.tacb");
    ok(&["encode", "--data", s(&d), "--model", s(&model), "--set", "query", "--out", s(&codes)]);
    let n_query = fs::read_to_string(d.join("query.ids")).unwrap().lines().count();
    let r = tadcmh::hamming::read_codes(&codes).unwrap();
    assert_eq!((r.bits(), r.len()), (16, n_query));

    let q = fs::read_to_string(d.join("query.ids")).unwrap().lines().next().unwrap().to_string();
    let listing = ok(&["retrieve", "--data", s(&d), "--model", s(&model), "--query", &q, "--k", "5"]);
    assert_eq!(listing.lines().count(), 6);
    let train_id = fs::read_to_string(d.join("train.ids")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(tadcmh(&["retrieve", "--data", s(&d), "--model", s(&model), "--query", &train_id]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_is_reproducible() {
    let a = ok(&["gradcheck", "--trials", "100", "--seed", "9"]);
    let b = ok(&["gradcheck", "--trials", "100", "--seed", "9"]);
    assert_eq!(a, b);
    assert!(a.contains("PASS"));
}
