use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use skelfall_core::checkpoint::Checkpoint;
use skelfall_core::data::LabelSpace;
use skelfall_core::graph::ntu_topology;
use skelfall_core::model::{FallDetectorNet, ModelConfig};
use skelfall_core::preprocess::{NormStats, PreprocessConfig};

fn skelfall(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skelfall"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, seed: &str) -> Output {
    skelfall(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        seed,
        "--n-fall",
        "3",
        "--n-other",
        "9",
        "--frames",
        "16",
    ])
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn desk_checkpoint(path: &Path) {
    let pre = PreprocessConfig {
        max_frames: 16,
        window: 12,
        bodies: 1,
        ..PreprocessConfig::default()
    };
    let net = FallDetectorNet::new(ModelConfig::desk(), ntu_topology()).unwrap();
    Checkpoint::from_net(&net, pre, LabelSpace::ntu60(), NormStats::identity(), serde_json::json!({}))
        .save(path)
        .unwrap();
}

#[test]
fn synth_is_byte_identical_for_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(synth(&a, "7").status.success());
    assert!(synth(&b, "7").status.success());
    assert!(synth(&c, "8").status.success());
    let files = dir_bytes(&a);
    assert_eq!(files.len(), 13);
    assert!(files.iter().any(|(n, _)| n == "synth.json"));
    assert_eq!(files, dir_bytes(&b));
    assert_ne!(files, dir_bytes(&c));
}

#[test]
fn foreign_topology_is_a_topology_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(synth(&data, "1").status.success());
    let ckpt = tmp.path().join("m.ckpt");
    desk_checkpoint(&ckpt);
    let topo = tmp.path().join("chain15.txt");
    let mut text = String::from("15\n");
    (0..14).for_each(|i| text.push_str(&format!("{i} {}\n", i + 1)));
    fs::write(&topo, text).unwrap();
    let o = skelfall(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--split",
        "xview60",
        "--out",
        tmp.path().join("r.json").to_str().unwrap(),
        "--topology",
        topo.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[topology-mismatch]"));
}

#[test]
fn eval_writes_json_and_text_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(synth(&data, "2").status.success());
    let ckpt = tmp.path().join("m.ckpt");
    desk_checkpoint(&ckpt);
    let out = tmp.path().join("reports/r.json");
    let o = skelfall(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--split",
        "xview60",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(doc["samples"], 4);
    assert_eq!(doc["split"], "xview60");
    assert_eq!(doc["params_checksum_before"], doc["params_checksum_after"]);
    assert!(doc["metrics"]["tp"].is_u64());
    let text = fs::read_to_string(out.with_extension("txt")).unwrap();
    assert!(text.contains("Sensitivity"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = skelfall(&["synth", "--out", "/tmp/x", "--colour", "red"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]"), "{}", stderr(&o));
}

#[test]
fn help_lists_every_flag() {
    let cases: &[(&str, &[&str])] = &[
        ("synth", &["--out", "--seed", "--n-fall", "--n-other", "--frames", "--noise-std"]),
        (
            "train",
            &[
                "--config",
                "--data-dir",
                "--split",
                "--out",
                "--seed",
                "--epochs",
                "--batch-size",
                "--lr",
                "--window",
                "--hops",
                "--topology",
            ],
        ),
        ("eval", &["--checkpoint", "--data-dir", "--split", "--out", "--window", "--topology", "--fall-class"]),
        ("transfer-eval", &["--checkpoint", "--data-dir", "--split", "--out"]),
        ("profile", &["--checkpoint", "--config", "--window", "--runs", "--epoch-samples", "--out"]),
        ("inspect", &["<FILE>"]),
    ];
    for (cmd, flags) in cases {
        let o = skelfall(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let text = String::from_utf8_lossy(&o.stdout);
        for f in *flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn schema_violation_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "schema_version = 1\n[train]\nepochz = 3\n").unwrap();
    let o = skelfall(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data-dir",
        "/nonexistent",
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[config]"));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "schema_version = 1\n[preprocess]\nmax_frames = 16\nwindow = 12\n").unwrap();
    // window 20 exceeds max_frames 16, so the override must be rejected
    let o = skelfall(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--window",
        "20",
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("window 20"));
}

#[test]
fn error_classes_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("S001C001P001R001A001.skeleton");
    fs::write(&bad, "1\n1\n").unwrap();
    let o = skelfall(&["inspect", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));

    let o = skelfall(&["inspect", tmp.path().join("missing.skeleton").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let junk = tmp.path().join("junk.ckpt");
    fs::write(&junk, b"definitely not a checkpoint").unwrap();
    let o = skelfall(&["profile", "--checkpoint", junk.to_str().unwrap(), "--out", "/tmp/p.json"]);
    assert_eq!(o.status.code(), Some(7), "{}", stderr(&o));

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    desk_checkpoint(&ckpt);
    let o = skelfall(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data-dir",
        empty.to_str().unwrap(),
        "--split",
        "xsub60",
        "--out",
        tmp.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(13), "{}", stderr(&o));
}

#[test]
fn inspect_summarizes_a_file() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(synth(tmp.path(), "3").status.success());
    let first = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "skeleton"))
        .min()
        .unwrap();
    let o = skelfall(&["inspect", first.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("frames 16"), "{text}");
    assert!(text.contains("joints 25"));
}
