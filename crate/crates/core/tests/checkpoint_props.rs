mod common;

use common::rng;
use rand::Rng;
use skelfall_core::checkpoint::Checkpoint;
use skelfall_core::config::{ExperimentConfig, SCHEMA_VERSION};
use skelfall_core::data::{LabelSpace, SplitName};
use skelfall_core::graph::{ntu_topology, SkeletonTopology};
use skelfall_core::model::*;
use skelfall_core::preprocess::{NormStats, PreprocessConfig};
use skelfall_core::tensor::Tensor;
use skelfall_core::Error;

fn trained_like_net(seed: u64) -> FallDetectorNet {
    let mut r = rng(seed);
    let mut net = FallDetectorNet::new(ModelConfig::desk(), ntu_topology()).unwrap();
    for p in net.params_mut() {
        p.value.data_mut().iter_mut().for_each(|x| *x += r.random_range(-0.1..0.1));
    }
    for s in net.bn_states_mut() {
        s.mean.iter_mut().for_each(|x| *x = r.random_range(-0.5..0.5));
        s.var.iter_mut().for_each(|x| *x = r.random_range(0.5..2.0));
    }
    net
}

fn checkpoint(net: &FallDetectorNet) -> Checkpoint {
    let norm = NormStats {
        mean: [0.1, -0.2, 0.3],
        std: [1.5, 0.7, 0.9],
    };
    let pre = PreprocessConfig {
        max_frames: 64,
        window: 48,
        bodies: 1,
        ..PreprocessConfig::default()
    };
    Checkpoint::from_net(net, pre, LabelSpace::ntu60(), norm, serde_json::json!({"seed": 7}))
}

fn batch(seed: u64) -> Batch {
    let mut r = rng(seed);
    Batch {
        joints: Tensor::from_fn(&[3, 3, 12, 25], |_| r.random_range(-1.0..1.0)),
        velocity: Tensor::from_fn(&[3, 3, 12, 25], |_| r.random_range(-0.1..0.1)),
        labels: vec![0, 1, 0],
        bodies: 1,
    }
}

#[test]
fn save_load_gives_bit_identical_logits() {
    let net = trained_like_net(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ck = checkpoint(&net);
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ck);
    let back = loaded.to_net().unwrap();
    let b = batch(2);
    assert_eq!(net.logits(&b).unwrap().data(), back.logits(&b).unwrap().data());
}

#[test]
fn corrupted_files_are_rejected() {
    let bytes = checkpoint(&trained_like_net(3)).to_bytes();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checkpoint(_))));
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 100]),
        Err(Error::Checkpoint(_))
    ));
    assert!(matches!(Checkpoint::from_bytes(b"not a model"), Err(Error::Checkpoint(_))));
}

#[test]
fn mismatched_tensors_are_rejected() {
    let mut ck = checkpoint(&trained_like_net(4));
    ck.params[0].1 = Tensor::zeros(&[2, 2]);
    assert!(matches!(ck.to_net(), Err(Error::Checkpoint(_))));
}

fn fingerprint(net: &FallDetectorNet) -> Vec<u64> {
    net.params()
        .iter()
        .flat_map(|p| p.value.data().iter().map(|x| x.to_bits()))
        .chain(net.bn_states().iter().flat_map(|s| s.mean.iter().chain(&s.var).map(|x| x.to_bits())))
        .collect()
}

#[test]
fn eval_mode_never_mutates_the_network() {
    let net = trained_like_net(5);
    let before = fingerprint(&net);
    for s in 0..3 {
        net.logits(&batch(10 + s)).unwrap();
    }
    assert_eq!(fingerprint(&net), before);
}

#[test]
fn loading_into_a_different_topology_fails() {
    let mut ck = checkpoint(&trained_like_net(6));
    let path: Vec<(usize, usize)> = (0..14).map(|i| (i, i + 1)).collect();
    ck.topology = SkeletonTopology::new(15, path, 7).unwrap();
    assert!(matches!(ck.to_net(), Err(Error::TopologyMismatch(_))));
}

#[test]
fn config_round_trip_and_defaults() {
    let text = r#"
schema_version = 1

[data]
split = "xview60"

[model]
bodies = 1
embed_channels = 8

[train]
epochs = 3
"#;
    let cfg = ExperimentConfig::parse(text).unwrap();
    assert_eq!(cfg.data.split, SplitName::Xview60);
    assert_eq!(cfg.model.embed_channels, 8);
    assert_eq!(cfg.model.joints, 25);
    assert_eq!(cfg.train.epochs, 3);
    assert_eq!(cfg.train.batch_size, 64);
    assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(cfg.data.label_space(), LabelSpace::ntu60());
}

#[test]
fn config_schema_violations() {
    for bad in [
        "schema_version = 2",
        "schema_version = 1\n[train]\nepoch = 3",
        "schema_version = 1\nsurprise = true",
        "schema_version = 1\n[data]\nsplit = \"xsub99\"",
        "schema_version = 1\n[model]\nhops = \"three\"",
    ] {
        assert!(matches!(ExperimentConfig::parse(bad), Err(Error::Config(_))), "{bad}");
    }
    let mut cfg = ExperimentConfig::default();
    assert_eq!(cfg.schema_version, SCHEMA_VERSION);
    cfg.validate().unwrap();
    cfg.preprocess.window = 400;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}
