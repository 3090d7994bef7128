use std::path::{Path, PathBuf};

use serde_json::json;
use skelfall_core::checkpoint::{state_checksum, Checkpoint};
use skelfall_core::config::ExperimentConfig;
use skelfall_core::data::{
    generate_synthetic, load_dir, make_split, read_skeleton_file, write_dir, LabelSpace, RawSample, SampleId,
    SplitName, SyntheticSpec,
};
use skelfall_core::dataset::{norm_stats, prepare, PreparedSample};
use skelfall_core::eval::{evaluate, profile};
use skelfall_core::graph::{ntu_topology, SkeletonTopology};
use skelfall_core::io::write_atomic;
use skelfall_core::model::FallDetectorNet;
use skelfall_core::train::{train, Artifacts};
use skelfall_core::{Error, Result};

use crate::{Command, EvalArgs, InspectArgs, Overrides, ProfileArgs, RunArgs, SynthArgs};

/// Stdout writes that tolerate a closed pipe.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

const EVAL_BATCH: usize = 64;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a, false),
        Command::TransferEval(a) => eval_cmd(a, true),
        Command::Profile(a) => profile_cmd(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn synth(a: SynthArgs) -> Result<()> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_fall: a.n_fall.unwrap_or(d.n_fall),
        n_other: a.n_other.unwrap_or(d.n_other),
        frames: a.frames.unwrap_or(d.frames),
        noise_std: a.noise_std.unwrap_or(d.noise_std),
        seed: a.seed,
        ..d
    };
    let corpus = generate_synthetic(&spec)?;
    let raw: Vec<RawSample> = corpus.iter().map(|s| s.sample.clone()).collect();
    write_dir(&a.out, &raw)?;
    let samples: Vec<_> = corpus
        .iter()
        .map(|s| json!({"id": s.sample.id.to_string(), "motion": s.motion}))
        .collect();
    write_atomic(&a.out.join("synth.json"), pretty(&json!({"spec": spec, "samples": samples})).as_bytes())?;
    log::info!("wrote {} samples to {}", raw.len(), a.out.display());
    Ok(())
}

/// Config file (or defaults) with command-line flags layered on top.
pub fn effective_config(o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &o.data_dir {
        cfg.data.dir = Some(d.clone());
    }
    if let Some(s) = &o.split {
        cfg.data.split = s.parse::<SplitName>().map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Some(t) = &o.topology {
        cfg.data.topology = Some(t.clone());
    }
    if let Some(s) = o.seed {
        cfg.train.seed = s;
        cfg.model.init_seed = s;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = o.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = o.lr {
        cfg.train.lr0 = lr;
    }
    if let Some(w) = o.window {
        cfg.preprocess.window = w;
    }
    if let Some(h) = o.hops {
        cfg.model.hops = h;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_joints(topology: &SkeletonTopology, raw: &[RawSample]) -> Result<()> {
    match raw.iter().find(|s| s.sequence.joints() != topology.joint_count()) {
        Some(s) => Err(Error::TopologyMismatch(format!(
            "sample {} has {} joints, the topology has {}",
            s.id,
            s.sequence.joints(),
            topology.joint_count()
        ))),
        None => Ok(()),
    }
}

fn train_cmd(a: RunArgs) -> Result<()> {
    let cfg = effective_config(&a.overrides)?;
    let dir = cfg
        .data
        .dir
        .clone()
        .ok_or_else(|| Error::Config("no data directory: pass --data-dir or set data.dir".into()))?;
    let topology = cfg.data.load_topology()?;
    if topology.joint_count() != cfg.model.joints {
        return Err(Error::TopologyMismatch(format!(
            "topology has {} joints, model.joints is {}",
            topology.joint_count(),
            cfg.model.joints
        )));
    }
    let raw = load_dir(&dir)?;
    check_joints(&topology, &raw)?;
    let ids: Vec<SampleId> = raw.iter().map(|s| s.id).collect();
    let split = make_split(cfg.data.split, &ids);
    if split.train_ids.is_empty() || split.test_ids.is_empty() {
        return Err(Error::EmptySample(format!(
            "split {} leaves {} training and {} test samples",
            cfg.data.split.as_str(),
            split.train_ids.len(),
            split.test_ids.len()
        )));
    }
    create_dir(&a.out)?;
    write_atomic(&a.out.join("config.toml"), cfg.to_toml().as_bytes())?;
    split.export(&a.out)?;

    let labels = cfg.data.label_space();
    let train_set = prepare(&raw, &split.train_ids, &cfg.preprocess, &labels)?;
    let test_set = prepare(&raw, &split.test_ids, &cfg.preprocess, &labels)?;
    drop(raw);
    let stats = norm_stats(&train_set);
    let mut net = FallDetectorNet::new(cfg.model.clone(), topology)?;
    log::info!(
        "{} train / {} test samples, {} parameters",
        train_set.len(),
        test_set.len(),
        net.count_params()
    );
    let run_config = serde_json::to_value(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let template = Checkpoint::from_net(&net, cfg.preprocess, labels, stats, run_config);
    let artifacts = Artifacts {
        dir: a.out.clone(),
        template: &template,
    };
    let out = train(
        &mut net,
        &train_set,
        Some(&test_set),
        &stats,
        cfg.preprocess.window,
        &cfg.train,
        Some(&artifacts),
    )?;
    let last = out.history.last().expect("at least one epoch");
    outln!("trained {} epochs, final loss {:.6}", out.history.len(), last.loss);
    if let Some(v) = &last.validation {
        outln!("{v}");
    }
    outln!("best epoch {} -> {}", out.best_epoch, artifacts.best_checkpoint().display());
    Ok(())
}

fn eval_cmd(a: EvalArgs, transfer: bool) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if let Some(p) = &a.topology {
        let topo = SkeletonTopology::load(p)?;
        if topo != ck.topology {
            return Err(Error::TopologyMismatch(format!(
                "{} ({} joints) differs from the checkpoint's topology ({} joints)",
                p.display(),
                topo.joint_count(),
                ck.topology.joint_count()
            )));
        }
    }
    let split_name: SplitName = a.split.parse()?;
    let mut labels = if transfer {
        LabelSpace::for_split(split_name)
    } else {
        ck.labels
    };
    if let Some(f) = a.fall_class {
        labels.fall_class = f;
    }
    let mut pre = ck.preprocess;
    if let Some(w) = a.window {
        if w == 0 || w > pre.max_frames {
            return Err(Error::Config(format!("window {w} must be in 1..={}", pre.max_frames)));
        }
        pre.window = w;
    }
    let net = ck.to_net()?;
    let before = state_checksum(&net);

    let raw = load_dir(&a.data_dir)?;
    check_joints(&ck.topology, &raw)?;
    let ids: Vec<SampleId> = raw.iter().map(|s| s.id).collect();
    let split = make_split(split_name, &ids);
    if split.test_ids.is_empty() {
        return Err(Error::EmptySample(format!("split {} has no test samples", split_name.as_str())));
    }
    let test_set: Vec<PreparedSample> = prepare(&raw, &split.test_ids, &pre, &labels)?;
    let result = evaluate(&net, &test_set, &ck.norm, pre.window, EVAL_BATCH)?;
    let after = state_checksum(&net);
    if after != before {
        return Err(Error::Checkpoint(format!(
            "parameters changed during evaluation ({before:016x} -> {after:016x})"
        )));
    }

    let report = json!({
        "mode": if transfer { "transfer-eval" } else { "eval" },
        "checkpoint": a.checkpoint,
        "checkpoint_epoch": ck.epoch,
        "data_dir": a.data_dir,
        "split": split_name,
        "labels": labels,
        "window": pre.window,
        "samples": test_set.len(),
        "positives": result.labels.iter().filter(|&&l| l == 1).count(),
        "params_checksum_before": format!("{before:016x}"),
        "params_checksum_after": format!("{after:016x}"),
        "run_config": ck.run_config,
        "metrics": result.report,
    });
    create_parent(&a.out)?;
    write_atomic(&a.out, pretty(&report).as_bytes())?;
    let text = format!(
        "{} of {} on {} ({} samples, window {}, fall class {})\n{}\n",
        if transfer { "transfer evaluation" } else { "evaluation" },
        a.checkpoint.display(),
        split_name.as_str(),
        test_set.len(),
        pre.window,
        labels.fall_class,
        result.report
    );
    write_atomic(&a.out.with_extension("txt"), text.as_bytes())?;
    out!("{text}");
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn profile_cmd(a: ProfileArgs) -> Result<()> {
    let (net, default_window, source): (FallDetectorNet, usize, PathBuf) = match (&a.checkpoint, &a.config) {
        (Some(p), _) => {
            let ck = Checkpoint::load(p)?;
            (ck.to_net()?, ck.preprocess.window, p.clone())
        }
        (None, Some(p)) => {
            let cfg = ExperimentConfig::load(p)?;
            cfg.validate()?;
            let topo = cfg.data.load_topology()?;
            (FallDetectorNet::new(cfg.model, topo)?, cfg.preprocess.window, p.clone())
        }
        (None, None) => {
            let cfg = ExperimentConfig::default();
            (
                FallDetectorNet::new(cfg.model, ntu_topology())?,
                cfg.preprocess.window,
                PathBuf::from("<defaults>"),
            )
        }
    };
    let window = a.window.unwrap_or(default_window);
    if window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let p = profile(&net, window, a.runs, a.epoch_samples)?;
    let doc = json!({"source": source, "profile": p});
    create_parent(&a.out)?;
    write_atomic(&a.out, pretty(&doc).as_bytes())?;
    outln!(
        "params {}\nflops {:.3} G (window {})\ninference {:.2} ms/sample ({} runs)\ntraining estimate {:.1} min/epoch over {} samples",
        p.params,
        p.flops as f64 / 1e9,
        p.window,
        p.mean_inference_ms,
        p.runs,
        p.train_min_per_epoch_estimate,
        p.epoch_samples
    );
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let seq = read_skeleton_file(&a.file)?;
    if let Some(id) = a.file.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<SampleId>().ok()) {
        outln!(
            "sample {id}: setup {} camera {} performer {} replication {} action {}",
            id.setup, id.camera, id.performer, id.replication, id.action
        );
    }
    let valid = seq.valid_frames().iter().filter(|&&v| v).count();
    outln!("frames {} ({valid} with a body), joints {}, body slots {}", seq.frames(), seq.joints(), seq.bodies());
    for m in 0..seq.bodies() {
        let present: Vec<usize> = (0..seq.frames()).filter(|&t| seq.body_present(t, m)).collect();
        if present.is_empty() {
            outln!("body {m}: absent");
            continue;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &t in &present {
            for v in 0..seq.joints() {
                let p = seq.point(t, v, m);
                for c in 0..3 {
                    lo[c] = lo[c].min(p[c]);
                    hi[c] = hi[c].max(p[c]);
                }
            }
        }
        outln!(
            "body {m}: {} frames, x [{:.3}, {:.3}] y [{:.3}, {:.3}] z [{:.3}, {:.3}]",
            present.len(),
            lo[0],
            hi[0],
            lo[1],
            hi[1],
            lo[2],
            hi[2]
        );
    }
    Ok(())
}
