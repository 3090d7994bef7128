//! Reader and writer for the NTU RGB+D `.skeleton` text format.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::preprocess::SkeletonSequence;

pub const NTU_JOINTS: usize = 25;
pub const MAX_BODIES: usize = 2;
pub const SKELETON_EXT: &str = "skeleton";
const JOINT_FIELDS: usize = 12;
const BODY_INFO_FIELDS: usize = 10;
const BODY_ID_BASE: u64 = 72_057_594_037_927_936;

/// `SsssCcccPpppRrrrAaaa` sample name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleId {
    pub setup: u32,
    pub camera: u32,
    pub performer: u32,
    pub replication: u32,
    pub action: u32,
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "S{:03}C{:03}P{:03}R{:03}A{:03}",
            self.setup, self.camera, self.performer, self.replication, self.action
        )
    }
}

impl FromStr for SampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parameter(format!("not an NTU sample id: {s:?}"));
        let b = s.as_bytes();
        if b.len() != 20 {
            return Err(bad());
        }
        let mut fields = [0u32; 5];
        for (k, tag) in b"SCPRA".iter().enumerate() {
            let chunk = &s[k * 4..k * 4 + 4];
            if chunk.as_bytes()[0] != *tag || !chunk[1..].bytes().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            fields[k] = chunk[1..].parse().map_err(|_| bad())?;
        }
        Ok(SampleId {
            setup: fields[0],
            camera: fields[1],
            performer: fields[2],
            replication: fields[3],
            action: fields[4],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub id: SampleId,
    pub sequence: SkeletonSequence,
}

impl RawSample {
    pub fn action_class(&self) -> u32 {
        self.id.action
    }

    pub fn subject_id(&self) -> u32 {
        self.id.performer
    }

    pub fn camera_id(&self) -> u32 {
        self.id.camera
    }

    pub fn setup_id(&self) -> u32 {
        self.id.setup
    }
}

type Pose = [[f64; 3]; NTU_JOINTS];

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next_fields(&mut self, what: &str) -> Result<Vec<&'a str>> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let fields: Vec<&str> = l.split_whitespace().collect();
            if !fields.is_empty() {
                return Ok(fields);
            }
        }
        self.line += 1;
        Err(self.err(format!("unexpected end of file, expected {what}")))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let f = self.next_fields(what)?;
        if f.len() != 1 {
            return Err(self.err(format!("expected a single {what}, got {} fields", f.len())));
        }
        f[0].parse().map_err(|_| self.err(format!("bad {what}: {:?}", f[0])))
    }
}

/// Parses file contents. At most two bodies are kept: those with the
/// highest summed frame-to-frame joint displacement.
pub fn parse_skeleton(text: &str, path: &Path) -> Result<SkeletonSequence> {
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate(),
        line: 0,
    };
    let frames = lines.count("frame count")?;
    if frames == 0 {
        return Err(lines.err("frame count is zero"));
    }
    // body id -> per-frame pose, in order of first appearance
    let mut order: Vec<String> = Vec::new();
    let mut tracks: HashMap<String, Vec<Option<Pose>>> = HashMap::new();
    for t in 0..frames {
        let bodies = lines.count("body count")?;
        for _ in 0..bodies {
            let info = lines.next_fields("body info")?;
            if info.len() != BODY_INFO_FIELDS {
                return Err(lines.err(format!("body info has {} fields, expected {BODY_INFO_FIELDS}", info.len())));
            }
            let id = info[0].to_string();
            let joints = lines.count("joint count")?;
            if joints != NTU_JOINTS {
                return Err(lines.err(format!("joint count {joints}, expected {NTU_JOINTS}")));
            }
            let mut pose = [[0.0; 3]; NTU_JOINTS];
            for p in pose.iter_mut() {
                let f = lines.next_fields("joint line")?;
                if f.len() != JOINT_FIELDS {
                    return Err(lines.err(format!("joint line has {} fields, expected {JOINT_FIELDS}", f.len())));
                }
                for (k, s) in f.iter().enumerate() {
                    let x: f32 = s.parse().map_err(|_| lines.err(format!("unparsable number {s:?}")))?;
                    if k < 3 {
                        p[k] = x as f64;
                    }
                }
            }
            let track = tracks.entry(id.clone()).or_insert_with(|| {
                order.push(id);
                vec![None; frames]
            });
            track[t] = Some(pose);
        }
    }
    if let Some((i, _)) = lines.inner.by_ref().find(|(_, l)| !l.trim().is_empty()) {
        lines.line = i + 1;
        return Err(lines.err("trailing data after last frame"));
    }
    let kept = select_bodies(&order, &tracks);
    let mut seq = SkeletonSequence::zeros(frames, NTU_JOINTS, kept.len().max(1));
    for (m, id) in kept.iter().enumerate() {
        for (t, pose) in tracks[*id].iter().enumerate() {
            if let Some(pose) = pose {
                for (v, p) in pose.iter().enumerate() {
                    seq.set_point(t, v, m, *p);
                }
            }
        }
    }
    Ok(seq)
}

fn motion_energy(track: &[Option<Pose>]) -> f64 {
    track
        .windows(2)
        .filter_map(|w| match (&w[0], &w[1]) {
            (Some(a), Some(b)) => Some(
                a.iter()
                    .zip(b)
                    .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                    .sum::<f64>(),
            ),
            _ => None,
        })
        .sum()
}

fn select_bodies<'a>(order: &'a [String], tracks: &HashMap<String, Vec<Option<Pose>>>) -> Vec<&'a String> {
    if order.len() <= MAX_BODIES {
        return order.iter().collect();
    }
    let mut ranked: Vec<(usize, f64)> = order.iter().map(|id| motion_energy(&tracks[id])).enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep: Vec<usize> = ranked[..MAX_BODIES].iter().map(|r| r.0).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| &order[i]).collect()
}

/// Renders a sequence in the `.skeleton` format. Coordinates are written at
/// 32-bit precision; the unused per-joint fields are zero.
pub fn format_skeleton(seq: &SkeletonSequence) -> Result<String> {
    if seq.joints() != NTU_JOINTS {
        return Err(Error::Parameter(format!(
            "the skeleton format needs {NTU_JOINTS} joints, got {}",
            seq.joints()
        )));
    }
    let mut out = String::new();
    out.push_str(&format!("{}\n", seq.frames()));
    for t in 0..seq.frames() {
        let present: Vec<usize> = (0..seq.bodies()).filter(|&m| seq.body_present(t, m)).collect();
        out.push_str(&format!("{}\n", present.len()));
        for m in present {
            out.push_str(&format!("{} 0 0 0 0 0 0 0 0 2\n{NTU_JOINTS}\n", BODY_ID_BASE + m as u64));
            for v in 0..NTU_JOINTS {
                let p = seq.point(t, v, m);
                out.push_str(&format!(
                    "{} {} {} 0 0 0 0 0 0 0 0 2\n",
                    p[0] as f32, p[1] as f32, p[2] as f32
                ));
            }
        }
    }
    Ok(out)
}

pub fn read_skeleton_file(path: &Path) -> Result<SkeletonSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_skeleton(&text, path)
}

pub fn write_skeleton_file(path: &Path, seq: &SkeletonSequence) -> Result<()> {
    crate::io::write_atomic(path, format_skeleton(seq)?.as_bytes())
}

/// Reads one sample; the id comes from the file name.
pub fn load_sample(path: &Path) -> Result<RawSample> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Parameter(format!("bad sample path {}", path.display())))?;
    let id = stem.parse()?;
    Ok(RawSample {
        id,
        sequence: read_skeleton_file(path)?,
    })
}

/// Sorted `.skeleton` paths in a directory.
pub fn list_samples(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == SKELETON_EXT) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Loads every sample in a directory, in name order.
pub fn load_dir(dir: &Path) -> Result<Vec<RawSample>> {
    let paths = list_samples(dir)?;
    if paths.is_empty() {
        return Err(Error::EmptySample(format!("no .{SKELETON_EXT} files in {}", dir.display())));
    }
    paths.par_iter().map(|p| load_sample(p)).collect()
}

/// Writes `<id>.skeleton` for each sample.
pub fn write_dir(dir: &Path, samples: &[RawSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in samples {
        write_skeleton_file(&dir.join(format!("{}.{SKELETON_EXT}", s.id)), &s.sequence)?;
    }
    Ok(())
}
