//! Evaluation protocols and binary labels.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::ntu::SampleId;
use crate::error::{Error, Result};

static XSUB60_TRAIN: LazyLock<BTreeSet<u32>> =
    LazyLock::new(|| parse_subjects(include_str!("../../data/ntu60_xsub_train_subjects.txt")));
static XSUB120_EXTRA_TRAIN: LazyLock<BTreeSet<u32>> =
    LazyLock::new(|| parse_subjects(include_str!("../../data/ntu120_xsub_extra_train_subjects.txt")));

fn parse_subjects(text: &str) -> BTreeSet<u32> {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(str::split_whitespace)
        .map(|s| s.parse().expect("subject list holds integers"))
        .collect()
}

pub fn xsub60_train_subjects() -> &'static BTreeSet<u32> {
    &XSUB60_TRAIN
}

pub fn xsub120_train_subjects() -> BTreeSet<u32> {
    XSUB60_TRAIN.union(&XSUB120_EXTRA_TRAIN).copied().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Xsub60,
    Xview60,
    Xsub120,
    Xset120,
    UwaVal3,
    UwaVal4,
}

impl SplitName {
    pub const ALL: [SplitName; 6] = [
        SplitName::Xsub60,
        SplitName::Xview60,
        SplitName::Xsub120,
        SplitName::Xset120,
        SplitName::UwaVal3,
        SplitName::UwaVal4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Xsub60 => "xsub60",
            SplitName::Xview60 => "xview60",
            SplitName::Xsub120 => "xsub120",
            SplitName::Xset120 => "xset120",
            SplitName::UwaVal3 => "uwa_val3",
            SplitName::UwaVal4 => "uwa_val4",
        }
    }

    /// `Some(true)` train, `Some(false)` test, `None` outside the protocol.
    pub fn assign(self, id: &SampleId) -> Option<bool> {
        let ntu60 = id.action <= 60;
        match self {
            SplitName::Xsub60 => ntu60.then(|| XSUB60_TRAIN.contains(&id.performer)),
            SplitName::Xview60 => ntu60.then_some(id.camera != 1),
            SplitName::Xsub120 => {
                Some(XSUB60_TRAIN.contains(&id.performer) || XSUB120_EXTRA_TRAIN.contains(&id.performer))
            }
            SplitName::Xset120 => Some(id.setup % 2 == 0),
            SplitName::UwaVal3 => match id.camera {
                1 | 2 => Some(true),
                3 => Some(false),
                _ => None,
            },
            SplitName::UwaVal4 => match id.camera {
                1 | 2 => Some(true),
                4 => Some(false),
                _ => None,
            },
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = SplitName::ALL.iter().map(|n| n.as_str()).collect();
                Error::Parameter(format!("unknown split {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub train_ids: Vec<SampleId>,
    pub test_ids: Vec<SampleId>,
}

/// Partitions ids by the protocol's rule. Ids outside the protocol (for
/// example NTU 120 classes under a 60-class split) are left out. Both
/// lists are sorted and free of duplicates.
pub fn make_split(name: SplitName, ids: &[SampleId]) -> DatasetSplit {
    let unique: BTreeSet<SampleId> = ids.iter().copied().collect();
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    for id in unique {
        match name.assign(&id) {
            Some(true) => train_ids.push(id),
            Some(false) => test_ids.push(id),
            None => {}
        }
    }
    DatasetSplit {
        name,
        train_ids,
        test_ids,
    }
}

pub fn make_split_named(name: &str, ids: &[SampleId]) -> Result<DatasetSplit> {
    Ok(make_split(name.parse()?, ids))
}

impl DatasetSplit {
    pub fn id_list(ids: &[SampleId]) -> String {
        ids.iter().map(|id| format!("{id}\n")).collect()
    }

    /// Writes `<name>_train.txt` and `<name>_test.txt`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::io::write_atomic(
            &dir.join(format!("{}_train.txt", self.name)),
            Self::id_list(&self.train_ids).as_bytes(),
        )?;
        crate::io::write_atomic(
            &dir.join(format!("{}_test.txt", self.name)),
            Self::id_list(&self.test_ids).as_bytes(),
        )
    }

    pub fn parse_id_list(text: &str) -> Result<Vec<SampleId>> {
        text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::parse).collect()
    }
}

/// Class-id range and the positive (fall) class of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub num_classes: u32,
    pub fall_class: u32,
}

impl LabelSpace {
    /// NTU class A043 is "falling".
    pub fn ntu60() -> Self {
        LabelSpace {
            num_classes: 60,
            fall_class: 43,
        }
    }

    pub fn ntu120() -> Self {
        LabelSpace {
            num_classes: 120,
            fall_class: 43,
        }
    }

    /// UWA3D Multiview Activity II; activity 8 is "falling down".
    pub fn uwa3d() -> Self {
        LabelSpace {
            num_classes: 30,
            fall_class: 8,
        }
    }

    pub fn for_split(name: SplitName) -> Self {
        match name {
            SplitName::Xsub60 | SplitName::Xview60 => Self::ntu60(),
            SplitName::Xsub120 | SplitName::Xset120 => Self::ntu120(),
            SplitName::UwaVal3 | SplitName::UwaVal4 => Self::uwa3d(),
        }
    }
}

/// 1 for the fall class, 0 otherwise.
pub fn binarize_label(action_class: u32, space: &LabelSpace) -> Result<usize> {
    if action_class == 0 || action_class > space.num_classes {
        return Err(Error::Label(format!(
            "class {action_class} outside 1..={}",
            space.num_classes
        )));
    }
    Ok(usize::from(action_class == space.fall_class))
}
