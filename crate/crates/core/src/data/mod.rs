//! Dataset access: NTU skeleton files, evaluation splits, labels and the
//! synthetic corpus.

pub mod ntu;
pub mod split;
pub mod synthetic;

pub use ntu::{
    format_skeleton, load_dir, load_sample, parse_skeleton, read_skeleton_file, write_dir, write_skeleton_file,
    RawSample, SampleId, NTU_JOINTS,
};
pub use split::{
    binarize_label, make_split, make_split_named, xsub120_train_subjects, xsub60_train_subjects, DatasetSplit, LabelSpace,
    SplitName,
};
pub use synthetic::{generate_synthetic, Motion, MotionKind, SyntheticSample, SyntheticSpec};
