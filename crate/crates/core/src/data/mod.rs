//! Domain types, file formats, corpus loading and speaker-grouped splitting.

pub mod alignment;
pub mod corpus;
pub mod fmat;
pub mod folds;
pub mod labels;
pub mod phones;

pub use alignment::{parse_alignment, write_alignment, Alignment, Segment};
pub use corpus::{eligible_phones, Corpus, LabelCounts, ManifestFile, UtteranceEntry, Utterance};
pub use fmat::{read_frame_matrix, write_frame_matrix, FrameMatrix, MatrixKind};
pub use folds::{make_speaker_folds, SpeakerSplit};
pub use labels::{parse_labels, write_labels, Label, LabelLine};
pub use phones::{PhoneSet, SenonePhoneMap};

/// Splits a text line into fields after dropping any `#` comment.
pub(crate) fn fields(line: &str) -> Vec<&str> {
    let content = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    content.split_whitespace().collect()
}
