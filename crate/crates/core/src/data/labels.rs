use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::fields;
use crate::data::phones::PhoneSet;
use crate::error::{Diagnostic, Error, Result};

/// Pronunciation annotation of one target-phone instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Incorrect,
    Correct,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Label::Incorrect),
            1 => Some(Label::Correct),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Incorrect => 0,
            Label::Correct => 1,
        }
    }

    pub fn target(self) -> f64 {
        self.bit() as f64
    }

    pub fn is_correct(self) -> bool {
        self == Label::Correct
    }
}

/// A parsed `utt_id segment_index phone label` line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelLine {
    pub segment_index: usize,
    pub phone: usize,
    pub label: Label,
    pub line: usize,
}

pub fn parse_labels_str(text: &str, phones: &PhoneSet, file: &Path) -> Result<BTreeMap<String, Vec<LabelLine>>> {
    let mut diags = Vec::new();
    let mut out: BTreeMap<String, Vec<LabelLine>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let parts = fields(line);
        if parts.is_empty() {
            continue;
        }
        let [utt, seg, sym, label] = parts.as_slice() else {
            diags.push(Diagnostic::at_line(
                file,
                line_no,
                format!("expected `utt_id segment_index phone label`, found {} fields", parts.len()),
            ));
            continue;
        };
        let Ok(segment_index) = seg.parse::<usize>() else {
            diags.push(Diagnostic::at_line(file, line_no, format!("bad segment index {seg:?}")));
            continue;
        };
        let Some(phone) = phones.index_of(sym) else {
            diags.push(Diagnostic::at_line(file, line_no, format!("unknown phone symbol {sym:?}")));
            continue;
        };
        let Some(label) = label.parse::<u8>().ok().and_then(Label::from_bit) else {
            diags.push(Diagnostic::at_line(file, line_no, format!("label must be 0 or 1, got {label:?}")));
            continue;
        };
        out.entry(utt.to_string()).or_default().push(LabelLine {
            segment_index,
            phone,
            label,
            line: line_no,
        });
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(Error::Invalid(diags))
    }
}

pub fn parse_labels(path: &Path, phones: &PhoneSet) -> Result<BTreeMap<String, Vec<LabelLine>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels_str(&text, phones, path)
}

/// Writes per-utterance positional labels; `phones_of` gives each segment's phone.
pub fn labels_to_text<'a>(
    entries: impl IntoIterator<Item = (&'a str, &'a [usize], &'a [Label])>,
    phones: &PhoneSet,
) -> String {
    let mut out = String::new();
    for (utt, phone_of, labels) in entries {
        for (i, (p, l)) in phone_of.iter().zip(labels).enumerate() {
            out.push_str(&format!("{utt} {i} {} {}\n", phones.symbol(*p).unwrap_or("?"), l.bit()));
        }
    }
    out
}

pub fn write_labels<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a [usize], &'a [Label])>,
    phones: &PhoneSet,
) -> Result<()> {
    fs::write(path, labels_to_text(entries, phones)).map_err(|e| Error::io(path, e))
}
