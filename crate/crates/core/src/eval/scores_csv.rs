//! Instance-score CSV: `utt_id,segment_index,phone,score,label`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Label, PhoneSet};
use crate::error::{Diagnostic, Error, Result};
use crate::eval::InstanceScore;

pub const SCORES_HEADER: &str = "utt_id,segment_index,phone,score,label";

/// One CSV row, with the phone kept as its symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub utt_id: String,
    pub segment_index: usize,
    pub phone: String,
    pub score: f64,
    pub label: u8,
}

pub fn scores_to_csv(scores: &[InstanceScore], phones: &PhoneSet) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in scores {
        let phone = phones
            .symbol(s.phone)
            .ok_or_else(|| Error::InvalidArgument(format!("phone index {} not in phone set", s.phone)))?;
        w.serialize(ScoreRow {
            utt_id: s.utterance_id.clone(),
            segment_index: s.segment_index,
            phone: phone.to_string(),
            score: s.score,
            label: s.label.bit(),
        })
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    if scores.is_empty() {
        return Ok(format!("{SCORES_HEADER}\n"));
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_scores_csv(path: &Path, scores: &[InstanceScore], phones: &PhoneSet) -> Result<()> {
    fs::write(path, scores_to_csv(scores, phones)?).map_err(|e| Error::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores_csv(&text, path)
}

pub fn parse_scores_csv(text: &str, path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Invalid(vec![Diagnostic::at_line(path, 1, e.to_string())]))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != SCORES_HEADER {
        return Err(Error::Invalid(vec![Diagnostic::at_line(
            path,
            1,
            format!("expected header `{SCORES_HEADER}`"),
        )]));
    }
    let mut rows = Vec::new();
    let mut diags = Vec::new();
    for (i, rec) in r.deserialize::<ScoreRow>().enumerate() {
        match rec {
            Ok(row) if row.label > 1 => diags.push(Diagnostic::at_line(path, i + 2, "label must be 0 or 1")),
            Ok(row) if !row.score.is_finite() => diags.push(Diagnostic::at_line(path, i + 2, "non-finite score")),
            Ok(row) => rows.push(row),
            Err(e) => diags.push(Diagnostic::at_line(path, i + 2, e.to_string())),
        }
    }
    if diags.is_empty() {
        Ok(rows)
    } else {
        Err(Error::Invalid(diags))
    }
}

impl ScoreRow {
    pub fn to_instance(&self, phones: &PhoneSet) -> Result<InstanceScore> {
        Ok(InstanceScore {
            utterance_id: self.utt_id.clone(),
            segment_index: self.segment_index,
            phone: phones
                .index_of(&self.phone)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown phone {:?}", self.phone)))?,
            score: self.score,
            label: Label::from_bit(self.label).expect("validated label"),
        })
    }
}
