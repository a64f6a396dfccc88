use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::fields;
use crate::data::phones::PhoneSet;
use crate::error::{Diagnostic, Error, Result};

/// One aligned target phone: `duration` frames starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub phone: usize,
    pub start: usize,
    pub duration: usize,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.duration
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

/// Ordered, non-overlapping target-phone segments of one utterance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    segments: Vec<Segment>,
}

impl Alignment {
    /// Sorts by start frame and rejects zero durations and overlaps.
    pub fn new(mut segments: Vec<Segment>) -> Result<Self> {
        segments.sort_by_key(|s| s.start);
        for s in &segments {
            if s.duration == 0 {
                return Err(Error::InvalidArgument(format!("zero-duration segment at frame {}", s.start)));
            }
        }
        for w in segments.windows(2) {
            if w[1].start < w[0].end() {
                return Err(Error::InvalidArgument(format!(
                    "segments [{}, {}) and [{}, {}) overlap",
                    w[0].start,
                    w[0].end(),
                    w[1].start,
                    w[1].end()
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// One past the last aligned frame.
    pub fn end_frame(&self) -> usize {
        self.segments.last().map_or(0, Segment::end)
    }

    /// Checks every segment lies inside `[0, n_frames)`.
    pub fn check_bounds(&self, n_frames: usize) -> Result<()> {
        match self.segments.iter().find(|s| s.end() > n_frames) {
            Some(s) => Err(Error::Dimension(format!(
                "segment [{}, {}) exceeds {n_frames} frames",
                s.start,
                s.end()
            ))),
            None => Ok(()),
        }
    }
}

/// Parses `utt_id phone start duration` lines into per-utterance alignments.
pub fn parse_alignment_str(text: &str, phones: &PhoneSet, file: &Path) -> Result<BTreeMap<String, Alignment>> {
    let mut diags = Vec::new();
    let mut raw: BTreeMap<String, Vec<(Segment, usize)>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let parts = fields(line);
        if parts.is_empty() {
            continue;
        }
        let [utt, sym, start, dur] = parts.as_slice() else {
            diags.push(Diagnostic::at_line(
                file,
                line_no,
                format!("expected `utt_id phone start duration`, found {} fields", parts.len()),
            ));
            continue;
        };
        let Some(phone) = phones.index_of(sym) else {
            diags.push(Diagnostic::at_line(file, line_no, format!("unknown phone symbol {sym:?}")));
            continue;
        };
        let start = match start.parse::<i64>() {
            Ok(v) if v >= 0 => v as usize,
            _ => {
                diags.push(Diagnostic::at_line(file, line_no, format!("bad start frame {start:?}")));
                continue;
            }
        };
        let duration = match dur.parse::<i64>() {
            Ok(v) if v >= 1 => v as usize,
            Ok(v) => {
                diags.push(Diagnostic::at_line(file, line_no, format!("duration must be >= 1, got {v}")));
                continue;
            }
            Err(_) => {
                diags.push(Diagnostic::at_line(file, line_no, format!("bad duration {dur:?}")));
                continue;
            }
        };
        raw.entry(utt.to_string()).or_default().push((
            Segment {
                phone,
                start,
                duration,
            },
            line_no,
        ));
    }

    let mut out = BTreeMap::new();
    for (utt, mut segs) in raw {
        segs.sort_by_key(|(s, _)| s.start);
        let mut ok = true;
        for w in segs.windows(2) {
            let ((a, _), (b, line_b)) = (&w[0], &w[1]);
            if b.start < a.end() {
                ok = false;
                diags.push(Diagnostic::at_line(
                    file,
                    *line_b,
                    format!(
                        "{utt}: segment [{}, {}) overlaps [{}, {})",
                        b.start,
                        b.end(),
                        a.start,
                        a.end()
                    ),
                ));
            }
        }
        if ok {
            out.insert(
                utt,
                Alignment {
                    segments: segs.into_iter().map(|(s, _)| s).collect(),
                },
            );
        }
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(Error::Invalid(diags))
    }
}

pub fn parse_alignment(path: &Path, phones: &PhoneSet) -> Result<BTreeMap<String, Alignment>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignment_str(&text, phones, path)
}

pub fn alignment_to_text<'a>(
    alignments: impl IntoIterator<Item = (&'a str, &'a Alignment)>,
    phones: &PhoneSet,
) -> String {
    let mut out = String::new();
    for (utt, ali) in alignments {
        for s in ali.segments() {
            out.push_str(&format!(
                "{utt} {} {} {}\n",
                phones.symbol(s.phone).unwrap_or("?"),
                s.start,
                s.duration
            ));
        }
    }
    out
}

pub fn write_alignment<'a>(
    path: &Path,
    alignments: impl IntoIterator<Item = (&'a str, &'a Alignment)>,
    phones: &PhoneSet,
) -> Result<()> {
    fs::write(path, alignment_to_text(alignments, phones)).map_err(|e| Error::io(path, e))
}
