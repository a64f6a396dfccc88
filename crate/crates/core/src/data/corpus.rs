//! Corpus manifests: loading, validation and writing.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::alignment::{parse_alignment, write_alignment, Alignment};
use crate::data::fmat::{read_frame_matrix, write_frame_matrix, FrameMatrix, MatrixKind};
use crate::data::labels::{parse_labels, write_labels, Label};
use crate::data::phones::{PhoneSet, SenonePhoneMap};
use crate::error::{Diagnostic, Error, Result};

/// On-disk JSON manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub kind: MatrixKind,
    pub phones: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub senone_map: Option<PathBuf>,
    pub alignment: PathBuf,
    pub labels: PathBuf,
    pub utterances: Vec<UtteranceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_speakers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_speakers: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceEntry {
    pub id: String,
    pub speaker: String,
    pub frames: PathBuf,
}

impl ManifestFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            Error::Invalid(vec![Diagnostic::at_line(path, e.line(), format!("manifest: {e}"))])
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One loaded utterance with exactly one label per aligned segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub frames: Arc<FrameMatrix>,
    pub alignment: Alignment,
    pub labels: Vec<Label>,
}

impl Utterance {
    /// `(segment_index, segment, label)` for every labeled segment.
    pub fn instances(&self) -> impl Iterator<Item = (usize, &crate::data::Segment, Label)> + '_ {
        self.alignment
            .segments()
            .iter()
            .zip(&self.labels)
            .enumerate()
            .map(|(i, (s, &l))| (i, s, l))
    }
}

/// A fully loaded and validated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub kind: MatrixKind,
    pub phones: PhoneSet,
    pub senone_map: Option<SenonePhoneMap>,
    pub utterances: Vec<Utterance>,
    pub dev_speakers: Option<Vec<String>>,
    pub eval_speakers: Option<Vec<String>>,
}

impl Corpus {
    pub fn load(manifest: &Path) -> Result<Self> {
        let (corpus, diags) = load_checked(manifest);
        match corpus {
            Some(c) if diags.is_empty() => Ok(c),
            _ => Err(Error::Invalid(diags)),
        }
    }

    /// Every problem found in the manifest and the files it references.
    pub fn check(manifest: &Path) -> Vec<Diagnostic> {
        load_checked(manifest).1
    }

    /// Frame dimension shared by all utterances (0 for an empty corpus).
    pub fn dim(&self) -> usize {
        self.utterances.first().map_or(0, |u| u.frames.dim())
    }

    /// Speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.utterances
            .iter()
            .filter(|u| seen.insert(u.speaker.as_str()))
            .map(|u| u.speaker.clone())
            .collect()
    }

    /// Copy restricted to utterances of the given speakers, keeping order.
    pub fn with_speakers<S: AsRef<str>>(&self, speakers: &[S]) -> Corpus {
        let keep: HashSet<&str> = speakers.iter().map(AsRef::as_ref).collect();
        Corpus {
            utterances: self
                .utterances
                .iter()
                .filter(|u| keep.contains(u.speaker.as_str()))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// The manifest-declared development subset, or the whole corpus.
    pub fn dev_subset(&self) -> Corpus {
        match &self.dev_speakers {
            Some(s) => self.with_speakers(s),
            None => self.clone(),
        }
    }

    pub fn eval_subset(&self) -> Corpus {
        match &self.eval_speakers {
            Some(s) => self.with_speakers(s),
            None => self.clone(),
        }
    }

    pub fn n_instances(&self) -> usize {
        self.utterances.iter().map(|u| u.labels.len()).sum()
    }

    pub fn label_counts(&self) -> LabelCounts {
        let mut counts = LabelCounts::new(self.phones.len());
        for u in &self.utterances {
            for (_, s, l) in u.instances() {
                counts.add(s.phone, l);
            }
        }
        counts
    }

    /// Writes the corpus under `dir` and returns the manifest path.
    /// Frame files go to `dir/frames/<utterance id>.fmat`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        let mut entries = Vec::with_capacity(self.utterances.len());
        for u in &self.utterances {
            if u.id.is_empty() || u.id.contains(['/', '\\']) || u.id.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("utterance id {:?} cannot name a file", u.id)));
            }
            let rel = PathBuf::from("frames").join(format!("{}.fmat", u.id));
            write_frame_matrix(&dir.join(&rel), &u.frames)?;
            entries.push(UtteranceEntry {
                id: u.id.clone(),
                speaker: u.speaker.clone(),
                frames: rel,
            });
        }
        self.phones.write(&dir.join("phones.txt"))?;
        let senone_map = match &self.senone_map {
            Some(m) => {
                m.write(&dir.join("senones.txt"), &self.phones)?;
                Some(PathBuf::from("senones.txt"))
            }
            None => None,
        };
        write_alignment(
            &dir.join("alignment.txt"),
            self.utterances.iter().map(|u| (u.id.as_str(), &u.alignment)),
            &self.phones,
        )?;
        let phone_of: Vec<Vec<usize>> = self
            .utterances
            .iter()
            .map(|u| u.alignment.segments().iter().map(|s| s.phone).collect())
            .collect();
        write_labels(
            &dir.join("labels.txt"),
            self.utterances
                .iter()
                .zip(&phone_of)
                .map(|(u, p)| (u.id.as_str(), p.as_slice(), u.labels.as_slice())),
            &self.phones,
        )?;
        let manifest = ManifestFile {
            kind: self.kind,
            phones: "phones.txt".into(),
            senone_map,
            alignment: "alignment.txt".into(),
            labels: "labels.txt".into(),
            utterances: entries,
            dev_speakers: self.dev_speakers.clone(),
            eval_speakers: self.eval_speakers.clone(),
        };
        let path = dir.join("manifest.json");
        manifest.write(&path)?;
        Ok(path)
    }
}

fn load_checked(manifest_path: &Path) -> (Option<Corpus>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let manifest = match ManifestFile::read(manifest_path) {
        Ok(m) => m,
        Err(e) => return (None, diags_of(e, manifest_path)),
    };
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let mut ids = HashSet::new();
    for u in &manifest.utterances {
        if !ids.insert(u.id.as_str()) {
            diags.push(Diagnostic::new(manifest_path, None, format!("duplicate utterance id {:?}", u.id)));
        }
    }

    let phones_path = resolve(&manifest.phones);
    let phones = match PhoneSet::read(&phones_path) {
        Ok(p) => p,
        Err(e) => {
            diags.extend(diags_of(e, &phones_path));
            return (None, diags);
        }
    };

    let senone_map = match &manifest.senone_map {
        Some(p) => {
            let path = resolve(p);
            match SenonePhoneMap::read(&path, &phones) {
                Ok(m) => Some(m),
                Err(e) => {
                    diags.extend(diags_of(e, &path));
                    None
                }
            }
        }
        None => None,
    };

    let ali_path = resolve(&manifest.alignment);
    let alignments = parse_alignment(&ali_path, &phones).unwrap_or_else(|e| {
        diags.extend(diags_of(e, &ali_path));
        BTreeMap::new()
    });
    let lab_path = resolve(&manifest.labels);
    let mut labels = parse_labels(&lab_path, &phones).unwrap_or_else(|e| {
        diags.extend(diags_of(e, &lab_path));
        BTreeMap::new()
    });

    for utt in alignments.keys() {
        if !ids.contains(utt.as_str()) {
            diags.push(Diagnostic::new(&ali_path, None, format!("alignment for unknown utterance {utt:?}")));
        }
    }
    for (utt, lines) in &labels {
        if !ids.contains(utt.as_str()) {
            let line = lines.first().map_or(0, |l| l.line);
            diags.push(Diagnostic::at_line(&lab_path, line, format!("label for unknown utterance {utt:?}")));
        }
    }

    let matrices: Vec<Result<FrameMatrix>> = manifest
        .utterances
        .par_iter()
        .map(|u| read_frame_matrix(&resolve(&u.frames)))
        .collect();

    let expected_dim = match (manifest.kind, &senone_map) {
        (MatrixKind::Posteriors, Some(m)) => Some(m.n_senones()),
        (MatrixKind::Posteriors, None) => Some(phones.len()),
        _ => None,
    };
    let mut first_dim: Option<usize> = None;
    let mut utterances = Vec::with_capacity(manifest.utterances.len());
    let empty = Alignment::default();
    for (entry, matrix) in manifest.utterances.iter().zip(matrices) {
        let frames_path = resolve(&entry.frames);
        let matrix = match matrix {
            Ok(m) => m,
            Err(e) => {
                diags.extend(diags_of(e, &frames_path));
                continue;
            }
        };
        if matrix.kind() != manifest.kind {
            diags.push(Diagnostic::new(
                &frames_path,
                None,
                format!("{}: file kind {:?} but manifest declares {:?}", entry.id, matrix.kind(), manifest.kind),
            ));
        }
        for (frame, why) in matrix.posterior_violations() {
            diags.push(Diagnostic::new(&frames_path, None, format!("utterance {} frame {frame}: {why}", entry.id)));
        }
        if let Some(d) = expected_dim {
            if matrix.dim() != d {
                diags.push(Diagnostic::new(
                    &frames_path,
                    None,
                    format!("{}: posterior dim {} but senone map covers {d}", entry.id, matrix.dim()),
                ));
            }
        }
        match first_dim {
            None => first_dim = Some(matrix.dim()),
            Some(d) if d != matrix.dim() => diags.push(Diagnostic::new(
                &frames_path,
                None,
                format!("{}: dim {} differs from corpus dim {d}", entry.id, matrix.dim()),
            )),
            _ => {}
        }

        let alignment = alignments.get(&entry.id).unwrap_or(&empty).clone();
        if let Err(e) = alignment.check_bounds(matrix.n_frames()) {
            diags.push(Diagnostic::new(&ali_path, None, format!("{}: {e}", entry.id)));
        }
        let lines = labels.remove(&entry.id).unwrap_or_default();
        let mut slot: Vec<Option<(Label, usize)>> = vec![None; alignment.len()];
        for l in &lines {
            match alignment.segments().get(l.segment_index) {
                None => diags.push(Diagnostic::at_line(
                    &lab_path,
                    l.line,
                    format!(
                        "{}: segment {} does not exist ({} aligned segments)",
                        entry.id,
                        l.segment_index,
                        alignment.len()
                    ),
                )),
                Some(seg) if seg.phone != l.phone => diags.push(Diagnostic::at_line(
                    &lab_path,
                    l.line,
                    format!(
                        "{}: segment {} is {:?}, label names {:?}",
                        entry.id,
                        l.segment_index,
                        phones.symbol(seg.phone).unwrap_or("?"),
                        phones.symbol(l.phone).unwrap_or("?")
                    ),
                )),
                Some(_) => match slot[l.segment_index] {
                    Some((_, prev)) => diags.push(Diagnostic::at_line(
                        &lab_path,
                        l.line,
                        format!("{}: segment {} already labeled on line {prev}", entry.id, l.segment_index),
                    )),
                    None => slot[l.segment_index] = Some((l.label, l.line)),
                },
            }
        }
        let missing: Vec<usize> = slot.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
        if !missing.is_empty() {
            diags.push(Diagnostic::new(
                &lab_path,
                None,
                format!("{}: segments {missing:?} have no label", entry.id),
            ));
            continue;
        }
        utterances.push(Utterance {
            id: entry.id.clone(),
            speaker: entry.speaker.clone(),
            frames: Arc::new(matrix),
            alignment,
            labels: slot.into_iter().map(|s| s.unwrap().0).collect(),
        });
    }

    let known: HashSet<&str> = manifest.utterances.iter().map(|u| u.speaker.as_str()).collect();
    for list in [&manifest.dev_speakers, &manifest.eval_speakers].into_iter().flatten() {
        for s in list {
            if !known.contains(s.as_str()) {
                diags.push(Diagnostic::new(manifest_path, None, format!("speaker list names unknown speaker {s:?}")));
            }
        }
    }
    if let (Some(dev), Some(ev)) = (&manifest.dev_speakers, &manifest.eval_speakers) {
        let dev: HashSet<&String> = dev.iter().collect();
        for s in ev.iter().filter(|s| dev.contains(s)) {
            diags.push(Diagnostic::new(manifest_path, None, format!("speaker {s:?} is in both dev and eval lists")));
        }
    }

    let corpus = Corpus {
        kind: manifest.kind,
        phones,
        senone_map,
        utterances,
        dev_speakers: manifest.dev_speakers,
        eval_speakers: manifest.eval_speakers,
    };
    (Some(corpus), diags)
}

fn diags_of(err: Error, path: &Path) -> Vec<Diagnostic> {
    let d = err.diagnostics();
    if d.is_empty() {
        vec![Diagnostic::new(path, None, err.to_string())]
    } else {
        d
    }
}

/// Per-phone instance counts, `[incorrect, correct]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCounts {
    counts: Vec<[usize; 2]>,
}

impl LabelCounts {
    pub fn new(n_phones: usize) -> Self {
        Self {
            counts: vec![[0, 0]; n_phones],
        }
    }

    pub fn add(&mut self, phone: usize, label: Label) {
        if phone >= self.counts.len() {
            self.counts.resize(phone + 1, [0, 0]);
        }
        self.counts[phone][label.bit() as usize] += 1;
    }

    pub fn get(&self, phone: usize) -> [usize; 2] {
        self.counts.get(phone).copied().unwrap_or([0, 0])
    }

    pub fn n_correct(&self, phone: usize) -> usize {
        self.get(phone)[1]
    }

    pub fn n_incorrect(&self, phone: usize) -> usize {
        self.get(phone)[0]
    }

    /// Phones whose minority class has at least `min_minority` instances
    /// (and at least one instance of each class).
    pub fn eligible(&self, min_minority: usize) -> BTreeSet<usize> {
        let floor = min_minority.max(1);
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| c[0].min(c[1]) >= floor)
            .map(|(p, _)| p)
            .collect()
    }
}

/// Default minority-class threshold for phone eligibility.
pub const DEFAULT_MIN_MINORITY: usize = 50;

pub fn eligible_phones(corpus: &Corpus, min_minority: usize) -> BTreeSet<usize> {
    corpus.label_counts().eligible(min_minority)
}

/// Speaker id of each utterance id.
pub fn speaker_index(corpus: &Corpus) -> HashMap<&str, &str> {
    corpus
        .utterances
        .iter()
        .map(|u| (u.id.as_str(), u.speaker.as_str()))
        .collect()
}
