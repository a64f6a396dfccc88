//! Deterministic synthetic corpora with controllable class separability.
//!
//! Each phone `p` has a center `c_p` and a unit "correctness" direction
//! `u_p` orthogonal to every phone center (when the dimension allows).
//! Frames of a correctly pronounced instance are drawn from
//! `N(c_p + (sep/2) u_p, I)`, incorrect ones from `N(c_p - (sep/2) u_p, I)`,
//! and silence between segments from `N(0, I)`.
//!
//! Posterior corpora are produced by a fixed stand-in ASR output layer:
//! senone `s` of phone `q` gets the logit
//! `sharpness * (<x, c_q/|c_q|> + correctness_weight * <x, u_q>) + jitter_s`,
//! followed by a softmax. With `asr_correctness_weight = 0` the ASR ignores
//! the correctness direction entirely, so its posteriors cannot tell
//! correct from incorrect instances.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Alignment, Corpus, FrameMatrix, Label, MatrixKind, PhoneSet, Segment, SenonePhoneMap, Utterance};
use crate::error::{Error, Result};

/// A value shared by all phones or given per phone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerPhone {
    All(f64),
    Each(Vec<f64>),
}

impl PerPhone {
    pub fn get(&self, phone: usize) -> f64 {
        match self {
            PerPhone::All(v) => *v,
            PerPhone::Each(v) => v[phone],
        }
    }

    fn check(&self, n: usize, what: &str, ok: impl Fn(f64) -> bool) -> Result<()> {
        let vals: Vec<f64> = match self {
            PerPhone::All(v) => vec![*v],
            PerPhone::Each(v) if v.len() != n => {
                return Err(Error::InvalidArgument(format!("{what}: {} values for {n} phones", v.len())))
            }
            PerPhone::Each(v) => v.clone(),
        };
        match vals.into_iter().find(|&v| !ok(v)) {
            Some(v) => Err(Error::InvalidArgument(format!("{what}: invalid value {v}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Activations,
    Posteriors,
    /// Both corpora, sharing alignments and labels.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub segments_per_utterance: usize,
    pub n_phones: usize,
    /// Inclusive `[min, max]` frames per aligned segment.
    pub frames_per_segment: [usize; 2],
    /// Inclusive `[min, max]` unaligned frames before each segment.
    pub gap_frames: [usize; 2],
    pub dim: usize,
    /// Distance between the two class means of a phone, in noise standard deviations.
    pub separation: PerPhone,
    /// Norm of each phone center.
    pub phone_spread: f64,
    /// Probability that an instance of the phone is mispronounced.
    pub incorrect_prior: PerPhone,
    pub seed: u64,
    pub kind: SynthKind,
    pub senones_per_phone: usize,
    pub asr_sharpness: f64,
    pub asr_correctness_weight: f64,
    /// When set, the first this-many speakers are declared dev and the rest eval.
    pub dev_speakers: Option<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 10,
            utterances_per_speaker: 20,
            segments_per_utterance: 30,
            n_phones: 10,
            frames_per_segment: [3, 8],
            gap_frames: [0, 2],
            dim: 16,
            separation: PerPhone::All(6.0),
            phone_spread: 4.0,
            incorrect_prior: PerPhone::All(0.5),
            seed: 0,
            kind: SynthKind::Activations,
            senones_per_phone: 3,
            asr_sharpness: 2.0,
            asr_correctness_weight: 1.0,
            dev_speakers: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_speakers == 0 || self.utterances_per_speaker == 0 || self.n_phones == 0 || self.dim == 0 {
            return bad("speakers, utterances, phones and dim must be >= 1");
        }
        if self.frames_per_segment[0] == 0 || self.frames_per_segment[0] > self.frames_per_segment[1] {
            return bad("frames_per_segment must be [min, max] with 1 <= min <= max");
        }
        if self.gap_frames[0] > self.gap_frames[1] {
            return bad("gap_frames must be [min, max] with min <= max");
        }
        if self.senones_per_phone == 0 {
            return bad("senones_per_phone must be >= 1");
        }
        if let Some(d) = self.dev_speakers {
            if d == 0 || d >= self.n_speakers {
                return bad("dev_speakers must leave at least one speaker on each side");
            }
        }
        self.separation.check(self.n_phones, "separation", |v| v >= 0.0 && v.is_finite())?;
        self.incorrect_prior
            .check(self.n_phones, "incorrect_prior", |v| (0.0..=1.0).contains(&v))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Manifest paths written by [`generate`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SynthOutput {
    pub activations: Option<PathBuf>,
    pub posteriors: Option<PathBuf>,
}

/// In-memory corpora for a spec; `posteriors` is set unless the kind is activations only.
#[derive(Debug, Clone)]
pub struct SynthCorpora {
    pub activations: Corpus,
    pub posteriors: Option<Corpus>,
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormal basis of the span of `vectors` (Gram-Schmidt).
fn orthonormal(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for b in &basis {
            let c = dot(&w, b);
            w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let n = norm(&w);
        if n > 1e-9 {
            basis.push(w.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn remove_components(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

/// Builds the corpora in memory. The RNG stream is consumed sequentially,
/// so the result depends only on the spec.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthCorpora> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let n_phones = spec.n_phones;

    let unit_centers: Vec<Vec<f64>> = (0..n_phones).map(|_| unit(&mut rng, dim)).collect();
    let centers: Vec<Vec<f64>> = unit_centers
        .iter()
        .map(|c| c.iter().map(|x| x * spec.phone_spread).collect())
        .collect();
    let all_centers = orthonormal(&unit_centers);
    let directions: Vec<Vec<f64>> = (0..n_phones)
        .map(|p| {
            // Orthogonal to every center when there is room, else to the own center.
            let basis = if all_centers.len() < dim {
                all_centers.clone()
            } else {
                orthonormal(&[unit_centers[p].clone()])
            };
            loop {
                let mut u = unit(&mut rng, dim);
                remove_components(&mut u, &basis);
                let n = norm(&u);
                if n > 1e-6 {
                    return u.into_iter().map(|x| x / n).collect();
                }
            }
        })
        .collect();
    let n_senones = n_phones * spec.senones_per_phone;
    let jitter: Vec<f64> = (0..n_senones).map(|_| rng.random_range(-0.5..0.5)).collect();

    let phones = PhoneSet::new((0..n_phones).map(|p| format!("P{p:02}")))?;
    let senone_map = SenonePhoneMap::new((0..n_senones).map(|s| s / spec.senones_per_phone).collect(), &phones)?;

    let mut act_utts = Vec::new();
    let mut post_utts = Vec::new();
    let want_post = spec.kind != SynthKind::Activations;
    for s in 0..spec.n_speakers {
        let speaker = format!("spk{s:03}");
        for u in 0..spec.utterances_per_speaker {
            let id = format!("{speaker}_utt{u:03}");
            let mut segments = Vec::with_capacity(spec.segments_per_utterance);
            let mut labels = Vec::with_capacity(spec.segments_per_utterance);
            let mut rows: Vec<f64> = Vec::new();
            let mut frame = 0usize;
            let noise_frame = |rng: &mut ChaCha8Rng, mean: Option<&[f64]>, rows: &mut Vec<f64>| {
                for d in 0..dim {
                    let z: f64 = StandardNormal.sample(rng);
                    rows.push(mean.map_or(0.0, |m| m[d]) + z);
                }
            };
            for _ in 0..spec.segments_per_utterance {
                let gap = rng.random_range(spec.gap_frames[0]..=spec.gap_frames[1]);
                for _ in 0..gap {
                    noise_frame(&mut rng, None, &mut rows);
                }
                frame += gap;
                let phone = rng.random_range(0..n_phones);
                let duration = rng.random_range(spec.frames_per_segment[0]..=spec.frames_per_segment[1]);
                let label = if rng.random::<f64>() < spec.incorrect_prior.get(phone) {
                    Label::Incorrect
                } else {
                    Label::Correct
                };
                let half = spec.separation.get(phone) / 2.0;
                let sign = if label.is_correct() { 1.0 } else { -1.0 };
                let mean: Vec<f64> = centers[phone]
                    .iter()
                    .zip(&directions[phone])
                    .map(|(c, u)| c + sign * half * u)
                    .collect();
                for _ in 0..duration {
                    noise_frame(&mut rng, Some(&mean), &mut rows);
                }
                segments.push(Segment {
                    phone,
                    start: frame,
                    duration,
                });
                labels.push(label);
                frame += duration;
            }
            let tail = rng.random_range(spec.gap_frames[0]..=spec.gap_frames[1]);
            for _ in 0..tail {
                noise_frame(&mut rng, None, &mut rows);
            }
            frame += tail;

            let alignment = Alignment::new(segments)?;
            if want_post {
                let mut post = Vec::with_capacity(frame * n_senones);
                let mut logits = vec![0.0; n_senones];
                for x in rows.chunks_exact(dim) {
                    for (sen, l) in logits.iter_mut().enumerate() {
                        let q = sen / spec.senones_per_phone;
                        let proj = dot(x, &unit_centers[q]) + spec.asr_correctness_weight * dot(x, &directions[q]);
                        *l = spec.asr_sharpness * proj + jitter[sen];
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                    post.extend(logits.iter().map(|l| ((l - max).exp() / z) as f32));
                }
                post_utts.push(Utterance {
                    id: id.clone(),
                    speaker: speaker.clone(),
                    frames: Arc::new(FrameMatrix::new(MatrixKind::Posteriors, frame, n_senones, post)?),
                    alignment: alignment.clone(),
                    labels: labels.clone(),
                });
            }
            act_utts.push(Utterance {
                id,
                speaker: speaker.clone(),
                frames: Arc::new(FrameMatrix::new(
                    MatrixKind::Activations,
                    frame,
                    dim,
                    rows.into_iter().map(|v| v as f32).collect(),
                )?),
                alignment,
                labels,
            });
        }
    }

    let (dev_speakers, eval_speakers) = match spec.dev_speakers {
        Some(d) => {
            let all: Vec<String> = (0..spec.n_speakers).map(|s| format!("spk{s:03}")).collect();
            (Some(all[..d].to_vec()), Some(all[d..].to_vec()))
        }
        None => (None, None),
    };
    let activations = Corpus {
        kind: MatrixKind::Activations,
        phones: phones.clone(),
        senone_map: None,
        utterances: act_utts,
        dev_speakers: dev_speakers.clone(),
        eval_speakers: eval_speakers.clone(),
    };
    let posteriors = want_post.then_some(Corpus {
        kind: MatrixKind::Posteriors,
        phones,
        senone_map: Some(senone_map),
        utterances: post_utts,
        dev_speakers,
        eval_speakers,
    });
    Ok(SynthCorpora {
        activations,
        posteriors,
    })
}

/// Writes the corpora under `out_dir`. A single-kind spec writes its
/// manifest directly in `out_dir`; `both` uses `activations/` and
/// `posteriors/` subdirectories.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput> {
    let corpora = synthesize(spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = SynthOutput::default();
    match spec.kind {
        SynthKind::Activations => out.activations = Some(corpora.activations.write(out_dir)?),
        SynthKind::Posteriors => out.posteriors = Some(corpora.posteriors.expect("posteriors").write(out_dir)?),
        SynthKind::Both => {
            out.activations = Some(corpora.activations.write(&out_dir.join("activations"))?);
            out.posteriors = Some(corpora.posteriors.expect("posteriors").write(&out_dir.join("posteriors"))?);
        }
    }
    Ok(out)
}
