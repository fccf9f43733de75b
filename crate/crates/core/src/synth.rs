//! Synthetic cohorts with planted lexical and pause signals.
//!
//! Each subject speaks `min_words..=max_words` words from a shared
//! vocabulary. The first half of the vocabulary leans CH, the second half
//! AD: with probability `lexical_signal` a word is drawn from the subject's
//! own half, otherwise uniformly. Inter-word gaps are short except for a
//! Poisson number of comma, period and ellipsis pauses per transcript,
//! with class-specific rates. Frames inside a word scatter around that
//! word's identity vector plus a class offset scaled by `lexical_signal`;
//! silent frames scatter around a shared silence vector.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alignment::{
    build_aligned_pair, AlignedPair, FrameStream, HashEmbedder, Label, PauseCategory, Tokenizer, Transcript, Word,
    DEFAULT_STRIDE,
};
use crate::error::{Error, Result};
use crate::io::{write_bundle, write_dataset_index, AlignSettings, DatasetIndex, MANIFEST_FILE};
use crate::rng::{indexed_rng, stream_rng};
use crate::tensor::Tensor;

/// Expected pauses per transcript by category.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauseRates {
    pub comma: f64,
    pub period: f64,
    pub ellipsis: f64,
}

impl PauseRates {
    pub fn get(&self, c: PauseCategory) -> f64 {
        match c {
            PauseCategory::Comma => self.comma,
            PauseCategory::Period => self.period,
            PauseCategory::Ellipsis => self.ellipsis,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub rates_ch: PauseRates,
    pub rates_ad: PauseRates,
    /// Strength of the class signal in word choice and frame features, in [0, 1].
    pub lexical_signal: f64,
    /// Class offset of word frames at full lexical signal.
    pub class_offset: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub noise_sd: f64,
    pub frame_stride: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::planted(0)
    }
}

impl SynthSpec {
    /// Lexical signal 0.8 and AD ellipsis rate three times CH.
    pub fn planted(seed: u64) -> Self {
        SynthSpec {
            n_per_class: 100,
            vocab_size: 48,
            dim: 64,
            rates_ch: PauseRates {
                comma: 1.2,
                period: 0.8,
                ellipsis: 1.0,
            },
            rates_ad: PauseRates {
                comma: 1.0,
                period: 1.2,
                ellipsis: 3.0,
            },
            lexical_signal: 0.8,
            class_offset: 0.5,
            min_words: 12,
            max_words: 20,
            noise_sd: 0.5,
            frame_stride: DEFAULT_STRIDE,
            seed,
        }
    }

    /// Planted pause rates, no lexical signal.
    pub fn pause_only(seed: u64) -> Self {
        SynthSpec {
            lexical_signal: 0.0,
            ..SynthSpec::planted(seed)
        }
    }

    /// No lexical signal and CH pause rates for both classes.
    pub fn zero_signal(seed: u64) -> Self {
        let s = SynthSpec::pause_only(seed);
        SynthSpec {
            rates_ad: s.rates_ch,
            ..s
        }
    }

    pub fn rates(&self, label: Label) -> PauseRates {
        match label {
            Label::HealthyControl => self.rates_ch,
            Label::Alzheimers => self.rates_ad,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.rates_ch, self.rates_ad];
        if rates
            .iter()
            .flat_map(|r| [r.comma, r.period, r.ellipsis])
            .any(|v| !(v >= 0.0 && v.is_finite()))
        {
            return Err(Error::contract("pause rates must be finite and non-negative"));
        }
        if self.dim < 2 {
            return Err(Error::contract(format!("dim {} must be at least 2", self.dim)));
        }
        if self.vocab_size < 2 {
            return Err(Error::contract("vocabulary needs at least 2 words"));
        }
        if !(0.0..=1.0).contains(&self.lexical_signal) {
            return Err(Error::contract(format!("lexical_signal {} outside [0, 1]", self.lexical_signal)));
        }
        if self.n_per_class == 0 {
            return Err(Error::contract("n_per_class must be positive"));
        }
        if self.min_words < 2 || self.min_words > self.max_words {
            return Err(Error::contract("need 2 <= min_words <= max_words"));
        }
        if !(self.noise_sd >= 0.0 && self.class_offset.is_finite() && self.frame_stride > 0.0) {
            return Err(Error::contract("noise_sd, class_offset and frame_stride must be valid"));
        }
        Ok(())
    }
}

/// Generation record kept with each subject for oracle checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: Label,
    /// Planted pause counts: comma, period, ellipsis.
    pub pauses: [usize; 3],
    /// Words drawn from the class-leaning half by the signal draw.
    pub signal_words: usize,
    pub duration: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticSubject {
    pub transcript: Transcript,
    pub frames: FrameStream,
    pub truth: GroundTruth,
}

const GAP_SHORT: (f64, f64) = (0.05, 0.4);
const GAP_COMMA: (f64, f64) = (0.55, 0.95);
const GAP_PERIOD: (f64, f64) = (1.05, 1.45);
const GAP_ELLIPSIS: (f64, f64) = (1.6, 2.4);

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda == 0.0 {
        0
    } else {
        Poisson::new(lambda).expect("positive rate").sample(rng) as usize
    }
}

/// Subjects alternate CH, AD, CH, ... with ids `S000`, `S001`, ...
pub fn generate_synthetic_cohort(spec: &SynthSpec) -> Result<Vec<SyntheticSubject>> {
    spec.validate()?;
    let d = spec.dim;
    let mut vrng = stream_rng(spec.seed, "synth-vocab");
    let vocab: Vec<Vec<f64>> = (0..spec.vocab_size).map(|_| normal_vec(&mut vrng, d)).collect();
    let silence = normal_vec(&mut vrng, d);
    let direction: Vec<f64> = {
        let v = normal_vec(&mut vrng, d);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n * (d as f64).sqrt()).collect()
    };
    let half = spec.vocab_size / 2;
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::contract(e.to_string()))?;

    (0..2 * spec.n_per_class)
        .map(|i| {
            let label = if i % 2 == 0 { Label::HealthyControl } else { Label::Alzheimers };
            let mut rng = indexed_rng(spec.seed, "synth-subject", i as u64);
            let n_words = rng.random_range(spec.min_words..=spec.max_words);

            let own = match label {
                Label::HealthyControl => 0..half,
                Label::Alzheimers => half..spec.vocab_size,
            };
            let mut signal_words = 0;
            let ids: Vec<usize> = (0..n_words)
                .map(|_| {
                    if rng.random::<f64>() < spec.lexical_signal {
                        signal_words += 1;
                        rng.random_range(own.clone())
                    } else {
                        rng.random_range(0..spec.vocab_size)
                    }
                })
                .collect();

            let rates = spec.rates(label);
            let mut gaps: Vec<usize> = (0..n_words - 1).collect();
            gaps.shuffle(&mut rng);
            let mut kinds = vec![None; n_words - 1];
            let mut pauses = [0usize; 3];
            let mut free = gaps.into_iter();
            for c in [PauseCategory::Ellipsis, PauseCategory::Period, PauseCategory::Comma] {
                for _ in 0..poisson(&mut rng, rates.get(c)) {
                    let Some(g) = free.next() else { break };
                    kinds[g] = Some(c);
                    pauses[c.index()] += 1;
                }
            }

            let mut words = Vec::with_capacity(n_words);
            let mut t = rng.random_range(0.1..0.3);
            for (k, &w) in ids.iter().enumerate() {
                let len = rng.random_range(0.25..0.6);
                words.push(Word::new(format!("w{w:02}"), t, t + len));
                t += len;
                if k + 1 < n_words {
                    let (lo, hi) = match kinds[k] {
                        None => GAP_SHORT,
                        Some(PauseCategory::Comma) => GAP_COMMA,
                        Some(PauseCategory::Period) => GAP_PERIOD,
                        Some(PauseCategory::Ellipsis) => GAP_ELLIPSIS,
                    };
                    t += rng.random_range(lo..hi);
                }
            }
            let duration = t;
            let n_frames = ((duration + 0.3) / spec.frame_stride).ceil() as usize;

            let sign = if label == Label::Alzheimers { 1.0 } else { -1.0 };
            let shift = sign * spec.lexical_signal * spec.class_offset;
            let mut data = Vec::with_capacity(n_frames * d);
            let mut wi = 0;
            for j in 0..n_frames {
                let tj = j as f64 * spec.frame_stride;
                while wi < words.len() && words[wi].end <= tj {
                    wi += 1;
                }
                let inside = wi < words.len() && words[wi].start <= tj;
                for c in 0..d {
                    let mean = if inside {
                        vocab[ids[wi]][c] + shift * direction[c]
                    } else {
                        silence[c]
                    };
                    data.push((mean + noise.sample(&mut rng)) as f32);
                }
            }
            let frames = FrameStream::new(spec.frame_stride, 0.0, Tensor::new(vec![n_frames, d], data)?)?;
            let mmse = match label {
                Label::HealthyControl => rng.random_range(26..=30),
                Label::Alzheimers => rng.random_range(12..=24),
            } as f64;
            let (transcript, _) = Transcript::new(format!("S{i:03}"), words, Some(label), Some(mmse))?;
            Ok(SyntheticSubject {
                transcript,
                frames,
                truth: GroundTruth {
                    label,
                    pauses,
                    signal_words,
                    duration,
                },
            })
        })
        .collect()
}

/// Aligns a cohort in memory, as the `align` command would after writing it.
pub fn align_cohort(subjects: &[SyntheticSubject], settings: AlignSettings) -> Result<Vec<AlignedPair>> {
    subjects
        .iter()
        .map(|s| {
            let e = HashEmbedder::new(s.frames.dim(), settings.text_seed);
            build_aligned_pair(&s.transcript, &s.frames, &e, &Tokenizer::WholeWord, settings.options)
        })
        .collect()
}

/// Generates a cohort and writes it as a dataset directory: `dataset.json`
/// plus one bundle directory per subject. The generator settings go into the dataset
/// index and each subject's ground truth into its manifest.
pub fn write_cohort(dir: &Path, spec: &SynthSpec) -> Result<Vec<SyntheticSubject>> {
    let subjects = generate_synthetic_cohort(spec)?;
    let mut listed = Vec::with_capacity(subjects.len());
    for s in &subjects {
        let id = &s.transcript.subject_id;
        let provenance = serde_json::json!({ "generator": "synthetic", "truth": s.truth });
        write_bundle(&dir.join(id), &s.transcript, &s.frames, None, Some(provenance))?;
        listed.push(format!("{id}/{MANIFEST_FILE}"));
    }
    write_dataset_index(
        dir,
        &DatasetIndex {
            subjects: listed,
            provenance: Some(serde_json::json!({ "generator": "synthetic", "spec": spec })),
        },
    )?;
    Ok(subjects)
}
