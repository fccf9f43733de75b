//! Word-level audio/text alignment with pause tokens.
//!
//! Frame features are mean-pooled over each word's `[start, end)` interval;
//! inter-word silences of at least half a second become pause tokens whose
//! audio is the mean of the silent frames. Subword tokens of one word share
//! that word's audio row. The result is an [`AlignedPair`]: token list,
//! audio matrix and text matrix of identical length.

mod embed;
mod frames;
mod pauses;
mod tokens;
mod transcript;

pub use embed::{HashEmbedder, PrecomputedEmbedder, TextEmbedder};
pub use frames::{pool_word_embedding, FrameStream, DEFAULT_STRIDE};
pub use pauses::{
    classify_pause, detect_pauses, gap_seconds, pause_embedding, PauseCategory, PauseEvent,
    ELLIPSIS_FROM, MIN_PAUSE, PERIOD_FROM,
};
pub use tokens::{expand_subwords, insert_pause_tokens, Token, TokenKind, TokenSource, Tokenizer, Vocab};
pub use transcript::{Label, Transcript, Word};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Insert pause tokens for inter-word silences.
    pub insert_pauses: bool,
    /// Remove punctuation emitted by the ASR before pause insertion, so
    /// pause marks are the only punctuation in the sequence.
    pub strip_asr_punctuation: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            insert_pauses: true,
            strip_asr_punctuation: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedToken {
    pub text: String,
    pub kind: TokenKind,
    /// Parent word in the (cleaned) transcript; `None` for pause tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<usize>,
}

/// Two equal-length token sequences for one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPair {
    pub subject_id: String,
    pub label: Option<Label>,
    pub mmse: Option<f64>,
    pub tokens: Vec<AlignedToken>,
    /// `[L × d]` pooled audio rows.
    pub audio: Tensor<f32>,
    /// `[L × d]` text embeddings.
    pub text: Tensor<f32>,
}

impl AlignedPair {
    pub fn new(
        subject_id: impl Into<String>,
        label: Option<Label>,
        mmse: Option<f64>,
        tokens: Vec<AlignedToken>,
        audio: Tensor<f32>,
        text: Tensor<f32>,
    ) -> Result<Self> {
        let pair = AlignedPair {
            subject_id: subject_id.into(),
            label,
            mmse,
            tokens,
            audio,
            text,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.audio.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.tokens.len();
        let (ar, tr) = (self.audio.shape()[0], self.text.shape()[0]);
        if ar != l || tr != l {
            return Err(Error::contract(format!(
                "aligned pair {} has {l} tokens, {ar} audio rows, {tr} text rows",
                self.subject_id
            )));
        }
        if self.audio.cols() != self.text.cols() {
            return Err(Error::contract(format!(
                "aligned pair {}: audio d={} text d={}",
                self.subject_id,
                self.audio.cols(),
                self.text.cols()
            )));
        }
        Ok(())
    }

    pub fn pause_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.kind == TokenKind::Pause).count()
    }
}

/// Builds the aligned token sequences of one subject.
///
/// Order is the temporal interleaving of (sub)word tokens and pause tokens.
/// Word tokens take the pooled audio of their word; pause tokens take the
/// mean of their silent frames; text rows come from `embedder`.
pub fn build_aligned_pair(
    transcript: &Transcript,
    stream: &FrameStream,
    embedder: &dyn TextEmbedder,
    tokenizer: &Tokenizer,
    opts: AlignOptions,
) -> Result<AlignedPair> {
    if stream.dim() != embedder.dim() {
        return Err(Error::contract(format!(
            "audio frames have d={} but text embeddings have d={}",
            stream.dim(),
            embedder.dim()
        )));
    }
    if stream.is_empty() {
        return Err(Error::contract(format!(
            "subject {} has an empty frame stream",
            transcript.subject_id
        )));
    }

    let (clean, remapped);
    let (transcript, tokenizer) = if opts.strip_asr_punctuation {
        let (c, map) = transcript.strip_punctuation()?;
        clean = c;
        remapped = match tokenizer {
            Tokenizer::Pretokenized(list) => Tokenizer::Pretokenized(
                list.iter()
                    .filter_map(|(t, p)| {
                        map.get(*p).copied().flatten().map(|np| (t.clone(), np))
                    })
                    .collect(),
            ),
            other => other.clone(),
        };
        (&clean, &remapped)
    } else {
        (transcript, tokenizer)
    };

    let events = if opts.insert_pauses {
        detect_pauses(transcript)
    } else {
        Vec::new()
    };
    let tokens = expand_subwords(&insert_pause_tokens(transcript, &events)?, tokenizer)?;

    let word_rows: Vec<Vec<f32>> = transcript
        .words
        .iter()
        .map(|w| pool_word_embedding(stream, w.start, w.end))
        .collect::<Result<_>>()?;
    let pause_rows: Vec<Vec<f32>> = events
        .iter()
        .map(|e| pause_embedding(stream, e))
        .collect::<Result<_>>()?;

    let d = stream.dim();
    let mut audio = Vec::with_capacity(tokens.len() * d);
    let mut text = Vec::with_capacity(tokens.len() * d);
    let mut aligned = Vec::with_capacity(tokens.len());
    let mut ordinal = 0;
    for tok in &tokens {
        match tok.source {
            TokenSource::Word(i) => audio.extend_from_slice(&word_rows[i]),
            TokenSource::Pause(p) => audio.extend_from_slice(&pause_rows[p]),
        }
        let row = embedder.embed(tok, ordinal)?;
        if row.len() != d {
            return Err(Error::contract(format!(
                "text embedding of {:?} has d={}, expected {d}",
                tok.text,
                row.len()
            )));
        }
        text.extend_from_slice(&row);
        if tok.kind != TokenKind::Pause {
            ordinal += 1;
        }
        aligned.push(AlignedToken {
            text: tok.text.clone(),
            kind: tok.kind,
            word: match tok.source {
                TokenSource::Word(i) => Some(i),
                TokenSource::Pause(_) => None,
            },
        });
    }
    let l = aligned.len();
    AlignedPair::new(
        transcript.subject_id.clone(),
        transcript.label,
        transcript.mmse,
        aligned,
        Tensor::new(vec![l, d], audio)?,
        Tensor::new(vec![l, d], text)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(frames: usize, d: usize) -> FrameStream {
        let data = (0..frames * d).map(|i| ((i / d) as f32 * 0.1).sin() + (i % d) as f32).collect();
        FrameStream::new(0.02, 0.0, Tensor::new(vec![frames, d], data).unwrap()).unwrap()
    }

    #[test]
    fn two_words_one_comma() {
        let (t, _) = Transcript::new(
            "s",
            vec![Word::new("the", 0.1, 0.4), Word::new("boy", 1.1, 1.5)],
            Some(Label::HealthyControl),
            None,
        )
        .unwrap();
        let s = stream(100, 4);
        let e = HashEmbedder::new(4, 1);
        let p = build_aligned_pair(&t, &s, &e, &Tokenizer::WholeWord, AlignOptions::default()).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.tokens[1].text, ",");
        assert_eq!(p.audio.row(0), pool_word_embedding(&s, 0.1, 0.4).unwrap().as_slice());
        assert_eq!(p.audio.row(1), s.mean_over(0.4, 1.1).unwrap().as_slice());
        assert_eq!(p.audio.row(2), pool_word_embedding(&s, 1.1, 1.5).unwrap().as_slice());
        assert_eq!(p.text.row(1), e.vector(",").as_slice());
    }

    #[test]
    fn subword_siblings_share_audio_bitwise() {
        let (t, _) = Transcript::new("s", vec![Word::new("cookies", 0.0, 0.6)], None, None).unwrap();
        let s = stream(40, 3);
        let tk = Tokenizer::Vocabulary(Vocab::new(["cookie", "s"]));
        let p = build_aligned_pair(&t, &s, &HashEmbedder::new(3, 0), &tk, AlignOptions::default()).unwrap();
        assert_eq!(p.len(), 2);
        let a: Vec<u32> = p.audio.row(0).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = p.audio.row(1).iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_ne!(p.text.row(0), p.text.row(1));
    }

    #[test]
    fn no_pauses_no_splits_gives_word_count() {
        let words = (0..5).map(|i| Word::new(format!("w{i}"), i as f64 * 0.4, i as f64 * 0.4 + 0.3)).collect();
        let (t, _) = Transcript::new("s", words, None, None).unwrap();
        let p = build_aligned_pair(&t, &stream(200, 2), &HashEmbedder::new(2, 0), &Tokenizer::WholeWord, AlignOptions::default()).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p.pause_count(), 0);
    }

    #[test]
    fn pauses_can_be_disabled() {
        let (t, _) = Transcript::new(
            "s",
            vec![Word::new("a", 0.0, 0.2), Word::new("b", 2.0, 2.2)],
            None,
            None,
        )
        .unwrap();
        let s = stream(200, 2);
        let on = build_aligned_pair(&t, &s, &HashEmbedder::new(2, 0), &Tokenizer::WholeWord, AlignOptions::default()).unwrap();
        let off = build_aligned_pair(
            &t,
            &s,
            &HashEmbedder::new(2, 0),
            &Tokenizer::WholeWord,
            AlignOptions {
                insert_pauses: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(on.len(), 3);
        assert_eq!(off.len(), 2);
    }

    #[test]
    fn dimension_mismatch_names_both() {
        let (t, _) = Transcript::new("s", vec![Word::new("a", 0.0, 0.2)], None, None).unwrap();
        let err = build_aligned_pair(&t, &stream(20, 3), &HashEmbedder::new(5, 0), &Tokenizer::WholeWord, AlignOptions::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("d=3") && err.contains("d=5"), "{err}");
    }

    #[test]
    fn pretokenized_parents_follow_punctuation_stripping() {
        let (t, _) = Transcript::new(
            "s",
            vec![Word::new("well", 0.0, 0.2), Word::new("...", 0.25, 0.3), Word::new("jar", 0.35, 0.6)],
            None,
            None,
        )
        .unwrap();
        let tk = Tokenizer::Pretokenized(vec![("well".into(), 0), ("...".into(), 1), ("j".into(), 2), ("ar".into(), 2)]);
        let emb = HashEmbedder::new(2, 0);
        let p = build_aligned_pair(&t, &stream(50, 2), &emb, &tk, AlignOptions::default()).unwrap();
        let texts: Vec<_> = p.tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["well", "j", "ar"]);
        assert_eq!(p.tokens[2].word, Some(1));
    }
}
