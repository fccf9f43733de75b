use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::matrix::{read_matrix, read_matrix_header, Matrix};
use crate::alignment::{
    build_aligned_pair, detect_pauses, insert_pause_tokens, AlignOptions, AlignedPair, FrameStream, HashEmbedder,
    Label, PrecomputedEmbedder, TextEmbedder, TokenKind, TokenSource, Tokenizer, Transcript, Word,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn recontext(path: &Path, e: Error) -> Error {
    match e {
        Error::Contract(m) => Error::format(path.display().to_string(), m),
        other => other,
    }
}

/// On-disk transcript: subject metadata plus timestamped words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptFile {
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmse: Option<f64>,
    pub words: Vec<Word>,
}

impl From<&Transcript> for TranscriptFile {
    fn from(t: &Transcript) -> Self {
        TranscriptFile {
            subject_id: t.subject_id.clone(),
            label: t.label,
            mmse: t.mmse,
            words: t.words.clone(),
        }
    }
}

/// Reads and validates a transcript. Returns it with the number of word
/// ends clipped to remove overlaps.
pub fn read_transcript(path: &Path) -> Result<(Transcript, usize)> {
    let f: TranscriptFile = read_json(path)?;
    Transcript::new(f.subject_id, f.words, f.label, f.mmse).map_err(|e| recontext(path, e))
}

pub fn write_transcript(path: &Path, t: &Transcript) -> Result<()> {
    write_json(path, &TranscriptFile::from(t))
}

/// One entry of a transcript with pause marks interleaved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedEntry {
    #[serde(rename = "word")]
    pub text: String,
    pub kind: TokenKind,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTranscript {
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmse: Option<f64>,
    /// Pause counts by category: comma, period, ellipsis.
    pub pauses: [usize; 3],
    pub words: Vec<AnnotatedEntry>,
}

/// Words with pause marks inserted; a pause entry spans its silence.
pub fn annotate_pauses(t: &Transcript) -> Result<AnnotatedTranscript> {
    let events = detect_pauses(t);
    let mut pauses = [0; 3];
    for e in &events {
        pauses[e.category.index()] += 1;
    }
    let words = insert_pause_tokens(t, &events)?
        .into_iter()
        .map(|tok| {
            let (start, end) = match tok.source {
                TokenSource::Word(i) => (t.words[i].start, t.words[i].end),
                TokenSource::Pause(p) => (events[p].start, events[p].end),
            };
            AnnotatedEntry {
                text: tok.text,
                kind: tok.kind,
                start,
                end,
            }
        })
        .collect();
    Ok(AnnotatedTranscript {
        subject_id: t.subject_id.clone(),
        label: t.label,
        mmse: t.mmse,
        pauses,
        words,
    })
}

/// A pretokenized text token and the index of its transcript word.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub token: String,
    pub word: usize,
}

pub fn read_tokens(path: &Path) -> Result<Vec<TokenEntry>> {
    read_json(path)
}

pub fn write_tokens(path: &Path, tokens: &[TokenEntry]) -> Result<()> {
    write_json(path, &tokens)
}

/// Per-subject bundle description. Paths are relative to the manifest's
/// directory; `dim` and `frame_stride` are checked against every payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmse: Option<f64>,
    pub dim: usize,
    pub frame_stride: f64,
    pub transcript: String,
    pub frames: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_embeddings: Option<String>,
    /// Free-form producer details (generator parameters, encoder versions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    read_json(path)
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    write_json(path, m)
}

/// A validated bundle in memory.
#[derive(Clone, Debug)]
pub struct SampleBundle {
    pub manifest: Manifest,
    pub transcript: Transcript,
    pub frames: FrameStream,
    pub tokens: Option<Vec<TokenEntry>>,
    pub token_embeddings: Option<Tensor<f32>>,
    pub warnings: Vec<String>,
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// Checks a bundle without reading matrix payloads: headers against the
/// manifest, transcript metadata against the manifest, and token parentage
/// against the transcript. Returns non-fatal warnings.
pub fn validate_bundle(manifest_path: &Path) -> Result<Vec<String>> {
    let m = read_manifest(manifest_path)?;
    check_bundle(manifest_path, &m).map(|(_, w)| w)
}

type Checked = ((Transcript, Option<Vec<TokenEntry>>), Vec<String>);

fn check_bundle(manifest_path: &Path, m: &Manifest) -> Result<Checked> {
    let dir = manifest_dir(manifest_path);
    let origin = manifest_path.display().to_string();
    let bad = |msg: String| Error::format(origin.clone(), msg);
    if m.dim == 0 {
        return Err(bad("dim must be positive".into()));
    }
    let mut warnings = Vec::new();

    let fh = read_matrix_header(&dir.join(&m.frames))?;
    if fh.cols != m.dim {
        return Err(bad(format!("frames {} have {} columns, manifest dim is {}", m.frames, fh.cols, m.dim)));
    }
    if fh.stride.to_bits() != m.frame_stride.to_bits() {
        return Err(bad(format!(
            "frames {} have stride {}, manifest frame_stride is {}",
            m.frames, fh.stride, m.frame_stride
        )));
    }
    if fh.rows == 0 {
        return Err(bad(format!("frames {} hold no frames", m.frames)));
    }

    let (t, clipped) = read_transcript(&dir.join(&m.transcript))?;
    if clipped > 0 {
        warnings.push(format!("{}: clipped {clipped} overlapping word end(s)", m.transcript));
    }
    if t.subject_id != m.subject_id {
        return Err(bad(format!("transcript subject {:?} differs from {:?}", t.subject_id, m.subject_id)));
    }
    if t.label.is_some() && t.label != m.label {
        return Err(bad(format!("transcript label {:?} differs from manifest {:?}", t.label, m.label)));
    }
    if t.mmse.is_some() && t.mmse != m.mmse {
        return Err(bad(format!("transcript MMSE {:?} differs from manifest {:?}", t.mmse, m.mmse)));
    }
    let last = t.words.last().expect("validated transcripts are non-empty").end;
    let covered = fh.offset + fh.rows as f64 * fh.stride;
    if last > covered + fh.stride {
        warnings.push(format!("frames end at {covered:.3} s but the last word ends at {last:.3} s"));
    }

    let tokens = match (&m.tokens, &m.token_embeddings) {
        (None, None) => None,
        (Some(tp), Some(ep)) => {
            let tokens = read_tokens(&dir.join(tp))?;
            let eh = read_matrix_header(&dir.join(ep))?;
            if eh.cols != m.dim {
                return Err(bad(format!("token embeddings {ep} have {} columns, manifest dim is {}", eh.cols, m.dim)));
            }
            if eh.rows != tokens.len() {
                return Err(bad(format!("{} tokens but {} token-embedding rows", tokens.len(), eh.rows)));
            }
            check_parentage(&t, &tokens, &mut warnings).map_err(|e| bad(e.to_string()))?;
            Some(tokens)
        }
        _ => return Err(bad("tokens and token_embeddings must be given together".into())),
    };
    Ok(((t, tokens), warnings))
}

/// Parents must be non-decreasing, in range, and cover every word. A word
/// whose pieces do not concatenate back to it draws a warning.
fn check_parentage(t: &Transcript, tokens: &[TokenEntry], warnings: &mut Vec<String>) -> Result<()> {
    let mut pieces = vec![String::new(); t.words.len()];
    let mut prev = 0;
    for (i, e) in tokens.iter().enumerate() {
        if e.word >= t.words.len() {
            return Err(Error::contract(format!("token {i} names word {} of {}", e.word, t.words.len())));
        }
        if e.word < prev {
            return Err(Error::contract(format!("token {i} goes back to word {}", e.word)));
        }
        prev = e.word;
        pieces[e.word].push_str(e.token.trim_start_matches("##").trim_start_matches('\u{2581}'));
    }
    for (i, (p, w)) in pieces.iter().zip(&t.words).enumerate() {
        if p.is_empty() {
            return Err(Error::contract(format!("word {i} ({:?}) has no tokens", w.text)));
        }
        if !p.eq_ignore_ascii_case(w.text.trim()) {
            warnings.push(format!("tokens of word {i} spell {p:?}, not {:?}", w.text));
        }
    }
    Ok(())
}

/// Validates then loads a bundle.
pub fn load_bundle(manifest_path: &Path) -> Result<SampleBundle> {
    let manifest = read_manifest(manifest_path)?;
    let ((mut transcript, tokens), warnings) = check_bundle(manifest_path, &manifest)?;
    transcript.label = manifest.label;
    transcript.mmse = manifest.mmse;
    let dir = manifest_dir(manifest_path);
    let frames = read_matrix(&dir.join(&manifest.frames))?.into_frames()?;
    let token_embeddings = match &manifest.token_embeddings {
        Some(p) => Some(read_matrix(&dir.join(p))?.data),
        None => None,
    };
    Ok(SampleBundle {
        manifest,
        transcript,
        frames,
        tokens,
        token_embeddings,
        warnings,
    })
}

/// Writes a bundle's payloads and manifest into `dir` under fixed names.
pub fn write_bundle(
    dir: &Path,
    transcript: &Transcript,
    frames: &FrameStream,
    pretokenized: Option<(&[TokenEntry], &Tensor<f32>)>,
    provenance: Option<serde_json::Value>,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_transcript(&dir.join("transcript.json"), transcript)?;
    super::matrix::write_matrix(&dir.join("frames.cgnm"), &Matrix::from_frames(frames))?;
    let (tokens, token_embeddings) = match pretokenized {
        Some((toks, emb)) => {
            write_tokens(&dir.join("tokens.json"), toks)?;
            super::matrix::write_matrix(&dir.join("tokens.cgnm"), &Matrix::new(0.0, 0.0, emb.clone())?)?;
            (Some("tokens.json".to_string()), Some("tokens.cgnm".to_string()))
        }
        None => (None, None),
    };
    let m = Manifest {
        subject_id: transcript.subject_id.clone(),
        label: transcript.label,
        mmse: transcript.mmse,
        dim: frames.dim(),
        frame_stride: frames.stride,
        transcript: "transcript.json".into(),
        frames: "frames.cgnm".into(),
        tokens,
        token_embeddings,
        provenance,
    };
    write_manifest(&dir.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

/// Aligns a loaded bundle. Text rows come from the bundle's token
/// embeddings when present, otherwise from a hash embedder seeded with
/// `text_seed`.
pub fn align_bundle(b: &SampleBundle, opts: AlignOptions, text_seed: u64) -> Result<AlignedPair> {
    let dim = b.manifest.dim;
    let (tokenizer, embedder): (Tokenizer, Box<dyn TextEmbedder>) = match (&b.tokens, &b.token_embeddings) {
        (Some(tokens), Some(emb)) => {
            let (tokens, emb) = if opts.strip_asr_punctuation {
                drop_punctuation_tokens(&b.transcript, tokens, emb)?
            } else {
                (tokens.clone(), emb.clone())
            };
            (
                Tokenizer::Pretokenized(tokens.into_iter().map(|e| (e.token, e.word)).collect()),
                Box::new(PrecomputedEmbedder::new(emb, text_seed)?),
            )
        }
        _ => (Tokenizer::WholeWord, Box::new(HashEmbedder::new(dim, text_seed))),
    };
    build_aligned_pair(&b.transcript, &b.frames, embedder.as_ref(), &tokenizer, opts)
}

/// Removes the tokens (and embedding rows) of words that punctuation
/// stripping deletes, keeping rows aligned with the surviving tokens.
fn drop_punctuation_tokens(
    t: &Transcript,
    tokens: &[TokenEntry],
    emb: &Tensor<f32>,
) -> Result<(Vec<TokenEntry>, Tensor<f32>)> {
    let (_, map) = t.strip_punctuation()?;
    let mut kept = Vec::new();
    let mut rows = Vec::new();
    for (i, e) in tokens.iter().enumerate() {
        if map.get(e.word).copied().flatten().is_some() {
            kept.push(e.clone());
            rows.extend_from_slice(emb.row(i));
        }
    }
    let n = kept.len();
    Ok((kept, Tensor::new(vec![n, emb.cols()], rows)?))
}
