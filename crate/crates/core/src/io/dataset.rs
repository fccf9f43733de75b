use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::files::{align_bundle, load_bundle, read_json, read_transcript, validate_bundle, write_json, SampleBundle};
use super::matrix::{read_matrix, write_matrix, Matrix};
use crate::alignment::{AlignOptions, AlignedPair, AlignedToken, Label, Transcript};
use crate::error::{Error, Result};

pub const DATASET_FILE: &str = "dataset.json";
pub const ALIGNED_FILE: &str = "aligned.json";

/// Index of a bundle directory: manifest paths relative to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub subjects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

pub fn read_dataset_index(dir: &Path) -> Result<DatasetIndex> {
    read_json(&dir.join(DATASET_FILE))
}

pub fn write_dataset_index(dir: &Path, index: &DatasetIndex) -> Result<()> {
    write_json(&dir.join(DATASET_FILE), index)
}

fn manifest_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let index = read_dataset_index(dir)?;
    if index.subjects.is_empty() {
        return Err(Error::format(dir.join(DATASET_FILE).display().to_string(), "dataset lists no subjects"));
    }
    Ok(index.subjects.iter().map(|s| dir.join(s)).collect())
}

/// Validates every bundle of a dataset, then loads them all. Nothing is
/// loaded if any manifest disagrees with its payloads.
pub fn load_dataset(dir: &Path) -> Result<Vec<SampleBundle>> {
    let paths = manifest_paths(dir)?;
    for p in &paths {
        validate_bundle(p)?;
    }
    let bundles = paths.iter().map(|p| load_bundle(p)).collect::<Result<Vec<_>>>()?;
    let mut ids: Vec<&str> = bundles.iter().map(|b| b.manifest.subject_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::format(dir.display().to_string(), format!("subject {} appears twice", w[0])));
    }
    Ok(bundles)
}

/// Transcripts of a dataset with labels taken from the manifests.
pub fn load_transcripts(dir: &Path) -> Result<Vec<Transcript>> {
    manifest_paths(dir)?
        .iter()
        .map(|p| {
            let m = super::files::read_manifest(p)?;
            let base = p.parent().unwrap_or(Path::new("."));
            let (mut t, _) = read_transcript(&base.join(&m.transcript))?;
            t.label = m.label;
            t.mmse = m.mmse;
            Ok(t)
        })
        .collect()
}

/// How an aligned directory was produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignSettings {
    pub options: AlignOptions,
    pub text_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AlignedRecord {
    subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mmse: Option<f64>,
    tokens: Vec<AlignedToken>,
    audio: String,
    text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AlignedIndex {
    settings: AlignSettings,
    subjects: Vec<AlignedRecord>,
}

/// Writes aligned pairs as an index plus two matrices per subject.
pub fn write_aligned(dir: &Path, pairs: &[AlignedPair], settings: AlignSettings) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut subjects = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let (audio, text) = (format!("{i:05}.audio.cgnm"), format!("{i:05}.text.cgnm"));
        write_matrix(&dir.join(&audio), &Matrix::new(0.0, 0.0, p.audio.clone())?)?;
        write_matrix(&dir.join(&text), &Matrix::new(0.0, 0.0, p.text.clone())?)?;
        subjects.push(AlignedRecord {
            subject_id: p.subject_id.clone(),
            label: p.label,
            mmse: p.mmse,
            tokens: p.tokens.clone(),
            audio,
            text,
        });
    }
    write_json(&dir.join(ALIGNED_FILE), &AlignedIndex { settings, subjects })
}

pub fn read_aligned(dir: &Path) -> Result<(Vec<AlignedPair>, AlignSettings)> {
    let index: AlignedIndex = read_json(&dir.join(ALIGNED_FILE))?;
    let pairs = index
        .subjects
        .into_iter()
        .map(|r| {
            let audio = read_matrix(&dir.join(&r.audio))?.data;
            let text = read_matrix(&dir.join(&r.text))?.data;
            AlignedPair::new(r.subject_id, r.label, r.mmse, r.tokens, audio, text)
                .map_err(|e| Error::format(dir.join(&r.audio).display().to_string(), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pairs, index.settings))
}

/// Aligned pairs from either an aligned directory (as written by
/// [`write_aligned`]) or a bundle dataset, which is aligned with
/// `settings`. A single manifest file is accepted as a one-subject dataset.
pub fn load_pairs(path: &Path, settings: AlignSettings) -> Result<Vec<AlignedPair>> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    if path.join(ALIGNED_FILE).is_file() {
        return read_aligned(path).map(|(p, _)| p);
    }
    let bundles = if path.is_file() {
        vec![load_bundle(path)?]
    } else if path.join(DATASET_FILE).is_file() {
        load_dataset(path)?
    } else {
        return Err(Error::format(
            path.display().to_string(),
            format!("expected {ALIGNED_FILE}, {DATASET_FILE} or a manifest"),
        ));
    };
    bundles
        .iter()
        .map(|b| align_bundle(b, settings.options, settings.text_seed))
        .collect()
}
