//! Corpus manifests, preprocessing, alignment ingestion and splits.

pub mod align;
pub mod preprocess;
pub mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::wav_info;
use crate::detector::SarcasmLabel;
use crate::error::{Error, Result};

pub use align::{align_from_grid, ingest_alignment, parse_textgrid, snap_durations, write_textgrid, AlignedUtterance, Alignment, Interval};
pub use preprocess::{expand_template, preprocess, separate_vocals, PreprocessConfig, PreprocessInfo, SeparatorConfig};
pub use split::{split_dataset, SplitConfig};

pub const MANIFEST_SCHEMA_VERSION: &str = "sarc-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageTag {
    Pretrain,
    Conversational,
    Sarcastic,
}

impl FromStr for StageTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(StageTag::Pretrain),
            "conversational" => Ok(StageTag::Conversational),
            "sarcastic" => Ok(StageTag::Sarcastic),
            other => Err(Error::parse("stage tag", format!("unknown stage tag `{other}`"))),
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageTag::Pretrain => "pretrain",
            StageTag::Conversational => "conversational",
            StageTag::Sarcastic => "sarcastic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub schema_version: String,
    pub id: String,
    pub audio_path: PathBuf,
    pub transcript: String,
    /// Phoneme symbols; `None` while alignment is pending.
    #[serde(default)]
    pub phonemes: Option<Vec<String>>,
    /// Frames per phoneme, when aligned.
    #[serde(default)]
    pub durations: Option<Vec<u32>>,
    #[serde(default)]
    pub sarcasm_label: Option<SarcasmLabel>,
    pub speaker_id: String,
    #[serde(default)]
    pub split: Split,
    pub stage_tag: StageTag,
    pub duration_secs: f64,
    /// Conversational context, kept verbatim and not used by any model.
    #[serde(default)]
    pub context: Option<Vec<String>>,
    /// SHA-256 of the original audio.
    #[serde(default)]
    pub source_checksum: Option<String>,
    /// SHA-256 of the preprocessed audio at `audio_path`.
    #[serde(default)]
    pub checksum: Option<String>,
    #[serde(default)]
    pub preprocess: Option<PreprocessInfo>,
}

impl UtteranceRecord {
    pub fn new(id: impl Into<String>, audio_path: PathBuf, transcript: impl Into<String>, speaker_id: impl Into<String>, stage_tag: StageTag, duration_secs: f64) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION.into(),
            id: id.into(),
            audio_path,
            transcript: transcript.into(),
            phonemes: None,
            durations: None,
            sarcasm_label: None,
            speaker_id: speaker_id.into(),
            split: Split::Train,
            stage_tag,
            duration_secs,
            context: None,
            source_checksum: None,
            checksum: None,
            preprocess: None,
        }
    }
}

/// Items skipped while building a manifest, with reasons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub excluded: Vec<Exclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<UtteranceRecord>,
    pub stage_tag: StageTag,
}

impl CorpusManifest {
    pub fn total_duration_hours(&self) -> f64 {
        self.records.iter().map(|r| r.duration_secs).sum::<f64>() / 3600.0
    }

    /// Record counts per label (`None` = unlabelled).
    pub fn label_counts(&self) -> BTreeMap<Option<u8>, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.sarcasm_label.map(u8::from)).or_insert(0) += 1;
        }
        m
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Checks id uniqueness, per-stage label requirements and schema tags.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::NoRecords);
        }
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate record id `{}`", r.id)));
            }
            if r.schema_version != MANIFEST_SCHEMA_VERSION {
                return Err(Error::InvalidInput(format!(
                    "record `{}` has schema `{}`, expected `{MANIFEST_SCHEMA_VERSION}`",
                    r.id, r.schema_version
                )));
            }
            if r.stage_tag != self.stage_tag {
                return Err(Error::InvalidInput(format!(
                    "record `{}` tagged {} in a {} manifest",
                    r.id, r.stage_tag, self.stage_tag
                )));
            }
            if self.stage_tag == StageTag::Sarcastic && r.sarcasm_label.is_none() {
                return Err(Error::InvalidInput(format!("sarcastic-stage record `{}` lacks a label", r.id)));
            }
            if let (Some(p), Some(d)) = (&r.phonemes, &r.durations) {
                if p.len() != d.len() {
                    return Err(Error::InvalidInput(format!(
                        "record `{}` has {} phonemes but {} durations",
                        r.id,
                        p.len(),
                        d.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes JSON Lines atomically, records sorted by id.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut records: Vec<&UtteranceRecord> = self.records.iter().collect();
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: UtteranceRecord = serde_json::from_str(line)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))?;
            records.push(r);
        }
        let stage_tag = records.first().map(|r| r.stage_tag).ok_or(Error::NoRecords)?;
        let m = Self { records, stage_tag };
        m.validate()?;
        Ok(m)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Hex SHA-256 of a file's bytes.
pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Scans `<root>/<speaker>/<id>.wav` + `<id>.txt` (+ optional `<id>.label`
/// holding `0|1` and `<id>.context` holding context lines). Unpaired or
/// unreadable items go to the exclusion report.
pub fn build_manifest(root: &Path, stage_tag: StageTag) -> Result<(CorpusManifest, ExclusionReport)> {
    let mut report = ExclusionReport::default();
    let mut records: BTreeMap<String, UtteranceRecord> = BTreeMap::new();
    let mut speakers: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    speakers.sort();
    for dir in speakers {
        let speaker = dir.file_name().expect("dir entry").to_string_lossy().into_owned();
        let mut stems: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            let (Some(stem), Some(ext)) = (p.file_stem(), p.extension()) else {
                continue;
            };
            let slot = stems.entry(stem.to_string_lossy().into_owned()).or_default();
            match ext.to_string_lossy().as_ref() {
                "wav" => slot.0 = Some(p.clone()),
                "txt" => slot.1 = Some(p.clone()),
                _ => {}
            }
        }
        for (id, pair) in stems {
            let (wav, txt) = match pair {
                (Some(w), Some(t)) => (w, t),
                (Some(w), None) => {
                    report.excluded.push(Exclusion { path: w, reason: "audio without transcript".into() });
                    continue;
                }
                (None, Some(t)) => {
                    report.excluded.push(Exclusion { path: t, reason: "transcript without audio".into() });
                    continue;
                }
                (None, None) => continue,
            };
            if records.contains_key(&id) {
                report.excluded.push(Exclusion { path: wav, reason: format!("duplicate id `{id}`") });
                continue;
            }
            let (rate, frames) = match wav_info(&wav) {
                Ok(v) => v,
                Err(e) => {
                    report.excluded.push(Exclusion { path: wav, reason: format!("unreadable audio: {e}") });
                    continue;
                }
            };
            let transcript = fs::read_to_string(&txt)?.trim().to_string();
            if transcript.is_empty() {
                report.excluded.push(Exclusion { path: txt, reason: "empty transcript".into() });
                continue;
            }
            let label_path = dir.join(format!("{id}.label"));
            let label = if label_path.exists() {
                match fs::read_to_string(&label_path)?.trim().parse::<SarcasmLabel>() {
                    Ok(l) => Some(l),
                    Err(e) => {
                        report.excluded.push(Exclusion { path: label_path, reason: e.to_string() });
                        continue;
                    }
                }
            } else {
                None
            };
            if stage_tag == StageTag::Sarcastic && label.is_none() {
                report.excluded.push(Exclusion { path: wav, reason: "sarcastic stage requires a label".into() });
                continue;
            }
            let context_path = dir.join(format!("{id}.context"));
            let context = if context_path.exists() {
                Some(fs::read_to_string(&context_path)?.lines().map(str::to_string).collect())
            } else {
                None
            };
            let mut rec = UtteranceRecord::new(&id, wav, transcript, &speaker, stage_tag, frames as f64 / rate as f64);
            rec.sarcasm_label = label;
            rec.context = context;
            records.insert(id, rec);
        }
    }
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok((
        CorpusManifest {
            records: records.into_values().collect(),
            stage_tag,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Waveform;

    fn write_item(dir: &Path, id: &str, text: Option<&str>, label: Option<&str>, secs: f32) {
        fs::create_dir_all(dir).unwrap();
        let n = (secs * 22050.0) as usize;
        Waveform::new((0..n).map(|i| (i as f32 * 0.05).sin() * 0.3).collect(), 22050)
            .unwrap()
            .write_wav(dir.join(format!("{id}.wav")))
            .unwrap();
        if let Some(t) = text {
            fs::write(dir.join(format!("{id}.txt")), t).unwrap();
        }
        if let Some(l) = label {
            fs::write(dir.join(format!("{id}.label")), l).unwrap();
        }
    }

    #[test]
    fn builds_sorted_manifest_with_exclusions() {
        let root = tempfile::tempdir().unwrap();
        write_item(&root.path().join("spk2"), "b", Some("yeah right"), Some("1"), 0.5);
        write_item(&root.path().join("spk1"), "a", Some("oh great"), Some("0"), 1.0);
        write_item(&root.path().join("spk1"), "c", None, Some("0"), 0.2);
        fs::write(root.path().join("spk1/d.txt"), "orphan").unwrap();
        let (m, report) = build_manifest(root.path(), StageTag::Sarcastic).unwrap();
        assert_eq!(m.records.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(report.excluded.len(), 2);
        assert!((m.total_duration_hours() * 3600.0 - 1.5).abs() < 1e-3);
        assert_eq!(m.label_counts()[&Some(1)], 1);
    }

    #[test]
    fn empty_directory_has_no_records() {
        let root = tempfile::tempdir().unwrap();
        assert!(matches!(build_manifest(root.path(), StageTag::Pretrain), Err(Error::NoRecords)));
    }

    #[test]
    fn rerun_is_byte_identical_and_round_trips() {
        let root = tempfile::tempdir().unwrap();
        for i in 0..5 {
            write_item(&root.path().join(format!("s{}", i % 2)), &format!("u{i}"), Some("hello there"), None, 0.3);
        }
        let out = tempfile::tempdir().unwrap();
        let p1 = out.path().join("m1.jsonl");
        let p2 = out.path().join("m2.jsonl");
        build_manifest(root.path(), StageTag::Pretrain).unwrap().0.save(&p1).unwrap();
        build_manifest(root.path(), StageTag::Pretrain).unwrap().0.save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        let loaded = CorpusManifest::load(&p1).unwrap();
        assert_eq!(loaded.records.len(), 5);
        assert!(fs::read_to_string(&p1).unwrap().lines().all(|l| l.contains(MANIFEST_SCHEMA_VERSION)));
    }
}
