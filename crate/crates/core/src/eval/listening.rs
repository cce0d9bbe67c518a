//! Blinded listening-test bundles, rating records and their aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, CorpusManifest};
use crate::detector::SarcasmLabel;
use crate::error::{Error, Result};
use crate::synthesis::{Conditioning, Synthesizer, SynthesizerOptions, VocoderRegistry};

pub const BUNDLE_FILE: &str = "bundle.json";
pub const KEY_FILE: &str = "key.json";
pub const AUDIO_DIR: &str = "audio";
/// Peak level of exported stimuli.
pub const PEAK_TARGET: f32 = 0.95;

pub const QUESTION_NATURALNESS: &str = "naturalness";
pub const QUESTION_SARCASM: &str = "sarcasm";
pub const QUESTION_OVERALL: &str = "overall";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosItem {
    pub item_id: String,
    pub audio_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairItem {
    pub item_id: String,
    pub a: String,
    pub b: String,
    pub text: String,
}

/// The public half of a listening test. Contains no system names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListeningBundle {
    pub bundle_id: String,
    pub mos_question: Question,
    pub mos_scale: [String; 5],
    pub preference_questions: Vec<Question>,
    pub mos_items: Vec<MosItem>,
    pub pairs: Vec<PairItem>,
}

impl ListeningBundle {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(BUNDLE_FILE);
        serde_json::from_slice(&fs::read(&path)?).map_err(|e| Error::parse(path.display().to_string(), e))
    }

    pub fn audio_ids(&self) -> BTreeSet<&str> {
        self.mos_items.iter().map(|m| m.audio_id.as_str()).chain(self.pairs.iter().flat_map(|p| [p.a.as_str(), p.b.as_str()])).collect()
    }

    pub fn item_kind(&self, item_id: &str) -> Option<RatingKind> {
        if self.mos_items.iter().any(|m| m.item_id == item_id) {
            Some(RatingKind::Mos)
        } else if self.pairs.iter().any(|p| p.item_id == item_id) {
            Some(RatingKind::Preference)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioKey {
    pub utterance_id: String,
    pub system: String,
}

/// The private half: maps blinded ids back to systems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleKey {
    pub bundle_id: String,
    pub seed: u64,
    pub systems: Vec<String>,
    pub audio: BTreeMap<String, AudioKey>,
    /// Pair item id → (system heard as A, system heard as B).
    pub pairs: BTreeMap<String, (String, String)>,
}

impl BundleKey {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::parse(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    /// Same key with systems renamed `system-1`, `system-2`, ... for views
    /// that must stay blinded.
    pub fn anonymized(&self) -> Self {
        let alias: BTreeMap<&str, String> = self.systems.iter().enumerate().map(|(i, s)| (s.as_str(), format!("system-{}", i + 1))).collect();
        let rename = |s: &String| alias.get(s.as_str()).cloned().unwrap_or_else(|| s.clone());
        Self {
            bundle_id: self.bundle_id.clone(),
            seed: self.seed,
            systems: self.systems.iter().map(rename).collect(),
            audio: self
                .audio
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        AudioKey {
                            utterance_id: v.utterance_id.clone(),
                            system: rename(&v.system),
                        },
                    )
                })
                .collect(),
            pairs: self.pairs.iter().map(|(k, (a, b))| (k.clone(), (rename(a), rename(b)))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListeningExport {
    pub bundle_dir: PathBuf,
    pub key_path: PathBuf,
    pub bundle: ListeningBundle,
    pub key: BundleKey,
}

fn blind_id(rng: &mut ChaCha8Rng, prefix: &str, taken: &mut BTreeSet<String>) -> String {
    loop {
        let id = format!("{prefix}-{:012x}", rng.random::<u64>() & 0xffff_ffff_ffff);
        if taken.insert(id.clone()) {
            return id;
        }
    }
}

/// Seeded A/B orientation for `n` pairs: exactly ⌊n/2⌋ or ⌈n/2⌉ pairs keep
/// the canonical order, shuffled.
pub fn ab_orders(n: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut flips: Vec<bool> = (0..n).map(|i| i % 2 == 1).collect();
    if n % 2 == 1 && rng.random::<bool>() {
        flips[n - 1] = true;
    }
    flips.shuffle(rng);
    flips
}

fn default_questions() -> (Question, Vec<Question>) {
    (
        Question {
            id: QUESTION_NATURALNESS.into(),
            prompt: "How natural does this utterance sound?".into(),
        },
        vec![
            Question {
                id: QUESTION_SARCASM.into(),
                prompt: "Which version sounds more sarcastic?".into(),
            },
            Question {
                id: QUESTION_OVERALL.into(),
                prompt: "Which version do you prefer overall?".into(),
            },
        ],
    )
}

/// Synthesises `n_items` seeded test sentences with every system and writes
/// a blinded bundle to `out_dir/bundle` and the key to `out_dir/key.json`.
/// Conditioned systems use the label-bank entry of the sentence's label.
pub fn export_listening_bundle(
    test: &CorpusManifest,
    systems: &[(String, PathBuf)],
    n_items: usize,
    seed: u64,
    opts: &SynthesizerOptions,
    out_dir: &Path,
) -> Result<ListeningExport> {
    if systems.len() < 2 {
        return Err(Error::InvalidInput("a listening test needs at least two systems".into()));
    }
    if n_items == 0 || n_items > test.records.len() {
        return Err(Error::InvalidInput(format!(
            "requested {n_items} items but the test set has {} utterances",
            test.records.len()
        )));
    }
    let mut names = BTreeSet::new();
    for (name, _) in systems {
        if !names.insert(name) {
            return Err(Error::InvalidInput(format!("duplicate system name `{name}`")));
        }
    }
    let registry = VocoderRegistry::default();
    let synths = systems
        .iter()
        .map(|(_, ckpt)| Synthesizer::load(ckpt, opts, &registry))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..test.records.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(n_items);
    let bundle_id = format!("bundle-{:016x}", rng.random::<u64>());

    let bundle_dir = out_dir.join("bundle");
    let audio_dir = bundle_dir.join(AUDIO_DIR);
    fs::create_dir_all(&audio_dir)?;
    let mut taken = BTreeSet::new();
    let mut key = BundleKey {
        bundle_id: bundle_id.clone(),
        seed,
        systems: systems.iter().map(|(n, _)| n.clone()).collect(),
        audio: BTreeMap::new(),
        pairs: BTreeMap::new(),
    };
    let mut mos_items = Vec::new();
    let mut pair_specs = Vec::new();
    for &idx in &order {
        let rec = &test.records[idx];
        let label = rec.sarcasm_label.unwrap_or(SarcasmLabel::Sarcastic);
        let mut audio_ids = Vec::new();
        for ((name, _), synth) in systems.iter().zip(&synths) {
            let cond = synth.model().config().sarcasm_conditioning.then_some(Conditioning::LabelBank(label));
            let wave = synth.synthesize(&rec.transcript, cond.as_ref(), None)?.peak_normalized(PEAK_TARGET);
            let audio_id = blind_id(&mut rng, "a", &mut taken);
            wave.write_wav(audio_dir.join(format!("{audio_id}.wav")))?;
            key.audio.insert(
                audio_id.clone(),
                AudioKey {
                    utterance_id: rec.id.clone(),
                    system: name.clone(),
                },
            );
            audio_ids.push(audio_id);
        }
        for audio_id in &audio_ids {
            mos_items.push(MosItem {
                item_id: blind_id(&mut rng, "m", &mut taken),
                audio_id: audio_id.clone(),
                text: rec.transcript.clone(),
            });
        }
        for i in 0..systems.len() {
            for j in i + 1..systems.len() {
                pair_specs.push((i, j, audio_ids[i].clone(), audio_ids[j].clone(), rec.transcript.clone()));
            }
        }
    }
    let flips = ab_orders(pair_specs.len(), &mut rng);
    let mut pairs = Vec::new();
    for ((i, j, ai, aj, text), flip) in pair_specs.into_iter().zip(flips) {
        let item_id = blind_id(&mut rng, "p", &mut taken);
        let (a, b, sa, sb) = if flip { (aj, ai, j, i) } else { (ai, aj, i, j) };
        key.pairs.insert(item_id.clone(), (systems[sa].0.clone(), systems[sb].0.clone()));
        pairs.push(PairItem { item_id, a, b, text });
    }
    mos_items.shuffle(&mut rng);
    pairs.shuffle(&mut rng);
    let (mos_question, preference_questions) = default_questions();
    let bundle = ListeningBundle {
        bundle_id,
        mos_question,
        mos_scale: ["Bad", "Poor", "Fair", "Good", "Excellent"].map(String::from),
        preference_questions,
        mos_items,
        pairs,
    };
    write_atomic(&bundle_dir.join(BUNDLE_FILE), &serde_json::to_vec_pretty(&bundle)?)?;
    let key_path = out_dir.join(KEY_FILE);
    key.save(&key_path)?;
    Ok(ListeningExport {
        bundle_dir,
        key_path,
        bundle,
        key,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingKind {
    Mos,
    Preference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PreferenceChoice {
    A,
    B,
    /// No preference.
    NP,
}

/// One listener judgement. `utterance_id` is the blinded item id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub session_id: String,
    pub utterance_id: String,
    pub kind: RatingKind,
    #[serde(default)]
    pub mos_value: Option<u8>,
    #[serde(default)]
    pub preference_value: Option<PreferenceChoice>,
    /// Preference question id (`sarcasm` or `overall`); `naturalness` for MOS.
    #[serde(default)]
    pub question: Option<String>,
    /// Unix milliseconds.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl RatingRecord {
    /// Upsert key: one answer per session, item and question.
    pub fn key(&self) -> (String, String, String) {
        (
            self.session_id.clone(),
            self.utterance_id.clone(),
            self.question_id().to_string(),
        )
    }

    pub fn question_id(&self) -> &str {
        match (self.kind, &self.question) {
            (RatingKind::Mos, _) => QUESTION_NATURALNESS,
            (RatingKind::Preference, Some(q)) => q,
            (RatingKind::Preference, None) => "",
        }
    }

    /// Field-level checks independent of any bundle.
    pub fn validate(&self) -> std::result::Result<(), Vec<FieldError>> {
        let mut errs = Vec::new();
        if self.session_id.trim().is_empty() {
            errs.push(FieldError::new("session_id", "must not be empty"));
        }
        if self.utterance_id.trim().is_empty() {
            errs.push(FieldError::new("utterance_id", "must not be empty"));
        }
        match self.kind {
            RatingKind::Mos => {
                match self.mos_value {
                    None => errs.push(FieldError::new("mos_value", "required for MOS ratings")),
                    Some(v) if !(1..=5).contains(&v) => errs.push(FieldError::new("mos_value", format!("{v} is outside 1..=5"))),
                    Some(_) => {}
                }
                if self.preference_value.is_some() {
                    errs.push(FieldError::new("preference_value", "not allowed on MOS ratings"));
                }
                if self.question.as_deref().is_some_and(|q| q != QUESTION_NATURALNESS) {
                    errs.push(FieldError::new("question", "MOS ratings answer the naturalness question"));
                }
            }
            RatingKind::Preference => {
                if self.preference_value.is_none() {
                    errs.push(FieldError::new("preference_value", "required for preference ratings"));
                }
                if self.mos_value.is_some() {
                    errs.push(FieldError::new("mos_value", "not allowed on preference ratings"));
                }
                match self.question.as_deref() {
                    Some(QUESTION_SARCASM | QUESTION_OVERALL) => {}
                    Some(q) => errs.push(FieldError::new("question", format!("unknown preference question `{q}`"))),
                    None => errs.push(FieldError::new("question", "required for preference ratings")),
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Keeps the last rating per (session, item, question), in first-seen order.
pub fn dedupe_ratings(ratings: &[RatingRecord]) -> Vec<RatingRecord> {
    let mut pos: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    let mut out: Vec<RatingRecord> = Vec::new();
    for r in ratings {
        match pos.get(&r.key()) {
            Some(&i) => out[i] = r.clone(),
            None => {
                pos.insert(r.key(), out.len());
                out.push(r.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosSummary {
    /// Counts of scores 1..=5.
    pub counts: [usize; 5],
    /// Percentages of scores 1..=5.
    pub histogram: [f64; 5],
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSummary {
    /// Percentage of judgements per system, plus `NP` for no preference.
    pub shares: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectiveSummary {
    pub mos: BTreeMap<String, MosSummary>,
    /// Keyed by preference question id.
    pub preference: BTreeMap<String, PreferenceSummary>,
    pub n_raters: usize,
    pub n_items: usize,
    /// Ratings that were invalid or referenced unknown items.
    pub rejected: usize,
    /// Ratings counted after de-duplication.
    pub accepted: usize,
}

fn percent(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

/// Unblinds and summarises ratings with the bundle key. Ratings are
/// de-duplicated first; every remaining rating is either counted or rejected.
pub fn aggregate_subjective(ratings: &[RatingRecord], bundle: &ListeningBundle, key: &BundleKey) -> SubjectiveSummary {
    let mos_audio: BTreeMap<&str, &str> = bundle.mos_items.iter().map(|m| (m.item_id.as_str(), m.audio_id.as_str())).collect();
    let mut mos: BTreeMap<String, [usize; 5]> = key.systems.iter().map(|s| (s.clone(), [0; 5])).collect();
    let mut pref: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let (mut rejected, mut accepted) = (0, 0);
    let mut raters = BTreeSet::new();
    let mut items = BTreeSet::new();
    for r in dedupe_ratings(ratings) {
        if r.validate().is_err() {
            rejected += 1;
            continue;
        }
        let counted = match r.kind {
            RatingKind::Mos => mos_audio
                .get(r.utterance_id.as_str())
                .and_then(|a| key.audio.get(*a))
                .and_then(|k| mos.get_mut(&k.system))
                .map(|c| c[r.mos_value.unwrap_or(1) as usize - 1] += 1)
                .is_some(),
            RatingKind::Preference => match key.pairs.get(&r.utterance_id) {
                Some((a, b)) => {
                    let slot = match r.preference_value {
                        Some(PreferenceChoice::A) => a.clone(),
                        Some(PreferenceChoice::B) => b.clone(),
                        _ => "NP".to_string(),
                    };
                    let q = pref.entry(r.question_id().to_string()).or_insert_with(|| {
                        key.systems.iter().cloned().chain(["NP".to_string()]).map(|s| (s, 0)).collect()
                    });
                    *q.entry(slot).or_default() += 1;
                    true
                }
                None => false,
            },
        };
        if counted {
            accepted += 1;
            raters.insert(r.session_id.clone());
            items.insert(r.utterance_id.clone());
        } else {
            rejected += 1;
        }
    }
    let mos = mos
        .into_iter()
        .map(|(sys, counts)| {
            let n: usize = counts.iter().sum();
            let mean = if n == 0 {
                0.0
            } else {
                counts.iter().enumerate().map(|(i, c)| (i + 1) as f64 * *c as f64).sum::<f64>() / n as f64
            };
            (
                sys,
                MosSummary {
                    counts,
                    histogram: counts.map(|c| percent(c, n)),
                    mean,
                    n,
                },
            )
        })
        .collect();
    let preference = pref
        .into_iter()
        .map(|(q, counts)| {
            let n = counts.values().sum();
            (
                q,
                PreferenceSummary {
                    shares: counts.iter().map(|(k, &c)| (k.clone(), percent(c, n))).collect(),
                    counts,
                    n,
                },
            )
        })
        .collect();
    SubjectiveSummary {
        mos,
        preference,
        n_raters: raters.len(),
        n_items: items.len(),
        rejected,
        accepted,
    }
}

pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle_and_key() -> (ListeningBundle, BundleKey) {
        let (mos_question, preference_questions) = default_questions();
        let bundle = ListeningBundle {
            bundle_id: "b".into(),
            mos_question,
            mos_scale: ["1", "2", "3", "4", "5"].map(String::from),
            preference_questions,
            mos_items: vec![
                MosItem {
                    item_id: "m1".into(),
                    audio_id: "a1".into(),
                    text: "t".into(),
                },
                MosItem {
                    item_id: "m2".into(),
                    audio_id: "a2".into(),
                    text: "t".into(),
                },
            ],
            pairs: vec![PairItem {
                item_id: "p1".into(),
                a: "a1".into(),
                b: "a2".into(),
                text: "t".into(),
            }],
        };
        let key = BundleKey {
            bundle_id: "b".into(),
            seed: 0,
            systems: vec!["proposed".into(), "baseline".into()],
            audio: [
                ("a1".to_string(), AudioKey { utterance_id: "u".into(), system: "proposed".into() }),
                ("a2".to_string(), AudioKey { utterance_id: "u".into(), system: "baseline".into() }),
            ]
            .into(),
            pairs: [("p1".to_string(), ("proposed".to_string(), "baseline".to_string()))].into(),
        };
        (bundle, key)
    }

    fn mos(session: &str, item: &str, v: u8) -> RatingRecord {
        RatingRecord {
            session_id: session.into(),
            utterance_id: item.into(),
            kind: RatingKind::Mos,
            mos_value: Some(v),
            preference_value: None,
            question: None,
            timestamp: 0,
        }
    }

    fn pref(session: &str, v: PreferenceChoice) -> RatingRecord {
        RatingRecord {
            session_id: session.into(),
            utterance_id: "p1".into(),
            kind: RatingKind::Preference,
            mos_value: None,
            preference_value: Some(v),
            question: Some(QUESTION_SARCASM.into()),
            timestamp: 0,
        }
    }

    #[test]
    fn histogram_and_shares() {
        let (bundle, key) = bundle_and_key();
        let ratings: Vec<RatingRecord> = [5, 5, 4, 3]
            .iter()
            .enumerate()
            .map(|(i, &v)| mos(&format!("s{i}"), "m1", v))
            .chain([PreferenceChoice::A, PreferenceChoice::A, PreferenceChoice::B, PreferenceChoice::NP].iter().enumerate().map(|(i, &v)| pref(&format!("s{i}"), v)))
            .collect();
        let s = aggregate_subjective(&ratings, &bundle, &key);
        assert_eq!(s.mos["proposed"].histogram, [0.0, 0.0, 25.0, 25.0, 50.0]);
        assert_eq!(s.mos["baseline"].n, 0);
        let shares = &s.preference[QUESTION_SARCASM].shares;
        assert_eq!((shares["proposed"], shares["baseline"], shares["NP"]), (50.0, 25.0, 25.0));
        assert_eq!((s.accepted, s.rejected, s.n_raters), (8, 0, 4));
    }

    #[test]
    fn upsert_and_rejections_conserve_counts() {
        let (bundle, key) = bundle_and_key();
        let ratings = vec![
            mos("s", "m1", 2),
            mos("s", "m1", 4), // replaces the first
            mos("s", "m2", 9), // invalid
            mos("s", "nope", 3), // unknown item
            pref("s", PreferenceChoice::B),
        ];
        let s = aggregate_subjective(&ratings, &bundle, &key);
        assert_eq!(s.mos["proposed"].counts, [0, 0, 0, 1, 0]);
        assert_eq!(s.rejected, 2);
        let counted: usize = s.mos.values().map(|m| m.n).sum::<usize>() + s.preference.values().map(|p| p.n).sum::<usize>();
        assert_eq!(counted + s.rejected, dedupe_ratings(&ratings).len());
        assert_eq!(counted, s.accepted);
    }

    #[test]
    fn simulated_ratings_match_recount() {
        let (bundle, key) = bundle_and_key();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ratings: Vec<RatingRecord> = (0..1000)
            .map(|i| {
                let session = format!("s{i}");
                match rng.random_range(0..3) {
                    0 => mos(&session, ["m1", "m2", "m9"][rng.random_range(0..3)], rng.random_range(0..=6)),
                    _ => pref(&session, [PreferenceChoice::A, PreferenceChoice::B, PreferenceChoice::NP][rng.random_range(0..3)]),
                }
            })
            .collect();
        let s = aggregate_subjective(&ratings, &bundle, &key);

        let mut counts: BTreeMap<&str, [usize; 5]> = BTreeMap::new();
        let mut prefs: BTreeMap<&str, usize> = BTreeMap::new();
        let mut rejected = 0;
        for r in &ratings {
            match (r.kind, r.mos_value, r.preference_value) {
                (RatingKind::Mos, Some(v @ 1..=5), _) if r.utterance_id != "m9" => {
                    let sys = if r.utterance_id == "m1" { "proposed" } else { "baseline" };
                    counts.entry(sys).or_default()[v as usize - 1] += 1;
                }
                (RatingKind::Preference, _, Some(PreferenceChoice::A)) => *prefs.entry("proposed").or_default() += 1,
                (RatingKind::Preference, _, Some(PreferenceChoice::B)) => *prefs.entry("baseline").or_default() += 1,
                (RatingKind::Preference, _, Some(PreferenceChoice::NP)) => *prefs.entry("NP").or_default() += 1,
                _ => rejected += 1,
            }
        }
        for (sys, c) in &counts {
            assert_eq!(&s.mos[*sys].counts, c);
            let n: usize = c.iter().sum();
            assert_eq!(s.mos[*sys].histogram, c.map(|x| 100.0 * x as f64 / n as f64));
        }
        let p = &s.preference[QUESTION_SARCASM];
        for (k, v) in &prefs {
            assert_eq!(p.counts[*k], *v);
        }
        assert_eq!(s.rejected, rejected);
        assert_eq!(s.accepted + s.rejected, ratings.len());
    }

    #[test]
    fn validation_reports_fields() {
        let mut r = mos("", "m1", 0);
        r.preference_value = Some(PreferenceChoice::A);
        let fields: Vec<String> = r.validate().unwrap_err().into_iter().map(|e| e.field).collect();
        assert_eq!(fields, ["session_id", "mos_value", "preference_value"]);
        let mut p = pref("s", PreferenceChoice::A);
        p.question = Some("loudness".into());
        assert_eq!(p.validate().unwrap_err()[0].field, "question");
    }

    #[test]
    fn ab_orders_are_balanced_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flips = ab_orders(1001, &mut rng);
        let n_flipped = flips.iter().filter(|&&f| f).count();
        assert!(n_flipped == 500 || n_flipped == 501);
        assert_eq!(flips, ab_orders(1001, &mut ChaCha8Rng::seed_from_u64(3)));
        assert_ne!(flips, ab_orders(1001, &mut ChaCha8Rng::seed_from_u64(4)));
    }

    #[test]
    fn anonymized_key_hides_names() {
        let (_, key) = bundle_and_key();
        let anon = serde_json::to_string(&key.anonymized()).unwrap();
        assert!(!anon.contains("proposed") && !anon.contains("baseline"));
        assert!(anon.contains("system-1"));
    }
}
