//! Phoneme vocabulary (ARPAbet, stress stripped), pronunciation lexicon and
//! grapheme-to-phoneme conversion with a letter-to-sound fallback.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SIL: &str = "sil";
pub const SP: &str = "sp";

pub const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH",
    "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
];

/// Phoneme ids, always within the vocabulary they were built against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSequence {
    pub ids: Vec<u32>,
}

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeVocab {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Default for PhonemeVocab {
    fn default() -> Self {
        Self::standard()
    }
}

impl PhonemeVocab {
    /// `<pad>`, `<unk>`, `sil`, `sp`, then the 39 ARPAbet phones.
    pub fn standard() -> Self {
        let symbols = [PAD, UNK, SIL, SP]
            .iter()
            .chain(ARPABET.iter())
            .map(|s| s.to_string())
            .collect();
        Self::from_symbols(symbols)
    }

    pub fn from_symbols(symbols: Vec<String>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Self { symbols, index }
    }

    /// Rebuilds the lookup table after deserialisation.
    pub fn reindexed(self) -> Self {
        Self::from_symbols(self.symbols)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn unk_id(&self) -> u32 {
        self.index[UNK]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Canonical symbol: stress digits stripped, silences folded onto `sil`/`sp`.
    pub fn normalize_symbol(raw: &str) -> String {
        let t = raw.trim();
        match t.to_ascii_lowercase().as_str() {
            "" | "sil" | "<sil>" | "silence" => return SIL.to_string(),
            "sp" | "spn" | "<sp>" => return SP.to_string(),
            _ => {}
        }
        t.trim_end_matches(|c: char| c.is_ascii_digit()).to_ascii_uppercase()
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(&Self::normalize_symbol(symbol)).copied()
    }

    /// Looks up a symbol, mapping unknown ones to `<unk>` with a warning.
    pub fn id_or_unk(&self, symbol: &str) -> u32 {
        self.id(symbol).unwrap_or_else(|| {
            warn!("phoneme `{symbol}` not in vocabulary; using {UNK}");
            self.unk_id()
        })
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, symbols: &[&str]) -> PhonemeSequence {
        PhonemeSequence {
            ids: symbols.iter().map(|s| self.id_or_unk(s)).collect(),
        }
    }

    pub fn validate(&self, seq: &PhonemeSequence) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::InvalidInput("empty phoneme sequence".into()));
        }
        match seq.ids.iter().find(|&&id| id as usize >= self.len()) {
            Some(&id) => Err(Error::PhonemeOutOfVocab { id, vocab: self.len() }),
            None => Ok(()),
        }
    }
}

/// Word → phone list, shared by the aligner ingestion and synthesis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

const BUILTIN_LEXICON: &str = "\
A AH
AGAIN AH G EH N
ALL AO L
ALWAYS AO L W EY Z
AM AE M
AMAZING AH M EY Z IH NG
AN AE N
AND AE N D
ANOTHER AH N AH DH ER
ARE AA R
AS AE Z
AT AE T
BE B IY
BEST B EH S T
BETTER B EH T ER
BUT B AH T
CAN K AE N
COULD K UH D
DAY D EY
DO D UW
DOES D AH Z
DON'T D OW N T
EVER EH V ER
EXACTLY IH G Z AE K T L IY
FANTASTIC F AE N T AE S T IH K
FOR F AO R
FUN F AH N
GOOD G UH D
GREAT G R EY T
HAVE HH AE V
HE HH IY
HELLO HH AH L OW
HOW HH AW
I AY
I'M AY M
IDEA AY D IY AH
IS IH Z
IT IH T
IT'S IH T S
JUST JH AH S T
KNOW N OW
LIKE L AY K
LOVE L AH V
ME M IY
MEETING M IY T IH NG
MONDAY M AH N D EY
MY M AY
NEVER N EH V ER
NICE N AY S
NO N OW
NOT N AA T
OF AH V
OH OW
OKAY OW K EY
ON AA N
ONE W AH N
OUR AW ER
PERFECT P ER F IH K T
REALLY R IH L IY
RIGHT R AY T
SHE SH IY
SO S OW
SURE SH UH R
THAT DH AE T
THAT'S DH AE T S
THE DH AH
THIS DH IH S
TIME T AY M
TO T UW
TODAY T AH D EY
TOTALLY T OW T AH L IY
VERY V EH R IY
WAS W AA Z
WE W IY
WELL W EH L
WHAT W AH T
WONDERFUL W AH N D ER F AH L
WORK W ER K
WOW W AW
YEAH Y AE
YES Y EH S
YOU Y UW
YOUR Y AO R
";

impl Lexicon {
    /// Small built-in English lexicon; load a full CMUdict-format file for real corpora.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON).expect("builtin lexicon parses")
    }

    /// CMUdict format: `WORD PH1 PH2 ...`, `;;;` comments, `WORD(2)` variants ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with(";;;") || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-empty line");
            if word.ends_with(')') {
                continue;
            }
            let phones: Vec<String> = parts.map(PhonemeVocab::normalize_symbol).collect();
            if phones.is_empty() {
                return Err(Error::parse("lexicon", format!("line {}: no phones", lineno + 1)));
            }
            entries.entry(word.to_ascii_uppercase()).or_insert(phones);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_ascii_uppercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Greedy longest-match letter-to-sound rules.
const LTS_RULES: &[(&str, &[&str])] = &[
    ("tion", &["SH", "AH", "N"]),
    ("ough", &["AO"]),
    ("igh", &["AY"]),
    ("tch", &["CH"]),
    ("sh", &["SH"]),
    ("ch", &["CH"]),
    ("th", &["TH"]),
    ("ph", &["F"]),
    ("ng", &["NG"]),
    ("ck", &["K"]),
    ("wh", &["W"]),
    ("qu", &["K", "W"]),
    ("ee", &["IY"]),
    ("ea", &["IY"]),
    ("oo", &["UW"]),
    ("ou", &["AW"]),
    ("ow", &["OW"]),
    ("oi", &["OY"]),
    ("oy", &["OY"]),
    ("ai", &["EY"]),
    ("ay", &["EY"]),
    ("au", &["AO"]),
    ("aw", &["AO"]),
    ("er", &["ER"]),
    ("ir", &["ER"]),
    ("ur", &["ER"]),
    ("a", &["AE"]),
    ("b", &["B"]),
    ("c", &["K"]),
    ("d", &["D"]),
    ("e", &["EH"]),
    ("f", &["F"]),
    ("g", &["G"]),
    ("h", &["HH"]),
    ("i", &["IH"]),
    ("j", &["JH"]),
    ("k", &["K"]),
    ("l", &["L"]),
    ("m", &["M"]),
    ("n", &["N"]),
    ("o", &["AA"]),
    ("p", &["P"]),
    ("q", &["K"]),
    ("r", &["R"]),
    ("s", &["S"]),
    ("t", &["T"]),
    ("u", &["AH"]),
    ("v", &["V"]),
    ("w", &["W"]),
    ("x", &["K", "S"]),
    ("y", &["Y"]),
    ("z", &["Z"]),
];

pub fn letter_to_sound(word: &str) -> Vec<String> {
    let w: String = word
        .to_ascii_lowercase()
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < w.len() {
        // a word-final silent "e" after a consonant contributes nothing
        if i == w.len() - 1 && w.ends_with('e') && w.len() > 2 {
            break;
        }
        let rest = &w[i..];
        match LTS_RULES.iter().find(|(g, _)| rest.starts_with(g)) {
            Some((g, phones)) => {
                out.extend(phones.iter().map(|p| p.to_string()));
                i += g.len();
            }
            None => i += 1,
        }
    }
    out
}

/// Splits text into lexicon words (letters and apostrophes).
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_string())
        .collect()
}

/// Text → phoneme ids. Words missing from the lexicon go through letter-to-sound;
/// tokens that yield nothing map to `<unk>` with a warning.
pub fn g2p(text: &str, lexicon: &Lexicon, vocab: &PhonemeVocab) -> Result<PhonemeSequence> {
    let mut ids = Vec::new();
    for word in words(text) {
        let phones: Vec<String> = match lexicon.lookup(&word) {
            Some(p) => p.to_vec(),
            None => letter_to_sound(&word),
        };
        if phones.is_empty() {
            warn!("no pronunciation for `{word}`; using {UNK}");
            ids.push(vocab.unk_id());
        } else {
            ids.extend(phones.iter().map(|p| vocab.id_or_unk(p)));
        }
    }
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!("no phonemes for text `{text}`")));
    }
    Ok(PhonemeSequence { ids })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_layout() {
        let v = PhonemeVocab::standard();
        assert_eq!(v.len(), 43);
        assert_eq!(v.id("AH0"), v.id("AH"));
        assert_eq!(v.id(""), v.id("sil"));
        assert_eq!(v.id("spn"), v.id("sp"));
        assert_eq!(v.id_or_unk("QX"), v.unk_id());
    }

    #[test]
    fn lexicon_then_fallback() {
        let v = PhonemeVocab::standard();
        let lex = Lexicon::builtin();
        let seq = g2p("Oh, great!", &lex, &v).unwrap();
        assert_eq!(seq.ids, v.encode(&["OW", "G", "R", "EY", "T"]).ids);
        let oov = g2p("blorptch", &lex, &v).unwrap();
        assert!(!oov.ids.contains(&v.unk_id()));
        assert!(g2p("?!", &lex, &v).is_err());
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let v = PhonemeVocab::standard();
        let err = v.validate(&PhonemeSequence { ids: vec![3, 99] }).unwrap_err();
        assert!(matches!(err, Error::PhonemeOutOfVocab { id: 99, .. }));
    }

    #[test]
    fn cmudict_parse() {
        let lex = Lexicon::parse(";;; comment\nHELLO  HH AH0 L OW1\nHELLO(2) HH EH0 L OW1\n").unwrap();
        assert_eq!(lex.lookup("hello").unwrap(), &["HH", "AH", "L", "OW"]);
        assert_eq!(lex.len(), 1);
    }
}
