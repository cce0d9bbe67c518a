//! TextGrid ingestion: phone intervals → phoneme ids + frame durations.

use std::fs;
use std::path::Path;

use crate::audio::StftConfig;
use crate::error::{Error, Result};
use crate::phoneme::{PhonemeSequence, PhonemeVocab};

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tier {
    pub name: String,
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub xmin: f64,
    pub xmax: f64,
    pub tiers: Vec<Tier>,
}

impl Alignment {
    pub fn tier(&self, name: &str) -> Option<&Tier> {
        self.tiers.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Str(String),
    Num(f64),
}

/// Reduces either TextGrid layout (long or short) to its value stream:
/// quoted strings and numbers. Keys, `=`, `[n]` indices and `<exists>` flags
/// are dropped.
fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        match c {
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some((_, '"')) => {
                            if matches!(chars.peek(), Some((_, '"'))) {
                                chars.next();
                                s.push('"');
                            } else {
                                break;
                            }
                        }
                        Some((_, ch)) => s.push(ch),
                        None => return Err(Error::parse("TextGrid", "unterminated string")),
                    }
                }
                out.push(Token::Str(s));
            }
            '[' => {
                for (_, ch) in chars.by_ref() {
                    if ch == ']' {
                        break;
                    }
                }
            }
            '!' => {
                for (_, ch) in chars.by_ref() {
                    if ch == '\n' {
                        break;
                    }
                }
            }
            c if c.is_ascii_digit() || c == '-' || c == '.' => {
                let mut end = i;
                while let Some(&(j, ch)) = chars.peek() {
                    if ch.is_ascii_digit() || matches!(ch, '-' | '+' | '.' | 'e' | 'E') {
                        end = j + ch.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                let text = &src[i..end];
                let v = text
                    .parse::<f64>()
                    .map_err(|_| Error::parse("TextGrid", format!("bad number `{text}`")))?;
                out.push(Token::Num(v));
            }
            _ => {
                chars.next();
            }
        }
    }
    Ok(out)
}

struct Cursor {
    tokens: std::vec::IntoIter<Token>,
}

impl Cursor {
    fn num(&mut self) -> Result<f64> {
        match self.tokens.next() {
            Some(Token::Num(v)) => Ok(v),
            other => Err(Error::parse("TextGrid", format!("expected number, found {other:?}"))),
        }
    }

    fn string(&mut self) -> Result<String> {
        match self.tokens.next() {
            Some(Token::Str(s)) => Ok(s),
            other => Err(Error::parse("TextGrid", format!("expected string, found {other:?}"))),
        }
    }

    fn count(&mut self) -> Result<usize> {
        let v = self.num()?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::parse("TextGrid", format!("bad count {v}")));
        }
        Ok(v as usize)
    }
}

pub fn parse_textgrid(src: &str) -> Result<Alignment> {
    let mut c = Cursor {
        tokens: tokenize(src)?.into_iter(),
    };
    if c.string()? != "ooTextFile" || c.string()? != "TextGrid" {
        return Err(Error::parse("TextGrid", "missing ooTextFile/TextGrid header"));
    }
    let xmin = c.num()?;
    let xmax = c.num()?;
    let n_tiers = c.count()?;
    let mut tiers = Vec::with_capacity(n_tiers);
    for _ in 0..n_tiers {
        let class = c.string()?;
        let name = c.string()?;
        c.num()?;
        c.num()?;
        let n = c.count()?;
        let mut intervals = Vec::with_capacity(n);
        match class.as_str() {
            "IntervalTier" => {
                for _ in 0..n {
                    let start = c.num()?;
                    let end = c.num()?;
                    let text = c.string()?;
                    if !(end >= start) {
                        return Err(Error::parse("TextGrid", format!("interval [{start}, {end}] is reversed")));
                    }
                    intervals.push(Interval { start, end, text });
                }
            }
            "TextTier" => {
                for _ in 0..n {
                    c.num()?;
                    c.string()?;
                }
            }
            other => return Err(Error::parse("TextGrid", format!("unknown tier class `{other}`"))),
        }
        tiers.push(Tier { name, intervals });
    }
    Ok(Alignment { xmin, xmax, tiers })
}

/// Frame counts for contiguous intervals. Each boundary snaps to
/// `round(t · sr / hop)`, clamped to be monotone and within `total_frames`;
/// the last phoneme absorbs the rounding residual so the counts sum to
/// `total_frames` exactly.
pub fn snap_durations(intervals: &[Interval], total_frames: usize, stft: &StftConfig) -> Vec<u32> {
    let rate = stft.sample_rate as f64 / stft.hop as f64;
    let mut prev = 0usize;
    let mut out = Vec::with_capacity(intervals.len());
    for (k, iv) in intervals.iter().enumerate() {
        let bound = if k + 1 == intervals.len() {
            total_frames
        } else {
            ((iv.end * rate).round().max(0.0) as usize).clamp(prev, total_frames)
        };
        out.push((bound - prev) as u32);
        prev = bound;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedUtterance {
    pub symbols: Vec<String>,
    pub phonemes: PhonemeSequence,
    pub durations: Vec<u32>,
}

/// Reads the "phones" tier. `n_samples` is the preprocessed audio length;
/// without it the length is taken from the TextGrid's `xmax`. Unknown phone
/// labels map to `<unk>` with a warning.
pub fn ingest_alignment(path: &Path, vocab: &PhonemeVocab, n_samples: Option<usize>) -> Result<AlignedUtterance> {
    let src = fs::read_to_string(path)?;
    let grid = parse_textgrid(&src).map_err(|e| match e {
        Error::Parse { reason, .. } => Error::parse(path.display().to_string(), reason),
        other => other,
    })?;
    align_from_grid(&grid, vocab, n_samples)
}

pub fn align_from_grid(grid: &Alignment, vocab: &PhonemeVocab, n_samples: Option<usize>) -> Result<AlignedUtterance> {
    let tier = grid
        .tier("phones")
        .ok_or_else(|| Error::parse("TextGrid", "no tier named \"phones\""))?;
    if tier.intervals.is_empty() {
        return Err(Error::parse("TextGrid", "\"phones\" tier is empty"));
    }
    let stft = StftConfig::default();
    let n = n_samples.unwrap_or_else(|| (grid.xmax * stft.sample_rate as f64).round() as usize);
    let total = stft.n_frames(n);
    let durations = snap_durations(&tier.intervals, total, &stft);
    let symbols: Vec<String> = tier
        .intervals
        .iter()
        .map(|iv| PhonemeVocab::normalize_symbol(&iv.text))
        .collect();
    let phonemes = PhonemeSequence {
        ids: tier.intervals.iter().map(|iv| vocab.id_or_unk(&iv.text)).collect(),
    };
    Ok(AlignedUtterance {
        symbols,
        phonemes,
        durations,
    })
}

/// Serialises intervals as a long-format TextGrid with a single "phones" tier.
pub fn write_textgrid(intervals: &[Interval], xmax: f64) -> String {
    let mut s = format!(
        "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\nxmin = 0\nxmax = {xmax}\ntiers? <exists>\nsize = 1\nitem []:\n    item [1]:\n        class = \"IntervalTier\"\n        name = \"phones\"\n        xmin = 0\n        xmax = {xmax}\n        intervals: size = {}\n",
        intervals.len()
    );
    for (i, iv) in intervals.iter().enumerate() {
        s.push_str(&format!(
            "        intervals [{}]:\n            xmin = {}\n            xmax = {}\n            text = \"{}\"\n",
            i + 1,
            iv.start,
            iv.end,
            iv.text.replace('"', "\"\"")
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SHORT: &str = "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\n0\n0.5\n<exists>\n2\n\"IntervalTier\"\n\"words\"\n0\n0.5\n1\n0\n0.5\n\"hi\"\n\"IntervalTier\"\n\"phones\"\n0\n0.5\n2\n0\n0.2\n\"HH\"\n0.2\n0.5\n\"AY1\"\n";

    fn iv(start: f64, end: f64, text: &str) -> Interval {
        Interval { start, end, text: text.into() }
    }

    #[test]
    fn long_and_short_formats_agree() {
        let long = write_textgrid(&[iv(0.0, 0.2, "HH"), iv(0.2, 0.5, "AY1")], 0.5);
        let a = parse_textgrid(&long).unwrap();
        let b = parse_textgrid(SHORT).unwrap();
        assert_eq!(a.tier("phones"), b.tier("phones"));
    }

    #[test]
    fn one_second_sums_to_87() {
        let grid = parse_textgrid(&write_textgrid(&[iv(0.0, 0.31, ""), iv(0.31, 0.62, "AH0"), iv(0.62, 1.0, "T")], 1.0)).unwrap();
        let a = align_from_grid(&grid, &PhonemeVocab::standard(), Some(22050)).unwrap();
        assert_eq!(a.durations.iter().sum::<u32>(), 87);
        assert_eq!(a.symbols, vec!["sil", "AH", "T"]);
    }

    #[test]
    fn single_phoneme_takes_every_frame() {
        let grid = parse_textgrid(&write_textgrid(&[iv(0.0, 0.75, "AA")], 0.75)).unwrap();
        let n = (0.75 * 22050.0) as usize;
        let a = align_from_grid(&grid, &PhonemeVocab::standard(), Some(n)).unwrap();
        assert_eq!(a.durations, vec![(1 + n / 256) as u32]);
    }

    #[test]
    fn unknown_phone_maps_to_unk() {
        let grid = parse_textgrid(&write_textgrid(&[iv(0.0, 0.3, "QQ")], 0.3)).unwrap();
        let v = PhonemeVocab::standard();
        assert_eq!(align_from_grid(&grid, &v, None).unwrap().phonemes.ids, vec![v.unk_id()]);
    }

    #[test]
    fn garbage_is_a_parse_error() {
        assert!(matches!(parse_textgrid("hello"), Err(Error::Parse { .. })));
        let missing = write_textgrid(&[iv(0.0, 0.3, "AA")], 0.3).replace("phones", "words");
        assert!(align_from_grid(&parse_textgrid(&missing).unwrap(), &PhonemeVocab::standard(), None).is_err());
    }

    #[test]
    fn matches_frame_enumeration() {
        let stft = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let n_samples = rng.random_range(5_000..60_000usize);
            let secs = n_samples as f64 / 22050.0;
            let k = rng.random_range(1..15);
            let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.random_range(0.0..secs)).collect();
            cuts.sort_by(f64::total_cmp);
            let mut bounds = vec![0.0];
            bounds.extend(cuts);
            bounds.push(secs);
            let ivs: Vec<Interval> = bounds.windows(2).map(|w| iv(w[0], w[1], "AA")).collect();
            let total = 1 + n_samples / 256;
            let got = snap_durations(&ivs, total, &stft);
            // each frame index f goes to the first interval whose snapped end exceeds f
            let snapped: Vec<usize> = ivs[..ivs.len() - 1]
                .iter()
                .map(|i| (i.end * 22050.0 / 256.0).round() as usize)
                .collect();
            let mut want = vec![0u32; ivs.len()];
            for f in 0..total {
                let owner = snapped.iter().position(|&e| f < e).unwrap_or(ivs.len() - 1);
                want[owner] += 1;
            }
            assert_eq!(got, want);
            assert_eq!(got.iter().sum::<u32>() as usize, total);
        }
    }
}
