//! Resampling, trimming and optional external vocal separation, written to a
//! content-addressed workspace.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};
use std::{fs, thread};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{file_checksum, UtteranceRecord};
use crate::audio::{resample_and_trim, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatorConfig {
    /// Command line with `{in}` and `{out}` placeholders.
    pub command: String,
    pub tool_name: String,
    #[serde(default)]
    pub tool_version: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Output audio lands in `<workspace>/audio/<hash>.wav`.
    pub workspace: PathBuf,
    pub sample_rate: u32,
    pub trim_db: f32,
    pub peak: f32,
    pub separator: Option<SeparatorConfig>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("workspace"),
            sample_rate: SAMPLE_RATE,
            trim_db: 40.0,
            peak: 0.95,
            separator: None,
        }
    }
}

impl PreprocessConfig {
    fn fingerprint(&self) -> String {
        let sep = self
            .separator
            .as_ref()
            .map(|s| format!("{}|{}|{}", s.tool_name, s.tool_version, s.command))
            .unwrap_or_default();
        format!("{}|{}|{}|{sep}", self.sample_rate, self.trim_db, self.peak)
    }
}

/// How a record was preprocessed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessInfo {
    pub source_path: PathBuf,
    pub sample_rate: u32,
    pub separator: Option<String>,
    pub separator_version: Option<String>,
    /// Set when separation failed and the original audio was kept.
    pub flag: Option<String>,
}

/// Splits a command template into argv and substitutes `{in}` / `{out}`.
/// Each placeholder must appear exactly once; substituted paths are never
/// re-scanned.
pub fn expand_template(template: &str, input: &Path, output: &Path) -> Result<Vec<String>> {
    let args = shlex::split(template).ok_or_else(|| Error::Config(format!("cannot parse command `{template}`")))?;
    if args.is_empty() {
        return Err(Error::Config("empty separator command".into()));
    }
    let (mut n_in, mut n_out) = (0, 0);
    let input = input.to_string_lossy();
    let output = output.to_string_lossy();
    let expanded = args
        .into_iter()
        .map(|a| {
            let mut s = String::with_capacity(a.len());
            let mut rest = a.as_str();
            while let Some(pos) = rest.find('{') {
                s.push_str(&rest[..pos]);
                let tail = &rest[pos..];
                if let Some(t) = tail.strip_prefix("{in}") {
                    s.push_str(&input);
                    n_in += 1;
                    rest = t;
                } else if let Some(t) = tail.strip_prefix("{out}") {
                    s.push_str(&output);
                    n_out += 1;
                    rest = t;
                } else {
                    s.push('{');
                    rest = &tail[1..];
                }
            }
            s.push_str(rest);
            s
        })
        .collect();
    if n_in != 1 || n_out != 1 {
        return Err(Error::Config(format!(
            "command must contain {{in}} and {{out}} exactly once each (found {n_in} and {n_out})"
        )));
    }
    Ok(expanded)
}

/// Runs the external separator on `input`, writing `output`.
pub fn separate_vocals(input: &Path, output: &Path, cfg: &SeparatorConfig) -> Result<PathBuf> {
    let argv = expand_template(&cfg.command, input, output)?;
    let mut child = match Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
    {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::ToolNotFound(argv[0].clone())),
        Err(e) => return Err(e.into()),
    };
    let mut stderr = child.stderr.take().expect("piped stderr");
    let reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let deadline = Instant::now() + Duration::from_secs(cfg.timeout_secs);
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        thread::sleep(Duration::from_millis(20));
    };
    let err_text = reader.join().unwrap_or_default();
    match status {
        None => Err(Error::ToolFailed {
            tool: cfg.tool_name.clone(),
            status: format!("timed out after {}s", cfg.timeout_secs),
            stderr: err_text,
        }),
        Some(s) if !s.success() => Err(Error::ToolFailed {
            tool: cfg.tool_name.clone(),
            status: s.to_string(),
            stderr: err_text,
        }),
        Some(_) if !output.exists() => Err(Error::ToolFailed {
            tool: cfg.tool_name.clone(),
            status: "exit 0 without output".into(),
            stderr: err_text,
        }),
        Some(_) => Ok(output.to_path_buf()),
    }
}

/// Resamples to the pipeline rate, trims silence, peak-normalises and (if
/// configured) separates vocals. Records whose output already exists with a
/// matching checksum are returned unchanged.
pub fn preprocess(record: &UtteranceRecord, cfg: &PreprocessConfig) -> Result<UtteranceRecord> {
    if let (Some(sum), Some(info)) = (&record.checksum, &record.preprocess) {
        if record.audio_path.exists() && file_checksum(&record.audio_path)? == *sum && info.sample_rate == cfg.sample_rate {
            return Ok(record.clone());
        }
    }
    let source = record
        .preprocess
        .as_ref()
        .map(|p| p.source_path.clone())
        .unwrap_or_else(|| record.audio_path.clone());
    let source_sum = file_checksum(&source)?;
    let key = hex::encode(Sha256::digest(format!("{source_sum}|{}", cfg.fingerprint()).as_bytes()));
    let audio_dir = cfg.workspace.join("audio");
    fs::create_dir_all(&audio_dir)?;
    let out_path = audio_dir.join(format!("{}.wav", &key[..32]));

    let mut info = PreprocessInfo {
        source_path: source.clone(),
        sample_rate: cfg.sample_rate,
        separator: None,
        separator_version: None,
        flag: None,
    };
    if !out_path.exists() {
        let mut input = source.clone();
        let mut scratch = None;
        if let Some(sep) = &cfg.separator {
            let tmp = audio_dir.join(format!(".{}.sep.wav", &key[..32]));
            match separate_vocals(&source, &tmp, sep) {
                Ok(p) => {
                    input = p.clone();
                    scratch = Some(p);
                    info.separator = Some(sep.tool_name.clone());
                    info.separator_version = Some(sep.tool_version.clone());
                }
                Err(e) => {
                    warn!("vocal separation failed for `{}`: {e}; keeping original audio", record.id);
                    info.flag = Some(format!("separation failed: {e}"));
                }
            }
        }
        let wave = Waveform::read_wav(&input)?;
        let out = resample_and_trim(&wave, cfg.sample_rate, cfg.trim_db)?.peak_normalized(cfg.peak);
        let tmp = audio_dir.join(format!(".{}.tmp.wav", &key[..32]));
        out.write_wav(&tmp)?;
        fs::rename(&tmp, &out_path)?;
        if let Some(s) = scratch {
            let _ = fs::remove_file(s);
        }
    } else if let Some(sep) = &cfg.separator {
        info.separator = Some(sep.tool_name.clone());
        info.separator_version = Some(sep.tool_version.clone());
    }
    let (rate, frames) = crate::audio::wav_info(&out_path)?;
    let mut rec = record.clone();
    rec.audio_path = out_path.clone();
    rec.checksum = Some(file_checksum(&out_path)?);
    rec.source_checksum = Some(source_sum);
    rec.duration_secs = frames as f64 / rate as f64;
    rec.preprocess = Some(info);
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::StageTag;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn template_fills_each_placeholder_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let name: String = (0..rng.random_range(1..12))
                .map(|_| *b"ab {}in out/._-".get(rng.random_range(0..15)).unwrap() as char)
                .collect();
            let input = PathBuf::from(format!("/tmp/{name}.wav"));
            let output = PathBuf::from(format!("/tmp/{name}-out.wav"));
            let argv = expand_template("sep --input {in} -o {out} --flag", &input, &output).unwrap();
            assert_eq!(argv.len(), 6);
            assert_eq!(argv[2], input.to_string_lossy());
            assert_eq!(argv[4], output.to_string_lossy());
        }
        assert!(expand_template("sep {in}", Path::new("a"), Path::new("b")).is_err());
        assert!(expand_template("sep {in} {in} {out}", Path::new("a"), Path::new("b")).is_err());
    }

    #[test]
    fn missing_tool_is_reported() {
        let cfg = SeparatorConfig {
            command: "definitely-not-a-real-separator-binary {in} {out}".into(),
            tool_name: "none".into(),
            tool_version: String::new(),
            timeout_secs: 5,
        };
        let err = separate_vocals(Path::new("/tmp/x.wav"), Path::new("/tmp/y.wav"), &cfg).unwrap_err();
        assert!(matches!(err, Error::ToolNotFound(_)));
    }

    #[test]
    fn identity_tool_copies_and_failing_tool_captures_stderr() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.wav");
        Waveform::new(vec![0.1; 3000], 22050).unwrap().write_wav(&input).unwrap();
        let out = dir.path().join("out.wav");
        let copy = SeparatorConfig {
            command: "cp {in} {out}".into(),
            tool_name: "cp".into(),
            tool_version: "1".into(),
            timeout_secs: 10,
        };
        separate_vocals(&input, &out, &copy).unwrap();
        assert_eq!(file_checksum(&input).unwrap(), file_checksum(&out).unwrap());
        let failing = SeparatorConfig {
            command: "sh -c 'echo boom >&2; exit 3' {in} {out}".into(),
            tool_name: "sh".into(),
            ..copy
        };
        match separate_vocals(&input, &dir.path().join("z.wav"), &failing) {
            Err(Error::ToolFailed { stderr, .. }) => assert!(stderr.contains("boom")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resamples_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("a.wav");
        let n = 48_000;
        Waveform::new((0..n).map(|i| (i as f32 * 0.03).sin() * 0.5).collect(), 48_000)
            .unwrap()
            .write_wav(&src)
            .unwrap();
        let rec = UtteranceRecord::new("a", src, "hi", "s", StageTag::Pretrain, 1.0);
        let cfg = PreprocessConfig {
            workspace: dir.path().join("ws"),
            ..Default::default()
        };
        let once = preprocess(&rec, &cfg).unwrap();
        assert_eq!(crate::audio::wav_info(&once.audio_path).unwrap().0, 22050);
        let modified = fs::metadata(&once.audio_path).unwrap().modified().unwrap();
        let twice = preprocess(&once, &cfg).unwrap();
        assert_eq!(once, twice);
        assert_eq!(fs::metadata(&twice.audio_path).unwrap().modified().unwrap(), modified);
    }
}
