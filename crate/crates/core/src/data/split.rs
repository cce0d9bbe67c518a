//! Seeded train / validation / test assignment.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusManifest, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_n: usize,
    /// Fraction of the non-test records held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_n: 100,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Marks `test_n` uniformly sampled records as test and
/// `round(val_fraction × rest)` of the remainder as validation. The result
/// depends only on the record ids and the seed.
pub fn split_dataset(manifest: &CorpusManifest, cfg: &SplitConfig) -> Result<CorpusManifest> {
    let n = manifest.records.len();
    if n == 0 {
        return Err(Error::NoRecords);
    }
    if cfg.test_n >= n {
        return Err(Error::InvalidInput(format!(
            "test_n {} must be smaller than the {n} records",
            cfg.test_n
        )));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::Config(format!("val_fraction {} outside [0, 1)", cfg.val_fraction)));
    }
    let mut out = manifest.clone();
    out.records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut role = vec![Split::Train; n];
    for i in sample(&mut rng, n, cfg.test_n) {
        role[i] = Split::Test;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| role[i] != Split::Test).collect();
    let n_val = (cfg.val_fraction * rest.len() as f64).round() as usize;
    for j in sample(&mut rng, rest.len(), n_val.min(rest.len())) {
        role[rest[j]] = Split::Val;
    }
    for (r, s) in out.records.iter_mut().zip(role) {
        r.split = s;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{StageTag, UtteranceRecord};
    use std::collections::HashSet;
    use std::path::PathBuf;

    fn manifest(n: usize) -> CorpusManifest {
        CorpusManifest {
            records: (0..n)
                .map(|i| UtteranceRecord::new(format!("u{i:04}"), PathBuf::from("x.wav"), "t", "s", StageTag::Pretrain, 1.0))
                .collect(),
            stage_tag: StageTag::Pretrain,
        }
    }

    fn ids(m: &CorpusManifest, s: Split) -> HashSet<String> {
        m.split(s).map(|r| r.id.clone()).collect()
    }

    #[test]
    fn seeded_and_disjoint() {
        let m = manifest(500);
        let cfg = SplitConfig { seed: 7, ..Default::default() };
        let a = split_dataset(&m, &cfg).unwrap();
        let b = split_dataset(&m, &cfg).unwrap();
        assert_eq!(a, b);
        let test = ids(&a, Split::Test);
        assert_eq!(test.len(), 100);
        assert_eq!(ids(&a, Split::Val).len(), 40);
        assert!(test.is_disjoint(&ids(&a, Split::Train)));
        let other = split_dataset(&m, &SplitConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(test, ids(&other, Split::Test));
    }

    #[test]
    fn zero_test_and_oversized_test() {
        let m = manifest(10);
        let a = split_dataset(&m, &SplitConfig { test_n: 0, val_fraction: 0.0, seed: 1 }).unwrap();
        assert!(a.records.iter().all(|r| r.split == Split::Train));
        assert!(split_dataset(&m, &SplitConfig { test_n: 10, ..Default::default() }).is_err());
    }
}
