//! Deterministic subject splits: stratified k-fold, leave-one-scanner-out,
//! and nested training-fraction plans.
//!
//! Every fold carves a validation subset (10% of its training pool, at least
//! one subject) used only for epoch selection.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::SubjectRecord;
use crate::error::{Error, Result};
use crate::rng;

pub const VALIDATION_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitStrategy {
    StratifiedKfold,
    LeaveOneScannerOut,
    FractionAblation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub name: String,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    /// Training fraction for fraction-ablation folds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub strategy: SplitStrategy,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Subject ids grouped by scanner, scanners in lexical order, subjects in
/// manifest order.
fn by_scanner(manifest: &[SubjectRecord]) -> BTreeMap<&str, Vec<String>> {
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for s in manifest {
        groups
            .entry(s.scanner_id.as_str())
            .or_default()
            .push(s.subject_id.clone());
    }
    groups
}

fn validation_size(pool: usize) -> usize {
    ((pool as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, pool.saturating_sub(1).max(1))
}

/// Splits `pool` into (train, validation) with a seeded shuffle.
fn carve_validation(pool: &[String], seed: u64, stream: u64) -> (Vec<String>, Vec<String>) {
    if pool.len() < 2 {
        return (pool.to_vec(), Vec::new());
    }
    let mut shuffled = pool.to_vec();
    rng::shuffle(&mut shuffled, &mut rng::stream(seed, stream));
    let n_val = validation_size(pool.len());
    let validation = shuffled[..n_val].to_vec();
    let train = pool
        .iter()
        .filter(|id| !validation.contains(id))
        .cloned()
        .collect();
    (train, validation)
}

/// Near-equal chunk sizes; the first `n % k` chunks get one extra.
fn chunk_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

pub fn make_stratified_kfold(manifest: &[SubjectRecord], k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if manifest.is_empty() {
        return Err(Error::Config("manifest is empty".into()));
    }
    let groups = by_scanner(manifest);
    let mut chunks: Vec<Vec<String>> = vec![Vec::new(); k];
    for (scanner, ids) in &groups {
        if ids.len() < k {
            return Err(Error::Config(format!(
                "scanner '{scanner}' has {} subjects, fewer than k = {k}",
                ids.len()
            )));
        }
        let mut shuffled = ids.clone();
        rng::shuffle(&mut shuffled, &mut rng::stream(seed, rng::tag(scanner)));
        let mut start = 0;
        for (fold, size) in chunk_sizes(ids.len(), k).into_iter().enumerate() {
            chunks[fold].extend_from_slice(&shuffled[start..start + size]);
            start += size;
        }
    }
    let folds = (0..k)
        .map(|i| {
            let pool: Vec<String> = (0..k)
                .filter(|&j| j != i)
                .flat_map(|j| chunks[j].iter().cloned())
                .collect();
            let (train, validation) = carve_validation(&pool, seed, 1_000 + i as u64);
            Fold {
                name: format!("fold{i}"),
                train,
                validation,
                test: chunks[i].clone(),
                fraction: None,
            }
        })
        .collect();
    Ok(SplitPlan {
        strategy: SplitStrategy::StratifiedKfold,
        seed,
        folds,
    })
}

pub fn make_loso(manifest: &[SubjectRecord], seed: u64) -> Result<SplitPlan> {
    let groups = by_scanner(manifest);
    if groups.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-scanner-out needs at least 2 scanners, found {}",
            groups.len()
        )));
    }
    let folds = groups
        .iter()
        .enumerate()
        .map(|(i, (scanner, test))| {
            let pool: Vec<String> = groups
                .iter()
                .filter(|(s, _)| *s != scanner)
                .flat_map(|(_, ids)| ids.iter().cloned())
                .collect();
            let (train, validation) = carve_validation(&pool, seed, 2_000 + i as u64);
            Fold {
                name: format!("test-{scanner}"),
                train,
                validation,
                test: test.clone(),
                fraction: None,
            }
        })
        .collect();
    Ok(SplitPlan {
        strategy: SplitStrategy::LeaveOneScannerOut,
        seed,
        folds,
    })
}

/// Stratified 4:1 split: per scanner, a seeded shuffle and the first
/// `floor(n / 5)` subjects held out. Returns (pool, held_out).
pub fn stratified_holdout(manifest: &[SubjectRecord], seed: u64) -> (Vec<String>, Vec<String>) {
    let mut pool = Vec::new();
    let mut held_out = Vec::new();
    for (scanner, ids) in by_scanner(manifest) {
        let mut shuffled = ids;
        rng::shuffle(&mut shuffled, &mut rng::stream(seed, rng::tag(scanner)));
        let n_out = shuffled.len() / 5;
        held_out.extend_from_slice(&shuffled[..n_out]);
        pool.extend_from_slice(&shuffled[n_out..]);
    }
    (pool, held_out)
}

/// `ceil(f * n)`, robust to binary rounding of decimal fractions.
pub fn fraction_size(fraction: f64, n: usize) -> usize {
    let exact = fraction * n as f64;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
}

pub fn make_fraction_plan(manifest: &[SubjectRecord], steps: &[f64], seed: u64) -> Result<SplitPlan> {
    if steps.is_empty() {
        return Err(Error::Config("fraction plan needs at least one step".into()));
    }
    if steps.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::Config(format!("fractions must lie in (0, 1], got {steps:?}")));
    }
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("fractions must be strictly ascending, got {steps:?}")));
    }
    let (pool, held_out) = stratified_holdout(manifest, seed);
    if held_out.is_empty() || pool.len() < 2 {
        return Err(Error::Config(format!(
            "too few subjects for a 4:1 hold-out split ({} subjects)",
            manifest.len()
        )));
    }
    let (train_pool, validation) = carve_validation(&pool, seed, 3_000);
    let mut order = train_pool;
    rng::shuffle(&mut order, &mut rng::stream(seed, 3_001));
    let folds = steps
        .iter()
        .map(|&f| {
            let n = fraction_size(f, order.len()).max(1);
            Fold {
                name: format!("fraction-{:03}", (f * 100.0).round() as u32),
                train: order[..n].to_vec(),
                validation: validation.clone(),
                test: held_out.clone(),
                fraction: Some(f),
            }
        })
        .collect();
    Ok(SplitPlan {
        strategy: SplitStrategy::FractionAblation,
        seed,
        folds,
    })
}
