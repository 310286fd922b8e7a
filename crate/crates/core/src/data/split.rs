use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, Record, MAX_FOLD};
use crate::error::{Error, Result};

pub const PARTS: usize = MAX_FOLD as usize + 1;
/// Index of the held-out test sixth.
pub const TEST_PART: usize = MAX_FOLD as usize;

/// Six disjoint parts of a manifest: parts `0..5` are the cross-validation
/// folds, part 5 the test set. Entries index into the manifest's records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SixWaySplit {
    pub parts: [Vec<usize>; PARTS],
    /// Human-readable notes (e.g. classes too small for every part).
    pub warnings: Vec<String>,
}

impl SixWaySplit {
    pub fn test(&self) -> &[usize] {
        &self.parts[TEST_PART]
    }

    pub fn fold(&self, f: usize) -> &[usize] {
        &self.parts[f]
    }

    /// Training indices for CV fold `held_out`: the union of the other four folds.
    pub fn training(&self, held_out: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..TEST_PART)
            .filter(|f| *f != held_out)
            .flat_map(|f| self.parts[f].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitOptions {
    pub stratify: bool,
    /// Keep records sharing a `group` value in one part.
    pub group_by: bool,
}

/// Assigns every record to one of six parts and writes the assignment back
/// into the returned manifest. Existing complete fold assignments are used
/// verbatim and the seed is ignored.
pub fn split_sixths(
    manifest: &DatasetManifest,
    seed: u64,
    options: SplitOptions,
) -> Result<(DatasetManifest, SixWaySplit)> {
    let n = manifest.len();
    if n < PARTS {
        return Err(Error::invalid(format!(
            "six-way split needs at least {PARTS} records, got {n}"
        )));
    }
    let assigned = manifest
        .records()
        .iter()
        .filter(|r| r.fold.is_some())
        .count();
    let mut warnings = Vec::new();
    let folds: Vec<u8> = if assigned == n {
        manifest.records().iter().map(|r| r.fold.unwrap()).collect()
    } else if assigned > 0 {
        return Err(Error::Integrity(format!(
            "{assigned} of {n} records carry folds; expected all or none"
        )));
    } else if options.group_by {
        grouped_assignment(manifest, seed, options.stratify, &mut warnings)?
    } else {
        dealt_assignment(manifest, seed, options.stratify, &mut warnings)
    };

    let mut parts: [Vec<usize>; PARTS] = Default::default();
    for (i, f) in folds.iter().enumerate() {
        parts[*f as usize].push(i);
    }
    if let Some(empty) = parts.iter().position(|p| p.is_empty()) {
        return Err(Error::Integrity(format!(
            "part {empty} of the split is empty"
        )));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let records: Vec<Record> = manifest
        .records()
        .iter()
        .zip(&folds)
        .map(|(r, f)| Record {
            fold: Some(*f),
            ..r.clone()
        })
        .collect();
    Ok((
        manifest.with_records(records),
        SixWaySplit { parts, warnings },
    ))
}

/// Shuffle then deal round-robin. Under stratification each class is dealt
/// in turn with the dealing position carried across classes, so per-class
/// and overall part sizes both differ by at most one.
fn dealt_assignment(
    manifest: &DatasetManifest,
    seed: u64,
    stratify: bool,
    warnings: &mut Vec<String>,
) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = manifest.label_indices();
    let strata: Vec<Vec<usize>> = if stratify {
        let mut by_class = vec![Vec::new(); manifest.class_count()];
        for (i, c) in labels.iter().enumerate() {
            by_class[*c].push(i);
        }
        for (c, members) in by_class.iter().enumerate() {
            if !members.is_empty() && members.len() < PARTS {
                warnings.push(format!(
                    "class `{}` has {} records, fewer than {PARTS} parts",
                    manifest.vocabulary()[c],
                    members.len()
                ));
            }
        }
        by_class
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut folds = vec![0u8; labels.len()];
    let mut next = 0usize;
    for mut members in strata {
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = (next % PARTS) as u8;
            next += 1;
        }
    }
    folds
}

/// Whole groups go to the currently smallest part.
fn grouped_assignment(
    manifest: &DatasetManifest,
    seed: u64,
    stratify: bool,
    warnings: &mut Vec<String>,
) -> Result<Vec<u8>> {
    let labels = manifest.label_indices();
    let mut keys: Vec<&str> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, r) in manifest.records().iter().enumerate() {
        let key = r
            .group
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("record `{}` has no group value", r.image_id)))?;
        match keys.iter().position(|k| *k == key) {
            Some(g) => members[g].push(i),
            None => {
                keys.push(key);
                members.push(vec![i]);
            }
        }
    }
    if members.len() < PARTS {
        return Err(Error::invalid(format!(
            "only {} groups; cannot fill {PARTS} parts",
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.shuffle(&mut rng);
    if stratify {
        order.sort_by_key(|g| labels[members[*g][0]]);
    }
    let mut sizes = [0usize; PARTS];
    let mut folds = vec![0u8; labels.len()];
    for g in order {
        let part = (0..PARTS).min_by_key(|p| (sizes[*p], *p)).unwrap();
        sizes[part] += members[g].len();
        for &i in &members[g] {
            folds[i] = part as u8;
        }
    }
    if stratify {
        warnings.push("grouped split balances part sizes, not per-class counts".into());
    }
    Ok(folds)
}
