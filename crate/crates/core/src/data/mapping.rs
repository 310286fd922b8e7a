use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Record};
use crate::error::{Error, Result};

/// Source-label to target-label mapping, e.g. six lesion types onto
/// cancer / non-cancer.
///
/// ```toml
/// targets = ["cancer", "non-cancer"]
/// [map]
/// MEL = "cancer"
/// ACK = "non-cancer"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMapping {
    pub targets: Vec<String>,
    pub map: BTreeMap<String, String>,
}

impl ClassMapping {
    pub fn new(targets: Vec<String>, map: BTreeMap<String, String>) -> Result<Self> {
        let m = Self { targets, map };
        m.validate()?;
        Ok(m)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::malformed("class mapping", e))?;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::invalid("class mapping has no targets"));
        }
        let targets: HashSet<&String> = self.targets.iter().collect();
        if targets.len() != self.targets.len() {
            return Err(Error::invalid("class mapping lists a target twice"));
        }
        for (src, dst) in &self.map {
            if !targets.contains(dst) {
                return Err(Error::invalid(format!(
                    "`{src}` maps to `{dst}`, which is not a listed target"
                )));
            }
        }
        Ok(())
    }

    /// Identity mapping over `labels`.
    pub fn identity(labels: &[String]) -> Self {
        Self {
            targets: labels.to_vec(),
            map: labels.iter().map(|l| (l.clone(), l.clone())).collect(),
        }
    }

    /// Cancer (MEL, BCC, SCC) versus non-cancer (ACK, SEK, NEV).
    pub fn cancer_binary() -> Self {
        let map = [
            ("MEL", "cancer"),
            ("BCC", "cancer"),
            ("SCC", "cancer"),
            ("ACK", "non-cancer"),
            ("SEK", "non-cancer"),
            ("NEV", "non-cancer"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        Self {
            targets: vec!["cancer".into(), "non-cancer".into()],
            map,
        }
    }

    pub fn get(&self, label: &str) -> Option<&str> {
        self.map.get(label).map(String::as_str)
    }

    /// `then` applied after `self`. Labels whose image under `self` is not
    /// covered by `then` are dropped from the composition.
    pub fn compose(&self, then: &ClassMapping) -> ClassMapping {
        let map = self
            .map
            .iter()
            .filter_map(|(src, mid)| then.get(mid).map(|dst| (src.clone(), dst.to_string())))
            .collect();
        ClassMapping {
            targets: then.targets.clone(),
            map,
        }
    }
}

/// Replaces every label through `mapping`; folds and ids are kept.
pub fn remap_classes(
    manifest: &DatasetManifest,
    mapping: &ClassMapping,
) -> Result<DatasetManifest> {
    let mut records = Vec::with_capacity(manifest.len());
    for r in manifest.records() {
        let target = mapping.get(&r.label).ok_or_else(|| {
            Error::invalid(format!("label `{}` is not covered by the mapping", r.label))
        })?;
        records.push(Record {
            label: target.to_string(),
            ..r.clone()
        });
    }
    DatasetManifest::new(records, mapping.targets.clone(), manifest.root())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub manifest: DatasetManifest,
    pub dropped: usize,
}

/// Keeps only records whose label is in `allowed`; the vocabulary shrinks to
/// the allowed labels in the manifest's existing order.
pub fn intersect_classes(manifest: &DatasetManifest, allowed: &[String]) -> Result<Intersection> {
    if allowed.is_empty() {
        return Err(Error::invalid("allowed vocabulary is empty"));
    }
    let keep: HashSet<&str> = allowed.iter().map(String::as_str).collect();
    let records: Vec<Record> = manifest
        .records()
        .iter()
        .filter(|r| keep.contains(r.label.as_str()))
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::InvalidState(
            "no records left after class intersection".into(),
        ));
    }
    let dropped = manifest.len() - records.len();
    if dropped > 0 {
        log::info!(
            "class intersection dropped {dropped} of {} records",
            manifest.len()
        );
    }
    let vocabulary = manifest
        .vocabulary()
        .iter()
        .filter(|v| keep.contains(v.as_str()))
        .cloned()
        .collect();
    Ok(Intersection {
        manifest: DatasetManifest::new(records, vocabulary, manifest.root())?,
        dropped,
    })
}

/// Vocabulary file for `--intersect`: `classes = ["ACK", ...]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularyConfig {
    pub classes: Vec<String>,
}

impl VocabularyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::malformed("vocabulary config", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAD: [&str; 6] = ["ACK", "BCC", "MEL", "NEV", "SCC", "SEK"];

    fn pad_manifest() -> DatasetManifest {
        let vocab: Vec<String> = PAD.iter().map(|s| s.to_string()).collect();
        let records = PAD
            .iter()
            .enumerate()
            .map(|(i, l)| Record {
                image_id: format!("img{i}"),
                path: format!("img{i}.png"),
                label: l.to_string(),
                fold: Some(i as u8),
                group: None,
            })
            .collect();
        DatasetManifest::new(records, vocab, ".").unwrap()
    }

    #[test]
    fn cancer_grouping() {
        let m = remap_classes(&pad_manifest(), &ClassMapping::cancer_binary()).unwrap();
        assert_eq!(m.vocabulary(), ["cancer", "non-cancer"]);
        let labels: Vec<&str> = m.records().iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "non-cancer",
                "cancer",
                "cancer",
                "non-cancer",
                "cancer",
                "non-cancer"
            ]
        );
        assert_eq!(m.records()[2].fold, Some(2));
    }

    #[test]
    fn identity_is_noop() {
        let m = pad_manifest();
        let id = ClassMapping::identity(m.vocabulary());
        assert_eq!(remap_classes(&m, &id).unwrap(), m);
    }

    #[test]
    fn missing_label_is_named() {
        let mut mapping = ClassMapping::cancer_binary();
        mapping.map.remove("SEK");
        let err = remap_classes(&pad_manifest(), &mapping).unwrap_err();
        assert!(err.to_string().contains("SEK"), "{err}");
    }

    #[test]
    fn mapping_toml_round_trip_and_validation() {
        let m =
            ClassMapping::from_toml_str("targets = [\"a\", \"b\"]\n[map]\nx = \"a\"\ny = \"b\"\n")
                .unwrap();
        assert_eq!(m.get("y"), Some("b"));
        assert!(ClassMapping::from_toml_str("targets = [\"a\"]\n[map]\nx = \"z\"\n").is_err());
        assert!(ClassMapping::from_toml_str("targets = []\n[map]\n").is_err());
    }

    #[test]
    fn intersection_behaviour() {
        let m = pad_manifest();
        let all = intersect_classes(&m, m.vocabulary()).unwrap();
        assert_eq!(all.manifest, m);
        assert_eq!(all.dropped, 0);
        let two = intersect_classes(&m, &["SEK".into(), "ACK".into()]).unwrap();
        assert_eq!(two.manifest.vocabulary(), ["ACK", "SEK"]);
        assert_eq!(two.dropped, 4);
        assert!(matches!(
            intersect_classes(&m, &["zzz".into()]),
            Err(Error::InvalidState(_))
        ));
    }
}
