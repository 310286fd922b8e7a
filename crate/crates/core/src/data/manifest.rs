use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Folds are numbered `0..=5`; fold 5 is the held-out test sixth.
pub const MAX_FOLD: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub image_id: String,
    pub path: String,
    pub label: String,
    pub fold: Option<u8>,
    /// Optional grouping key (patient, lesion) kept together when splitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    records: Vec<Record>,
    vocabulary: Vec<String>,
    root: PathBuf,
}

/// Column layout of a source CSV. The default is the canonical
/// `image_id,path,label,fold` header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub id_column: String,
    pub path_column: String,
    pub label_column: String,
    /// Empty string disables the fold column.
    pub fold_column: Option<String>,
    pub group_column: Option<String>,
    /// `{}` is replaced by the path column value, e.g. `"images/{}.png"`.
    pub path_template: Option<String>,
    /// Explicit vocabulary order; otherwise order of first appearance.
    pub class_order: Option<Vec<String>>,
    /// Source label renames applied before anything else.
    pub label_map: BTreeMap<String, String>,
    /// Keep only rows whose `column` value is one of `values`.
    pub filter: Option<RowFilter>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowFilter {
    pub column: String,
    pub values: Vec<String>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            id_column: "image_id".into(),
            path_column: "path".into(),
            label_column: "label".into(),
            fold_column: Some("fold".into()),
            group_column: None,
            path_template: None,
            class_order: None,
            label_map: BTreeMap::new(),
            filter: None,
        }
    }
}

/// Translation of a dataset's native metadata file into a canonical manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub metadata: PathBuf,
    pub image_root: PathBuf,
    #[serde(default)]
    pub schema: SchemaConfig,
}

impl AdapterConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::malformed("adapter config", e))
    }

    /// Resolves relative paths against `base` (normally the config's directory).
    pub fn resolve_paths(mut self, base: &Path) -> Self {
        if self.metadata.is_relative() {
            self.metadata = base.join(&self.metadata);
        }
        if self.image_root.is_relative() {
            self.image_root = base.join(&self.image_root);
        }
        self
    }

    pub fn load(&self) -> Result<DatasetManifest> {
        if !self.image_root.is_dir() {
            return Err(Error::io(
                &self.image_root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "image root not found"),
            ));
        }
        load_manifest(&self.metadata, &self.image_root, &self.schema)
    }
}

pub fn parse_fold(raw: &str) -> Result<Option<u8>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    match raw.parse::<u8>() {
        Ok(f) if f <= MAX_FOLD => Ok(Some(f)),
        _ => Err(Error::Integrity(format!(
            "fold `{raw}` outside 0..={MAX_FOLD}"
        ))),
    }
}

/// Reads a manifest CSV from disk.
pub fn load_manifest(
    csv_path: &Path,
    image_root: &Path,
    schema: &SchemaConfig,
) -> Result<DatasetManifest> {
    let file = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    DatasetManifest::from_csv_reader(file, image_root, schema)
}

impl DatasetManifest {
    pub fn new(
        records: Vec<Record>,
        vocabulary: Vec<String>,
        root: impl Into<PathBuf>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for v in &vocabulary {
            if !seen.insert(v.as_str()) {
                return Err(Error::Integrity(format!("class `{v}` listed twice")));
            }
        }
        let mut ids = HashSet::new();
        for r in &records {
            if !seen.contains(r.label.as_str()) {
                return Err(Error::Integrity(format!(
                    "record `{}` has label `{}` outside the vocabulary",
                    r.image_id, r.label
                )));
            }
            if !ids.insert(r.image_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "duplicate image_id `{}`",
                    r.image_id
                )));
            }
            if let Some(f) = r.fold {
                if f > MAX_FOLD {
                    return Err(Error::Integrity(format!(
                        "record `{}` has fold {f} outside 0..={MAX_FOLD}",
                        r.image_id
                    )));
                }
            }
        }
        Ok(Self {
            records,
            vocabulary,
            root: root.into(),
        })
    }

    pub fn from_csv_reader<R: Read>(reader: R, root: &Path, schema: &SchemaConfig) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(false)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let column = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let id_col = column(&schema.id_column)?;
        let path_col = column(&schema.path_column)?;
        let label_col = column(&schema.label_column)?;
        let fold_col = optional(&schema.fold_column).map(column).transpose()?;
        let group_col = optional(&schema.group_column).map(column).transpose()?;
        let filter = match &schema.filter {
            Some(f) => Some((column(&f.column)?, &f.values)),
            None => None,
        };

        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("").trim();
            if let Some((col, values)) = filter {
                if !values.iter().any(|v| v == field(col)) {
                    continue;
                }
            }
            let raw_label = field(label_col);
            let label = schema
                .label_map
                .get(raw_label)
                .cloned()
                .unwrap_or_else(|| raw_label.to_string());
            if label.is_empty() {
                return Err(Error::Integrity(format!(
                    "record `{}` has an empty label",
                    field(id_col)
                )));
            }
            let path = match &schema.path_template {
                Some(t) => t.replace("{}", field(path_col)),
                None => field(path_col).to_string(),
            };
            records.push(Record {
                image_id: field(id_col).to_string(),
                path,
                label,
                fold: fold_col
                    .map(|c| parse_fold(field(c)))
                    .transpose()?
                    .flatten(),
                group: group_col.map(|c| field(c).to_string()),
            });
        }

        let vocabulary = match &schema.class_order {
            Some(order) => order.clone(),
            None => {
                let mut vocab: Vec<String> = Vec::new();
                for r in &records {
                    if !vocab.contains(&r.label) {
                        vocab.push(r.label.clone());
                    }
                }
                vocab
            }
        };
        Self::new(records, vocabulary, root)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.vocabulary.iter().position(|v| v == label)
    }

    /// Class index of every record, in record order.
    pub fn label_indices(&self) -> Vec<usize> {
        let lookup: HashMap<&str, usize> = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_str(), i))
            .collect();
        self.records
            .iter()
            .map(|r| lookup[r.label.as_str()])
            .collect()
    }

    /// Number of records per vocabulary entry.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocabulary.len()];
        for i in self.label_indices() {
            counts[i] += 1;
        }
        counts
    }

    pub fn image_path(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }

    /// New manifest holding the records at `indices`, same vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            vocabulary: self.vocabulary.clone(),
            root: self.root.clone(),
        }
    }

    /// Records whose fold is in `folds`.
    pub fn with_folds(&self, folds: &[u8]) -> Self {
        let idx: Vec<usize> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.fold.is_some_and(|f| folds.contains(&f)))
            .map(|(i, _)| i)
            .collect();
        self.subset(&idx)
    }

    pub(crate) fn with_records(&self, records: Vec<Record>) -> Self {
        Self {
            records,
            vocabulary: self.vocabulary.clone(),
            root: self.root.clone(),
        }
    }

    /// Same records under a permuted (same-set) vocabulary order.
    pub fn reorder_vocabulary(&self, order: &[String]) -> Result<Self> {
        let a: HashSet<&String> = self.vocabulary.iter().collect();
        let b: HashSet<&String> = order.iter().collect();
        if a != b || order.len() != self.vocabulary.len() {
            return Err(Error::VocabularyMismatch {
                expected: order.join(", "),
                found: self.vocabulary.join(", "),
            });
        }
        Self::new(self.records.clone(), order.to_vec(), self.root.clone())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let with_group = self.records.iter().any(|r| r.group.is_some());
        let mut w = csv::Writer::from_writer(writer);
        if with_group {
            w.write_record(["image_id", "path", "label", "fold", "group"])?;
        } else {
            w.write_record(["image_id", "path", "label", "fold"])?;
        }
        for r in &self.records {
            let fold = r.fold.map(|f| f.to_string()).unwrap_or_default();
            if with_group {
                let group = r.group.clone().unwrap_or_default();
                w.write_record([&r.image_id, &r.path, &r.label, &fold, &group])?;
            } else {
                w.write_record([&r.image_id, &r.path, &r.label, &fold])?;
            }
        }
        w.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// SHA-256 of the canonical CSV serialization.
    pub fn checksum(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        hex_digest(&buf)
    }
}

/// An empty column name in a config file means "no such column".
fn optional(name: &Option<String>) -> Option<&str> {
    name.as_deref().filter(|n| !n.is_empty())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<DatasetManifest> {
        DatasetManifest::from_csv_reader(
            text.as_bytes(),
            Path::new("/data"),
            &SchemaConfig::default(),
        )
    }

    #[test]
    fn well_formed_csv() {
        let m =
            read("image_id,path,label,fold\na,a.png,ACK,0\nb,b.png,BCC,\nc,c.png,ACK,5\n").unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.vocabulary(), ["ACK", "BCC"]);
        assert_eq!(m.records()[1].fold, None);
        assert_eq!(m.records()[2].fold, Some(5));
        assert_eq!(m.label_indices(), vec![0, 1, 0]);
        assert_eq!(m.image_path(&m.records()[0]), Path::new("/data/a.png"));
    }

    #[test]
    fn out_of_range_fold_is_integrity_error() {
        let err = read("image_id,path,label,fold\na,a.png,ACK,7\n").unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
        assert!(read("image_id,path,label,fold\na,a.png,ACK,x\n").is_err());
    }

    #[test]
    fn missing_column_is_named() {
        match read("image_id,path,fold\na,a.png,0\n") {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "label"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = read("image_id,path,label,fold\na,a.png,ACK,\na,b.png,ACK,\n").unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn explicit_class_order_and_adapter_features() {
        let schema = SchemaConfig {
            id_column: "img_id".into(),
            path_column: "img_id".into(),
            label_column: "diagnostic".into(),
            fold_column: None,
            group_column: Some("patient_id".into()),
            path_template: Some("imgs/{}".into()),
            class_order: Some(
                ["ACK", "BCC", "MEL", "NEV", "SCC", "SEK"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ),
            label_map: BTreeMap::from([("melanoma".to_string(), "MEL".to_string())]),
            filter: Some(RowFilter {
                column: "kind".into(),
                values: vec!["clinical".into()],
            }),
        };
        let csv = "patient_id,img_id,diagnostic,kind\np1,x.png,SEK,clinical\np2,y.png,melanoma,clinical\np3,z.png,BCC,dermoscopic\n";
        let m = DatasetManifest::from_csv_reader(csv.as_bytes(), Path::new("."), &schema).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.vocabulary().len(), 6);
        assert_eq!(m.records()[1].label, "MEL");
        assert_eq!(m.records()[0].path, "imgs/x.png");
        assert_eq!(m.records()[0].group.as_deref(), Some("p1"));
        assert_eq!(m.class_counts(), vec![0, 0, 1, 0, 0, 1]);
    }

    #[test]
    fn label_outside_explicit_order_rejected() {
        let schema = SchemaConfig {
            class_order: Some(vec!["A".into(), "B".into()]),
            ..SchemaConfig::default()
        };
        let err = DatasetManifest::from_csv_reader(
            "image_id,path,label,fold\na,a,C,\n".as_bytes(),
            Path::new("."),
            &schema,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn canonical_round_trip() {
        let text = "image_id,path,label,fold\na,a.png,ACK,0\nb,b.png,BCC,\n";
        let m = read(text).unwrap();
        let mut out = Vec::new();
        m.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
        assert_eq!(m.checksum(), read(text).unwrap().checksum());
    }

    #[test]
    fn adapter_config_parses_toml() {
        let cfg = AdapterConfig::from_toml_str(
            r#"
            metadata = "metadata.csv"
            image_root = "images"
            [schema]
            id_column = "img_id"
            path_column = "img_id"
            label_column = "diagnostic"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.schema.fold_column.as_deref(), Some("fold"));
        let cfg = cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.metadata, Path::new("/base/metadata.csv"));
        assert!(AdapterConfig::from_toml_str("metadata = 3").is_err());
    }
}
