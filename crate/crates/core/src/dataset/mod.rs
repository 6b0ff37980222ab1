//! Corpus loading, label normalization and seeded sampling.

mod sample;
mod summary;
mod table;

pub use sample::sample_random_tweets;
pub use summary::SplitSummary;
pub use table::Table;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{normalize_label, LabelCounts, LabelError, LabelScheme, RawLabel, StanceLabel};
use crate::record::{Split, TweetRecord};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("dataset config: {0}")]
    Config(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("{location}: {source}")]
    Label { location: String, source: LabelError },
    #[error("asked for {requested} records but only {available} are available")]
    TooFewRecords { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetName {
    #[serde(rename = "semeval2016t6a")]
    Semeval2016T6a,
    #[serde(rename = "wtwt")]
    Wtwt,
    #[serde(rename = "covid19")]
    Covid19,
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetName::Semeval2016T6a => "semeval2016t6a",
            DatasetName::Wtwt => "wtwt",
            DatasetName::Covid19 => "covid19",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFiles {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl SplitFiles {
    pub fn get(&self, split: Split) -> Option<&PathBuf> {
        match split {
            Split::Train => self.train.as_ref(),
            Split::Val => self.val.as_ref(),
            Split::Test => self.test.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Columns {
    /// When absent, ids are generated as `<split>-<row>`.
    pub id: Option<String>,
    pub text: String,
    pub target: String,
    pub label: String,
}

impl Default for Columns {
    fn default() -> Self {
        Self {
            id: Some("ID".into()),
            text: "Tweet".into(),
            target: "Target".into(),
            label: "Stance".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    /// Records per (target, raw label) cell; WT-WT only.
    #[serde(default)]
    pub per_cell: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub files: SplitFiles,
    #[serde(default = "default_scheme")]
    pub scheme: LabelScheme,
    pub targets: Vec<String>,
    #[serde(default)]
    pub columns: Columns,
    #[serde(default)]
    pub sampling: Option<Sampling>,
    /// Raw target string → display name.
    #[serde(default)]
    pub target_aliases: BTreeMap<String, String>,
    /// Test-split sizes before tweets became unavailable; drives the
    /// backfill. Defaults to the published COVID-19 counts.
    #[serde(default)]
    pub original_test_counts: Option<BTreeMap<String, LabelCounts>>,
    /// Directory relative file paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_scheme() -> LabelScheme {
    LabelScheme::Identity
}

impl DatasetSpec {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, DatasetError> {
        let mut spec: Self = toml::from_str(text).map_err(|e| DatasetError::Config(e.to_string()))?;
        spec.base_dir = base_dir.to_path_buf();
        spec.check()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        if self.targets.is_empty() {
            return Err(DatasetError::Config("target list is empty".into()));
        }
        if self.files.test.is_none() {
            return Err(DatasetError::Config("no test file given".into()));
        }
        if self.name == DatasetName::Covid19 && self.files.train.is_none() {
            return Err(DatasetError::Config("covid19 backfill needs a train file".into()));
        }
        if matches!(self.sampling, Some(Sampling { per_cell: Some(0), .. })) {
            return Err(DatasetError::Config("sampling.per_cell must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn display_target(&self, raw: &str) -> String {
        let raw = raw.trim();
        self.target_aliases.get(raw).cloned().unwrap_or_else(|| raw.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub name: DatasetName,
    pub records: Vec<TweetRecord>,
    pub summary: SplitSummary,
    /// Warnings and interpretation notes raised while loading.
    pub notes: Vec<String>,
}

impl LoadedDataset {
    pub fn split(&self, split: Split) -> Vec<TweetRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }

    fn new(name: DatasetName, records: Vec<TweetRecord>, notes: Vec<String>) -> Self {
        for n in &notes {
            log::warn!("{name}: {n}");
        }
        Self {
            name,
            summary: SplitSummary::from_records(&records),
            records,
            notes,
        }
    }
}

struct RawRow {
    record: TweetRecord,
    raw_key: String,
}

fn read_split(spec: &DatasetSpec, split: Split) -> Result<Option<Vec<RawRow>>, DatasetError> {
    let Some(path) = spec.files.get(split) else {
        return Ok(None);
    };
    let path = spec.resolve(path);
    let table = Table::read(&path)?;
    let id_col = spec.columns.id.as_deref().map(|c| table.column(c)).transpose()?;
    let text_col = table.column(&spec.columns.text)?;
    let target_col = table.column(&spec.columns.target)?;
    let label_col = table.column(&spec.columns.label)?;

    let mut rows = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let location = || format!("{}:{}", path.display(), i + 2);
        let raw = RawLabel::new(row[label_col].clone()).map_err(|source| DatasetError::Label {
            location: location(),
            source,
        })?;
        let gold = normalize_label(&raw, &spec.scheme).map_err(|source| DatasetError::Label {
            location: location(),
            source,
        })?;
        let id = match id_col {
            Some(c) => row[c].trim().to_string(),
            None => format!("{split}-{i:06}"),
        };
        let mut record = TweetRecord::new(id, row[text_col].clone(), spec.display_target(&row[target_col]));
        record.gold = Some(gold);
        record.split = split;
        rows.push(RawRow {
            raw_key: raw.key(),
            record: TweetRecord {
                raw_gold: Some(raw),
                ..record
            },
        });
    }
    Ok(Some(rows))
}

fn keep_listed_targets(spec: &DatasetSpec, rows: Vec<RawRow>, split: Split, notes: &mut Vec<String>) -> Vec<RawRow> {
    let listed: BTreeSet<&str> = spec.targets.iter().map(String::as_str).collect();
    let before = rows.len();
    let kept: Vec<RawRow> = rows.into_iter().filter(|r| listed.contains(r.record.target.as_str())).collect();
    if kept.len() < before {
        notes.push(format!(
            "{split}: dropped {} records whose target is not in the target list",
            before - kept.len()
        ));
    }
    kept
}

fn semst() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)#semst").expect("valid hashtag regex"))
}

/// Removes every `#SemST` tag and collapses the whitespace left behind.
pub fn strip_semst(text: &str) -> String {
    let stripped = semst().replace_all(text, " ");
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn load_semeval(spec: &DatasetSpec) -> Result<LoadedDataset, DatasetError> {
    let mut notes = Vec::new();
    let mut records = Vec::new();
    for split in Split::ALL {
        let Some(rows) = read_split(spec, split)? else { continue };
        for row in keep_listed_targets(spec, rows, split, &mut notes) {
            let mut r = row.record;
            r.text = strip_semst(&r.text);
            records.push(r);
        }
    }
    Ok(LoadedDataset::new(spec.name, records, notes))
}

/// Samples `per_cell` records from every (target, raw label) cell of the
/// test file, then keeps the merged canonical labels. Under-filled cells are
/// taken whole.
pub fn load_wtwt(spec: &DatasetSpec) -> Result<LoadedDataset, DatasetError> {
    let mut notes = Vec::new();
    let rows = read_split(spec, Split::Test)?.unwrap_or_default();
    let rows = keep_listed_targets(spec, rows, Split::Test, &mut notes);
    let Some((per_cell, seed)) = spec.sampling.and_then(|s| s.per_cell.map(|n| (n, s.seed))) else {
        notes.push("no per-cell sampling configured; all records kept".into());
        return Ok(LoadedDataset::new(spec.name, rows.into_iter().map(|r| r.record).collect(), notes));
    };

    let mut cells: BTreeMap<(String, String), Vec<TweetRecord>> = BTreeMap::new();
    for row in rows {
        cells.entry((row.record.target.clone(), row.raw_key)).or_default().push(row.record);
    }
    notes.push(format!(
        "sampled up to {per_cell} records per (target, raw label) cell before label merging"
    ));
    let mut records = Vec::new();
    for target in &spec.targets {
        for raw in spec.scheme.raw_labels() {
            let mut cell = cells.remove(&(target.clone(), raw.clone())).unwrap_or_default();
            if cell.len() < per_cell {
                notes.push(format!(
                    "cell ({target}, {raw}) has {} of {per_cell} records; taking all",
                    cell.len()
                ));
            }
            cell.sort_by(|a, b| a.id.cmp(&b.id));
            let mut rng = sample::rng_for(seed, &[target, &raw]);
            for i in sample::sample_indices(&mut rng, cell.len(), per_cell) {
                records.push(cell[i].clone());
            }
        }
    }
    records.sort_by(|a, b| (&a.target, &a.id).cmp(&(&b.target, &b.id)));
    Ok(LoadedDataset::new(spec.name, records, notes))
}

/// Published original test-split counts of the COVID-19 stance corpus.
pub fn covid_original_test_counts() -> BTreeMap<String, LabelCounts> {
    [
        ("Anthony S. Fauci, M.D.", 65, 52, 83),
        ("Keeping Schools Closed", 42, 103, 55),
        ("Stay at Home Orders", 58, 27, 115),
        ("Wearing a Face Mask", 78, 81, 41),
    ]
    .into_iter()
    .map(|(t, against, favor, none)| (t.to_string(), LabelCounts { against, favor, none }))
    .collect()
}

/// Loads all splits, then tops up each test (target, label) cell to its
/// original size with seeded draws from matching train records.
pub fn load_covid(spec: &DatasetSpec) -> Result<LoadedDataset, DatasetError> {
    let mut notes = Vec::new();
    let mut records = Vec::new();
    for split in Split::ALL {
        let Some(rows) = read_split(spec, split)? else { continue };
        records.extend(keep_listed_targets(spec, rows, split, &mut notes).into_iter().map(|r| r.record));
    }
    let originals = spec.original_test_counts.clone().unwrap_or_else(covid_original_test_counts);
    let seed = spec.sampling.map_or(0, |s| s.seed);
    let test_ids: BTreeSet<String> = records
        .iter()
        .filter(|r| r.split == Split::Test)
        .map(|r| r.id.clone())
        .collect();

    let mut filled = Vec::new();
    for target in &spec.targets {
        let Some(original) = originals.get(target) else {
            notes.push(format!("no original test counts for {target}; not backfilled"));
            continue;
        };
        for label in StanceLabel::ALL {
            let available = records
                .iter()
                .filter(|r| r.split == Split::Test && &r.target == target && r.gold == Some(label))
                .count();
            let deficit = (original.get(label) as usize).saturating_sub(available);
            if deficit == 0 {
                continue;
            }
            let mut pool: Vec<&TweetRecord> = records
                .iter()
                .filter(|r| {
                    r.split == Split::Train && &r.target == target && r.gold == Some(label) && !test_ids.contains(&r.id)
                })
                .collect();
            pool.sort_by(|a, b| a.id.cmp(&b.id));
            if pool.len() < deficit {
                notes.push(format!(
                    "({target}, {label}) needs {deficit} backfill records but train has {}",
                    pool.len()
                ));
            }
            let mut rng = sample::rng_for(seed, &[target, label.as_str()]);
            for i in sample::sample_indices(&mut rng, pool.len(), deficit) {
                let mut r = pool[i].clone();
                r.split = Split::Test;
                r.backfilled = true;
                filled.push(r);
            }
        }
    }
    records.extend(filled);
    Ok(LoadedDataset::new(spec.name, records, notes))
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<LoadedDataset, DatasetError> {
    spec.check()?;
    match spec.name {
        DatasetName::Semeval2016T6a => load_semeval(spec),
        DatasetName::Wtwt => load_wtwt(spec),
        DatasetName::Covid19 => load_covid(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn semst_is_removed() {
        assert_eq!(strip_semst("I disagree. #SemST"), "I disagree.");
        assert_eq!(strip_semst("a #semst b  #SEMST"), "a b");
        assert_eq!(strip_semst("no tag here"), "no tag here");
    }

    #[test]
    fn spec_parses_with_defaults() {
        let spec = DatasetSpec::from_toml_str(
            "name = \"semeval2016t6a\"\ntargets = [\"Atheism\"]\n[files]\ntest = \"t.tsv\"\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(spec.scheme, LabelScheme::Identity);
        assert_eq!(spec.columns.text, "Tweet");
        assert_eq!(spec.resolve(Path::new("t.tsv")), PathBuf::from("/data/t.tsv"));
    }

    #[test]
    fn spec_requires_targets() {
        let err = DatasetSpec::from_toml_str("name = \"wtwt\"\ntargets = []\n[files]\ntest = \"x\"\n", Path::new("."));
        assert!(matches!(err, Err(DatasetError::Config(_))));
    }

    #[test]
    fn custom_scheme_parses() {
        let spec = DatasetSpec::from_toml_str(
            "name = \"covid19\"\ntargets = [\"x\"]\n[scheme.custom]\npro = \"favor\"\ncon = \"against\"\n[files]\ntest = \"a\"\ntrain = \"b\"\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(spec.scheme.raw_labels(), vec!["con", "pro"]);
    }
}
