//! Gold records (JSONL) and their table workspaces.
//!
//! Each record names a `table_dir`, resolved against the directory holding
//! the JSONL file; gold table paths are relative to it, one sheet per file.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::extraction::PathSet;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionDifficulty {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableDifficulty {
    Simple,
    Medium,
    Complex,
}

macro_rules! label {
    ($t:ty { $($v:ident => $s:literal),* $(,)? }) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$v => $s),* }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

label!(Language { Zh => "zh", En => "en" });
label!(QuestionDifficulty { Easy => "easy", Medium => "medium", Hard => "hard" });
label!(TableDifficulty { Simple => "simple", Medium => "medium", Complex => "complex" });

impl Language {
    pub const ALL: [Language; 2] = [Language::Zh, Language::En];
}

impl QuestionDifficulty {
    pub const ALL: [QuestionDifficulty; 3] = [Self::Easy, Self::Medium, Self::Hard];
}

impl TableDifficulty {
    pub const ALL: [TableDifficulty; 3] = [Self::Simple, Self::Medium, Self::Complex];
}

/// Multi-table is always complex; otherwise each of multi-sheet and complex
/// header adds one level.
pub fn classify_table_difficulty(multi_table: bool, multi_sheet: bool, complex_header: bool) -> TableDifficulty {
    if multi_table || (multi_sheet && complex_header) {
        TableDifficulty::Complex
    } else if multi_sheet || complex_header {
        TableDifficulty::Medium
    } else {
        TableDifficulty::Simple
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub id: String,
    pub language: Language,
    pub domain: String,
    pub question: String,
    pub gold_answer: String,
    pub gold_table_paths: PathSet,
    pub table_dir: String,
    pub question_difficulty: QuestionDifficulty,
    pub table_difficulty: TableDifficulty,
    pub multi_table: bool,
    pub multi_sheet: bool,
    pub complex_header: bool,
    /// Directory of the file the record was loaded from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl GoldRecord {
    /// Absolute-or-relative directory the record's code runs in.
    pub fn workspace(&self) -> PathBuf {
        self.base_dir.join(&self.table_dir)
    }
}

pub const RECORD_FIELDS: [&str; 12] = [
    "id",
    "language",
    "domain",
    "question",
    "gold_answer",
    "gold_table_paths",
    "table_dir",
    "question_difficulty",
    "table_difficulty",
    "multi_table",
    "multi_sheet",
    "complex_header",
];

/// Parse and validate one JSONL line; `line_no` is 1-based.
pub fn parse_record(line: &str, line_no: usize, base_dir: &Path) -> Result<GoldRecord, Error> {
    let err = |msg: String| Error::Dataset(format!("line {line_no}: {msg}"));
    let value: Value = serde_json::from_str(line).map_err(|e| err(format!("invalid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| err("expected a JSON object".into()))?;
    for field in RECORD_FIELDS {
        if !obj.contains_key(field) {
            return Err(err(format!("missing field {field}")));
        }
    }
    for field in RECORD_FIELDS {
        // Per-field decode gives a message naming the field.
        let v = obj[field].clone();
        let ok = match field {
            "language" => serde_json::from_value::<Language>(v).is_ok(),
            "question_difficulty" => serde_json::from_value::<QuestionDifficulty>(v).is_ok(),
            "table_difficulty" => serde_json::from_value::<TableDifficulty>(v).is_ok(),
            "multi_table" | "multi_sheet" | "complex_header" => v.is_boolean(),
            "gold_table_paths" => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
            _ => v.is_string(),
        };
        if !ok {
            return Err(err(format!("invalid field {field}: {}", obj[field])));
        }
    }
    let raw_path_count = obj["gold_table_paths"].as_array().map_or(0, Vec::len);
    let mut record: GoldRecord = serde_json::from_value(value.clone()).map_err(|e| err(e.to_string()))?;
    record.base_dir = base_dir.to_path_buf();
    if record.id.trim().is_empty() {
        return Err(err("invalid field id: empty".into()));
    }
    if record.gold_answer.trim().is_empty() {
        return Err(err("invalid field gold_answer: empty".into()));
    }
    if raw_path_count != record.gold_table_paths.len() {
        return Err(err("invalid field gold_table_paths: empty or duplicate path".into()));
    }
    let expected = classify_table_difficulty(record.multi_table, record.multi_sheet, record.complex_header);
    if record.table_difficulty != expected {
        return Err(err(format!(
            "invalid field table_difficulty: {} contradicts structural flags ({expected})",
            record.table_difficulty
        )));
    }
    let ws = record.workspace();
    for p in record.gold_table_paths.iter() {
        if !ws.join(p).is_file() {
            return Err(err(format!("table file not found: {}", ws.join(p).display())));
        }
    }
    Ok(record)
}

/// Load a JSONL file of records; blank lines are skipped, ids must be unique.
pub fn load_records(path: &Path) -> Result<Vec<GoldRecord>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(line, i + 1, &base)?;
        if let Some(prev) = seen.insert(rec.id.clone(), i + 1) {
            return Err(Error::Dataset(format!(
                "line {}: duplicate id {} (first on line {prev})",
                i + 1,
                rec.id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Records indexed by id.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<GoldRecord>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(records: Vec<GoldRecord>) -> Self {
        let index = records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        Self { records, index }
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Ok(Self::new(load_records(path)?))
    }

    pub fn get(&self, id: &str) -> Option<&GoldRecord> {
        self.index.get(id).map(|i| &self.records[*i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetInfo {
    pub path: String,
    /// Data rows, header excluded.
    pub rows: usize,
    /// Fields across data rows.
    pub cells: usize,
    pub has_complex_header: bool,
}

/// Per-record sheet metadata, read once from the table files.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TableRegistry {
    pub tables: BTreeMap<String, Vec<SheetInfo>>,
}

impl TableRegistry {
    pub fn build(records: &[GoldRecord]) -> Result<Self, Error> {
        let mut tables = BTreeMap::new();
        for r in records {
            let ws = r.workspace();
            let mut sheets = Vec::new();
            for p in r.gold_table_paths.iter() {
                let file = ws.join(p);
                let mut reader = csv::ReaderBuilder::new()
                    .flexible(true)
                    .from_path(&file)
                    .map_err(|e| Error::Dataset(format!("{}: {e}", file.display())))?;
                let mut rows = 0;
                let mut cells = 0;
                for row in reader.records() {
                    let row = row.map_err(|e| Error::Dataset(format!("{}: {e}", file.display())))?;
                    rows += 1;
                    cells += row.len();
                }
                sheets.push(SheetInfo {
                    path: p.to_string(),
                    rows,
                    cells,
                    has_complex_header: r.complex_header,
                });
            }
            tables.insert(r.id.clone(), sheets);
        }
        Ok(Self { tables })
    }
}

/// Seeded shuffle, then the first `round(n * train)` records train.
pub fn split_records(
    records: &[GoldRecord],
    ratios: (f64, f64),
    seed: u64,
) -> Result<(Vec<GoldRecord>, Vec<GoldRecord>), Error> {
    let (train, test) = ratios;
    if !(train > 0.0 && test > 0.0) || ((train + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must be positive and sum to 1, got ({train}, {test})")));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (records.len() as f64 * train).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|i| records[*i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Two halves; the first gets the extra record when the length is odd.
pub fn halve(records: &[GoldRecord]) -> (Vec<GoldRecord>, Vec<GoldRecord>) {
    let mid = records.len().div_ceil(2);
    (records[..mid].to_vec(), records[mid..].to_vec())
}
