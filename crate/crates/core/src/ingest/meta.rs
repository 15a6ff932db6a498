use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{read_to_string, tsv_reader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Category,
    Family,
    #[serde(rename = "format")]
    Format,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::Category, Grouping::Family, Grouping::Format];

    /// Column name in the metadata file.
    pub fn column(self) -> &'static str {
        match self {
            Grouping::Category => "category",
            Grouping::Family => "family",
            Grouping::Format => "question_format",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Category => "category",
            Grouping::Family => "family",
            Grouping::Format => "format",
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "category" => Ok(Grouping::Category),
            "family" => Ok(Grouping::Family),
            "format" | "question_format" => Ok(Grouping::Format),
            other => Err(Error::Invalid(format!("unknown grouping '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkMeta {
    pub benchmark_id: String,
    pub category: String,
    pub family: String,
    pub question_format: String,
}

impl BenchmarkMeta {
    pub fn label(&self, grouping: Grouping) -> &str {
        match grouping {
            Grouping::Category => &self.category,
            Grouping::Family => &self.family,
            Grouping::Format => &self.question_format,
        }
    }
}

/// Benchmark metadata rows plus the declared label set of each grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTable {
    records: Vec<BenchmarkMeta>,
    label_sets: [Vec<String>; 3],
    index: HashMap<String, usize>,
}

impl MetaTable {
    pub fn new(records: Vec<BenchmarkMeta>, label_sets: [Vec<String>; 3]) -> Result<Self> {
        let mut index = HashMap::new();
        for (k, r) in records.iter().enumerate() {
            if index.insert(r.benchmark_id.clone(), k).is_some() {
                return Err(Error::Invalid(format!(
                    "benchmark '{}' has more than one metadata row",
                    r.benchmark_id
                )));
            }
            for (g, declared) in Grouping::ALL.iter().zip(&label_sets) {
                let label = r.label(*g);
                if label.trim().is_empty() {
                    return Err(Error::Invalid(format!(
                        "empty {} for benchmark '{}'",
                        g.column(),
                        r.benchmark_id
                    )));
                }
                if !declared.iter().any(|d| d == label) {
                    return Err(Error::Invalid(format!(
                        "{} '{label}' of benchmark '{}' is not declared in the header",
                        g.column(),
                        r.benchmark_id
                    )));
                }
            }
        }
        Ok(Self {
            records,
            label_sets,
            index,
        })
    }

    /// Builds a table whose label sets are exactly the labels in use.
    pub fn from_records(records: Vec<BenchmarkMeta>) -> Result<Self> {
        let mut sets: [Vec<String>; 3] = Default::default();
        for (g, set) in Grouping::ALL.iter().zip(sets.iter_mut()) {
            for r in &records {
                let l = r.label(*g).to_string();
                if !set.contains(&l) {
                    set.push(l);
                }
            }
        }
        Self::new(records, sets)
    }

    pub fn records(&self) -> &[BenchmarkMeta] {
        &self.records
    }

    pub fn get(&self, benchmark_id: &str) -> Option<&BenchmarkMeta> {
        self.index.get(benchmark_id).map(|&k| &self.records[k])
    }

    pub fn labels(&self, grouping: Grouping) -> &[String] {
        let k = Grouping::ALL.iter().position(|g| *g == grouping).unwrap();
        &self.label_sets[k]
    }

    /// Label of `benchmark_id` under `grouping`, or an error naming it.
    pub fn label_of(&self, benchmark_id: &str, grouping: Grouping) -> Result<&str> {
        self.get(benchmark_id)
            .map(|m| m.label(grouping))
            .ok_or_else(|| {
                Error::Invalid(format!("no {} label for benchmark '{benchmark_id}'", grouping.column()))
            })
    }
}

const META_HEADER: [&str; 4] = ["benchmark_id", "category", "family", "question_format"];

/// Reads the metadata TSV. Label sets are declared in `#column=a,b,c` lines
/// ahead of the header row.
pub fn load_benchmark_meta(path: impl AsRef<Path>) -> Result<MetaTable> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let loc = |row: usize| format!("{}: line {row}", path.display());

    let mut declared: [Option<Vec<String>>; 3] = Default::default();
    for (lineno, line) in text.lines().enumerate() {
        let Some(decl) = line.strip_prefix('#') else { continue };
        let Some((key, labels)) = decl.split_once('=') else {
            continue;
        };
        let Some(k) = Grouping::ALL.iter().position(|g| g.column() == key.trim()) else {
            return Err(Error::parse(loc(lineno + 1), format!("unknown label set '{key}'")));
        };
        let set: Vec<String> = labels
            .split(',')
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        declared[k] = Some(set);
    }
    let mut label_sets: [Vec<String>; 3] = Default::default();
    for (k, d) in declared.into_iter().enumerate() {
        label_sets[k] = d.ok_or_else(|| {
            Error::parse(
                loc(1),
                format!("missing label set declaration '#{}=...'", Grouping::ALL[k].column()),
            )
        })?;
    }

    let mut r = tsv_reader(text.as_bytes());
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::parse(loc(1), "missing header"))??;
    if header.iter().collect::<Vec<_>>() != META_HEADER {
        return Err(Error::parse(
            loc(1),
            format!("header must be '{}'", META_HEADER.join("\t")),
        ));
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(Error::parse(loc(line), format!("expected 4 fields, got {}", rec.len())));
        }
        rows.push(BenchmarkMeta {
            benchmark_id: rec[0].trim().to_string(),
            category: rec[1].trim().to_string(),
            family: rec[2].trim().to_string(),
            question_format: rec[3].trim().to_string(),
        });
    }
    MetaTable::new(rows, label_sets)
}

pub fn write_benchmark_meta(path: impl AsRef<Path>, table: &MetaTable) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for g in Grouping::ALL {
        out.push_str(&format!("#{}={}\n", g.column(), table.labels(g).join(",")));
    }
    out.push_str(&META_HEADER.join("\t"));
    out.push('\n');
    for r in table.records() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.benchmark_id, r.category, r.family, r.question_format
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
