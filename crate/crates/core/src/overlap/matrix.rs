use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_to_string, tsv_reader};
use crate::screening::parse_header_line;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Semantic,
    Performance,
    Signature,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Semantic, Level::Performance, Level::Signature];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Semantic => "semantic",
            Level::Performance => "performance",
            Level::Signature => "signature",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(Level::Semantic),
            "performance" => Ok(Level::Performance),
            "signature" => Ok(Level::Signature),
            other => Err(Error::Invalid(format!("unknown overlap level '{other}'"))),
        }
    }
}

/// Symmetric benchmark-by-benchmark overlap values with a unit diagonal.
/// Failed pairs hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub level: Level,
    benchmark_ids: Vec<String>,
    values: Vec<f64>,
}

impl OverlapMatrix {
    pub fn new(level: Level, benchmark_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = benchmark_ids.len();
        if values.len() != n * n {
            return Err(Error::Dimension(format!("{} values for {n} benchmarks", values.len())));
        }
        if let Some(dup) = crate::ingest::first_duplicate(&benchmark_ids) {
            return Err(Error::Invalid(format!("duplicate benchmark '{dup}' in overlap matrix")));
        }
        let m = Self {
            level,
            benchmark_ids,
            values,
        };
        m.check_structure()?;
        Ok(m)
    }

    /// Unit diagonal with every off-diagonal pair filled by `pair(i, j)`, i < j.
    pub fn from_pairs(level: Level, benchmark_ids: Vec<String>, pairs: &[f64]) -> Result<Self> {
        let n = benchmark_ids.len();
        if pairs.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::Dimension(format!("{} pair values for {n} benchmarks", pairs.len())));
        }
        let mut values = vec![1.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                values[i * n + j] = pairs[k];
                values[j * n + i] = pairs[k];
                k += 1;
            }
        }
        Self::new(level, benchmark_ids, values)
    }

    pub fn check_structure(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            if self.get(i, i) != 1.0 {
                return Err(Error::Invalid(format!("diagonal entry of '{}' is not 1", self.benchmark_ids[i])));
            }
            for j in i + 1..n {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if a.is_nan() != b.is_nan() || (!a.is_nan() && (a - b).abs() > 1e-12) {
                    return Err(Error::Invalid(format!(
                        "asymmetric entry ({}, {})",
                        self.benchmark_ids[i], self.benchmark_ids[j]
                    )));
                }
                if !a.is_nan() && !(-1.0..=1.0).contains(&a) {
                    return Err(Error::Invalid(format!("entry {a} outside [-1, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.benchmark_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.benchmark_ids.is_empty()
    }

    pub fn benchmark_ids(&self) -> &[String] {
        &self.benchmark_ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.benchmark_ids.iter().position(|b| b == id)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn get_by_id(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(self.index_of(a)?, self.index_of(b)?))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Provenance written into the comment line of an overlap file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixHeader {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub extra: Vec<(String, String)>,
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_overlap_matrix(path: impl AsRef<Path>, m: &OverlapMatrix, header: &MatrixHeader) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!(
        "#level={} seed={} T={}",
        m.level,
        opt(&header.seed),
        opt(&header.replicates)
    );
    for (k, v) in &header.extra {
        out.push_str(&format!(" {k}={v}"));
    }
    out.push('\n');
    out.push_str("benchmark_id");
    for b in m.benchmark_ids() {
        out.push('\t');
        out.push_str(b);
    }
    out.push('\n');
    for (i, b) in m.benchmark_ids().iter().enumerate() {
        out.push_str(b);
        for j in 0..m.len() {
            out.push('\t');
            out.push_str(&m.get(i, j).to_string());
        }
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_overlap_matrix(path: impl AsRef<Path>) -> Result<(OverlapMatrix, MatrixHeader)> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let loc = |line: usize| format!("{}: line {line}", path.display());
    let first = text.lines().next().unwrap_or("");
    if !first.starts_with('#') {
        return Err(Error::parse(loc(1), "missing '#level=...' header"));
    }
    let fields = parse_header_line(first);
    let mut level = None;
    let mut header = MatrixHeader::default();
    for (k, v) in fields {
        let bad = |what: &str| Error::parse(loc(1), format!("bad {what} '{v}'"));
        match k.as_str() {
            "level" => level = Some(v.parse::<Level>()?),
            "seed" => header.seed = if v == "NA" { None } else { Some(v.parse().map_err(|_| bad("seed"))?) },
            "T" => header.replicates = if v == "NA" { None } else { Some(v.parse().map_err(|_| bad("T"))?) },
            _ => header.extra.push((k, v)),
        }
    }
    let level = level.ok_or_else(|| Error::parse(loc(1), "header has no level"))?;

    let mut rows = tsv_reader(text.as_bytes()).into_records();
    let head = rows.next().ok_or_else(|| Error::parse(loc(2), "missing column header"))??;
    if head.get(0) != Some("benchmark_id") {
        return Err(Error::parse(loc(2), "column header must start with 'benchmark_id'"));
    }
    let ids: Vec<String> = head.iter().skip(1).map(str::to_string).collect();
    let n = ids.len();
    let mut values = Vec::with_capacity(n * n);
    for (i, rec) in rows.enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if i >= n || rec.len() != n + 1 || rec[0] != ids[i] {
            return Err(Error::parse(loc(line), "row does not match the column header"));
        }
        for cell in rec.iter().skip(1) {
            values.push(
                cell.parse::<f64>()
                    .map_err(|_| Error::parse(loc(line), format!("bad value '{cell}'")))?,
            );
        }
    }
    if values.len() != n * n {
        return Err(Error::parse(loc(0), format!("expected {n} rows")));
    }
    Ok((OverlapMatrix::new(level, ids, values)?, header))
}
