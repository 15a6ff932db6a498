use std::collections::HashMap;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

use super::{first_duplicate, tsv_reader};

pub const BINARY_MAGIC: &[u8; 5] = b"SIGP1";

/// Models × token-contexts matrix of perplexities, stored row-major.
#[derive(Debug, Clone)]
pub struct PerplexityMatrix {
    model_ids: Vec<String>,
    context_ids: Vec<String>,
    values: Vec<f64>,
    context_index: HashMap<String, usize>,
    id_ranks: OnceLock<Vec<u32>>,
}

impl PartialEq for PerplexityMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.model_ids == other.model_ids
            && self.context_ids == other.context_ids
            && self.values == other.values
    }
}

impl PerplexityMatrix {
    /// Validates and builds a matrix from row-major `values`.
    pub fn new(model_ids: Vec<String>, context_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let (m, d) = (model_ids.len(), context_ids.len());
        if values.len() != m * d {
            return Err(Error::Dimension(format!(
                "{} values for {m} models x {d} contexts",
                values.len()
            )));
        }
        if m < 2 {
            return Err(Error::Invalid(format!("need at least 2 models, found {m}")));
        }
        if let Some(dup) = first_duplicate(&model_ids) {
            return Err(Error::Invalid(format!("duplicate model id '{dup}'")));
        }
        if let Some(dup) = first_duplicate(&context_ids) {
            return Err(Error::Invalid(format!("duplicate context id '{dup}'")));
        }
        for (k, &v) in values.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::NonPositivePerplexity {
                    model: model_ids[k / d].clone(),
                    context: context_ids[k % d].clone(),
                    value: v,
                });
            }
        }
        let context_index = context_ids
            .iter()
            .enumerate()
            .map(|(j, id)| (id.clone(), j))
            .collect();
        Ok(Self {
            model_ids,
            context_ids,
            values,
            context_index,
            id_ranks: OnceLock::new(),
        })
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn context_ids(&self) -> &[String] {
        &self.context_ids
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_contexts(&self) -> usize {
        self.context_ids.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, model: usize, context: usize) -> f64 {
        self.values[model * self.context_ids.len() + context]
    }

    pub fn row(&self, model: usize) -> &[f64] {
        let d = self.context_ids.len();
        &self.values[model * d..(model + 1) * d]
    }

    pub fn column(&self, context: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_models()];
        self.column_into(context, &mut out);
        out
    }

    #[inline]
    pub fn column_into(&self, context: usize, out: &mut [f64]) {
        let d = self.context_ids.len();
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.values[i * d + context];
        }
    }

    /// Position of each context id in ascending string order.
    pub fn context_id_ranks(&self) -> &[u32] {
        self.id_ranks.get_or_init(|| {
            let mut order: Vec<usize> = (0..self.n_contexts()).collect();
            order.sort_by(|&a, &b| self.context_ids[a].cmp(&self.context_ids[b]));
            let mut ranks = vec![0u32; order.len()];
            for (r, &j) in order.iter().enumerate() {
                ranks[j] = r as u32;
            }
            ranks
        })
    }

    pub fn context_index(&self, id: &str) -> Option<usize> {
        self.context_index.get(id).copied()
    }

    /// Resolves context ids to column indices.
    pub fn indices_of<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.context_index(id.as_ref()).ok_or_else(|| {
                    Error::Invalid(format!("context '{}' not in perplexity matrix", id.as_ref()))
                })
            })
            .collect()
    }

    /// Applies `f(model_index, value)` to every cell, re-validating the result.
    pub fn map_rows(&self, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let d = self.n_contexts();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k / d, v))
            .collect();
        Self::new(self.model_ids.clone(), self.context_ids.clone(), values)
    }
}

/// Reads either the TSV or the `SIGP1` binary format, chosen by magic bytes.
pub fn load_perplexity_matrix(path: impl AsRef<Path>) -> Result<PerplexityMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(&bytes).map_err(|e| relocate(e, path))
    } else {
        read_text(bytes.as_slice()).map_err(|e| relocate(e, path))
    }
}

fn relocate(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    }
}

fn read_text<R: Read>(reader: R) -> Result<PerplexityMatrix> {
    let mut r = tsv_reader(reader);
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::parse("header", "empty perplexity file"))??;
    if header.get(0) != Some("model_id") {
        return Err(Error::parse("header", "first column must be 'model_id'"));
    }
    let context_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let d = context_ids.len();
    let mut model_ids = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec?;
        let loc = format!("row {}", row + 2);
        if rec.len() != d + 1 {
            return Err(Error::Dimension(format!(
                "{loc}: expected {} fields, got {}",
                d + 1,
                rec.len()
            )));
        }
        model_ids.push(rec[0].to_string());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::parse(
                    loc.clone(),
                    format!("bad number '{cell}' for context '{}'", context_ids[j]),
                )
            })?;
            values.push(v);
        }
    }
    PerplexityMatrix::new(model_ids, context_ids, values)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::parse(format!("byte {}", self.pos), "truncated binary file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn id_table(&mut self, expected: usize, what: &str) -> Result<Vec<String>> {
        let count = self.u32()? as usize;
        if count != expected {
            return Err(Error::Dimension(format!(
                "{what} table holds {count} ids, header declares {expected}"
            )));
        }
        (0..count)
            .map(|_| {
                let len = self.u32()? as usize;
                let raw = self.take(len)?;
                String::from_utf8(raw.to_vec())
                    .map_err(|_| Error::parse(format!("byte {}", self.pos), "id is not UTF-8"))
            })
            .collect()
    }
}

fn read_binary(bytes: &[u8]) -> Result<PerplexityMatrix> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.take(BINARY_MAGIC.len())?;
    let m = cur.u32()? as usize;
    let d = usize::try_from(cur.u64()?)
        .map_err(|_| Error::Dimension("context count overflows usize".into()))?;
    let model_ids = cur.id_table(m, "model")?;
    let context_ids = cur.id_table(d, "context")?;
    let payload = cur.take(m.checked_mul(d).and_then(|n| n.checked_mul(8)).ok_or_else(|| {
        Error::Dimension("matrix size overflows".into())
    })?)?;
    if cur.pos != bytes.len() {
        return Err(Error::Dimension(format!(
            "{} trailing bytes after the value payload",
            bytes.len() - cur.pos
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PerplexityMatrix::new(model_ids, context_ids, values)
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub fn write_perplexity_text(path: impl AsRef<Path>, matrix: &PerplexityMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(write_err(path))?;
    let mut w = BufWriter::new(file);
    let mut line = String::from("model_id");
    for id in matrix.context_ids() {
        line.push('\t');
        line.push_str(id);
    }
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(write_err(path))?;
    for (i, model) in matrix.model_ids().iter().enumerate() {
        let mut line = model.clone();
        for v in matrix.row(i) {
            line.push('\t');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(write_err(path))?;
    }
    w.flush().map_err(write_err(path))
}

pub fn write_perplexity_binary(path: impl AsRef<Path>, matrix: &PerplexityMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(write_err(path))?;
    let mut w = BufWriter::new(file);
    let m = u32::try_from(matrix.n_models())
        .map_err(|_| Error::Dimension("too many models for SIGP1".into()))?;
    w.write_all(BINARY_MAGIC).map_err(write_err(path))?;
    w.write_all(&m.to_le_bytes()).map_err(write_err(path))?;
    w.write_all(&(matrix.n_contexts() as u64).to_le_bytes())
        .map_err(write_err(path))?;
    for ids in [matrix.model_ids(), matrix.context_ids()] {
        w.write_all(&(ids.len() as u32).to_le_bytes()).map_err(write_err(path))?;
        for id in ids {
            w.write_all(&(id.len() as u32).to_le_bytes()).map_err(write_err(path))?;
            w.write_all(id.as_bytes()).map_err(write_err(path))?;
        }
    }
    for v in matrix.values() {
        w.write_all(&v.to_le_bytes()).map_err(write_err(path))?;
    }
    w.flush().map_err(write_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn text_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        std::fs::write(
            &path,
            "model_id\tctx_a\tctx_b\tctx_c\tctx_d\nm1\t1\t2\t3\t4\nm2\t5\t6\t7\t8\nm3\t9.5\t10\t11\t12\n",
        )
        .unwrap();
        let p = load_perplexity_matrix(&path).unwrap();
        assert_eq!((p.n_models(), p.n_contexts()), (3, 4));
        assert_eq!(p.get(2, 0), 9.5);
        assert_eq!(p.column(1), vec![2.0, 6.0, 10.0]);
    }

    #[test]
    fn binary_twin_matches_text() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f64> = (1..=6).map(|k| k as f64 * 1.25).collect();
        let p = PerplexityMatrix::new(ids("m", 2), ids("ctx_", 3), values).unwrap();
        write_perplexity_binary(dir.path().join("p.bin"), &p).unwrap();
        write_perplexity_text(dir.path().join("p.tsv"), &p).unwrap();
        let raw = std::fs::read(dir.path().join("p.bin")).unwrap();
        assert_eq!(&raw[..5], b"SIGP1");
        assert_eq!(u32::from_le_bytes(raw[5..9].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(raw[9..17].try_into().unwrap()), 3);
        let a = load_perplexity_matrix(dir.path().join("p.bin")).unwrap();
        let b = load_perplexity_matrix(dir.path().join("p.tsv")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, p);
    }

    #[test]
    fn rejects_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        for (cell, needle) in [("0.0", "non-positive"), ("NaN", "non-positive"), ("inf", "non-positive"), ("-2", "non-positive")] {
            std::fs::write(&path, format!("model_id\tc1\tc2\nm1\t1\t{cell}\nm2\t1\t1\n")).unwrap();
            let err = load_perplexity_matrix(&path).unwrap_err().to_string();
            assert!(err.contains(needle) && err.contains("'m1'") && err.contains("'c2'"), "{err}");
        }
    }

    #[test]
    fn rejects_duplicates_and_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        std::fs::write(&path, "model_id\tc1\tc1\nm1\t1\t2\nm2\t1\t1\n").unwrap();
        assert!(load_perplexity_matrix(&path).unwrap_err().to_string().contains("duplicate"));
        std::fs::write(&path, "model_id\tc1\tc2\nm1\t1\t2\nm1\t1\t1\n").unwrap();
        assert!(load_perplexity_matrix(&path).unwrap_err().to_string().contains("duplicate"));
        std::fs::write(&path, "model_id\tc1\tc2\nm1\t1\nm2\t1\t1\n").unwrap();
        assert!(load_perplexity_matrix(&path).unwrap_err().to_string().contains("dimension"));
    }

    #[test]
    fn rejects_truncated_binary() {
        let dir = tempfile::tempdir().unwrap();
        let p = PerplexityMatrix::new(ids("m", 2), ids("c", 3), vec![1.0; 6]).unwrap();
        let path = dir.path().join("p.bin");
        write_perplexity_binary(&path, &p).unwrap();
        let mut raw = std::fs::read(&path).unwrap();
        raw.truncate(raw.len() - 3);
        std::fs::write(&path, &raw).unwrap();
        assert!(load_perplexity_matrix(&path).is_err());
    }

    #[test]
    fn canonical_text_is_reproduced() {
        let dir = tempfile::tempdir().unwrap();
        let src = "model_id\tc1\tc2\nm1\t1.5\t0.001\nm2\t3\t1e-7\n";
        let canonical = "model_id\tc1\tc2\nm1\t1.5\t0.001\nm2\t3\t0.0000001\n";
        std::fs::write(dir.path().join("a.tsv"), src).unwrap();
        let p = load_perplexity_matrix(dir.path().join("a.tsv")).unwrap();
        write_perplexity_text(dir.path().join("b.tsv"), &p).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("b.tsv")).unwrap(), canonical);
        let q = load_perplexity_matrix(dir.path().join("b.tsv")).unwrap();
        write_perplexity_text(dir.path().join("c.tsv"), &q).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("c.tsv")).unwrap(), canonical);
    }
}
