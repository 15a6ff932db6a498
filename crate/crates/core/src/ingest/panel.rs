use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{first_duplicate, tsv_reader};

/// Models × benchmarks table of scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformancePanel {
    model_ids: Vec<String>,
    benchmark_ids: Vec<String>,
    scores: Vec<f64>,
    benchmark_index: HashMap<String, usize>,
}

impl PerformancePanel {
    pub fn new(model_ids: Vec<String>, benchmark_ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        let (m, n) = (model_ids.len(), benchmark_ids.len());
        if scores.len() != m * n {
            return Err(Error::Dimension(format!(
                "{} scores for {m} models x {n} benchmarks",
                scores.len()
            )));
        }
        if let Some(dup) = first_duplicate(&model_ids) {
            return Err(Error::Invalid(format!("duplicate model id '{dup}'")));
        }
        if let Some(dup) = first_duplicate(&benchmark_ids) {
            return Err(Error::Invalid(format!("duplicate benchmark id '{dup}'")));
        }
        for (k, &s) in scores.iter().enumerate() {
            if !(s.is_finite() && (0.0..=1.0).contains(&s)) {
                return Err(Error::Invalid(format!(
                    "score {s} for model '{}' on benchmark '{}' is outside [0, 1]",
                    model_ids[k / n],
                    benchmark_ids[k % n]
                )));
            }
        }
        let benchmark_index = benchmark_ids
            .iter()
            .enumerate()
            .map(|(j, b)| (b.clone(), j))
            .collect();
        Ok(Self {
            model_ids,
            benchmark_ids,
            scores,
            benchmark_index,
        })
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn benchmark_ids(&self) -> &[String] {
        &self.benchmark_ids
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_benchmarks(&self) -> usize {
        self.benchmark_ids.len()
    }

    pub fn score(&self, model: usize, benchmark: usize) -> f64 {
        self.scores[model * self.benchmark_ids.len() + benchmark]
    }

    pub fn benchmark_index(&self, id: &str) -> Option<usize> {
        self.benchmark_index.get(id).copied()
    }

    /// Score vector of one benchmark across all models.
    pub fn column(&self, benchmark: usize) -> Vec<f64> {
        (0..self.n_models()).map(|i| self.score(i, benchmark)).collect()
    }

    pub fn column_by_id(&self, id: &str) -> Result<Vec<f64>> {
        self.benchmark_index(id)
            .map(|j| self.column(j))
            .ok_or_else(|| Error::Invalid(format!("benchmark '{id}' not in performance panel")))
    }
}

pub fn load_performance_panel(path: impl AsRef<Path>) -> Result<PerformancePanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let loc = |row: usize| format!("{}: row {row}", path.display());
    let mut r = tsv_reader(file);
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::parse(loc(1), "empty panel file"))??;
    if header.get(0) != Some("model_id") {
        return Err(Error::parse(loc(1), "first column must be 'model_id'"));
    }
    let benchmark_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = benchmark_ids.len();
    let mut model_ids = Vec::new();
    let mut scores = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(Error::parse(
                loc(row + 2),
                format!("missing cell: expected {} fields, got {}", n + 1, rec.len()),
            ));
        }
        model_ids.push(rec[0].to_string());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            if cell.trim().is_empty() {
                return Err(Error::parse(
                    loc(row + 2),
                    format!("missing cell for benchmark '{}'", benchmark_ids[j]),
                ));
            }
            scores.push(cell.trim().parse().map_err(|_| {
                Error::parse(loc(row + 2), format!("bad score '{cell}'"))
            })?);
        }
    }
    PerformancePanel::new(model_ids, benchmark_ids, scores)
}

pub fn write_performance_panel(path: impl AsRef<Path>, panel: &PerformancePanel) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("model_id");
    for b in panel.benchmark_ids() {
        out.push('\t');
        out.push_str(b);
    }
    out.push('\n');
    for (i, model) in panel.model_ids().iter().enumerate() {
        out.push_str(model);
        for j in 0..panel.n_benchmarks() {
            out.push('\t');
            out.push_str(&panel.score(i, j).to_string());
        }
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("panel.tsv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn full_size_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("model_id");
        for j in 0..88 {
            body.push_str(&format!("\tbench_{j:02}"));
        }
        body.push('\n');
        for i in 0..32 {
            body.push_str(&format!("model_{i:02}"));
            for j in 0..88 {
                body.push_str(&format!("\t{}", ((i * 7 + j * 3) % 100) as f64 / 100.0));
            }
            body.push('\n');
        }
        let panel = load_performance_panel(write(&dir, &body)).unwrap();
        assert_eq!((panel.n_models(), panel.n_benchmarks()), (32, 88));
        assert_eq!(panel.score(1, 2), 0.13);
    }

    #[test]
    fn rejects_out_of_range_missing_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_performance_panel(write(&dir, "model_id\ta\tb\nm1\t1.2\t0.5\n")).unwrap_err();
        assert!(err.to_string().contains("outside [0, 1]"), "{err}");
        let err = load_performance_panel(write(&dir, "model_id\ta\tb\nm1\t\t0.5\n")).unwrap_err();
        assert!(err.to_string().contains("missing cell"), "{err}");
        let err = load_performance_panel(write(&dir, "model_id\ta\tb\nm1\t0.5\n")).unwrap_err();
        assert!(err.to_string().contains("missing cell"), "{err}");
        let err = load_performance_panel(write(&dir, "model_id\ta\tb\nm1\t0.1\t0.5\nm1\t0.2\t0.3\n"))
            .unwrap_err();
        assert!(err.to_string().contains("duplicate model"), "{err}");
    }

    #[test]
    fn writer_is_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let body = "model_id\ta\tb\nm1\t0.25\t1\nm2\t0\t0.125\n";
        let panel = load_performance_panel(write(&dir, body)).unwrap();
        let out = dir.path().join("out.tsv");
        write_performance_panel(&out, &panel).unwrap();
        assert_eq!(std::fs::read_to_string(out).unwrap(), body);
    }
}
