//! Marginal screening of perplexity columns against a benchmark's scores.
//!
//! Two rank-based coefficients are supported:
//!
//! * **Thrush**: `Σ_{k<l} sign(y_k - y_l) · (rank(p_k) - rank(p_l))` with
//!   average ranks for tied perplexities and sign 0 for tied scores.
//! * **Pre-select**: the fraction of model pairs in which the better-scoring
//!   model has the strictly higher perplexity, so 0 means lower perplexity
//!   orders the models perfectly and 0.5 is uninformative.
//!
//! Candidates are taken from both tails of the coefficient distribution.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PerplexityMatrix;
use crate::rng::SplitMix64;
use crate::stats::{self, doubled_ranks_from_order};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Thrush,
    Preselect,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Thrush => "thrush",
            Method::Preselect => "preselect",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thrush" => Ok(Method::Thrush),
            "preselect" => Ok(Method::Preselect),
            other => Err(Error::Invalid(format!("unknown screening method '{other}'"))),
        }
    }
}

fn check_lengths(ppl: &[f64], perf: &[f64]) -> Result<()> {
    if ppl.len() != perf.len() {
        return Err(Error::Dimension(format!(
            "perplexity column has {} entries, performance vector {}",
            ppl.len(),
            perf.len()
        )));
    }
    if ppl.len() < 2 {
        return Err(Error::Invalid("need at least 2 models".into()));
    }
    Ok(())
}

/// Number of unordered model pairs, `m (m - 1) / 2`.
pub fn pair_count(m: usize) -> u64 {
    (m as u64) * (m as u64).saturating_sub(1) / 2
}

/// Per-benchmark precomputation for the Thrush coefficient.
///
/// Because the sign term is antisymmetric, the pair sum collapses to
/// `Σ_k rank(p_k) · w_k` with `w_k = Σ_{l≠k} sign(y_k - y_l)`.
#[derive(Debug, Clone)]
pub struct ThrushKernel {
    weights: Vec<i64>,
}

impl ThrushKernel {
    pub fn new(perf: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..perf.len()).collect();
        order.sort_by(|&a, &b| perf[a].total_cmp(&perf[b]));
        // w_k = #{l: y_l < y_k} - #{l: y_l > y_k}
        let m = perf.len() as i64;
        let mut weights = vec![0i64; perf.len()];
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && perf[order[end]] == perf[order[start]] {
                end += 1;
            }
            let below = start as i64;
            let above = m - end as i64;
            for &k in &order[start..end] {
                weights[k] = below - above;
            }
            start = end;
        }
        Self { weights }
    }

    /// Twice the coefficient, exact.
    pub fn eval_doubled(&self, column: &[f64], scratch: &mut Scratch) -> i64 {
        scratch.order.clear();
        scratch.order.extend(0..column.len());
        scratch
            .order
            .sort_unstable_by(|&a, &b| column[a].total_cmp(&column[b]));
        scratch.ranks.resize(column.len(), 0);
        doubled_ranks_from_order(column, &scratch.order, &mut scratch.ranks);
        scratch
            .ranks
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| r * w)
            .sum()
    }
}

/// Per-benchmark precomputation for the Pre-select coefficient.
#[derive(Debug, Clone)]
pub struct PreselectKernel {
    /// Model indices in ascending score order, ties by model index.
    order: Vec<usize>,
    raw_eq2: bool,
}

impl PreselectKernel {
    pub fn new(perf: &[f64], raw_eq2: bool) -> Self {
        let mut order: Vec<usize> = (0..perf.len()).collect();
        order.sort_by(|&a, &b| perf[a].total_cmp(&perf[b]));
        Self { order, raw_eq2 }
    }

    /// Count of qualifying pairs (before division by the pair count).
    pub fn eval_count(&self, column: &[f64]) -> u64 {
        let mut count = 0u64;
        for (a, &ka) in self.order.iter().enumerate() {
            let pa = column[ka];
            for &kb in &self.order[a + 1..] {
                let hit = if self.raw_eq2 {
                    pa > column[kb]
                } else {
                    pa < column[kb]
                };
                count += u64::from(hit);
            }
        }
        count
    }
}

#[derive(Debug, Default)]
pub struct Scratch {
    order: Vec<usize>,
    ranks: Vec<i64>,
    column: Vec<f64>,
}

pub fn thrush_correlation(ppl: &[f64], perf: &[f64]) -> Result<f64> {
    check_lengths(ppl, perf)?;
    let doubled = ThrushKernel::new(perf).eval_doubled(ppl, &mut Scratch::default());
    Ok(doubled as f64 / 2.0)
}

pub fn preselect_correlation(ppl: &[f64], perf: &[f64]) -> Result<f64> {
    preselect_correlation_with(ppl, perf, false)
}

/// Pre-select coefficient; `raw_eq2` counts pairs where the better model has
/// the *lower* perplexity instead.
pub fn preselect_correlation_with(ppl: &[f64], perf: &[f64], raw_eq2: bool) -> Result<f64> {
    check_lengths(ppl, perf)?;
    let count = PreselectKernel::new(perf, raw_eq2).eval_count(ppl);
    Ok(count as f64 / pair_count(ppl.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningOptions {
    pub alpha: f64,
    pub method: Method,
    pub seed: u64,
    pub preselect_raw_eq2: bool,
}

impl Default for ScreeningOptions {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            method: Method::Thrush,
            seed: 0,
            preselect_raw_eq2: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningResult {
    pub benchmark_id: String,
    pub options: ScreeningOptions,
    /// One coefficient per perplexity column, aligned with the matrix.
    pub coefficients: Vec<f64>,
    /// Column indices of the candidate set, in seeded shuffle order.
    pub candidates: Vec<usize>,
    pub per_tail: usize,
    /// Pair count `Z`.
    pub normalizer: u64,
}

impl ScreeningResult {
    pub fn candidate_ids<'a>(&self, matrix: &'a PerplexityMatrix) -> Vec<&'a str> {
        self.candidates
            .iter()
            .map(|&j| matrix.context_ids()[j].as_str())
            .collect()
    }

    pub fn is_candidate_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.coefficients.len()];
        for &j in &self.candidates {
            mask[j] = true;
        }
        mask
    }
}

/// Number of columns taken from each tail.
pub fn tail_size(alpha: f64, d: usize) -> Result<usize> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 0.5], got {alpha}")));
    }
    let raw = alpha * d as f64;
    if raw < 1.0 - 1e-9 {
        return Err(Error::AlphaTooSmall { alpha, d });
    }
    Ok((raw - 1e-9).ceil() as usize)
}

const CHUNK: usize = 2048;

/// Computes the chosen coefficient for every column and keeps both tails.
///
/// Work is split over disjoint column ranges; each range reports its own
/// top and bottom `k`, and the merge is a total order (value, then context
/// id), so the outcome does not depend on the number of workers.
pub fn screen_tokens(
    matrix: &PerplexityMatrix,
    perf: &[f64],
    benchmark_id: &str,
    options: ScreeningOptions,
) -> Result<ScreeningResult> {
    let m = matrix.n_models();
    let d = matrix.n_contexts();
    if perf.len() != m {
        return Err(Error::Dimension(format!(
            "performance vector has {} entries for {m} models",
            perf.len()
        )));
    }
    if let Some(bad) = perf.iter().find(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("non-finite score {bad}")));
    }
    let per_tail = tail_size(options.alpha, d)?;
    let normalizer = pair_count(m);

    let coefficients = compute_coefficients(matrix, perf, options);
    let id_ranks = matrix.context_id_ranks();

    let by_top = |a: &usize, b: &usize| {
        coefficients[*b]
            .total_cmp(&coefficients[*a])
            .then(id_ranks[*a].cmp(&id_ranks[*b]))
    };
    let by_bottom = |a: &usize, b: &usize| {
        coefficients[*a]
            .total_cmp(&coefficients[*b])
            .then(id_ranks[*a].cmp(&id_ranks[*b]))
    };

    let (tops, bottoms): (Vec<Vec<usize>>, Vec<Vec<usize>>) = (0..d)
        .into_par_iter()
        .step_by(CHUNK)
        .map(|start| {
            let range: Vec<usize> = (start..(start + CHUNK).min(d)).collect();
            (
                smallest_k(range.clone(), per_tail, &by_top),
                smallest_k(range, per_tail, &by_bottom),
            )
        })
        .unzip();
    let top = smallest_k(tops.concat(), per_tail, &by_top);
    let bottom = smallest_k(bottoms.concat(), per_tail, &by_bottom);

    let mut candidates: Vec<usize> = top.into_iter().chain(bottom).collect();
    candidates.sort_unstable();
    candidates.dedup();
    candidates.shuffle(&mut SplitMix64::new(options.seed));

    Ok(ScreeningResult {
        benchmark_id: benchmark_id.to_string(),
        options,
        coefficients,
        candidates,
        per_tail,
        normalizer,
    })
}

fn smallest_k<F>(mut items: Vec<usize>, k: usize, cmp: &F) -> Vec<usize>
where
    F: Fn(&usize, &usize) -> Ordering,
{
    if items.len() > k {
        items.select_nth_unstable_by(k, cmp);
        items.truncate(k);
    }
    items.sort_unstable_by(cmp);
    items
}

fn compute_coefficients(matrix: &PerplexityMatrix, perf: &[f64], options: ScreeningOptions) -> Vec<f64> {
    let m = matrix.n_models();
    let d = matrix.n_contexts();
    let mut coefficients = vec![0.0; d];
    match options.method {
        Method::Thrush => {
            let kernel = ThrushKernel::new(perf);
            coefficients
                .par_chunks_mut(CHUNK)
                .enumerate()
                .for_each_init(Scratch::default, |scratch, (c, out)| {
                    let base = c * CHUNK;
                    let mut column = std::mem::take(&mut scratch.column);
                    column.resize(m, 0.0);
                    for (off, slot) in out.iter_mut().enumerate() {
                        matrix.column_into(base + off, &mut column);
                        *slot = kernel.eval_doubled(&column, scratch) as f64 / 2.0;
                    }
                    scratch.column = column;
                });
        }
        Method::Preselect => {
            let kernel = PreselectKernel::new(perf, options.preselect_raw_eq2);
            let z = pair_count(m) as f64;
            coefficients
                .par_chunks_mut(CHUNK)
                .enumerate()
                .for_each_init(
                    || vec![0.0; m],
                    |column, (c, out)| {
                        let base = c * CHUNK;
                        for (off, slot) in out.iter_mut().enumerate() {
                            matrix.column_into(base + off, column);
                            *slot = kernel.eval_count(column) as f64 / z;
                        }
                    },
                );
        }
    }
    coefficients
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    pub std: f64,
    pub iqr: f64,
    pub max_minus_q99: f64,
    pub q01_minus_min: f64,
}

/// Spread of a coefficient distribution: sample std, IQR and the two tail gaps.
pub fn coefficient_dispersion(coefficients: &[f64]) -> Result<DispersionStats> {
    if coefficients.len() < 2 {
        return Err(Error::Invalid("dispersion needs at least 2 values".into()));
    }
    let mut sorted = coefficients.to_vec();
    sorted.sort_by(stats::cmp_f64);
    let q = |p| stats::quantile_sorted(&sorted, p);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    Ok(DispersionStats {
        std: stats::sample_std(coefficients),
        iqr: (q(0.75) - q(0.25)).max(0.0),
        max_minus_q99: (max - q(0.99)).max(0.0),
        q01_minus_min: (q(0.01) - min).max(0.0),
    })
}

/// Writes the per-column screening table with a `#key=value` header line.
pub fn write_screening(
    path: impl AsRef<Path>,
    result: &ScreeningResult,
    context_ids: &[String],
    config_hash: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!(
        "#method={} alpha={} seed={} Z={} benchmark={} preselect_raw_eq2={}",
        result.options.method,
        result.options.alpha,
        result.options.seed,
        result.normalizer,
        result.benchmark_id,
        result.options.preselect_raw_eq2
    );
    if let Some(h) = config_hash {
        out.push_str(&format!(" config={h}"));
    }
    out.push_str("\ncontext_id\tcoefficient\tin_candidate_set\n");
    let mask = result.is_candidate_mask();
    for (j, id) in context_ids.iter().enumerate() {
        out.push_str(&format!(
            "{id}\t{}\t{}\n",
            result.coefficients[j],
            u8::from(mask[j])
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Parsed screening table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningTable {
    pub header: Vec<(String, String)>,
    pub context_ids: Vec<String>,
    pub coefficients: Vec<f64>,
    pub in_candidate_set: Vec<bool>,
}

impl ScreeningTable {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn candidate_ids(&self) -> Vec<&str> {
        self.context_ids
            .iter()
            .zip(&self.in_candidate_set)
            .filter(|(_, c)| **c)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

pub(crate) fn parse_header_line(line: &str) -> Vec<(String, String)> {
    line.trim_start_matches('#')
        .split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn read_screening(path: impl AsRef<Path>) -> Result<ScreeningTable> {
    let path = path.as_ref();
    let text = crate::ingest::read_to_string(path)?;
    let loc = |n: usize| format!("{}: line {n}", path.display());
    let mut lines = text.lines();
    let header_line = lines.next().ok_or_else(|| Error::parse(loc(1), "empty file"))?;
    if !header_line.starts_with('#') {
        return Err(Error::parse(loc(1), "missing '#method=...' header"));
    }
    let header = parse_header_line(header_line);
    if lines.next() != Some("context_id\tcoefficient\tin_candidate_set") {
        return Err(Error::parse(loc(2), "unexpected column header"));
    }
    let mut table = ScreeningTable {
        header,
        context_ids: Vec::new(),
        coefficients: Vec::new(),
        in_candidate_set: Vec::new(),
    };
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(loc(n + 3), "expected 3 fields"));
        }
        table.context_ids.push(fields[0].to_string());
        table.coefficients.push(
            fields[1]
                .parse()
                .map_err(|_| Error::parse(loc(n + 3), "bad coefficient"))?,
        );
        table.in_candidate_set.push(match fields[2] {
            "0" => false,
            "1" => true,
            _ => return Err(Error::parse(loc(n + 3), "in_candidate_set must be 0 or 1")),
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct pair enumeration with counting ranks; shares no code with the kernel.
    fn thrush_oracle(ppl: &[f64], perf: &[f64]) -> f64 {
        let m = ppl.len();
        let rank = |k: usize| {
            let less = ppl.iter().filter(|&&p| p < ppl[k]).count() as f64;
            let eq = ppl.iter().filter(|&&p| p == ppl[k]).count() as f64;
            less + (eq + 1.0) / 2.0
        };
        let mut total = 0.0;
        for k in 0..m {
            for l in k + 1..m {
                let s = (perf[k] - perf[l]).signum() * f64::from(perf[k] != perf[l]);
                total += s * (rank(k) - rank(l));
            }
        }
        total
    }

    const PERF: [f64; 3] = [1.0, 2.0, 3.0];

    #[test]
    fn thrush_fixtures() {
        assert_eq!(thrush_correlation(&[30.0, 20.0, 10.0], &PERF).unwrap(), -4.0);
        assert_eq!(thrush_correlation(&[10.0, 20.0, 30.0], &PERF).unwrap(), 4.0);
        assert_eq!(thrush_correlation(&[5.0, 1.0, 9.0], &[0.5; 3]).unwrap(), 0.0);
    }

    #[test]
    fn thrush_half_integer_with_ties() {
        // ranks (1.5, 1.5, 3): pairs (1,2): -1*0, (1,3): -1*(-1.5), (2,3): -1*(-1.5)
        let g = thrush_correlation(&[1.0, 1.0, 2.0], &PERF).unwrap();
        assert_eq!(g, 3.0);
        let g = thrush_correlation(&[1.0, 2.0, 2.0], &[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(g, thrush_oracle(&[1.0, 2.0, 2.0], &[1.0, 3.0, 2.0]));
    }

    #[test]
    fn preselect_fixtures() {
        assert_eq!(preselect_correlation(&[30.0, 20.0, 10.0], &PERF).unwrap(), 0.0);
        assert_eq!(preselect_correlation(&[10.0, 20.0, 30.0], &PERF).unwrap(), 1.0);
        assert_eq!(preselect_correlation(&[20.0, 10.0, 30.0], &PERF).unwrap(), 2.0 / 3.0);
        // literal form flips the indicator
        assert_eq!(preselect_correlation_with(&[30.0, 20.0, 10.0], &PERF, true).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(thrush_correlation(&[1.0, 2.0], &PERF).is_err());
        assert!(preselect_correlation(&[1.0, 2.0], &PERF).is_err());
    }

    fn matrix_from_columns(columns: &[Vec<f64>]) -> PerplexityMatrix {
        let m = columns[0].len();
        let d = columns.len();
        let mut values = vec![0.0; m * d];
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * d + j] = *v;
            }
        }
        PerplexityMatrix::new(
            (0..m).map(|i| format!("m{i}")).collect(),
            (0..d).map(|j| format!("ctx_{j:05}")).collect(),
            values,
        )
        .unwrap()
    }

    fn random_matrix(m: usize, d: usize, seed: u64) -> PerplexityMatrix {
        let mut rng = SplitMix64::new(seed);
        let cols: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..m).map(|_| 1.0 + 100.0 * rng.next_f64()).collect())
            .collect();
        matrix_from_columns(&cols)
    }

    #[test]
    fn candidate_counts_follow_ceiling() {
        let perf: Vec<f64> = (0..8).map(f64::from).collect();
        let p = random_matrix(8, 1000, 1);
        let r = screen_tokens(&p, &perf, "b", ScreeningOptions::default()).unwrap();
        assert_eq!(r.candidates.len(), 20);
        let p = random_matrix(8, 100, 2);
        let r = screen_tokens(&p, &perf, "b", ScreeningOptions::default()).unwrap();
        assert_eq!((r.per_tail, r.candidates.len()), (1, 2));
        let p = random_matrix(8, 50, 3);
        let err = screen_tokens(&p, &perf, "b", ScreeningOptions::default()).unwrap_err();
        assert!(err.to_string().contains("alpha too small for d"));
    }

    #[test]
    fn tails_overlap_when_d_is_tiny() {
        let perf: Vec<f64> = (0..5).map(f64::from).collect();
        let p = random_matrix(5, 4, 4);
        let opts = ScreeningOptions { alpha: 0.5, ..Default::default() };
        let r = screen_tokens(&p, &perf, "b", opts).unwrap();
        assert_eq!(r.per_tail, 2);
        assert_eq!(r.candidates.len(), 4);
        let opts = ScreeningOptions { alpha: 0.5, ..Default::default() };
        let p = random_matrix(5, 3, 5);
        let r = screen_tokens(&p, &perf, "b", opts).unwrap();
        // two from each tail of three columns, the middle one shared
        assert_eq!(r.candidates.len(), 3);
    }

    #[test]
    fn boundary_ties_broken_by_context_id() {
        // all columns identical: every coefficient ties
        let col = vec![3.0, 1.0, 2.0, 5.0];
        let cols: Vec<Vec<f64>> = (0..10).map(|_| col.clone()).collect();
        let p = matrix_from_columns(&cols);
        let opts = ScreeningOptions { alpha: 0.1, ..Default::default() };
        let r = screen_tokens(&p, &[0.1, 0.2, 0.3, 0.4], "b", opts).unwrap();
        let mut ids = r.candidate_ids(&p);
        ids.sort();
        assert_eq!(ids, vec!["ctx_00000"]);
    }

    #[test]
    fn planted_column_is_retained() {
        let m = 32;
        let d = 10_000;
        let mut rng = SplitMix64::new(99);
        let perf: Vec<f64> = (0..m).map(|_| rng.next_f64()).collect();
        let mut cols: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..m).map(|_| 1.0 + 50.0 * rng.next_f64()).collect())
            .collect();
        cols[1234] = perf.iter().map(|y| 10.0 - 5.0 * y).collect();
        let p = matrix_from_columns(&cols);
        for method in [Method::Thrush, Method::Preselect] {
            let opts = ScreeningOptions { method, ..Default::default() };
            let r = screen_tokens(&p, &perf, "b", opts).unwrap();
            assert!(r.candidates.contains(&1234), "{method}");
        }
    }

    #[test]
    fn independent_of_worker_count() {
        let perf: Vec<f64> = (0..12).map(|i| (i * 7 % 12) as f64).collect();
        let p = random_matrix(12, 9000, 8);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| screen_tokens(&p, &perf, "b", ScreeningOptions::default()).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn shuffle_depends_only_on_seed() {
        let perf: Vec<f64> = (0..6).map(f64::from).collect();
        let p = random_matrix(6, 2000, 6);
        let a = screen_tokens(&p, &perf, "b", ScreeningOptions { seed: 1, ..Default::default() }).unwrap();
        let b = screen_tokens(&p, &perf, "b", ScreeningOptions { seed: 2, ..Default::default() }).unwrap();
        let mut sa = a.candidates.clone();
        let mut sb = b.candidates.clone();
        sa.sort();
        sb.sort();
        assert_eq!(sa, sb);
    }

    #[test]
    fn dispersion_fixtures() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = coefficient_dispersion(&v).unwrap();
        assert!((s.std - 29.011_491_975_882_016).abs() < 1e-9);
        assert!((s.iqr - 49.5).abs() < 1e-12);
        assert!((s.max_minus_q99 - 0.99).abs() < 1e-9);
        assert!((s.q01_minus_min - 0.99).abs() < 1e-9);

        let s = coefficient_dispersion(&[4.0; 9]).unwrap();
        assert_eq!((s.std, s.iqr, s.max_minus_q99, s.q01_minus_min), (0.0, 0.0, 0.0, 0.0));

        // two points: quantiles interpolate along the single gap
        let s = coefficient_dispersion(&[0.0, 10.0]).unwrap();
        assert!((s.std - 50f64.sqrt()).abs() < 1e-12);
        assert!((s.iqr - 5.0).abs() < 1e-12);
        assert!((s.max_minus_q99 - 0.1).abs() < 1e-12);
        assert!((s.q01_minus_min - 0.1).abs() < 1e-12);

        assert!(coefficient_dispersion(&[1.0]).is_err());
    }

    #[test]
    fn screening_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let perf: Vec<f64> = (0..5).map(f64::from).collect();
        let p = random_matrix(5, 200, 10);
        let r = screen_tokens(&p, &perf, "bench", ScreeningOptions::default()).unwrap();
        let path = dir.path().join("s.tsv");
        write_screening(&path, &r, p.context_ids(), Some("abc")).unwrap();
        let t = read_screening(&path).unwrap();
        assert_eq!(t.coefficients, r.coefficients);
        assert_eq!(t.header_value("Z"), Some("10"));
        assert_eq!(t.header_value("config"), Some("abc"));
        let mut ids = t.candidate_ids();
        ids.sort();
        let mut expect = r.candidate_ids(&p);
        expect.sort();
        assert_eq!(ids, expect);
    }

    fn distinct_vec(m: usize) -> impl Strategy<Value = Vec<f64>> {
        Just((0..m).collect::<Vec<usize>>())
            .prop_shuffle()
            .prop_map(|v| v.into_iter().map(|x| x as f64 + 1.0).collect())
    }

    proptest! {
        #[test]
        fn thrush_matches_pair_enumeration(
            (ppl, perf) in (2usize..12).prop_flat_map(|m| (
                proptest::collection::vec(0u8..6, m).prop_map(|v| v.into_iter().map(f64::from).collect::<Vec<_>>()),
                proptest::collection::vec(0u8..4, m).prop_map(|v| v.into_iter().map(f64::from).collect::<Vec<_>>()),
            ))
        ) {
            prop_assert_eq!(thrush_correlation(&ppl, &perf).unwrap(), thrush_oracle(&ppl, &perf));
        }

        #[test]
        fn coefficients_are_rank_invariant(
            ppl in proptest::collection::vec(0.1f64..100.0, 7),
            perf in proptest::collection::vec(0.0f64..1.0, 7),
        ) {
            let transformed: Vec<f64> = ppl.iter().map(|p| p.ln() * 3.0 + p.powi(3)).collect();
            prop_assert_eq!(thrush_correlation(&ppl, &perf).unwrap(), thrush_correlation(&transformed, &perf).unwrap());
            prop_assert_eq!(preselect_correlation(&ppl, &perf).unwrap(), preselect_correlation(&transformed, &perf).unwrap());
        }

        #[test]
        fn antisymmetry_without_ties(ppl in distinct_vec(9), perf in distinct_vec(9)) {
            let negated: Vec<f64> = perf.iter().map(|y| -y).collect();
            prop_assert_eq!(
                thrush_correlation(&ppl, &perf).unwrap(),
                -thrush_correlation(&ppl, &negated).unwrap()
            );
            let sum = preselect_correlation(&ppl, &perf).unwrap() + preselect_correlation(&ppl, &negated).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn thrush_within_bounds(ppl in proptest::collection::vec(0.1f64..10.0, 2..15), seed in any::<u64>()) {
            let m = ppl.len();
            let mut rng = SplitMix64::new(seed);
            let perf: Vec<f64> = (0..m).map(|_| rng.next_f64()).collect();
            let bound = (pair_count(m) * (m as u64 - 1)) as f64;
            let g = thrush_correlation(&ppl, &perf).unwrap();
            prop_assert!(g.abs() <= bound);
            let e = preselect_correlation(&ppl, &perf).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
