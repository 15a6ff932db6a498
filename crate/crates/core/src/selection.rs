//! Forward selection of screened candidates under AIC.
//!
//! The search starts from the intercept-only model and greedily adds the
//! candidate with the lowest AIC, accepting it only when it beats the
//! current AIC by more than `delta`. Candidate scoring is incremental: each
//! candidate column is kept orthogonalized against the current design, so a
//! round costs `O(m)` per candidate. Every accepted step is confirmed with a
//! full least-squares fit.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PerplexityMatrix;
use crate::screening::{screen_tokens, Method, ScreeningOptions};

/// Residual sum of squares is floored here before taking the log.
pub const RSS_FLOOR: f64 = 1e-12;
/// Designs whose singular-value ratio falls below this are rejected.
pub const COLLINEAR_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub rss: f64,
    pub aic: f64,
}

/// Gaussian AIC up to constants: `m ln(max(rss, ε) / m) + 2 (k + 1)`.
pub fn aic(m: usize, rss: f64, k: usize) -> f64 {
    let m = m as f64;
    m * (rss.max(RSS_FLOOR) / m).ln() + 2.0 * (k as f64 + 1.0)
}

/// Least squares with intercept, reporting RSS and AIC.
///
/// Columns are scaled to unit norm before the rank check, so the
/// singular-value ratio does not depend on the units of the perplexities.
pub fn ols_aic(columns: &[&[f64]], y: &[f64]) -> Result<OlsFit> {
    let m = y.len();
    let k = columns.len();
    if m < 3 || k > m - 2 {
        return Err(Error::Invalid(format!(
            "{k} columns leave no residual degrees of freedom with {m} observations"
        )));
    }
    if let Some(c) = columns.iter().find(|c| c.len() != m) {
        return Err(Error::Dimension(format!("column of length {} for {m} observations", c.len())));
    }

    let p = k + 1;
    let mut scales = vec![(m as f64).sqrt(); p];
    for (j, col) in columns.iter().enumerate() {
        scales[j + 1] = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    if scales.iter().any(|s| *s == 0.0 || !s.is_finite()) {
        return Err(Error::Collinear { ratio: 0.0 });
    }
    let design = DMatrix::from_fn(m, p, |i, j| {
        let v = if j == 0 { 1.0 } else { columns[j - 1][i] };
        v / scales[j]
    });

    let sv = design.singular_values();
    let max = sv.max();
    let min = sv.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio < COLLINEAR_RATIO {
        return Err(Error::Collinear { ratio });
    }

    let target = DVector::from_column_slice(y);
    let qr = design.clone().qr();
    let qty = qr.q().transpose() * &target;
    let beta = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or(Error::Collinear { ratio })?;
    let residual = &target - &design * &beta;
    let rss = residual.norm_squared();

    Ok(OlsFit {
        intercept: beta[0] / scales[0],
        coefficients: (1..p).map(|j| beta[j] / scales[j]).collect(),
        rss,
        aic: aic(m, rss, k),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedToken {
    pub context_id: String,
    pub coefficient: f64,
    /// 1-based acceptance step.
    pub step: usize,
    pub aic_after: f64,
}

/// A benchmark signature: the selected contexts, their fitted coefficients
/// and the AIC trajectory, plus the screening provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub benchmark_id: String,
    pub method: Option<Method>,
    pub alpha: Option<f64>,
    pub delta: f64,
    pub seed: Option<u64>,
    pub intercept: f64,
    pub selected: Vec<SelectedToken>,
    pub pool_size: usize,
    pub skips: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Signature {
    pub fn context_ids(&self) -> Vec<&str> {
        self.selected.iter().map(|s| s.context_id.as_str()).collect()
    }

    pub fn aic_trajectory(&self) -> Vec<f64> {
        self.selected.iter().map(|s| s.aic_after).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn write_signature(path: impl AsRef<Path>, sig: &Signature) -> Result<()> {
    let path = path.as_ref();
    let body = sig.to_json()?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(body.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_signature(path: impl AsRef<Path>) -> Result<Signature> {
    let path = path.as_ref();
    let text = crate::ingest::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub id: &'a str,
    pub column: &'a [f64],
}

struct CandidateState {
    index: usize,
    residual: Vec<f64>,
    norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(target: &mut [f64], scale: f64, v: &[f64]) {
    for (t, x) in target.iter_mut().zip(v) {
        *t -= scale * x;
    }
}

/// Greedy AIC forward selection over `candidates`.
///
/// Candidates that are collinear with the current design are dropped and
/// logged in `skips`; selection never grows past `m - 2` columns.
pub fn forward_select(
    benchmark_id: &str,
    candidates: &[Candidate<'_>],
    y: &[f64],
    delta: f64,
) -> Result<Signature> {
    let m = y.len();
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Invalid(format!("delta must be a finite value >= 0, got {delta}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite target value".into()));
    }
    for c in candidates {
        if c.column.len() != m {
            return Err(Error::Dimension(format!(
                "candidate '{}' has {} values for {m} observations",
                c.id,
                c.column.len()
            )));
        }
    }

    let baseline = ols_aic(&[], y)?;
    let mut best_aic = baseline.aic;

    // Orthonormal basis of the current design, starting with the intercept.
    let unit = 1.0 / (m as f64).sqrt();
    let mut basis: Vec<Vec<f64>> = vec![vec![unit; m]];
    let mean_y = y.iter().sum::<f64>() / m as f64;
    let mut resid: Vec<f64> = y.iter().map(|v| v - mean_y).collect();

    let mut active: Vec<CandidateState> = candidates
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let mean = c.column.iter().sum::<f64>() / m as f64;
            CandidateState {
                index,
                residual: c.column.iter().map(|v| v - mean).collect(),
                norm: c.column.iter().map(|v| v * v).sum::<f64>().sqrt(),
            }
        })
        .collect();

    let mut selected: Vec<usize> = Vec::new();
    let mut trajectory: Vec<f64> = Vec::new();
    let mut skips: Vec<String> = Vec::new();

    while selected.len() + 2 <= m - 1 && !active.is_empty() {
        // drop candidates that have become linear combinations of the design
        let mut kept = Vec::with_capacity(active.len());
        for state in active.drain(..) {
            let rnorm = state.residual.iter().map(|v| v * v).sum::<f64>().sqrt();
            if state.norm == 0.0 || rnorm / state.norm < COLLINEAR_RATIO {
                skips.push(candidates[state.index].id.to_string());
            } else {
                kept.push(state);
            }
        }
        active = kept;

        let mut accepted = None;
        while !active.is_empty() {
            let (pos, _) = active
                .par_iter()
                .enumerate()
                .map(|(pos, s)| {
                    let proj = dot(&s.residual, &resid);
                    let rr = dot(&s.residual, &s.residual);
                    (pos, -(proj * proj) / rr)
                })
                .reduce_with(|a, b| {
                    let ida = candidates[active[a.0].index].id;
                    let idb = candidates[active[b.0].index].id;
                    match a.1.total_cmp(&b.1).then(ida.cmp(idb)) {
                        std::cmp::Ordering::Greater => b,
                        _ => a,
                    }
                })
                .expect("non-empty");

            let idx = active[pos].index;
            let mut cols: Vec<&[f64]> = selected.iter().map(|&s| candidates[s].column).collect();
            cols.push(candidates[idx].column);
            match ols_aic(&cols, y) {
                Ok(fit) => {
                    accepted = Some((pos, fit));
                    break;
                }
                Err(Error::Collinear { .. }) => {
                    skips.push(candidates[idx].id.to_string());
                    active.swap_remove(pos);
                }
                Err(e) => return Err(e),
            }
        }

        let Some((pos, fit)) = accepted else { break };
        if !(fit.aic < best_aic - delta) {
            break;
        }

        let state = active.swap_remove(pos);
        let mut q = state.residual;
        for b in &basis {
            let c = dot(b, &q);
            axpy(&mut q, c, b);
        }
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        q.iter_mut().for_each(|v| *v /= qn);

        let c = dot(&q, &resid);
        axpy(&mut resid, c, &q);
        active.par_iter_mut().for_each(|s| {
            let c = dot(&q, &s.residual);
            axpy(&mut s.residual, c, &q);
        });
        basis.push(q);

        selected.push(state.index);
        trajectory.push(fit.aic);
        best_aic = fit.aic;
    }

    let final_fit = if selected.is_empty() {
        baseline
    } else {
        let cols: Vec<&[f64]> = selected.iter().map(|&s| candidates[s].column).collect();
        ols_aic(&cols, y)?
    };

    let selected = selected
        .iter()
        .zip(&trajectory)
        .enumerate()
        .map(|(step, (&idx, &aic_after))| SelectedToken {
            context_id: candidates[idx].id.to_string(),
            coefficient: final_fit.coefficients[step],
            step: step + 1,
            aic_after,
        })
        .collect();

    Ok(Signature {
        benchmark_id: benchmark_id.to_string(),
        method: None,
        alpha: None,
        delta,
        seed: None,
        intercept: final_fit.intercept,
        selected,
        pool_size: candidates.len(),
        skips,
        config_hash: None,
    })
}

/// Screens every column, then runs forward selection on the candidates.
pub fn mine_signature(
    matrix: &PerplexityMatrix,
    perf: &[f64],
    benchmark_id: &str,
    screening: ScreeningOptions,
    delta: f64,
) -> Result<Signature> {
    let result = screen_tokens(matrix, perf, benchmark_id, screening)?;
    select_from_columns(matrix, &result.candidates, perf, benchmark_id, screening, delta)
}

/// Forward selection over the given matrix columns, recording provenance.
pub fn select_from_columns(
    matrix: &PerplexityMatrix,
    columns: &[usize],
    perf: &[f64],
    benchmark_id: &str,
    screening: ScreeningOptions,
    delta: f64,
) -> Result<Signature> {
    if columns.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let data: Vec<Vec<f64>> = columns.iter().map(|&j| matrix.column(j)).collect();
    let candidates: Vec<Candidate<'_>> = columns
        .iter()
        .zip(&data)
        .map(|(&j, col)| Candidate {
            id: matrix.context_ids()[j].as_str(),
            column: col,
        })
        .collect();
    let mut sig = forward_select(benchmark_id, &candidates, perf, delta)?;
    sig.method = Some(screening.method);
    sig.alpha = Some(screening.alpha);
    sig.seed = Some(screening.seed);
    Ok(sig)
}
