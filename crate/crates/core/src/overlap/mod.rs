//! Pairwise benchmark overlap at the semantic, performance and signature
//! levels.

mod encoder;
mod matrix;

use std::collections::HashMap;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{PerformancePanel, PerplexityMatrix, QuestionSet};
use crate::rng::{derive_seed, SplitMix64};
use crate::stats::{average_ranks, mean, pearson, sample_std};

pub use encoder::{
    connect, cosine, handle_line, mock_embed, serve_http, serve_lines, EmbedRequest, EmbedResponse, Embedding,
    Encoder, EncoderInfo, ErrorResponse, ExecEncoder, HttpEncoder, HttpServer, MockEncoder, MAX_BATCH, MOCK_DIM,
    MOCK_MAX_LENGTH,
};
pub use matrix::{read_overlap_matrix, write_overlap_matrix, Level, MatrixHeader, OverlapMatrix};

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("spearman of lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Invalid("spearman needs at least two observations".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("spearman of non-finite values".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b)).ok_or(Error::ZeroRankVariance)
}

pub fn performance_overlap(panel: &PerformancePanel, a: &str, b: &str) -> Result<f64> {
    spearman(&panel.column_by_id(a)?, &panel.column_by_id(b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Overrides the encoder-declared truncation limit, in characters.
    pub truncation_limit: Option<usize>,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            replicates: 1000,
            seed: 0,
            truncation_limit: None,
        }
    }
}

const EMBED_BATCH: usize = 64;

fn truncate_chars(text: &str, limit: usize) -> &str {
    match text.char_indices().nth(limit) {
        Some((cut, _)) => &text[..cut],
        None => text,
    }
}

/// Bootstrapped similarity of two question sets.
///
/// The smaller set is concatenated and embedded once; each replicate draws
/// that many questions from the larger set without replacement, joins them
/// with single spaces in draw order, truncates to the limit and embeds the
/// result. The score is the mean cosine over replicates. Equal-sized sets
/// treat the lexicographically smaller id as the smaller set.
pub fn semantic_overlap(qa: &QuestionSet, qb: &QuestionSet, cfg: &SemanticConfig, encoder: &dyn Encoder) -> Result<f64> {
    if cfg.replicates == 0 {
        return Err(Error::Invalid("replicates must be at least 1".into()));
    }
    if qa.is_empty() || qb.is_empty() {
        return Err(Error::Invalid("semantic overlap of an empty question set".into()));
    }
    let a_smaller = qa.len() < qb.len() || (qa.len() == qb.len() && qa.benchmark_id <= qb.benchmark_id);
    let (small, large) = if a_smaller { (qa, qb) } else { (qb, qa) };
    let limit = match cfg.truncation_limit {
        Some(l) => l,
        None => encoder.info().map_err(|e| Error::Encoder { replicate: 0, message: e.to_string() })?.max_length,
    };
    if limit == 0 {
        return Err(Error::Invalid("truncation limit must be at least 1".into()));
    }

    let prepare = |text: String, replicate: usize| -> Result<String> {
        let cut = truncate_chars(&text, limit);
        if cut.trim().is_empty() {
            return Err(Error::Encoder {
                replicate,
                message: "truncation left no text".into(),
            });
        }
        Ok(cut.to_string())
    };

    let anchor_text = prepare(small.questions.join(" "), 0)?;
    let anchor = encoder
        .embed(std::slice::from_ref(&anchor_text))
        .map_err(|e| Error::Encoder { replicate: 0, message: e.to_string() })?
        .pop()
        .ok_or_else(|| Error::Encoder { replicate: 0, message: "no vector returned".into() })?;

    let n_s = small.len();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut total = 0.0;
    let mut done = 0;
    while done < cfg.replicates {
        let batch = EMBED_BATCH.min(cfg.replicates - done);
        let mut texts = Vec::with_capacity(batch);
        for r in 0..batch {
            let picks = index::sample(&mut rng, large.len(), n_s);
            let joined = picks
                .iter()
                .map(|k| large.questions[k].as_str())
                .collect::<Vec<_>>()
                .join(" ");
            texts.push(prepare(joined, done + r + 1)?);
        }
        let vectors = encoder.embed(&texts).map_err(|e| Error::Encoder {
            replicate: done + 1,
            message: e.to_string(),
        })?;
        for v in &vectors {
            total += cosine(&anchor, v);
        }
        done += batch;
    }
    Ok((total / cfg.replicates as f64).clamp(-1.0, 1.0))
}

/// Row standardized to mean 0 and sample standard deviation 1; `None`
/// when the row is constant.
pub fn zscore_row(row: &[f64]) -> Option<Vec<f64>> {
    let sd = sample_std(row);
    if !(sd > 0.0) {
        return None;
    }
    let mu = mean(row);
    Some(row.iter().map(|v| (v - mu) / sd).collect())
}

/// Per-model z-scores over a pool of contexts; `rows[i]` belongs to
/// `model_ids[i]`.
pub fn zscore_by_model(rows: &[Vec<f64>], model_ids: &[String]) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .zip(model_ids)
        .map(|(row, id)| {
            if row.len() < 2 {
                return Err(Error::Invalid("standardization pool needs at least two contexts".into()));
            }
            zscore_row(row).ok_or_else(|| Error::ZeroModelVariance(id.clone()))
        })
        .collect()
}

/// Which contexts each model's perplexities are standardized over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// Union of every signature in the session.
    #[default]
    Session,
    /// Union of the two signatures being compared.
    Pair,
}

impl std::str::FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "session" => Ok(PoolMode::Session),
            "pair" => Ok(PoolMode::Pair),
            other => Err(Error::Invalid(format!("unknown z-score pool '{other}' (session or pair)"))),
        }
    }
}

/// Z-scored perplexities of every model over a fixed context pool.
#[derive(Debug, Clone)]
pub struct ZScorePool {
    n_models: usize,
    position: HashMap<String, usize>,
    /// Model-major, `n_models * position.len()`.
    z: Vec<f64>,
}

impl ZScorePool {
    pub fn new<'a>(matrix: &PerplexityMatrix, context_ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let ids: Vec<&str> = context_ids.into_iter().collect();
        let mut cols = matrix.indices_of(&ids)?;
        cols.sort_unstable();
        cols.dedup();
        let rows: Vec<Vec<f64>> = (0..matrix.n_models())
            .map(|i| {
                let row = matrix.row(i);
                cols.iter().map(|&j| row[j]).collect()
            })
            .collect();
        let z = zscore_by_model(&rows, matrix.model_ids())?;
        let position = cols
            .iter()
            .enumerate()
            .map(|(p, &j)| (matrix.context_ids()[j].clone(), p))
            .collect();
        Ok(Self {
            n_models: matrix.n_models(),
            position,
            z: z.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// Per-model mean z-score over `context_ids`.
    pub fn mean_z(&self, context_ids: &[&str]) -> Result<Vec<f64>> {
        if context_ids.is_empty() {
            return Err(Error::Invalid("empty signature".into()));
        }
        let pos: Vec<usize> = context_ids
            .iter()
            .map(|id| {
                self.position
                    .get(*id)
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("context '{id}' is not in the standardization pool")))
            })
            .collect::<Result<_>>()?;
        let c = self.len();
        Ok((0..self.n_models)
            .map(|i| pos.iter().map(|&p| self.z[i * c + p]).sum::<f64>() / pos.len() as f64)
            .collect())
    }
}

/// Spearman correlation of the per-model mean z-scores of two signatures.
pub fn signature_overlap(pool: &ZScorePool, sig_a: &[&str], sig_b: &[&str]) -> Result<f64> {
    spearman(&pool.mean_z(sig_a)?, &pool.mean_z(sig_b)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFailure {
    pub a: String,
    pub b: String,
    pub message: String,
}

/// A matrix plus the pairs that failed and were left as NaN.
#[derive(Debug, Clone)]
pub struct OverlapBuild {
    pub matrix: OverlapMatrix,
    pub failures: Vec<PairFailure>,
}

fn pair_list(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn assemble<F>(level: Level, ids: &[String], pair: F) -> Result<OverlapBuild>
where
    F: Fn(usize, usize, usize) -> Result<f64> + Sync,
{
    let pairs = pair_list(ids.len());
    let results: Vec<Result<f64>> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| pair(k, i, j))
        .collect();
    let mut values = Vec::with_capacity(pairs.len());
    let mut failures = Vec::new();
    for (&(i, j), r) in pairs.iter().zip(results) {
        match r {
            Ok(v) => values.push(v),
            Err(e) => {
                log::warn!("{level} overlap of '{}' and '{}' failed: {e}", ids[i], ids[j]);
                failures.push(PairFailure {
                    a: ids[i].clone(),
                    b: ids[j].clone(),
                    message: e.to_string(),
                });
                values.push(f64::NAN);
            }
        }
    }
    Ok(OverlapBuild {
        matrix: OverlapMatrix::from_pairs(level, ids.to_vec(), &values)?,
        failures,
    })
}

pub fn build_performance_matrix(panel: &PerformancePanel, benchmark_ids: &[String]) -> Result<OverlapBuild> {
    let columns: Vec<Vec<f64>> = benchmark_ids
        .iter()
        .map(|b| panel.column_by_id(b))
        .collect::<Result<_>>()?;
    assemble(Level::Performance, benchmark_ids, |_, i, j| spearman(&columns[i], &columns[j]))
}

/// Pair `k` (row-major over i < j) bootstraps with stream `derive_seed(seed, k)`.
pub fn build_semantic_matrix(sets: &[QuestionSet], cfg: &SemanticConfig, encoder: &dyn Encoder) -> Result<OverlapBuild> {
    let ids: Vec<String> = sets.iter().map(|s| s.benchmark_id.clone()).collect();
    assemble(Level::Semantic, &ids, |k, i, j| {
        let pair_cfg = SemanticConfig {
            seed: derive_seed(cfg.seed, k as u64),
            ..*cfg
        };
        semantic_overlap(&sets[i], &sets[j], &pair_cfg, encoder)
    })
}

/// `signatures` pairs each benchmark id with its selected context ids.
pub fn build_signature_matrix(
    matrix: &PerplexityMatrix,
    signatures: &[(String, Vec<String>)],
    mode: PoolMode,
) -> Result<OverlapBuild> {
    let ids: Vec<String> = signatures.iter().map(|(b, _)| b.clone()).collect();
    let refs: Vec<Vec<&str>> = signatures
        .iter()
        .map(|(_, s)| s.iter().map(String::as_str).collect())
        .collect();
    let session = match mode {
        PoolMode::Session => Some(ZScorePool::new(matrix, refs.iter().flatten().copied())),
        PoolMode::Pair => None,
    };
    assemble(Level::Signature, &ids, |_, i, j| match &session {
        Some(Ok(pool)) => signature_overlap(pool, &refs[i], &refs[j]),
        Some(Err(e)) => Err(Error::Invalid(format!("session pool: {e}"))),
        None => {
            let pool = ZScorePool::new(matrix, refs[i].iter().chain(&refs[j]).copied())?;
            signature_overlap(&pool, &refs[i], &refs[j])
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qs(id: &str, qs: &[&str]) -> QuestionSet {
        QuestionSet::new(id, qs.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn spearman_fixtures() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        let err = spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert_eq!(err.to_string(), "undefined: zero rank variance");
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_with_ties_matches_hand_value() {
        // ranks a = (1.5, 1.5, 3, 4), b = (1, 2, 3, 4)
        let ra = [1.5, 1.5, 3.0, 4.0];
        let rb = [1.0, 2.0, 3.0, 4.0];
        let (ma, mb) = (2.5, 2.5);
        let num: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let da: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
        let db: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
        let expected = num / (da * db).sqrt();
        let got = spearman(&[7.0, 7.0, 8.0, 9.0], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn zscore_fixtures() {
        let ids = vec!["m".to_string()];
        let z = zscore_by_model(&[vec![1.0, 2.0, 3.0]], &ids).unwrap();
        assert_eq!(z[0], vec![-1.0, 0.0, 1.0]);
        let twice = zscore_by_model(&z, &ids).unwrap();
        assert!(twice[0].iter().zip(&z[0]).all(|(a, b)| (a - b).abs() < 1e-12));
        let err = zscore_by_model(&[vec![4.0, 4.0]], &ids).unwrap_err();
        assert!(err.to_string().contains("'m'"));
    }

    #[test]
    fn semantic_self_similarity() {
        let enc = MockEncoder::default();
        let cfg = SemanticConfig {
            replicates: 50,
            seed: 1,
            truncation_limit: None,
        };
        let a = qs("a", &["what is the capital of france", "name a prime number", "how many legs has a spider"]);
        assert!(semantic_overlap(&a, &a, &cfg, &enc).unwrap() >= 0.99);
        let upper: Vec<String> = a.questions.iter().map(|q| q.to_uppercase()).collect();
        let b = QuestionSet::new("b", upper).unwrap();
        assert!(semantic_overlap(&a, &b, &cfg, &enc).unwrap() >= 0.99, "mock lowercases");
    }

    #[test]
    fn semantic_disjoint_buckets() {
        let bucket = |w: &str| crate::rng::fnv1a64(w.as_bytes()) % MOCK_DIM as u64;
        let words: Vec<String> = (0..400).map(|k| format!("w{k}")).collect();
        let low: Vec<&str> = words.iter().map(String::as_str).filter(|w| bucket(w) < 128).collect();
        let high: Vec<&str> = words.iter().map(String::as_str).filter(|w| bucket(w) >= 128).collect();
        let a: Vec<String> = low.chunks(4).take(10).map(|c| c.join(" ")).collect();
        let b: Vec<String> = high.chunks(3).take(25).map(|c| c.join(" ")).collect();
        let cfg = SemanticConfig {
            replicates: 30,
            seed: 2,
            truncation_limit: None,
        };
        let sim = semantic_overlap(
            &QuestionSet::new("a", a).unwrap(),
            &QuestionSet::new("b", b).unwrap(),
            &cfg,
            &MockEncoder::default(),
        )
        .unwrap();
        assert_eq!(sim, 0.0);
    }

    #[test]
    fn semantic_equal_size_roles_follow_id() {
        let enc = MockEncoder::default();
        let cfg = SemanticConfig {
            replicates: 5,
            seed: 3,
            truncation_limit: Some(12),
        };
        let a = qs("a", &["one two three four", "five six"]);
        let b = qs("b", &["seven eight", "nine ten eleven"]);
        let ab = semantic_overlap(&a, &b, &cfg, &enc).unwrap();
        let ba = semantic_overlap(&b, &a, &cfg, &enc).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn semantic_truncation_to_nothing_is_an_error() {
        let enc = MockEncoder::default();
        let cfg = SemanticConfig {
            replicates: 3,
            seed: 0,
            truncation_limit: Some(1),
        };
        let a = qs("a", &[" x"]);
        let b = qs("b", &["y", "z"]);
        let err = semantic_overlap(&a, &b, &cfg, &enc).unwrap_err();
        assert!(matches!(err, Error::Encoder { replicate: 0, .. }), "{err}");
    }

    struct FailingEncoder;

    impl Encoder for FailingEncoder {
        fn info(&self) -> Result<EncoderInfo> {
            Ok(EncoderInfo { dim: 4, max_length: 100 })
        }

        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            if texts.len() > 1 {
                Err(Error::EncoderTransport("boom".into()))
            } else {
                Ok(vec![vec![1.0, 0.0, 0.0, 0.0]])
            }
        }
    }

    #[test]
    fn encoder_failure_names_replicate_and_matrix_keeps_going() {
        let a = qs("a", &["x"]);
        let b = qs("b", &["y", "z"]);
        let cfg = SemanticConfig {
            replicates: 10,
            seed: 0,
            truncation_limit: None,
        };
        let err = semantic_overlap(&a, &b, &cfg, &FailingEncoder).unwrap_err();
        assert!(err.to_string().contains("replicate 1"), "{err}");
        let built = build_semantic_matrix(&[a, b], &cfg, &FailingEncoder).unwrap();
        assert!(built.matrix.get(0, 1).is_nan());
        assert_eq!(built.failures.len(), 1);
    }

    #[test]
    fn two_identical_benchmarks_give_all_ones() {
        let panel = PerformancePanel::new(
            vec!["m1".into(), "m2".into(), "m3".into()],
            vec!["a".into(), "b".into()],
            vec![0.1, 0.1, 0.5, 0.5, 0.9, 0.9],
        )
        .unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let built = build_performance_matrix(&panel, &ids).unwrap();
        assert_eq!(built.matrix.values(), &[1.0, 1.0, 1.0, 1.0]);
    }
}
