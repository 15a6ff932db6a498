//! Synthetic data with planted structure.
//!
//! Used by the recovery tests and by `sigmine synth`, which writes a small
//! self-contained dataset (corpus, perplexities, panel, metadata, question
//! sets) that the whole pipeline can run on.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ingest::{
    aggregate_granularity, build_token_contexts, write_benchmark_meta, write_corpus, write_performance_panel, write_perplexity_binary,
    write_question_set, BenchmarkMeta, DocPerplexities, Document, MetaTable, PerformancePanel, PerplexityMatrix,
    Granularity, QuestionSet,
};
use crate::screening::{Scratch, ThrushKernel};
use crate::config::PipelineConfig;
use crate::pipeline::{stage_seed, Stage};
use crate::rng::{derive_seed, SplitMix64};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn normal(rng: &mut SplitMix64) -> f64 {
    StandardNormal.sample(rng)
}

fn standardized(v: &[f64]) -> Vec<f64> {
    let mu = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
    v.iter().map(|x| (x - mu) / sd).collect()
}

fn model_ids(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("model_{i:02}")).collect()
}

/// Sparse screening regime: a few columns whose log perplexity falls with
/// standardized performance, the rest independent lognormal noise.
#[derive(Debug, Clone)]
pub struct SisInstance {
    pub matrix: PerplexityMatrix,
    pub perf: Vec<f64>,
    /// Sorted indices of the planted columns.
    pub signal: Vec<usize>,
}

pub fn sis_instance(m: usize, d: usize, n_signal: usize, seed: u64) -> Result<SisInstance> {
    if n_signal > d {
        return Err(Error::Invalid("more signal columns than columns".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let skill: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
    let perf: Vec<f64> = skill.iter().map(|&s| sigmoid(s)).collect();
    let z = standardized(&perf);
    let mut signal = index::sample(&mut rng, d, n_signal).into_vec();
    signal.sort_unstable();
    let mut is_signal = vec![false; d];
    signal.iter().for_each(|&j| is_signal[j] = true);

    let mut values = vec![0.0; m * d];
    for (j, &sig) in is_signal.iter().enumerate() {
        for i in 0..m {
            let log_ppl = if sig { 2.0 - z[i] + 0.5 * normal(&mut rng) } else { 2.0 + normal(&mut rng) };
            values[i * d + j] = log_ppl.exp();
        }
    }
    let contexts = (0..d).map(|j| format!("c{j:06}")).collect();
    Ok(SisInstance {
        matrix: PerplexityMatrix::new(model_ids(m), contexts, values)?,
        perf,
        signal,
    })
}

/// Noiseless sparse linear target over standard-normal candidate columns.
#[derive(Debug, Clone)]
pub struct SparseInstance {
    pub ids: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
}

pub fn sparse_instance(m: usize, d: usize, k: usize, seed: u64) -> SparseInstance {
    let mut rng = SplitMix64::new(seed);
    let columns: Vec<Vec<f64>> = (0..d).map(|_| (0..m).map(|_| normal(&mut rng)).collect()).collect();
    let mut support = index::sample(&mut rng, d, k).into_vec();
    support.sort_unstable();
    let coefficients: Vec<f64> = (0..k)
        .map(|_| {
            let mag = rng.random_range(1.0..3.0);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let y = (0..m)
        .map(|i| 0.5 + support.iter().zip(&coefficients).map(|(&j, b)| b * columns[j][i]).sum::<f64>())
        .collect();
    SparseInstance {
        ids: (0..d).map(|j| format!("x{j:03}")).collect(),
        columns,
        y,
        support,
        coefficients,
    }
}

/// Token perplexities per model and document for granularity comparisons.
#[derive(Debug, Clone)]
pub struct GranularityInstance {
    pub perf: Vec<f64>,
    /// `docs[i]` holds model `i`'s documents, all models in the same order.
    pub docs: Vec<Vec<DocPerplexities>>,
}

/// A share of tokens are familiar, low-perplexity tokens whose perplexity
/// moves with model skill (in either direction); the rest are heavy-tailed
/// and unrelated to skill, so they dominate any average over a window.
pub fn granularity_instance(
    m: usize,
    n_docs: usize,
    doc_len: usize,
    signal_share: f64,
    seed: u64,
) -> GranularityInstance {
    let mut rng = SplitMix64::new(seed);
    let skill: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
    let perf = skill.iter().map(|&s| sigmoid(s)).collect();
    let mut docs: Vec<Vec<DocPerplexities>> = vec![Vec::with_capacity(n_docs); m];
    for k in 0..n_docs {
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(doc_len); m];
        for _ in 0..doc_len {
            let signal = rng.random::<f64>() < signal_share;
            let loading = if rng.random::<bool>() { 0.8 } else { -0.8 };
            for (i, col) in cols.iter_mut().enumerate() {
                let log_ppl = if signal {
                    1.0 - loading * skill[i] + 0.3 * normal(&mut rng)
                } else {
                    3.0 + normal(&mut rng)
                };
                col.push(log_ppl.exp());
            }
        }
        for (i, values) in cols.into_iter().enumerate() {
            docs[i].push(DocPerplexities {
                doc_id: format!("doc{k:04}"),
                values,
            });
        }
    }
    GranularityInstance { perf, docs }
}

/// Thrush coefficient of every unit after aggregating each model's
/// documents to `mode`.
pub fn unit_coefficients(inst: &GranularityInstance, mode: Granularity, window: usize) -> Result<Vec<f64>> {
    let per_model = inst
        .docs
        .iter()
        .map(|docs| aggregate_granularity(docs, mode, window))
        .collect::<Result<Vec<_>>>()?;
    let units = per_model.first().map_or(0, Vec::len);
    let kernel = ThrushKernel::new(&inst.perf);
    let mut scratch = Scratch::default();
    let mut column = vec![0.0; per_model.len()];
    (0..units)
        .map(|u| {
            for (c, model) in column.iter_mut().zip(&per_model) {
                *c = model[u].1;
            }
            Ok(kernel.eval_doubled(&column, &mut scratch) as f64 / 2.0)
        })
        .collect()
}

/// Benchmarks per (category, family) cell of the synthetic population.
/// Within-family and cross-family pairs have the same share of
/// same-category pairs (29/124 vs 87/372), so category structure alone
/// cannot separate them.
pub const WORLD_LAYOUT: [[usize; 4]; 4] = [[0, 3, 3, 0], [2, 3, 0, 3], [3, 3, 0, 2], [3, 3, 3, 1]];
pub const WORLD_CATEGORIES: [&str; 4] = ["reasoning", "math", "knowledge", "code"];
pub const WORLD_FAMILIES: [&str; 4] = ["atlas", "beacon", "cinder", "delta"];
pub const WORLD_FORMATS: [&str; 3] = ["multi_choice", "true_or_false", "open_ended"];

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub n_models: usize,
    pub n_docs: usize,
    pub doc_len: usize,
    pub window: usize,
    pub downsample_rate: f64,
    /// Share of contexts carrying each category's signal.
    pub signal_share: f64,
    /// Correlation of category skills through a general factor.
    pub skill_correlation: f64,
    /// Weight of the family factor in performance only.
    pub family_bias: f64,
    pub questions_min: usize,
    pub questions_max: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_models: 32,
            n_docs: 120,
            doc_len: 200,
            window: 30,
            downsample_rate: 0.25,
            signal_share: 0.15,
            skill_correlation: 0.4,
            family_bias: 0.6,
            questions_min: 20,
            questions_max: 60,
        }
    }
}

/// A synthetic population of models and benchmarks.
#[derive(Debug, Clone)]
pub struct World {
    pub docs: Vec<Document>,
    pub matrix: PerplexityMatrix,
    pub panel: PerformancePanel,
    pub meta: MetaTable,
    pub questions: Vec<QuestionSet>,
    /// Category index of each context's signal, if any.
    pub context_category: Vec<Option<usize>>,
}

fn vocabulary(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

/// Models carry correlated category skills and a family affinity. A
/// benchmark's scores follow its category skill plus the family affinity;
/// perplexities follow category skill only, with a per-model offset that
/// makes weaker models uniformly more perplexed.
pub fn generate_world(cfg: &WorldConfig, seed: u64) -> Result<World> {
    let m = cfg.n_models;
    let (nc, nf) = (WORLD_CATEGORIES.len(), WORLD_FAMILIES.len());
    let rho = cfg.skill_correlation;

    let mut rng = SplitMix64::new(derive_seed(seed, 1));
    let general: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
    let skill: Vec<Vec<f64>> = general
        .iter()
        .map(|&g| (0..nc).map(|_| rho * g + (1.0 - rho * rho).sqrt() * normal(&mut rng)).collect())
        .collect();
    let affinity: Vec<Vec<f64>> = (0..m).map(|_| (0..nf).map(|_| normal(&mut rng)).collect()).collect();
    let offset: Vec<f64> = general.iter().map(|&g| -0.3 * g + 0.1 * normal(&mut rng)).collect();

    // benchmarks
    let mut rng = SplitMix64::new(derive_seed(seed, 2));
    let mut records = Vec::new();
    let mut bench = Vec::new();
    for (c, row) in WORLD_LAYOUT.iter().enumerate() {
        for (f, &count) in row.iter().enumerate() {
            for k in 0..count {
                let id = format!("{}_{}_{k}", WORLD_CATEGORIES[c], WORLD_FAMILIES[f]);
                let format = WORLD_FORMATS[(c + f + k) % WORLD_FORMATS.len()];
                records.push(BenchmarkMeta {
                    benchmark_id: id.clone(),
                    category: WORLD_CATEGORIES[c].into(),
                    family: WORLD_FAMILIES[f].into(),
                    question_format: format.into(),
                });
                let difficulty = 0.5 * normal(&mut rng);
                let weight = rng.random_range(1.0..2.0);
                bench.push((id, c, f, difficulty, weight));
            }
        }
    }
    let n = bench.len();
    let mut scores = vec![0.0; m * n];
    for i in 0..m {
        for (b, (_, c, f, difficulty, weight)) in bench.iter().enumerate() {
            let latent = difficulty + weight * skill[i][*c] + cfg.family_bias * affinity[i][*f] + 0.3 * normal(&mut rng);
            scores[i * n + b] = sigmoid(latent);
        }
    }
    let models = model_ids(m);
    let panel = PerformancePanel::new(models.clone(), bench.iter().map(|b| b.0.clone()).collect(), scores)?;
    let label_sets = [
        WORLD_CATEGORIES.iter().map(|s| s.to_string()).collect(),
        WORLD_FAMILIES.iter().map(|s| s.to_string()).collect(),
        WORLD_FORMATS.iter().map(|s| s.to_string()).collect(),
    ];
    let meta = MetaTable::new(records, label_sets)?;

    // corpus and contexts
    let mut rng = SplitMix64::new(derive_seed(seed, 3));
    let common = vocabulary("w", 2000);
    let docs: Vec<Document> = (0..cfg.n_docs)
        .map(|k| {
            let words: Vec<&str> = (0..cfg.doc_len)
                .map(|_| common[rng.random_range(0..common.len())].as_str())
                .collect();
            Document::new(format!("doc{k:04}"), words.join(" "))
        })
        .collect();
    let ingest_seed = stage_seed(seed, Stage::Ingest);
    let contexts = build_token_contexts(docs.clone(), cfg.window, cfg.downsample_rate, ingest_seed)?.contexts;
    let d = contexts.len();

    let mut rng = SplitMix64::new(derive_seed(seed, 4));
    let mut context_category = Vec::with_capacity(d);
    let mut values = vec![0.0; m * d];
    for j in 0..d {
        let u: f64 = rng.random();
        let cat = ((u / cfg.signal_share) as usize).lt(&nc).then(|| (u / cfg.signal_share) as usize);
        let base = 2.5 + 0.7 * normal(&mut rng);
        let loading = rng.random_range(0.6..1.2);
        for i in 0..m {
            let log_ppl = match cat {
                Some(c) => base + offset[i] - loading * skill[i][c] + 0.5 * normal(&mut rng),
                None => base + offset[i] + 0.7 * normal(&mut rng),
            };
            values[i * d + j] = log_ppl.exp();
        }
        context_category.push(cat);
    }
    let matrix = PerplexityMatrix::new(models, contexts.into_iter().map(|c| c.context_id).collect(), values)?;

    // question sets
    let mut rng = SplitMix64::new(derive_seed(seed, 5));
    let cat_vocab: Vec<Vec<String>> = WORLD_CATEGORIES.iter().map(|c| vocabulary(&format!("{c}_"), 60)).collect();
    let fam_vocab: Vec<Vec<String>> = WORLD_FAMILIES.iter().map(|f| vocabulary(&format!("{f}_"), 30)).collect();
    let questions = bench
        .iter()
        .map(|(id, c, f, _, _)| {
            let count = rng.random_range(cfg.questions_min..=cfg.questions_max);
            let qs = (0..count)
                .map(|_| {
                    let len = rng.random_range(8..16);
                    let words: Vec<&str> = (0..len)
                        .map(|_| {
                            let u: f64 = rng.random();
                            let pool = if u < 0.4 {
                                &cat_vocab[*c]
                            } else if u < 0.6 {
                                &fam_vocab[*f]
                            } else {
                                &common
                            };
                            pool[rng.random_range(0..pool.len())].as_str()
                        })
                        .collect();
                    words.join(" ") + "?"
                })
                .collect();
            QuestionSet::new(id.clone(), qs)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(World {
        docs,
        matrix,
        panel,
        meta,
        questions,
        context_category,
    })
}

/// Pipeline config that reproduces the world's contexts from its corpus.
pub fn world_pipeline_config(cfg: &WorldConfig, seed: u64) -> PipelineConfig {
    let mut p = PipelineConfig::default();
    p.ingest.window = cfg.window;
    p.ingest.downsample_rate = cfg.downsample_rate;
    p.run.seed = seed;
    p
}

/// Writes the dataset files under `dir` with the default config file names
/// plus `sigmine.toml` pointing at them.
pub fn write_world(world: &World, cfg: &WorldConfig, seed: u64, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let pc = world_pipeline_config(cfg, seed);
    let paths = &pc.paths;
    write_corpus(dir.join(&paths.corpus), &world.docs)?;
    write_perplexity_binary(dir.join(&paths.perplexity), &world.matrix)?;
    write_performance_panel(dir.join(&paths.panel), &world.panel)?;
    write_benchmark_meta(dir.join(&paths.meta), &world.meta)?;
    let qdir = dir.join(&paths.questions);
    std::fs::create_dir_all(&qdir).map_err(|e| Error::io(&qdir, e))?;
    for set in &world.questions {
        write_question_set(qdir.join(format!("{}.txt", set.benchmark_id)), set)?;
    }
    let config_path = dir.join("sigmine.toml");
    std::fs::write(&config_path, pc.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    Ok(config_path)
}
