//! Stage orchestration: each stage reads its predecessors' files from the
//! output directory and writes its own.
//!
//! ```text
//! ingest/contexts.tsv, ingest/summary.json
//! screening/<benchmark>.tsv
//! signatures/<benchmark>.json
//! overlap/<level>.tsv
//! analysis/report.json, analysis/pairs_<level>_<grouping>.tsv
//! report/report.json, report/heatmap_<level>.svg, report/heatmap_<level>.tsv
//! manifest.json
//! ```
//!
//! Every artifact carries the config hash. Timestamps appear only in
//! `manifest.json`.

mod heatmap;

pub use heatmap::{color, render_svg, reorder};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::analysis::{analyze_level, group_bias_report, pair_records, write_pair_records, AnalysisReport, CliqueOptions};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::ingest::{
    build_token_contexts, check_assembly, load_benchmark_meta, load_corpus, load_performance_panel,
    load_perplexity_matrix, load_question_sets, read_contexts, write_contexts, Grouping, MetaTable, PerformancePanel,
    PerplexityMatrix,
};
use crate::overlap::{
    build_performance_matrix, build_semantic_matrix, build_signature_matrix, connect, read_overlap_matrix,
    write_overlap_matrix, Encoder, Level, MatrixHeader, OverlapBuild, OverlapMatrix, SemanticConfig,
};
use crate::rng::{derive_seed, fnv1a64};
use crate::screening::{read_screening, screen_tokens, write_screening, ScreeningOptions};
use crate::selection::{read_signature, select_from_columns, write_signature, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Screen,
    Mine,
    Overlap,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Screen,
        Stage::Mine,
        Stage::Overlap,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Screen => "screen",
            Stage::Mine => "mine",
            Stage::Overlap => "overlap",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown stage '{s}'")))
    }
}

/// Seed of a stage's random stream.
pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    derive_seed(seed, stage as u64 + 1)
}

/// Screening seed of one benchmark; independent of which other benchmarks run.
pub fn benchmark_seed(seed: u64, benchmark_id: &str) -> u64 {
    derive_seed(stage_seed(seed, Stage::Screen), fnv1a64(benchmark_id.as_bytes()))
}

/// One machine-readable line per finished stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub config_hash: String,
    #[serde(flatten)]
    pub fields: Map<String, Value>,
}

impl StageSummary {
    fn new(stage: Stage, hash: &str, fields: Value) -> Self {
        let fields = match fields {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self {
            stage,
            config_hash: hash.to_string(),
            fields,
        }
    }

    pub fn line(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

/// Per-invocation choices that are not part of the config.
#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    /// Benchmarks to screen or mine; empty means every panel benchmark.
    pub benchmarks: Vec<String>,
    /// Overlap levels to compute; empty means all three.
    pub levels: Vec<Level>,
    /// Let the report combine artifacts from different configs.
    pub force: bool,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    hash: String,
    out: PathBuf,
    encoder: Option<Arc<dyn Encoder>>,
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(body.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn first_line(path: &Path) -> Result<String> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line).map_err(|e| Error::io(path, e))?;
    Ok(line.trim_end().to_string())
}

fn header_config(line: &str) -> Option<String> {
    line.strip_prefix('#')?
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("config=").map(str::to_string))
}

fn safe_id(id: &str) -> Result<&str> {
    if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) {
        return Err(Error::Invalid(format!("benchmark id '{id}' cannot be used as a file name")));
    }
    Ok(id)
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            hash: cfg.hash(),
            out: cfg.output_dir(),
            cfg,
            encoder: None,
        })
    }

    /// Uses `encoder` for semantic overlap instead of connecting to the
    /// configured endpoint.
    pub fn with_encoder(mut self, encoder: Arc<dyn Encoder>) -> Self {
        self.encoder = Some(encoder);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    fn artifact(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, stage: Stage, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.artifact(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact {
                stage: stage.as_str().into(),
                path: p,
            })
        }
    }

    fn input(&self, p: &Path) -> PathBuf {
        self.cfg.resolve(p)
    }

    fn load_matrix(&self) -> Result<PerplexityMatrix> {
        let p = self.input(&self.cfg.paths.perplexity);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                stage: "export-ppl".into(),
                path: p,
            });
        }
        load_perplexity_matrix(p)
    }

    fn load_panel(&self) -> Result<PerformancePanel> {
        load_performance_panel(self.input(&self.cfg.paths.panel))
    }

    fn load_meta(&self) -> Result<MetaTable> {
        load_benchmark_meta(self.input(&self.cfg.paths.meta))
    }

    fn select_benchmarks(&self, panel: &PerformancePanel, requested: &[String]) -> Result<Vec<String>> {
        let list: Vec<String> = if requested.is_empty() {
            panel.benchmark_ids().to_vec()
        } else {
            for b in requested {
                if panel.benchmark_index(b).is_none() {
                    return Err(Error::Invalid(format!("benchmark '{b}' is not in the performance panel")));
                }
            }
            requested.to_vec()
        };
        for b in &list {
            safe_id(b)?;
        }
        Ok(list)
    }

    fn screening_options(&self, benchmark_id: &str) -> ScreeningOptions {
        ScreeningOptions {
            alpha: self.cfg.screen.alpha,
            method: self.cfg.screen.method,
            seed: benchmark_seed(self.cfg.run.seed, benchmark_id),
            preselect_raw_eq2: self.cfg.screen.preselect_raw_eq2,
        }
    }

    /// Runs one stage and records it in the manifest.
    pub fn run_stage(&self, stage: Stage, opts: &StageOptions) -> Result<StageSummary> {
        let started = now_unix();
        let summary = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Screen => self.screen(&opts.benchmarks),
            Stage::Mine => self.mine(&opts.benchmarks),
            Stage::Overlap => self.overlap(&opts.levels),
            Stage::Analyze => self.analyze(),
            Stage::Report => self.report(opts.force),
        }?;
        self.record(&summary, started)?;
        Ok(summary)
    }

    fn record(&self, summary: &StageSummary, started: u64) -> Result<()> {
        let path = self.artifact("manifest.json");
        let mut manifest = if path.exists() {
            read_json(&path)?
        } else {
            json!({})
        };
        let obj = manifest.as_object_mut().ok_or_else(|| Error::parse("manifest.json", "not an object"))?;
        obj.insert("config_hash".into(), json!(self.hash));
        obj.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
        let stages = obj.entry("stages").or_insert_with(|| json!({}));
        if let Some(stages) = stages.as_object_mut() {
            stages.insert(
                summary.stage.as_str().into(),
                json!({
                    "started_unix": started,
                    "finished_unix": now_unix(),
                    "config_hash": self.hash,
                    "summary": summary.fields,
                }),
            );
        }
        write_file(&path, &to_json(&manifest)?)
    }

    pub fn ingest(&self) -> Result<StageSummary> {
        let ic = &self.cfg.ingest;
        let docs = load_corpus(self.input(&self.cfg.paths.corpus))?;
        let n_docs = docs.len();
        let seed = stage_seed(self.cfg.run.seed, Stage::Ingest);
        let built = build_token_contexts(docs, ic.window, ic.downsample_rate, seed)?;

        let mut buf = format!("#config={}\n", self.hash).into_bytes();
        write_contexts(&mut buf, &built.contexts)?;
        write_file(&self.artifact("ingest/contexts.tsv"), &String::from_utf8_lossy(&buf))?;

        let matrix_path = self.input(&self.cfg.paths.perplexity);
        let matrix = if matrix_path.exists() {
            let matrix = load_perplexity_matrix(&matrix_path)?;
            let known: HashSet<&str> = built.contexts.iter().map(|c| c.context_id.as_str()).collect();
            if let Some(stray) = matrix.context_ids().iter().find(|c| !known.contains(c.as_str())) {
                return Err(Error::Invalid(format!(
                    "perplexity matrix context '{stray}' is not among the ingested contexts \
                     (window, downsample_rate or seed differ from the export)"
                )));
            }
            let panel_path = self.input(&self.cfg.paths.panel);
            if panel_path.exists() {
                let panel = load_performance_panel(panel_path)?;
                let meta_path = self.input(&self.cfg.paths.meta);
                let meta = if meta_path.exists() {
                    Some(load_benchmark_meta(meta_path)?)
                } else {
                    None
                };
                check_assembly(&matrix, &panel, meta.as_ref())?;
            }
            json!({"models": matrix.n_models(), "contexts": matrix.n_contexts()})
        } else {
            Value::Null
        };

        let fields = json!({
            "documents": n_docs,
            "skipped_empty_docs": built.skipped_empty_docs,
            "contexts": built.contexts.len(),
            "window": ic.window,
            "downsample_rate": ic.downsample_rate,
            "seed": seed,
            "perplexity": matrix,
        });
        let mut doc = json!({"config_hash": self.hash});
        doc.as_object_mut().unwrap().extend(fields.as_object().unwrap().clone());
        write_file(&self.artifact("ingest/summary.json"), &to_json(&doc)?)?;
        Ok(StageSummary::new(Stage::Ingest, &self.hash, fields))
    }

    pub fn screen(&self, benchmarks: &[String]) -> Result<StageSummary> {
        self.require(Stage::Ingest, "ingest/summary.json")?;
        let matrix = self.load_matrix()?;
        let panel = self.load_panel()?;
        check_assembly(&matrix, &panel, None)?;
        let list = self.select_benchmarks(&panel, benchmarks)?;
        let mut per_tail = 0;
        let mut candidates = 0;
        for b in &list {
            let perf = panel.column_by_id(b)?;
            let result = screen_tokens(&matrix, &perf, b, self.screening_options(b))?;
            per_tail = result.per_tail;
            candidates += result.candidates.len();
            let path = self.artifact(format!("screening/{b}.tsv"));
            ensure_parent(&path)?;
            write_screening(&path, &result, matrix.context_ids(), Some(&self.hash))?;
        }
        Ok(StageSummary::new(
            Stage::Screen,
            &self.hash,
            json!({
                "benchmarks": list.len(),
                "contexts": matrix.n_contexts(),
                "per_tail": per_tail,
                "candidates": candidates,
            }),
        ))
    }

    pub fn mine(&self, benchmarks: &[String]) -> Result<StageSummary> {
        let panel = self.load_panel()?;
        let list = self.select_benchmarks(&panel, benchmarks)?;
        let tables: Vec<PathBuf> = list
            .iter()
            .map(|b| self.require(Stage::Screen, format!("screening/{b}.tsv")))
            .collect::<Result<_>>()?;
        let matrix = self.load_matrix()?;
        check_assembly(&matrix, &panel, None)?;
        let delta = self.cfg.mine.delta;
        let sigs: Vec<Signature> = list
            .par_iter()
            .zip(&tables)
            .map(|(b, path)| {
                let table = read_screening(path)?;
                if table.context_ids.len() != matrix.n_contexts() {
                    return Err(Error::Invalid(format!(
                        "{} covers {} contexts, the perplexity matrix has {}",
                        path.display(),
                        table.context_ids.len(),
                        matrix.n_contexts()
                    )));
                }
                let columns = matrix.indices_of(&table.candidate_ids())?;
                let perf = panel.column_by_id(b)?;
                let mut sig = select_from_columns(&matrix, &columns, &perf, b, self.screening_options(b), delta)?;
                sig.config_hash = Some(self.hash.clone());
                Ok(sig)
            })
            .collect::<Result<_>>()?;
        for sig in &sigs {
            let path = self.artifact(format!("signatures/{}.json", sig.benchmark_id));
            ensure_parent(&path)?;
            write_signature(&path, sig)?;
        }
        let sizes: Vec<usize> = sigs.iter().map(|s| s.selected.len()).collect();
        Ok(StageSummary::new(
            Stage::Mine,
            &self.hash,
            json!({
                "benchmarks": sigs.len(),
                "min_size": sizes.iter().min(),
                "max_size": sizes.iter().max(),
                "skipped_candidates": sigs.iter().map(|s| s.skips.len()).sum::<usize>(),
            }),
        ))
    }

    fn encoder(&self) -> Result<Arc<dyn Encoder>> {
        match &self.encoder {
            Some(e) => Ok(e.clone()),
            None => connect(&self.cfg.overlap.encoder_endpoint),
        }
    }

    pub fn overlap(&self, levels: &[Level]) -> Result<StageSummary> {
        let levels: Vec<Level> = if levels.is_empty() { Level::ALL.to_vec() } else { levels.to_vec() };
        let panel = self.load_panel()?;
        let ids = self.select_benchmarks(&panel, &[])?;
        let seed = stage_seed(self.cfg.run.seed, Stage::Overlap);
        let mut failed = Map::new();
        for &level in &levels {
            let mut header = MatrixHeader::default();
            let build: OverlapBuild = match level {
                Level::Performance => build_performance_matrix(&panel, &ids)?,
                Level::Signature => {
                    let paths: Vec<PathBuf> = ids
                        .iter()
                        .map(|b| self.require(Stage::Mine, format!("signatures/{b}.json")))
                        .collect::<Result<_>>()?;
                    let sigs: Vec<(String, Vec<String>)> = paths
                        .iter()
                        .map(|p| {
                            let s = read_signature(p)?;
                            let ctx = s.context_ids().into_iter().map(str::to_string).collect();
                            Ok((s.benchmark_id, ctx))
                        })
                        .collect::<Result<_>>()?;
                    let matrix = self.load_matrix()?;
                    let mode = self.cfg.overlap.zscore_pool;
                    header.extra.push(("zscore_pool".into(), format!("{mode:?}").to_lowercase()));
                    build_signature_matrix(&matrix, &sigs, mode)?
                }
                Level::Semantic => {
                    let sets = load_question_sets(self.input(&self.cfg.paths.questions), &ids)?;
                    let cfg = SemanticConfig {
                        replicates: self.cfg.overlap.replicates,
                        seed,
                        truncation_limit: self.cfg.semantic_truncation(),
                    };
                    header.seed = Some(seed);
                    header.replicates = Some(cfg.replicates);
                    build_semantic_matrix(&sets, &cfg, self.encoder()?.as_ref())?
                }
            };
            header.extra.push(("config".into(), self.hash.clone()));
            header.extra.push(("failed_pairs".into(), build.failures.len().to_string()));
            let path = self.artifact(format!("overlap/{level}.tsv"));
            ensure_parent(&path)?;
            write_overlap_matrix(&path, &build.matrix, &header)?;
            let fail_path = self.artifact(format!("overlap/{level}.failures.tsv"));
            if build.failures.is_empty() {
                if fail_path.exists() {
                    std::fs::remove_file(&fail_path).map_err(|e| Error::io(&fail_path, e))?;
                }
            } else {
                let mut body = String::from("a\tb\tmessage\n");
                for f in &build.failures {
                    body.push_str(&format!("{}\t{}\t{}\n", f.a, f.b, f.message.replace(['\t', '\n'], " ")));
                }
                write_file(&fail_path, &body)?;
            }
            failed.insert(level.as_str().into(), json!(build.failures.len()));
        }
        Ok(StageSummary::new(
            Stage::Overlap,
            &self.hash,
            json!({
                "levels": levels.iter().map(|l| l.as_str()).collect::<Vec<_>>(),
                "benchmarks": ids.len(),
                "failed_pairs": failed,
            }),
        ))
    }

    fn present_levels(&self) -> Vec<Level> {
        Level::ALL
            .into_iter()
            .filter(|l| self.artifact(format!("overlap/{l}.tsv")).exists())
            .collect()
    }

    fn load_overlaps(&self) -> Result<BTreeMap<Level, OverlapMatrix>> {
        let levels = self.present_levels();
        if levels.is_empty() {
            return Err(Error::MissingArtifact {
                stage: Stage::Overlap.as_str().into(),
                path: self.artifact("overlap"),
            });
        }
        levels
            .into_iter()
            .map(|l| Ok((l, read_overlap_matrix(self.artifact(format!("overlap/{l}.tsv")))?.0)))
            .collect()
    }

    pub fn analyze(&self) -> Result<StageSummary> {
        let overlaps = self.load_overlaps()?;
        let meta = self.load_meta()?;
        let clique = CliqueOptions {
            threshold: self.cfg.analyze.clique_threshold,
            greedy: self.cfg.analyze.clique_greedy,
        };
        let groupings = &self.cfg.analyze.groupings;
        let mut levels = Vec::new();
        for (level, o) in &overlaps {
            for &g in groupings {
                levels.push(analyze_level(o, &meta, g, clique)?);
                let pairs = pair_records(o, &meta, g)?;
                ensure_parent(&self.artifact(format!("analysis/pairs_{level}_{g}.tsv")))?;
                write_pair_records(self.artifact(format!("analysis/pairs_{level}_{g}.tsv")), &pairs)?;
            }
        }
        let mut bias = Vec::new();
        if let (Some(p), Some(s)) = (overlaps.get(&Level::Performance), overlaps.get(&Level::Signature)) {
            for &g in groupings.iter().filter(|g| **g != Grouping::Category) {
                bias.push(group_bias_report(p, s, &meta, g)?);
            }
        }
        let report = AnalysisReport {
            config_hash: Some(self.hash.clone()),
            clique_threshold: clique.threshold,
            levels,
            bias,
        };
        write_file(&self.artifact("analysis/report.json"), &report.to_json()?)?;

        let mut cliques = Map::new();
        let mut gaps = Map::new();
        for la in report.levels.iter().filter(|la| la.grouping == groupings[0]) {
            cliques.insert(la.level.as_str().into(), json!(la.clique.members.len()));
            if let (Some(w), Some(c)) = (la.summary.within_overall, la.summary.cross) {
                gaps.insert(la.level.as_str().into(), json!(w - c));
            }
        }
        Ok(StageSummary::new(
            Stage::Analyze,
            &self.hash,
            json!({
                "levels": overlaps.keys().map(|l| l.as_str()).collect::<Vec<_>>(),
                "grouping": groupings[0].as_str(),
                "clique_size": cliques,
                "within_minus_cross": gaps,
                "bias_tests": report.bias.len(),
            }),
        ))
    }

    /// Config hash recorded in every artifact found under the output
    /// directory, in a fixed order.
    pub fn artifact_hashes(&self) -> Result<Vec<(PathBuf, Option<String>)>> {
        let mut out = Vec::new();
        let summary = self.artifact("ingest/summary.json");
        if summary.exists() {
            let v = read_json(&summary)?;
            out.push((summary, v["config_hash"].as_str().map(str::to_string)));
        }
        let contexts = self.artifact("ingest/contexts.tsv");
        if contexts.exists() {
            let h = header_config(&first_line(&contexts)?);
            out.push((contexts, h));
        }
        for dir in ["screening", "overlap"] {
            for p in self.list(dir, "tsv")? {
                if p.to_string_lossy().ends_with(".failures.tsv") {
                    continue;
                }
                let h = header_config(&first_line(&p)?);
                out.push((p, h));
            }
        }
        for p in self.list("signatures", "json")? {
            out.push((p.clone(), read_signature(&p)?.config_hash));
        }
        let analysis = self.artifact("analysis/report.json");
        if analysis.exists() {
            let v = read_json(&analysis)?;
            out.push((analysis, v["config_hash"].as_str().map(str::to_string)));
        }
        Ok(out)
    }

    fn list(&self, dir: &str, ext: &str) -> Result<Vec<PathBuf>> {
        let d = self.artifact(dir);
        if !d.exists() {
            return Ok(Vec::new());
        }
        let mut v: Vec<PathBuf> = std::fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == ext))
            .collect();
        v.sort();
        Ok(v)
    }

    pub fn report(&self, force: bool) -> Result<StageSummary> {
        let analysis_path = self.require(Stage::Analyze, "analysis/report.json")?;
        let mut mixed = Vec::new();
        for (path, h) in self.artifact_hashes()? {
            let found = h.unwrap_or_else(|| "none".into());
            if found != self.hash {
                if !force {
                    return Err(Error::ConfigMismatch {
                        path,
                        expected: self.hash.clone(),
                        found,
                    });
                }
                let rel = path.strip_prefix(&self.out).unwrap_or(&path).display().to_string();
                mixed.push(json!({"artifact": rel, "config_hash": found}));
            }
        }
        let analysis: AnalysisReport = serde_json::from_str(
            &std::fs::read_to_string(&analysis_path).map_err(|e| Error::io(&analysis_path, e))?,
        )?;

        let overlaps = self.load_overlaps()?;
        let meta = self.load_meta().ok();
        let mut heatmaps = Vec::new();
        for (level, o) in &overlaps {
            let mut order: Vec<usize> = (0..o.len()).collect();
            let key = |i: usize| {
                let id = &o.benchmark_ids()[i];
                let cat = meta
                    .as_ref()
                    .and_then(|m| m.get(id))
                    .map(|r| r.category.clone())
                    .unwrap_or_default();
                (cat, id.clone())
            };
            order.sort_by_key(|&i| key(i));
            let ordered = reorder(o, &order)?;
            let svg = format!("report/heatmap_{level}.svg");
            let tsv = format!("report/heatmap_{level}.tsv");
            write_file(&self.artifact(&svg), &render_svg(&ordered, &format!("{level} overlap")))?;
            let header = MatrixHeader {
                extra: vec![("config".into(), self.hash.clone())],
                ..MatrixHeader::default()
            };
            ensure_parent(&self.artifact(&tsv))?;
            write_overlap_matrix(self.artifact(&tsv), &ordered, &header)?;
            heatmaps.push(json!({"level": level.as_str(), "svg": svg, "data": tsv}));
        }

        let contexts_path = self.artifact("ingest/contexts.tsv");
        let texts: HashMap<String, (String, String)> = if contexts_path.exists() {
            let f = std::fs::File::open(&contexts_path).map_err(|e| Error::io(&contexts_path, e))?;
            read_contexts(BufReader::new(f))?
                .into_iter()
                .map(|c| (c.context_id, (c.context_text, c.target_piece)))
                .collect()
        } else {
            HashMap::new()
        };
        let mut signatures = Vec::new();
        for p in self.list("signatures", "json")? {
            let s = read_signature(&p)?;
            let tokens: Vec<Value> = s
                .selected
                .iter()
                .map(|t| {
                    let (text, piece) = texts.get(&t.context_id).cloned().unwrap_or_default();
                    json!({
                        "context_id": t.context_id,
                        "coefficient": t.coefficient,
                        "context_text": text,
                        "target_piece": piece,
                    })
                })
                .collect();
            signatures.push(json!({
                "benchmark_id": s.benchmark_id,
                "size": s.selected.len(),
                "final_aic": s.aic_trajectory().last(),
                "tokens": tokens,
            }));
        }

        let report = json!({
            "config_hash": self.hash,
            "clique_threshold": self.cfg.analyze.clique_threshold,
            "mixed_artifacts": mixed,
            "heatmaps": heatmaps,
            "analysis": analysis,
            "signatures": signatures,
        });
        write_file(&self.artifact("report/report.json"), &to_json(&report)?)?;
        Ok(StageSummary::new(
            Stage::Report,
            &self.hash,
            json!({
                "heatmaps": heatmaps.len(),
                "signatures": signatures.len(),
                "mixed_artifacts": mixed.len(),
            }),
        ))
    }
}
