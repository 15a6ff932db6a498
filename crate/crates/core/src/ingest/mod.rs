//! Inputs: token-context corpora, perplexity matrices, performance panels,
//! benchmark metadata and question sets, plus granularity aggregation.

mod contexts;
mod granularity;
mod meta;
mod panel;
mod perplexity;
mod questions;

pub use contexts::{
    build_token_contexts, load_corpus, read_contexts, split_pieces, write_contexts, write_corpus, ContextBuild, Document,
    TokenContext,
};
pub use granularity::{aggregate_granularity, DocPerplexities, Granularity};
pub use meta::{load_benchmark_meta, write_benchmark_meta, BenchmarkMeta, Grouping, MetaTable};
pub use panel::{load_performance_panel, write_performance_panel, PerformancePanel};
pub use perplexity::{
    load_perplexity_matrix, write_perplexity_binary, write_perplexity_text, PerplexityMatrix,
    BINARY_MAGIC,
};
pub use questions::{load_question_set, load_question_sets, write_question_set, QuestionSet};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn tsv_reader<R: std::io::Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader)
}

pub(crate) fn tsv_writer<W: std::io::Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(writer)
}

/// Checks that a list of identifiers has no duplicates; returns the first repeat.
pub(crate) fn first_duplicate(ids: &[String]) -> Option<&str> {
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    ids.iter().find(|id| !seen.insert(id.as_str())).map(String::as_str)
}

/// Verifies that a perplexity matrix, a performance panel and metadata can be
/// used together: identical model order and a meta row for every benchmark.
pub fn check_assembly(
    matrix: &PerplexityMatrix,
    panel: &PerformancePanel,
    meta: Option<&MetaTable>,
) -> Result<()> {
    if matrix.model_ids() != panel.model_ids() {
        return Err(Error::Invalid(format!(
            "model ids differ between perplexity matrix ({}) and performance panel ({})",
            matrix.model_ids().join(","),
            panel.model_ids().join(",")
        )));
    }
    if matrix.n_models() < 3 {
        return Err(Error::Invalid(format!(
            "at least 3 models are required for rank statistics, found {}",
            matrix.n_models()
        )));
    }
    if let Some(meta) = meta {
        for b in panel.benchmark_ids() {
            if meta.get(b).is_none() {
                return Err(Error::Invalid(format!(
                    "benchmark '{b}' has no row in the benchmark metadata"
                )));
            }
        }
    }
    Ok(())
}
