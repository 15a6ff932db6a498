use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, fnv1a64, SplitMix64};

use super::{read_to_string, tsv_reader, tsv_writer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

/// A target piece together with up to `window` preceding pieces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenContext {
    pub context_id: String,
    pub doc_id: String,
    pub position: usize,
    pub context_text: String,
    pub target_piece: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextBuild {
    pub contexts: Vec<TokenContext>,
    /// Documents that contained no pieces at all.
    pub skipped_empty_docs: usize,
}

/// Splits text into maximal runs of non-whitespace.
pub fn split_pieces(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

pub fn context_id(doc_id: &str, position: usize) -> String {
    format!("ctx_{doc_id}:{position}")
}

/// Emits one [`TokenContext`] per retained piece.
///
/// Retention is an independent draw per piece from a stream keyed on
/// `(seed, doc_id)`, so the retained set of a document does not depend on
/// which other documents are present or in what order they arrive.
pub fn build_token_contexts<I>(
    docs: I,
    window: usize,
    downsample_rate: f64,
    seed: u64,
) -> Result<ContextBuild>
where
    I: IntoIterator<Item = Document>,
{
    if window == 0 {
        return Err(Error::Invalid("window must be at least 1".into()));
    }
    if !(downsample_rate > 0.0 && downsample_rate <= 1.0) {
        return Err(Error::Invalid(format!(
            "downsample rate must lie in (0, 1], got {downsample_rate}"
        )));
    }
    let mut docs: Vec<Document> = docs.into_iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    if let Some(w) = docs.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
        return Err(Error::Invalid(format!("duplicate doc_id '{}'", w[0].doc_id)));
    }

    let per_doc: Vec<Option<Vec<TokenContext>>> = docs
        .par_iter()
        .map(|doc| {
            let pieces = split_pieces(&doc.text);
            if pieces.is_empty() {
                return None;
            }
            let mut rng = SplitMix64::new(derive_seed(seed, fnv1a64(doc.doc_id.as_bytes())));
            let mut out = Vec::new();
            for (i, piece) in pieces.iter().enumerate() {
                let keep = downsample_rate >= 1.0 || rng.next_f64() < downsample_rate;
                if !keep {
                    continue;
                }
                let start = i.saturating_sub(window);
                out.push(TokenContext {
                    context_id: context_id(&doc.doc_id, i),
                    doc_id: doc.doc_id.clone(),
                    position: i,
                    context_text: pieces[start..i].join(" "),
                    target_piece: (*piece).to_string(),
                });
            }
            Some(out)
        })
        .collect();

    let mut build = ContextBuild::default();
    for item in per_doc {
        match item {
            Some(contexts) => build.contexts.extend(contexts),
            None => build.skipped_empty_docs += 1,
        }
    }
    if build.skipped_empty_docs > 0 {
        log::warn!("skipped {} documents with no pieces", build.skipped_empty_docs);
    }
    Ok(build)
}

/// Reads every `*.txt` file directly under `dir` as one document whose id
/// is the file stem.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<Document>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut docs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") || !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            return Err(Error::parse(path.display().to_string(), "file name is not UTF-8"));
        };
        docs.push(Document::new(stem, read_to_string(&path)?));
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(docs)
}

pub fn write_corpus(dir: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for doc in docs {
        let path = dir.join(format!("{}.txt", doc.doc_id));
        std::fs::write(&path, &doc.text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

const CONTEXT_HEADER: [&str; 5] = [
    "context_id",
    "doc_id",
    "position",
    "context_text",
    "target_piece",
];

pub fn write_contexts<W: Write>(writer: W, contexts: &[TokenContext]) -> Result<()> {
    let mut w = tsv_writer(writer);
    w.write_record(CONTEXT_HEADER)?;
    for c in contexts {
        w.write_record([
            c.context_id.as_str(),
            c.doc_id.as_str(),
            &c.position.to_string(),
            c.context_text.as_str(),
            c.target_piece.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<contexts>", e))?;
    Ok(())
}

pub fn read_contexts<R: Read>(reader: R) -> Result<Vec<TokenContext>> {
    let mut r = tsv_reader(reader);
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::parse("contexts", "missing header"))??;
    if header.iter().collect::<Vec<_>>() != CONTEXT_HEADER {
        return Err(Error::parse("contexts", "unexpected header"));
    }
    let mut out = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec?;
        let loc = || format!("contexts row {}", row + 2);
        if rec.len() != 5 {
            return Err(Error::parse(loc(), format!("expected 5 fields, got {}", rec.len())));
        }
        let position = rec[2]
            .parse()
            .map_err(|_| Error::parse(loc(), format!("bad position '{}'", &rec[2])))?;
        out.push(TokenContext {
            context_id: rec[0].to_string(),
            doc_id: rec[1].to_string(),
            position,
            context_text: rec[3].to_string(),
            target_piece: rec[4].to_string(),
        });
    }
    Ok(out)
}
