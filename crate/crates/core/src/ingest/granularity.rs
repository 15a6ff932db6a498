use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Token,
    Chunk,
    Doc,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(Self::Token),
            "chunk" => Ok(Self::Chunk),
            "doc" => Ok(Self::Doc),
            other => Err(Error::Invalid(format!("unknown granularity '{other}'"))),
        }
    }
}

/// Ordered per-piece perplexities of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocPerplexities {
    pub doc_id: String,
    pub values: Vec<f64>,
}

/// Aggregates token-level perplexities to the requested unit.
///
/// Chunks are consecutive runs of `window` pieces; the final chunk of a
/// document may be shorter and is kept. A document value is the mean of its
/// chunk means.
pub fn aggregate_granularity(
    docs: &[DocPerplexities],
    mode: Granularity,
    window: usize,
) -> Result<Vec<(String, f64)>> {
    if window == 0 {
        return Err(Error::Invalid("window must be at least 1".into()));
    }
    for doc in docs {
        if doc.values.is_empty() {
            return Err(Error::Invalid(format!("document '{}' has no perplexities", doc.doc_id)));
        }
        if let Some((i, v)) = doc
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::Invalid(format!(
                "non-positive perplexity {v} in document '{}' at index {i}",
                doc.doc_id
            )));
        }
    }

    let mut out = Vec::new();
    for doc in docs {
        match mode {
            Granularity::Token => out.extend(
                doc.values
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (format!("{}:{i}", doc.doc_id), v)),
            ),
            Granularity::Chunk => out.extend(
                chunk_means(&doc.values, window)
                    .enumerate()
                    .map(|(k, v)| (format!("{}:c{k}", doc.doc_id), v)),
            ),
            Granularity::Doc => {
                let means: Vec<f64> = chunk_means(&doc.values, window).collect();
                let v = means.iter().sum::<f64>() / means.len() as f64;
                out.push((doc.doc_id.clone(), v));
            }
        }
    }
    Ok(out)
}

fn chunk_means(values: &[f64], window: usize) -> impl Iterator<Item = f64> + '_ {
    values
        .chunks(window)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
}
