//! The trainable query-conditional tagger: tokenizer, embeddings, a
//! layout-aware transformer encoder and a five-way output head.

pub mod gradcheck;
pub mod model;
pub mod net;
pub mod tensor;
pub mod vocab;

use rayon::prelude::*;

pub use model::{load_params, load_params_expecting, save_params, ModelConfig, ModelParams, Weights};
pub use net::{forward, Emissions, EncodedDoc};
pub use tensor::{Scalar, Tensor};
pub use vocab::{tokenize, Vocab};

use crate::boise::{LabelSeq, NUM_LABELS};
use crate::error::{Error, Result};
use crate::query::{Query, PROMPT_LEN};

/// Positions reserved for prompts when splitting long documents.
pub const PROMPT_ALLOWANCE: usize = 64;
/// Overlap between consecutive document chunks.
pub const CHUNK_OVERLAP: usize = 32;

/// One training example: a query, a pre-tokenized document and its labels.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub query: &'a Query,
    pub doc: &'a EncodedDoc,
    pub labels: &'a LabelSeq,
}

/// Document ranges covering `len` tokens for a query whose prompts take
/// `prefix` nominal positions.
pub fn chunk_ranges(len: usize, prefix: usize, max_seq_len: usize) -> Result<Vec<(usize, usize)>> {
    let chunk = max_seq_len.saturating_sub(prefix.max(PROMPT_ALLOWANCE));
    if len <= chunk {
        return Ok(vec![(0, len)]);
    }
    if chunk <= CHUNK_OVERLAP {
        return Err(Error::Config(format!(
            "max_seq_len {max_seq_len} leaves no room for document chunks"
        )));
    }
    let stride = chunk - CHUNK_OVERLAP;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + chunk).min(len);
        out.push((start, end));
        if end == len {
            return Ok(out);
        }
        start += stride;
    }
}

fn prefix_len(cfg: &ModelConfig, query: &Query) -> usize {
    query.schema_len(cfg.s_prompt_len) + PROMPT_LEN
}

/// Emissions for a document of any length. Long documents are split into
/// overlapping chunks; overlapped positions average their log-probabilities
/// and are renormalized.
pub fn predict<F: Scalar>(
    cfg: &ModelConfig,
    w: &Weights<F>,
    query: &Query,
    doc: &EncodedDoc,
) -> Result<Emissions> {
    let ranges = chunk_ranges(doc.len(), prefix_len(cfg, query), cfg.max_seq_len)?;
    if ranges.len() == 1 {
        return net::forward(cfg, w, query, doc);
    }
    let mut sums = vec![[0.0; NUM_LABELS]; doc.len()];
    let mut counts = vec![0usize; doc.len()];
    for (start, end) in ranges {
        let part = net::forward(cfg, w, query, &doc.slice(start, end))?;
        for (i, row) in part.0.iter().enumerate() {
            for c in 0..NUM_LABELS {
                sums[start + i][c] += row[c];
            }
            counts[start + i] += 1;
        }
    }
    Ok(Emissions(
        sums.into_iter()
            .zip(counts)
            .map(|(row, k)| {
                let avg: [f64; NUM_LABELS] = std::array::from_fn(|c| row[c] / k as f64);
                let max = avg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + avg.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                avg.map(|v| v - lse)
            })
            .collect(),
    ))
}

/// Loss of one example, chunking long documents; adds `weight ×` the
/// gradient into `grad` when given.
pub fn chunked_loss<F: Scalar>(
    cfg: &ModelConfig,
    w: &Weights<F>,
    ex: Example<'_>,
    weight: f64,
    mut grad: Option<&mut Weights<F>>,
) -> Result<f64> {
    if ex.labels.len() != ex.doc.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} document tokens",
            ex.labels.len(),
            ex.doc.len()
        )));
    }
    let ranges = chunk_ranges(ex.doc.len(), prefix_len(cfg, ex.query), cfg.max_seq_len)?;
    let share = 1.0 / ranges.len() as f64;
    let mut total = 0.0;
    for (start, end) in ranges {
        let (doc, labels);
        let (doc_ref, labels_ref) = if start == 0 && end == ex.doc.len() {
            (ex.doc, ex.labels)
        } else {
            doc = ex.doc.slice(start, end);
            labels = LabelSeq(ex.labels.labels()[start..end].to_vec());
            (&doc, &labels)
        };
        total += share
            * match grad.as_deref_mut() {
                Some(g) => {
                    net::example_loss_and_grad(cfg, w, ex.query, doc_ref, labels_ref, weight * share, g)?
                }
                None => net::example_loss(cfg, w, ex.query, doc_ref, labels_ref)?,
            };
    }
    Ok(total)
}

/// Mean loss over a batch and its gradient. Per-example gradients are
/// computed in parallel and summed in batch order, so the result does not
/// depend on the thread count.
pub fn batch_loss<F: Scalar>(
    cfg: &ModelConfig,
    w: &Weights<F>,
    batch: &[Example<'_>],
) -> Result<(f64, Weights<F>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let weight = 1.0 / batch.len() as f64;
    let parts: Vec<Result<(f64, Weights<F>)>> = batch
        .par_iter()
        .map(|ex| {
            let mut g = Weights::zeros(cfg);
            let loss = chunked_loss(cfg, w, *ex, weight, Some(&mut g))?;
            Ok((loss, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grad: Option<Weights<F>> = None;
    for part in parts {
        let (loss, g) = part?;
        total += loss * weight;
        match grad.as_mut() {
            None => grad = Some(g),
            Some(acc) => acc.add_assign(&g),
        }
    }
    Ok((total, grad.expect("non-empty batch")))
}

impl ModelParams {
    pub fn encode(&self, doc: &crate::corpus::Document) -> EncodedDoc {
        EncodedDoc::new(doc, &self.vocab)
    }

    pub fn predict(&self, query: &Query, doc: &EncodedDoc) -> Result<Emissions> {
        predict(&self.config, &self.weights, query, doc)
    }

    /// Single-pass emissions; errors instead of chunking long documents.
    pub fn forward(&self, query: &Query, doc: &crate::corpus::Document) -> Result<Emissions> {
        net::forward(&self.config, &self.weights, query, &self.encode(doc))
    }
}
