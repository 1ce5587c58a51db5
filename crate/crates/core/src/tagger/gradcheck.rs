//! Central finite-difference check of the analytic gradients.
//!
//! The numeric side only calls the loss, never the backward pass.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_loss, chunked_loss, Example, ModelConfig, Weights};
use crate::error::Result;

/// Gradients smaller than this in magnitude are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// Parameter group a tensor belongs to.
pub fn group_of(tensor: &str) -> &'static str {
    let leaf = tensor.rsplit('.').next().unwrap_or(tensor);
    match leaf {
        "embedding" => "embedding",
        "s_prompt" => "s_prompt",
        "rel_bias" => "rel_bias",
        "wq" | "bq" | "wk" | "bk" | "wv" | "bv" | "wo" | "bo" => "attention",
        "w1" | "b1" | "w2" | "b2" => "feed_forward",
        "head_w" | "head_b" => "head",
        _ => "layer_norm",
    }
}

#[derive(Debug, Clone)]
pub struct Coordinate {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Coordinate {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(RELATIVE_FLOOR);
        (self.analytic - self.numeric).abs() / scale
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coordinates: Vec<Coordinate>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.coordinates
            .iter()
            .map(Coordinate::relative_error)
            .fold(0.0, f64::max)
    }

    /// `(coordinates checked, max relative error)` per parameter group.
    pub fn by_group(&self) -> BTreeMap<&'static str, (usize, f64)> {
        let mut out: BTreeMap<&'static str, (usize, f64)> = BTreeMap::new();
        for c in &self.coordinates {
            let e = out.entry(group_of(&c.tensor)).or_default();
            e.0 += 1;
            e.1 = e.1.max(c.relative_error());
        }
        out
    }
}

/// Compares analytic and central-difference gradients of the mean batch
/// loss on `samples` coordinates spread evenly over the parameter groups.
/// Embedding coordinates are drawn from rows the batch actually uses.
pub fn check_gradients(
    cfg: &ModelConfig,
    weights: &Weights<f64>,
    batch: &[Example<'_>],
    samples: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grad) = batch_loss(cfg, weights, batch)?;
    let loss_at = |w: &Weights<f64>| -> Result<f64> {
        let mut total = 0.0;
        for ex in batch {
            total += chunked_loss(cfg, w, *ex, 1.0, None)?;
        }
        Ok(total / batch.len() as f64)
    };

    let mut used_rows: Vec<usize> = batch
        .iter()
        .flat_map(|ex| {
            let prompt = ex.query.entity.iter().copied().chain(match &ex.query.schema {
                crate::query::SchemaPrompt::Text(ids) => ids.clone(),
                _ => Vec::new(),
            });
            prompt
                .chain(ex.doc.pieces.iter().flatten().copied())
                .filter(|&id| id != super::vocab::PAD_ID)
                .map(|id| id as usize)
                .collect::<Vec<_>>()
        })
        .collect();
    used_rows.sort_unstable();
    used_rows.dedup();

    let mut candidates: BTreeMap<&'static str, Vec<(usize, usize)>> = BTreeMap::new();
    for (t, (name, tensor)) in weights.named().into_iter().enumerate() {
        let group = group_of(&name);
        let slot = candidates.entry(group).or_default();
        if group == "embedding" {
            let d = tensor.cols();
            for &row in &used_rows {
                slot.extend((0..d).map(|j| (t, row * d + j)));
            }
        } else {
            slot.extend((0..tensor.len()).map(|i| (t, i)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<_> = candidates.into_iter().filter(|(_, c)| !c.is_empty()).collect();
    let mut picked = Vec::new();
    for (g, (_, mut coords)) in groups.iter().cloned().enumerate() {
        let share = samples / groups.len() + usize::from(g < samples % groups.len());
        coords.shuffle(&mut rng);
        picked.extend(coords.into_iter().take(share));
    }

    let names: Vec<String> = weights.named().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = grad.named().into_iter().map(|(_, t)| t.data.clone()).collect();
    let mut probe = weights.clone();
    let mut coordinates = Vec::with_capacity(picked.len());
    for (t, i) in picked {
        let original = probe.tensors_mut()[t].data[i];
        probe.tensors_mut()[t].data[i] = original + step;
        let plus = loss_at(&probe)?;
        probe.tensors_mut()[t].data[i] = original - step;
        let minus = loss_at(&probe)?;
        probe.tensors_mut()[t].data[i] = original;
        coordinates.push(Coordinate {
            tensor: names[t].clone(),
            index: i,
            analytic: grads[t][i],
            numeric: (plus - minus) / (2.0 * step),
        });
    }
    Ok(GradCheckReport { coordinates })
}
