//! Pre-training on mined web groups, fine-tuning with a learned schema
//! prompt, zero-shot evaluation and few-shot subsampling.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::boise::{decode_labels, encode_spans, viterbi_decode, LabelSeq};
use crate::corpus::{CorpusGroup, EntitySpan};
use crate::error::{Error, Result};
use crate::evalkit::{aggregate, match_spans, F1Report};
use crate::query::{build_finetune_query, build_pretrain_query, PromptMode, Query};
use crate::tagger::{batch_loss, EncodedDoc, Example, ModelParams, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    /// Linear decay to zero after warmup.
    pub decay: bool,
    pub seed: u64,
    pub mode: PromptMode,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Learning-rate multiplier for the learned schema prompt.
    pub prompt_lr_scale: f64,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        TrainConfig {
            stage: Stage::Pretrain,
            steps: 1000,
            batch_size: 16,
            learning_rate: 3e-4,
            warmup_fraction: 0.01,
            decay: true,
            seed: 0,
            mode: PromptMode::Dual,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
            prompt_lr_scale: 1.0,
        }
    }

    pub fn finetune() -> Self {
        TrainConfig {
            stage: Stage::Finetune,
            steps: 300,
            learning_rate: 4e-4,
            warmup_fraction: 0.0,
            decay: false,
            prompt_lr_scale: 30.0,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1]".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.prompt_lr_scale.is_nan() || self.prompt_lr_scale <= 0.0 {
            return Err(Error::Config("prompt_lr_scale must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used at `step` (0-based).
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let warmup = (self.warmup_fraction * self.steps as f64).ceil() as usize;
        if step < warmup {
            return self.learning_rate * (step + 1) as f64 / warmup as f64;
        }
        if !self.decay {
            return self.learning_rate;
        }
        let remaining = (self.steps - step) as f64 / (self.steps - warmup).max(1) as f64;
        self.learning_rate * remaining
    }
}

/// One `(group, document, entity)` triple of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExampleRef {
    pub group: usize,
    pub doc: usize,
    pub entity: usize,
}

/// Shuffled, epoch-cycling stream over every `(document, entity-in-group)`
/// pair, absent entities included. Each epoch's order depends only on
/// `(seed, epoch)`.
#[derive(Debug, Clone)]
pub struct ExampleStream {
    items: Vec<ExampleRef>,
    seed: u64,
    epoch: u64,
    order: Vec<ExampleRef>,
    cursor: usize,
}

impl ExampleStream {
    pub fn new(groups: &[CorpusGroup], seed: u64) -> Self {
        let mut items = Vec::new();
        for (g, group) in groups.iter().enumerate() {
            for d in 0..group.documents.len() {
                for e in 0..group.entity_types.len() {
                    items.push(ExampleRef {
                        group: g,
                        doc: d,
                        entity: e,
                    });
                }
            }
        }
        let mut stream = ExampleStream {
            items,
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        stream.order = stream.epoch_order(0);
        stream
    }

    pub fn epoch_len(&self) -> usize {
        self.items.len()
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<ExampleRef> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut order = self.items.clone();
        order.shuffle(&mut rng);
        order
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<ExampleRef> {
        let mut out = Vec::with_capacity(size);
        if self.items.is_empty() {
            return out;
        }
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.order = self.epoch_order(self.epoch);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean batch loss after each step.
    pub trace: Vec<f64>,
}

struct Prepared {
    docs: Vec<Vec<EncodedDoc>>,
    labels: Vec<Vec<Vec<LabelSeq>>>,
    queries: Vec<Vec<Query>>,
}

fn prepare(params: &ModelParams, groups: &[CorpusGroup], stage: Stage, mode: PromptMode) -> Result<Prepared> {
    let mut docs = Vec::with_capacity(groups.len());
    let mut labels = Vec::with_capacity(groups.len());
    let mut queries = Vec::with_capacity(groups.len());
    for group in groups {
        group.check()?;
        docs.push(group.documents.iter().map(|d| params.encode(d)).collect());
        let mut per_doc = Vec::with_capacity(group.documents.len());
        for doc in &group.documents {
            let seqs = group
                .entity_types
                .iter()
                .map(|e| encode_spans(&doc.intervals_of(e), doc.tokens.len()))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Invalid(format!("document {}: {e}", doc.doc_id)))?;
            per_doc.push(seqs);
        }
        labels.push(per_doc);
        queries.push(
            group
                .entity_types
                .iter()
                .map(|e| {
                    let q = match stage {
                        Stage::Pretrain => build_pretrain_query(&group.schema_id, e, &params.vocab),
                        Stage::Finetune => build_finetune_query(e, &params.vocab),
                    };
                    q.with_mode(mode)
                })
                .collect(),
        );
    }
    Ok(Prepared {
        docs,
        labels,
        queries,
    })
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

fn train(mut params: ModelParams, groups: &[CorpusGroup], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prepared = prepare(&params, groups, cfg.stage, cfg.mode)?;
    let mut stream = ExampleStream::new(groups, cfg.seed);
    if stream.epoch_len() == 0 {
        return Err(Error::Invalid("no training examples".into()));
    }
    // The learned schema prompt is a free parameter only when fine-tuning
    // with dual prompts.
    let train_s_prompt = cfg.stage == Stage::Finetune && cfg.mode == PromptMode::Dual;

    let shapes: Vec<usize> = params.weights.named().iter().map(|(_, t)| t.len()).collect();
    let mut adam = Adam {
        m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        t: 0,
    };
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let refs = stream.next_batch(cfg.batch_size);
        let batch: Vec<Example<'_>> = refs
            .iter()
            .map(|r| Example {
                query: &prepared.queries[r.group][r.entity],
                doc: &prepared.docs[r.group][r.doc],
                labels: &prepared.labels[r.group][r.doc][r.entity],
            })
            .collect();
        let (loss, grad) = batch_loss(&params.config, &params.weights, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss diverged at step {step}")));
        }
        trace.push(loss);

        let grads: Vec<&Tensor<f32>> = grad.named().into_iter().map(|(_, t)| t).collect();
        let mut clip = 1.0f32;
        if cfg.clip_norm > 0.0 {
            let norm = grads
                .iter()
                .flat_map(|t| t.data.iter())
                .map(|&g| (g as f64) * (g as f64))
                .sum::<f64>()
                .sqrt();
            if norm > cfg.clip_norm {
                clip = (cfg.clip_norm / norm) as f32;
            }
        }

        adam.t += 1;
        let lr = cfg.learning_rate_at(step);
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - b1.powi(adam.t);
        let c2 = 1.0 - b2.powi(adam.t);
        let step_size = (lr as f32) / c1;
        let eps = cfg.epsilon as f32;
        for (k, tensor) in params.weights.tensors_mut().into_iter().enumerate() {
            // Index 1 is the learned schema prompt.
            if k == 1 && !train_s_prompt {
                continue;
            }
            let step_size = if k == 1 {
                step_size * cfg.prompt_lr_scale as f32
            } else {
                step_size
            };
            let (m, v) = (&mut adam.m[k], &mut adam.v[k]);
            for (((p, &g), mi), vi) in tensor
                .data
                .iter_mut()
                .zip(&grads[k].data)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g * clip;
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *p -= step_size * *mi / ((*vi / c2).sqrt() + eps);
            }
        }
        if step % 50 == 0 || step + 1 == cfg.steps {
            log::debug!("{} step {step} loss {loss:.4} lr {lr:.2e}", cfg.stage);
        }
    }
    Ok(TrainOutcome { params, trace })
}

/// Optimizes everything except the learned schema prompt on schema-grouped
/// web documents, with text schema prompts.
pub fn pretrain(params: ModelParams, groups: &[CorpusGroup], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if groups.is_empty() {
        return Err(Error::Invalid(
            "pre-training needs at least one corpus group".into(),
        ));
    }
    if cfg.stage != Stage::Pretrain {
        return Err(Error::Config(format!(
            "expected stage pretrain, got {}",
            cfg.stage
        )));
    }
    train(params, groups, cfg)
}

/// Optimizes all parameters, the learned schema prompt included, on one
/// single-schema corpus.
pub fn finetune(params: ModelParams, corpus: &CorpusGroup, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.stage != Stage::Finetune {
        return Err(Error::Config(format!(
            "expected stage finetune, got {}",
            cfg.stage
        )));
    }
    if let Some(doc) = corpus.documents.iter().find(|d| d.schema_id != corpus.schema_id) {
        return Err(Error::Invalid(format!(
            "fine-tuning needs a single schema: {} has {:?}, corpus has {:?}",
            doc.doc_id, doc.schema_id, corpus.schema_id
        )));
    }
    train(params, std::slice::from_ref(corpus), cfg)
}

/// Fine-tunes on the one group of `groups`, rejecting multi-schema input.
pub fn finetune_groups(
    params: ModelParams,
    groups: &[CorpusGroup],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    match groups {
        [corpus] => finetune(params, corpus, cfg),
        [] => Err(Error::Invalid("fine-tuning corpus is empty".into())),
        _ => Err(Error::Invalid(format!(
            "fine-tuning needs a single schema, found {}",
            groups.len()
        ))),
    }
}

/// Spans predicted for one entity name on one document.
pub fn extract(
    params: &ModelParams,
    query: &Query,
    doc: &EncodedDoc,
    entity_type: &str,
) -> Result<Vec<EntitySpan>> {
    let emissions = params.predict(query, doc)?;
    let labels = viterbi_decode(emissions.rows())?;
    Ok(decode_labels(&labels)?
        .into_iter()
        .map(|(s, e)| EntitySpan::new(entity_type, s, e))
        .collect())
}

/// Evaluates on `target` with fine-tuning-style queries. Each target entity
/// type is queried under its name in `entity_map`, or under its own name when
/// no map is given.
pub fn zero_shot_eval(
    params: &ModelParams,
    target: &CorpusGroup,
    entity_map: Option<&BTreeMap<String, String>>,
    mode: PromptMode,
) -> Result<F1Report> {
    let mut queries: Vec<(String, Query)> = Vec::new();
    let mut unmapped = Vec::new();
    for entity in &target.entity_types {
        let name = match entity_map {
            None => Some(entity.as_str()),
            Some(map) => map.get(entity).map(String::as_str),
        };
        match name {
            Some(n) => queries.push((
                entity.clone(),
                build_finetune_query(n, &params.vocab).with_mode(mode),
            )),
            None => unmapped.push(entity.clone()),
        }
    }
    if !unmapped.is_empty() {
        return Err(Error::Invalid(format!(
            "target entity types without a mapping: {}",
            unmapped.join(", ")
        )));
    }
    let per_doc: Vec<Result<BTreeMap<String, crate::evalkit::Counts>>> = target
        .documents
        .par_iter()
        .map(|doc| {
            let encoded = params.encode(doc);
            let mut pred = Vec::new();
            for (entity, query) in &queries {
                pred.extend(extract(params, query, &encoded, entity)?);
            }
            let mut counts = match_spans(&pred, &doc.spans);
            for (entity, _) in &queries {
                counts.entry(entity.clone()).or_default();
            }
            Ok(counts)
        })
        .collect();
    Ok(aggregate(per_doc.into_iter().collect::<Result<Vec<_>>>()?))
}

/// `k` documents drawn without replacement, kept in corpus order.
pub fn subsample_fewshot(corpus: &CorpusGroup, k: usize, seed: u64) -> Result<CorpusGroup> {
    let n = corpus.documents.len();
    if k > n {
        return Err(Error::Invalid(format!("cannot sample {k} of {n} documents")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(k);
    idx.sort_unstable();
    let docs = idx.into_iter().map(|i| corpus.documents[i].clone()).collect();
    Ok(CorpusGroup::from_documents(corpus.schema_id.clone(), docs))
}

/// First step (1-based count) at which the trailing `window`-step mean loss
/// is at or below `threshold`.
pub fn steps_to_reach(trace: &[f64], threshold: f64, window: usize) -> Option<usize> {
    let window = window.max(1);
    let mut sum = 0.0;
    for (i, &v) in trace.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= trace[i - window];
        }
        let n = (i + 1).min(window);
        if i + 1 >= window && sum / n as f64 <= threshold {
            return Some(i + 1);
        }
    }
    None
}

/// Non-overlapping means of `window` consecutive losses.
pub fn smoothed(trace: &[f64], window: usize) -> Vec<f64> {
    trace
        .chunks(window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

pub fn write_trace(trace: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Counts how often each triple appears in one epoch; used to check that
/// epochs cover the objective's index set exactly once.
pub fn epoch_multiplicity(stream: &ExampleStream, epoch: u64) -> HashMap<ExampleRef, usize> {
    let mut out = HashMap::new();
    for r in stream.epoch_order(epoch) {
        *out.entry(r).or_default() += 1;
    }
    out
}
