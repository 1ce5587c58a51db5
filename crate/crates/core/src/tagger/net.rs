//! Forward and backward passes of the query-conditional tagger.
//!
//! The input sequence is `[schema rows ; entity rows ; document rows]`.
//! Padding ids are masked out of attention, which is the same as leaving the
//! padded positions out of the computation entirely. Each document row is the
//! mean embedding of the word's pieces. Blocks are pre-norm transformer layers
//! whose attention logits get an additive per-head bias indexed by the
//! bucketed 2D offset between box centers; any pair involving a prompt
//! position uses the non-spatial bucket.

use super::model::{ModelConfig, Weights, AXIS_BUCKETS, NON_SPATIAL_BUCKET};
use super::tensor::{gemm, Scalar, Tensor, View};
use super::vocab::{Vocab, PAD_ID};
use crate::boise::{BoiseLabel, LabelSeq, NUM_LABELS};
use crate::corpus::{median_height, Document};
use crate::error::{Error, Result};
use crate::query::{Query, SchemaPrompt};

const LN_EPS: f64 = 1e-5;

/// Per-token log-probabilities over the five span labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Emissions(pub Vec<[f64; NUM_LABELS]>);

impl Emissions {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rows(&self) -> &[[f64; NUM_LABELS]] {
        &self.0
    }
}

/// A document tokenized once for repeated forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDoc {
    pub pieces: Vec<Vec<u32>>,
    pub centers: Vec<(f64, f64)>,
    /// Distance unit for relative-position buckets: the median box height.
    pub unit: f64,
}

impl EncodedDoc {
    pub fn new(doc: &Document, vocab: &Vocab) -> Self {
        let pieces = doc
            .tokens
            .iter()
            .map(|t| {
                let ids = super::vocab::tokenize(&t.text, vocab);
                if ids.is_empty() {
                    vec![vocab.id(&t.text)]
                } else {
                    ids
                }
            })
            .collect();
        let unit = median_height(&doc.tokens);
        EncodedDoc {
            pieces,
            centers: doc.tokens.iter().map(|t| t.center()).collect(),
            unit: if unit > 0.0 { unit } else { 1.0 },
        }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Tokens `[start, end)` sharing this document's distance unit.
    pub fn slice(&self, start: usize, end: usize) -> EncodedDoc {
        EncodedDoc {
            pieces: self.pieces[start..end].to_vec(),
            centers: self.centers[start..end].to_vec(),
            unit: self.unit,
        }
    }
}

/// Sign × log-scale bucket of an offset measured in `unit`s.
pub fn axis_bucket(delta: f64, unit: f64) -> usize {
    let a = (delta / unit).abs();
    let mag = if a < 0.5 {
        0
    } else if a < 2.0 {
        1
    } else if a < 8.0 {
        2
    } else {
        3
    };
    let mid = AXIS_BUCKETS / 2;
    if delta < 0.0 {
        mid - mag
    } else {
        mid + mag
    }
}

pub fn spatial_bucket(from: (f64, f64), to: (f64, f64), unit: f64) -> usize {
    axis_bucket(to.1 - from.1, unit) * AXIS_BUCKETS + axis_bucket(to.0 - from.0, unit)
}

enum Source {
    Learned(usize),
    Id(u32),
    Mean(Vec<u32>),
}

struct Input<F> {
    x: Vec<F>,
    sources: Vec<Source>,
    buckets: Vec<u8>,
    n: usize,
    doc_start: usize,
}

fn build_input<F: Scalar>(
    cfg: &ModelConfig,
    w: &Weights<F>,
    query: &Query,
    doc: &EncodedDoc,
) -> Result<Input<F>> {
    if doc.is_empty() {
        return Err(Error::Invalid("document has no tokens".into()));
    }
    let nominal = query.embedded_len(cfg.s_prompt_len, doc.len());
    if nominal > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: nominal,
            max: cfg.max_seq_len,
        });
    }
    let d = cfg.d_model;
    let mut sources = Vec::new();
    match &query.schema {
        SchemaPrompt::Text(ids) => {
            sources.extend(ids.iter().filter(|&&i| i != PAD_ID).map(|&i| Source::Id(i)))
        }
        SchemaPrompt::Learned => sources.extend((0..cfg.s_prompt_len).map(Source::Learned)),
        SchemaPrompt::Absent => {}
    }
    sources.extend(
        query
            .entity
            .iter()
            .filter(|&&i| i != PAD_ID)
            .map(|&i| Source::Id(i)),
    );
    let doc_start = sources.len();
    sources.extend(doc.pieces.iter().cloned().map(Source::Mean));
    let n = sources.len();

    let mut x = vec![F::zero(); n * d];
    for (row, src) in x.chunks_exact_mut(d).zip(&sources) {
        match *src {
            Source::Learned(k) => row.copy_from_slice(w.s_prompt.row(k)),
            Source::Id(id) => row.copy_from_slice(embedding_row(w, id)?),
            Source::Mean(ref pieces) => {
                let inv = F::one() / F::from_f64(pieces.len() as f64);
                for &id in pieces.iter() {
                    for (a, b) in row.iter_mut().zip(embedding_row(w, id)?) {
                        *a += *b * inv;
                    }
                }
            }
        }
    }

    let mut buckets = vec![NON_SPATIAL_BUCKET as u8; n * n];
    for i in 0..doc.len() {
        for j in 0..doc.len() {
            buckets[(doc_start + i) * n + doc_start + j] =
                spatial_bucket(doc.centers[i], doc.centers[j], doc.unit) as u8;
        }
    }
    Ok(Input {
        x,
        sources,
        buckets,
        n,
        doc_start,
    })
}

fn embedding_row<F: Scalar>(w: &Weights<F>, id: u32) -> Result<&[F]> {
    let rows = w.embedding.shape[0];
    if id as usize >= rows {
        return Err(Error::Shape(format!(
            "token id {id} outside embedding of {rows} rows"
        )));
    }
    Ok(w.embedding.row(id as usize))
}

/// `x · W + b` for `x` of `n × din`.
fn linear<F: Scalar>(x: &[F], n: usize, wt: &Tensor<F>, b: &Tensor<F>) -> Vec<F> {
    let (din, dout) = (wt.shape[0], wt.shape[1]);
    let mut out: Vec<F> = b.data.iter().copied().cycle().take(n * dout).collect();
    gemm(
        x,
        View::dense(n, din),
        &wt.data,
        wt.view(),
        &mut out,
        View::dense(n, dout),
        true,
    );
    out
}

/// Accumulates weight and bias gradients and returns the input gradient.
fn linear_backward<F: Scalar>(
    x: &[F],
    dy: &[F],
    n: usize,
    wt: &Tensor<F>,
    dw: &mut Tensor<F>,
    db: &mut Tensor<F>,
) -> Vec<F> {
    let (din, dout) = (wt.shape[0], wt.shape[1]);
    gemm(
        x,
        View::dense(n, din).t(),
        dy,
        View::dense(n, dout),
        &mut dw.data,
        View::dense(din, dout),
        true,
    );
    for row in dy.chunks_exact(dout) {
        for (g, v) in db.data.iter_mut().zip(row) {
            *g += *v;
        }
    }
    let mut dx = vec![F::zero(); n * din];
    gemm(
        dy,
        View::dense(n, dout),
        &wt.data,
        wt.view().t(),
        &mut dx,
        View::dense(n, din),
        false,
    );
    dx
}

struct NormCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

fn layer_norm<F: Scalar>(x: &[F], d: usize, g: &Tensor<F>, b: &Tensor<F>) -> (Vec<F>, NormCache<F>) {
    let n = x.len() / d;
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); n];
    let inv_d = F::one() / F::from_f64(d as f64);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let r = F::one() / (var + F::from_f64(LN_EPS)).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * g.data[j] + b.data[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward<F: Scalar>(
    dy: &[F],
    d: usize,
    cache: &NormCache<F>,
    g: &Tensor<F>,
    dg: &mut Tensor<F>,
    db: &mut Tensor<F>,
) -> Vec<F> {
    let n = dy.len() / d;
    let mut dx = vec![F::zero(); dy.len()];
    let inv_d = F::one() / F::from_f64(d as f64);
    let mut dxhat = vec![F::zero(); d];
    for i in 0..n {
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let mut sum = F::zero();
        let mut dot = F::zero();
        for j in 0..d {
            dg.data[j] += dyr[j] * xh[j];
            db.data[j] += dyr[j];
            dxhat[j] = dyr[j] * g.data[j];
            sum += dxhat[j];
            dot += dxhat[j] * xh[j];
        }
        let (mean, mean_dot) = (sum * inv_d, dot * inv_d);
        for j in 0..d {
            dx[i * d + j] = cache.rstd[i] * (dxhat[j] - mean - xh[j] * mean_dot);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

fn gelu<F: Scalar>(u: F) -> F {
    let (c, k, half) = (F::from_f64(GELU_C), F::from_f64(GELU_K), F::from_f64(0.5));
    half * u * (F::one() + (c * (u + k * u * u * u)).tanh())
}

fn gelu_grad<F: Scalar>(u: F) -> F {
    let (c, k, half) = (F::from_f64(GELU_C), F::from_f64(GELU_K), F::from_f64(0.5));
    let t = (c * (u + k * u * u * u)).tanh();
    half * (F::one() + t) + half * u * (F::one() - t * t) * c * (F::one() + F::from_f64(3.0) * k * u * u)
}

struct LayerCache<F> {
    ln1: NormCache<F>,
    a: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    o: Vec<F>,
    ln2: NormCache<F>,
    c: Vec<F>,
    u: Vec<F>,
    g: Vec<F>,
}

struct Trace<F> {
    input: Input<F>,
    layers: Vec<LayerCache<F>>,
    lnf: NormCache<F>,
    z: Vec<F>,
    /// Log-probabilities for document rows, `m × NUM_LABELS`.
    logp: Vec<F>,
}

fn run<F: Scalar>(cfg: &ModelConfig, w: &Weights<F>, query: &Query, doc: &EncodedDoc) -> Result<Trace<F>> {
    let input = build_input(cfg, w, query, doc)?;
    let (n, d, heads, dh) = (input.n, cfg.d_model, cfg.n_heads, cfg.head_dim());
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let mut x = input.x.clone();
    let mut layers = Vec::with_capacity(w.layers.len());
    for lw in &w.layers {
        let (a, ln1) = layer_norm(&x, d, &lw.ln1_g, &lw.ln1_b);
        let q = linear(&a, n, &lw.wq, &lw.bq);
        let k = linear(&a, n, &lw.wk, &lw.bk);
        let v = linear(&a, n, &lw.wv, &lw.bv);
        let mut probs = vec![F::zero(); heads * n * n];
        let mut o = vec![F::zero(); n * d];
        for h in 0..heads {
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            let qv = View::columns(n, d, h * dh, dh);
            gemm(&q, qv, &k, qv.t(), p, View::dense(n, n), false);
            let bias = lw.rel_bias.row(h);
            for i in 0..n {
                let row = &mut p[i * n..(i + 1) * n];
                let mut max = F::neg_infinity();
                for (j, s) in row.iter_mut().enumerate() {
                    *s = *s * scale + bias[input.buckets[i * n + j] as usize];
                    max = max.max(*s);
                }
                let mut total = F::zero();
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let inv = F::one() / total;
                for s in row.iter_mut() {
                    *s *= inv;
                }
            }
            gemm(p, View::dense(n, n), &v, qv, &mut o, qv, false);
        }
        let attn = linear(&o, n, &lw.wo, &lw.bo);
        let x1: Vec<F> = x.iter().zip(&attn).map(|(&a, &b)| a + b).collect();
        let (c, ln2) = layer_norm(&x1, d, &lw.ln2_g, &lw.ln2_b);
        let u = linear(&c, n, &lw.w1, &lw.b1);
        let g: Vec<F> = u.iter().map(|&v| gelu(v)).collect();
        let f = linear(&g, n, &lw.w2, &lw.b2);
        let x2: Vec<F> = x1.iter().zip(&f).map(|(&a, &b)| a + b).collect();
        x = x2;
        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            c,
            u,
            g,
        });
    }
    let (z, lnf) = layer_norm(&x, d, &w.final_ln_g, &w.final_ln_b);
    let m = n - input.doc_start;
    let mut logp = linear(&z[input.doc_start * d..], m, &w.head_w, &w.head_b);
    for row in logp.chunks_exact_mut(NUM_LABELS) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Ok(Trace {
        input,
        layers,
        lnf,
        z,
        logp,
    })
}

fn to_emissions<F: Scalar>(logp: &[F]) -> Emissions {
    Emissions(
        logp.chunks_exact(NUM_LABELS)
            .map(|r| std::array::from_fn(|c| r[c].as_f64()))
            .collect(),
    )
}

/// Emissions for every document token. Fails when the nominal sequence is
/// longer than `max_seq_len`.
pub fn forward<F: Scalar>(
    cfg: &ModelConfig,
    w: &Weights<F>,
    query: &Query,
    doc: &EncodedDoc,
) -> Result<Emissions> {
    Ok(to_emissions(&run(cfg, w, query, doc)?.logp))
}

/// Mean token cross-entropy of one example.
pub fn example_loss<F: Scalar>(
    cfg: &ModelConfig,
    w: &Weights<F>,
    query: &Query,
    doc: &EncodedDoc,
    labels: &LabelSeq,
) -> Result<f64> {
    check_labels(doc, labels)?;
    let trace = run(cfg, w, query, doc)?;
    Ok(cross_entropy(&trace.logp, labels.labels()))
}

fn check_labels(doc: &EncodedDoc, labels: &LabelSeq) -> Result<()> {
    if labels.len() != doc.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} document tokens",
            labels.len(),
            doc.len()
        )));
    }
    Ok(())
}

fn cross_entropy<F: Scalar>(logp: &[F], labels: &[BoiseLabel]) -> f64 {
    let total: f64 = logp
        .chunks_exact(NUM_LABELS)
        .zip(labels)
        .map(|(row, l)| -row[l.code()].as_f64())
        .sum();
    total / labels.len() as f64
}

/// Mean token cross-entropy of one example; adds `weight ×` its gradient
/// into `grad`.
pub fn example_loss_and_grad<F: Scalar>(
    cfg: &ModelConfig,
    w: &Weights<F>,
    query: &Query,
    doc: &EncodedDoc,
    labels: &LabelSeq,
    weight: f64,
    grad: &mut Weights<F>,
) -> Result<f64> {
    check_labels(doc, labels)?;
    let trace = run(cfg, w, query, doc)?;
    let loss = cross_entropy(&trace.logp, labels.labels());
    backward(cfg, w, &trace, labels.labels(), F::from_f64(weight), grad);
    Ok(loss)
}

fn backward<F: Scalar>(
    cfg: &ModelConfig,
    w: &Weights<F>,
    trace: &Trace<F>,
    labels: &[BoiseLabel],
    weight: F,
    grad: &mut Weights<F>,
) {
    let input = &trace.input;
    let (n, d, heads, dh) = (input.n, cfg.d_model, cfg.n_heads, cfg.head_dim());
    let m = n - input.doc_start;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let per_token = weight / F::from_f64(m as f64);

    let mut dlogits = vec![F::zero(); m * NUM_LABELS];
    for ((dl, lp), label) in dlogits
        .chunks_exact_mut(NUM_LABELS)
        .zip(trace.logp.chunks_exact(NUM_LABELS))
        .zip(labels)
    {
        for c in 0..NUM_LABELS {
            dl[c] = lp[c].exp() * per_token;
        }
        dl[label.code()] -= per_token;
    }
    let dz_doc = linear_backward(
        &trace.z[input.doc_start * d..],
        &dlogits,
        m,
        &w.head_w,
        &mut grad.head_w,
        &mut grad.head_b,
    );
    let mut dz = vec![F::zero(); n * d];
    dz[input.doc_start * d..].copy_from_slice(&dz_doc);
    let mut dx = layer_norm_backward(
        &dz,
        d,
        &trace.lnf,
        &w.final_ln_g,
        &mut grad.final_ln_g,
        &mut grad.final_ln_b,
    );

    for ((lw, lg), cache) in w
        .layers
        .iter()
        .zip(grad.layers.iter_mut())
        .zip(&trace.layers)
        .rev()
    {
        // Feed-forward branch: x2 = x1 + W2 gelu(W1 LN(x1)).
        let dg = linear_backward(&cache.g, &dx, n, &lw.w2, &mut lg.w2, &mut lg.b2);
        let du: Vec<F> = dg.iter().zip(&cache.u).map(|(&g, &u)| g * gelu_grad(u)).collect();
        let dc = linear_backward(&cache.c, &du, n, &lw.w1, &mut lg.w1, &mut lg.b1);
        let dx1_ln = layer_norm_backward(&dc, d, &cache.ln2, &lw.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b);
        let dx1: Vec<F> = dx.iter().zip(&dx1_ln).map(|(&a, &b)| a + b).collect();

        // Attention branch: x1 = x + Wo attn(LN(x)).
        let do_ = linear_backward(&cache.o, &dx1, n, &lw.wo, &mut lg.wo, &mut lg.bo);
        let mut dq = vec![F::zero(); n * d];
        let mut dk = vec![F::zero(); n * d];
        let mut dv = vec![F::zero(); n * d];
        let mut ds = vec![F::zero(); n * n];
        for h in 0..heads {
            let p = &cache.probs[h * n * n..(h + 1) * n * n];
            let hv = View::columns(n, d, h * dh, dh);
            // dP = dO_h V_hᵀ, dV_h = Pᵀ dO_h
            gemm(&do_, hv, &cache.v, hv.t(), &mut ds, View::dense(n, n), false);
            gemm(p, View::dense(n, n).t(), &do_, hv, &mut dv, hv, false);
            let bias_grad = lg.rel_bias.row_mut(h);
            for i in 0..n {
                let pr = &p[i * n..(i + 1) * n];
                let dr = &mut ds[i * n..(i + 1) * n];
                let dot: F = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for j in 0..n {
                    dr[j] = pr[j] * (dr[j] - dot);
                    bias_grad[input.buckets[i * n + j] as usize] += dr[j];
                }
            }
            for s in ds.iter_mut() {
                *s *= scale;
            }
            gemm(&ds, View::dense(n, n), &cache.k, hv, &mut dq, hv, false);
            gemm(&ds, View::dense(n, n).t(), &cache.q, hv, &mut dk, hv, false);
        }
        let mut da = linear_backward(&cache.a, &dq, n, &lw.wq, &mut lg.wq, &mut lg.bq);
        let da_k = linear_backward(&cache.a, &dk, n, &lw.wk, &mut lg.wk, &mut lg.bk);
        let da_v = linear_backward(&cache.a, &dv, n, &lw.wv, &mut lg.wv, &mut lg.bv);
        for ((a, b), c) in da.iter_mut().zip(&da_k).zip(&da_v) {
            *a += *b + *c;
        }
        let dx_ln = layer_norm_backward(&da, d, &cache.ln1, &lw.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b);
        dx = dx1.iter().zip(&dx_ln).map(|(&a, &b)| a + b).collect();
    }

    for (row, src) in dx.chunks_exact(d).zip(&input.sources) {
        match *src {
            Source::Learned(k) => add_row(grad.s_prompt.row_mut(k), row, F::one()),
            Source::Id(id) => add_row(grad.embedding.row_mut(id as usize), row, F::one()),
            Source::Mean(ref pieces) => {
                let inv = F::one() / F::from_f64(pieces.len() as f64);
                for &id in pieces.iter() {
                    add_row(grad.embedding.row_mut(id as usize), row, inv);
                }
            }
        }
    }
}

fn add_row<F: Scalar>(dst: &mut [F], src: &[F], factor: F) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += *b * factor;
    }
}
