#![allow(dead_code)]

use docquery::boise::encode_spans;
use docquery::boise::{LabelSeq, NUM_LABELS};
use docquery::corpus::{Document, EntitySpan, Token};
use docquery::tagger::{ModelConfig, ModelParams, Vocab, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn six_token_doc() -> Document {
    let words = [
        ("Invoice", 0.0, 0.0),
        ("No:", 80.0, 0.0),
        ("4471", 120.0, 2.0),
        ("Total", 0.0, 20.0),
        ("$13.99", 64.0, 20.0),
        ("Paid", 200.0, 60.0),
    ];
    Document {
        doc_id: "six".into(),
        schema_id: "forms".into(),
        tokens: words
            .iter()
            .map(|&(t, x, y)| Token::new(t, [x, y, x + 8.0 * t.len() as f64, y + 16.0]))
            .collect(),
        spans: vec![EntitySpan::new("total", 4, 5), EntitySpan::new("answer", 1, 3)],
    }
}

pub fn tiny_vocab() -> Vocab {
    Vocab::build(
        ["invoice no total paid answer total invoice no paid answer www . forms . com"],
        2,
        16,
    )
}

pub fn tiny_config(vocab: &Vocab) -> ModelConfig {
    let mut cfg = ModelConfig::new(vocab.size());
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.ffn_dim = 32;
    cfg.s_prompt_len = 3;
    cfg
}

pub fn tiny_params(seed: u64) -> ModelParams {
    let vocab = tiny_vocab();
    ModelParams::init(tiny_config(&vocab), vocab, seed).unwrap()
}

/// Every tensor drawn at random so that all paths carry signal, including
/// the relative-position biases which start at zero.
pub fn randomized(weights: &Weights<f32>, seed: u64) -> Weights<f64> {
    let mut w = weights.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = w.named().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(w.tensors_mut()) {
        let gain = name.ends_with("_g");
        for v in &mut t.data {
            let r: f64 = rng.gen_range(-0.5..0.5);
            *v = if gain { 1.0 + 0.4 * r } else { r };
        }
    }
    w
}

pub fn labels_for(doc: &Document, entity: &str) -> LabelSeq {
    encode_spans(&doc.intervals_of(entity), doc.tokens.len()).unwrap()
}

// Codes: B=0 O=1 I=2 S=3 E=4.
pub fn legal(codes: &[usize]) -> bool {
    let opens = |c: usize| c == 0 || c == 1 || c == 3;
    let closes = |c: usize| c == 1 || c == 3 || c == 4;
    if !opens(codes[0]) || !closes(codes[codes.len() - 1]) {
        return false;
    }
    codes.windows(2).all(|w| {
        let inside_span = w[0] == 0 || w[0] == 2;
        if inside_span {
            w[1] == 2 || w[1] == 4
        } else {
            opens(w[1])
        }
    })
}

/// Best legal sequence by enumeration; among equal scores the one that is
/// smallest when compared from the last position backwards.
pub fn brute_force(em: &[[f64; NUM_LABELS]]) -> (f64, Vec<usize>) {
    let n = em.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mut k in 0..NUM_LABELS.pow(n as u32) {
        let mut codes = vec![0; n];
        for c in codes.iter_mut() {
            *c = k % NUM_LABELS;
            k /= NUM_LABELS;
        }
        if !legal(&codes) {
            continue;
        }
        let score: f64 = codes.iter().enumerate().map(|(i, &c)| em[i][c]).sum();
        let better = match &best {
            None => true,
            Some((s, b)) => score > *s || (score == *s && codes.iter().rev().lt(b.iter().rev())),
        };
        if better {
            best = Some((score, codes));
        }
    }
    best.expect("an all-outside path is always legal")
}
