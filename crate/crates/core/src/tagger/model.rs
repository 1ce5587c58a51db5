//! Model configuration, parameter tensors, initialization and the binary
//! parameter file.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Scalar, Tensor};
use super::vocab::Vocab;
use crate::boise::NUM_LABELS;
use crate::error::{Error, Result};

/// Relative-position buckets per axis (sign × log scale).
pub const AXIS_BUCKETS: usize = 7;
/// Bias entry used whenever a prompt position is involved.
pub const NON_SPATIAL_BUCKET: usize = AXIS_BUCKETS * AXIS_BUCKETS;
pub const BIAS_ENTRIES: usize = NON_SPATIAL_BUCKET + 1;

/// Learned schema prompt initialization range.
pub const S_PROMPT_INIT: f64 = 0.05;

const MAGIC: &[u8; 8] = b"DQPARAMS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub s_prompt_len: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 128,
            s_prompt_len: 8,
            max_seq_len: 512,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, usize); 7] {
        [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("s_prompt_len", self.s_prompt_len),
            ("max_seq_len", self.max_seq_len),
        ]
    }

    /// Errors naming the first field that differs from `expected`.
    pub fn ensure_matches(&self, expected: &ModelConfig) -> Result<()> {
        for ((name, actual), (_, want)) in self.fields().iter().zip(expected.fields()) {
            if *actual != want {
                return Err(Error::ParamFile(format!(
                    "config mismatch for {name}: expected {want}, found {actual}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<F> {
    pub ln1_g: Tensor<F>,
    pub ln1_b: Tensor<F>,
    pub wq: Tensor<F>,
    pub bq: Tensor<F>,
    pub wk: Tensor<F>,
    pub bk: Tensor<F>,
    pub wv: Tensor<F>,
    pub bv: Tensor<F>,
    pub wo: Tensor<F>,
    pub bo: Tensor<F>,
    pub ln2_g: Tensor<F>,
    pub ln2_b: Tensor<F>,
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
    /// `n_heads × BIAS_ENTRIES` additive attention biases.
    pub rel_bias: Tensor<F>,
}

/// Every trainable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<F> {
    pub embedding: Tensor<F>,
    /// Learned schema prompt vectors, `s_prompt_len × d_model`.
    pub s_prompt: Tensor<F>,
    pub layers: Vec<LayerWeights<F>>,
    pub final_ln_g: Tensor<F>,
    pub final_ln_b: Tensor<F>,
    pub head_w: Tensor<F>,
    pub head_b: Tensor<F>,
}

const LAYER_TENSORS: [&str; 17] = [
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_g", "ln2_b", "w1", "b1", "w2",
    "b2", "rel_bias",
];

impl<F> LayerWeights<F> {
    fn tensors(&self) -> [&Tensor<F>; 17] {
        [
            &self.ln1_g,
            &self.ln1_b,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_g,
            &self.ln2_b,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.rel_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<F>; 17] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.rel_bias,
        ]
    }
}

impl<F: Scalar> Weights<F> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let layer = || LayerWeights {
            ln1_g: Tensor::zeros(&[d]),
            ln1_b: Tensor::zeros(&[d]),
            wq: Tensor::zeros(&[d, d]),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::zeros(&[d, d]),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::zeros(&[d, d]),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::zeros(&[d, d]),
            bo: Tensor::zeros(&[d]),
            ln2_g: Tensor::zeros(&[d]),
            ln2_b: Tensor::zeros(&[d]),
            w1: Tensor::zeros(&[d, cfg.ffn_dim]),
            b1: Tensor::zeros(&[cfg.ffn_dim]),
            w2: Tensor::zeros(&[cfg.ffn_dim, d]),
            b2: Tensor::zeros(&[d]),
            rel_bias: Tensor::zeros(&[cfg.n_heads, BIAS_ENTRIES]),
        };
        Weights {
            embedding: Tensor::zeros(&[cfg.vocab_size, d]),
            s_prompt: Tensor::zeros(&[cfg.s_prompt_len, d]),
            layers: (0..cfg.n_layers).map(|_| layer()).collect(),
            final_ln_g: Tensor::zeros(&[d]),
            final_ln_b: Tensor::zeros(&[d]),
            head_w: Tensor::zeros(&[d, NUM_LABELS]),
            head_b: Tensor::zeros(&[NUM_LABELS]),
        }
    }

    /// Random initialization, fully determined by `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut w = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |t: &mut Tensor<F>, limit: f64| {
            for v in &mut t.data {
                *v = F::from_f64(rng.gen_range(-limit..limit));
            }
        };
        let d = cfg.d_model as f64;
        uniform(&mut w.embedding, 0.1);
        uniform(&mut w.s_prompt, S_PROMPT_INIT);
        for layer in &mut w.layers {
            layer.ln1_g.data.fill(F::one());
            layer.ln2_g.data.fill(F::one());
            let lim = (3.0 / d).sqrt();
            uniform(&mut layer.wq, lim);
            uniform(&mut layer.wk, lim);
            uniform(&mut layer.wv, lim);
            uniform(&mut layer.wo, lim / (2.0 * cfg.n_layers as f64).sqrt());
            uniform(&mut layer.w1, lim);
            uniform(
                &mut layer.w2,
                (3.0 / cfg.ffn_dim as f64).sqrt() / (2.0 * cfg.n_layers as f64).sqrt(),
            );
        }
        w.final_ln_g.data.fill(F::one());
        uniform(&mut w.head_w, (1.0 / d).sqrt());
        w
    }

    /// Tensors in file order with their names.
    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = vec![
            ("embedding".to_string(), &self.embedding),
            ("s_prompt".to_string(), &self.s_prompt),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_TENSORS.iter().zip(layer.tensors()) {
                out.push((format!("layer{i}.{name}"), t));
            }
        }
        out.push(("final_ln_g".into(), &self.final_ln_g));
        out.push(("final_ln_b".into(), &self.final_ln_b));
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    /// Tensors in the same order as [`Weights::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out: Vec<&mut Tensor<F>> = vec![&mut self.embedding, &mut self.s_prompt];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.final_ln_g);
        out.push(&mut self.final_ln_b);
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Weights<F>) {
        for (mine, (_, theirs)) in self.tensors_mut().into_iter().zip(other.named()) {
            mine.add_assign(theirs);
        }
    }

    pub fn scale(&mut self, factor: F) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }

    pub fn cast<G: Scalar>(&self) -> Weights<G> {
        let cast_layer = |l: &LayerWeights<F>| LayerWeights {
            ln1_g: l.ln1_g.cast(),
            ln1_b: l.ln1_b.cast(),
            wq: l.wq.cast(),
            bq: l.bq.cast(),
            wk: l.wk.cast(),
            bk: l.bk.cast(),
            wv: l.wv.cast(),
            bv: l.bv.cast(),
            wo: l.wo.cast(),
            bo: l.bo.cast(),
            ln2_g: l.ln2_g.cast(),
            ln2_b: l.ln2_b.cast(),
            w1: l.w1.cast(),
            b1: l.b1.cast(),
            w2: l.w2.cast(),
            b2: l.b2.cast(),
            rel_bias: l.rel_bias.cast(),
        };
        Weights {
            embedding: self.embedding.cast(),
            s_prompt: self.s_prompt.cast(),
            layers: self.layers.iter().map(cast_layer).collect(),
            final_ln_g: self.final_ln_g.cast(),
            final_ln_b: self.final_ln_b.cast(),
            head_w: self.head_w.cast(),
            head_b: self.head_b.cast(),
        }
    }
}

/// A trained or freshly initialized tagger: configuration, tokenizer
/// vocabulary and `f32` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub weights: Weights<f32>,
}

impl ModelParams {
    pub fn init(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.size() {
            return Err(Error::Config(format!(
                "vocab_size {} does not match vocabulary of {} ids",
                config.vocab_size,
                vocab.size()
            )));
        }
        Ok(ModelParams {
            weights: Weights::init(&config, seed),
            config,
            vocab,
        })
    }

    /// Human-readable summary: parameter count and per-tensor L2 norms.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "parameters: {}\nvocab: {} words, hash band {}\n",
            self.weights.parameter_count(),
            self.vocab.words().len(),
            self.vocab.hash_band()
        );
        for (name, t) in self.weights.named() {
            out.push_str(&format!("{name:<18} {:>12?} norm {:.6}\n", t.shape, t.norm()));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, FORMAT_VERSION);
        for (_, v) in self.config.fields() {
            put_u32(&mut buf, v as u32);
        }
        put_u32(&mut buf, self.vocab.hash_band());
        put_u32(&mut buf, self.vocab.words().len() as u32);
        for w in self.vocab.words() {
            put_u32(&mut buf, w.len() as u32);
            buf.extend_from_slice(w.as_bytes());
        }
        let named = self.weights.named();
        put_u32(&mut buf, named.len() as u32);
        for (name, t) in named {
            put_u32(&mut buf, name.len() as u32);
            buf.extend_from_slice(name.as_bytes());
            put_u32(&mut buf, t.shape.len() as u32);
            for &dim in &t.shape {
                put_u32(&mut buf, dim as u32);
            }
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::ParamFile("not a parameter file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::ParamFile(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let mut f = [0usize; 7];
        for v in &mut f {
            *v = r.u32()? as usize;
        }
        let config = ModelConfig {
            vocab_size: f[0],
            d_model: f[1],
            n_layers: f[2],
            n_heads: f[3],
            ffn_dim: f[4],
            s_prompt_len: f[5],
            max_seq_len: f[6],
        };
        config
            .validate()
            .map_err(|e| Error::ParamFile(format!("bad header: {e}")))?;
        let hash_band = r.u32()?;
        if hash_band == 0 {
            return Err(Error::ParamFile("zero hash band".into()));
        }
        let n_words = r.u32()? as usize;
        let mut words = Vec::with_capacity(n_words.min(1 << 20));
        for _ in 0..n_words {
            let len = r.u32()? as usize;
            let w = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::ParamFile("vocabulary word is not UTF-8".into()))?;
            words.push(w.to_string());
        }
        let vocab = Vocab::from_words(words, hash_band);
        if vocab.size() != config.vocab_size {
            return Err(Error::ParamFile(format!(
                "vocabulary has {} ids, header says {}",
                vocab.size(),
                config.vocab_size
            )));
        }

        let mut weights = Weights::<f32>::zeros(&config);
        let expected: Vec<(String, Vec<usize>)> = weights
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape.clone()))
            .collect();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(Error::ParamFile(format!(
                "expected {} tensors, found {count}",
                expected.len()
            )));
        }
        for ((name, shape), tensor) in expected.into_iter().zip(weights.tensors_mut()) {
            let len = r.u32()? as usize;
            let found = String::from_utf8_lossy(r.take(len)?).into_owned();
            if found != name {
                return Err(Error::ParamFile(format!("expected tensor {name}, found {found}")));
            }
            let ndim = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            if dims != shape {
                return Err(Error::ParamFile(format!(
                    "tensor {name}: expected shape {shape:?}, found {dims:?}"
                )));
            }
            let raw = r.take(tensor.len() * 4)?;
            for (v, chunk) in tensor.data.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::ParamFile(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(ModelParams {
            config,
            vocab,
            weights,
        })
    }
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&params.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelParams::from_bytes(&bytes)
}

/// Loads and checks the stored configuration against `expected`.
pub fn load_params_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ModelParams> {
    let params = load_params(path)?;
    params.config.ensure_matches(expected)?;
    Ok(params)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ParamFile(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        let vocab = Vocab::build(["alpha beta alpha beta gamma gamma"], 2, 16);
        let mut cfg = ModelConfig::new(vocab.size());
        cfg.d_model = 16;
        cfg.ffn_dim = 32;
        ModelParams::init(cfg, vocab, 7).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_params(&p, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(loaded, p);
        assert_eq!(loaded.to_bytes(), fs::read(&path).unwrap());
    }

    #[test]
    fn wrong_width_names_expected_and_actual() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_params(&p, &path).unwrap();
        let mut expected = p.config;
        expected.d_model = 32;
        let msg = load_params_expecting(&path, &expected).unwrap_err().to_string();
        assert!(
            msg.contains("d_model") && msg.contains("32") && msg.contains("16"),
            "{msg}"
        );
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = params().to_bytes();
        for cut in [4, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(ModelParams::from_bytes(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(ModelParams::from_bytes(&bad)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn init_is_seeded() {
        let a = params();
        let b = params();
        assert_eq!(a, b);
        let c = ModelParams::init(a.config, a.vocab.clone(), 8).unwrap();
        assert_ne!(a.weights.embedding, c.weights.embedding);
        assert!(a
            .weights
            .s_prompt
            .data
            .iter()
            .all(|v| v.abs() <= S_PROMPT_INIT as f32));
    }

    #[test]
    fn summary_lists_tensors() {
        let s = params().summary();
        assert!(s.contains("layer1.rel_bias") && s.contains("head_w"));
    }
}
