//! End-to-end runs: mine, pre-train, fine-tune and zero-shot evaluate under
//! the four prompt/pre-training combinations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ConfigMap;
use crate::corpus::{read_corpus, write_corpus, CorpusGroup};
use crate::error::{Error, Result};
use crate::evalkit::F1Report;
use crate::miner::{mine_corpus, read_page_dir};
use crate::query::{entity_prompt_text, PromptMode};
use crate::synthetic::{gen_synthetic, write_synthetic, LayoutStyle, SyntheticSpec};
use crate::tagger::vocab::{DEFAULT_HASH_BAND, DEFAULT_MIN_FREQ};
use crate::tagger::{save_params, ModelConfig, ModelParams, Vocab};
use crate::trainer::{finetune, pretrain, write_trace, zero_shot_eval, TrainConfig};

/// Model dimensions apart from the vocabulary, which is built from data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub s_prompt_len: usize,
    pub max_seq_len: usize,
    pub hash_band: u32,
    pub min_freq: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = ModelConfig::new(0);
        ModelShape {
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            ffn_dim: c.ffn_dim,
            s_prompt_len: c.s_prompt_len,
            max_seq_len: c.max_seq_len,
            hash_band: DEFAULT_HASH_BAND,
            min_freq: DEFAULT_MIN_FREQ,
        }
    }
}

impl ModelShape {
    pub fn config(&self, vocab: &Vocab) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab.size(),
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            ffn_dim: self.ffn_dim,
            s_prompt_len: self.s_prompt_len,
            max_seq_len: self.max_seq_len,
        }
    }
}

/// Existing inputs used instead of generated synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub pages_dir: PathBuf,
    pub source: PathBuf,
    pub target: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synthetic: SyntheticSpec,
    pub data: Option<DataPaths>,
    pub model: ModelShape,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            synthetic: SyntheticSpec::default(),
            data: None,
            model: ModelShape::default(),
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(),
        }
    }
}

fn parse_layout(s: &str) -> Result<LayoutStyle> {
    match s {
        "key_left" => Ok(LayoutStyle::KeyLeft),
        "value_left" => Ok(LayoutStyle::ValueLeft),
        other => Err(Error::Config(format!(
            "unknown layout {other:?} (expected key_left or value_left)"
        ))),
    }
}

pub fn apply_train_keys(c: &mut ConfigMap, prefix: &str, t: &mut TrainConfig) -> Result<()> {
    c.take(&format!("{prefix}steps"), &mut t.steps)?;
    c.take(&format!("{prefix}batch_size"), &mut t.batch_size)?;
    c.take(&format!("{prefix}learning_rate"), &mut t.learning_rate)?;
    c.take(&format!("{prefix}warmup_fraction"), &mut t.warmup_fraction)?;
    c.take(&format!("{prefix}decay"), &mut t.decay)?;
    c.take(&format!("{prefix}beta1"), &mut t.beta1)?;
    c.take(&format!("{prefix}beta2"), &mut t.beta2)?;
    c.take(&format!("{prefix}epsilon"), &mut t.epsilon)?;
    c.take(&format!("{prefix}clip_norm"), &mut t.clip_norm)?;
    c.take(&format!("{prefix}prompt_lr_scale"), &mut t.prompt_lr_scale)?;
    c.take(&format!("{prefix}mode"), &mut t.mode)?;
    c.take(&format!("{prefix}seed"), &mut t.seed)?;
    t.validate()
}

pub fn apply_model_keys(c: &mut ConfigMap, m: &mut ModelShape) -> Result<()> {
    c.take("model.d_model", &mut m.d_model)?;
    c.take("model.n_layers", &mut m.n_layers)?;
    c.take("model.n_heads", &mut m.n_heads)?;
    c.take("model.ffn_dim", &mut m.ffn_dim)?;
    c.take("model.s_prompt_len", &mut m.s_prompt_len)?;
    c.take("model.max_seq_len", &mut m.max_seq_len)?;
    c.take("model.hash_band", &mut m.hash_band)?;
    c.take("model.min_freq", &mut m.min_freq)?;
    Ok(())
}

pub fn apply_synthetic_keys(c: &mut ConfigMap, s: &mut SyntheticSpec) -> Result<()> {
    c.take("synthetic.n_source_docs", &mut s.n_source_docs)?;
    c.take("synthetic.n_target_docs", &mut s.n_target_docs)?;
    c.take("synthetic.n_pretrain_pages", &mut s.n_pretrain_pages)?;
    c.take("synthetic.n_domains", &mut s.n_domains)?;
    c.take("synthetic.vocab_shift", &mut s.vocab_shift)?;
    c.take("synthetic.wide_fraction", &mut s.wide_fraction)?;
    c.take("synthetic.wide_value_left", &mut s.wide_value_left)?;
    if let Some(v) = c.take_string("synthetic.source_layout") {
        s.source_layout = parse_layout(&v)?;
    }
    if let Some(v) = c.take_string("synthetic.target_layout") {
        s.target_layout = parse_layout(&v)?;
    }
    s.validate()
}

impl PipelineConfig {
    /// Applies `seed`, then every key in `c`; the per-stage seeds derive from
    /// `seed` unless set explicitly.
    pub fn from_map(mut c: ConfigMap, seed: u64) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.set_seed(seed);
        apply_synthetic_keys(&mut c, &mut cfg.synthetic)?;
        apply_model_keys(&mut c, &mut cfg.model)?;
        apply_train_keys(&mut c, "pretrain.", &mut cfg.pretrain)?;
        apply_train_keys(&mut c, "finetune.", &mut cfg.finetune)?;
        let data = [
            c.take_string("data.pages"),
            c.take_string("data.source"),
            c.take_string("data.target"),
        ];
        cfg.data = match data {
            [Some(p), Some(s), Some(t)] => Some(DataPaths {
                pages_dir: p.into(),
                source: s.into(),
                target: t.into(),
            }),
            [None, None, None] => None,
            _ => {
                return Err(Error::Config(
                    "data.pages, data.source and data.target must be given together".into(),
                ))
            }
        };
        c.finish()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synthetic.seed = seed;
        self.pretrain.seed = seed.wrapping_add(1);
        self.finetune.seed = seed.wrapping_add(2);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Arm {
    pub pretrained: bool,
    pub mode: PromptMode,
}

impl Arm {
    pub const ALL: [Arm; 4] = [
        Arm {
            pretrained: false,
            mode: PromptMode::EOnly,
        },
        Arm {
            pretrained: false,
            mode: PromptMode::Dual,
        },
        Arm {
            pretrained: true,
            mode: PromptMode::EOnly,
        },
        Arm {
            pretrained: true,
            mode: PromptMode::Dual,
        },
    ];

    pub fn name(&self) -> String {
        format!(
            "{}+{}",
            if self.pretrained {
                "pretrain"
            } else {
                "no-pretrain"
            },
            self.mode
        )
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub arm: Arm,
    pub report: F1Report,
    pub finetune_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub arms: Vec<ArmResult>,
    pub pretrain_traces: Vec<(PromptMode, Vec<f64>)>,
    /// Pre-trained dual-prompt model evaluated on its own fine-tuning corpus.
    pub identity: F1Report,
}

impl PipelineOutput {
    pub fn arm(&self, arm: Arm) -> &ArmResult {
        self.arms.iter().find(|a| a.arm == arm).expect("every arm runs")
    }

    /// Arms sorted by macro-F1, best first; ties keep arm order.
    pub fn comparison_table(&self) -> String {
        let mut rows: Vec<&ArmResult> = self.arms.iter().collect();
        rows.sort_by(|a, b| b.report.macro_f1.total_cmp(&a.report.macro_f1));
        let mut out = format!("{:<20} {:>9} {:>9}\n", "arm", "macro-F1", "micro-F1");
        for r in rows {
            out.push_str(&format!(
                "{:<20} {:>9.4} {:>9.4}\n",
                r.arm.name(),
                r.report.macro_f1,
                r.report.micro_f1
            ));
        }
        out
    }
}

/// Vocabulary over everything a training run sees: document words, schema
/// ids and entity names. Target documents are excluded.
pub fn build_vocab(groups: &[&CorpusGroup], shape: &ModelShape) -> Vocab {
    let mut texts: Vec<String> = Vec::new();
    for group in groups {
        for doc in &group.documents {
            texts.push(doc.schema_id.clone());
            texts.extend(doc.tokens.iter().map(|t| t.text.clone()));
            texts.extend(doc.spans.iter().map(|s| entity_prompt_text(&s.entity_type)));
        }
    }
    Vocab::build(texts.iter().map(String::as_str), shape.min_freq, shape.hash_band)
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name.into(),
        source: Box::new(e),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn single_group(mut groups: Vec<CorpusGroup>, what: &str) -> Result<CorpusGroup> {
    match groups.len() {
        1 => Ok(groups.remove(0)),
        n => Err(Error::Invalid(format!(
            "{what} corpus must hold one schema, found {n}"
        ))),
    }
}

/// Runs every arm and writes artifacts under `workdir`:
/// `corpora/`, `params/`, `reports/` and `traces/`.
pub fn run_pipeline(cfg: &PipelineConfig, workdir: impl AsRef<Path>) -> Result<PipelineOutput> {
    let workdir = workdir.as_ref();
    let dirs = ["corpora", "params", "reports", "traces"].map(|d| workdir.join(d));
    for d in &dirs {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let [corpora, params_dir, reports, traces] = dirs;

    let data = match &cfg.data {
        Some(d) => d.clone(),
        None => {
            let generated = stage("gen", gen_synthetic(&cfg.synthetic))?;
            let paths = stage("gen", write_synthetic(&generated, &corpora))?;
            DataPaths {
                pages_dir: paths.pages_dir,
                source: paths.source,
                target: paths.target,
            }
        }
    };
    let pages = stage("mine", read_page_dir(&data.pages_dir))?;
    let mined = mine_corpus(pages);
    stage("mine", write_corpus(&mined, corpora.join("pretrain.jsonl")))?;
    let source = stage(
        "finetune",
        read_corpus(&data.source).and_then(|g| single_group(g, "source")),
    )?;
    let target = stage(
        "eval",
        read_corpus(&data.target).and_then(|g| single_group(g, "target")),
    )?;

    let mut vocab_groups: Vec<&CorpusGroup> = mined.iter().collect();
    vocab_groups.push(&source);
    let vocab = build_vocab(&vocab_groups, &cfg.model);
    let init = stage(
        "init",
        ModelParams::init(cfg.model.config(&vocab), vocab, cfg.seed),
    )?;
    stage("init", save_params(&init, params_dir.join("init.bin")))?;

    let mut pretrained = Vec::new();
    let mut pretrain_traces = Vec::new();
    for mode in [PromptMode::EOnly, PromptMode::Dual] {
        let tc = TrainConfig {
            mode,
            ..cfg.pretrain.clone()
        };
        log::info!("pre-training ({mode})");
        let out = stage("pretrain", pretrain(init.clone(), &mined, &tc))?;
        stage(
            "pretrain",
            save_params(&out.params, params_dir.join(format!("pretrain-{mode}.bin"))),
        )?;
        stage(
            "pretrain",
            write_trace(&out.trace, traces.join(format!("pretrain-{mode}.csv"))),
        )?;
        pretrained.push((mode, out.params));
        pretrain_traces.push((mode, out.trace));
    }

    let mut arms = Vec::new();
    let mut identity = None;
    for arm in Arm::ALL {
        let start = if arm.pretrained {
            pretrained
                .iter()
                .find(|(m, _)| *m == arm.mode)
                .map(|(_, p)| p.clone())
                .expect("pre-trained")
        } else {
            init.clone()
        };
        let tc = TrainConfig {
            mode: arm.mode,
            ..cfg.finetune.clone()
        };
        log::info!("fine-tuning {arm}");
        let out = stage("finetune", finetune(start, &source, &tc))?;
        let name = arm.name();
        stage(
            "finetune",
            save_params(&out.params, params_dir.join(format!("{name}.bin"))),
        )?;
        stage(
            "finetune",
            write_trace(&out.trace, traces.join(format!("finetune-{name}.csv"))),
        )?;
        let report = stage("eval", zero_shot_eval(&out.params, &target, None, arm.mode))?;
        write_text(&reports.join(format!("{name}.txt")), &report.table())?;
        write_text(&reports.join(format!("{name}.json")), &report.to_json())?;
        if arm
            == (Arm {
                pretrained: true,
                mode: PromptMode::Dual,
            })
        {
            let id = stage("eval", zero_shot_eval(&out.params, &source, None, arm.mode))?;
            write_text(&reports.join("identity-pretrain+dual.txt"), &id.table())?;
            identity = Some(id);
        }
        arms.push(ArmResult {
            arm,
            report,
            finetune_trace: out.trace,
        });
    }
    let output = PipelineOutput {
        arms,
        pretrain_traces,
        identity: identity.expect("pretrain+dual arm runs"),
    };
    write_text(&reports.join("comparison.txt"), &output.comparison_table())?;
    Ok(output)
}
