//! Query construction from schema (S) and entity (E) prompts.
//!
//! Pre-training queries carry the schema id as text. Fine-tuning and
//! zero-shot queries carry a marker for the model's learned schema vectors,
//! which are spliced in after the embedding layer.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::tagger::vocab::{tokenize, Vocab, PAD_ID};

/// Length every text prompt is padded or truncated to.
pub const PROMPT_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum PromptMode {
    /// Entity prompt only.
    EOnly,
    /// Schema prompt followed by entity prompt.
    #[default]
    Dual,
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::EOnly => "e_only",
            PromptMode::Dual => "dual",
        })
    }
}

impl FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "e_only" => Ok(PromptMode::EOnly),
            "dual" => Ok(PromptMode::Dual),
            other => Err(Error::Config(format!(
                "unknown prompt mode {other:?} (expected e_only or dual)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SchemaPrompt {
    /// Tokenized schema id, `PROMPT_LEN` ids with zero padding.
    Text(Vec<u32>),
    /// The model's learned schema vectors.
    Learned,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    pub schema: SchemaPrompt,
    /// Tokenized entity name, `PROMPT_LEN` ids with zero padding.
    pub entity: Vec<u32>,
}

impl Query {
    /// Drops the schema part.
    pub fn entity_only(self) -> Self {
        Query {
            schema: SchemaPrompt::Absent,
            ..self
        }
    }

    pub fn with_mode(self, mode: PromptMode) -> Self {
        match mode {
            PromptMode::Dual => self,
            PromptMode::EOnly => self.entity_only(),
        }
    }

    /// Nominal number of positions, counting padding, for the schema part.
    pub fn schema_len(&self, s_prompt_len: usize) -> usize {
        match self.schema {
            SchemaPrompt::Text(_) => PROMPT_LEN,
            SchemaPrompt::Learned => s_prompt_len,
            SchemaPrompt::Absent => 0,
        }
    }

    /// Nominal length of `[schema ; entity ; document]`.
    pub fn embedded_len(&self, s_prompt_len: usize, doc_len: usize) -> usize {
        self.schema_len(s_prompt_len) + PROMPT_LEN + doc_len
    }
}

pub fn pad_prompt(mut ids: Vec<u32>) -> Vec<u32> {
    ids.resize(PROMPT_LEN, PAD_ID);
    ids
}

/// Text used for an entity prompt: path separators become spaces.
pub fn entity_prompt_text(entity_type: &str) -> String {
    entity_type.replace('/', " ")
}

fn entity_prompt(entity_type: &str, vocab: &Vocab) -> Vec<u32> {
    pad_prompt(tokenize(&entity_prompt_text(entity_type), vocab))
}

pub fn build_pretrain_query(schema_id: &str, entity_type: &str, vocab: &Vocab) -> Query {
    Query {
        schema: SchemaPrompt::Text(pad_prompt(tokenize(schema_id, vocab))),
        entity: entity_prompt(entity_type, vocab),
    }
}

pub fn build_finetune_query(entity_type: &str, vocab: &Vocab) -> Query {
    Query {
        schema: SchemaPrompt::Learned,
        entity: entity_prompt(entity_type, vocab),
    }
}
