//! Exact-match span evaluation with micro and macro F1.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::EntitySpan;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    /// `(precision, recall, f1)`, each 0 when undefined.
    pub fn scores(&self) -> (f64, f64, f64) {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_entity: BTreeMap<String, EntityScore>,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub doc_count: usize,
}

/// Per-type counts where a prediction is a true positive iff an identical
/// `(type, start, end)` gold span is still unmatched.
pub fn match_spans(pred: &[EntitySpan], gold: &[EntitySpan]) -> BTreeMap<String, Counts> {
    let mut remaining: BTreeMap<&EntitySpan, usize> = BTreeMap::new();
    for g in gold {
        *remaining.entry(g).or_default() += 1;
    }
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    for p in pred {
        let entry = counts.entry(p.entity_type.clone()).or_default();
        match remaining.get_mut(p) {
            Some(k) if *k > 0 => {
                *k -= 1;
                entry.tp += 1;
            }
            _ => entry.fp += 1,
        }
    }
    for (g, k) in remaining {
        counts.entry(g.entity_type.clone()).or_default().fn_ += k;
    }
    counts
}

/// Pools per-document counts. Entity types with no gold and no predicted
/// span stay in the table but are left out of the macro mean.
pub fn aggregate<I>(per_doc: I) -> F1Report
where
    I: IntoIterator<Item = BTreeMap<String, Counts>>,
{
    let mut totals: BTreeMap<String, Counts> = BTreeMap::new();
    let mut doc_count = 0;
    for doc in per_doc {
        doc_count += 1;
        for (entity, c) in doc {
            totals.entry(entity).or_default().add(c);
        }
    }
    let mut pooled = Counts::default();
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    let per_entity = totals
        .into_iter()
        .map(|(entity, c)| {
            pooled.add(c);
            let (precision, recall, f1) = c.scores();
            if !c.is_empty() {
                macro_sum += f1;
                macro_n += 1;
            }
            let score = EntityScore {
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
                precision,
                recall,
                f1,
            };
            (entity, score)
        })
        .collect();
    let (micro_precision, micro_recall, micro_f1) = pooled.scores();
    F1Report {
        per_entity,
        micro_precision,
        micro_recall,
        micro_f1,
        macro_f1: if macro_n == 0 {
            0.0
        } else {
            macro_sum / macro_n as f64
        },
        doc_count,
    }
}

impl F1Report {
    /// Fixed-width table sorted by entity type.
    pub fn table(&self) -> String {
        let width = self
            .per_entity
            .keys()
            .map(|k| k.len())
            .chain(std::iter::once(6))
            .max()
            .unwrap_or(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
            "entity", "tp", "fp", "fn", "precision", "recall", "f1"
        );
        for (entity, s) in &self.per_entity {
            let _ = writeln!(
                out,
                "{:<width$} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
                entity, s.tp, s.fp, s.fn_, s.precision, s.recall, s.f1
            );
        }
        let _ = writeln!(
            out,
            "micro-F1 {:.4}  macro-F1 {:.4}  documents {}",
            self.micro_f1, self.macro_f1, self.doc_count
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
