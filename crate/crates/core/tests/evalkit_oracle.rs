use std::collections::BTreeMap;

use docquery::corpus::EntitySpan;
use docquery::evalkit::{aggregate, match_spans, Counts};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest matching between predictions and gold where an edge joins two
/// identical spans, by exhaustive search.
fn max_matching(pred: &[EntitySpan], gold: &[EntitySpan], used: &mut Vec<bool>) -> usize {
    let Some((first, rest)) = pred.split_first() else {
        return 0;
    };
    let mut best = max_matching(rest, gold, used);
    for j in 0..gold.len() {
        if !used[j] && gold[j] == *first {
            used[j] = true;
            best = best.max(1 + max_matching(rest, gold, used));
            used[j] = false;
        }
    }
    best
}

fn oracle(pred: &[EntitySpan], gold: &[EntitySpan]) -> BTreeMap<String, Counts> {
    let mut types: Vec<&str> = pred.iter().chain(gold).map(|s| s.entity_type.as_str()).collect();
    types.sort();
    types.dedup();
    types
        .into_iter()
        .map(|t| {
            let p: Vec<EntitySpan> = pred.iter().filter(|s| s.entity_type == t).cloned().collect();
            let g: Vec<EntitySpan> = gold.iter().filter(|s| s.entity_type == t).cloned().collect();
            let tp = max_matching(&p, &g, &mut vec![false; g.len()]);
            (
                t.to_string(),
                Counts {
                    tp,
                    fp: p.len() - tp,
                    fn_: g.len() - tp,
                },
            )
        })
        .collect()
}

fn random_spans(rng: &mut ChaCha8Rng) -> Vec<EntitySpan> {
    let n = rng.gen_range(0..6);
    (0..n)
        .map(|_| {
            let s = rng.gen_range(0..4);
            let e = s + rng.gen_range(1..3);
            EntitySpan::new(["q", "a"][rng.gen_range(0..2)], s, e)
        })
        .collect()
}

#[test]
fn counts_match_bipartite_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let pred = random_spans(&mut rng);
        let gold = random_spans(&mut rng);
        let mut got = match_spans(&pred, &gold);
        got.retain(|_, c| !c.is_empty());
        assert_eq!(got, oracle(&pred, &gold), "pred {pred:?} gold {gold:?}");
    }
}

#[test]
fn report_is_invariant_to_document_and_span_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let docs: Vec<(Vec<EntitySpan>, Vec<EntitySpan>)> = (0..20)
        .map(|_| (random_spans(&mut rng), random_spans(&mut rng)))
        .collect();
    let report =
        |docs: &[(Vec<EntitySpan>, Vec<EntitySpan>)]| aggregate(docs.iter().map(|(p, g)| match_spans(p, g)));
    let base = report(&docs);
    for _ in 0..10 {
        let mut shuffled = docs.clone();
        shuffled.shuffle(&mut rng);
        for (p, g) in &mut shuffled {
            p.shuffle(&mut rng);
            g.shuffle(&mut rng);
        }
        assert_eq!(report(&shuffled), base);
    }
}

#[test]
fn macro_and_micro_diverge_with_imbalanced_entities() {
    let gold: Vec<EntitySpan> = (0..100)
        .map(|i| EntitySpan::new("a", i, i + 1))
        .chain([EntitySpan::new("b", 200, 201)])
        .collect();
    let pred: Vec<EntitySpan> = (0..100).map(|i| EntitySpan::new("a", i, i + 1)).collect();
    let r = aggregate([match_spans(&pred, &gold)]);
    assert!((r.macro_f1 - 0.5).abs() < 1e-12);
    // Pooled: tp 100, fp 0, fn 1.
    let expected_micro = 2.0 * 1.0 * (100.0 / 101.0) / (1.0 + 100.0 / 101.0);
    assert!((r.micro_f1 - expected_micro).abs() < 1e-12);
    assert!(r.micro_f1 > 0.9);
}

#[test]
fn adding_a_correct_span_never_lowers_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let pred = random_spans(&mut rng);
        let gold = random_spans(&mut rng);
        let Some(extra) = gold.iter().find(|g| !pred.contains(g)).cloned() else {
            continue;
        };
        let before = aggregate([match_spans(&pred, &gold)]);
        let mut more = pred.clone();
        more.push(extra);
        let after = aggregate([match_spans(&more, &gold)]);
        assert!(after.micro_f1 >= before.micro_f1);
        for (e, s) in &before.per_entity {
            let a = &after.per_entity[e];
            assert!(a.f1 >= s.f1 && a.precision >= s.precision && a.recall >= s.recall);
        }
    }
}
