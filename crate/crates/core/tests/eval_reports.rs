mod common;

use common::{utterance, vocab_and_table};
use proptest::prelude::*;
use zat_core::data::Utterance;
use zat_core::embedding::CharCnnConfig;
use zat_core::encoder::ZatDims;
use zat_core::eval::{
    dump_attention, error_by_length, error_by_pos_tag, error_by_position, read_attention, span_f1, write_attention,
};
use zat_core::numerics::SeededRng;
use zat_core::tagger::{SlotDescription, SlotSpan, ZatConfig, ZatModel};
use zat_core::Tensor;

fn span(u: &str, slot: &str, start: usize, end: usize) -> SlotSpan {
    SlotSpan { utterance: u.into(), slot: slot.into(), start, end }
}

fn hand_fixture() -> (Vec<SlotSpan>, Vec<SlotSpan>) {
    let gold = vec![span("a", "city", 0, 1), span("a", "date", 3, 5), span("b", "city", 2, 3), span("b", "price", 4, 6)];
    let pred = vec![span("a", "city", 0, 1), span("a", "date", 3, 4), span("b", "price", 4, 6)];
    (pred, gold)
}

#[test]
fn hand_worked_scores() {
    let (pred, gold) = hand_fixture();
    let r = span_f1(&pred, &gold);
    assert_eq!((r.micro.tp, r.micro.fp, r.micro.fn_), (2, 1, 2));
    // P = 2/3, R = 2/4, F1 = 2PR / (P + R) = 4/7.
    assert!((r.precision() - 2.0 / 3.0).abs() < 1e-12);
    assert!((r.recall() - 0.5).abs() < 1e-12);
    assert!((r.f1() - 4.0 / 7.0).abs() < 1e-12);
    assert_eq!(r.per_slot["date"].fp, 1);
    assert_eq!(r.per_slot["city"].fn_, 1);
}

#[test]
fn empty_inputs_score_zero() {
    let r = span_f1(&[], &[]);
    assert_eq!((r.precision(), r.recall(), r.f1()), (0.0, 0.0, 0.0));
}

#[test]
fn position_buckets_follow_missed_spans() {
    let gold: Vec<SlotSpan> = (0..6).map(|s| span("u", "x", s, s + 1)).collect();
    let pred: Vec<SlotSpan> = gold.iter().filter(|s| s.start < 3).cloned().collect();
    let rates: Vec<f64> = error_by_position(&pred, &gold).values().map(|b| b.error_rate()).collect();
    assert_eq!(rates, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    assert!(error_by_position(&gold, &gold).values().all(|b| b.error_rate() == 0.0));
    assert!(error_by_position(&[], &gold).values().all(|b| b.error_rate() == 1.0));
}

#[test]
fn length_buckets() {
    let gold = vec![span("u", "x", 0, 1), span("u", "y", 2, 5), span("v", "x", 0, 1)];
    let pred = vec![span("u", "x", 0, 1), span("v", "x", 0, 1)];
    let by_len = error_by_length(&pred, &gold);
    assert_eq!(by_len[&1].error_rate(), 0.0);
    assert_eq!(by_len[&3].error_rate(), 1.0);
    assert!(!by_len.contains_key(&2));
}

fn pos_utterance(id: &str, text: &str, pos: &str) -> Utterance {
    let mut u = utterance(id, text, &[]);
    u.pos = pos.split_whitespace().map(str::to_string).collect();
    u
}

#[test]
fn pos_attribution_counts_tokens() {
    let utts = vec![pos_utterance("u", "cheap flight to new york", "ADJ NOUN ADP PROPN PROPN")];
    assert!(error_by_pos_tag(&[span("u", "city", 3, 5)], &[span("u", "city", 3, 5)], &utts).unwrap().is_empty());

    let missed = error_by_pos_tag(&[], &[span("u", "thing", 0, 2)], &utts).unwrap();
    assert_eq!((missed["ADJ"].errors, missed["NOUN"].errors), (1, 1));
    assert_eq!(missed.len(), 2);

    let noun_noun = vec![pos_utterance("v", "table booking", "NOUN NOUN")];
    let e = error_by_pos_tag(&[], &[span("v", "x", 0, 2)], &noun_noun).unwrap();
    assert_eq!((e["NOUN"].errors, e["NOUN"].frequency, e["NOUN"].share()), (2, 2, 1.0));

    let no_pos = vec![utterance("u", "cheap flight", &[])];
    assert!(error_by_pos_tag(&[], &[span("u", "x", 0, 1)], &no_pos).is_err());
}

fn arb_spans() -> impl Strategy<Value = Vec<SlotSpan>> {
    prop::collection::vec((0..4usize, 0..3usize, 0..8usize, 1..4usize), 0..25).prop_map(|v| {
        v.into_iter().map(|(u, s, start, len)| span(&format!("u{u}"), &format!("s{s}"), start, start + len)).collect()
    })
}

proptest! {
    #[test]
    fn histograms_reconcile_with_counts(gold in arb_spans(), pred in arb_spans()) {
        let report = span_f1(&pred, &gold);
        let by_pos = error_by_position(&pred, &gold);
        let by_len = error_by_length(&pred, &gold);
        prop_assert_eq!(by_pos.values().map(|b| b.missed).sum::<usize>(), report.micro.fn_);
        prop_assert_eq!(by_len.values().map(|b| b.missed).sum::<usize>(), report.micro.fn_);
        prop_assert_eq!(by_pos.values().map(|b| b.total).sum::<usize>(), gold.len());
        prop_assert_eq!(report.micro.tp + report.micro.fn_, gold.len());
        prop_assert_eq!(report.micro.tp + report.micro.fp, pred.len());
    }

    #[test]
    fn f1_ignores_order(gold in arb_spans(), pred in arb_spans(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = SeededRng::new(seed);
        let (mut g2, mut p2) = (gold.clone(), pred.clone());
        g2.shuffle(&mut rng);
        p2.shuffle(&mut rng);
        prop_assert_eq!(span_f1(&pred, &gold), span_f1(&p2, &g2));
    }

    #[test]
    fn duplicating_a_correct_utterance_never_hurts(gold in arb_spans(), pred in arb_spans()) {
        let f1 = span_f1(&pred, &gold).f1();
        let mut g2 = gold.clone();
        let mut p2 = pred.clone();
        let copy = |s: &SlotSpan| SlotSpan { utterance: "dup".into(), ..s.clone() };
        let correct: Vec<SlotSpan> = gold.iter().filter(|s| s.utterance == "u0").map(copy).collect();
        g2.extend(correct.iter().cloned());
        p2.extend(correct);
        prop_assert!(span_f1(&p2, &g2).f1() >= f1 - 1e-12);
    }

    #[test]
    fn pos_errors_match_recount(gold in arb_spans(), pred in arb_spans()) {
        let utts: Vec<Utterance> = (0..4)
            .map(|u| {
                let mut x = utterance(&format!("u{u}"), "a b c d e f g h i j k", &[]);
                x.pos = (0..11).map(|i| ["NOUN", "VERB", "ADJ"][i % 3].to_string()).collect();
                x
            })
            .collect();
        let errors = error_by_pos_tag(&pred, &gold, &utts).unwrap();
        // Independent recount: unmatched spans by multiset difference.
        let mut unmatched_gold = gold.clone();
        let mut unmatched_pred = Vec::new();
        for p in &pred {
            match unmatched_gold.iter().position(|g| g == p) {
                Some(i) => { unmatched_gold.swap_remove(i); }
                None => unmatched_pred.push(p.clone()),
            }
        }
        let tokens: usize = unmatched_gold.iter().chain(&unmatched_pred).map(|s| s.end - s.start).sum();
        prop_assert_eq!(errors.values().map(|e| e.errors).sum::<usize>(), tokens);
    }
}

#[test]
fn attention_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let tokens: Vec<String> = ["find", "a", "flight"].iter().map(|s| s.to_string()).collect();
    let desc: Vec<String> = ["departure", "city"].iter().map(|s| s.to_string()).collect();
    let a = Tensor::new(vec![3, 2], vec![0.1234567, 0.8765433, 0.5, 0.5, 0.0000004, 0.9999996]).unwrap();
    let path = dir.path().join("a.tsv");
    write_attention(&path, &tokens, &desc, &a).unwrap();
    let (rt, rd, back) = read_attention(&path).unwrap();
    assert_eq!((rt, rd), (tokens.clone(), desc.clone()));
    for (x, y) in a.data().iter().zip(back.data()) {
        assert!((x - y).abs() <= 5e-7);
    }
    assert!(write_attention(&path, &tokens[..2], &desc, &a).is_err());
}

#[test]
fn model_attention_dump() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, table) = vocab_and_table(8, 3);
    let config = ZatConfig {
        dims: ZatDims { lstm_hidden: 4, ff_hidden: 4 },
        char_cnn: Some(CharCnnConfig { char_dim: 4, width: 3, channels: 4 }),
        ..ZatConfig::default()
    };
    let model = ZatModel::new(config, vocab, &table, &mut SeededRng::new(1)).unwrap();
    let tokens: Vec<String> = "book a table for two".split(' ').map(str::to_string).collect();

    let one = SlotDescription::new("city", "city").unwrap();
    let path = dir.path().join("one.tsv");
    dump_attention(&model, &tokens, &one, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with("\t1.000000")), "{text}");

    let two = SlotDescription::new("party_size", "party size").unwrap();
    let path = dir.path().join("two.tsv");
    let a = dump_attention(&model, &tokens, &two, &path).unwrap();
    let (_, _, back) = read_attention(&path).unwrap();
    for t in 0..tokens.len() {
        let row: f64 = (0..2).map(|j| back.at(t, j)).sum();
        assert!((row - 1.0).abs() < 1e-6);
        for j in 0..2 {
            assert!((a.at(t, j) - back.at(t, j)).abs() <= 5e-7);
        }
    }
}
