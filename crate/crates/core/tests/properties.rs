use std::collections::HashMap;

use chrono::NaiveDate;
use proptest::prelude::*;

use factcheck::corpus::{Modality, Verdict};
use factcheck::embed_index::top_k;
use factcheck::evalkit::{
    chi_square_independence, krippendorff_alpha_nominal, mann_whitney_u_with, oracle_compose,
    score, MwMethod,
};
use factcheck::pipeline::{ParseStatus, Prediction, StageTiming};
use factcheck::webfc::{admit_claim, apply_temporal_filter, Admission, HitStatus, SearchBundle, WebHit};
use factcheck::{Embedding, Index};

fn verdict() -> impl Strategy<Value = Verdict> {
    (0usize..3).prop_map(|i| Verdict::ALL[i])
}

fn pred(id: &str, v: Verdict) -> Prediction {
    Prediction {
        claim_id: id.into(),
        strategy: "s".into(),
        config: "c".into(),
        verdict: v,
        parse_status: ParseStatus::Ok,
        assessment_text: None,
        necessity: None,
        raw_text: String::new(),
        timing_ms: StageTiming::default(),
        error: None,
    }
}

/// Gold labels plus three runs over the same claims.
fn runs_fixture() -> impl Strategy<Value = (Vec<Verdict>, Vec<Vec<Verdict>>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(verdict(), n),
            prop::collection::vec(prop::collection::vec(verdict(), n), 3),
        )
    })
}

fn to_preds(gold: &[Verdict], runs: &[Vec<Verdict>]) -> (HashMap<String, Verdict>, Vec<Vec<Prediction>>) {
    let ids: Vec<String> = (0..gold.len()).map(|i| format!("c{i:03}")).collect();
    let g = ids.iter().cloned().zip(gold.iter().copied()).collect();
    let r = runs
        .iter()
        .map(|run| ids.iter().zip(run).map(|(id, v)| pred(id, *v)).collect())
        .collect();
    (g, r)
}

proptest! {
    #[test]
    fn oracle_dominates_every_run((gold, runs) in runs_fixture()) {
        let (g, preds) = to_preds(&gold, &runs);
        let (_, _, oracle) = oracle_compose(&preds, &g).unwrap();
        for run in &preds {
            let (_, r) = score(run, &g).unwrap();
            prop_assert!(oracle.accuracy >= r.accuracy);
        }
        let covered = (0..gold.len()).filter(|&i| runs.iter().any(|r| r[i] == gold[i])).count();
        prop_assert!((oracle.accuracy - covered as f64 / gold.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_prediction_order((gold, runs) in runs_fixture(), seed in any::<u64>()) {
        let (g, preds) = to_preds(&gold, &runs);
        let mut shuffled = preds[0].clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            let j = (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        let (c1, r1) = score(&preds[0], &g).unwrap();
        let (c2, r2) = score(&shuffled, &g).unwrap();
        prop_assert_eq!(c1, c2);
        prop_assert_eq!(r1.macro_f1, r2.macro_f1);
        prop_assert_eq!(r1.accuracy, r2.accuracy);
    }

    #[test]
    fn macro_f1_bounded_and_one_only_when_perfect((gold, runs) in runs_fixture()) {
        let (g, preds) = to_preds(&gold, &runs);
        let (_, r) = score(&preds[0], &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.macro_f1));
        if r.accuracy < 1.0 {
            prop_assert!(r.macro_f1 < 1.0);
        }
    }

    #[test]
    fn mann_whitney_exact_close_to_normal(
        (a, b) in (6usize..=10, 6usize..=10)
            .prop_filter("combined size", |(x, y)| (15..=20).contains(&(x + y)))
            .prop_flat_map(|(x, y)| {
                let vals = prop::collection::hash_set(0u32..10_000, x + y);
                vals.prop_map(move |s| {
                    let v: Vec<f64> = s.into_iter().map(f64::from).collect();
                    (v[..x].to_vec(), v[x..].to_vec())
                })
            })
    ) {
        let exact = mann_whitney_u_with(&a, &b, MwMethod::Exact).unwrap();
        let normal = mann_whitney_u_with(&a, &b, MwMethod::Normal).unwrap();
        prop_assert_eq!(exact.u, normal.u);
        prop_assert!((exact.p_two_sided - normal.p_two_sided).abs() <= 0.02,
            "exact {} normal {}", exact.p_two_sided, normal.p_two_sided);
    }

    #[test]
    fn mann_whitney_symmetric_in_samples(
        a in prop::collection::vec(0u8..20, 1..12),
        b in prop::collection::vec(0u8..20, 1..12),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = mann_whitney_u_with(&a, &b, MwMethod::Exact).unwrap();
        let ba = mann_whitney_u_with(&b, &a, MwMethod::Exact).unwrap();
        prop_assert!((ab.p_two_sided - ba.p_two_sided).abs() < 1e-12);
        prop_assert!(ab.p_two_sided > 0.0 && ab.p_two_sided <= 1.0);
    }

    #[test]
    fn alpha_invariant_under_relabeling(
        units in prop::collection::vec(prop::collection::vec(0u8..3, 2..4), 2..30),
        perm in Just([0u8, 1, 2]).prop_shuffle(),
    ) {
        let base = krippendorff_alpha_nominal(&units);
        let renamed: Vec<Vec<u8>> = units.iter().map(|u| u.iter().map(|&l| perm[l as usize]).collect()).collect();
        let reordered: Vec<Vec<u8>> = units.iter().map(|u| u.iter().rev().copied().collect()).collect();
        match base {
            Ok(a) => {
                prop_assert!((a - krippendorff_alpha_nominal(&renamed).unwrap()).abs() < 1e-12);
                prop_assert!((a - krippendorff_alpha_nominal(&reordered).unwrap()).abs() < 1e-12);
            }
            Err(_) => prop_assert!(krippendorff_alpha_nominal(&renamed).is_err()),
        }
    }

    #[test]
    fn alpha_is_one_exactly_when_all_agree(
        units in prop::collection::vec(prop::collection::vec(0u8..2, 2..4), 2..30),
    ) {
        let agree = units.iter().all(|u| u.iter().all(|&l| l == u[0]));
        let a = krippendorff_alpha_nominal(&units).unwrap();
        prop_assert_eq!(a == 1.0, agree, "alpha {}", a);
    }

    #[test]
    fn more_failures_never_admit(statuses in prop::collection::vec(0u8..4, 0..=10), extra in 0usize..10) {
        let bundle = |st: &[u8]| SearchBundle {
            claim_id: "x".into(),
            cutoff_date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            doc_hits: st.iter().enumerate().map(|(j, s)| hit(j, *s, None)).collect(),
            image_hit: None,
        };
        let before = admit_claim(&bundle(&statuses));
        let mut worse = statuses.clone();
        for s in worse.iter_mut().filter(|s| **s >= 2).take(extra) {
            *s = 0;
        }
        if before == Admission::Reject {
            prop_assert_eq!(admit_claim(&bundle(&worse)), Admission::Reject);
        }
    }

    #[test]
    fn temporal_filter_is_sound(
        offsets in prop::collection::vec(prop::option::of(-30i64..30), 0..40),
    ) {
        let cutoff = NaiveDate::from_ymd_opt(2023, 6, 15).unwrap();
        let hits: Vec<WebHit> = offsets
            .iter()
            .enumerate()
            .map(|(j, o)| hit(j, 2, o.map(|d| cutoff + chrono::Duration::days(d))))
            .collect();
        let (kept, counts) = apply_temporal_filter(hits, cutoff);
        prop_assert!(kept.iter().all(|h| h.publish_date.is_some_and(|d| d < cutoff)));
        prop_assert_eq!(counts.undated, offsets.iter().filter(|o| o.is_none()).count());
        prop_assert_eq!(counts.post_cutoff, offsets.iter().filter(|o| o.is_some_and(|d| d >= 0)).count());
        prop_assert_eq!(kept.len() + counts.undated + counts.post_cutoff, offsets.len());
    }

    #[test]
    fn top_k_is_sorted_and_bounded(
        vecs in prop::collection::vec(prop::collection::vec(-4i8..4, 3), 1..40),
        q in prop::collection::vec(-4i8..4, 3),
        k in 1usize..50,
    ) {
        prop_assume!(q.iter().any(|x| *x != 0));
        let entries: Vec<_> = vecs
            .iter()
            .enumerate()
            .filter(|(_, v)| v.iter().any(|x| *x != 0))
            .map(|(i, v)| (format!("e{i:02}"), Embedding::new(v.iter().map(|x| f32::from(*x)).collect()).unwrap()))
            .collect();
        prop_assume!(!entries.is_empty());
        let n = entries.len();
        let index = Index::from_entries(Modality::Text, "t", entries).unwrap();
        let query = Embedding::new(q.iter().map(|x| f32::from(*x)).collect()).unwrap();
        let hits = top_k(&query, &index, k).unwrap();
        prop_assert_eq!(hits.len(), k.min(n));
        for w in hits.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].evidence_id < w[1].evidence_id));
        }
        prop_assert!(hits.iter().all(|h| (-1.0..=1.0).contains(&h.score)));
    }
}

fn hit(j: usize, status: u8, date: Option<NaiveDate>) -> WebHit {
    WebHit {
        url: format!("https://h{j}.example/"),
        fetched_html: None,
        extracted_text: Some("text".into()),
        publish_date: date,
        date_source: None,
        status: match status {
            0 => HitStatus::FetchFailed,
            1 => HitStatus::ParseFailed,
            2 => HitStatus::Ok,
            _ => HitStatus::Undated,
        },
    }
}

#[test]
fn chi_square_matches_closed_form() {
    let (a, b, c, d) = (40.0, 11.0, 12.0, 49.0);
    let n = a + b + c + d;
    let direct = n * (a * d - b * c) * (a * d - b * c) / ((a + b) * (c + d) * (a + c) * (b + d));
    let p_direct = statrs::function::erf::erfc((direct / 2.0f64).sqrt());
    let got = chi_square_independence([[40, 11], [12, 49]]).unwrap();
    assert!((got.statistic - direct).abs() < 1e-9, "{} vs {direct}", got.statistic);
    assert!((got.p - p_direct).abs() < 1e-12);
    assert_eq!(got.df, 1);
}

