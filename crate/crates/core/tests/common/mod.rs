#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use factcheck::agents::{ChatRequest, DecodingParams, FnBackend, ScriptedBackend, TranscriptEntry};
use factcheck::corpus::{load_dataset, save_dataset, ClaimRecord, Dataset, EvidenceItem, FormatTag, KnowledgeSource, Verdict};
use factcheck::pipeline::{Agent, AgentSet};

/// `n` claims with two text sentences each; every claim whose index is not
/// a multiple of `no_image_every` also gets one gold image.
pub fn synthetic_dataset(dir: &Path, n: usize, no_image_every: usize) -> Dataset {
    let src = dir.join("src");
    std::fs::create_dir_all(src.join("img")).unwrap();
    let mut items = Vec::new();
    let mut claims = Vec::new();
    for i in 0..n {
        let cid = format!("c{i:03}");
        let t1 = format!("{cid}-t1");
        let t2 = format!("{cid}-t2");
        items.push(EvidenceItem::text(&t1, format!("Statement {i} names the place {}.", i % 5)));
        items.push(EvidenceItem::text(&t2, format!("Report {i} gives the year {}.", 1990 + i)));
        let mut images = Vec::new();
        if no_image_every == 0 || i % no_image_every != 0 {
            let rel = format!("img/{cid}.jpg");
            std::fs::write(src.join(&rel), format!("image bytes {i}")).unwrap();
            let id = format!("{cid}-i1");
            items.push(EvidenceItem::image(&id, rel));
            images.push(id);
        }
        claims.push(ClaimRecord {
            claim_id: cid,
            text: format!("Claim {i}: the event in place {} happened in {}.", i % 5, 1990 + i),
            gold_verdict: Verdict::ALL[i % 3],
            gold_text_evidence: vec![t1, t2],
            gold_image_evidence: images,
            source: "mocheg".into(),
            factcheck_date: None,
        });
    }
    let ks = KnowledgeSource::from_items(&src, items).unwrap();
    let out = dir.join("dataset");
    save_dataset(&out, &claims, &ks).unwrap();
    load_dataset(&out, FormatTag::Mocheg).unwrap()
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn claim_line(req: &ChatRequest) -> String {
    let text = req.messages[0].flat_text();
    text.lines()
        .find_map(|l| l.strip_prefix("Claim: "))
        .unwrap_or_default()
        .to_string()
}

/// Analyzer that calls roughly half the images necessary, keyed on the claim.
pub fn analyzer_fn() -> FnBackend {
    FnBackend::new("analyzer", "llama-3.2-11b-vision", |req| {
        let c = claim_line(req);
        Ok(if fnv(&c).is_multiple_of(2) {
            format!("The image evidence is necessary for verifying the claim \"{c}\".")
        } else {
            format!("The image evidence is not necessary for verifying the claim \"{c}\".")
        })
    })
}

/// Verifier whose verdict depends on the whole prompt, with some unparseable replies.
pub fn verifier_fn() -> FnBackend {
    FnBackend::new("verifier", "qwen2-vl-7b", |req| {
        let h = fnv(&req.messages[0].flat_text());
        Ok(match h % 7 {
            0 => "I am unable to decide.".into(),
            k => format!("Considering the evidence, the verdict is {}.", Verdict::ALL[(k % 3) as usize]),
        })
    })
}

pub fn live_agents() -> AgentSet {
    AgentSet::new(Agent::new(Arc::new(verifier_fn()), DecodingParams::greedy()))
        .with_analyzer(Agent::new(Arc::new(analyzer_fn()), DecodingParams::greedy()))
}

/// Agents answering only from recorded transcript entries.
pub fn replay_agents(entries: Vec<TranscriptEntry>) -> AgentSet {
    AgentSet::new(Agent::new(
        Arc::new(ScriptedBackend::new("verifier", "qwen2-vl-7b", entries.clone())),
        DecodingParams::greedy(),
    ))
    .with_analyzer(Agent::new(
        Arc::new(ScriptedBackend::new("analyzer", "llama-3.2-11b-vision", entries)),
        DecodingParams::greedy(),
    ))
}
