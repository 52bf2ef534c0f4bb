use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use serde_json::{json, Value};

use factcheck::agents::{DecodingParams, FnBackend, Transcript};
use factcheck::corpus::{load_dataset, FormatTag};
use factcheck::pipeline::{
    run_dataset, Agent, AgentSet, EvidenceConfig, Retrieval, RunContext, RunOptions, Strategy,
};
use factcheck::webfc::{emit_webfc, ScriptedFetcher, ScriptedSearch, WebFcBuilder};

const VERIFIER_MODEL: &str = "qwen2-vl-7b";
const ANALYZER_MODEL: &str = "llama-3.2-11b-vision";
const SUMMARIZER_MODEL: &str = "gpt-4o";

fn factcheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_factcheck"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_jsonl(path: &Path, rows: impl IntoIterator<Item = Value>) {
    let mut f = fs::File::create(path).unwrap();
    for r in rows {
        writeln!(f, "{r}").unwrap();
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A canonical dataset of `n` claims, each with two sentences and an image.
fn dataset(dir: &Path, n: usize) -> PathBuf {
    let root = dir.join("data");
    fs::create_dir_all(root.join("img")).unwrap();
    let mut evidence = Vec::new();
    let mut claims = Vec::new();
    let labels = ["Supported", "Refuted", "NEI"];
    for i in 0..n {
        let cid = format!("c{i}");
        for j in 0..2 {
            evidence.push(json!({"evidence_id": format!("{cid}-t{j}"), "modality": "text", "text": format!("Fact {j} about item {i}.")}));
        }
        fs::write(root.join(format!("img/{cid}.jpg")), format!("pixels {i}")).unwrap();
        evidence.push(json!({"evidence_id": format!("{cid}-i0"), "modality": "image", "image_path": format!("img/{cid}.jpg")}));
        claims.push(json!({
            "claim_id": cid,
            "text": format!("Item {i} was photographed in {}.", 2000 + i),
            "gold_verdict": labels[i % 3],
            "gold_text_evidence": [format!("{cid}-t0"), format!("{cid}-t1")],
            "gold_image_evidence": [format!("{cid}-i0")],
        }));
    }
    write_jsonl(&root.join("evidence.jsonl"), evidence);
    write_jsonl(&root.join("claims.jsonl"), claims);
    root
}

#[test]
fn convert_finfact_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    fs::create_dir_all(src.join("dl")).unwrap();
    fs::write(src.join("dl/a.png"), b"a").unwrap();
    write_jsonl(
        &src.join("finfact.jsonl"),
        [
            json!({"claim_id": "f1", "claim": "Rates rose.", "label": "True", "evidence": ["One. Two."]}),
            json!({"claim_id": "f2", "claim": "Stocks fell.", "label": "False", "evidence": ["Three."], "image_urls": ["u/a", "u/b"]}),
            json!({"claim_id": "f3", "claim": "Gold flat.", "label": "NEI", "evidence": [], "image_urls": ["u/c"]}),
        ],
    );
    write_jsonl(
        &src.join("downloads.jsonl"),
        [
            json!({"url": "u/a", "status": "fetched", "path": "dl/a.png"}),
            json!({"url": "u/b", "status": "failed"}),
            json!({"url": "u/c", "status": "failed"}),
        ],
    );
    let out1 = dir.path().join("out1");
    let o = factcheck(&["convert", "--src", s(&src), "--format", "finfact", "--out", s(&out1)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&fs::read(out1.join("validation_report.json")).unwrap()).unwrap();
    assert_eq!(report["raw_records"], 3);
    assert_eq!(report["dropped_by_sanitization"], 1);
    assert_eq!(report["validation"]["claims"], 2);
    assert_eq!(report["validation"]["image_items"], 1);

    let out2 = dir.path().join("out2");
    let o = factcheck(&["convert", "--src", s(&src), "--format", "finfact", "--out", s(&out2)]);
    assert!(o.status.success());
    for f in ["claims.jsonl", "evidence.jsonl", "validation_report.json"] {
        assert_eq!(fs::read(out1.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_errors_exit_64() {
    let o = factcheck(&["convert", "--src", ".", "--format", "bogus", "--out", "x"]);
    assert_eq!(o.status.code(), Some(64));
    let o = factcheck(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(64));
    assert_eq!(factcheck(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_dataset_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = factcheck(&["convert", "--src", s(dir.path()), "--format", "mocheg", "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn index_config(dir: &Path, data: &Path, vectors: &[(&str, Vec<f32>)]) -> PathBuf {
    let vpath = dir.join("vectors.jsonl");
    write_jsonl(&vpath, vectors.iter().map(|(k, v)| json!({"input": k, "vector": v})));
    let cfg = dir.join("index.toml");
    fs::write(
        &cfg,
        format!(
            "dataset = {:?}\n[backends.embedder_text]\nkind = \"scripted\"\nvectors = \"vectors.jsonl\"\n",
            s(data)
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn index_builds_and_rejects_dimension_drift() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 2);
    let good = [
        ("Fact 0 about item 0.", vec![1.0, 0.0]),
        ("Fact 1 about item 0.", vec![0.0, 1.0]),
        ("Fact 0 about item 1.", vec![0.6, 0.8]),
        ("Fact 1 about item 1.", vec![0.8, 0.6]),
    ];
    let cfg = index_config(dir.path(), &data, &good);
    let out = dir.path().join("idx");
    let o = factcheck(&["--config", s(&cfg), "index", "--modality", "text", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("4 entries, dim 2"));
    assert!(out.join("index_text.jsonl").is_file());

    let mut drift = good.to_vec();
    drift[2].1 = vec![0.6, 0.8, 0.0];
    let cfg = index_config(dir.path(), &data, &drift);
    let out = dir.path().join("idx2");
    let o = factcheck(&["--config", s(&cfg), "index", "--modality", "text", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!out.join("index_text.jsonl").exists());
}

fn run_config(dir: &Path, data: &Path, analyzer: bool) -> PathBuf {
    let mut body = format!(
        "dataset = {:?}\n[backends.verifier]\nkind = \"scripted\"\nmodel_id = {VERIFIER_MODEL:?}\n",
        s(data)
    );
    if analyzer {
        body += &format!("[backends.analyzer]\nkind = \"scripted\"\nmodel_id = {ANALYZER_MODEL:?}\n");
    }
    let cfg = dir.join(if analyzer { "run.toml" } else { "run_no_analyzer.toml" });
    fs::write(&cfg, body).unwrap();
    cfg
}

/// Runs the library in-process with live function backends and saves the transcript.
fn record_run(dir: &Path, data: &Path) -> (PathBuf, PathBuf) {
    let ds = load_dataset(data, FormatTag::Mocheg).unwrap();
    let verifier = FnBackend::new("verifier", VERIFIER_MODEL, |req| {
        let n = req.messages[0].flat_text().len();
        Ok(["Supported", "Refuted", "not enough information"][n % 3].to_string())
    });
    let analyzer = FnBackend::new("analyzer", ANALYZER_MODEL, |req| {
        let n = req.messages[0].flat_text().len();
        Ok(if n % 2 == 0 { "The image is necessary." } else { "The image is not necessary." }.to_string())
    });
    let agents = AgentSet::new(Agent::new(Arc::new(verifier), DecodingParams::greedy()))
        .with_analyzer(Agent::new(Arc::new(analyzer), DecodingParams::greedy()));
    let transcript = Transcript::default();
    let out = dir.join("inproc");
    run_dataset(
        &ds.claims,
        &["gold_image.gold".parse::<EvidenceConfig>().unwrap()],
        &[Strategy::Amufc, Strategy::NoAnalyzer],
        &agents,
        &Retrieval::gold_only(Arc::new(ds.knowledge)),
        &transcript,
        &RunOptions::new(&out),
        RunContext::default(),
    )
    .unwrap();
    let path = dir.join("recorded.jsonl");
    transcript.save(&path).unwrap();
    (out, path)
}

#[test]
fn run_replays_a_recorded_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 5);
    let (inproc, recorded) = record_run(dir.path(), &data);
    let cfg = run_config(dir.path(), &data, true);
    let out = dir.path().join("cli");
    let replay = format!("replay:{}", s(&recorded));
    let o = factcheck(&[
        "--config", s(&cfg), "--out", s(&out), "--transcript", &replay, "--parallelism", "3",
        "run", "--strategies", "amufc,no_analyzer",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["amufc__gold_image.gold.jsonl", "no_analyzer__gold_image.gold.jsonl"] {
        let a = fs::read(inproc.join("predictions").join(name)).unwrap();
        let b = fs::read(out.join("predictions").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["parallelism"], 3);
    assert!(manifest["transcript_refs"][0].as_str().unwrap().ends_with("recorded.jsonl"));
}

#[test]
fn run_names_the_missing_role() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1);
    let cfg = run_config(dir.path(), &data, false);
    let o = factcheck(&["--config", s(&cfg), "--out", s(&dir.path().join("o")), "run", "--strategies", "amufc"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("`analyzer`"), "{}", stderr(&o));
    assert!(!dir.path().join("o/predictions").exists());
}

#[test]
fn run_rejects_out_of_range_tau() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1);
    let cfg = run_config(dir.path(), &data, true);
    let o = factcheck(&["--config", s(&cfg), "--out", "o", "run", "--strategies", "prefilter_threshold", "--tau", "2"]);
    assert_eq!(o.status.code(), Some(64));
}

fn page(date: &str, body: &str) -> String {
    format!(
        r#"<html><head><meta property="article:published_time" content="{date}"></head><body><article><p>{body} More context follows here.</p></article></body></html>"#
    )
}

#[test]
fn webfc_build_matches_library_and_rejects_undated_seed() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = [
        json!({"claim_id": "w1", "text": "The bridge opened in May.", "gold_verdict": "Supported", "factcheck_date": "2024-06-01"}),
        json!({"claim_id": "w2", "text": "The mayor resigned.", "gold_verdict": "Refuted", "factcheck_date": "2024-06-01"}),
        json!({"claim_id": "w3", "text": "A claim without a date.", "gold_verdict": "NEI"}),
    ];
    let seeds_path = dir.path().join("seeds.jsonl");
    write_jsonl(&seeds_path, seeds);
    let search = json!({
        "The bridge opened in May.": {
            "documents": [{"url": "https://a.example/1"}, {"url": "https://a.example/2"}],
            "images": [{"url": "https://a.example/img.png", "date": "2024-05-20"}]
        },
        "The mayor resigned.": {
            "documents": [{"url": "https://b.example/1"}, {"url": "https://b.example/2"}],
            "images": []
        }
    });
    fs::write(dir.path().join("search.json"), search.to_string()).unwrap();
    fs::write(dir.path().join("img.png"), b"\x89PNG fake").unwrap();
    write_jsonl(
        &dir.path().join("pages.jsonl"),
        [
            json!({"url": "https://a.example/1", "html": page("2024-05-10", "The bridge opened on May 3 to traffic.")}),
            json!({"url": "https://a.example/2", "html": page("2024-06-05", "Later coverage of the bridge opening.")}),
            json!({"url": "https://a.example/img.png", "file": "img.png", "content_type": "image/png"}),
            json!({"url": "https://b.example/1", "html": page("2024-04-01", "The mayor remains in office this spring.")}),
            json!({"url": "https://b.example/2", "fail": true}),
        ],
    );

    // record the summarizer in-process
    let summarizer = FnBackend::new("summarizer", SUMMARIZER_MODEL, |req| {
        let text = req.messages[0].flat_text();
        Ok(format!("Summary of {} characters.", text.len()))
    });
    let search_b = ScriptedSearch::load(&dir.path().join("search.json")).unwrap();
    let fetch_b = ScriptedFetcher::load(&dir.path().join("pages.jsonl")).unwrap();
    let builder = WebFcBuilder {
        search: &search_b,
        fetcher: &fetch_b,
        summarizer: Agent::new(Arc::new(summarizer), DecodingParams::greedy()),
        parallelism: 2,
    };
    let seed_claims: Vec<_> = fs::read_to_string(&seeds_path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            factcheck::corpus::ClaimRecord {
                claim_id: v["claim_id"].as_str().unwrap().into(),
                text: v["text"].as_str().unwrap().into(),
                gold_verdict: factcheck::corpus::map_external_label(v["gold_verdict"].as_str().unwrap(), FormatTag::Webfc).unwrap(),
                gold_text_evidence: vec![],
                gold_image_evidence: vec![],
                source: "webfc".into(),
                factcheck_date: v["factcheck_date"].as_str().and_then(factcheck::corpus::parse_date),
            }
        })
        .collect();
    let transcript = Transcript::default();
    let builds = builder.build(&seed_claims, &transcript);
    let inproc = dir.path().join("inproc");
    emit_webfc(&builds, &inproc).unwrap();
    let recorded = dir.path().join("summaries.jsonl");
    transcript.save(&recorded).unwrap();

    let cfg = dir.path().join("webfc.toml");
    fs::write(
        &cfg,
        format!(
            "[backends.summarizer]\nkind = \"scripted\"\nmodel_id = {SUMMARIZER_MODEL:?}\ntranscript = \"summaries.jsonl\"\n\
             [webfc.search]\nkind = \"scripted\"\nfixture = \"search.json\"\n\
             [webfc.fetch]\nkind = \"scripted\"\nfixture = \"pages.jsonl\"\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("cli");
    let o = factcheck(&["--config", s(&cfg), "--out", s(&out), "webfc", "--seeds", s(&seeds_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["claims.jsonl", "evidence.jsonl", "build_report.json"] {
        assert_eq!(fs::read(inproc.join(f)).unwrap(), fs::read(out.join(f)).unwrap(), "{f}");
    }
    let report: Value = serde_json::from_slice(&fs::read(out.join("build_report.json")).unwrap()).unwrap();
    assert_eq!(report["admitted"], 2);
    assert_eq!(report["rejected"], 1);
    assert!(report["reasons"]["w3"].as_str().unwrap().contains("missing factcheck_date"));
    assert_eq!(report["post_cutoff_dropped"], 1);
    assert_eq!(report["failed_fetches"], 1);
    let ds = load_dataset(&out, FormatTag::Webfc).unwrap();
    let w1 = ds.claim("w1").unwrap();
    assert_eq!(w1.gold_text_evidence, ["w1-d1"]);
    assert_eq!(w1.gold_image_evidence, ["w1-img"]);
}

fn preds_file(path: &Path, strategy: &str, verdicts: &[(&str, &str)]) {
    write_jsonl(
        path,
        verdicts.iter().map(|(id, v)| {
            json!({
                "claim_id": id, "strategy": strategy, "config": "gold_image.gold", "verdict": v,
                "parse_status": "ok", "raw_text": v, "timing_ms": {"verifier": 1.0}
            })
        }),
    );
}

#[test]
fn eval_scores_composes_oracle_and_measures_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 3);
    // gold: c0 Supported, c1 Refuted, c2 NEI
    let p1 = dir.path().join("r1.jsonl");
    let p2 = dir.path().join("r2.jsonl");
    let p3 = dir.path().join("r3.jsonl");
    preds_file(&p1, "amufc", &[("c0", "Supported"), ("c1", "Supported"), ("c2", "Supported")]);
    preds_file(&p2, "amufc", &[("c0", "Refuted"), ("c1", "Refuted"), ("c2", "Refuted")]);
    preds_file(&p3, "amufc", &[("c0", "Refuted"), ("c1", "Supported"), ("c2", "NEI")]);
    let ann = dir.path().join("ann.jsonl");
    write_jsonl(
        &ann,
        (0..4).flat_map(|i| {
            ["a", "b"].map(|a| {
                json!({"claim_id": format!("c{i}"), "annotator_id": a,
                       "necessity_label": if i % 2 == 0 { "Necessary" } else { "Unnecessary" },
                       "claim_category": if i < 2 { "VisualSuccessful" } else { "VisualUnsuccessful" }})
            })
        }),
    );
    let out = dir.path().join("eval");
    let o = factcheck(&[
        "--out", s(&out), "eval", s(&p1), s(&p2), "--gold", s(&data),
        "--oracle", s(&p1), s(&p2), s(&p3), "--agreement", s(&ann), "--plot-data",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value = serde_json::from_slice(&fs::read(out.join("r1/metrics.json")).unwrap()).unwrap();
    assert!((m["accuracy"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let oracle: Value = serde_json::from_slice(&fs::read(out.join("oracle__amufc/metrics.json")).unwrap()).unwrap();
    assert_eq!(oracle["accuracy"], 1.0);
    assert_eq!(fs::read_to_string(out.join("oracle__amufc/predictions.jsonl")).unwrap().lines().count(), 3);
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let agreement: Value = serde_json::from_slice(&fs::read(out.join("agreement.json")).unwrap()).unwrap();
    assert_eq!(agreement["krippendorff_alpha"], 1.0);
    assert_eq!(agreement["category_table"], json!([[1, 1], [1, 1]]));
}

#[test]
fn eval_claim_set_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 3);
    let p1 = dir.path().join("r1.jsonl");
    let p2 = dir.path().join("r2.jsonl");
    preds_file(&p1, "amufc", &[("c0", "Supported"), ("c1", "Supported"), ("c2", "Supported")]);
    preds_file(&p2, "amufc", &[("c0", "Refuted"), ("c1", "Refuted")]);
    let o = factcheck(&["--out", s(&dir.path().join("e")), "eval", "--gold", s(&data), "--oracle", s(&p1), s(&p2)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("claim c2 is not in every run"), "{}", stderr(&o));
}
