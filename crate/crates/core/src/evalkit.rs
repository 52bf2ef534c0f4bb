//! Metrics, the oracle upper bound, significance tests and agreement.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::corpus::{AnnotationRecord, ClaimCategory, ClaimRecord, Necessity, Verdict};
use crate::jsonl;
use crate::pipeline::{ParseStatus, Prediction};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no gold verdict for claim {0}")]
    MissingGold(String),
    #[error("run {run} covers a different claim set: {detail}")]
    ClaimSetMismatch { run: usize, detail: String },
    #[error("oracle composition needs at least one run")]
    NoRuns,
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFiniteSample,
    #[error("contingency table has a zero marginal")]
    DegenerateTable,
    #[error("agreement needs at least two annotators and one item rated twice")]
    InsufficientData,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Counts indexed by (gold, predicted).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn add(&mut self, gold: Verdict, predicted: Verdict) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn get(&self, gold: Verdict, predicted: Verdict) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn counts(&self) -> [[u64; 3]; 3] {
        self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    fn column(&self, j: usize) -> u64 {
        (0..3).map(|i| self.counts[i][j]).sum()
    }

    fn row(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: BTreeMap<Verdict, ClassMetrics>,
    pub n: u64,
    pub n_fallback: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricReport {
    /// Metrics of `cm`. Classes absent from both gold and predictions get
    /// F1 = 0 and still count toward the macro average.
    pub fn from_confusion(cm: &ConfusionMatrix, n_fallback: u64) -> Self {
        let mut per_class = BTreeMap::new();
        for v in Verdict::ALL {
            let i = v.index();
            let tp = cm.counts[i][i];
            let predicted = cm.column(i);
            let gold = cm.row(i);
            per_class.insert(
                v,
                ClassMetrics {
                    precision: ratio(tp, predicted),
                    recall: ratio(tp, gold),
                    f1: ratio(2 * tp, predicted + gold),
                    support: gold,
                },
            );
        }
        let macro_f1 = per_class.values().map(|c| c.f1).sum::<f64>() / 3.0;
        Self {
            accuracy: ratio(cm.trace(), cm.total()),
            macro_f1,
            per_class,
            n: cm.total(),
            n_fallback,
        }
    }
}

/// Gold verdicts keyed by claim id.
pub fn gold_map(claims: &[ClaimRecord]) -> HashMap<String, Verdict> {
    claims
        .iter()
        .map(|c| (c.claim_id.clone(), c.gold_verdict))
        .collect()
}

/// Score predictions against gold. Fallback and error predictions count
/// with their recorded NEI verdict.
pub fn score(
    predictions: &[Prediction],
    gold: &HashMap<String, Verdict>,
) -> Result<(ConfusionMatrix, MetricReport)> {
    let mut cm = ConfusionMatrix::default();
    let mut n_fallback = 0;
    for p in predictions {
        let g = gold
            .get(&p.claim_id)
            .ok_or_else(|| EvalError::MissingGold(p.claim_id.clone()))?;
        cm.add(*g, p.verdict);
        if p.parse_status != ParseStatus::Ok {
            n_fallback += 1;
        }
    }
    let report = MetricReport::from_confusion(&cm, n_fallback);
    Ok((cm, report))
}

/// Per-claim best-of-configurations: gold where any run is correct,
/// otherwise the first run's prediction. Output is in claim-id order.
pub fn oracle_compose(
    runs: &[Vec<Prediction>],
    gold: &HashMap<String, Verdict>,
) -> Result<(Vec<Prediction>, ConfusionMatrix, MetricReport)> {
    let first = runs.first().ok_or(EvalError::NoRuns)?;
    let mut by_run: Vec<BTreeMap<&str, &Prediction>> = Vec::with_capacity(runs.len());
    for (r, run) in runs.iter().enumerate() {
        let mut m = BTreeMap::new();
        for p in run {
            if m.insert(p.claim_id.as_str(), p).is_some() {
                return Err(EvalError::ClaimSetMismatch {
                    run: r + 1,
                    detail: format!("claim {} appears twice", p.claim_id),
                });
            }
        }
        by_run.push(m);
    }
    let base: BTreeSet<&str> = by_run[0].keys().copied().collect();
    for (r, m) in by_run.iter().enumerate().skip(1) {
        let other: BTreeSet<&str> = m.keys().copied().collect();
        if let Some(id) = base.symmetric_difference(&other).next() {
            return Err(EvalError::ClaimSetMismatch {
                run: r + 1,
                detail: format!("claim {id} is not in every run"),
            });
        }
    }
    debug_assert_eq!(base.len(), first.len());

    let mut composed = Vec::with_capacity(base.len());
    for id in &base {
        let g = *gold.get(*id).ok_or_else(|| EvalError::MissingGold(id.to_string()))?;
        let fallback = by_run[0][id];
        let hit = by_run.iter().map(|m| m[id]).find(|p| p.verdict == g);
        let mut p = hit.unwrap_or(fallback).clone();
        p.config = "oracle".into();
        composed.push(p);
    }
    let (cm, report) = score(&composed, gold)?;
    Ok((composed, cm, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MwMethod {
    /// Exact when the combined size is at most [`MW_EXACT_MAX_N`], else normal.
    Auto,
    Exact,
    Normal,
}

pub const MW_EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_two_sided: f64,
    pub method: MwMethod,
}

/// Ranks 1..=n with ties given their mean rank, returned doubled so they stay integral.
fn doubled_midranks(values: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; doubled mean is i+j+2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        ties.push((j - i + 1) as u64);
        i = j + 1;
    }
    (ranks, ties)
}

pub fn mann_whitney_u<T: Scalar>(a: &[T], b: &[T]) -> Result<MannWhitney> {
    mann_whitney_u_with(a, b, MwMethod::Auto)
}

/// Two-sided Mann-Whitney U test with midrank ties.
pub fn mann_whitney_u_with<T: Scalar>(a: &[T], b: &[T], method: MwMethod) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let values: Vec<f64> = a.iter().chain(b).map(|x| x.widen()).collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(EvalError::NonFiniteSample);
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let (ranks, ties) = doubled_midranks(&values);
    let r2: u64 = ranks[..na].iter().sum();
    let u = r2 as f64 / 2.0 - (na * (na + 1)) as f64 / 2.0;

    let method = match method {
        MwMethod::Auto if n <= MW_EXACT_MAX_N => MwMethod::Exact,
        MwMethod::Auto => MwMethod::Normal,
        m => m,
    };
    let p = match method {
        MwMethod::Exact => exact_p(&ranks, na, r2),
        _ => normal_p(u, na, nb, &ties),
    };
    Ok(MannWhitney {
        u,
        p_two_sided: p.clamp(0.0, 1.0),
        method,
    })
}

/// Permutation p-value: share of size-`na` subsets whose doubled rank sum
/// lies at least as far from its mean as the observed one.
fn exact_p(ranks: &[u64], na: usize, observed: u64) -> f64 {
    let max_sum: u64 = ranks.iter().sum();
    let width = max_sum as usize + 1;
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0f64; width]; na + 1];
    ways[0][0] = 1.0;
    for &r in ranks {
        let r = r as usize;
        for j in (1..=na).rev() {
            for s in (r..width).rev() {
                let w = ways[j - 1][s - r];
                if w != 0.0 {
                    ways[j][s] += w;
                }
            }
        }
    }
    let n = ranks.len() as i64;
    let centre = na as i64 * (n + 1);
    let dev = (observed as i64 - centre).abs();
    let (mut extreme, mut total) = (0.0, 0.0);
    for (s, &w) in ways[na].iter().enumerate() {
        total += w;
        if (s as i64 - centre).abs() >= dev {
            extreme += w;
        }
    }
    extreme / total
}

fn normal_p(u: f64, na: usize, nb: usize, ties: &[u64]) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    let n = na + nb;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term);
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - na * nb / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * std.sf(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub p: f64,
    pub df: u32,
}

/// Pearson chi-square test of independence on a 2×2 table, no continuity correction.
pub fn chi_square_independence(table: [[u64; 2]; 2]) -> Result<ChiSquare> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(EvalError::DegenerateTable);
    }
    let total = (rows[0] + rows[1]) as f64;
    let mut statistic = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = rows[i] as f64 * cols[j] as f64 / total;
            statistic += (table[i][j] as f64 - expected).powi(2) / expected;
        }
    }
    let dist = ChiSquared::new(1.0).expect("df 1");
    Ok(ChiSquare {
        statistic,
        p: dist.sf(statistic),
        df: 1,
    })
}

/// Claim category × necessity counts over one annotator's labels.
/// Rows: VisualSuccessful, VisualUnsuccessful. Columns: Necessary, Unnecessary.
pub fn category_necessity_table(records: &[AnnotationRecord], annotator_id: &str) -> [[u64; 2]; 2] {
    let mut t = [[0u64; 2]; 2];
    for r in records.iter().filter(|r| r.annotator_id == annotator_id) {
        let Some(cat) = r.claim_category else { continue };
        let i = match cat {
            ClaimCategory::VisualSuccessful => 0,
            ClaimCategory::VisualUnsuccessful => 1,
        };
        let j = match r.necessity_label {
            Necessity::Necessary => 0,
            Necessity::Unnecessary => 1,
        };
        t[i][j] += 1;
    }
    t
}

/// Nominal Krippendorff's alpha over units of ratings. Units with fewer
/// than two ratings are not pairable and are skipped.
pub fn krippendorff_alpha_nominal<L: Ord + Clone>(units: &[Vec<L>]) -> Result<f64> {
    // coincidences o[c][k], accumulated as o * 1 per ordered pair / (m_u - 1)
    let mut coincidence: BTreeMap<(L, L), f64> = BTreeMap::new();
    let mut marginal: BTreeMap<L, f64> = BTreeMap::new();
    for unit in units.iter().filter(|u| u.len() >= 2) {
        let w = 1.0 / (unit.len() - 1) as f64;
        for (i, a) in unit.iter().enumerate() {
            for (j, b) in unit.iter().enumerate() {
                if i != j {
                    *coincidence.entry((a.clone(), b.clone())).or_default() += w;
                }
            }
            *marginal.entry(a.clone()).or_default() += 1.0;
        }
    }
    let n: f64 = marginal.values().sum();
    if n == 0.0 {
        return Err(EvalError::InsufficientData);
    }
    let disagree: f64 = coincidence
        .iter()
        .filter(|((a, b), _)| a != b)
        .map(|(_, o)| o)
        .sum();
    let total_sq: f64 = marginal.values().sum::<f64>().powi(2);
    let same_sq: f64 = marginal.values().map(|m| m * m).sum();
    let expected_pairs = total_sq - same_sq;
    if expected_pairs == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * disagree / expected_pairs)
}

/// Alpha over the necessity labels of an annotation set.
pub fn necessity_alpha(records: &[AnnotationRecord]) -> Result<f64> {
    let annotators: BTreeSet<&str> = records.iter().map(|r| r.annotator_id.as_str()).collect();
    if annotators.len() < 2 {
        return Err(EvalError::InsufficientData);
    }
    let mut units: BTreeMap<&str, Vec<Necessity>> = BTreeMap::new();
    for r in records {
        units.entry(&r.claim_id).or_default().push(r.necessity_label);
    }
    let units: Vec<Vec<Necessity>> = units.into_values().collect();
    krippendorff_alpha_nominal(&units)
}

/// Mean and standard error of the mean; the error is absent for one value.
pub fn mean_se(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, None));
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, Some((var / n).sqrt())))
}

/// One scored predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub name: String,
    pub strategy: String,
    pub config: String,
    pub confusion: ConfusionMatrix,
    pub report: MetricReport,
}

/// Repeated runs of one (strategy, config) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_se: Option<f64>,
    pub macro_f1_mean: f64,
    pub macro_f1_se: Option<f64>,
}

/// Group runs by `strategy__config`, in name order.
pub fn summarize_groups(runs: &[RunResult]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<String, Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        groups
            .entry(format!("{}__{}", r.strategy, r.config))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|(group, rs)| {
            let acc: Vec<f64> = rs.iter().map(|r| r.report.accuracy).collect();
            let f1: Vec<f64> = rs.iter().map(|r| r.report.macro_f1).collect();
            let (accuracy_mean, accuracy_se) = mean_se(&acc).expect("non-empty group");
            let (macro_f1_mean, macro_f1_se) = mean_se(&f1).expect("non-empty group");
            GroupSummary {
                group,
                runs: rs.len(),
                accuracy_mean,
                accuracy_se,
                macro_f1_mean,
                macro_f1_se,
            }
        })
        .collect()
}

/// A significance test between two named things.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    /// Also write whitespace-separated confusion counts for plotting.
    pub plot_data: bool,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    strategy: &'a str,
    config: &'a str,
    #[serde(flatten)]
    report: &'a MetricReport,
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

fn opt3(x: Option<f64>) -> String {
    x.map(fmt3).unwrap_or_default()
}

/// Write per-run and cross-run report files under `out_dir`; returns the paths written.
pub fn emit_report(
    out_dir: &Path,
    runs: &[RunResult],
    comparisons: &[Comparison],
    opts: ReportOptions,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |path: PathBuf, body: String| -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| EvalError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        jsonl::write_atomic(&path, body.as_bytes()).map_err(|source| EvalError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
        Ok(())
    };

    for r in runs {
        let dir = out_dir.join(&r.name);
        let metrics = MetricsFile {
            strategy: &r.strategy,
            config: &r.config,
            report: &r.report,
        };
        let mut json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
        json.push('\n');
        put(dir.join("metrics.json"), json)?;

        let mut csv = String::from("gold,pred,count\n");
        let mut dat = String::from("# gold pred count\n");
        for g in Verdict::ALL {
            for p in Verdict::ALL {
                let c = r.confusion.get(g, p);
                let _ = writeln!(csv, "{g},{p},{c}");
                let _ = writeln!(dat, "{} {} {c}", g.index(), p.index());
            }
        }
        put(dir.join("confusion.csv"), csv)?;
        if opts.plot_data {
            put(dir.join("confusion.dat"), dat)?;
        }
    }

    let mut csv = String::from(
        "run,strategy,config,n,n_fallback,accuracy,macro_f1,f1_supported,f1_refuted,f1_nei\n",
    );
    for r in runs {
        let f1 = |v: Verdict| fmt3(r.report.per_class[&v].f1);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.name,
            r.strategy,
            r.config,
            r.report.n,
            r.report.n_fallback,
            fmt3(r.report.accuracy),
            fmt3(r.report.macro_f1),
            f1(Verdict::Supported),
            f1(Verdict::Refuted),
            f1(Verdict::Nei),
        );
    }
    put(out_dir.join("comparison.csv"), csv)?;

    let groups = summarize_groups(runs);
    if groups.iter().any(|g| g.runs > 1) {
        let mut csv = String::from("group,runs,accuracy_mean,accuracy_se,macro_f1_mean,macro_f1_se\n");
        for g in &groups {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                g.group,
                g.runs,
                fmt3(g.accuracy_mean),
                opt3(g.accuracy_se),
                fmt3(g.macro_f1_mean),
                opt3(g.macro_f1_se)
            );
        }
        put(out_dir.join("groups.csv"), csv)?;
    }

    if !comparisons.is_empty() {
        let mut csv = String::from("a,b,test,statistic,p_value\n");
        for c in comparisons {
            let _ = writeln!(
                csv,
                "{},{},{},{:.4},{:.4}",
                c.a, c.b, c.test, c.statistic, c.p_value
            );
        }
        put(out_dir.join("tests.csv"), csv)?;
    }
    Ok(written)
}
