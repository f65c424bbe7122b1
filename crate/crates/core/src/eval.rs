//! Ranking metrics, classification rates, stratified curves and reports.
//!
//! Every query yields a ranking over all target classes (null included).
//! MAP@k scores the rank of the query's true class: with one relevant class,
//! AP@k is `1/rank` if `rank <= k` and 0 otherwise.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{batch_graphs, ClassVocab, Polarity, Query, QueryGraph, NULL_CLASS};
use crate::kb::KnowledgeBase;
use crate::model::{predict, Model};
use crate::tensor::Scalar;
use crate::train::GraphCache;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_BINS: usize = 20;

/// Average precision of `ranking` truncated at `k`, for any relevant set.
///
/// `AP@k = (1 / min(|relevant|, k)) · Σ_{i ≤ k, ranking[i] relevant} precision@i`.
pub fn average_precision_at_k(ranking: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if relevant.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, c) in ranking.iter().take(k).enumerate() {
        if relevant.contains(c) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len().min(k) as f64)
}

/// Truncated reciprocal rank of `truth` in `ranking`.
pub fn ap_single(ranking: &[usize], truth: usize, k: usize) -> f64 {
    match ranking.iter().take(k).position(|&c| c == truth) {
        Some(i) => 1.0 / (i + 1) as f64,
        None => 0.0,
    }
}

pub fn map_at_k(rankings: &[Vec<usize>], truths: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if rankings.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rankings for {} true classes",
            rankings.len(),
            truths.len()
        )));
    }
    if rankings.is_empty() {
        return Err(Error::InvalidArgument("MAP over zero queries".into()));
    }
    let sum: f64 = rankings
        .iter()
        .zip(truths)
        .map(|(r, &t)| ap_single(r, t, k))
        .sum();
    Ok(sum / rankings.len() as f64)
}

/// One classified instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub predicted: usize,
    /// Relation the instance is a positive or negative for, if known.
    pub relation: Option<usize>,
    pub polarity: Polarity,
}

impl Outcome {
    pub fn label(&self) -> usize {
        match self.polarity {
            Polarity::Positive => self.relation.unwrap_or(NULL_CLASS),
            Polarity::Negative => NULL_CLASS,
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.label()
    }
}

/// Rates are `None` when their denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub positives: usize,
    pub negatives: usize,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub avg_accuracy: Option<f64>,
}

fn ratio(n: usize, d: usize) -> Option<f64> {
    (d > 0).then(|| n as f64 / d as f64)
}

fn rates<'a>(outcomes: impl Iterator<Item = &'a Outcome>) -> Rates {
    let (mut p, mut tp, mut n, mut tn) = (0, 0, 0, 0);
    for o in outcomes {
        match o.polarity {
            Polarity::Positive => {
                p += 1;
                tp += o.correct() as usize;
            }
            Polarity::Negative => {
                n += 1;
                tn += o.correct() as usize;
            }
        }
    }
    Rates {
        positives: p,
        negatives: n,
        tpr: ratio(tp, p),
        tnr: ratio(tn, n),
        avg_accuracy: ratio(tp + tn, p + n),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRates {
    pub overall: Rates,
    /// Indexed by class; entry 0 (null) is the unattributed remainder.
    pub per_relation: Vec<Rates>,
}

/// TPR over each relation's positives, TNR over its negatives (predicted
/// null), accuracy over both. Instances without a relation count only
/// towards the overall rates.
pub fn classification_rates(outcomes: &[Outcome], num_classes: usize) -> ClassificationRates {
    let per_relation = (0..num_classes)
        .map(|c| {
            rates(
                outcomes
                    .iter()
                    .filter(|o| o.relation.unwrap_or(NULL_CLASS) == c),
            )
        })
        .collect();
    ClassificationRates {
        overall: rates(outcomes.iter()),
        per_relation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StratifyBy {
    /// Mean length of the simple source-target paths in the query graph.
    PathLength,
    /// Number of simple source-target paths in the query graph.
    ParallelPaths,
}

impl std::str::FromStr for StratifyBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path-length" | "avg-path-length" => Ok(StratifyBy::PathLength),
            "parallel-paths" | "parallel-path-count" => Ok(StratifyBy::ParallelPaths),
            _ => Err(Error::Config(format!(
                "unknown stratification `{s}` (path-length or parallel-paths)"
            ))),
        }
    }
}

impl std::fmt::Display for StratifyBy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StratifyBy::PathLength => "path-length",
            StratifyBy::ParallelPaths => "parallel-paths",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub map_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub by: StratifyBy,
    pub requested_bins: usize,
    /// Requested bins that could not be filled (fewer distinct values).
    pub omitted: usize,
    pub bins: Vec<Bin>,
}

impl Curve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,n,map_at_5\n");
        for b in &self.bins {
            s.push_str(&format!("{},{},{},{}\n", b.lo, b.hi, b.n, b.map_at_k));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub source: String,
    pub target: String,
    pub relation: Option<usize>,
    pub polarity: Polarity,
    /// Classes by descending score.
    pub ranking: Vec<usize>,
    pub path_count: u64,
    pub avg_path_len: f64,
}

impl QueryRow {
    pub fn outcome(&self) -> Outcome {
        Outcome {
            predicted: self.ranking.first().copied().unwrap_or(NULL_CLASS),
            relation: self.relation,
            polarity: self.polarity,
        }
    }

    pub fn label(&self) -> usize {
        self.outcome().label()
    }

    /// 1-based rank of the true class.
    pub fn rank(&self) -> Option<usize> {
        let l = self.label();
        self.ranking.iter().position(|&c| c == l).map(|i| i + 1)
    }

    fn key(&self, by: StratifyBy) -> f64 {
        match by {
            StratifyBy::PathLength => self.avg_path_len,
            StratifyBy::ParallelPaths => self.path_count as f64,
        }
    }
}

/// Equal-frequency bins over the chosen statistic. Queries sharing a value
/// always share a bin, and exactly `min(bins, distinct values)` bins are
/// produced, so none is empty.
pub fn stratify(rows: &[QueryRow], by: StratifyBy, bins: usize, k: usize) -> Result<Curve> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("nothing to stratify".into()));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].key(by).total_cmp(&rows[b].key(by)));
    // Runs of equal keys.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for (i, &r) in order.iter().enumerate() {
        match groups.last_mut() {
            Some((start, end)) if rows[order[*start]].key(by) == rows[r].key(by) => *end = i + 1,
            _ => groups.push((i, i + 1)),
        }
    }
    let n = rows.len() as f64;
    let nbins = bins.min(groups.len());
    let mut out = Vec::with_capacity(nbins);
    let mut g = 0;
    for b in 0..nbins {
        let left = nbins - b;
        let first = g;
        if left == 1 {
            g = groups.len();
        } else {
            let target = n * (b + 1) as f64 / nbins as f64;
            let last_allowed = groups.len() - (left - 1);
            g += 1;
            while g < last_allowed && (groups[g - 1].1 as f64) < target {
                // Stop early if including the next run overshoots by more
                // than stopping here undershoots.
                let here = target - groups[g - 1].1 as f64;
                let next = groups[g].1 as f64 - target;
                if next > here {
                    break;
                }
                g += 1;
            }
        }
        let (start, end) = (groups[first].0, groups[g - 1].1);
        let members = &order[start..end];
        let ap: f64 = members
            .iter()
            .map(|&i| ap_single(&rows[i].ranking, rows[i].label(), k))
            .sum();
        out.push(Bin {
            lo: rows[members[0]].key(by),
            hi: rows[*members.last().unwrap()].key(by),
            n: members.len(),
            map_at_k: ap / members.len() as f64,
        });
    }
    if nbins < bins {
        log::debug!("{by}: {bins} bins requested but only {nbins} distinct values");
    }
    Ok(Curve {
        by,
        requested_bins: bins,
        omitted: bins - nbins,
        bins: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRow {
    pub class: usize,
    pub name: String,
    pub map_at_k: Option<f64>,
    pub rates: Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub k: usize,
    pub rows: Vec<QueryRow>,
    pub map_at_k: f64,
    pub rates: Rates,
    /// Target relations only (null excluded).
    pub per_relation: Vec<RelationRow>,
    pub curves: Vec<Curve>,
    /// Queries left out because no subgraph connects their endpoints.
    pub skipped: usize,
}

impl EvalReport {
    /// Computes every aggregate from the rows.
    pub fn from_rows(
        classes: Vec<String>,
        rows: Vec<QueryRow>,
        k: usize,
        bins: usize,
        skipped: usize,
    ) -> Result<Self> {
        if let Some(r) = rows
            .iter()
            .find(|r| r.ranking.iter().chain(&r.relation).any(|&c| c >= classes.len()))
        {
            return Err(Error::InvalidArgument(format!(
                "row {}->{} references a class outside {} classes",
                r.source,
                r.target,
                classes.len()
            )));
        }
        let rankings: Vec<Vec<usize>> = rows.iter().map(|r| r.ranking.clone()).collect();
        let truths: Vec<usize> = rows.iter().map(QueryRow::label).collect();
        let map = map_at_k(&rankings, &truths, k)?;
        let outcomes: Vec<Outcome> = rows.iter().map(QueryRow::outcome).collect();
        let cr = classification_rates(&outcomes, classes.len());
        let per_relation = (1..classes.len())
            .map(|c| {
                let aps: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.relation == Some(c))
                    .map(|r| ap_single(&r.ranking, r.label(), k))
                    .collect();
                RelationRow {
                    class: c,
                    name: classes[c].clone(),
                    map_at_k: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
                    rates: cr.per_relation[c],
                }
            })
            .collect();
        let curves = [StratifyBy::PathLength, StratifyBy::ParallelPaths]
            .into_iter()
            .map(|by| stratify(&rows, by, bins, k))
            .collect::<Result<_>>()?;
        Ok(Self {
            classes,
            k,
            rows,
            map_at_k: map,
            rates: cr.overall,
            per_relation,
            curves,
            skipped,
        })
    }

    pub fn bins(&self) -> usize {
        self.curves.first().map_or(DEFAULT_BINS, |c| c.requested_bins)
    }

    pub fn curve(&self, by: StratifyBy) -> Option<&Curve> {
        self.curves.iter().find(|c| c.by == by)
    }

    /// Per-relation rows sorted by MAP, best first, as in a results table.
    pub fn relation_table(&self) -> String {
        let mut rows: Vec<&RelationRow> = self.per_relation.iter().collect();
        rows.sort_by(|a, b| {
            b.map_at_k
                .unwrap_or(-1.0)
                .total_cmp(&a.map_at_k.unwrap_or(-1.0))
                .then(a.class.cmp(&b.class))
        });
        let fmt = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{:.2}", 100.0 * x));
        let mut s = format!("relation\tMAP@{}\tTPR\tTNR\tavg-acc\n", self.k);
        for r in rows {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.name,
                fmt(r.map_at_k),
                fmt(r.rates.tpr),
                fmt(r.rates.tnr),
                fmt(r.rates.avg_accuracy)
            ));
        }
        s
    }
}

/// Scores `queries` in chunks of batched graphs. Queries without a subgraph
/// come back as errors in their slot.
pub fn score_queries<T: Scalar>(
    model: &Model<T>,
    kb: &KnowledgeBase,
    queries: &[Query],
    max_len: usize,
    serial: bool,
) -> Vec<Result<(Vec<usize>, Arc<QueryGraph>)>> {
    const CHUNK: usize = 32;
    let pairs: Vec<_> = queries.iter().map(|q| (q.source, q.target)).collect();
    let graphs = GraphCache::new().extract_all(kb, &pairs, max_len, serial);
    let ok: Vec<(usize, Arc<QueryGraph>)> = graphs
        .iter()
        .enumerate()
        .filter_map(|(i, g)| g.as_ref().ok().map(|g| (i, Arc::clone(g))))
        .collect();
    let run = |chunk: &[(usize, Arc<QueryGraph>)]| -> Result<Vec<Vec<usize>>> {
        let refs: Vec<&QueryGraph> = chunk.iter().map(|(_, g)| g.as_ref()).collect();
        let logits = model.logits(&batch_graphs(&refs)?)?;
        Ok((0..chunk.len())
            .map(|r| predict(logits.row(r)).ranking)
            .collect())
    };
    let chunks: Vec<Result<Vec<Vec<usize>>>> = if serial {
        ok.chunks(CHUNK).map(run).collect()
    } else {
        ok.par_chunks(CHUNK).map(run).collect()
    };
    let mut out: Vec<Result<(Vec<usize>, Arc<QueryGraph>)>> =
        graphs.into_iter().map(|g| g.map(|g| (Vec::new(), g))).collect();
    for (chunk, res) in ok.chunks(CHUNK).zip(chunks) {
        match res {
            Ok(rankings) => {
                for ((i, _), ranking) in chunk.iter().zip(rankings) {
                    if let Ok((r, _)) = &mut out[*i] {
                        *r = ranking;
                    }
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for (i, _) in chunk {
                    out[*i] = Err(Error::InvalidArgument(msg.clone()));
                }
            }
        }
    }
    out
}

/// Scores every query and builds the report. Queries with no subgraph are
/// counted in `skipped`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    kb: &KnowledgeBase,
    queries: &[Query],
    classes: &ClassVocab,
    max_len: usize,
    serial: bool,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (q, res) in queries
        .iter()
        .zip(score_queries(model, kb, queries, max_len, serial))
    {
        match res {
            Ok((ranking, g)) => {
                let stats = g.stats();
                rows.push(QueryRow {
                    source: kb.entity_name(q.source).to_owned(),
                    target: kb.entity_name(q.target).to_owned(),
                    relation: q.relation,
                    polarity: q.polarity,
                    ranking,
                    path_count: stats.path_count,
                    avg_path_len: stats.avg_path_len,
                });
            }
            Err(Error::NoSubgraph { .. }) | Err(Error::DegenerateQuery(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} queries have no subgraph and were skipped");
    }
    EvalReport::from_rows(classes.names().to_vec(), rows, DEFAULT_K, DEFAULT_BINS, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.csv` means CSV; anything else is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

const CSV_HEADER: [&str; 9] = [
    "source",
    "target",
    "relation",
    "polarity",
    "label",
    "rank",
    "path_count",
    "avg_path_len",
    "ranking",
];

/// CSV layout: a header row, one row per query, then `#`-prefixed trailer
/// lines carrying the class list, `k`, the bin count, `skipped`, and the
/// aggregates (for cross-checking against a recomputation).
pub fn report_to_csv(report: &EvalReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let name = |c: usize| report.classes[c].as_str();
    for r in &report.rows {
        let ranking: Vec<&str> = r.ranking.iter().map(|&c| name(c)).collect();
        w.write_record([
            r.source.as_str(),
            r.target.as_str(),
            r.relation.map_or("", name),
            match r.polarity {
                Polarity::Positive => "+",
                Polarity::Negative => "-",
            },
            name(r.label()),
            &r.rank().map_or(String::new(), |k| k.to_string()),
            &r.path_count.to_string(),
            &r.avg_path_len.to_string(),
            &ranking.join(" "),
        ])
        .map_err(csv_err)?;
    }
    let mut out = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    let opt = |v: Option<f64>| v.map_or("none".to_owned(), |x| x.to_string());
    writeln!(out, "# classes={}", serde_json::to_string(&report.classes)?).unwrap();
    writeln!(out, "# k={}", report.k).unwrap();
    writeln!(out, "# bins={}", report.bins()).unwrap();
    writeln!(out, "# skipped={}", report.skipped).unwrap();
    writeln!(out, "# map_at_k={}", report.map_at_k).unwrap();
    writeln!(out, "# tpr={}", opt(report.rates.tpr)).unwrap();
    writeln!(out, "# tnr={}", opt(report.rates.tnr)).unwrap();
    writeln!(out, "# avg_accuracy={}", opt(report.rates.avg_accuracy)).unwrap();
    Ok(out)
}

/// Parses [`report_to_csv`] output, recomputes the aggregates from the rows,
/// and checks them against the trailer.
pub fn report_from_csv(bytes: &[u8]) -> Result<EvalReport> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::InvalidArgument("report is not UTF-8".into()))?;
    let mut trailer = std::collections::HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.strip_prefix("# ").and_then(|l| l.split_once('=')) {
            trailer.insert(k.to_owned(), v.to_owned());
        }
    }
    let get = |k: &str| {
        trailer
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("report trailer lacks `{k}`")))
    };
    let bad = |what: &str| Error::InvalidArgument(format!("bad report field `{what}`"));
    let classes: Vec<String> = serde_json::from_str(get("classes")?)?;
    let class = |n: &str| {
        classes
            .iter()
            .position(|c| c == n)
            .ok_or_else(|| Error::UnknownName {
                kind: "class",
                name: n.to_owned(),
            })
    };
    let k: usize = get("k")?.parse().map_err(|_| bad("k"))?;
    let bins: usize = get("bins")?.parse().map_err(|_| bad("bins"))?;
    let skipped: usize = get("skipped")?.parse().map_err(|_| bad("skipped"))?;

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(bytes);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(bad("row width"));
        }
        rows.push(QueryRow {
            source: rec[0].to_owned(),
            target: rec[1].to_owned(),
            relation: match &rec[2] {
                "" => None,
                n => Some(class(n)?),
            },
            polarity: match &rec[3] {
                "+" => Polarity::Positive,
                "-" => Polarity::Negative,
                _ => return Err(bad("polarity")),
            },
            ranking: rec[8]
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(class)
                .collect::<Result<_>>()?,
            path_count: rec[6].parse().map_err(|_| bad("path_count"))?,
            avg_path_len: rec[7].parse().map_err(|_| bad("avg_path_len"))?,
        });
    }
    let report = EvalReport::from_rows(classes, rows, k, bins, skipped)?;
    let opt = |v: Option<f64>| v.map_or("none".to_owned(), |x| x.to_string());
    for (key, recomputed) in [
        ("map_at_k", report.map_at_k.to_string()),
        ("tpr", opt(report.rates.tpr)),
        ("tnr", opt(report.rates.tnr)),
        ("avg_accuracy", opt(report.rates.avg_accuracy)),
    ] {
        if *get(key)? != recomputed {
            return Err(Error::Mismatch(format!(
                "report `{key}` is {} but its rows give {recomputed}",
                get(key)?
            )));
        }
    }
    Ok(report)
}

pub fn emit_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let bytes = match format {
        ReportFormat::Json => serde_json::to_vec_pretty(report)?,
        ReportFormat::Csv => report_to_csv(report)?,
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match ReportFormat::from_path(path) {
        ReportFormat::Json => Ok(serde_json::from_slice(&bytes)?),
        ReportFormat::Csv => report_from_csv(&bytes),
    }
}
