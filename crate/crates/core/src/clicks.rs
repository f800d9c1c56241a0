//! Relevance labels from clicks: DCTR scores, five-grade mapping, and
//! single-click test cases.
//!
//! Label files hold `query_key TAB doc_id TAB score TAB grade` lines, where
//! grade is `0..=4` or `-` when not assigned. Raw-case files hold
//! `query_key TAB clicked_id TAB doc_1,doc_2,...` in display order.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::corpus::QueryLog;
use crate::error::{Error, Result};
use crate::trainer::QueryLabels;

/// Grade distribution of TREC Web Track 2009-2012 qrels, grades 0 to 4.
/// These fractions sum to 1.018; [`default_grade_target`] normalizes them.
pub const TREC_GRADE_DISTRIBUTION: [f64; 5] = [0.70, 0.196, 0.098, 0.013, 0.011];

pub fn default_grade_target() -> [f64; 5] {
    let total: f64 = TREC_GRADE_DISTRIBUTION.iter().sum();
    TREC_GRADE_DISTRIBUTION.map(|f| f / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClickCounts {
    pub impressions: u64,
    pub clicks: u64,
}

/// Impressions and clicks per `(query_key, doc_id)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClickStats {
    pub counts: BTreeMap<String, BTreeMap<String, ClickCounts>>,
}

pub fn click_stats(log: &QueryLog) -> ClickStats {
    let mut stats = ClickStats::default();
    for s in &log.sessions {
        let per_doc = stats.counts.entry(s.query_key()).or_default();
        for imp in &s.impressions {
            let c = per_doc.entry(imp.doc_id.clone()).or_default();
            c.impressions += 1;
            c.clicks += u64::from(imp.clicked);
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub score: f64,
    pub grade: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelevanceLabelSet {
    pub labels: BTreeMap<String, BTreeMap<String, Label>>,
}

impl RelevanceLabelSet {
    pub fn len(&self) -> usize {
        self.labels.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, query_key: &str, doc_id: &str) -> Option<Label> {
        self.labels.get(query_key)?.get(doc_id).copied()
    }

    pub fn scores(&self) -> QueryLabels {
        self.map_values(|l| Some(l.score))
    }

    /// Grades as reals; unassigned grades are omitted.
    pub fn grades(&self) -> QueryLabels {
        self.map_values(|l| l.grade.map(f64::from))
    }

    fn map_values(&self, f: impl Fn(&Label) -> Option<f64>) -> QueryLabels {
        self.labels
            .iter()
            .map(|(q, docs)| {
                (q.clone(), docs.iter().filter_map(|(d, l)| Some((d.clone(), f(l)?))).collect())
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for (q, docs) in &self.labels {
            for (d, l) in docs {
                match l.grade {
                    Some(g) => writeln!(out, "{q}\t{d}\t{}\t{g}", l.score)?,
                    None => writeln!(out, "{q}\t{d}\t{}\t-", l.score)?,
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut set = Self::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::format(lineno, "expected `query_key TAB doc_id TAB score TAB grade`"));
            }
            let score: f64 = fields[2]
                .parse()
                .map_err(|_| Error::format(lineno, format!("bad score `{}`", fields[2])))?;
            let grade = match fields[3] {
                "-" => None,
                g => match g.parse::<u8>() {
                    Ok(v) if v <= 4 => Some(v),
                    _ => return Err(Error::format(lineno, format!("bad grade `{g}`"))),
                },
            };
            set.labels
                .entry(fields[0].to_string())
                .or_default()
                .insert(fields[1].to_string(), Label { score, grade });
        }
        Ok(set)
    }
}

/// Click-through rate of every displayed `(query, doc)` pair.
pub fn dctr_scores(log: &QueryLog) -> RelevanceLabelSet {
    dctr_scores_smoothed(log, 0.0)
}

/// DCTR with additive smoothing `(clicks + alpha) / (impressions + 2 alpha)`;
/// `alpha = 0` gives the raw click-through rate.
pub fn dctr_scores_smoothed(log: &QueryLog, alpha: f64) -> RelevanceLabelSet {
    let stats = click_stats(log);
    let labels = stats
        .counts
        .into_iter()
        .map(|(q, docs)| {
            let docs = docs
                .into_iter()
                .map(|(d, c)| {
                    let score = (c.clicks as f64 + alpha) / (c.impressions as f64 + 2.0 * alpha);
                    (d, Label { score, grade: None })
                })
                .collect();
            (q, docs)
        })
        .collect();
    RelevanceLabelSet { labels }
}

/// Thresholds chosen by [`map_to_grades`] and the grade histogram they give.
#[derive(Debug, Clone, PartialEq)]
pub struct GradeMapping {
    pub thresholds: [f64; 4],
    pub achieved: [f64; 5],
}

/// Assigns grades 0..=4 so that their distribution follows `target`.
///
/// Threshold `g` is the empirical quantile of all scores at the cumulative
/// fraction `target[0] + ... + target[g]`; a score's grade is the number of
/// thresholds strictly below it. Tied scores therefore fall to the lower
/// grade.
pub fn map_to_grades(labels: &mut RelevanceLabelSet, target: &[f64; 5]) -> Result<GradeMapping> {
    let total: f64 = target.iter().sum();
    if (total - 1.0).abs() > 1e-6 || target.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(Error::Invalid(format!("grade fractions must sum to 1, got {total}")));
    }
    let mut scores: Vec<f64> = labels.labels.values().flat_map(|d| d.values().map(|l| l.score)).collect();
    if scores.is_empty() {
        return Ok(GradeMapping { thresholds: [0.0; 4], achieved: [0.0; 5] });
    }
    scores.sort_by(f64::total_cmp);
    let n = scores.len();
    let mut thresholds = [0.0; 4];
    let mut cumulative = 0.0;
    for (g, t) in thresholds.iter_mut().enumerate() {
        cumulative += target[g];
        let idx = ((cumulative * n as f64).ceil() as usize).clamp(1, n) - 1;
        *t = scores[idx];
    }
    let mut counts = [0usize; 5];
    for docs in labels.labels.values_mut() {
        for l in docs.values_mut() {
            let grade = thresholds.iter().filter(|&&t| t < l.score).count();
            l.grade = Some(grade as u8);
            counts[grade] += 1;
        }
    }
    let achieved = counts.map(|c| c as f64 / n as f64);
    Ok(GradeMapping { thresholds, achieved })
}

/// A single-click session: the clicked document is taken as the one
/// relevant result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawClickCase {
    pub query_key: String,
    pub displayed: Vec<String>,
    pub clicked_id: String,
}

pub fn extract_raw_click_cases(log: &QueryLog) -> Vec<RawClickCase> {
    log.sessions
        .iter()
        .filter(|s| s.click_count() == 1)
        .map(|s| RawClickCase {
            query_key: s.query_key(),
            displayed: s.impressions.iter().map(|i| i.doc_id.clone()).collect(),
            clicked_id: s
                .impressions
                .iter()
                .find(|i| i.clicked)
                .map(|i| i.doc_id.clone())
                .expect("one click"),
        })
        .collect()
}

pub fn write_raw_cases<W: Write>(cases: &[RawClickCase], mut out: W) -> Result<()> {
    for c in cases {
        writeln!(out, "{}\t{}\t{}", c.query_key, c.clicked_id, c.displayed.join(","))?;
    }
    Ok(())
}

pub fn read_raw_cases<R: BufRead>(reader: R) -> Result<Vec<RawClickCase>> {
    let mut cases = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::format(idx + 1, "expected `query_key TAB clicked_id TAB doc_ids`"));
        }
        let displayed: Vec<String> = fields[2].split(',').map(str::to_string).collect();
        if !displayed.iter().any(|d| d == fields[1]) {
            return Err(Error::format(idx + 1, "clicked document is not among the displayed ones"));
        }
        cases.push(RawClickCase {
            query_key: fields[0].to_string(),
            clicked_id: fields[1].to_string(),
            displayed,
        });
    }
    Ok(cases)
}
