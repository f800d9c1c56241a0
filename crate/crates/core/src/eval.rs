//! Ranking metrics, paired permutation test, and win/tie/loss counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_PERMUTATION_ITERATIONS: usize = 100_000;
pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-9;
pub const NDCG_DEPTHS: [usize; 3] = [1, 3, 10];

/// Per-query metric values keyed by query key.
pub type PerQuery = BTreeMap<String, f64>;

fn gain(grade: u8) -> f64 {
    2f64.powi(i32::from(grade)) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

fn dcg(grades: impl Iterator<Item = u8>, k: usize) -> f64 {
    grades.take(k).enumerate().map(|(i, g)| gain(g) / discount(i + 1)).sum()
}

/// NDCG@k with gain `2^g - 1` and discount `log2(r + 1)`. Unlabeled docs
/// count as grade 0. A query with no positive grade scores 0.
pub fn ndcg_at_k(ranked: &[&str], grades: &BTreeMap<String, u8>, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let mut ideal: Vec<u8> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let ideal_dcg = dcg(ideal.into_iter(), k);
    if ideal_dcg == 0.0 {
        return 0.0;
    }
    let actual = dcg(ranked.iter().map(|d| grades.get(*d).copied().unwrap_or(0)), k);
    actual / ideal_dcg
}

/// Reciprocal rank of `clicked` in `ranked`.
pub fn reciprocal_rank(query_key: &str, ranked: &[&str], clicked: &str) -> Result<f64> {
    ranked
        .iter()
        .position(|d| *d == clicked)
        .map(|p| 1.0 / (p + 1) as f64)
        .ok_or_else(|| Error::Alignment(format!("query `{query_key}`: clicked document `{clicked}` is not ranked")))
}

/// A ranking to be scored against a single clicked document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickCase<'a> {
    pub query_key: &'a str,
    pub ranked: Vec<&'a str>,
    pub clicked: &'a str,
}

pub fn mrr(cases: &[ClickCase<'_>]) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("click cases"));
    }
    let mut total = 0.0;
    for c in cases {
        total += reciprocal_rank(c.query_key, &c.ranked, c.clicked)?;
    }
    Ok(total / cases.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    pub mean_a: f64,
    pub mean_b: f64,
    pub p_value: f64,
    pub iterations: usize,
    pub seed: u64,
}

fn aligned(a: &PerQuery, b: &PerQuery) -> Result<Vec<f64>> {
    if let Some(q) = a.keys().find(|q| !b.contains_key(*q)) {
        return Err(Error::Alignment(format!("query `{q}` missing from the second run")));
    }
    if let Some(q) = b.keys().find(|q| !a.contains_key(*q)) {
        return Err(Error::Alignment(format!("query `{q}` missing from the first run")));
    }
    Ok(a.iter().map(|(q, x)| x - b[q]).collect())
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    v.sum::<f64>() / n as f64
}

/// Two-sided paired sign-flip permutation test on per-query differences.
pub fn permutation_test(a: &PerQuery, b: &PerQuery, iterations: usize, seed: u64) -> Result<SignificanceReport> {
    let diffs = aligned(a, b)?;
    if diffs.len() < 2 {
        return Err(Error::Invalid("permutation test needs at least two queries".into()));
    }
    if iterations == 0 {
        return Err(Error::Invalid("permutation test needs at least one iteration".into()));
    }
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    // Guards against summation-order noise deciding `>=` on exact ties.
    let slack = 1e-12 * diffs.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..iterations {
        let s: f64 = diffs.iter().map(|&d| if rng.gen::<bool>() { d } else { -d }).sum();
        if (s / n).abs() >= observed - slack {
            extreme += 1;
        }
    }
    Ok(SignificanceReport {
        mean_a: mean(a.values().copied()),
        mean_b: mean(b.values().copied()),
        p_value: (extreme + 1) as f64 / (iterations + 1) as f64,
        iterations,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WinTieLoss {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

pub fn win_tie_loss(a: &PerQuery, b: &PerQuery, tolerance: f64) -> Result<WinTieLoss> {
    let mut out = WinTieLoss::default();
    for d in aligned(a, b)? {
        if d > tolerance {
            out.wins += 1;
        } else if d < -tolerance {
            out.losses += 1;
        } else {
            out.ties += 1;
        }
    }
    Ok(out)
}

/// Per-query metrics of one method, keyed by metric name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MethodScores {
    pub name: String,
    pub metrics: BTreeMap<String, PerQuery>,
}

impl MethodScores {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        let v = self.metrics.get(metric)?;
        (!v.is_empty()).then(|| mean(v.values().copied()))
    }
}

pub fn metric_names(graded: bool) -> Vec<String> {
    if graded {
        NDCG_DEPTHS.iter().map(|k| format!("NDCG@{k}")).collect()
    } else {
        vec!["MRR".to_string()]
    }
}

/// Tab-separated evaluation table with one row per method. When two or more
/// methods are given, each method after the first is compared with the
/// first: permutation p-value and W/T/L per metric.
pub fn format_report(methods: &[MethodScores], metrics: &[String], iterations: usize, seed: u64) -> Result<String> {
    let mut out = String::new();
    let _ = write!(out, "method");
    for m in metrics {
        let _ = write!(out, "\t{m}");
    }
    out.push('\n');
    for method in methods {
        let _ = write!(out, "{}", method.name);
        for m in metrics {
            match method.mean(m) {
                Some(v) => {
                    let _ = write!(out, "\t{v:.4}");
                }
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    if let Some((base, rest)) = methods.split_first() {
        if !rest.is_empty() {
            let _ = writeln!(out, "\nmethod\tversus\tmetric\tmean_diff\tp_value\twins/ties/losses");
        }
        for other in rest {
            for m in metrics {
                let (Some(a), Some(b)) = (other.metrics.get(m), base.metrics.get(m)) else {
                    continue;
                };
                let sig = permutation_test(a, b, iterations, seed)?;
                let wtl = win_tie_loss(a, b, DEFAULT_TIE_TOLERANCE)?;
                let _ = writeln!(
                    out,
                    "{}\t{}\t{m}\t{:+.4}\t{:.5}\t{}/{}/{}",
                    other.name,
                    base.name,
                    sig.mean_a - sig.mean_b,
                    sig.p_value,
                    wtl.wins,
                    wtl.ties,
                    wtl.losses
                );
            }
        }
    }
    Ok(out)
}
