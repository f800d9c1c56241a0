//! Query logs, vocabularies, and term-id encoding.
//!
//! Text is expected pre-tokenized: tokens are separated by single spaces and
//! never contain tabs, `|`, or `;`.
//!
//! A query-log line holds one search session:
//!
//! ```text
//! query tokens<TAB>doc_id|title tokens|clicked|dwell_ms;doc_id|title tokens|clicked|dwell_ms;...
//! ```
//!
//! `clicked` is `0` or `1`; `dwell_ms` is a non-negative integer or empty.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: usize = 0;

pub const DEFAULT_QUERY_CAP: usize = 16;
pub const DEFAULT_TITLE_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Impression {
    pub doc_id: String,
    pub title_tokens: Vec<String>,
    pub clicked: bool,
    pub dwell_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub query_tokens: Vec<String>,
    pub impressions: Vec<Impression>,
}

impl Session {
    /// Checks the structural invariants of a session.
    pub fn validate(&self) -> Result<()> {
        if self.query_tokens.is_empty() || self.query_tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::Invalid("session has an empty query".into()));
        }
        if self.impressions.is_empty() {
            return Err(Error::Invalid("session has no impressions".into()));
        }
        let mut seen = HashSet::new();
        for imp in &self.impressions {
            if imp.doc_id.is_empty() {
                return Err(Error::Invalid("empty doc id".into()));
            }
            if !seen.insert(imp.doc_id.as_str()) {
                return Err(Error::Invalid(format!("duplicate doc id `{}`", imp.doc_id)));
            }
        }
        Ok(())
    }

    /// Identity of the query across sessions: its exact token sequence.
    pub fn query_key(&self) -> String {
        self.query_tokens.join(" ")
    }

    pub fn click_count(&self) -> usize {
        self.impressions.iter().filter(|i| i.clicked).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitTag {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryLog {
    pub sessions: Vec<Session>,
    pub split: SplitTag,
}

/// Outcome of parsing a query-log stream.
#[derive(Debug, Clone)]
pub struct ParsedLog {
    pub log: QueryLog,
    /// Number of malformed lines that were skipped.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub split: SplitTag,
    pub lowercase: bool,
}

pub fn parse_query_log<R: BufRead>(reader: R) -> Result<ParsedLog> {
    parse_query_log_with(reader, &ParseOptions::default())
}

pub fn parse_query_log_with<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<ParsedLog> {
    let mut sessions = Vec::new();
    let mut skipped = 0usize;
    let mut records = 0usize;
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        match parse_session(line, opts.lowercase) {
            Some(s) => sessions.push(s),
            None => skipped += 1,
        }
    }
    if records == 0 {
        return Err(Error::format(0, "query log is empty"));
    }
    if skipped * 2 > records {
        return Err(Error::format(
            0,
            format!("{skipped} of {records} lines are malformed"),
        ));
    }
    Ok(ParsedLog {
        log: QueryLog { sessions, split: opts.split },
        skipped,
    })
}

fn tokens(text: &str, lowercase: bool) -> Vec<String> {
    text.split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

fn parse_session(line: &str, lowercase: bool) -> Option<Session> {
    let (query, docs) = line.split_once('\t')?;
    if docs.contains('\t') {
        return None;
    }
    let query_tokens = tokens(query, lowercase);
    let mut impressions = Vec::new();
    for record in docs.split(';') {
        let mut fields = record.split('|');
        let doc_id = fields.next()?.trim().to_string();
        let title_tokens = tokens(fields.next()?, lowercase);
        let clicked = match fields.next()? {
            "0" => false,
            "1" => true,
            _ => return None,
        };
        let dwell_ms = match fields.next()? {
            "" => None,
            d => Some(d.parse::<u64>().ok()?),
        };
        if fields.next().is_some() {
            return None;
        }
        impressions.push(Impression { doc_id, title_tokens, clicked, dwell_ms });
    }
    let session = Session { query_tokens, impressions };
    session.validate().ok()?;
    Some(session)
}

/// Writes one session in query-log line format (no trailing newline).
pub fn format_session(session: &Session) -> String {
    let mut line = session.query_tokens.join(" ");
    line.push('\t');
    for (i, imp) in session.impressions.iter().enumerate() {
        if i > 0 {
            line.push(';');
        }
        let _ = write!(
            line,
            "{}|{}|{}|",
            imp.doc_id,
            imp.title_tokens.join(" "),
            u8::from(imp.clicked)
        );
        if let Some(d) = imp.dwell_ms {
            let _ = write!(line, "{d}");
        }
    }
    line
}

pub fn write_query_log<W: Write>(log: &QueryLog, mut out: W) -> Result<()> {
    for s in &log.sessions {
        writeln!(out, "{}", format_session(s))?;
    }
    Ok(())
}

/// All documents displayed for one query across the sessions of a log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryCandidates {
    pub query_key: String,
    pub query_tokens: Vec<String>,
    /// `(doc_id, title_tokens)` in first-displayed order.
    pub docs: Vec<(String, Vec<String>)>,
}

/// Groups sessions by query key, sorted by key. A document's title is taken
/// from its first impression.
pub fn group_by_query(log: &QueryLog) -> Vec<QueryCandidates> {
    let mut groups: std::collections::BTreeMap<String, (QueryCandidates, HashSet<String>)> =
        std::collections::BTreeMap::new();
    for s in &log.sessions {
        let key = s.query_key();
        let (group, seen) = groups.entry(key.clone()).or_insert_with(|| {
            (
                QueryCandidates { query_key: key, query_tokens: s.query_tokens.clone(), docs: Vec::new() },
                HashSet::new(),
            )
        });
        for imp in &s.impressions {
            if seen.insert(imp.doc_id.clone()) {
                group.docs.push((imp.doc_id.clone(), imp.title_tokens.clone()));
            }
        }
    }
    groups.into_values().map(|(g, _)| g).collect()
}

/// Truncation limits applied when encoding queries and titles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextCaps {
    pub query: usize,
    pub title: usize,
}

impl Default for TextCaps {
    fn default() -> Self {
        Self { query: DEFAULT_QUERY_CAP, title: DEFAULT_TITLE_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    term_to_id: HashMap<String, usize>,
    id_to_term: Vec<String>,
    freqs: Vec<u64>,
}

impl Vocabulary {
    /// A vocabulary holding only the UNK entry.
    pub fn unk_only() -> Self {
        Self {
            term_to_id: HashMap::new(),
            id_to_term: vec![UNK_TOKEN.to_string()],
            freqs: vec![0],
        }
    }

    /// Builds a vocabulary from `(term, freq)` entries already in id order
    /// (ids 1, 2, ...). UNK is prepended.
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, u64)>,
    {
        let mut vocab = Self::unk_only();
        for (term, freq) in entries {
            if term.is_empty() || term == UNK_TOKEN || term.contains(char::is_whitespace) {
                return Err(Error::Invalid(format!("bad vocabulary term `{term}`")));
            }
            let id = vocab.id_to_term.len();
            if vocab.term_to_id.insert(term.clone(), id).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary term `{term}`")));
            }
            vocab.id_to_term.push(term);
            vocab.freqs.push(freq);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.id_to_term.len()
    }

    /// Always false: UNK is present in every vocabulary.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unk_id(&self) -> usize {
        UNK_ID
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.term_to_id.get(term).copied()
    }

    pub fn id_or_unk(&self, term: &str) -> usize {
        self.id(term).unwrap_or(UNK_ID)
    }

    pub fn term(&self, id: usize) -> Option<&str> {
        self.id_to_term.get(id).map(String::as_str)
    }

    pub fn freq(&self, id: usize) -> Option<u64> {
        self.freqs.get(id).copied()
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &str)> {
        self.id_to_term.iter().enumerate().map(|(i, t)| (i, t.as_str()))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for (id, term) in self.id_to_term.iter().enumerate() {
            writeln!(out, "{term}\t{id}\t{}", self.freqs[id])?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(lineno, "expected `term TAB id TAB freq`"));
            }
            let id: usize = fields[1]
                .parse()
                .map_err(|_| Error::format(lineno, "bad id"))?;
            let freq: u64 = fields[2]
                .parse()
                .map_err(|_| Error::format(lineno, "bad frequency"))?;
            if id != entries.len() {
                return Err(Error::format(lineno, "ids must be contiguous and sorted"));
            }
            entries.push((fields[0].to_string(), freq));
        }
        match entries.first() {
            Some((t, _)) if t == UNK_TOKEN => {}
            _ => return Err(Error::format(1, "vocabulary must start with the UNK entry")),
        }
        let unk_freq = entries[0].1;
        let mut vocab = Self::from_entries(entries.into_iter().skip(1))?;
        vocab.freqs[UNK_ID] = unk_freq;
        Ok(vocab)
    }
}

/// Builds a vocabulary over query and title tokens. Ids follow descending
/// corpus frequency; ties are broken lexicographically.
pub fn build_vocabulary(log: &QueryLog, min_count: u64) -> Vocabulary {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in &log.sessions {
        let titles = s.impressions.iter().flat_map(|i| i.title_tokens.iter());
        for t in s.query_tokens.iter().chain(titles) {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut entries: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count.max(1) && t != UNK_TOKEN)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_entries(entries.into_iter().map(|(t, c)| (t.to_string(), c)))
        .expect("counted tokens are unique and non-empty")
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TermIdSequence {
    pub ids: Vec<usize>,
    /// Token count before truncation.
    pub original_length: usize,
}

impl TermIdSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn all_unknown(&self) -> bool {
        !self.ids.is_empty() && self.ids.iter().all(|&i| i == UNK_ID)
    }
}

/// Maps tokens to ids, truncating to the first `cap` tokens. An empty token
/// list yields an empty sequence; callers decide whether that is an error.
pub fn encode_text<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S], cap: usize) -> TermIdSequence {
    let cap = cap.max(1);
    TermIdSequence {
        ids: tokens.iter().take(cap).map(|t| vocab.id_or_unk(t.as_ref())).collect(),
        original_length: tokens.len(),
    }
}
