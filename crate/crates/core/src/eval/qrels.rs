use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Binary judgments for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryJudgments {
    pub query_id: String,
    /// When set, unlisted items count as judged non-relevant.
    pub complete: bool,
    labels: IndexMap<String, u8>,
}

impl QueryJudgments {
    pub fn new(query_id: impl Into<String>, complete: bool) -> Self {
        Self {
            query_id: query_id.into(),
            complete,
            labels: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, item: impl Into<String>, rel: u8) -> Result<()> {
        let item = item.into();
        if rel > 1 {
            return Err(Error::Config(format!("relevance must be 0 or 1, got {rel}")));
        }
        if self.labels.insert(item.clone(), rel).is_some() {
            return Err(Error::Config(format!(
                "item `{item}` judged twice for query `{}`",
                self.query_id
            )));
        }
        Ok(())
    }

    /// `Some(true|false)` when judged.
    pub fn judgment(&self, item: &str) -> Option<bool> {
        match self.labels.get(item) {
            Some(r) => Some(*r == 1),
            None if self.complete => Some(false),
            None => None,
        }
    }

    pub fn is_relevant(&self, item: &str) -> bool {
        self.labels.get(item) == Some(&1)
    }

    pub fn num_relevant(&self) -> usize {
        self.labels.values().filter(|r| **r == 1).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u8)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Relevance labels for a set of queries. `complete` distinguishes fully
/// judged collections from uniformly sampled pools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgmentSet {
    pub complete: bool,
    queries: IndexMap<String, QueryJudgments>,
}

impl JudgmentSet {
    pub fn new(complete: bool) -> Self {
        Self {
            complete,
            queries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, query_id: &str, item: impl Into<String>, rel: u8) -> Result<()> {
        let complete = self.complete;
        self.queries
            .entry(query_id.to_string())
            .or_insert_with(|| QueryJudgments::new(query_id, complete))
            .insert(item, rel)
    }

    pub fn get(&self, query_id: &str) -> Option<&QueryJudgments> {
        self.queries.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueryJudgments> {
        self.queries.values()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

pub const COMPLETE_HEADER: &str = "#complete";
pub const SAMPLED_HEADER: &str = "#sampled";

/// `#complete|#sampled` header, then `query_id 0 item_id rel` lines.
pub fn format_qrels(j: &JudgmentSet) -> String {
    let mut out = String::new();
    out.push_str(if j.complete { COMPLETE_HEADER } else { SAMPLED_HEADER });
    out.push('\n');
    for q in j.iter() {
        for (item, rel) in q.iter() {
            writeln!(out, "{} 0 {item} {rel}", q.query_id).unwrap();
        }
    }
    out
}

pub fn write_qrels(path: &Path, j: &JudgmentSet) -> Result<()> {
    std::fs::write(path, format_qrels(j)).map_err(|e| Error::io(path, e))
}

/// Parses qrels; without a header the set is treated as complete.
pub fn parse_qrels(path: &Path, text: &str) -> Result<JudgmentSet> {
    let mut lines = text.lines().enumerate().peekable();
    let complete = match lines.peek() {
        Some((_, l)) if *l == COMPLETE_HEADER => {
            lines.next();
            true
        }
        Some((_, l)) if *l == SAMPLED_HEADER => {
            lines.next();
            false
        }
        _ => true,
    };
    let mut set = JudgmentSet::new(complete);
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 4 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(path, lineno, "expected `query_id 0 item_id rel`"));
        }
        if fields[1] != "0" {
            return Err(Error::parse(path, lineno, format!("second field must be 0, got `{}`", fields[1])));
        }
        let rel: u8 = match fields[3] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(path, lineno, format!("relevance must be 0 or 1, got `{other}`"))),
        };
        set.insert(fields[0], fields[2], rel)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(set)
}

pub fn read_qrels(path: &Path) -> Result<JudgmentSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(path, &text)
}
