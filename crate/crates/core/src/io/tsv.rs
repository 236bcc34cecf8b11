//! TAB-separated text files: captions/queries, video-caption pairs and
//! negation exports.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `id<TAB>text` lines. Used for captions and for query token files.
pub fn parse_texts(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = std::collections::HashSet::new();
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let (id, body) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `id<TAB>text`"))?;
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(Error::parse(path, i + 1, format!("bad id `{id}`")));
            }
            if !seen.insert(id.to_string()) {
                return Err(Error::parse(path, i + 1, format!("duplicate id `{id}`")));
            }
            Ok((id.to_string(), body.to_string()))
        })
        .collect()
}

pub fn read_texts(path: &Path) -> Result<Vec<(String, String)>> {
    parse_texts(path, &read(path)?)
}

pub fn format_texts<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (id, t) in rows {
        writeln!(out, "{id}\t{t}").unwrap();
    }
    out
}

pub fn write_texts<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
    write(path, &format_texts(rows))
}

/// `video_id<TAB>caption_id` lines.
pub fn parse_pairs(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 2 || f.iter().any(|x| x.is_empty()) {
                return Err(Error::parse(path, i + 1, "expected `video_id<TAB>caption_id`"));
            }
            Ok((f[0].to_string(), f[1].to_string()))
        })
        .collect()
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    parse_pairs(path, &read(path)?)
}

pub fn write_pairs<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
    write(path, &format_texts(rows))
}

/// `caption_id<TAB>original<TAB>negated` lines.
pub fn format_negations<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (id, orig, neg) in rows {
        writeln!(out, "{id}\t{orig}\t{neg}").unwrap();
    }
    out
}

pub fn parse_negations(path: &Path, text: &str) -> Result<Vec<(String, String, String)>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 || f.iter().any(|x| x.is_empty()) {
                return Err(Error::parse(path, i + 1, "expected `id<TAB>original<TAB>negated`"));
            }
            Ok((f[0].to_string(), f[1].to_string(), f[2].to_string()))
        })
        .collect()
}
