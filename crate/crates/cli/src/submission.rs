//! Challenge submission files: one line per query, a fixed number of
//! space-separated gallery indices.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use reidpost::distance::argsort_row;
use reidpost::{DistanceMatrix, Error, RankedResult, Result};

pub const SUBMISSION_WIDTH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubmissionFormat {
    pub width: usize,
    pub one_based: bool,
}

impl Default for SubmissionFormat {
    fn default() -> Self {
        SubmissionFormat {
            width: SUBMISSION_WIDTH,
            one_based: true,
        }
    }
}

/// Brings every list to exactly `width` entries. Longer lists are cut. Short
/// lists are extended with the nearest unused gallery images when distances
/// are given, otherwise with the lowest unused indices.
pub fn pad_lists(result: &RankedResult, width: usize, dist: Option<&DistanceMatrix>) -> Result<Vec<Vec<usize>>> {
    let g = result.gallery_ids().len();
    if g < width {
        return Err(Error::Input(format!(
            "a submission needs {width} entries per query but the gallery has only {g} images"
        )));
    }
    if let Some(d) = dist {
        if d.rows() != result.len() || d.cols() != g {
            return Err(Error::Shape(format!(
                "padding distances are {}x{}, expected {}x{g}",
                d.rows(),
                d.cols(),
                result.len()
            )));
        }
    }
    Ok(result
        .lists()
        .iter()
        .enumerate()
        .map(|(q, list)| {
            let mut out: Vec<usize> = list.iter().copied().take(width).collect();
            if out.len() < width {
                let used: HashSet<usize> = out.iter().copied().collect();
                let fill: Box<dyn Iterator<Item = usize>> = match dist {
                    Some(d) => Box::new(argsort_row(d.row(q)).into_iter()),
                    None => Box::new(0..g),
                };
                let need = width - out.len();
                out.extend(fill.filter(|i| !used.contains(i)).take(need));
            }
            out
        })
        .collect())
}

/// Renders the submission text, one newline-terminated line per query.
pub fn format_submission(result: &RankedResult, format: SubmissionFormat, dist: Option<&DistanceMatrix>) -> Result<String> {
    let lists = pad_lists(result, format.width, dist)?;
    let offset = usize::from(format.one_based);
    let mut out = String::with_capacity(lists.len() * format.width * 6);
    for (q, list) in lists.iter().enumerate() {
        let mut seen = HashSet::with_capacity(list.len());
        for (j, &i) in list.iter().enumerate() {
            if !seen.insert(i) {
                return Err(Error::Integrity(format!(
                    "gallery index {i} appears twice for query {}",
                    result.query_ids()[q]
                )));
            }
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&(i + offset).to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

/// Renders ranked lists as they are, without padding or truncation.
pub fn format_ranking(result: &RankedResult, one_based: bool) -> String {
    let offset = usize::from(one_based);
    let mut out = String::new();
    for list in result.lists() {
        let line: Vec<String> = list.iter().map(|i| (i + offset).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_submission(
    result: &RankedResult,
    path: impl AsRef<Path>,
    format: SubmissionFormat,
    dist: Option<&DistanceMatrix>,
) -> Result<()> {
    let path = path.as_ref();
    let text = format_submission(result, format, dist)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Parses a ranking file in the submission layout. Lines may hold any number
/// of entries.
pub fn parse_submission(
    text: &str,
    query_ids: Vec<String>,
    gallery_ids: Vec<String>,
    one_based: bool,
) -> Result<RankedResult> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != query_ids.len() {
        return Err(Error::Integrity(format!(
            "ranking has {} lines for {} queries",
            lines.len(),
            query_ids.len()
        )));
    }
    let mut lists = Vec::with_capacity(lines.len());
    for (n, line) in lines.iter().enumerate() {
        let mut list = Vec::new();
        for tok in line.split_whitespace() {
            let v: usize = tok
                .parse()
                .map_err(|_| Error::Format(format!("line {}: `{tok}` is not an index", n + 1)))?;
            let i = if one_based {
                v.checked_sub(1)
                    .ok_or_else(|| Error::Integrity(format!("line {}: index 0 in a one-based file", n + 1)))?
            } else {
                v
            };
            list.push(i);
        }
        lists.push(list);
    }
    RankedResult::new(query_ids, gallery_ids, lists)
}

pub fn read_submission(
    path: impl AsRef<Path>,
    query_ids: Vec<String>,
    gallery_ids: Vec<String>,
    one_based: bool,
) -> Result<RankedResult> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_submission(&text, query_ids, gallery_ids, one_based)
}
