//! Unified-diff parsing.
//!
//! Accepted grammar, line by line:
//!
//! - `diff --git a/<old> b/<new>` opens a git file section. Extended headers
//!   (`index`, `new file mode`, `deleted file mode`, `old mode`, `new mode`,
//!   `similarity index`, `rename from`, `rename to`, `copy from`, `copy to`)
//!   are recorded where they matter for paths and otherwise skipped.
//! - `--- <old>` must be immediately followed by `+++ <new>`.
//! - `@@ -<start>[,<len>] +<start>[,<len>] @@[ section]` opens a hunk. A hunk
//!   body is made of ` ` (context), `-`, `+` and `\` (no-newline marker)
//!   lines; a bare empty line counts as context. The body must contain exactly
//!   the number of old/new lines declared in the header.
//! - `Binary files ... differ`, `GIT binary patch` payloads and any other text
//!   between sections (commit messages, signatures) are skipped.
//!
//! Paths lose exactly one leading `a/` or `b/` segment, and `/dev/null` is
//! replaced by the counterpart path of the same section.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEV_NULL: &str = "/dev/null";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("diff parse error at line {line}: {message}")]
pub struct DiffParseError {
    /// 1-based line number of the first offending line.
    pub line: usize,
    pub message: String,
}

impl DiffParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Modified,
    Added,
    Deleted,
    Renamed,
    Copied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDelta {
    pub old_path: String,
    pub new_path: String,
    pub kind: ChangeKind,
    pub hunk_count: usize,
    pub added_lines: usize,
    pub removed_lines: usize,
    pub binary: bool,
}

impl FileDelta {
    /// The path this delta counts as "modified": the old path for deletions,
    /// the new path otherwise.
    pub fn modified_path(&self) -> &str {
        match self.kind {
            ChangeKind::Deleted => &self.old_path,
            _ => &self.new_path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDiff {
    pub files: Vec<FileDelta>,
    /// Hex SHA-256 of the raw patch text.
    pub raw_digest: String,
}

impl ParsedDiff {
    pub fn modified_files(&self) -> BTreeSet<String> {
        self.files
            .iter()
            .map(|f| f.modified_path().to_string())
            .collect()
    }
}

/// Returns the sorted, deduplicated set of paths touched by `patch`.
///
/// Empty input yields the empty set.
pub fn extract_modified_files(patch: &str) -> Result<BTreeSet<String>, DiffParseError> {
    Ok(parse_unified_diff(patch)?.modified_files())
}

/// Canonical form of a repository-relative path: `./` segments and repeated
/// slashes are removed along with surrounding whitespace. Idempotent.
///
/// This does not strip the `a/`/`b/` diff prefixes; header parsing does that
/// exactly once before calling this.
pub fn normalize_path(path: &str) -> String {
    let trimmed = path.trim();
    if trimmed == DEV_NULL {
        return DEV_NULL.to_string();
    }
    let absolute = trimmed.starts_with('/');
    let parts: Vec<&str> = trimmed
        .split('/')
        .filter(|seg| !seg.is_empty() && *seg != ".")
        .collect();
    let joined = parts.join("/");
    if absolute {
        format!("/{joined}")
    } else {
        joined
    }
}

/// Parses a file name out of a `---`/`+++` header payload: drops a tab-separated
/// timestamp, unquotes git-quoted names, strips one `a/` or `b/` prefix.
fn header_path(raw: &str) -> String {
    let name = raw.split('\t').next().unwrap_or("").trim_end();
    let name = unquote(name);
    if name == DEV_NULL {
        return name;
    }
    normalize_path(strip_ab_prefix(&name))
}

fn strip_ab_prefix(name: &str) -> &str {
    name.strip_prefix("a/")
        .or_else(|| name.strip_prefix("b/"))
        .unwrap_or(name)
}

fn unquote(name: &str) -> String {
    if name.len() >= 2 && name.starts_with('"') && name.ends_with('"') {
        let inner = &name[1..name.len() - 1];
        let mut out = String::with_capacity(inner.len());
        let mut chars = inner.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some('t') => out.push('\t'),
                    Some('n') => out.push('\n'),
                    Some(other) => out.push(other),
                    None => {}
                }
            } else {
                out.push(c);
            }
        }
        out
    } else {
        name.to_string()
    }
}

/// Splits the payload of `diff --git a/x b/y`. Only unambiguous for unquoted
/// names without " b/" inside them, which is all git itself guarantees.
fn git_header_paths(payload: &str) -> Option<(String, String)> {
    if let Some(rest) = payload.strip_prefix('"') {
        let end = rest.find('"')? + 2;
        let old = unquote(&payload[..end]);
        let new = unquote(payload[end..].trim());
        return Some((
            normalize_path(strip_ab_prefix(&old)),
            normalize_path(strip_ab_prefix(&new)),
        ));
    }
    let idx = payload.find(" b/")?;
    let old = &payload[..idx];
    let new = &payload[idx + 1..];
    Some((
        normalize_path(strip_ab_prefix(old)),
        normalize_path(strip_ab_prefix(new)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HunkHeader {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
}

fn parse_range(text: &str) -> Option<(usize, usize)> {
    match text.split_once(',') {
        Some((start, len)) => Some((start.parse().ok()?, len.parse().ok()?)),
        None => Some((text.parse().ok()?, 1)),
    }
}

/// Parses `@@ -l[,s] +l[,s] @@...`.
pub fn parse_hunk_header(line: &str) -> Option<HunkHeader> {
    let rest = line.strip_prefix("@@ -")?;
    let (ranges, _section) = rest.split_once(" @@")?;
    let (old, new) = ranges.split_once(" +")?;
    let (old_start, old_len) = parse_range(old)?;
    let (new_start, new_len) = parse_range(new)?;
    Some(HunkHeader {
        old_start,
        old_len,
        new_start,
        new_len,
    })
}

#[derive(Debug, Default)]
struct Section {
    git_paths: Option<(String, String)>,
    old_path: Option<String>,
    new_path: Option<String>,
    rename_from: Option<String>,
    rename_to: Option<String>,
    copy: bool,
    new_file: bool,
    deleted_file: bool,
    binary: bool,
    has_file_headers: bool,
    hunk_count: usize,
    added: usize,
    removed: usize,
    /// Line of the `+++` header, for "headers without hunks" errors.
    header_line: usize,
}

impl Section {
    fn finish(self) -> Option<FileDelta> {
        let git_old = self.git_paths.as_ref().map(|p| p.0.clone());
        let git_new = self.git_paths.as_ref().map(|p| p.1.clone());
        let mut old = self.rename_from.or(self.old_path).or(git_old)?;
        let mut new = self.rename_to.or(self.new_path).or(git_new)?;

        let added_file = self.new_file || old == DEV_NULL;
        let deleted_file = self.deleted_file || new == DEV_NULL;
        if old == DEV_NULL {
            old = new.clone();
        }
        if new == DEV_NULL {
            new = old.clone();
        }
        let kind = if added_file {
            ChangeKind::Added
        } else if deleted_file {
            ChangeKind::Deleted
        } else if old != new {
            if self.copy {
                ChangeKind::Copied
            } else {
                ChangeKind::Renamed
            }
        } else {
            ChangeKind::Modified
        };
        Some(FileDelta {
            old_path: old,
            new_path: new,
            kind,
            hunk_count: self.hunk_count,
            added_lines: self.added,
            removed_lines: self.removed,
            binary: self.binary,
        })
    }
}

/// Parses unified-diff text into per-file deltas with hunk and line tallies.
pub fn parse_unified_diff(patch: &str) -> Result<ParsedDiff, DiffParseError> {
    let raw_digest = hex::encode(Sha256::digest(patch.as_bytes()));
    let lines: Vec<&str> = patch
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    // A trailing newline produces one empty element that is not a line.
    let line_count = if patch.ends_with('\n') {
        lines.len() - 1
    } else {
        lines.len()
    };

    let mut files = Vec::new();
    let mut current: Option<Section> = None;
    let mut in_binary_payload = false;
    let mut idx = 0;

    let close = |section: Option<Section>, files: &mut Vec<FileDelta>| -> Result<(), DiffParseError> {
        if let Some(s) = section {
            if s.has_file_headers && s.hunk_count == 0 && !s.binary {
                return Err(DiffParseError::new(
                    s.header_line + 1,
                    "file header without any hunk",
                ));
            }
            if let Some(delta) = s.finish() {
                files.push(delta);
            }
        }
        Ok(())
    };

    while idx < line_count {
        let line_no = idx + 1;
        let line = lines[idx];

        if in_binary_payload {
            // GIT binary patch payload runs until a new section starts.
            if line.starts_with("diff --git ") {
                in_binary_payload = false;
            } else {
                idx += 1;
                continue;
            }
        }

        if let Some(payload) = line.strip_prefix("diff --git ") {
            close(current.take(), &mut files)?;
            current = Some(Section {
                git_paths: git_header_paths(payload),
                ..Section::default()
            });
            idx += 1;
            continue;
        }

        if let Some(old_raw) = line.strip_prefix("--- ") {
            let next = lines.get(idx + 1).filter(|_| idx + 1 < line_count);
            let new_raw = match next.and_then(|n| n.strip_prefix("+++ ")) {
                Some(n) => n,
                None => {
                    return Err(DiffParseError::new(
                        line_no + 1,
                        "expected '+++ ' header after '--- ' header",
                    ))
                }
            };
            // Plain (non-git) diffs start a new section at `---`; git sections
            // were opened by their `diff --git` line.
            let reuse = matches!(&current, Some(s) if s.git_paths.is_some() && !s.has_file_headers);
            if !reuse {
                close(current.take(), &mut files)?;
                current = Some(Section::default());
            }
            let section = current.as_mut().expect("section opened above");
            section.old_path = Some(header_path(old_raw));
            section.new_path = Some(header_path(new_raw));
            section.has_file_headers = true;
            section.header_line = line_no + 1;
            idx += 2;
            continue;
        }

        if line.starts_with("+++ ") {
            return Err(DiffParseError::new(
                line_no,
                "'+++ ' header without preceding '--- ' header",
            ));
        }

        if line.starts_with("@@") {
            let header = parse_hunk_header(line)
                .ok_or_else(|| DiffParseError::new(line_no, "malformed hunk header"))?;
            let section = match current.as_mut() {
                Some(s) if s.has_file_headers => s,
                _ => {
                    return Err(DiffParseError::new(
                        line_no,
                        "hunk outside of a file section",
                    ))
                }
            };
            let mut old_left = header.old_len;
            let mut new_left = header.new_len;
            idx += 1;
            while old_left > 0 || new_left > 0 {
                if idx >= line_count {
                    return Err(DiffParseError::new(
                        idx + 1,
                        "hunk body shorter than its header declares",
                    ));
                }
                let body = lines[idx];
                let body_no = idx + 1;
                match body.as_bytes().first() {
                    None | Some(b' ') => {
                        if old_left == 0 || new_left == 0 {
                            return Err(DiffParseError::new(
                                body_no,
                                "context line exceeds hunk length",
                            ));
                        }
                        old_left -= 1;
                        new_left -= 1;
                    }
                    Some(b'-') => {
                        if old_left == 0 {
                            return Err(DiffParseError::new(
                                body_no,
                                "removed line exceeds hunk length",
                            ));
                        }
                        old_left -= 1;
                        section.removed += 1;
                    }
                    Some(b'+') => {
                        if new_left == 0 {
                            return Err(DiffParseError::new(
                                body_no,
                                "added line exceeds hunk length",
                            ));
                        }
                        new_left -= 1;
                        section.added += 1;
                    }
                    Some(b'\\') => {}
                    Some(_) => {
                        return Err(DiffParseError::new(
                            body_no,
                            "unexpected line inside hunk body",
                        ))
                    }
                }
                idx += 1;
            }
            // A no-newline marker may trail the last body line.
            while idx < line_count && lines[idx].starts_with('\\') {
                idx += 1;
            }
            section.hunk_count += 1;
            // Body lines beyond the declared length are a structural error.
            if idx < line_count {
                let next = lines[idx];
                let signature = next == "-- " || next == "--";
                let overflow = (next.starts_with('+') && !next.starts_with("+++ "))
                    || (next.starts_with('-') && !next.starts_with("--- ") && !signature);
                if overflow {
                    return Err(DiffParseError::new(
                        idx + 1,
                        "hunk body longer than its header declares",
                    ));
                }
            }
            continue;
        }

        if let Some(section) = current.as_mut() {
            if !section.has_file_headers {
                if let Some(p) = line.strip_prefix("rename from ") {
                    section.rename_from = Some(normalize_path(&unquote(p)));
                } else if let Some(p) = line.strip_prefix("rename to ") {
                    section.rename_to = Some(normalize_path(&unquote(p)));
                } else if let Some(p) = line.strip_prefix("copy from ") {
                    section.rename_from = Some(normalize_path(&unquote(p)));
                    section.copy = true;
                } else if let Some(p) = line.strip_prefix("copy to ") {
                    section.rename_to = Some(normalize_path(&unquote(p)));
                    section.copy = true;
                } else if line.starts_with("new file mode") {
                    section.new_file = true;
                } else if line.starts_with("deleted file mode") {
                    section.deleted_file = true;
                }
            }
            if line.starts_with("Binary files ") {
                section.binary = true;
            } else if line == "GIT binary patch" {
                section.binary = true;
                in_binary_payload = true;
            }
        }
        idx += 1;
    }
    close(current.take(), &mut files)?;

    Ok(ParsedDiff { files, raw_digest })
}
