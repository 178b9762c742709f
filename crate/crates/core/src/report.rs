//! Report emission utilities: atomic file writes, JSON helpers, and the
//! privacy audit that proves no true student-id token leaks into emitted
//! artifacts.
//!
//! # Privacy audit rules
//!
//! The audit walks an output directory and flags a *true-id token match*
//! when:
//!
//! * any JSON key or JSON string value (recursively) equals the decimal
//!   string of a true student id;
//! * any CSV header equals an id-carrying column name (`student_id`,
//!   `true_id`, `id`, or any `*_id`);
//! * any CSV cell in an *id-like column* (header `id`/`*_id`/`label`/
//!   `student`/`name`) equals a true-id decimal string;
//! * any whitespace-delimited token in a plain-text file equals a true-id
//!   decimal string.
//!
//! Structural numbers (round indices, counts, metric values) are not
//! identity tokens and are deliberately out of scope — an accuracy of `0.9`
//! or a round counter `1` identifies nobody. Vault store files
//! (`vault.json`, `vault.json.key`) are excluded: the vault is the
//! access-controlled secret store whose whole purpose is to hold the
//! protected mapping, and it never feeds training or reporting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// then rename), creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_with_mode(path, bytes, None)
}

/// Like [`write_atomic`], optionally restricting Unix permissions (e.g.
/// `0o600` for secret stores) before the file becomes visible.
pub fn write_atomic_with_mode(path: &Path, bytes: &[u8], mode: Option<u32>) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".gazelab-tmp-")
        .tempfile_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    #[cfg(unix)]
    if let Some(mode) = mode {
        use std::os::unix::fs::PermissionsExt;
        let perm = fs::Permissions::from_mode(mode);
        tmp.as_file()
            .set_permissions(perm)
            .map_err(|e| Error::io(path, e))?;
    }
    #[cfg(not(unix))]
    let _ = mode;
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Serializes `value` as pretty JSON and writes it atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json_with_mode(path, value, None)
}

/// Like [`write_json`] but sets the file mode (Unix) before the atomic
/// rename, for artifacts that must stay owner-readable only.
pub fn write_json_with_mode<T: Serialize>(
    path: &Path,
    value: &T,
    mode: Option<u32>,
) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("JSON serialization failed: {e}")))?;
    text.push('\n');
    write_atomic_with_mode(path, text.as_bytes(), mode)
}

/// Reads and deserializes a JSON file.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("cannot parse JSON {}: {e}", path.display())))
}

/// One privacy-audit violation: where a true-id token was found.
/// Deliberately does not echo the token itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditMatch {
    /// File containing the match, relative to the audited directory.
    pub file: String,
    /// Human-readable location (JSON pointer, CSV row/column, token index).
    pub location: String,
}

/// Result of [`audit_true_id_tokens`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrivacyAudit {
    /// Files scanned, relative paths, sorted.
    pub files_scanned: Vec<String>,
    /// Files skipped (binary or excluded secret stores), sorted.
    pub files_skipped: Vec<String>,
    /// All matches found; empty means the audit passed.
    pub matches: Vec<AuditMatch>,
}

impl PrivacyAudit {
    pub fn passed(&self) -> bool {
        self.matches.is_empty()
    }
}

fn is_id_like_header(header: &str) -> bool {
    let h = header.trim().to_ascii_lowercase();
    h == "id"
        || h.ends_with("_id")
        || h == "label"
        || h == "student"
        || h == "name"
        || h == "identity"
}

fn is_forbidden_header(header: &str) -> bool {
    let h = header.trim().to_ascii_lowercase();
    h == "student_id" || h == "true_id"
}

fn audit_json_value(
    value: &serde_json::Value,
    pointer: &str,
    tokens: &[String],
    file: &str,
    matches: &mut Vec<AuditMatch>,
) {
    match value {
        serde_json::Value::String(s) => {
            if tokens.iter().any(|t| t == s) {
                matches.push(AuditMatch {
                    file: file.to_string(),
                    location: format!("json string value at {pointer}"),
                });
            }
        }
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                if tokens.iter().any(|t| t == k) {
                    matches.push(AuditMatch {
                        file: file.to_string(),
                        location: format!("json key at {pointer}/{k}"),
                    });
                }
                audit_json_value(v, &format!("{pointer}/{k}"), tokens, file, matches);
            }
        }
        serde_json::Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                audit_json_value(v, &format!("{pointer}/{i}"), tokens, file, matches);
            }
        }
        _ => {}
    }
}

fn audit_csv_text(text: &str, tokens: &[String], file: &str, matches: &mut Vec<AuditMatch>) {
    let mut lines = text.lines();
    let header: Vec<String> = match lines.next() {
        Some(h) => h.split(',').map(|c| c.trim().to_string()).collect(),
        None => return,
    };
    for (col, h) in header.iter().enumerate() {
        if is_forbidden_header(h) {
            matches.push(AuditMatch {
                file: file.to_string(),
                location: format!("csv header column {col} ('{h}')"),
            });
        }
    }
    let checked: Vec<usize> = (0..header.len())
        .filter(|&c| is_id_like_header(&header[c]))
        .collect();
    if checked.is_empty() {
        return;
    }
    for (row, line) in lines.enumerate() {
        for (col, cell) in line.split(',').enumerate() {
            if checked.contains(&col) && tokens.iter().any(|t| t == cell.trim()) {
                matches.push(AuditMatch {
                    file: file.to_string(),
                    location: format!("csv row {} column {col}", row + 2),
                });
            }
        }
    }
}

fn audit_text(text: &str, tokens: &[String], file: &str, matches: &mut Vec<AuditMatch>) {
    for (i, tok) in text.split_whitespace().enumerate() {
        let tok = tok.trim_matches(|c: char| !c.is_ascii_alphanumeric());
        if tokens.iter().any(|t| t == tok) {
            matches.push(AuditMatch {
                file: file.to_string(),
                location: format!("text token {i}"),
            });
        }
    }
}

/// Scans every artifact under `dir` for true-student-id tokens per the
/// module-level rules. `true_ids` are the ids that must not appear.
pub fn audit_true_id_tokens(dir: &Path, true_ids: &[u32]) -> Result<PrivacyAudit> {
    let tokens: Vec<String> = true_ids.iter().map(u32::to_string).collect();
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();

    let mut audit = PrivacyAudit {
        files_scanned: Vec::new(),
        files_skipped: Vec::new(),
        matches: Vec::new(),
    };
    for path in files {
        let rel = path
            .strip_prefix(dir)
            .unwrap_or(&path)
            .to_string_lossy()
            .into_owned();
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        // The vault store is the protected secret, not an emitted report.
        if name == "vault.json" || name.ends_with(".key") {
            audit.files_skipped.push(rel);
            continue;
        }
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "json" => {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| Error::Data(format!("invalid JSON {}: {e}", path.display())))?;
                audit_json_value(&value, "", &tokens, &rel, &mut audit.matches);
                audit.files_scanned.push(rel);
            }
            "csv" => {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                audit_csv_text(&text, &tokens, &rel, &mut audit.matches);
                audit.files_scanned.push(rel);
            }
            "txt" | "md" => {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                audit_text(&text, &tokens, &rel, &mut audit.matches);
                audit.files_scanned.push(rel);
            }
            _ => audit.files_skipped.push(rel),
        }
    }
    Ok(audit)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
