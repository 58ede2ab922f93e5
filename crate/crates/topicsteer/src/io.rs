//! Corpus loading, JSON-lines/CSV helpers, vocabulary files and hashing.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use topicsteer_core::corpus::{Document, VocabOptions, Vocabulary};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    if source.kind() == std::io::ErrorKind::NotFound {
        IoError::NotFound(path.to_path_buf())
    } else {
        IoError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One document per line.
    Plain,
    /// One JSON object per line with `text` and optional `id`/`label`.
    #[default]
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plain" => Ok(Self::Plain),
            "jsonl" => Ok(Self::Jsonl),
            _ => Err(format!("unknown corpus format {s:?} (expected plain or jsonl)")),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Documents in file order. Plain ids are line indices; JSON-lines ids default
/// to the record index. Blank JSON lines are skipped.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Document>, IoError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let doc = match format {
            CorpusFormat::Plain => Document::new(i.to_string(), line, None),
            CorpusFormat::Jsonl => {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| IoError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                Document::new(rec.id.unwrap_or_else(|| docs.len().to_string()), rec.text, rec.label)
            }
        };
        if !seen.insert(doc.id.clone()) {
            return Err(IoError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duplicate document id {:?}", doc.id),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<(), IoError> {
    let recs: Vec<CorpusRecord> = docs
        .iter()
        .map(|d| CorpusRecord { id: Some(d.id.clone()), text: d.text.clone(), label: d.gold_label })
        .collect();
    write_jsonl(path, &recs)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it).map_err(|e| IoError::Invalid { path: path.into(), message: e.to_string() })?;
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IoError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| IoError::Invalid { path: path.into(), message: e.to_string() })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Writes a CSV with a header row. Cells are already formatted.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| IoError::Invalid { path: path.into(), message: e.to_string() };
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Invalid { path: path.into(), message: e.to_string() })?;
    write_bytes(path, &bytes)
}

/// Header and rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), IoError> {
    let bytes = read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r
        .headers()
        .map_err(|e| IoError::Invalid { path: path.into(), message: e.to_string() })?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| IoError::Malformed { path: path.into(), line: i + 2, message: e.to_string() })?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabFile {
    options: VocabOptions,
    /// `(token, document frequency)` in id order.
    sequence: Vec<(String, usize)>,
    content: Vec<(String, usize)>,
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), IoError> {
    let own = |(t, c): (&str, usize)| (t.to_string(), c);
    let file = VocabFile {
        options: vocab.options().clone(),
        sequence: vocab.seq_entries().map(own).collect(),
        content: vocab.content_entries().map(own).collect(),
    };
    write_json(path, &file)
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary, IoError> {
    let f: VocabFile = read_json(path)?;
    Vocabulary::from_lists(f.sequence, f.content, f.options)
        .map_err(|e| IoError::Invalid { path: path.into(), message: e.to_string() })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    Ok(sha256_hex(&read_bytes(path)?))
}

/// Buffered writer for text reports.
pub fn text_writer(path: &Path) -> Result<BufWriter<fs::File>, IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| io_err(path, e))?))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let mut w = text_writer(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}
