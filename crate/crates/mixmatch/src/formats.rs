//! On-disk formats: corpora, vocabulary, lexicons, embeddings, saved models,
//! traces, reports and sample files.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use mixmatch_core::experts::EmbeddingTable;
use mixmatch_core::metrics::EvalReport;
use mixmatch_core::oracle::ExactDistribution;
use mixmatch_core::sampler::TraceRecord;
use mixmatch_core::text::{TokenId, Vocabulary};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MODEL_FILE_VERSION: u32 = 1;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Non-blank lines of a plain-text corpus, trailing whitespace removed.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(str::trim_end).filter(|l| !l.trim().is_empty()).map(String::from).collect())
}

/// `label<TAB>text` lines, where the label is a class id.
pub fn read_labeled(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.into(), line: n + 1, message };
        let (label, body) = line.split_once('\t').ok_or_else(|| parse_err("expected `label<TAB>text`".into()))?;
        let label = label.trim().parse::<usize>().map_err(|e| parse_err(format!("bad class id {label:?}: {e}")))?;
        out.push((label, body.trim_end().to_string()));
    }
    Ok(out)
}

fn vocab_bytes(vocab: &Vocabulary) -> String {
    let mut s = String::new();
    for t in vocab.tokens() {
        s.push_str(t);
        s.push('\n');
    }
    s
}

/// One token per line; the line number is the id.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_text(path, &vocab_bytes(vocab))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let tokens = read_text(path)?.lines().map(String::from).collect();
    Vocabulary::from_tokens(tokens).map_err(|e| Error::Parse { path: path.into(), line: 1, message: e.to_string() })
}

/// Hex SHA-256 of the vocabulary file contents.
pub fn vocab_hash(vocab: &Vocabulary) -> String {
    let digest = Sha256::digest(vocab_bytes(vocab).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile<T> {
    version: u32,
    kind: String,
    vocab_sha256: String,
    model: T,
}

pub fn save_model<T: Serialize>(path: &Path, kind: &str, vocab: &Vocabulary, model: &T) -> Result<()> {
    let file = ModelFile { version: MODEL_FILE_VERSION, kind: kind.into(), vocab_sha256: vocab_hash(vocab), model };
    let json = serde_json::to_string(&file).map_err(|source| Error::Json { path: path.into(), source })?;
    write_text(path, &json)
}

/// Loads a saved model, checking the version, the kind tag and that it was
/// built against `vocab`.
pub fn load_model<T: DeserializeOwned>(path: &Path, kind: &str, vocab: &Vocabulary) -> Result<T> {
    let text = read_text(path)?;
    let file: ModelFile<serde_json::Value> =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })?;
    if file.version != MODEL_FILE_VERSION {
        return Err(Error::ModelVersion { path: path.into(), found: file.version });
    }
    if file.kind != kind {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("expected a `{kind}` model, found `{}`", file.kind),
        });
    }
    let expected = vocab_hash(vocab);
    if file.vocab_sha256 != expected {
        return Err(Error::VocabularyHash { path: path.into(), expected, found: file.vocab_sha256 });
    }
    serde_json::from_value(file.model).map_err(|source| Error::Json { path: path.into(), source })
}

/// One token per line. Tokens missing from `vocab` are dropped with a warning.
pub fn read_lexicon(path: &Path, vocab: &Vocabulary) -> Result<BTreeSet<TokenId>> {
    let mut out = BTreeSet::new();
    let mut missing = 0;
    for tok in read_text(path)?.lines().map(str::trim).filter(|t| !t.is_empty()) {
        match vocab.id(tok) {
            Some(id) => {
                out.insert(id);
            }
            None => missing += 1,
        }
    }
    if missing > 0 {
        log::warn!("{}: {missing} lexicon entries are not in the vocabulary", path.display());
    }
    Ok(out)
}

/// `token v1 ... vd` per line with a consistent `d`. Out-of-vocabulary
/// tokens are skipped.
pub fn read_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let text = read_text(path)?;
    let mut table: Option<EmbeddingTable> = None;
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(tok) = parts.next() else { continue };
        let parse_err = |message: String| Error::Parse { path: path.into(), line: n + 1, message };
        let values = parts
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(format!("bad component {v:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(parse_err("no vector components".into()));
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len(), vocab.len()));
        if values.len() != t.dim() {
            return Err(parse_err(format!("expected {} components, found {}", t.dim(), values.len())));
        }
        if let Some(id) = vocab.id(tok) {
            t.insert(id, values).map_err(|e| parse_err(e.to_string()))?;
        }
    }
    table.ok_or_else(|| Error::Parse { path: path.into(), line: 0, message: "no embeddings".into() })
}

pub const TRACE_HEADER: &str = "step,position,old_id,new_id,delta_e,accept_prob,accepted,total_e";

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in trace {
            w.serialize(r).map_err(csv_err)?;
        }
        if trace.is_empty() {
            w.write_record(TRACE_HEADER.split(',')).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_text(path, std::str::from_utf8(&buf).expect("csv output is utf-8"))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|source| Error::Csv { path: path.into(), source })?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|source| Error::Csv { path: path.into(), source })
}

/// Same fields as the CSV, one JSON object per line.
pub fn write_trace_jsonl(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r).map_err(|source| Error::Json { path: path.into(), source })?);
        out.push('\n');
    }
    write_text(path, &out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExactDistributionFile {
    pub z: f64,
    pub log_z: f64,
    pub vocab_size: usize,
    pub length: usize,
    pub energy: Vec<f64>,
    pub prob: Vec<f64>,
}

pub fn write_exact_distribution(path: &Path, d: &ExactDistribution) -> Result<()> {
    let file = ExactDistributionFile {
        z: d.z,
        log_z: d.log_z,
        vocab_size: d.vocab_size,
        length: d.length,
        energy: d.energy.clone(),
        prob: d.prob.clone(),
    };
    write_json(path, &file)
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    write_json(path, report)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.into(), source })?;
    json.push('\n');
    write_text(path, &json)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| Error::Json { path: path.into(), source })
}

/// One sample per line.
pub fn write_samples(path: &Path, samples: &[String]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for s in samples {
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
