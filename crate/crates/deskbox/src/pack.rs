use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use deskbox_core::dataset::{ByteTokenizer, Tokenizer};
use deskbox_core::packing::{
    oversize, pack_instructions, pack_pretrain, sample_mixture, Exhaustion, MixtureSpec,
    PackedBlock, Segment,
};
use deskbox_core::{TokenId, TokenSequence};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOKENS_MAGIC: &[u8; 8] = b"DBXTOK01";
pub const INDEX_MAGIC: &[u8; 8] = b"DBXIDX01";
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackKind {
    /// Documents joined by a separator and cut into fixed blocks.
    Pretrain,
    /// Whole conversations placed into blocks by first-fit-decreasing.
    Instructions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub path: PathBuf,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackConfig {
    /// Single corpus file. Mutually exclusive with `sources`.
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// Weighted corpora sampled into one stream before packing.
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub total_samples: Option<usize>,
    #[serde(default)]
    pub exhaustion: Exhaustion,
    pub kind: PackKind,
    pub max_len: usize,
    /// Document separator token. Required for pretrain packing.
    #[serde(default)]
    pub separator: Option<TokenId>,
    #[serde(default)]
    pub drop_last: bool,
    #[serde(default)]
    pub skip_oversize: bool,
    pub output: PathBuf,
    #[serde(default)]
    pub binary: bool,
    #[serde(default)]
    pub seed: u64,
}

/// One corpus record, in the order it was packed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub source: String,
    /// 1-based line in the source file.
    pub line: usize,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackSummary {
    pub schema_version: u32,
    pub kind: PackKind,
    pub max_len: usize,
    pub items: usize,
    pub blocks: usize,
    pub tokens: u64,
    pub pad_tokens: u64,
    /// Padding over total block capacity; 0 when there are no blocks.
    pub pad_fraction: f64,
    pub dropped_tokens: u64,
    /// Item indices skipped for not fitting a block.
    pub skipped: Vec<SkippedItem>,
    /// SHA-256 of the item tokens, in item order, as read from the corpus.
    pub input_sha256: String,
    /// SHA-256 of the same stream rebuilt from the block segments.
    pub output_sha256: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub source: String,
    pub line: usize,
    pub tokens: usize,
}

/// Reads a JSONL corpus. Each line is an object with `tokens` (array of
/// token ids) or `text` (byte-tokenized).
pub fn read_corpus(path: &Path, name: &str) -> Result<Vec<CorpusItem>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| {
            Error::Invalid(deskbox_core::Error::Schema {
                line: line_no,
                message,
            })
        };
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| bad(format!("{}: invalid JSON: {e}", path.display())))?;
        let tokens = match (v.get("tokens"), v.get("text")) {
            (Some(Value::Array(ts)), None) => ts
                .iter()
                .map(|t| t.as_u64().and_then(|t| TokenId::try_from(t).ok()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| {
                    bad(format!(
                        "{}: \"tokens\" must be non-negative 32-bit integers",
                        path.display()
                    ))
                })?,
            (None, Some(Value::String(s))) => ByteTokenizer.encode(s),
            _ => {
                return Err(bad(format!(
                    "{}: record needs exactly one of \"tokens\" (array) or \"text\" (string)",
                    path.display()
                )))
            }
        };
        items.push(CorpusItem {
            source: name.into(),
            line: line_no,
            tokens,
        });
    }
    Ok(items)
}

fn hash_items<'a>(items: impl Iterator<Item = &'a [TokenId]>) -> String {
    let mut h = Sha256::new();
    for item in items {
        h.update((item.len() as u64).to_le_bytes());
        for t in item {
            h.update(t.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Rebuilds each item's tokens from the block segments. Pretrain items get
/// their trailing separator removed again.
fn rebuild(
    blocks: &[PackedBlock],
    n_items: usize,
    separator: Option<TokenId>,
) -> Vec<TokenSequence> {
    let mut out = vec![Vec::new(); n_items];
    for b in blocks {
        for s in &b.segments {
            out[s.source].extend_from_slice(&b.tokens[s.start..s.end]);
        }
    }
    if let Some(sep) = separator {
        let last = n_items.saturating_sub(1);
        for item in out.iter_mut().take(last) {
            if item.last() == Some(&sep) {
                item.pop();
            }
        }
    }
    out
}

fn gather(config: &PackConfig) -> Result<Vec<CorpusItem>> {
    match (&config.input, config.sources.is_empty()) {
        (Some(path), true) => read_corpus(path, "input"),
        (None, false) => {
            let total = config
                .total_samples
                .ok_or_else(|| Error::Usage("sources require total_samples".into()))?;
            let mut corpora = BTreeMap::new();
            for s in &config.sources {
                if corpora
                    .insert(s.name.clone(), read_corpus(&s.path, &s.name)?)
                    .is_some()
                {
                    return Err(Error::Usage(format!("source {:?} is listed twice", s.name)));
                }
            }
            let entries: Vec<(&str, f64)> = config
                .sources
                .iter()
                .map(|s| (s.name.as_str(), s.weight))
                .collect();
            let spec = MixtureSpec::new(&entries, total, config.seed);
            Ok(sample_mixture(&spec, &corpora, config.exhaustion)?
                .into_iter()
                .map(|s| s.item)
                .collect())
        }
        (Some(_), false) => Err(Error::Usage(
            "give either input or sources, not both".into(),
        )),
        (None, true) => Err(Error::Usage("no input corpus given".into())),
    }
}

/// Packs a corpus and writes `blocks.jsonl`, `items.jsonl`, `summary.json`
/// and, when requested, `tokens.bin` with `segments.idx` into the output
/// directory. Files are written only after packing succeeded.
pub fn run_pack(config: &PackConfig) -> Result<PackSummary> {
    if config.max_len == 0 {
        return Err(Error::Usage("max_len must be at least 1".into()));
    }
    if config.kind == PackKind::Pretrain && config.separator.is_none() {
        return Err(Error::Usage(
            "pretrain packing needs an explicit separator token".into(),
        ));
    }
    let mut items = gather(config)?;
    let mut warnings = Vec::new();
    let mut skipped = Vec::new();
    if config.kind == PackKind::Instructions {
        let token_lists: Vec<&[TokenId]> = items.iter().map(|i| i.tokens.as_slice()).collect();
        let over = oversize(&token_lists, config.max_len);
        if !over.is_empty() {
            let listed: Vec<String> = over
                .iter()
                .map(|&i| {
                    format!(
                        "{} line {} ({} tokens)",
                        items[i].source,
                        items[i].line,
                        items[i].tokens.len()
                    )
                })
                .collect();
            if !config.skip_oversize {
                return Err(Error::Invalid(deskbox_core::Error::Rejected(format!(
                    "{} conversation(s) exceed max_len {}: {}",
                    over.len(),
                    config.max_len,
                    listed.join(", ")
                ))));
            }
            warnings.push(format!(
                "skipped {} oversize conversation(s): {}",
                over.len(),
                listed.join(", ")
            ));
            for &i in over.iter().rev() {
                let it = items.remove(i);
                skipped.push(SkippedItem {
                    source: it.source,
                    line: it.line,
                    tokens: it.tokens.len(),
                });
            }
            skipped.reverse();
        }
    }
    if items.is_empty() {
        warnings.push("corpus is empty; no blocks were produced".into());
    }

    let token_lists: Vec<&[TokenId]> = items.iter().map(|i| i.tokens.as_slice()).collect();
    let blocks = match config.kind {
        PackKind::Pretrain => {
            let sep = config.separator.expect("checked above");
            pack_pretrain(&token_lists, config.max_len, sep, config.drop_last)?
        }
        PackKind::Instructions => pack_instructions(&token_lists, config.max_len)?,
    };

    let tokens: u64 = blocks.iter().map(|b| b.tokens.len() as u64).sum();
    let pad_tokens: u64 = blocks.iter().map(|b| b.pad_count as u64).sum();
    let capacity = blocks.len() as u64 * config.max_len as u64;
    let separators = match config.kind {
        PackKind::Pretrain => items.len().saturating_sub(1) as u64,
        PackKind::Instructions => 0,
    };
    let input_total: u64 = items.iter().map(|i| i.tokens.len() as u64).sum::<u64>() + separators;
    let sep = match config.kind {
        PackKind::Pretrain => config.separator,
        PackKind::Instructions => None,
    };
    let rebuilt = rebuild(&blocks, items.len(), sep);
    let summary = PackSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        kind: config.kind,
        max_len: config.max_len,
        items: items.len(),
        blocks: blocks.len(),
        tokens,
        pad_tokens,
        pad_fraction: if capacity == 0 {
            0.0
        } else {
            pad_tokens as f64 / capacity as f64
        },
        dropped_tokens: input_total - tokens,
        skipped,
        input_sha256: hash_items(items.iter().map(|i| i.tokens.as_slice())),
        output_sha256: hash_items(rebuilt.iter().map(Vec::as_slice)),
        warnings,
    };
    if summary.dropped_tokens == 0 && summary.input_sha256 != summary.output_sha256 {
        return Err(Error::Runtime(
            "packed blocks do not reproduce the corpus".into(),
        ));
    }
    write_outputs(config, &items, &blocks, &summary)?;
    Ok(summary)
}

fn write_outputs(
    config: &PackConfig,
    items: &[CorpusItem],
    blocks: &[PackedBlock],
    summary: &PackSummary,
) -> Result<()> {
    let dir = &config.output;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_err = |e: serde_json::Error| Error::Runtime(e.to_string());

    let path = dir.join("blocks.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for b in blocks {
        serde_json::to_writer(&mut w, b).map_err(json_err)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("items.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for (i, it) in items.iter().enumerate() {
        let row = serde_json::json!({ "item": i, "source": it.source, "line": it.line, "tokens": it.tokens.len() });
        serde_json::to_writer(&mut w, &row).map_err(json_err)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    if config.binary {
        write_binary(dir, config.max_len, blocks)?;
    }

    let path = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(summary).map_err(json_err)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Writes `tokens.bin` and `segments.idx`; the layout is described in
/// `docs/pack-format.md`.
pub fn write_binary(dir: &Path, max_len: usize, blocks: &[PackedBlock]) -> Result<()> {
    let tok_path = dir.join("tokens.bin");
    let idx_path = dir.join("segments.idx");
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p.clone(), e)
    };
    let mut tw = BufWriter::new(File::create(&tok_path).map_err(io(&tok_path))?);
    let mut iw = BufWriter::new(File::create(&idx_path).map_err(io(&idx_path))?);
    tw.write_all(TOKENS_MAGIC).map_err(io(&tok_path))?;
    iw.write_all(INDEX_MAGIC).map_err(io(&idx_path))?;
    iw.write_u32::<LittleEndian>(max_len as u32)
        .map_err(io(&idx_path))?;
    iw.write_u64::<LittleEndian>(blocks.len() as u64)
        .map_err(io(&idx_path))?;
    let mut offset = 0u64;
    for b in blocks {
        for &t in &b.tokens {
            tw.write_u32::<LittleEndian>(t).map_err(io(&tok_path))?;
        }
        iw.write_u64::<LittleEndian>(offset)
            .map_err(io(&idx_path))?;
        iw.write_u32::<LittleEndian>(b.tokens.len() as u32)
            .map_err(io(&idx_path))?;
        iw.write_u32::<LittleEndian>(b.pad_count as u32)
            .map_err(io(&idx_path))?;
        iw.write_u32::<LittleEndian>(b.segments.len() as u32)
            .map_err(io(&idx_path))?;
        for s in &b.segments {
            iw.write_u32::<LittleEndian>(s.start as u32)
                .map_err(io(&idx_path))?;
            iw.write_u32::<LittleEndian>(s.end as u32)
                .map_err(io(&idx_path))?;
            iw.write_u64::<LittleEndian>(s.source as u64)
                .map_err(io(&idx_path))?;
        }
        offset += b.tokens.len() as u64;
    }
    tw.flush().map_err(io(&tok_path))?;
    iw.flush().map_err(io(&idx_path))
}

/// Reads blocks back from `tokens.bin` and `segments.idx`.
pub fn read_binary(dir: &Path) -> Result<Vec<PackedBlock>> {
    let tok_path = dir.join("tokens.bin");
    let idx_path = dir.join("segments.idx");
    let corrupt = |what: &str| Error::Runtime(format!("{what} is not a valid deskbox file"));
    let mut tokens_raw = Vec::new();
    File::open(&tok_path)
        .and_then(|mut f| f.read_to_end(&mut tokens_raw))
        .map_err(|e| Error::io(&tok_path, e))?;
    if tokens_raw.len() < 8 || &tokens_raw[..8] != TOKENS_MAGIC || (tokens_raw.len() - 8) % 4 != 0 {
        return Err(corrupt("tokens.bin"));
    }
    let mut stream = &tokens_raw[8..];
    let mut all = vec![0u32; stream.len() / 4];
    stream
        .read_u32_into::<LittleEndian>(&mut all)
        .map_err(|e| Error::io(&tok_path, e))?;

    let mut r = BufReader::new(File::open(&idx_path).map_err(|e| Error::io(&idx_path, e))?);
    let rd = |e| Error::io(&idx_path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(rd)?;
    if &magic != INDEX_MAGIC {
        return Err(corrupt("segments.idx"));
    }
    let _max_len = r.read_u32::<LittleEndian>().map_err(rd)?;
    let count = r.read_u64::<LittleEndian>().map_err(rd)?;
    let mut blocks = Vec::new();
    for _ in 0..count {
        let offset = r.read_u64::<LittleEndian>().map_err(rd)? as usize;
        let len = r.read_u32::<LittleEndian>().map_err(rd)? as usize;
        let pad_count = r.read_u32::<LittleEndian>().map_err(rd)? as usize;
        let n_seg = r.read_u32::<LittleEndian>().map_err(rd)?;
        let mut segments = Vec::new();
        for _ in 0..n_seg {
            let start = r.read_u32::<LittleEndian>().map_err(rd)? as usize;
            let end = r.read_u32::<LittleEndian>().map_err(rd)? as usize;
            let source = r.read_u64::<LittleEndian>().map_err(rd)? as usize;
            segments.push(Segment { start, end, source });
        }
        let tokens = all
            .get(offset..offset + len)
            .ok_or_else(|| corrupt("segments.idx"))?
            .to_vec();
        blocks.push(PackedBlock {
            tokens,
            segments,
            pad_count,
        });
    }
    Ok(blocks)
}

/// Reads `blocks.jsonl`.
pub fn read_blocks(path: &Path) -> Result<Vec<PackedBlock>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))
        })
        .collect()
}
