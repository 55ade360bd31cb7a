//! Append-only chain log: `chain.log` in the data directory, one canonical
//! block per `\n`-terminated line, line `i` holding height `i`.
//!
//! A block is durable once its line is written and `fsync`ed; it is applied
//! to memory only after that. A torn final line (no trailing newline) is the
//! signature of a crash mid-append and is truncated on open. Anything else
//! that fails to parse or validate is corruption and refuses the open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use halaltrace_core::ledger::{validate_blocks, Block, Chain, ProposerKeys, ValidationResult};

pub const LOG_FILE: &str = "chain.log";

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("chain log I/O on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    /// `line` is 1-based; `content` is the offending line, shortened.
    #[error("corrupt chain log at line {line}: {reason}\n  {content}")]
    CorruptLog { line: usize, reason: String, content: String },
}

#[derive(Debug)]
pub struct ChainLog {
    path: PathBuf,
    file: File,
    len: u64,
}

/// What `ChainLog::open` found on disk.
#[derive(Debug)]
pub struct Recovered {
    pub chain: Chain,
    /// Bytes dropped from a torn final line (0 on a clean open).
    pub truncated_bytes: u64,
}

fn shorten(line: &str) -> String {
    const MAX: usize = 120;
    match line.char_indices().nth(MAX) {
        Some((cut, _)) => format!("{}...", &line[..cut]),
        None => line.to_string(),
    }
}

/// Splits raw log bytes into complete lines plus the length of a torn tail.
fn split_complete(bytes: &[u8]) -> (&[u8], u64) {
    match bytes.iter().rposition(|b| *b == b'\n') {
        Some(last) => (&bytes[..last], (bytes.len() - last - 1) as u64),
        None => (&[], bytes.len() as u64),
    }
}

/// Parses and validates complete log bytes (without the final newline).
pub fn parse_log<K: ProposerKeys + Sync + ?Sized>(complete: &[u8], keys: &K) -> Result<Vec<Block>, LogError> {
    let mut blocks = Vec::new();
    if complete.is_empty() {
        return Ok(blocks);
    }
    for (i, raw) in complete.split(|b| *b == b'\n').enumerate() {
        let corrupt = |reason: String, content: String| LogError::CorruptLog { line: i + 1, reason, content };
        let line = std::str::from_utf8(raw)
            .map_err(|e| corrupt(format!("not UTF-8: {e}"), shorten(&String::from_utf8_lossy(raw))))?;
        let block = Block::from_canonical_line(line).map_err(|e| corrupt(e.to_string(), shorten(line)))?;
        if block.height != i as u64 {
            return Err(corrupt(format!("height {} out of order, expected {i}", block.height), shorten(line)));
        }
        blocks.push(block);
    }
    if let ValidationResult::Invalid { height, reason } = validate_blocks(&blocks, keys) {
        let line = blocks[height as usize].to_canonical_line();
        return Err(LogError::CorruptLog { line: height as usize + 1, reason: reason.to_string(), content: shorten(&line) });
    }
    Ok(blocks)
}

impl ChainLog {
    /// Opens or creates `data_dir/chain.log` and rebuilds the chain from it.
    pub fn open<K: ProposerKeys + Sync + ?Sized>(data_dir: &Path, keys: &K) -> Result<(ChainLog, Recovered), LogError> {
        let path = data_dir.join(LOG_FILE);
        let io_err = |source| LogError::Io { path: path.clone(), source };
        fs::create_dir_all(data_dir).map_err(io_err)?;
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path).map_err(io_err)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err)?;

        let (complete, torn) = split_complete(&bytes);
        let blocks = parse_log(complete, keys)?;
        let keep = bytes.len() as u64 - torn;
        if torn > 0 {
            tracing::warn!(path = %path.display(), bytes = torn, "truncating torn final line of chain log");
            file.set_len(keep).map_err(io_err)?;
            file.sync_data().map_err(io_err)?;
        }
        let mut log = ChainLog { path, file, len: keep };
        let chain = if blocks.is_empty() {
            let chain = Chain::new();
            log.append(chain.latest_block())?;
            chain
        } else {
            Chain::from_blocks(blocks, keys).map_err(|(height, reason)| LogError::CorruptLog {
                line: height as usize + 1,
                reason: reason.to_string(),
                content: String::new(),
            })?
        };
        Ok((log, Recovered { chain, truncated_bytes: torn }))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Bytes of complete lines written so far.
    pub fn byte_len(&self) -> u64 {
        self.len
    }

    /// Writes one block line and syncs it. On failure the file is cut back to
    /// its previous length so no partial line remains.
    pub fn append(&mut self, block: &Block) -> Result<(), LogError> {
        let mut line = block.to_canonical_line();
        line.push('\n');
        let result = (|| {
            self.file.seek(SeekFrom::Start(self.len))?;
            self.file.write_all(line.as_bytes())?;
            self.file.flush()?;
            self.file.sync_data()
        })();
        match result {
            Ok(()) => {
                self.len += line.len() as u64;
                Ok(())
            }
            Err(source) => {
                let _ = self.file.set_len(self.len);
                Err(LogError::Io { path: self.path.clone(), source })
            }
        }
    }

    /// Re-reads the complete lines currently on disk.
    pub fn read_lines(&self) -> Result<Vec<String>, LogError> {
        let bytes = fs::read(&self.path).map_err(|source| LogError::Io { path: self.path.clone(), source })?;
        let (complete, _) = split_complete(&bytes);
        if complete.is_empty() {
            return Ok(Vec::new());
        }
        complete
            .split(|b| *b == b'\n')
            .enumerate()
            .map(|(i, raw)| {
                String::from_utf8(raw.to_vec()).map_err(|_| LogError::CorruptLog {
                    line: i + 1,
                    reason: "not UTF-8".into(),
                    content: shorten(&String::from_utf8_lossy(raw)),
                })
            })
            .collect()
    }
}
