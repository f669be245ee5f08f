//! C-subset lexer, vocabulary and the padded token grids fed to the network.
//!
//! Every line becomes one grid row that starts with a `<line i>` token
//! (1-based) followed by the line's code tokens, zero-padded on the right to
//! `J` columns. Files are zero-padded at the bottom to `N` rows. Id 0 is
//! padding; real tokens use ids `1..V`.
//!
//! # Tensor file layout
//!
//! All integers little-endian.
//!
//! | field            | type                     |
//! |------------------|--------------------------|
//! | magic            | 6 bytes `SBABI1`         |
//! | N_F, N, J, V     | 4 × u32                  |
//! | grid cells       | N_F·N·J × u16 (row-major)|
//! | query count Q    | u32                      |
//! | queries          | Q × (u32 file, u16 row, u8 label) |
//! | file name count  | u32 (equals N_F)         |
//! | file names       | N_F × (u16 byte length, UTF-8 bytes) |
//!
//! `row` is 0-based (source line = row + 1); `label` is the [`QueryClass`] index.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codegen::{DatasetManifest, ManifestEntry};
use crate::oracle::LineLabel;

pub const TENSOR_MAGIC: &[u8; 6] = b"SBABI1";

#[derive(Debug, thiserror::Error)]
pub enum TokenizeError {
    #[error("unexpected character {ch:?} at column {column}")]
    Lex { column: usize, ch: char },
    #[error("unterminated character literal at column {column}")]
    CharLiteral { column: usize },
    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),
    #[error("file has {lines} lines but the grid holds {n}")]
    TooManyLines { lines: usize, n: usize },
    #[error("line {line} has {tokens} tokens (with line token) but the grid holds {j}")]
    LineTooLong { line: usize, tokens: usize, j: usize },
    #[error("{file}: labels and grid disagree: {reason}")]
    Misaligned { file: String, reason: String },
    #[error("vocabulary has {0} tokens, more than a u16 id can address")]
    VocabTooLarge(usize),
    #[error("tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

/// Splits one source line into tokens. Whitespace is discarded.
pub fn lex_line(text: &str) -> Result<Vec<String>, TokenizeError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == ' ' || c == '\t' || c == '\r' {
            i += 1;
        } else if is_ident_start(c) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if c == '\'' {
            if i + 2 < chars.len() && chars[i + 2] == '\'' && chars[i + 1].is_ascii_alphanumeric() {
                out.push(chars[i..i + 3].iter().collect());
                i += 3;
            } else {
                return Err(TokenizeError::CharLiteral { column: i + 1 });
            }
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if ["++", "<=", ">=", "==", "!="].contains(&two.as_str()) {
                out.push(two);
                i += 2;
            } else if "#<>(){}[];=.".contains(c) {
                out.push(c.to_string());
                i += 1;
            } else {
                return Err(TokenizeError::Lex { column: i + 1, ch: c });
            }
        }
    }
    Ok(out)
}

pub fn line_token(line: usize) -> String {
    format!("<line {line}>")
}

pub fn is_integer_literal(token: &str) -> bool {
    !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit())
}

/// Token ↔ id map; ids start at 1, 0 is padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u16>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab, TokenizeError> {
        if tokens.len() >= u16::MAX as usize {
            return Err(TokenizeError::VocabTooLarge(tokens.len()));
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), (i + 1) as u16)).collect();
        Ok(Vocab { tokens, ids })
    }

    /// `V`: number of ids including padding.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn id(&self, token: &str) -> Option<u16> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u16) -> Option<&str> {
        (id as usize).checked_sub(1).and_then(|i| self.tokens.get(i)).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Number of `<line i>` tokens, i.e. the largest line the vocab can encode.
    pub fn max_line(&self) -> usize {
        (1..).take_while(|&i| self.ids.contains_key(&line_token(i))).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.tokens).expect("string list serializes")
    }

    pub fn from_json(text: &str) -> Result<Vocab, TokenizeError> {
        Vocab::from_tokens(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, TokenizeError> {
        Vocab::from_json(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized vocabulary, used to pair checkpoints with data.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Builds the vocabulary of `sources` plus `<line 1>`..`<line n_lines>`.
/// Line tokens come first in numeric order, code tokens follow sorted.
pub fn build_vocab<'a>(sources: impl IntoIterator<Item = &'a str>, n_lines: usize) -> Result<Vocab, TokenizeError> {
    let mut code = BTreeSet::new();
    for src in sources {
        for line in src.lines() {
            code.extend(lex_line(line)?);
        }
    }
    let mut tokens: Vec<String> = (1..=n_lines).map(line_token).collect();
    tokens.extend(code);
    Vocab::from_tokens(tokens)
}

/// `(N, J)` needed to hold every file: max line count and max tokens per line
/// counting the line token.
pub fn grid_dims<'a>(sources: impl IntoIterator<Item = &'a str>) -> Result<(usize, usize), TokenizeError> {
    let mut n = 0;
    let mut j = 1;
    for src in sources {
        n = n.max(src.lines().count());
        for line in src.lines() {
            j = j.max(lex_line(line)?.len() + 1);
        }
    }
    Ok((n, j))
}

/// One file as an `N × J` grid of token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    pub n: usize,
    pub j: usize,
    pub lines: usize,
    pub cells: Vec<u16>,
}

impl TokenGrid {
    pub fn row(&self, i: usize) -> &[u16] {
        &self.cells[i * self.j..(i + 1) * self.j]
    }
}

pub fn encode_file(source: &str, vocab: &Vocab, n: usize, j: usize) -> Result<TokenGrid, TokenizeError> {
    let lines: Vec<&str> = source.lines().collect();
    if lines.len() > n {
        return Err(TokenizeError::TooManyLines { lines: lines.len(), n });
    }
    let mut cells = vec![0u16; n * j];
    for (i, text) in lines.iter().enumerate() {
        let mut toks = vec![line_token(i + 1)];
        toks.extend(lex_line(text)?);
        if toks.len() > j {
            return Err(TokenizeError::LineTooLong { line: i + 1, tokens: toks.len(), j });
        }
        for (k, t) in toks.iter().enumerate() {
            cells[i * j + k] = vocab.id(t).ok_or_else(|| TokenizeError::UnknownToken(t.clone()))?;
        }
    }
    Ok(TokenGrid { n, j, lines: lines.len(), cells })
}

/// Code tokens per line with line tokens and padding stripped.
pub fn decode(grid: &TokenGrid, vocab: &Vocab) -> Vec<Vec<String>> {
    (0..grid.lines)
        .map(|i| {
            grid.row(i)
                .iter()
                .skip(1)
                .take_while(|&&id| id != 0)
                .map(|&id| vocab.token(id).unwrap_or("<unk>").to_string())
                .collect()
        })
        .collect()
}

/// The four buffer-write classes the network predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QueryClass {
    CondSafe = 0,
    CondUnsafe = 1,
    TautSafe = 2,
    TautUnsafe = 3,
}

impl QueryClass {
    pub const ALL: [QueryClass; 4] = [QueryClass::CondSafe, QueryClass::CondUnsafe, QueryClass::TautSafe, QueryClass::TautUnsafe];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<QueryClass> {
        QueryClass::ALL.get(i).copied()
    }

    pub fn from_label(l: LineLabel) -> Option<QueryClass> {
        match l {
            LineLabel::BufwriteCondSafe => Some(QueryClass::CondSafe),
            LineLabel::BufwriteCondUnsafe => Some(QueryClass::CondUnsafe),
            LineLabel::BufwriteTautSafe => Some(QueryClass::TautSafe),
            LineLabel::BufwriteTautUnsafe => Some(QueryClass::TautUnsafe),
            _ => None,
        }
    }

    pub fn is_unsafe(self) -> bool {
        matches!(self, QueryClass::CondUnsafe | QueryClass::TautUnsafe)
    }

    pub fn is_cond(self) -> bool {
        matches!(self, QueryClass::CondSafe | QueryClass::CondUnsafe)
    }

    pub fn short(self) -> &'static str {
        match self {
            QueryClass::CondSafe => "C_S",
            QueryClass::CondUnsafe => "C_U",
            QueryClass::TautSafe => "T_S",
            QueryClass::TautUnsafe => "T_U",
        }
    }
}

impl fmt::Display for QueryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(LineLabel::from(*self).as_str())
    }
}

impl From<QueryClass> for LineLabel {
    fn from(c: QueryClass) -> LineLabel {
        match c {
            QueryClass::CondSafe => LineLabel::BufwriteCondSafe,
            QueryClass::CondUnsafe => LineLabel::BufwriteCondUnsafe,
            QueryClass::TautSafe => LineLabel::BufwriteTautSafe,
            QueryClass::TautUnsafe => LineLabel::BufwriteTautUnsafe,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySample {
    pub file: u32,
    /// 0-based grid row of the buffer-write line.
    pub row: u16,
    pub label: QueryClass,
}

impl QuerySample {
    pub fn line(&self) -> u32 {
        self.row as u32 + 1
    }
}

/// One query per buffer-write line of `entry`.
pub fn extract_queries(grid: &TokenGrid, entry: &ManifestEntry, file: u32) -> Result<Vec<QuerySample>, TokenizeError> {
    let mis = |reason: String| TokenizeError::Misaligned { file: entry.file_name.clone(), reason };
    if entry.labels.len() != grid.lines {
        return Err(mis(format!("{} labels for {} grid rows", entry.labels.len(), grid.lines)));
    }
    let mut out = Vec::new();
    for (row, &label) in entry.labels.iter().enumerate() {
        let Some(class) = QueryClass::from_label(label) else { continue };
        if !entry.writes.iter().any(|w| w.line as usize == row + 1 && w.label() == label) {
            return Err(mis(format!("line {} labeled {label} has no write record", row + 1)));
        }
        if grid.row(row)[0] == 0 {
            return Err(mis(format!("line {} is padding", row + 1)));
        }
        out.push(QuerySample { file, row: row as u16, label: class });
    }
    if out.len() != entry.writes.len() {
        return Err(mis(format!("{} write records but {} labeled write lines", entry.writes.len(), out.len())));
    }
    Ok(out)
}

/// A whole dataset in grid form: what the tensor file stores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSet {
    pub n: usize,
    pub j: usize,
    pub v: usize,
    /// `file_count · n · j` ids.
    pub cells: Vec<u16>,
    pub queries: Vec<QuerySample>,
    pub file_names: Vec<String>,
}

impl TensorSet {
    pub fn file_count(&self) -> usize {
        self.file_names.len()
    }

    pub fn grid(&self, file: usize) -> &[u16] {
        let size = self.n * self.j;
        &self.cells[file * size..(file + 1) * size]
    }

    /// Non-pad rows of `file`.
    pub fn line_count(&self, file: usize) -> usize {
        let g = self.grid(file);
        (0..self.n).take_while(|&i| g[i * self.j] != 0).count()
    }

    /// Restriction to the first `count` files and their queries.
    pub fn take_files(&self, count: usize) -> TensorSet {
        let count = count.min(self.file_count());
        TensorSet {
            cells: self.cells[..count * self.n * self.j].to_vec(),
            queries: self.queries.iter().filter(|q| (q.file as usize) < count).copied().collect(),
            file_names: self.file_names[..count].to_vec(),
            ..*self
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), TokenizeError> {
        w.write_all(TENSOR_MAGIC)?;
        for x in [self.file_count(), self.n, self.j, self.v] {
            w.write_all(&(x as u32).to_le_bytes())?;
        }
        for c in &self.cells {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&(self.queries.len() as u32).to_le_bytes())?;
        for q in &self.queries {
            w.write_all(&q.file.to_le_bytes())?;
            w.write_all(&q.row.to_le_bytes())?;
            w.write_all(&[q.label as u8])?;
        }
        w.write_all(&(self.file_names.len() as u32).to_le_bytes())?;
        for name in &self.file_names {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<TensorSet, TokenizeError> {
        fn u32_(r: &mut impl Read) -> io::Result<u32> {
            let mut b = [0; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        fn u16_(r: &mut impl Read) -> io::Result<u16> {
            let mut b = [0; 2];
            r.read_exact(&mut b)?;
            Ok(u16::from_le_bytes(b))
        }
        let mut magic = [0; 6];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(TokenizeError::Format("bad magic".into()));
        }
        let nf = u32_(r)? as usize;
        let n = u32_(r)? as usize;
        let j = u32_(r)? as usize;
        let v = u32_(r)? as usize;
        let mut raw = vec![0u8; nf * n * j * 2];
        r.read_exact(&mut raw)?;
        let cells: Vec<u16> = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        if let Some(bad) = cells.iter().find(|&&c| c as usize >= v) {
            return Err(TokenizeError::Format(format!("token id {bad} out of range for V = {v}")));
        }
        let q = u32_(r)? as usize;
        let mut queries = Vec::with_capacity(q);
        for _ in 0..q {
            let file = u32_(r)?;
            let row = u16_(r)?;
            let mut l = [0u8];
            r.read_exact(&mut l)?;
            let label = QueryClass::from_index(l[0] as usize).ok_or_else(|| TokenizeError::Format(format!("label {}", l[0])))?;
            if file as usize >= nf || row as usize >= n {
                return Err(TokenizeError::Format(format!("query ({file}, {row}) outside the grid")));
            }
            queries.push(QuerySample { file, row, label });
        }
        let names = u32_(r)? as usize;
        if names != nf {
            return Err(TokenizeError::Format(format!("{names} file names for {nf} files")));
        }
        let mut file_names = Vec::with_capacity(names);
        for _ in 0..names {
            let len = u16_(r)? as usize;
            let mut b = vec![0; len];
            r.read_exact(&mut b)?;
            file_names.push(String::from_utf8(b).map_err(|e| TokenizeError::Format(e.to_string()))?);
        }
        Ok(TensorSet { n, j, v, cells, queries, file_names })
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        let mut w = io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TensorSet, TokenizeError> {
        TensorSet::read_from(&mut io::BufReader::new(fs::File::open(path)?))
    }
}

/// Encodes every manifest entry with a fixed vocabulary and grid shape.
pub fn tokenize_corpus(
    manifest: &DatasetManifest,
    sources: &[String],
    vocab: &Vocab,
    n: usize,
    j: usize,
) -> Result<TensorSet, TokenizeError> {
    let mut cells = Vec::with_capacity(manifest.entries.len() * n * j);
    let mut queries = Vec::new();
    for (i, (entry, src)) in manifest.entries.iter().zip(sources).enumerate() {
        let grid = encode_file(src, vocab, n, j)?;
        queries.extend(extract_queries(&grid, entry, i as u32)?);
        cells.extend_from_slice(&grid.cells);
    }
    Ok(TensorSet {
        n,
        j,
        v: vocab.size(),
        cells,
        queries,
        file_names: manifest.entries.iter().map(|e| e.file_name.clone()).collect(),
    })
}

/// Replaces every integer-literal token with the token `0`. Shape, labels and
/// all other cells are unchanged.
pub fn remap_integers(data: &TensorSet, vocab: &Vocab) -> Result<TensorSet, TokenizeError> {
    let zero = vocab.id("0").ok_or_else(|| TokenizeError::UnknownToken("0".into()))?;
    let mut is_int = vec![false; vocab.size()];
    for (i, t) in vocab.tokens().iter().enumerate() {
        is_int[i + 1] = is_integer_literal(t);
    }
    let mut out = data.clone();
    for c in &mut out.cells {
        if is_int.get(*c as usize).copied().unwrap_or(false) {
            *c = zero;
        }
    }
    Ok(out)
}
