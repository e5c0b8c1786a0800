//! BPE vocabulary: token-string <-> token-id bijection, longest-prefix
//! canonical encoding, and exact decoding.
//!
//! Token strings are raw byte sequences internally. The GPT-2 `vocab.json`
//! printable-character remapping is undone at load time and reapplied at
//! write time, so everything past the loader is encoding-free.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

/// Token identifier. Ids may be sparse but are never duplicated.
pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("empty vocabulary")]
    Empty,
    #[error("duplicate token string {0:?}")]
    DuplicateToken(String),
    #[error("duplicate token id {0}")]
    DuplicateId(TokenId),
    #[error("empty token string at id {0}")]
    EmptyToken(TokenId),
    #[error("malformed vocab file: {0}")]
    Malformed(String),
    #[error("unknown token id {0}")]
    UnknownId(TokenId),
    #[error("no vocab token matches input at byte offset {offset}")]
    Unencodable { offset: usize },
    #[error("vocab ids are not dense 0..{len}; cannot write line format")]
    NotDense { len: usize },
}

/// On-disk vocabulary layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabFormat {
    /// JSON object mapping token-string -> id, GPT-2 `vocab.json` layout.
    /// Strings use the GPT-2 byte-to-printable remapping.
    Json,
    /// One token per line as lowercase hex of its bytes; id = line number.
    HexLines,
}

impl VocabFormat {
    /// Infer a format from a file extension: `.json` -> Json, anything
    /// else -> HexLines.
    pub fn from_path(path: &Path) -> VocabFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => VocabFormat::Json,
            _ => VocabFormat::HexLines,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct TrieNode {
    token: Option<TokenId>,
    // children sorted by byte for binary search
    children: Vec<(u8, u32)>,
}

/// Immutable vocabulary with a prefix-searchable index over token strings.
#[derive(Clone, Debug)]
pub struct Vocab {
    entries: HashMap<Vec<u8>, TokenId>,
    reverse: HashMap<TokenId, Vec<u8>>,
    trie: Vec<TrieNode>,
    byte_covering: bool,
    max_token_len: usize,
}

/// Longest-prefix tokenization of a byte sequence. Decoding the ids always
/// reproduces the source bytes exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CanonicalTokenization {
    pub ids: Vec<TokenId>,
    pub source_len: usize,
}

impl CanonicalTokenization {
    /// Sequence length K.
    pub fn k(&self) -> usize {
        self.ids.len()
    }
}

impl Vocab {
    /// Build from (token bytes, id) pairs, rejecting duplicates on either
    /// side and empty token strings.
    pub fn from_pairs<I>(pairs: I) -> Result<Vocab, VocabError>
    where
        I: IntoIterator<Item = (Vec<u8>, TokenId)>,
    {
        let mut entries = HashMap::new();
        let mut reverse = HashMap::new();
        for (bytes, id) in pairs {
            if bytes.is_empty() {
                return Err(VocabError::EmptyToken(id));
            }
            if reverse.contains_key(&id) {
                return Err(VocabError::DuplicateId(id));
            }
            if entries.contains_key(&bytes) {
                return Err(VocabError::DuplicateToken(printable(&bytes)));
            }
            reverse.insert(id, bytes.clone());
            entries.insert(bytes, id);
        }
        if entries.is_empty() {
            return Err(VocabError::Empty);
        }

        let mut trie = vec![TrieNode::default()];
        let mut max_token_len = 0;
        for (bytes, &id) in &entries {
            max_token_len = max_token_len.max(bytes.len());
            let mut node = 0usize;
            for &b in bytes {
                let next = match trie[node].children.binary_search_by_key(&b, |c| c.0) {
                    Ok(pos) => trie[node].children[pos].1 as usize,
                    Err(pos) => {
                        let new = trie.len() as u32;
                        trie.push(TrieNode::default());
                        trie[node].children.insert(pos, (b, new));
                        new as usize
                    }
                };
                node = next;
            }
            trie[node].token = Some(id);
        }

        let byte_covering = (0u16..=255).all(|b| entries.contains_key(&[b as u8][..]));
        Ok(Vocab { entries, reverse, trie, byte_covering, max_token_len })
    }

    /// Parse vocab file content in the given format.
    pub fn load(source: &str, format: VocabFormat) -> Result<Vocab, VocabError> {
        match format {
            VocabFormat::Json => Self::load_json(source),
            VocabFormat::HexLines => Self::load_hex_lines(source),
        }
    }

    fn load_json(source: &str) -> Result<Vocab, VocabError> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(source)
            .map_err(|e| VocabError::Malformed(e.to_string()))?;
        let mut pairs = Vec::with_capacity(map.len());
        for (key, val) in map {
            let id = val
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| VocabError::Malformed(format!("id of {key:?} is not a u32")))?;
            let bytes = gpt2_str_to_bytes(&key)
                .ok_or_else(|| VocabError::Malformed(format!("token {key:?} has characters outside the GPT-2 byte alphabet")))?;
            pairs.push((bytes, id));
        }
        Vocab::from_pairs(pairs)
    }

    fn load_hex_lines(source: &str) -> Result<Vocab, VocabError> {
        let mut pairs = Vec::new();
        for (lineno, line) in source.lines().enumerate() {
            let line = line.trim();
            if line.len() % 2 != 0 {
                return Err(VocabError::Malformed(format!("line {}: odd-length hex", lineno + 1)));
            }
            let mut bytes = Vec::with_capacity(line.len() / 2);
            for i in (0..line.len()).step_by(2) {
                let b = u8::from_str_radix(&line[i..i + 2], 16)
                    .map_err(|_| VocabError::Malformed(format!("line {}: invalid hex", lineno + 1)))?;
                bytes.push(b);
            }
            pairs.push((bytes, lineno as TokenId));
        }
        Vocab::from_pairs(pairs)
    }

    /// Serialize as a GPT-2-layout JSON object, entries ordered by id.
    pub fn to_json_string(&self) -> String {
        let mut ids: Vec<_> = self.reverse.iter().collect();
        ids.sort_by_key(|(id, _)| **id);
        let mut map = serde_json::Map::new();
        for (id, bytes) in ids {
            map.insert(bytes_to_gpt2_str(bytes), serde_json::Value::from(*id));
        }
        serde_json::Value::Object(map).to_string()
    }

    /// Serialize in the line format. Requires dense ids 0..len.
    pub fn to_hex_lines(&self) -> Result<String, VocabError> {
        let mut out = String::new();
        for id in 0..self.len() as TokenId {
            let bytes = self
                .reverse
                .get(&id)
                .ok_or(VocabError::NotDense { len: self.len() })?;
            for b in bytes {
                let _ = write!(out, "{b:02x}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when every byte value 0..=255 is a token, which guarantees
    /// encoding never fails.
    pub fn byte_covering(&self) -> bool {
        self.byte_covering
    }

    pub fn max_token_len(&self) -> usize {
        self.max_token_len
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        self.reverse.contains_key(&id)
    }

    pub fn token_bytes(&self, id: TokenId) -> Result<&[u8], VocabError> {
        self.reverse
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(VocabError::UnknownId(id))
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<TokenId> {
        self.entries.get(bytes).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[u8])> {
        self.reverse.iter().map(|(id, b)| (*id, b.as_slice()))
    }

    /// Longest vocab token that is a prefix of `text[offset..]`, as
    /// (id, byte length).
    pub fn longest_prefix(&self, text: &[u8], offset: usize) -> Option<(TokenId, usize)> {
        let mut node = 0usize;
        let mut best = None;
        for (i, &b) in text[offset..].iter().enumerate() {
            match self.trie[node].children.binary_search_by_key(&b, |c| c.0) {
                Ok(pos) => node = self.trie[node].children[pos].1 as usize,
                Err(_) => break,
            }
            if let Some(id) = self.trie[node].token {
                best = Some((id, i + 1));
            }
        }
        best
    }

    /// Greedy longest-prefix scan: at each offset take the longest vocab
    /// token prefixing the remainder.
    pub fn encode_canonical(&self, text: &[u8]) -> Result<CanonicalTokenization, VocabError> {
        let mut ids = Vec::new();
        let mut offset = 0;
        while offset < text.len() {
            let (id, len) = self
                .longest_prefix(text, offset)
                .ok_or(VocabError::Unencodable { offset })?;
            ids.push(id);
            offset += len;
        }
        Ok(CanonicalTokenization { ids, source_len: text.len() })
    }

    /// Concatenation of token strings in order.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.token_bytes(id)?);
        }
        Ok(out)
    }
}

fn printable(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

// GPT-2 byte <-> printable-character mapping. Printable ASCII and most of
// Latin-1 map to themselves; the remaining 68 byte values map to
// U+0100 + n in ascending byte order.
fn gpt2_tables() -> &'static ([char; 256], HashMap<char, u8>) {
    static TABLES: OnceLock<([char; 256], HashMap<char, u8>)> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut byte_to_char = ['\0'; 256];
        let mut n = 0u32;
        for b in 0u16..=255 {
            let direct = matches!(b, 0x21..=0x7e | 0xa1..=0xac | 0xae..=0xff);
            byte_to_char[b as usize] = if direct {
                char::from_u32(u32::from(b)).unwrap()
            } else {
                let c = char::from_u32(0x100 + n).unwrap();
                n += 1;
                c
            };
        }
        let char_to_byte = byte_to_char
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        (byte_to_char, char_to_byte)
    })
}

/// Map raw bytes to the printable form used by GPT-2 `vocab.json` keys.
pub fn bytes_to_gpt2_str(bytes: &[u8]) -> String {
    let (fwd, _) = gpt2_tables();
    bytes.iter().map(|&b| fwd[b as usize]).collect()
}

/// Inverse mapping; `None` if the string contains characters outside the
/// 256-character alphabet.
pub fn gpt2_str_to_bytes(s: &str) -> Option<Vec<u8>> {
    let (_, inv) = gpt2_tables();
    s.chars().map(|c| inv.get(&c).copied()).collect()
}
