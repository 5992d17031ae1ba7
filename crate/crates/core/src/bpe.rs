//! Byte-level BPE with one vocabulary shared by code, AST labels and comments.
//!
//! Id layout: control specials (`<pad>`, `<sos>`, `<eos>`, `<sep>`), atomic
//! specials (`<num_>`, `<str_>` and any registered labels), the 256 single
//! bytes, then merge products in learned order.
//!
//! Text is pre-segmented into units of leading whitespace plus one
//! non-whitespace run; merges never cross unit boundaries. A run equal to an
//! atomic special is emitted as that special's id.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SEP: u32 = 3;
pub const NUM: u32 = 4;
pub const STR: u32 = 5;

pub const BASE_SPECIALS: [&str; 6] = ["<pad>", "<sos>", "<eos>", "<sep>", "<num_>", "<str_>"];
pub const CONTROL_COUNT: u32 = 4;

#[derive(Debug, Error)]
pub enum BpeError {
    #[error("vocabulary size {requested} is below the floor of {floor}")]
    VocabTooSmall { requested: usize, floor: usize },
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("invalid special token {0:?}")]
    InvalidSpecial(String),
    #[error("malformed tokenizer file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Special(String),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone)]
pub struct BpeModel {
    vocab: Vec<Piece>,
    merges: Vec<(u32, u32)>,
    specials: HashMap<String, u32>,
    byte_base: u32,
    /// pair -> (rank, product id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

impl PartialEq for BpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.merges == other.merges
    }
}

/// Splits bytes into `(whitespace, word)` units; a trailing whitespace run
/// yields a unit with an empty word.
fn units(bytes: &[u8]) -> Vec<(&[u8], &[u8])> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ws_start = i;
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let word_start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        out.push((&bytes[ws_start..word_start], &bytes[word_start..i]));
    }
    out
}

impl BpeModel {
    /// A model with no merges over the given atomic specials.
    pub fn base(extra_specials: &[&str]) -> Result<Self, BpeError> {
        let mut vocab: Vec<Piece> = BASE_SPECIALS.iter().map(|s| Piece::Special(s.to_string())).collect();
        let mut seen: BTreeSet<&str> = BASE_SPECIALS.iter().copied().collect();
        for s in extra_specials {
            let single_byte_char = s.chars().count() == 1 && BYTE_CHARS.with(|t| t.decode(s).is_some());
            if s.is_empty() || s.chars().any(char::is_whitespace) || single_byte_char || !seen.insert(s) {
                return Err(BpeError::InvalidSpecial(s.to_string()));
            }
            vocab.push(Piece::Special(s.to_string()));
        }
        let byte_base = vocab.len() as u32;
        vocab.extend((0..=255u8).map(|b| Piece::Bytes(vec![b])));
        Ok(Self::assemble(vocab, Vec::new(), byte_base))
    }

    fn assemble(vocab: Vec<Piece>, merges: Vec<(u32, u32)>, byte_base: u32) -> Self {
        let specials = vocab
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                Piece::Special(s) => Some((s.clone(), i as u32)),
                Piece::Bytes(_) => None,
            })
            .collect();
        let mut model = BpeModel { vocab, merges, specials, byte_base, ranks: HashMap::new() };
        model.rebuild_ranks();
        model
    }

    fn rebuild_ranks(&mut self) {
        let lookup: HashMap<Vec<u8>, u32> = self
            .vocab
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                Piece::Bytes(b) => Some((b.clone(), i as u32)),
                Piece::Special(_) => None,
            })
            .collect();
        self.ranks.clear();
        for (rank, &(l, r)) in self.merges.iter().enumerate() {
            let mut bytes = self.piece_bytes(l).to_vec();
            bytes.extend_from_slice(self.piece_bytes(r));
            self.ranks.entry((l, r)).or_insert((rank, lookup[&bytes]));
        }
    }

    fn piece_bytes(&self, id: u32) -> &[u8] {
        match &self.vocab[id as usize] {
            Piece::Bytes(b) => b,
            Piece::Special(s) => s.as_bytes(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges_len(&self) -> usize {
        self.merges.len()
    }

    /// Merge rules as `(left, right)` byte strings in learned order.
    pub fn merges(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.merges.iter().map(|&(l, r)| (self.piece_bytes(l).to_vec(), self.piece_bytes(r).to_vec())).collect()
    }

    pub fn byte_id(&self, b: u8) -> u32 {
        self.byte_base + b as u32
    }

    pub fn special_id(&self, s: &str) -> Option<u32> {
        self.specials.get(s).copied()
    }

    pub fn is_special(&self, id: u32) -> bool {
        matches!(self.vocab.get(id as usize), Some(Piece::Special(_)))
    }

    /// Id of the token with exactly these bytes, if one exists.
    pub fn token_id(&self, bytes: &[u8]) -> Option<u32> {
        self.vocab.iter().position(|p| matches!(p, Piece::Bytes(b) if b == bytes)).map(|i| i as u32)
    }

    pub fn specials(&self) -> Vec<&str> {
        self.vocab
            .iter()
            .filter_map(|p| match p {
                Piece::Special(s) => Some(s.as_str()),
                Piece::Bytes(_) => None,
            })
            .collect()
    }

    /// Applies merges by rank to one unit of bytes.
    fn encode_unit(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = bytes.iter().map(|&b| self.byte_id(b)).collect();
        while syms.len() > 1 {
            let best = syms.windows(2).filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id))).min_by_key(|x| x.0);
            let Some((_, pair, product)) = best else { break };
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    merged.push(product);
                    i += 2;
                } else {
                    merged.push(syms[i]);
                    i += 1;
                }
            }
            syms = merged;
        }
        out.extend(syms);
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut out = Vec::with_capacity(bytes.len());
        let mut offset = 0;
        for (ws, word) in units(bytes) {
            match std::str::from_utf8(word).ok().and_then(|w| self.atomic_id(w)) {
                Some(id) => {
                    if !ws.is_empty() {
                        self.encode_unit(ws, &mut out);
                    }
                    out.push(id);
                }
                None => self.encode_unit(&bytes[offset..offset + ws.len() + word.len()], &mut out),
            }
            offset += ws.len() + word.len();
        }
        out
    }

    fn atomic_id(&self, word: &str) -> Option<u32> {
        self.special_id(word).filter(|&id| id >= CONTROL_COUNT)
    }

    /// Encodes a token sequence as if joined by single spaces, without
    /// spending ids on the spaces in front of atomic specials.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        let mut out = Vec::new();
        let mut unit = Vec::new();
        for (i, w) in words.iter().enumerate() {
            let w = w.as_ref();
            if let Some(id) = self.atomic_id(w) {
                out.push(id);
                continue;
            }
            unit.clear();
            if i > 0 {
                unit.push(b' ');
            }
            unit.extend_from_slice(w.as_bytes());
            self.encode_unit(&unit, &mut out);
        }
        out
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, BpeError> {
        let mut out = Vec::new();
        for &id in ids {
            match self.vocab.get(id as usize) {
                None => return Err(BpeError::UnknownId(id)),
                Some(Piece::Special(_)) if id < CONTROL_COUNT => {}
                Some(Piece::Special(s)) => out.extend_from_slice(s.as_bytes()),
                Some(Piece::Bytes(b)) => out.extend_from_slice(b),
            }
        }
        Ok(out)
    }

    /// Concatenated byte content; control specials are dropped and invalid
    /// UTF-8 is replaced.
    pub fn decode(&self, ids: &[u32]) -> Result<String, BpeError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Inverse of [`encode_words`](Self::encode_words): atomic specials get
    /// a separating space so the result splits back into the original words.
    pub fn decode_words(&self, ids: &[u32]) -> Result<Vec<String>, BpeError> {
        let mut text = Vec::new();
        for &id in ids {
            match self.vocab.get(id as usize) {
                None => return Err(BpeError::UnknownId(id)),
                Some(Piece::Special(_)) if id < CONTROL_COUNT => {}
                Some(Piece::Special(s)) => {
                    text.push(b' ');
                    text.extend_from_slice(s.as_bytes());
                    text.push(b' ');
                }
                Some(Piece::Bytes(b)) => text.extend_from_slice(b),
            }
        }
        Ok(String::from_utf8_lossy(&text).split_whitespace().map(str::to_string).collect())
    }

    // ---- persistence ----

    pub fn merges_text(&self) -> String {
        let mut s = String::new();
        for &(l, r) in &self.merges {
            let _ = writeln!(s, "{} {}", self.render(l), self.render(r));
        }
        s
    }

    pub fn vocab_text(&self) -> String {
        let mut s = String::new();
        for id in 0..self.vocab.len() as u32 {
            s.push_str(&self.render(id));
            s.push('\n');
        }
        s
    }

    fn render(&self, id: u32) -> String {
        match &self.vocab[id as usize] {
            Piece::Special(s) => s.clone(),
            Piece::Bytes(b) => BYTE_CHARS.with(|t| t.encode(b)),
        }
    }

    pub fn save(&self, merges_path: &Path, vocab_path: &Path) -> Result<(), BpeError> {
        std::fs::write(merges_path, self.merges_text())?;
        std::fs::write(vocab_path, self.vocab_text())?;
        Ok(())
    }

    pub fn load(merges_path: &Path, vocab_path: &Path) -> Result<Self, BpeError> {
        Self::from_texts(&std::fs::read_to_string(merges_path)?, &std::fs::read_to_string(vocab_path)?)
    }

    pub fn from_texts(merges: &str, vocab: &str) -> Result<Self, BpeError> {
        let lines: Vec<&str> = vocab.lines().collect();
        let byte0 = BYTE_CHARS.with(|t| t.encode(&[0]));
        let byte_base = lines.iter().position(|l| *l == byte0).ok_or_else(|| BpeError::Format("byte alphabet not found in vocabulary".into()))?;
        if byte_base < BASE_SPECIALS.len() || lines[..BASE_SPECIALS.len()] != BASE_SPECIALS {
            return Err(BpeError::Format("reserved specials missing or out of order".into()));
        }
        let mut pieces: Vec<Piece> = lines[..byte_base].iter().map(|s| Piece::Special(s.to_string())).collect();
        for (i, line) in lines[byte_base..].iter().enumerate() {
            let bytes = BYTE_CHARS
                .with(|t| t.decode(line))
                .ok_or_else(|| BpeError::Format(format!("line {}: not a byte token: {line:?}", byte_base + i + 1)))?;
            if i < 256 && bytes != [i as u8] {
                return Err(BpeError::Format(format!("line {}: byte alphabet out of order", byte_base + i + 1)));
            }
            pieces.push(Piece::Bytes(bytes));
        }
        let index: HashMap<String, u32> = lines.iter().enumerate().map(|(i, l)| (l.to_string(), i as u32)).collect();
        let mut pairs = Vec::new();
        for (n, line) in merges.lines().enumerate() {
            let (l, r) = line.split_once(' ').ok_or_else(|| BpeError::Format(format!("merge line {}: expected `left right`", n + 1)))?;
            let (Some(&li), Some(&ri)) = (index.get(l), index.get(r)) else {
                return Err(BpeError::Format(format!("merge line {}: unknown token", n + 1)));
            };
            pairs.push((li, ri));
        }
        let model = Self::assemble(pieces, Vec::new(), byte_base as u32);
        let mut model = BpeModel { merges: pairs, ..model };
        for &(l, r) in &model.merges {
            if model.is_special(l) || model.is_special(r) {
                return Err(BpeError::Format("merge over a special token".into()));
            }
            let mut bytes = model.piece_bytes(l).to_vec();
            bytes.extend_from_slice(model.piece_bytes(r));
            if model.token_id(&bytes).is_none() {
                return Err(BpeError::Format("merge product missing from vocabulary".into()));
            }
        }
        model.rebuild_ranks();
        Ok(model)
    }
}

// ---- training ----

pub fn train_bpe<S: AsRef<str>>(texts: &[S], vocab_size: usize) -> Result<BpeModel, BpeError> {
    BpeTrainer::new(vocab_size).train(texts)
}

#[derive(Debug, Clone)]
pub struct BpeTrainer {
    pub vocab_size: usize,
    pub extra_specials: Vec<String>,
}

#[derive(Debug, PartialEq, Eq)]
struct Candidate {
    count: u64,
    pair: (u32, u32),
    left: Vec<u8>,
    right: Vec<u8>,
}

impl Ord for Candidate {
    // Max-heap: higher count first, then the lexicographically smallest pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.count.cmp(&other.count).then_with(|| other.left.cmp(&self.left)).then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl BpeTrainer {
    pub fn new(vocab_size: usize) -> Self {
        BpeTrainer { vocab_size, extra_specials: Vec::new() }
    }

    pub fn with_specials<S: AsRef<str>>(mut self, specials: &[S]) -> Self {
        self.extra_specials = specials.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn train<S: AsRef<str>>(&self, texts: &[S]) -> Result<BpeModel, BpeError> {
        let extra: Vec<&str> = self.extra_specials.iter().map(String::as_str).collect();
        let mut model = BpeModel::base(&extra)?;
        let floor = model.vocab_size();
        if self.vocab_size < floor {
            return Err(BpeError::VocabTooSmall { requested: self.vocab_size, floor });
        }

        let mut unit_counts: HashMap<Vec<u8>, u64> = HashMap::new();
        for text in texts {
            let bytes = text.as_ref().as_bytes();
            for (ws, word) in units(bytes) {
                let atomic = std::str::from_utf8(word).ok().and_then(|w| model.atomic_id(w)).is_some();
                let mut unit = ws.to_vec();
                if !atomic {
                    unit.extend_from_slice(word);
                }
                if unit.len() > 1 {
                    *unit_counts.entry(unit).or_default() += 1;
                }
            }
        }
        let mut sorted: Vec<(Vec<u8>, u64)> = unit_counts.into_iter().collect();
        sorted.sort();
        let mut words: Vec<(Vec<u32>, u64)> = sorted.into_iter().map(|(u, c)| (u.iter().map(|&b| model.byte_id(b)).collect(), c)).collect();

        let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
        let mut where_: HashMap<(u32, u32), BTreeSet<usize>> = HashMap::new();
        for (wi, (syms, c)) in words.iter().enumerate() {
            for w in syms.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += c;
                where_.entry((w[0], w[1])).or_default().insert(wi);
            }
        }
        let candidate = |model: &BpeModel, pair: (u32, u32), count: u64| Candidate {
            count,
            pair,
            left: model.piece_bytes(pair.0).to_vec(),
            right: model.piece_bytes(pair.1).to_vec(),
        };
        let mut heap: BinaryHeap<Candidate> = counts.iter().map(|(&p, &c)| candidate(&model, p, c)).collect();
        let forbidden: BTreeSet<Vec<u8>> = model.specials().iter().map(|s| s.as_bytes().to_vec()).collect();
        let mut product_ids: HashMap<Vec<u8>, u32> = (0..=255u8).map(|b| (vec![b], model.byte_id(b))).collect();

        while model.vocab.len() < self.vocab_size {
            let Some(top) = heap.pop() else { break };
            let current = counts.get(&top.pair).copied().unwrap_or(0);
            if current != top.count {
                if current > 0 {
                    heap.push(candidate(&model, top.pair, current));
                }
                continue;
            }
            if top.count < 2 {
                break;
            }
            let mut product = top.left.clone();
            product.extend_from_slice(&top.right);
            if forbidden.contains(&product) {
                counts.remove(&top.pair);
                continue;
            }
            let new_id = *product_ids.entry(product.clone()).or_insert_with(|| {
                model.vocab.push(Piece::Bytes(product));
                model.vocab.len() as u32 - 1
            });
            model.merges.push(top.pair);

            let affected: Vec<usize> = where_.remove(&top.pair).map(|s| s.into_iter().collect()).unwrap_or_default();
            let mut touched: BTreeSet<(u32, u32)> = BTreeSet::new();
            for wi in affected {
                let (syms, c) = &mut words[wi];
                let c = *c;
                for w in syms.windows(2) {
                    let p = (w[0], w[1]);
                    if let Some(v) = counts.get_mut(&p) {
                        *v -= c;
                    }
                    touched.insert(p);
                }
                let mut merged = Vec::with_capacity(syms.len());
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && (syms[i], syms[i + 1]) == top.pair {
                        merged.push(new_id);
                        i += 2;
                    } else {
                        merged.push(syms[i]);
                        i += 1;
                    }
                }
                *syms = merged;
                for w in syms.windows(2) {
                    let p = (w[0], w[1]);
                    *counts.entry(p).or_default() += c;
                    where_.entry(p).or_default().insert(wi);
                    touched.insert(p);
                }
            }
            counts.remove(&top.pair);
            for p in touched {
                match counts.get(&p) {
                    Some(&c) if c > 0 => heap.push(candidate(&model, p, c)),
                    _ => {
                        counts.remove(&p);
                    }
                }
            }
        }
        model.rebuild_ranks();
        Ok(model)
    }
}

// ---- printable byte mapping for the text files ----

/// Maps each byte to a visible character so tokens can be written one per
/// line and merge sides separated by a space. Printable Latin-1 bytes map to
/// themselves; the rest are shifted above U+0100.
struct ByteChars {
    to_char: [char; 256],
    from_char: HashMap<char, u8>,
}

impl ByteChars {
    fn new() -> Self {
        let mut to_char = ['\0'; 256];
        let mut shift = 0u32;
        for b in 0..=255u32 {
            let printable = (33..=126).contains(&b) || (161..=172).contains(&b) || (174..=255).contains(&b);
            to_char[b as usize] = if printable {
                char::from_u32(b).unwrap()
            } else {
                shift += 1;
                char::from_u32(255 + shift).unwrap()
            };
        }
        let from_char = to_char.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        ByteChars { to_char, from_char }
    }

    fn encode(&self, bytes: &[u8]) -> String {
        bytes.iter().map(|&b| self.to_char[b as usize]).collect()
    }

    fn decode(&self, s: &str) -> Option<Vec<u8>> {
        s.chars().map(|c| self.from_char.get(&c).copied()).collect()
    }
}

thread_local! {
    static BYTE_CHARS: ByteChars = ByteChars::new();
}
