//! Word-level tokenizer and `[CLS] context [SEP] text [SEP]` pair encoding.
//!
//! Text is lowercased and split on whitespace; every punctuation character
//! becomes its own token. The vocabulary file is one token per line with the
//! line number as id, the first four lines fixed to the special tokens.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Smallest `max_len` that fits CLS + one context token + SEP + one text token + SEP.
pub const MIN_MAX_LEN: usize = 5;

/// Lowercases and splits into word and punctuation tokens.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace()) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_lowercase().collect());
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from an ordered token list, specials first.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Encoding(
                "vocabulary must start with [PAD], [UNK], [CLS], [SEP]".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if token.is_empty() || token.contains(char::is_whitespace) {
                return Err(Error::Encoding(format!(
                    "invalid vocabulary token at line {}",
                    i + 1
                )));
            }
            if ids.insert(token.clone(), i as u32).is_some() {
                return Err(Error::Encoding(format!(
                    "duplicate vocabulary token `{token}`"
                )));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids_for(&self, text: &str) -> Vec<u32> {
        pre_tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn parse(contents: &str) -> Result<Self> {
        Self::from_tokens(contents.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&contents)
    }

    /// SHA-256 of the vocabulary file contents, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }
}

/// Specials plus the `target_size - 4` most frequent token types, ties
/// broken lexicographically.
pub fn train_vocab<'a, I>(corpus: I, target_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    if target_size <= SPECIAL_TOKENS.len() {
        return Err(Error::Config(format!(
            "vocabulary target size must leave room beyond the {} special tokens, got {target_size}",
            SPECIAL_TOKENS.len()
        )));
    }
    let mut freq: HashMap<String, u64> = HashMap::new();
    let mut docs = 0usize;
    for doc in corpus {
        docs += 1;
        for token in pre_tokenize(doc) {
            *freq.entry(token).or_default() += 1;
        }
    }
    if docs == 0 || freq.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for special in SPECIAL_TOKENS {
        freq.remove(special);
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        ranked
            .into_iter()
            .take(target_size - SPECIAL_TOKENS.len())
            .map(|(t, _)| t),
    );
    Vocab::from_tokens(tokens)
}

/// One encoded pair, padded to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub token_ids: Vec<u32>,
    /// 0 for CLS, context and the first SEP; 1 for text and the final SEP.
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
}

impl Encoding {
    pub fn max_len(&self) -> usize {
        self.token_ids.len()
    }

    /// Number of real (unmasked) positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Same encoding with `extra` more PAD positions.
    pub fn extend_padding(&self, extra: usize) -> Encoding {
        let mut e = self.clone();
        e.token_ids.extend(std::iter::repeat_n(PAD_ID, extra));
        e.segment_ids.extend(std::iter::repeat_n(0, extra));
        e.attention_mask.extend(std::iter::repeat_n(0, extra));
        e
    }
}

/// Encodes from pre-computed token ids. Over-length input loses the tail of
/// the text first; the context is shortened only when even a single text
/// token would not fit.
pub fn encode_ids(context: &[u32], text: &[u32], max_len: usize) -> Result<Encoding> {
    if max_len < MIN_MAX_LEN {
        return Err(Error::Encoding(format!(
            "max_len {max_len} cannot hold [CLS] context [SEP] text [SEP] (minimum {MIN_MAX_LEN})"
        )));
    }
    if context.is_empty() {
        return Err(Error::Encoding("context has no tokens".into()));
    }
    if text.is_empty() {
        return Err(Error::Encoding("text has no tokens".into()));
    }
    let budget = max_len - 3;
    let (n_ctx, n_txt) = if context.len() + text.len() <= budget {
        (context.len(), text.len())
    } else if context.len() < budget {
        (context.len(), budget - context.len())
    } else {
        (budget - 1, 1)
    };
    let mut token_ids = Vec::with_capacity(max_len);
    let mut segment_ids = Vec::with_capacity(max_len);
    token_ids.push(CLS_ID);
    token_ids.extend_from_slice(&context[..n_ctx]);
    token_ids.push(SEP_ID);
    segment_ids.resize(token_ids.len(), 0);
    token_ids.extend_from_slice(&text[..n_txt]);
    token_ids.push(SEP_ID);
    segment_ids.resize(token_ids.len(), 1);
    let mut attention_mask = vec![1u8; token_ids.len()];
    token_ids.resize(max_len, PAD_ID);
    segment_ids.resize(max_len, 0);
    attention_mask.resize(max_len, 0);
    Ok(Encoding {
        token_ids,
        segment_ids,
        attention_mask,
    })
}

pub fn encode_pair(vocab: &Vocab, context: &str, text: &str, max_len: usize) -> Result<Encoding> {
    encode_ids(&vocab.ids_for(context), &vocab.ids_for(text), max_len)
}

/// Encoding for a context-blind classifier: the context span is a single UNK.
pub fn encode_context_blind(vocab: &Vocab, text: &str, max_len: usize) -> Result<Encoding> {
    encode_ids(&[UNK_ID], &vocab.ids_for(text), max_len)
}
