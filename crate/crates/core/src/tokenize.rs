//! Word-level NL+PL tokenizer with identifier splitting, a frequency-ranked
//! vocabulary, and fixed-length pair encoding.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const SEP: u32 = 2;
pub const EOS: u32 = 3;
pub const MASK: u32 = 4;
pub const UNK: u32 = 5;
pub const NUM_SPECIALS: usize = 6;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] =
    ["[PAD]", "[BOS]", "[SEP]", "[EOS]", "[MASK]", "[UNK]"];

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Splits an alphanumeric run at camelCase boundaries: `getFooBar` becomes
/// `get`, `Foo`, `Bar`; `HTTPServer` becomes `HTTP`, `Server`.
fn split_camel(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let prev = chars[i - 1];
        let cur = chars[i];
        let next = chars.get(i + 1).copied();
        let lower_to_upper = (prev.is_lowercase() || prev.is_ascii_digit()) && cur.is_uppercase();
        let acronym_end = prev.is_uppercase()
            && cur.is_uppercase()
            && next.is_some_and(|n| n.is_lowercase());
        if lower_to_upper || acronym_end {
            out.push(chars[start..i].iter().collect());
            start = i;
        }
    }
    if start < chars.len() {
        out.push(chars[start..].iter().collect());
    }
}

/// Whitespace and punctuation split, each punctuation mark its own token,
/// then camelCase and snake_case splitting. Case is preserved; underscores
/// are separators and never emitted.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            split_camel(word, out);
            word.clear();
        }
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            if !c.is_whitespace() && c != '_' {
                out.push(c.to_string());
            }
        }
    }
    flush(&mut word, &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// One token per line; line number is the id.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tokens {
            w.write_all(t.as_bytes())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let tokens = r.lines().collect::<std::io::Result<Vec<_>>>()?;
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(Error::Parse {
                    index: i,
                    message: format!("expected special token {special}"),
                });
            }
        }
        Self::from_tokens(tokens)
    }
}

/// Top `size - 6` tokens by frequency (ties lexicographic) after the six
/// specials.
pub fn train_vocabulary<S: AsRef<str>>(corpora: &[S], size: usize) -> Result<Vocabulary> {
    if size <= NUM_SPECIALS {
        return Err(invalid(format!("vocabulary size {size} leaves no room beyond the specials")));
    }
    let dist = token_frequency(corpora);
    let mut ranked: Vec<(&String, &u64)> = dist.counts.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().take(size - NUM_SPECIALS).map(|(t, _)| t.clone()))
        .collect();
    Vocabulary::from_tokens(tokens)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub sep_index: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn eos_index(&self) -> usize {
        self.ids[self.sep_index..]
            .iter()
            .position(|&id| id == EOS)
            .map(|p| p + self.sep_index)
            .expect("encoded sequences always carry EOS")
    }

    /// Code-segment positions, `sep_index + 1 .. eos`.
    pub fn code_range(&self) -> std::ops::Range<usize> {
        self.sep_index + 1..self.eos_index()
    }

    pub fn non_pad_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Encodes pre-tokenized halves; see [`encode_pair`].
pub fn encode_tokens(
    bug_tokens: &[String],
    code_tokens: &[String],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence> {
    if max_len < 8 {
        return Err(invalid(format!("max_len {max_len} is below the minimum of 8")));
    }
    let budget = max_len - 3;
    let bug_keep = bug_tokens.len().min(budget);
    let code_keep = code_tokens.len().min(budget - bug_keep);

    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(bug_tokens[..bug_keep].iter().map(|t| vocab.id(t)));
    let sep_index = ids.len();
    ids.push(SEP);
    ids.extend(code_tokens[..code_keep].iter().map(|t| vocab.id(t)));
    ids.push(EOS);
    let attention_mask = (0..max_len).map(|i| u8::from(i < ids.len())).collect();
    ids.resize(max_len, PAD);
    Ok(TokenSequence {
        ids,
        attention_mask,
        sep_index,
    })
}

/// `BOS bug SEP code EOS PAD…`, exactly `max_len` long. Over-long input loses
/// the code tail first, then the bug tail.
pub fn encode_pair(
    bug_text: &str,
    code_text: &str,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence> {
    encode_tokens(&tokenize_text(bug_text), &tokenize_text(code_text), vocab, max_len)
}

/// Tokens for the non-special ids of `seq`, in order.
pub fn decode(seq: &TokenSequence, vocab: &Vocabulary) -> Vec<String> {
    seq.ids
        .iter()
        .filter(|&&id| !is_special(id))
        .filter_map(|&id| vocab.token(id).map(str::to_string))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenDistribution {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl TokenDistribution {
    pub fn add_text(&mut self, text: &str) {
        for t in tokenize_text(text) {
            if SPECIAL_TOKENS.contains(&t.as_str()) {
                continue;
            }
            *self.counts.entry(t).or_insert(0) += 1;
            self.total += 1;
        }
    }
}

pub fn token_frequency<S: AsRef<str>>(texts: &[S]) -> TokenDistribution {
    let mut dist = TokenDistribution::default();
    for t in texts {
        dist.add_text(t.as_ref());
    }
    dist
}
