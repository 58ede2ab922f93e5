//! Documents, tokenisation, vocabularies and the bag-of-words / token-sequence views.
//!
//! Two vocabularies are built side by side. The *sequence* vocabulary feeds
//! the language model: it keeps punctuation and stopwords and reserves ids
//! `0..4` for PAD/BOS/EOS/UNK. The *content* vocabulary feeds the topic model
//! and its metrics: no punctuation, no stopwords, dense ids from 0.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_RESERVED: usize = 4;
pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Tokens that may end a chunk. Commas are sentence-internal and excluded.
pub const BOUNDARY_PUNCTUATION: [&str; 5] = [".", "!", "?", ";", ":"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub gold_label: Option<usize>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, gold_label: Option<usize>) -> Self {
        Self { id: id.into(), text: text.into(), gold_label }
    }
}

/// Splits on whitespace and isolates every non-alphanumeric character as its own token.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            if lowercase {
                cur.extend(c.to_lowercase());
            } else {
                cur.push(c);
            }
            continue;
        }
        if !cur.is_empty() {
            out.push(core::mem::take(&mut cur));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn is_punctuation(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !c.is_alphanumeric())
}

pub fn is_boundary(token: &str) -> bool {
    BOUNDARY_PUNCTUATION.contains(&token)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabOptions {
    pub min_doc_freq: usize,
    pub stopwords: BTreeSet<String>,
    pub lowercase: bool,
}

impl Default for VocabOptions {
    fn default() -> Self {
        Self { min_doc_freq: 1, stopwords: BTreeSet::new(), lowercase: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    options: VocabOptions,
    seq_tokens: Vec<String>,
    seq_df: Vec<usize>,
    seq_index: BTreeMap<String, usize>,
    content_tokens: Vec<String>,
    content_df: Vec<usize>,
    content_index: BTreeMap<String, usize>,
    seq_to_content: Vec<Option<usize>>,
    boundary: Vec<bool>,
}

impl Vocabulary {
    /// Builds both vocabularies. Token order is descending document
    /// frequency, ties broken lexicographically.
    pub fn build(docs: &[Document], options: VocabOptions) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            let uniq: BTreeSet<String> = tokenize(&doc.text, options.lowercase).into_iter().collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = df
            .into_iter()
            .filter(|(t, c)| *c >= options.min_doc_freq && !RESERVED_TOKENS.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let content: Vec<(String, usize)> = kept
            .iter()
            .filter(|(t, _)| !is_punctuation(t) && !options.stopwords.contains(t))
            .cloned()
            .collect();
        if content.is_empty() {
            return Err(Error::Empty("content vocabulary"));
        }
        let mut seq: Vec<(String, usize)> = RESERVED_TOKENS.iter().map(|t| (t.to_string(), 0)).collect();
        seq.extend(kept);
        Self::from_lists(seq, content, options)
    }

    /// Reassembles a vocabulary from its serialised token lists (order = id).
    pub fn from_lists(seq: Vec<(String, usize)>, content: Vec<(String, usize)>, options: VocabOptions) -> Result<Self> {
        if seq.len() < NUM_RESERVED || seq.iter().zip(RESERVED_TOKENS).any(|((t, _), r)| t != r) {
            return Err(Error::Precondition("sequence vocabulary must start with the reserved tokens".into()));
        }
        let seq_index: BTreeMap<String, usize> = seq.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
        let content_index: BTreeMap<String, usize> =
            content.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
        if seq_index.len() != seq.len() || content_index.len() != content.len() {
            return Err(Error::Precondition("duplicate token in vocabulary".into()));
        }
        if let Some((t, _)) = content.iter().find(|(t, _)| options.stopwords.contains(t) || is_punctuation(t)) {
            return Err(Error::Precondition(format!("content vocabulary contains stopword or punctuation {t:?}")));
        }
        let seq_to_content = seq.iter().map(|(t, _)| content_index.get(t).copied()).collect();
        let boundary = seq.iter().map(|(t, _)| is_boundary(t)).collect();
        let (seq_tokens, seq_df) = seq.into_iter().unzip();
        let (content_tokens, content_df) = content.into_iter().unzip();
        Ok(Self {
            options,
            seq_tokens,
            seq_df,
            seq_index,
            content_tokens,
            content_df,
            content_index,
            seq_to_content,
            boundary,
        })
    }

    pub fn options(&self) -> &VocabOptions {
        &self.options
    }

    pub fn seq_len(&self) -> usize {
        self.seq_tokens.len()
    }

    pub fn content_len(&self) -> usize {
        self.content_tokens.len()
    }

    pub fn seq_token(&self, id: usize) -> Option<&str> {
        self.seq_tokens.get(id).map(String::as_str)
    }

    pub fn content_token(&self, id: usize) -> Option<&str> {
        self.content_tokens.get(id).map(String::as_str)
    }

    pub fn seq_id(&self, token: &str) -> Option<usize> {
        self.seq_index.get(token).copied()
    }

    pub fn content_id(&self, token: &str) -> Option<usize> {
        self.content_index.get(token).copied()
    }

    pub fn seq_to_content(&self, seq_id: usize) -> Option<usize> {
        self.seq_to_content.get(seq_id).copied().flatten()
    }

    pub fn is_boundary_id(&self, seq_id: usize) -> bool {
        self.boundary.get(seq_id).copied().unwrap_or(false)
    }

    pub fn seq_entries(&self) -> impl Iterator<Item = (&str, usize)> {
        self.seq_tokens.iter().map(String::as_str).zip(self.seq_df.iter().copied())
    }

    pub fn content_entries(&self) -> impl Iterator<Item = (&str, usize)> {
        self.content_tokens.iter().map(String::as_str).zip(self.content_df.iter().copied())
    }

    /// Sequence ids for a text, unknown tokens mapped to UNK. No BOS/EOS.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text, self.options.lowercase)
            .iter()
            .map(|t| self.seq_id(t).unwrap_or(UNK))
            .collect()
    }

    /// Space-joined surface form of sequence ids; reserved ids other than UNK are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id < NUM_RESERVED && id != UNK {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.seq_token(id).unwrap_or("<unk>"));
        }
        out
    }

    /// Content-vocabulary counts of a sequence-id list.
    pub fn bow_from_ids(&self, ids: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.content_len()];
        for &id in ids {
            if let Some(c) = self.seq_to_content(id) {
                counts[c] += 1;
            }
        }
        counts
    }
}

pub fn build_vocab(docs: &[Document], options: VocabOptions) -> Result<Vocabulary> {
    Vocabulary::build(docs, options)
}

/// Count of each content token in `doc`; stopwords, punctuation and pruned tokens are excluded.
pub fn bow_encode(doc: &Document, vocab: &Vocabulary) -> Vec<u32> {
    let mut counts = vec![0u32; vocab.content_len()];
    for t in tokenize(&doc.text, vocab.options.lowercase) {
        if let Some(c) = vocab.content_id(&t) {
            counts[c] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    /// BOS, content ids, EOS.
    pub ids: Vec<usize>,
    pub doc_id: String,
}

impl TokenSequence {
    pub fn content(&self) -> &[usize] {
        &self.ids[1..self.ids.len() - 1]
    }
}

/// Greedy chunk boundaries over `n` tokens. A remainder shorter than
/// `max_len` is one chunk; otherwise the window of `max_len` tokens is cut
/// after its last boundary token, or hard at `max_len` when it has none.
pub fn chunk_ranges(n: usize, max_len: usize, is_boundary: impl Fn(usize) -> bool) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = if n - start < max_len {
            n
        } else {
            (start..start + max_len)
                .rev()
                .find(|&i| is_boundary(i))
                .map(|i| i + 1)
                .unwrap_or(start + max_len)
        };
        out.push(start..end);
        start = end;
    }
    out
}

/// Chunks every document into framed token sequences of at most `max_len`
/// content tokens (BOS and EOS are added around each chunk).
pub fn chunk_sequences(docs: &[Document], vocab: &Vocabulary, max_len: usize) -> Result<Vec<TokenSequence>> {
    if max_len < 2 {
        return Err(Error::InvalidConfig(format!("max_len must be >= 2, got {max_len}")));
    }
    let mut out = Vec::new();
    for doc in docs {
        let ids = vocab.encode(&doc.text);
        for r in chunk_ranges(ids.len(), max_len, |i| vocab.is_boundary_id(ids[i])) {
            let mut framed = Vec::with_capacity(r.len() + 2);
            framed.push(BOS);
            framed.extend_from_slice(&ids[r]);
            framed.push(EOS);
            out.push(TokenSequence { ids: framed, doc_id: doc.id.clone() });
        }
    }
    Ok(out)
}

/// First framed chunk of a document, or `None` when it has no tokens.
pub fn first_chunk(doc: &Document, vocab: &Vocabulary, max_len: usize) -> Option<Vec<usize>> {
    frame_first_chunk(&vocab.encode(&doc.text), vocab, max_len)
}

pub fn frame_first_chunk(ids: &[usize], vocab: &Vocabulary, max_len: usize) -> Option<Vec<usize>> {
    let r = chunk_ranges(ids.len(), max_len, |i| vocab.is_boundary_id(ids[i])).into_iter().next()?;
    let mut framed = Vec::with_capacity(r.len() + 2);
    framed.push(BOS);
    framed.extend_from_slice(&ids[r]);
    framed.push(EOS);
    Some(framed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded train/test partition of `0..n`, stratified when `labels` is given.
/// Index lists are returned in ascending order.
pub fn split(n: usize, labels: Option<&[usize]>, fractions: (f64, f64), seed: u64) -> Result<Split> {
    let (train_f, test_f) = fractions;
    if !(train_f > 0.0 && test_f > 0.0 && ((train_f + test_f) - 1.0).abs() < 1e-9) {
        return Err(Error::InvalidConfig(format!("split fractions must be positive and sum to 1, got {fractions:?}")));
    }
    let mut rng = rng::rng_from(seed, &[rng::tag("split")]);
    let mut train = Vec::new();
    let mut test = Vec::new();
    match labels {
        None => {
            let perm = rng::permutation(&mut rng, n);
            let n_test = libm::round(n as f64 * test_f) as usize;
            test.extend_from_slice(&perm[..n_test]);
            train.extend_from_slice(&perm[n_test..]);
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::Precondition(format!("{} labels for {} items", labels.len(), n)));
            }
            let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &l) in labels.iter().enumerate() {
                classes.entry(l).or_default().push(i);
            }
            for (label, members) in classes {
                if members.len() < 2 {
                    return Err(Error::Precondition(format!(
                        "class {label} has {} member(s); stratified split needs at least 2",
                        members.len()
                    )));
                }
                let perm = rng::permutation(&mut rng, members.len());
                let n_test = (libm::round(members.len() as f64 * test_f) as usize).clamp(1, members.len() - 1);
                test.extend(perm[..n_test].iter().map(|&p| members[p]));
                train.extend(perm[n_test..].iter().map(|&p| members[p]));
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts.iter().enumerate().map(|(i, t)| Document::new(i.to_string(), *t, None)).collect()
    }

    fn content_set(v: &Vocabulary) -> BTreeSet<String> {
        v.content_entries().map(|(t, _)| t.to_string()).collect()
    }

    #[test]
    fn tokenizer_isolates_punctuation() {
        assert_eq!(tokenize("Hello, world. Foo!", true), ["hello", ",", "world", ".", "foo", "!"]);
        assert_eq!(tokenize("  ", true), Vec::<String>::new());
        assert_eq!(tokenize("d'ieri", false), ["d", "'", "ieri"]);
    }

    #[test]
    fn vocab_min_doc_freq_and_stopwords() {
        let d = docs(&["a b", "a c"]);
        let v = build_vocab(&d, VocabOptions::default()).unwrap();
        assert_eq!(content_set(&v), ["a", "b", "c"].iter().map(|s| s.to_string()).collect());
        let v2 = build_vocab(&d, VocabOptions { min_doc_freq: 2, ..Default::default() }).unwrap();
        assert_eq!(content_set(&v2), ["a".to_string()].into_iter().collect());
        let stop = VocabOptions { stopwords: ["a".to_string()].into_iter().collect(), ..Default::default() };
        let v3 = build_vocab(&d, stop).unwrap();
        assert_eq!(content_set(&v3), ["b", "c"].iter().map(|s| s.to_string()).collect());
        // stopwords stay in the sequence vocabulary
        assert!(v3.seq_id("a").is_some());
        assert_eq!(v3.content_id("a"), None);
    }

    #[test]
    fn vocab_reserved_ids_and_errors() {
        let v = build_vocab(&docs(&["x y ."]), VocabOptions::default()).unwrap();
        for (i, t) in RESERVED_TOKENS.iter().enumerate() {
            assert_eq!(v.seq_id(t), Some(i));
        }
        assert!(v.encode("x y . zzz").iter().all(|&i| i != PAD && i != BOS && i != EOS));
        assert_eq!(*v.encode("zzz").first().unwrap(), UNK);
        assert!(matches!(build_vocab(&[], VocabOptions::default()), Err(Error::Empty(_))));
        assert!(matches!(build_vocab(&docs(&[". !"]), VocabOptions::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn bow_examples() {
        let v = Vocabulary::from_lists(
            RESERVED_TOKENS.iter().map(|t| (t.to_string(), 0)).chain([("a".into(), 1), ("b".into(), 1), ("c".into(), 1)]).collect(),
            vec![("a".into(), 1), ("b".into(), 1), ("c".into(), 1)],
            VocabOptions { stopwords: ["the".to_string()].into_iter().collect(), ..Default::default() },
        )
        .unwrap();
        assert_eq!(bow_encode(&Document::new("0", "a a b", None), &v), [2, 1, 0]);
        assert_eq!(bow_encode(&Document::new("0", "", None), &v), [0, 0, 0]);
        assert_eq!(bow_encode(&Document::new("0", "the the", None), &v), [0, 0, 0]);
    }

    #[test]
    fn chunking_examples() {
        let d = docs(&["Hello world . Foo bar ! Baz"]);
        let v = build_vocab(&d, VocabOptions { lowercase: false, ..Default::default() }).unwrap();
        let chunks = chunk_sequences(&d, &v, 4).unwrap();
        let surface: Vec<String> = chunks.iter().map(|c| v.decode(c.content())).collect();
        assert_eq!(surface, ["Hello world .", "Foo bar !", "Baz"]);
        assert!(chunks.iter().all(|c| c.ids[0] == BOS && *c.ids.last().unwrap() == EOS));

        let short = chunk_sequences(&d, &v, 50).unwrap();
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].content(), v.encode(&d[0].text).as_slice());

        let sizes: Vec<usize> = chunk_ranges(10, 4, |_| false).iter().map(|r| r.len()).collect();
        assert_eq!(sizes, [4, 4, 2]);
        assert!(chunk_sequences(&d, &v, 1).is_err());
    }

    #[test]
    fn comma_is_not_a_boundary() {
        let d = docs(&["a , b , c d e"]);
        let v = build_vocab(&d, VocabOptions::default()).unwrap();
        let sizes: Vec<usize> = chunk_sequences(&d, &v, 3).unwrap().iter().map(|c| c.content().len()).collect();
        assert_eq!(sizes, [3, 3, 1]);
    }

    #[test]
    fn split_examples() {
        let s = split(10, None, (0.8, 0.2), 7).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert_eq!(s, split(10, None, (0.8, 0.2), 7).unwrap());
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let s = split(20, Some(&labels), (0.5, 0.5), 3).unwrap();
        for side in [&s.train, &s.test] {
            let ones = side.iter().filter(|&&i| labels[i] == 1).count();
            assert!((ones as i64 - (side.len() - ones) as i64).abs() <= 1);
        }
        assert!(split(3, Some(&[0, 0, 1]), (0.5, 0.5), 1).is_err());
        assert!(split(3, None, (0.5, 0.6), 1).is_err());
    }
}
