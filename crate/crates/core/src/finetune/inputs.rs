use crate::tokenizer::{encode, Vocab, CLS_ID, SEP_ID};

/// Encoder-ready input: ids plus segment markers (0 before/through the first
/// separator, 1 after).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `[CLS] text [SEP]`, truncated to `max_len` with both specials kept.
pub fn encode_single(text: &str, vocab: &Vocab, max_len: usize) -> EncodedInput {
    assert!(max_len >= 2, "max_len must fit [CLS] and [SEP]");
    let mut tokens = encode(text, vocab);
    tokens.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(tokens.len() + 2);
    ids.push(CLS_ID);
    ids.extend(tokens);
    ids.push(SEP_ID);
    let segment_ids = vec![0; ids.len()];
    EncodedInput { ids, segment_ids }
}

/// `[CLS] a [SEP] b [SEP]` with longest-first truncation: while over budget,
/// the currently-longer segment loses its last token (ties trim the first
/// segment).
pub fn encode_pair(text_a: &str, text_b: &str, vocab: &Vocab, max_len: usize) -> EncodedInput {
    assert!(max_len >= 3, "max_len must fit [CLS] and two [SEP]s");
    let mut a = encode(text_a, vocab);
    let mut b = encode(text_b, vocab);
    let budget = max_len - 3;
    while a.len() + b.len() > budget {
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
    let mut ids = Vec::with_capacity(a.len() + b.len() + 3);
    let mut segment_ids = Vec::with_capacity(a.len() + b.len() + 3);
    ids.push(CLS_ID);
    segment_ids.push(0);
    for id in a {
        ids.push(id);
        segment_ids.push(0);
    }
    ids.push(SEP_ID);
    segment_ids.push(0);
    for id in b {
        ids.push(id);
        segment_ids.push(1);
    }
    ids.push(SEP_ID);
    segment_ids.push(1);
    EncodedInput { ids, segment_ids }
}
