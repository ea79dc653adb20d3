//! WordPiece vocabulary training, greedy subword encoding, and fixed-length
//! sequence packing.

mod alphabet;
mod encode;
mod pack;
mod vocab;
mod wordpiece;

pub use alphabet::{build_alphabet, AlphabetBudget};
pub use encode::{
    decode, encode, encode_with_offsets, encode_word, is_punctuation, pre_tokenize,
    pre_tokenize_with_offsets, TokenSpan,
};
pub use pack::{pack_sequences, read_packed, sidecar_path, write_packed, PackedExample, PackingStats};
pub use vocab::{
    Vocab, CLS_ID, CONTINUATION_PREFIX, MASK_ID, PAD_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID,
};
pub use wordpiece::{
    train_bilingual_wordpiece, train_wordpiece, train_wordpiece_with_trace, MergeRecord,
};
