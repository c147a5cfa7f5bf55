//! Byte-level tokenizer: each UTF-8 byte is one token, vocabulary size 256.
//!
//! This makes tokenization exactly reversible and prefix-preserving: if
//! string `a` is a byte prefix of string `b`, then `tokenize(a)` is a token
//! prefix of `tokenize(b)`. Prefix comparisons over token ids therefore
//! mirror prefix comparisons over text, which is what the reuse gate needs.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;

pub type TokenId = u32;

/// Fixed vocabulary: one token per byte value.
pub const VOCAB_SIZE: usize = 256;

/// Encodes text as its UTF-8 byte values.
pub fn tokenize(text: &str) -> Vec<TokenId> {
    text.bytes().map(TokenId::from).collect()
}

/// Exact inverse of [`tokenize`]. Fails if the ids are not all bytes or the
/// byte sequence is not valid UTF-8; the error carries the first bad offset.
pub fn detokenize(tokens: &[TokenId]) -> Result<String, Error> {
    let mut bytes = Vec::with_capacity(tokens.len());
    for (offset, &id) in tokens.iter().enumerate() {
        if id >= VOCAB_SIZE as TokenId {
            return Err(Error::Decode { offset });
        }
        bytes.push(id as u8);
    }
    String::from_utf8(bytes).map_err(|e| Error::Decode {
        offset: e.utf8_error().valid_up_to(),
    })
}
