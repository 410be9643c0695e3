//! Canonical byte encoding for everything that gets hashed or signed.
//!
//! The rules are deliberately small enough to reimplement from this comment:
//!
//! - **Strings** encode as a 4-byte big-endian length followed by the UTF-8
//!   bytes.
//! - **Integers** encode as 8 bytes, big-endian.
//! - **Byte strings** (digests, public keys, signatures) render as lowercase
//!   hex and then encode as strings.
//! - **Lists** encode as their element count (as an integer) followed by the
//!   elements in order.
//! - **Optional values** encode as integer `0` (absent) or `1` followed by
//!   the value.
//!
//! Struct fields are concatenated in declaration order with no framing
//! beyond the above; enum variants are prefixed with a lowercase label
//! encoded as a string. `scripts/verify_vectors.py` reimplements this format
//! independently and checks the frozen vectors in `testdata/`.

/// Incremental writer for the canonical encoding.
#[derive(Default)]
pub struct Canon {
    buf: Vec<u8>,
}

impl Canon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Length-prefixed UTF-8 string.
    pub fn put_str(&mut self, s: &str) -> &mut Self {
        let raw = s.as_bytes();
        self.buf.extend_from_slice(&(raw.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(raw);
        self
    }

    /// 8-byte big-endian integer.
    pub fn put_u64(&mut self, x: u64) -> &mut Self {
        self.buf.extend_from_slice(&x.to_be_bytes());
        self
    }

    /// Byte string, rendered as a lowercase-hex string.
    pub fn put_hex(&mut self, bytes: &[u8]) -> &mut Self {
        self.put_str(&hex::encode(bytes))
    }

    /// Raw bytes of an already-canonical value (no extra framing).
    pub fn put_raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Types with a canonical byte rendering.
pub trait CanonEncode {
    fn encode(&self, out: &mut Canon);

    fn canonical_bytes(&self) -> Vec<u8> {
        let mut c = Canon::new();
        self.encode(&mut c);
        c.finish()
    }
}

#[derive(Debug, thiserror::Error, Clone, Copy, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("string is not valid UTF-8")]
    BadUtf8,
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("trailing bytes after the last field")]
    TrailingBytes,
}

/// Sequential reader over canonical bytes; the mirror of [`Canon`].
pub struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::UnexpectedEnd)?;
        if end > self.buf.len() {
            return Err(DecodeError::UnexpectedEnd);
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn take_u64(&mut self) -> Result<u64, DecodeError> {
        let raw = self.take(8)?;
        Ok(u64::from_be_bytes(raw.try_into().expect("slice is 8 bytes")))
    }

    pub fn take_str(&mut self) -> Result<String, DecodeError> {
        let len_raw = self.take(4)?;
        let len = u32::from_be_bytes(len_raw.try_into().expect("slice is 4 bytes")) as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::BadUtf8)
    }

    /// True once every byte has been consumed.
    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn expect_done(&self) -> Result<(), DecodeError> {
        if self.is_done() {
            Ok(())
        } else {
            Err(DecodeError::TrailingBytes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn string_gets_four_byte_length_prefix() {
        let mut c = Canon::new();
        c.put_str("G1");
        assert_eq!(c.finish(), vec![0, 0, 0, 2, b'G', b'1']);
    }

    #[test]
    fn empty_string_is_just_the_prefix() {
        let mut c = Canon::new();
        c.put_str("");
        assert_eq!(c.finish(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn integers_are_eight_bytes_big_endian() {
        let mut c = Canon::new();
        c.put_u64(1);
        assert_eq!(c.finish(), vec![0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn hex_bytes_encode_as_strings() {
        let mut c = Canon::new();
        c.put_hex(&[0xab, 0xcd]);
        assert_eq!(c.finish(), vec![0, 0, 0, 4, b'a', b'b', b'c', b'd']);
    }

    #[test]
    fn multibyte_utf8_length_counts_bytes_not_chars() {
        let mut c = Canon::new();
        c.put_str("é"); // two bytes in UTF-8
        assert_eq!(c.finish()[..4], [0, 0, 0, 2]);
    }

    #[test]
    fn cursor_round_trips_what_canon_writes() {
        let mut c = Canon::new();
        c.put_str("alpha").put_u64(42).put_str("");
        let bytes = c.finish();
        let mut cur = Cursor::new(&bytes);
        assert_eq!(cur.take_str().unwrap(), "alpha");
        assert_eq!(cur.take_u64().unwrap(), 42);
        assert_eq!(cur.take_str().unwrap(), "");
        assert!(cur.expect_done().is_ok());
    }

    #[test]
    fn cursor_reports_truncation_and_trailing_bytes() {
        let mut c = Canon::new();
        c.put_u64(7);
        let bytes = c.finish();
        let mut short = Cursor::new(&bytes[..4]);
        assert_eq!(short.take_u64(), Err(DecodeError::UnexpectedEnd));

        let mut extra = Cursor::new(&bytes);
        let _ = extra.take_u64().unwrap();
        assert!(extra.expect_done().is_ok());
        let under_read = Cursor::new(&bytes);
        assert_eq!(under_read.expect_done(), Err(DecodeError::TrailingBytes));
    }

    #[test]
    fn oversized_length_prefix_is_an_unexpected_end() {
        let bytes = [0xff, 0xff, 0xff, 0xff, b'x'];
        let mut cur = Cursor::new(&bytes);
        assert_eq!(cur.take_str(), Err(DecodeError::UnexpectedEnd));
    }
}
