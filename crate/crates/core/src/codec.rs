//! Canonical byte encoding and content hashing.
//!
//! Every top-level encoding starts with a one-byte kind tag, followed by the
//! value body. Integers are little-endian, reals are IEEE-754 binary64
//! little-endian, and sequences carry a `u64` length prefix. Non-finite reals
//! are rejected so that equal values always produce equal bytes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::{ProcessId, ProcessKind};

/// Kind tags prefixing top-level encodings.
pub mod kind {
    pub const PARAM_VECTOR: u8 = 0x01;
    pub const UPDATE: u8 = 0x02;
    pub const CLIENT_SET: u8 = 0x03;
    pub const REWARD_INFO: u8 = 0x04;
    pub const TRANSACTION: u8 = 0x05;
    pub const VOTE_STATEMENT: u8 = 0x06;
    pub const STORE_MSG: u8 = 0x07;
    pub const TASK_PARAMS: u8 = 0x08;
    pub const UPDATE_STATEMENT: u8 = 0x09;
    pub const BLOCK_HEADER: u8 = 0x0a;
    pub const SELECTION_SEED: u8 = 0x0b;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodingError {
    #[error("non-finite real component at position {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("wrong kind tag: expected {expected:#04x}, found {found:#04x}")]
    WrongKind { expected: u8, found: u8 },
    #[error("invalid encoding: {0}")]
    Invalid(&'static str),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

/// A 32-byte SHA-256 digest, rendered as 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HashKey(pub [u8; 32]);

impl HashKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for HashKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for HashKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashKey({}..)", &self.to_hex()[..12])
    }
}

impl FromStr for HashKey {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(HashKey(out))
    }
}

impl Serialize for HashKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for HashKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
    reals: usize,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self { buf: Vec::with_capacity(cap), reals: 0 }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }

    pub fn f64(&mut self, v: f64) -> Result<(), EncodingError> {
        if !v.is_finite() {
            return Err(EncodingError::NonFinite(self.reals));
        }
        self.reals += 1;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    pub fn reals(&mut self, vs: &[f64]) -> Result<(), EncodingError> {
        self.len(vs.len());
        self.buf.reserve(vs.len() * 8);
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    pub fn bytes(&mut self, bytes: &[u8]) {
        self.len(bytes.len());
        self.buf.extend_from_slice(bytes);
    }

    pub fn hash(&mut self, key: &HashKey) {
        self.buf.extend_from_slice(&key.0);
    }

    pub fn process(&mut self, id: ProcessId) {
        self.u8(id.kind.code());
        self.u32(id.index);
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::UnexpectedEnd)?;
        let out = self.bytes.get(self.pos..end).ok_or(DecodeError::UnexpectedEnd)?;
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads a length prefix, rejecting lengths that cannot fit in the
    /// remaining input at `min_item` bytes per element.
    pub fn len(&mut self, min_item: usize) -> Result<usize, DecodeError> {
        let n = self.u64()?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(min_item.max(1) as u64) > remaining && min_item > 0 {
            return Err(DecodeError::UnexpectedEnd);
        }
        usize::try_from(n).map_err(|_| DecodeError::Invalid("length overflow"))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DecodeError::Invalid("non-finite real"))
        }
    }

    pub fn reals(&mut self) -> Result<Vec<f64>, DecodeError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.len(1)?;
        Ok(self.take(n)?.to_vec())
    }

    pub fn hash(&mut self) -> Result<HashKey, DecodeError> {
        Ok(HashKey(self.take(32)?.try_into().unwrap()))
    }

    pub fn process(&mut self) -> Result<ProcessId, DecodeError> {
        let kind = ProcessKind::from_code(self.u8()?).ok_or(DecodeError::Invalid("process kind"))?;
        Ok(ProcessId { kind, index: self.u32()? })
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

/// A protocol value with a canonical byte encoding.
pub trait Canonical {
    const KIND: u8;

    fn encode_body(&self, enc: &mut Encoder) -> Result<(), EncodingError>;

    /// Capacity hint for the encoder.
    fn size_hint(&self) -> usize {
        64
    }
}

pub trait CanonicalDecode: Canonical + Sized {
    fn decode_body(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;
}

pub fn canonical_encode<T: Canonical + ?Sized>(value: &T) -> Result<Vec<u8>, EncodingError> {
    let mut enc = Encoder::with_capacity(value.size_hint() + 1);
    enc.u8(T::KIND);
    value.encode_body(&mut enc)?;
    Ok(enc.into_bytes())
}

pub fn canonical_decode<T: CanonicalDecode>(bytes: &[u8]) -> Result<T, DecodeError> {
    let mut dec = Decoder::new(bytes);
    let found = dec.u8()?;
    if found != T::KIND {
        return Err(DecodeError::WrongKind { expected: T::KIND, found });
    }
    let value = T::decode_body(&mut dec)?;
    dec.finish()?;
    Ok(value)
}

pub fn hash_bytes(bytes: &[u8]) -> HashKey {
    HashKey(Sha256::digest(bytes).into())
}

/// Hash-key of a value: the SHA-256 digest of its canonical encoding.
pub fn hash_value<T: Canonical + ?Sized>(value: &T) -> Result<HashKey, EncodingError> {
    Ok(hash_bytes(&canonical_encode(value)?))
}

/// Hashes a sequence of labelled parts; used for domain-separated derivations.
pub fn hash_parts(parts: &[&[u8]]) -> HashKey {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    HashKey(hasher.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Reals(Vec<f64>);

    impl Canonical for Reals {
        const KIND: u8 = 0x7f;
        fn encode_body(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
            enc.reals(&self.0)
        }
    }

    impl CanonicalDecode for Reals {
        fn decode_body(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
            Ok(Reals(dec.reals()?))
        }
    }

    #[test]
    fn layout_is_tag_length_little_endian() {
        let bytes = canonical_encode(&Reals(vec![1.0])).unwrap();
        let mut expected = vec![0x7f];
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(canonical_encode(&Reals(vec![0.0, f64::NAN])), Err(EncodingError::NonFinite(1)));
        assert!(canonical_encode(&Reals(vec![f64::INFINITY])).is_err());
    }

    #[test]
    fn decode_checks_kind_and_trailing() {
        let mut bytes = canonical_encode(&Reals(vec![2.5, -1.0])).unwrap();
        let back: Reals = canonical_decode(&bytes).unwrap();
        assert_eq!(back.0, vec![2.5, -1.0]);
        bytes.push(0);
        assert_eq!(canonical_decode::<Reals>(&bytes).err(), Some(DecodeError::TrailingBytes(1)));
        bytes[0] = 0x01;
        assert!(matches!(canonical_decode::<Reals>(&bytes), Err(DecodeError::WrongKind { .. })));
    }

    #[test]
    fn huge_length_prefix_is_rejected_without_allocating() {
        let mut enc = Encoder::new();
        enc.u8(0x7f);
        enc.u64(u64::MAX / 2);
        assert_eq!(canonical_decode::<Reals>(&enc.into_bytes()).err(), Some(DecodeError::UnexpectedEnd));
    }

    #[test]
    fn hash_key_hex_round_trip() {
        let key = hash_bytes(b"abc");
        assert_eq!(key.to_hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(key.to_hex().parse::<HashKey>().unwrap(), key);
        let json = serde_json::to_string(&key).unwrap();
        assert_eq!(serde_json::from_str::<HashKey>(&json).unwrap(), key);
    }

    #[test]
    fn hash_parts_separates_boundaries() {
        assert_ne!(hash_parts(&[b"ab", b"c"]), hash_parts(&[b"a", b"bc"]));
    }
}
