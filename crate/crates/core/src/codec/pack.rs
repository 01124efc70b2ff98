use serde::{Deserialize, Serialize};

use super::CodecError;

/// Fixed-width index stream, packed LSB-first with no per-index padding.
///
/// Code `i` occupies stream bits `[i * bits, (i + 1) * bits)`, where stream bit
/// `k` is bit `k % 8` of byte `k / 8`. Only the final byte is padded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedCodes {
    bits: u32,
    len: usize,
    bytes: Vec<u8>,
}

impl PackedCodes {
    pub fn zeroed(bits: u32, len: usize) -> Self {
        assert!((1..=16).contains(&bits), "code width {bits} outside 1..=16");
        Self {
            bits,
            len,
            bytes: vec![0; (len * bits as usize).div_ceil(8)],
        }
    }

    pub fn from_codes(codes: &[u32], bits: u32) -> Result<Self, CodecError> {
        let mut packed = Self::zeroed(bits, codes.len());
        for (i, &c) in codes.iter().enumerate() {
            packed.set(i, c)?;
        }
        Ok(packed)
    }

    /// Rebuilds a stream from raw bytes, e.g. read from a container.
    pub fn from_bytes(bits: u32, len: usize, bytes: Vec<u8>) -> Result<Self, CodecError> {
        if !(1..=16).contains(&bits) {
            return Err(CodecError::Format(format!(
                "code width {bits} outside 1..=16"
            )));
        }
        let need = (len * bits as usize).div_ceil(8);
        if bytes.len() != need {
            return Err(CodecError::Format(format!(
                "code stream of {len} x {bits}-bit codes needs {need} bytes, found {}",
                bytes.len()
            )));
        }
        Ok(Self { bits, len, bytes })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit_len(&self) -> usize {
        self.len * self.bits as usize
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> u32 {
        debug_assert!(i < self.len);
        let bit = i * self.bits as usize;
        let (byte, shift) = (bit / 8, bit % 8);
        // 16 bits + 7 bits of offset always fits in three bytes.
        let window = match self.bytes.get(byte..byte + 3) {
            Some(w) => u32::from(w[0]) | u32::from(w[1]) << 8 | u32::from(w[2]) << 16,
            None => self.bytes[byte..]
                .iter()
                .enumerate()
                .fold(0, |acc, (k, &b)| acc | u32::from(b) << (8 * k)),
        };
        (window >> shift) & ((1u32 << self.bits) - 1)
    }

    pub fn set(&mut self, i: usize, code: u32) -> Result<(), CodecError> {
        if code >> self.bits != 0 {
            return Err(CodecError::CodeTooWide {
                code,
                bits: self.bits,
            });
        }
        let bit = i * self.bits as usize;
        let (byte, shift) = (bit / 8, bit % 8);
        let mask = ((1u32 << self.bits) - 1) << shift;
        let value = code << shift;
        for (k, b) in self.bytes[byte..].iter_mut().take(3).enumerate() {
            let m = (mask >> (8 * k)) as u8;
            *b = (*b & !m) | ((value >> (8 * k)) as u8 & m);
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn to_vec(&self) -> Vec<u32> {
        self.iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn twelve_bit_codes_share_bytes() {
        let p = PackedCodes::from_codes(&[0xABC, 0x123], 12).unwrap();
        assert_eq!(p.as_bytes(), &[0xBC, 0x3A, 0x12]);
        assert_eq!(p.to_vec(), vec![0xABC, 0x123]);
    }

    #[test]
    fn stream_is_padded_only_at_end() {
        let p = PackedCodes::zeroed(12, 3);
        assert_eq!(p.bit_len(), 36);
        assert_eq!(p.as_bytes().len(), 5);
    }

    #[test]
    fn rejects_codes_wider_than_stream() {
        assert!(matches!(
            PackedCodes::from_codes(&[256], 8),
            Err(CodecError::CodeTooWide { code: 256, bits: 8 })
        ));
    }

    #[test]
    fn from_bytes_checks_length() {
        assert!(PackedCodes::from_bytes(12, 3, vec![0; 4]).is_err());
        assert!(PackedCodes::from_bytes(12, 3, vec![0; 5]).is_ok());
    }

    proptest! {
        #[test]
        fn pack_unpack_identity(bits in 1u32..=16, raw in proptest::collection::vec(any::<u32>(), 0..200)) {
            let codes: Vec<u32> = raw.iter().map(|c| c & ((1 << bits) - 1)).collect();
            let p = PackedCodes::from_codes(&codes, bits).unwrap();
            prop_assert_eq!(p.as_bytes().len(), (codes.len() * bits as usize).div_ceil(8));
            prop_assert_eq!(p.to_vec(), codes);
        }
    }
}
