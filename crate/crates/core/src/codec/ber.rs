//! The BER subset used by the GOOSE APDU: single-octet tags, definite
//! lengths (short form, or long form with one or two length octets) and
//! minimal-length unsigned integers.
//!
//! The decoder only accepts the canonical form the encoder emits, so a
//! successfully decoded APDU re-encodes to the same octets.

/// Appends a BER definite length.
pub(crate) fn put_len(out: &mut Vec<u8>, len: usize) {
    if len < 0x80 {
        out.push(len as u8);
    } else if len <= 0xFF {
        out.extend_from_slice(&[0x81, len as u8]);
    } else {
        debug_assert!(len <= 0xFFFF);
        out.extend_from_slice(&[0x82, (len >> 8) as u8, len as u8]);
    }
}

pub(crate) fn put_tlv(out: &mut Vec<u8>, tag: u8, value: &[u8]) {
    out.push(tag);
    put_len(out, value.len());
    out.extend_from_slice(value);
}

/// Unsigned integer as a minimal two's-complement INTEGER (a leading zero
/// octet is kept when the top bit of the first significant octet is set).
pub(crate) fn put_uint(out: &mut Vec<u8>, tag: u8, value: u64) {
    let bytes = value.to_be_bytes();
    let first = bytes.iter().position(|&b| b != 0).unwrap_or(7);
    let significant = &bytes[first..];
    out.push(tag);
    if significant[0] & 0x80 != 0 {
        put_len(out, significant.len() + 1);
        out.push(0);
    } else {
        put_len(out, significant.len());
    }
    out.extend_from_slice(significant);
}

pub(crate) fn put_bool(out: &mut Vec<u8>, tag: u8, value: bool) {
    out.extend_from_slice(&[tag, 1, value as u8]);
}

/// Why a BER element was rejected.
pub(crate) type BerError = &'static str;

/// Cursor over a BER-encoded region.
pub(crate) struct BerReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BerReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        BerReader { buf, pos: 0 }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn byte(&mut self) -> Result<u8, BerError> {
        let b = *self.buf.get(self.pos).ok_or("element header runs past its container")?;
        self.pos += 1;
        Ok(b)
    }

    fn len(&mut self) -> Result<usize, BerError> {
        let first = self.byte()?;
        match first {
            0x00..=0x7F => Ok(first as usize),
            0x81 => {
                let n = self.byte()? as usize;
                if n < 0x80 {
                    return Err("non-minimal long-form length");
                }
                Ok(n)
            }
            0x82 => {
                let n = ((self.byte()? as usize) << 8) | self.byte()? as usize;
                if n <= 0xFF {
                    return Err("non-minimal long-form length");
                }
                Ok(n)
            }
            0x80 => Err("indefinite length is not supported"),
            _ => Err("length form too long"),
        }
    }

    /// Reads one element and returns `(tag, contents)`.
    pub(crate) fn tlv(&mut self) -> Result<(u8, &'a [u8]), BerError> {
        let tag = self.byte()?;
        let len = self.len()?;
        let end = self.pos.checked_add(len).ok_or("length overflow")?;
        let value = self
            .buf
            .get(self.pos..end)
            .ok_or("element contents run past their container")?;
        self.pos = end;
        Ok((tag, value))
    }

    /// Reads one element and checks it carries the expected tag.
    pub(crate) fn expect(&mut self, tag: u8, what: &'static str) -> Result<&'a [u8], BerError> {
        let (got, value) = self.tlv()?;
        if got != tag {
            return Err(what);
        }
        Ok(value)
    }
}

pub(crate) fn parse_uint(value: &[u8], max_octets: usize) -> Result<u64, BerError> {
    match value {
        [] => Err("empty INTEGER"),
        [first, ..] if first & 0x80 != 0 => Err("negative INTEGER in unsigned field"),
        [0, second, ..] if second & 0x80 == 0 => Err("non-minimal INTEGER"),
        _ => {
            let significant = if value[0] == 0 { &value[1..] } else { value };
            if significant.len() > max_octets {
                return Err("INTEGER out of range");
            }
            Ok(significant.iter().fold(0u64, |acc, &b| (acc << 8) | b as u64))
        }
    }
}

pub(crate) fn parse_bool(value: &[u8]) -> Result<bool, BerError> {
    match value {
        [0x00] => Ok(false),
        [0x01] => Ok(true),
        [_] => Err("BOOLEAN octet must be 0x00 or 0x01"),
        _ => Err("BOOLEAN must be one octet"),
    }
}
