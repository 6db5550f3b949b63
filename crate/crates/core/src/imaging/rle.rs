//! Run-length token stream: `value: u8` then the run length as unsigned
//! LEB128. Runs are taken over the flattened sample stream and may span rows.

use super::DecodeError;

pub(crate) fn encode(samples: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut iter = samples.iter().copied().peekable();
    while let Some(v) = iter.next() {
        let mut run = 1u64;
        while iter.next_if_eq(&v).is_some() {
            run += 1;
        }
        out.push(v);
        write_leb128(&mut out, run);
    }
    out
}

pub(crate) fn write_leb128(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

/// Expand tokens into exactly `expected` samples.
pub(crate) fn decode(tokens: &[u8], expected: usize) -> Result<Vec<u8>, DecodeError> {
    let mut out = Vec::with_capacity(expected.min(1 << 26));
    let mut pos = 0;
    while pos < tokens.len() {
        let value = tokens[pos];
        pos += 1;
        let mut run = 0u64;
        let mut shift = 0;
        loop {
            let &b = tokens.get(pos).ok_or(DecodeError::BadRunLength("truncated varint"))?;
            pos += 1;
            if shift >= 64 {
                return Err(DecodeError::BadRunLength("varint too long"));
            }
            run |= ((b & 0x7f) as u64) << shift;
            shift += 7;
            if b & 0x80 == 0 {
                break;
            }
        }
        if run == 0 {
            return Err(DecodeError::BadRunLength("zero-length run"));
        }
        if run > (expected - out.len()) as u64 {
            return Err(DecodeError::BadRunLength("runs exceed image size"));
        }
        out.resize(out.len() + run as usize, value);
    }
    if out.len() != expected {
        return Err(DecodeError::BadRunLength("runs shorter than image size"));
    }
    Ok(out)
}
