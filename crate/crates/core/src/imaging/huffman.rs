//! Canonical Huffman coding over a byte alphabet.
//!
//! Codes are assigned in order of (length, symbol) and written MSB first;
//! bits are packed into bytes MSB first.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::DecodeError;

pub(crate) const MAX_CODE_LEN: u8 = 64;

/// Optimal code lengths for `freqs`; unused symbols get length 0.
/// A lone symbol gets length 1 so the payload is never empty.
pub(crate) fn code_lengths(freqs: &[u64; 256]) -> [u8; 256] {
    let mut lengths = [0u8; 256];
    let used: Vec<usize> = (0..256).filter(|&s| freqs[s] > 0).collect();
    match used.len() {
        0 => return lengths,
        1 => {
            lengths[used[0]] = 1;
            return lengths;
        }
        _ => {}
    }
    // Nodes 0..256 are leaves; internal nodes are appended. Ties on weight
    // are broken by node id, so the result is deterministic.
    let mut parent: Vec<usize> = vec![usize::MAX; 256];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = used.iter().map(|&s| Reverse((freqs[s], s))).collect();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((wa + wb, id)));
    }
    for &s in &used {
        let mut depth = 0u8;
        let mut n = s;
        while parent[n] != usize::MAX {
            n = parent[n];
            depth += 1;
        }
        lengths[s] = depth;
    }
    lengths
}

/// Canonical codes for a length table; `codes[s]` is meaningful where `lengths[s] > 0`.
pub(crate) fn canonical_codes(lengths: &[u8; 256]) -> [u64; 256] {
    let mut order: Vec<usize> = (0..256).filter(|&s| lengths[s] > 0).collect();
    order.sort_by_key(|&s| (lengths[s], s));
    let mut codes = [0u64; 256];
    let mut code = 0u64;
    let mut prev_len = 0u8;
    for (i, &s) in order.iter().enumerate() {
        if i > 0 {
            code += 1;
        }
        code <<= lengths[s] - prev_len;
        prev_len = lengths[s];
        codes[s] = code;
    }
    codes
}

/// Checks that a length table describes a complete prefix code (or the
/// single-symbol special case).
pub(crate) fn validate_lengths(lengths: &[u8; 256]) -> Result<(), DecodeError> {
    let used: Vec<u8> = lengths.iter().copied().filter(|&l| l > 0).collect();
    if used.is_empty() {
        return Err(DecodeError::BadHuffmanTable("no symbols"));
    }
    if used.iter().any(|&l| l > MAX_CODE_LEN) {
        return Err(DecodeError::BadHuffmanTable("code length exceeds 64"));
    }
    if used.len() == 1 {
        return if used[0] == 1 {
            Ok(())
        } else {
            Err(DecodeError::BadHuffmanTable("single symbol must have length 1"))
        };
    }
    // Kraft sum in units of 2^-64, using u128 to avoid overflow.
    let kraft: u128 = used.iter().map(|&l| 1u128 << (64 - l as u32)).sum();
    match kraft.cmp(&(1u128 << 64)) {
        std::cmp::Ordering::Equal => Ok(()),
        std::cmp::Ordering::Greater => Err(DecodeError::BadHuffmanTable("over-subscribed")),
        std::cmp::Ordering::Less => Err(DecodeError::BadHuffmanTable("incomplete code")),
    }
}

#[derive(Default)]
pub(crate) struct BitWriter {
    bytes: Vec<u8>,
    acc: u8,
    filled: u8,
    bits: u64,
}

impl BitWriter {
    pub(crate) fn write(&mut self, code: u64, len: u8) {
        for i in (0..len).rev() {
            self.acc = (self.acc << 1) | ((code >> i) & 1) as u8;
            self.filled += 1;
            if self.filled == 8 {
                self.bytes.push(self.acc);
                self.acc = 0;
                self.filled = 0;
            }
        }
        self.bits += len as u64;
    }

    /// Returns the packed bytes (final byte zero-padded) and the bit count.
    pub(crate) fn finish(mut self) -> (Vec<u8>, u64) {
        if self.filled > 0 {
            self.bytes.push(self.acc << (8 - self.filled));
        }
        (self.bytes, self.bits)
    }
}

pub(crate) fn encode(data: &[u8], lengths: &[u8; 256]) -> (Vec<u8>, u64) {
    let codes = canonical_codes(lengths);
    let mut w = BitWriter::default();
    for &b in data {
        w.write(codes[b as usize], lengths[b as usize]);
    }
    w.finish()
}

/// Decode exactly `bit_count` bits of `payload` with a validated length table.
pub(crate) fn decode(payload: &[u8], bit_count: u64, lengths: &[u8; 256]) -> Result<Vec<u8>, DecodeError> {
    let available = payload.len() as u64 * 8;
    if bit_count > available {
        return Err(DecodeError::PayloadOverrun {
            needed: bit_count,
            available,
        });
    }
    let max_len = *lengths.iter().max().unwrap() as usize;
    // Per length: count of codes, first canonical code, offset into `symbols`.
    let mut count = vec![0u64; max_len + 1];
    for &l in lengths.iter().filter(|&&l| l > 0) {
        count[l as usize] += 1;
    }
    let mut symbols: Vec<u8> = (0..=255u8).filter(|&s| lengths[s as usize] > 0).collect();
    symbols.sort_by_key(|&s| (lengths[s as usize], s));
    let mut first = vec![0u64; max_len + 1];
    let mut offset = vec![0usize; max_len + 1];
    let (mut code, mut idx) = (0u64, 0usize);
    for len in 1..=max_len {
        code <<= 1;
        first[len] = code;
        offset[len] = idx;
        code += count[len];
        idx += count[len] as usize;
    }

    let mut out = Vec::new();
    let (mut code, mut len) = (0u64, 0usize);
    for pos in 0..bit_count {
        let bit = (payload[(pos / 8) as usize] >> (7 - (pos % 8))) & 1;
        code = (code << 1) | bit as u64;
        len += 1;
        if len > max_len {
            return Err(DecodeError::BadHuffmanTable("code not in table"));
        }
        let rel = code.wrapping_sub(first[len]);
        if code >= first[len] && rel < count[len] {
            out.push(symbols[offset[len] + rel as usize]);
            code = 0;
            len = 0;
        }
    }
    if len != 0 {
        return Err(DecodeError::PayloadOverrun {
            needed: bit_count + 1,
            available: bit_count,
        });
    }
    Ok(out)
}
