//! Variable-width LZW as used by GIF image data.
//!
//! Codes are packed least-significant-bit first. The stream opens with a
//! clear code, emits a clear whenever the 4096-entry table fills, and ends
//! with end-of-information.

const MAX_CODES: u16 = 4096;
const MAX_WIDTH: u8 = 12;

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    bits: u8,
}

impl BitWriter {
    fn new() -> Self {
        Self {
            out: Vec::new(),
            acc: 0,
            bits: 0,
        }
    }

    fn write(&mut self, code: u16, width: u8) {
        self.acc |= u32::from(code) << self.bits;
        self.bits += width;
        while self.bits >= 8 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.bits -= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.bits > 0 {
            self.out.push(self.acc as u8);
        }
        self.out
    }
}

/// Bits needed to represent `value` (at least 1).
fn bit_len(value: u16) -> u8 {
    (16 - value.leading_zeros()).max(1) as u8
}

/// Width for the next emitted code. The decoder lags one table entry behind
/// the encoder, so a code is readable at the width that covers `next - 1`.
fn code_width(next: u16) -> u8 {
    bit_len(next - 1).min(MAX_WIDTH)
}

/// Compresses palette indices. `min_code_size` must be in `2..=8` and every
/// index must be below `1 << min_code_size`.
pub fn lzw_encode(indices: &[u8], min_code_size: u8) -> Vec<u8> {
    assert!((2..=8).contains(&min_code_size), "min code size {min_code_size}");
    let clear: u16 = 1 << min_code_size;
    let eoi = clear + 1;
    let first_free = clear + 2;
    debug_assert!(indices.iter().all(|&i| u16::from(i) < clear));

    let mut w = BitWriter::new();
    w.write(clear, min_code_size + 1);
    let Some((&first, rest)) = indices.split_first() else {
        w.write(eoi, min_code_size + 1);
        return w.finish();
    };

    // child[prefix * alphabet + k] is the code for prefix+k, 0 when absent;
    // `used` remembers the filled slots so a clear touches only those
    let alphabet = usize::from(clear);
    let mut child = vec![0u16; usize::from(MAX_CODES) * alphabet];
    let mut used: Vec<usize> = Vec::with_capacity(usize::from(MAX_CODES));
    let mut next = first_free;
    let mut prefix = u16::from(first);
    for &k in rest {
        let slot = usize::from(prefix) * alphabet + usize::from(k);
        let code = child[slot];
        if code != 0 {
            prefix = code;
            continue;
        }
        w.write(prefix, code_width(next));
        child[slot] = next;
        used.push(slot);
        next += 1;
        if next == MAX_CODES {
            w.write(clear, MAX_WIDTH);
            for slot in used.drain(..) {
                child[slot] = 0;
            }
            next = first_free;
        }
        prefix = u16::from(k);
    }
    w.write(prefix, code_width(next));
    // the decoder adds one more entry on reading `prefix`
    w.write(eoi, code_width(next + 1));
    w.finish()
}
