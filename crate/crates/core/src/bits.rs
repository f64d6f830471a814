//! Fixed-capacity bit strings used as ternary match keys.

use std::fmt;

/// Widest key any table in this crate accepts.
pub const MAX_WIDTH: u16 = 256;

const WORDS: usize = (MAX_WIDTH as usize) / 64;

/// An unsigned bit string of up to [`MAX_WIDTH`] bits.
///
/// Bits are numbered from the least significant end: `words[0]` holds bits
/// 0..64. Keys are assembled most-significant-field first with
/// [`BitsBuilder`], so the first field pushed lands in the top bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bits {
    words: [u64; WORDS],
    width: u16,
}

impl Bits {
    pub fn zero(width: u16) -> Self {
        assert!(width <= MAX_WIDTH, "bit width {width} exceeds {MAX_WIDTH}");
        Bits {
            words: [0; WORDS],
            width,
        }
    }

    pub fn ones(width: u16) -> Self {
        let mut b = Bits::zero(width);
        for i in 0..width {
            b.set(i, true);
        }
        b
    }

    pub fn from_u128(value: u128, width: u16) -> Self {
        let mut b = Bits::zero(width);
        b.words[0] = value as u64;
        b.words[1] = (value >> 64) as u64;
        b.truncate()
    }

    pub fn from_words(words: [u64; WORDS], width: u16) -> Self {
        let b = Bits {
            words,
            width: width.min(MAX_WIDTH),
        };
        b.truncate()
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn words(&self) -> &[u64; WORDS] {
        &self.words
    }

    /// Low 128 bits.
    pub fn to_u128(&self) -> u128 {
        (self.words[0] as u128) | ((self.words[1] as u128) << 64)
    }

    pub fn get(&self, bit: u16) -> bool {
        let (w, b) = (bit as usize / 64, bit % 64);
        self.words[w] >> b & 1 == 1
    }

    pub fn set(&mut self, bit: u16, on: bool) {
        assert!(bit < self.width, "bit {bit} out of range for width {}", self.width);
        let (w, b) = (bit as usize / 64, bit % 64);
        if on {
            self.words[w] |= 1 << b;
        } else {
            self.words[w] &= !(1 << b);
        }
    }

    pub fn and(&self, other: &Bits) -> Bits {
        let mut out = *self;
        for (o, r) in out.words.iter_mut().zip(other.words.iter()) {
            *o &= *r;
        }
        out
    }

    pub fn not(&self) -> Bits {
        let mut out = *self;
        for w in out.words.iter_mut() {
            *w = !*w;
        }
        out.truncate()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// `(self AND mask) == value`, the ternary match predicate.
    pub fn matches(&self, value: &Bits, mask: &Bits) -> bool {
        self.words
            .iter()
            .zip(mask.words.iter())
            .zip(value.words.iter())
            .all(|((k, m), v)| k & m == *v)
    }

    fn truncate(mut self) -> Self {
        for (i, w) in self.words.iter_mut().enumerate() {
            let lo = i as u16 * 64;
            if lo >= self.width {
                *w = 0;
            } else if self.width - lo < 64 {
                *w &= (1u64 << (self.width - lo)) - 1;
            }
        }
        self
    }

    fn shl(&self, n: u16) -> Bits {
        let mut out = Bits::zero(self.width);
        let (ws, bs) = (n as usize / 64, n % 64);
        for i in (0..WORDS).rev() {
            if i < ws {
                continue;
            }
            let src = i - ws;
            let mut v = self.words[src] << bs;
            if bs > 0 && src > 0 {
                v |= self.words[src - 1] >> (64 - bs);
            }
            out.words[i] = v;
        }
        out.truncate()
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bits[{}](0x", self.width)?;
        let nwords = (self.width as usize).div_ceil(64).max(1);
        for i in (0..nwords).rev() {
            write!(f, "{:016x}", self.words[i])?;
        }
        write!(f, ")")
    }
}

/// Appends fields most-significant first, then left-aligns the result.
#[derive(Debug, Clone)]
pub struct BitsBuilder {
    acc: Bits,
    used: u16,
}

impl BitsBuilder {
    pub fn new(width: u16) -> Self {
        BitsBuilder {
            acc: Bits::zero(width),
            used: 0,
        }
    }

    /// Append the low `width` bits of `value`.
    pub fn push(&mut self, value: u64, width: u16) -> &mut Self {
        assert!(width <= 64);
        assert!(
            self.used + width <= self.acc.width,
            "key overflow: {} + {} > {}",
            self.used,
            width,
            self.acc.width
        );
        if width == 0 {
            return self;
        }
        let v = if width == 64 {
            value
        } else {
            value & ((1u64 << width) - 1)
        };
        let mut shifted = self.acc.shl(width);
        shifted.words[0] |= v;
        self.acc = shifted;
        self.used += width;
        self
    }

    pub fn used(&self) -> u16 {
        self.used
    }

    /// Finish, padding with zeros on the right so the first field is at the top.
    pub fn finish(&self) -> Bits {
        self.acc.shl(self.acc.width - self.used)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_left_aligns() {
        let mut b = BitsBuilder::new(128);
        b.push(0x0A00_0001, 32);
        assert_eq!(b.finish().to_u128(), 0x0A00_0001u128 << 96);
    }

    #[test]
    fn builder_concatenates_across_words() {
        let mut b = BitsBuilder::new(160);
        b.push(0xABCD, 16).push(0x5, 8).push(0xDEAD_BEEF, 32);
        let k = b.finish();
        // 56 bits used, 104 zero bits of padding.
        let expect = (0xABCDu128 << 40 | 0x5u128 << 32 | 0xDEAD_BEEFu128) << (104 - 64);
        assert_eq!(k.words()[1] as u128 | (k.words()[2] as u128) << 64, expect);
        assert_eq!(k.words()[0], 0);
    }

    #[test]
    fn ones_and_truncate() {
        let b = Bits::ones(70);
        assert_eq!(b.count_ones(), 70);
        assert_eq!(b.not().count_ones(), 0);
    }

    #[test]
    fn ternary_match() {
        let key = Bits::from_u128(0b1011, 8);
        let mask = Bits::from_u128(0b1100, 8);
        assert!(key.matches(&Bits::from_u128(0b1000, 8), &mask));
        assert!(!key.matches(&Bits::from_u128(0b0100, 8), &mask));
    }
}
