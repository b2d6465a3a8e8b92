//! Fixed-width bit patterns, value encodings, popcount, and flit-to-flit
//! transition counting.
//!
//! A bit transition (BT) is a change of a link wire's value between two
//! consecutive flits, '0'→'1' or '1'→'0'. Everything here operates on raw
//! bit patterns; sign and numeric interpretation are irrelevant to the wire.

use serde::{Deserialize, Serialize};

use crate::error::{BtError, Result};

/// Word widths supported by the payload encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WordWidth {
    W8,
    W32,
}

impl WordWidth {
    pub const fn bits(self) -> u32 {
        match self {
            WordWidth::W8 => 8,
            WordWidth::W32 => 32,
        }
    }
}

/// A fixed-width raw bit pattern carrying one weight or input value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitWord {
    width: WordWidth,
    raw: u32,
}

impl BitWord {
    pub fn new(width: WordWidth, raw: u32) -> Result<Self> {
        if width == WordWidth::W8 && raw > 0xFF {
            return Err(BtError::RawOutOfRange {
                raw,
                width: width.bits(),
            });
        }
        Ok(Self { width, raw })
    }

    pub fn zero(width: WordWidth) -> Self {
        Self { width, raw: 0 }
    }

    pub fn width(&self) -> WordWidth {
        self.width
    }

    pub fn raw(&self) -> u32 {
        self.raw
    }

    /// '1'-bit count of the raw pattern.
    pub fn popcount(&self) -> u32 {
        popcount(*self)
    }
}

/// SWAR parallel-reduction popcount, mirroring the hardware counting tree:
/// pairwise bit sums, then nibble, byte, and word folds.
fn swar_popcount_u32(mut v: u32) -> u32 {
    v -= (v >> 1) & 0x5555_5555;
    v = (v & 0x3333_3333) + ((v >> 2) & 0x3333_3333);
    v = (v + (v >> 4)) & 0x0F0F_0F0F;
    v.wrapping_mul(0x0101_0101) >> 24
}

fn swar_popcount_u64(mut v: u64) -> u64 {
    v -= (v >> 1) & 0x5555_5555_5555_5555;
    v = (v & 0x3333_3333_3333_3333) + ((v >> 2) & 0x3333_3333_3333_3333);
    v = (v + (v >> 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    v.wrapping_mul(0x0101_0101_0101_0101) >> 56
}

/// Number of set bits in a word's raw pattern.
pub fn popcount(word: BitWord) -> u32 {
    swar_popcount_u32(word.raw())
}

/// Flit categories used by packetization. `Head` carries routing metadata,
/// `HeadTail` is a single-flit packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlitKind {
    Head,
    Body,
    Tail,
    HeadTail,
}

/// An ordered sequence of same-width words; the unit of link traversal and
/// BT accounting. `pad_mask` marks zero-padded slots so consumers can skip
/// them; padded slots always hold raw 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flit {
    words: Vec<BitWord>,
    kind: FlitKind,
    pad_mask: Vec<bool>,
}

impl Flit {
    pub fn new(words: Vec<BitWord>, kind: FlitKind, pad_mask: Vec<bool>) -> Result<Self> {
        if let Some(first) = words.first() {
            let w = first.width();
            for word in &words {
                if word.width() != w {
                    return Err(BtError::WidthMismatch {
                        expected: w.bits(),
                        got: word.width().bits(),
                    });
                }
            }
        }
        if pad_mask.len() != words.len() {
            return Err(BtError::LengthMismatch {
                left: pad_mask.len(),
                right: words.len(),
            });
        }
        for (word, &pad) in words.iter().zip(&pad_mask) {
            if pad && word.raw() != 0 {
                return Err(BtError::RawOutOfRange {
                    raw: word.raw(),
                    width: word.width().bits(),
                });
            }
        }
        Ok(Self {
            words,
            kind,
            pad_mask,
        })
    }

    /// All-payload flit with no padding.
    pub fn from_words(words: Vec<BitWord>, kind: FlitKind) -> Result<Self> {
        let pad = vec![false; words.len()];
        Self::new(words, kind, pad)
    }

    pub fn words(&self) -> &[BitWord] {
        &self.words
    }

    pub fn kind(&self) -> FlitKind {
        self.kind
    }

    pub fn set_kind(&mut self, kind: FlitKind) {
        self.kind = kind;
    }

    pub fn pad_mask(&self) -> &[bool] {
        &self.pad_mask
    }

    pub fn word_width(&self) -> Option<WordWidth> {
        self.words.first().map(|w| w.width())
    }

    pub fn total_bits(&self) -> u32 {
        self.words
            .iter()
            .map(|w| w.width().bits())
            .sum()
    }

    /// '1'-bit counts per slot.
    pub fn counts(&self) -> Vec<u32> {
        self.words.iter().map(|w| w.popcount()).collect()
    }

    /// Rebuild with the same kind from permuted words and pad mask.
    pub(crate) fn with_layout(&self, words: Vec<BitWord>, pad_mask: Vec<bool>) -> Result<Self> {
        Self::new(words, self.kind, pad_mask)
    }

    /// Pack the words into the on-wire pattern: word `i` occupies bits
    /// `[i*w, (i+1)*w)`, LSB-first within 64-bit limbs.
    pub fn to_pattern(&self) -> Pattern {
        let total = self.total_bits();
        let mut limbs = vec![0u64; (total as usize).div_ceil(64)];
        let mut offset = 0usize;
        for word in &self.words {
            let w = word.width().bits() as usize;
            let raw = word.raw() as u64;
            let limb = offset / 64;
            let shift = offset % 64;
            limbs[limb] |= raw << shift;
            if shift + w > 64 {
                limbs[limb + 1] |= raw >> (64 - shift);
            }
            offset += w;
        }
        Pattern { bits: total, limbs }
    }
}

/// A raw link-width bit pattern (what the wires actually hold).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    bits: u32,
    limbs: Vec<u64>,
}

impl Pattern {
    pub fn zeros(bits: u32) -> Self {
        Self {
            bits,
            limbs: vec![0u64; (bits as usize).div_ceil(64)],
        }
    }

    pub fn from_limbs(bits: u32, limbs: Vec<u64>) -> Self {
        debug_assert_eq!(limbs.len(), (bits as usize).div_ceil(64));
        Self { bits, limbs }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn limbs(&self) -> &[u64] {
        &self.limbs
    }

    pub fn ones(&self) -> u64 {
        self.limbs.iter().map(|&l| swar_popcount_u64(l)).sum()
    }

    /// Toggled wire count between two equal-width patterns.
    pub fn transitions_to(&self, next: &Pattern) -> Result<u64> {
        if self.bits != next.bits {
            return Err(BtError::WidthMismatch {
                expected: self.bits,
                got: next.bits,
            });
        }
        Ok(self
            .limbs
            .iter()
            .zip(&next.limbs)
            .map(|(&a, &b)| swar_popcount_u64(a ^ b))
            .sum())
    }
}

/// Bit transitions between two consecutive flits of equal total width:
/// the popcount of the XOR of their wire patterns.
pub fn bit_transitions(prev: &Flit, next: &Flit) -> Result<u64> {
    prev.to_pattern().transitions_to(&next.to_pattern())
}

/// Standard single-precision interchange pattern: 1 sign, 8 exponent,
/// 23 mantissa bits. Non-finite inputs are rejected.
pub fn encode_float32(value: f32) -> Result<BitWord> {
    if !value.is_finite() {
        return Err(BtError::NonFinite);
    }
    BitWord::new(WordWidth::W32, value.to_bits())
}

/// Inverse of [`encode_float32`] for round-trip checks.
pub fn decode_float32(word: BitWord) -> f32 {
    f32::from_bits(word.raw())
}

/// Signed two's-complement fixed-point quantization: round(value/scale),
/// half away from zero, saturated to [-128, 127], reinterpreted as the
/// 8-bit raw pattern. Saturates, never overflows.
pub fn quantize_fixed8(value: f32, scale: f32) -> BitWord {
    assert!(scale > 0.0, "quantization scale must be positive");
    let q = (value as f64 / scale as f64).round();
    let q = q.clamp(-128.0, 127.0) as i8;
    BitWord {
        width: WordWidth::W8,
        raw: (q as u8) as u32,
    }
}

/// Per-link toggle and traffic accounting. The link holds its last value
/// between traversals; a fresh link idles at all-zero.
#[derive(Debug, Clone)]
pub struct LinkStatsCounter {
    toggles: u64,
    flits_seen: u64,
    prev_bits: Pattern,
}

impl LinkStatsCounter {
    pub fn new(link_width: u32) -> Self {
        Self {
            toggles: 0,
            flits_seen: 0,
            prev_bits: Pattern::zeros(link_width),
        }
    }

    pub fn toggles(&self) -> u64 {
        self.toggles
    }

    pub fn flits_seen(&self) -> u64 {
        self.flits_seen
    }

    pub fn prev_bits(&self) -> &Pattern {
        &self.prev_bits
    }

    pub fn link_width(&self) -> u32 {
        self.prev_bits.bits()
    }

    /// Accumulate one traversal: compare against the previous pattern,
    /// then hold the new one.
    pub fn record_pattern(&mut self, pattern: &Pattern) -> Result<()> {
        let t = self.prev_bits.transitions_to(pattern)?;
        self.toggles += t;
        self.prev_bits.limbs.copy_from_slice(&pattern.limbs);
        self.flits_seen += 1;
        Ok(())
    }
}

/// Record one flit traversal on a link counter. Idle cycles cause no
/// toggles; the first flit on a virgin link counts against all-zero.
pub fn record_link_traversal(counter: &mut LinkStatsCounter, flit: &Flit) -> Result<()> {
    let pattern = flit.to_pattern();
    if pattern.bits() != counter.link_width() {
        return Err(BtError::WidthMismatch {
            expected: counter.link_width(),
            got: pattern.bits(),
        });
    }
    counter.record_pattern(&pattern)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive per-bit loop; the oracle the SWAR tree is checked against.
    fn popcount_loop(mut v: u32) -> u32 {
        let mut n = 0;
        while v != 0 {
            n += v & 1;
            v >>= 1;
        }
        n
    }

    fn w8(raw: u32) -> BitWord {
        BitWord::new(WordWidth::W8, raw).unwrap()
    }

    fn w32(raw: u32) -> BitWord {
        BitWord::new(WordWidth::W32, raw).unwrap()
    }

    #[test]
    fn popcount_zero_and_all_ones() {
        assert_eq!(popcount(w8(0x00)), 0);
        assert_eq!(popcount(w32(0xFFFF_FFFF)), 32);
    }

    #[test]
    fn popcount_0xb5_matches_loop_oracle() {
        assert_eq!(popcount_loop(0xB5), 5);
        assert_eq!(popcount(w8(0xB5)), 5);
    }

    #[test]
    fn popcount_exhaustive_8bit_against_loop() {
        for raw in 0..=0xFFu32 {
            assert_eq!(popcount(w8(raw)), popcount_loop(raw), "raw={raw:#x}");
        }
    }

    #[test]
    fn popcount_random_32bit_against_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xB17);
        for _ in 0..100_000 {
            let raw: u32 = rng.gen();
            assert_eq!(popcount(w32(raw)), popcount_loop(raw), "raw={raw:#x}");
        }
    }

    #[test]
    fn bitword_rejects_oversized_raw() {
        assert!(BitWord::new(WordWidth::W8, 0x100).is_err());
        assert!(BitWord::new(WordWidth::W8, 0xFF).is_ok());
    }

    #[test]
    fn xor_count_of_small_patterns() {
        // 1010 vs 0110: XOR = 1100, two transitions.
        let a = Pattern::from_limbs(4, vec![0b1010]);
        let b = Pattern::from_limbs(4, vec![0b0110]);
        assert_eq!(a.transitions_to(&b).unwrap(), 2);
    }

    #[test]
    fn bit_transitions_identity_and_full_toggle() {
        let zeros = Flit::from_words(vec![w8(0); 16], FlitKind::Body).unwrap();
        let ones = Flit::from_words(vec![w8(0xFF); 16], FlitKind::Body).unwrap();
        assert_eq!(bit_transitions(&zeros, &zeros).unwrap(), 0);
        assert_eq!(bit_transitions(&zeros, &ones).unwrap(), 128);
    }

    #[test]
    fn bit_transitions_rejects_width_mismatch() {
        let a = Flit::from_words(vec![w8(0); 4], FlitKind::Body).unwrap();
        let b = Flit::from_words(vec![w8(0); 8], FlitKind::Body).unwrap();
        assert_eq!(
            bit_transitions(&a, &b),
            Err(BtError::WidthMismatch {
                expected: 32,
                got: 64
            })
        );
    }

    #[test]
    fn pattern_packing_places_words_across_limbs() {
        let mut words = vec![w32(0); 10];
        words[2] = w32(0xDEAD_BEEF); // bit offset 64: low half of limb 1
        words[3] = w32(0x1);
        let flit = Flit::from_words(words, FlitKind::Body).unwrap();
        let p = flit.to_pattern();
        assert_eq!(p.limbs()[0], 0);
        assert_eq!(p.limbs()[1], (1u64 << 32) | 0xDEAD_BEEF);
        assert_eq!(p.ones(), popcount_loop(0xDEAD_BEEF) as u64 + 1);
    }

    #[test]
    fn encode_float32_known_patterns() {
        assert_eq!(encode_float32(1.0).unwrap().raw(), 0x3F80_0000);
        // Oracle: host float facilities.
        assert_eq!((-2.5f32).to_bits(), 0xC020_0000);
        assert_eq!(encode_float32(-2.5).unwrap().raw(), 0xC020_0000);
        assert_eq!(encode_float32(1.0).unwrap().popcount(), 7);
    }

    #[test]
    fn encode_float32_rejects_non_finite() {
        assert_eq!(encode_float32(f32::NAN), Err(BtError::NonFinite));
        assert_eq!(encode_float32(f32::INFINITY), Err(BtError::NonFinite));
    }

    #[test]
    fn encode_float32_round_trips() {
        for v in [0.0f32, 1.0, -2.5, 3.141592, -1e-20, 1e20] {
            let word = encode_float32(v).unwrap();
            assert_eq!(decode_float32(word), v);
        }
    }

    #[test]
    fn quantize_fixed8_examples() {
        assert_eq!(quantize_fixed8(0.0, 1.0).raw(), 0x00);
        assert_eq!(quantize_fixed8(0.0, 0.123).raw(), 0x00);
        // round(0.5 / 0.01) = 50
        assert_eq!(quantize_fixed8(0.5, 0.01).raw(), 0x32);
        // -1000 saturates to -128
        assert_eq!(quantize_fixed8(-10.0, 0.01).raw(), 0x80);
        assert_eq!(quantize_fixed8(10.0, 0.01).raw(), 0x7F);
    }

    #[test]
    fn quantize_fixed8_rounds_half_away_from_zero() {
        assert_eq!(quantize_fixed8(0.5, 1.0).raw(), 1);
        assert_eq!(quantize_fixed8(-0.5, 1.0).raw(), 0xFF); // -1
        assert_eq!(quantize_fixed8(1.5, 1.0).raw(), 2);
    }

    #[test]
    fn quantize_fixed8_monotone_in_value() {
        let scale = 0.037;
        let mut prev = i8::MIN;
        let mut v = -6.0f32;
        while v <= 6.0 {
            let q = quantize_fixed8(v, scale).raw() as u8 as i8;
            assert!(q >= prev, "not monotone at v={v}");
            prev = q;
            v += 0.01;
        }
    }

    #[test]
    fn flit_rejects_mixed_widths_and_dirty_padding() {
        let mixed = Flit::from_words(vec![w8(1), w32(1)], FlitKind::Body);
        assert!(mixed.is_err());
        let dirty = Flit::new(vec![w8(3)], FlitKind::Body, vec![true]);
        assert!(dirty.is_err());
    }

    #[test]
    fn link_counter_first_flit_counts_against_zero() {
        let flit = Flit::from_words(vec![w8(0xB5); 4], FlitKind::Body).unwrap();
        let mut counter = LinkStatsCounter::new(32);
        record_link_traversal(&mut counter, &flit).unwrap();
        assert_eq!(counter.toggles(), 20); // 4 * popcount(0xB5)
        assert_eq!(counter.flits_seen(), 1);
    }

    #[test]
    fn link_counter_same_flit_adds_nothing() {
        let flit = Flit::from_words(vec![w8(0x0F); 4], FlitKind::Body).unwrap();
        let mut counter = LinkStatsCounter::new(32);
        record_link_traversal(&mut counter, &flit).unwrap();
        let after_first = counter.toggles();
        record_link_traversal(&mut counter, &flit).unwrap();
        assert_eq!(counter.toggles(), after_first);
        assert_eq!(counter.flits_seen(), 2);
    }

    #[test]
    fn link_counter_alternating_pattern_arithmetic() {
        // k traversals alternating all-zero/all-one on a 128-bit link:
        // toggles = 128*(k-1) + popcount(first).
        let zeros = Flit::from_words(vec![w8(0); 16], FlitKind::Body).unwrap();
        let ones = Flit::from_words(vec![w8(0xFF); 16], FlitKind::Body).unwrap();
        for (first, second, first_pop) in [(&zeros, &ones, 0u64), (&ones, &zeros, 128u64)] {
            let k = 7u64;
            let mut counter = LinkStatsCounter::new(128);
            for i in 0..k {
                let flit = if i % 2 == 0 { first } else { second };
                record_link_traversal(&mut counter, flit).unwrap();
            }
            assert_eq!(counter.toggles(), 128 * (k - 1) + first_pop);
        }
    }

    #[test]
    fn link_counter_rejects_width_mismatch() {
        let flit = Flit::from_words(vec![w8(0); 4], FlitKind::Body).unwrap();
        let mut counter = LinkStatsCounter::new(128);
        assert!(record_link_traversal(&mut counter, &flit).is_err());
    }

    #[test]
    fn toggles_bounded_by_flits_times_width() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut counter = LinkStatsCounter::new(64);
        for _ in 0..50 {
            let words = (0..8).map(|_| w8(rng.gen_range(0..256))).collect();
            let flit = Flit::from_words(words, FlitKind::Body).unwrap();
            record_link_traversal(&mut counter, &flit).unwrap();
        }
        assert!(counter.toggles() <= counter.flits_seen() * 64);
    }
}
