//! Bit-level views of IEEE-754 binary32 words.
//!
//! Bit index 0 is the least significant bit of the word, bit 31 the sign.

const EXPONENT_MASK: u32 = 0x7F80_0000;
const MANTISSA_MASK: u32 = 0x007F_FFFF;

/// Builds the XOR mask for a set of bit indices. Repeated indices cancel.
///
/// Panics if an index is not in `0..32`.
pub fn bit_mask(bits: &[u8]) -> u32 {
    bits.iter().fold(0u32, |mask, &b| {
        assert!(b < 32, "bit index {b} out of range for a 32-bit word");
        mask ^ (1u32 << b)
    })
}

/// Flips the given bits of a binary32 bit pattern.
pub fn flip_bits_in_word(word: u32, bits: &[u8]) -> u32 {
    word ^ bit_mask(bits)
}

/// Flips the given bits of an `f32`, returning the perturbed value.
pub fn flip_bits(value: f32, bits: &[u8]) -> f32 {
    f32::from_bits(flip_bits_in_word(value.to_bits(), bits))
}

/// IEEE-754 category of a binary32 value.
///
/// `Finite` means a normal, non-zero number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueClass {
    Finite,
    NaN,
    Infinite,
    Subnormal,
    Zero,
}

impl ValueClass {
    pub const ALL: [ValueClass; 5] = [
        ValueClass::Finite,
        ValueClass::NaN,
        ValueClass::Infinite,
        ValueClass::Subnormal,
        ValueClass::Zero,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueClass::Finite => "finite",
            ValueClass::NaN => "nan",
            ValueClass::Infinite => "infinite",
            ValueClass::Subnormal => "subnormal",
            ValueClass::Zero => "zero",
        }
    }
}

pub fn classify_word(word: u32) -> ValueClass {
    let exponent = word & EXPONENT_MASK;
    let mantissa = word & MANTISSA_MASK;
    match (exponent, mantissa) {
        (EXPONENT_MASK, 0) => ValueClass::Infinite,
        (EXPONENT_MASK, _) => ValueClass::NaN,
        (0, 0) => ValueClass::Zero,
        (0, _) => ValueClass::Subnormal,
        _ => ValueClass::Finite,
    }
}

pub fn classify(value: f32) -> ValueClass {
    classify_word(value.to_bits())
}
