//! Deterministic seed derivation, so every random stream is a pure function
//! of the experiment seed and a stream label.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of `base`.
pub fn derive(base: u64, stream: u64) -> u64 {
    mix(mix(base) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Child seed for a named stream.
pub fn derive_named(base: u64, name: &str) -> u64 {
    let h = name.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01B3)
    });
    derive(base, h)
}
