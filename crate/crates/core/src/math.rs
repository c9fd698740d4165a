//! Float helpers routed through `libm` so results are identical with or
//! without `std`.

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// FNV-1a over bytes. Used to derive per-tensor and per-document seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes a base seed with a stream discriminator.
pub fn derive_seed(seed: u64, stream: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&seed.to_le_bytes());
    fnv1a(&buf) ^ fnv1a(stream).rotate_left(17)
}
