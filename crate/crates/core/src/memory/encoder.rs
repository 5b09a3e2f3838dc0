use std::fmt;

use super::MemoryError;

pub const DEFAULT_DIM: usize = 256;

/// Maps text to a fixed-dimension vector. Must be deterministic.
pub trait TextEncoder: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, MemoryError>;
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Signed feature hashing over lower-cased word tokens (weight 1) and padded
/// character trigrams (weight 0.5), L2-normalized. Hashing is FNV-1a so
/// vectors are identical across platforms and runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEncoder {
    dim: usize,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { dim }
    }
}

impl Default for HashingEncoder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

fn fnv1a(prefix: u8, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in std::iter::once(&prefix).chain(bytes) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashingEncoder {
    fn add(&self, v: &mut [f64], prefix: u8, feature: &[u8], weight: f64) {
        let h = fnv1a(prefix, feature);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % self.dim as u64) as usize] += sign * weight;
    }
}

impl TextEncoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MemoryError> {
        let norm = normalize_text(text);
        if norm.is_empty() {
            return Err(MemoryError::EmptyText);
        }
        let lower = norm.to_lowercase();
        let mut v = vec![0.0; self.dim];
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            self.add(&mut v, b'w', word.as_bytes(), 1.0);
        }
        let padded: Vec<char> = std::iter::once(' ').chain(lower.chars()).chain(std::iter::once(' ')).collect();
        let mut buf = String::new();
        for tri in padded.windows(3) {
            buf.clear();
            buf.extend(tri);
            self.add(&mut v, b'c', buf.as_bytes(), 0.5);
        }
        let norm2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm2 > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm2);
        }
        Ok(v)
    }
}
