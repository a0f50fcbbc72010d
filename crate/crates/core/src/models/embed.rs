//! Sinusoidal step embeddings.

/// Interleaved sin/cos features of the integer step, `dim` must be even.
/// Frequency `i` is `10000^(-i/(dim/2))`.
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "embedding dim must be even");
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        let phase = t as f64 * freq;
        out[2 * i] = phase.sin();
        out[2 * i + 1] = phase.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_distinguishes_steps() {
        let a = sinusoidal_embedding(1, 32);
        let b = sinusoidal_embedding(2, 32);
        assert_eq!(a.len(), 32);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
        // t = 0 gives the fixed (0, 1) pattern.
        let z = sinusoidal_embedding(0, 8);
        for i in 0..4 {
            assert_eq!(z[2 * i], 0.0);
            assert_eq!(z[2 * i + 1], 1.0);
        }
    }
}
