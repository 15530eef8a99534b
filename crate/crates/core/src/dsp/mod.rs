//! Filter design, zero-phase filtering and rational resampling.

pub mod filter;
pub mod resample;

pub use filter::{dc_block_zero_phase, FirFilter, Response};
pub use resample::RationalResampler;

/// Symmetric (reflect, edge sample not repeated) padding by `pad` samples on
/// each side. Signals shorter than `pad` are reflected repeatedly.
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return vec![0.0; 2 * pad];
    }
    if n == 1 {
        return vec![x[0]; n + 2 * pad];
    }
    let period = 2 * (n - 1);
    (0..n + 2 * pad)
        .map(|i| {
            let k = (i as isize - pad as isize).rem_euclid(period as isize) as usize;
            x[if k < n { k } else { period - k }]
        })
        .collect()
}

/// Dot product with independent accumulators so the loop vectorises.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
