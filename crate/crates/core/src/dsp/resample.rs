//! Polyphase rational resampler with a Kaiser-windowed sinc anti-alias kernel.

use super::filter::{kaiser_beta, kaiser_length, kaiser_window, lowpass_taps, DESIGN_ATTENUATION_DB, TRANSITION_FRACTION};
use super::{dot, reflect_pad};

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Resamples by `up / down` where the factor is the reduced ratio of the
/// output and input rates.
#[derive(Debug, Clone)]
pub struct RationalResampler {
    up: usize,
    down: usize,
    /// One sub-filter per phase, reversed so each output is a contiguous dot
    /// product against the input.
    phases: Vec<Vec<f64>>,
    /// Prototype centre offset, in upsampled samples.
    center: usize,
}

impl RationalResampler {
    pub fn new(input_rate_hz: u32, output_rate_hz: u32) -> Self {
        assert!(input_rate_hz > 0 && output_rate_hz > 0);
        let g = gcd(input_rate_hz as u64, output_rate_hz as u64);
        let up = (output_rate_hz as u64 / g) as usize;
        let down = (input_rate_hz as u64 / g) as usize;
        if up == down {
            return Self {
                up: 1,
                down: 1,
                phases: vec![vec![1.0]],
                center: 0,
            };
        }

        let upsampled_rate = input_rate_hz as f64 * up as f64;
        let cutoff_hz = input_rate_hz.min(output_rate_hz) as f64 / 2.0;
        let transition_hz = TRANSITION_FRACTION * cutoff_hz;
        let len = kaiser_length(DESIGN_ATTENUATION_DB, transition_hz / upsampled_rate);
        let window = kaiser_window(len, kaiser_beta(DESIGN_ATTENUATION_DB));
        let prototype: Vec<f64> = lowpass_taps(cutoff_hz / upsampled_rate, &window)
            .into_iter()
            .map(|t| t * up as f64)
            .collect();

        let per_phase = len.div_ceil(up);
        let phases = (0..up)
            .map(|r| {
                let mut p: Vec<f64> = (0..per_phase)
                    .map(|i| prototype.get(r + i * up).copied().unwrap_or(0.0))
                    .collect();
                p.reverse();
                p
            })
            .collect();
        Self {
            up,
            down,
            phases,
            center: len / 2,
        }
    }

    pub fn ratio(&self) -> (usize, usize) {
        (self.up, self.down)
    }

    pub fn is_identity(&self) -> bool {
        self.up == self.down
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len as f64 * self.up as f64 / self.down as f64).round() as usize
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return input.to_vec();
        }
        let taps = self.phases[0].len();
        let pad = taps + 1;
        let x = reflect_pad(input, pad);
        (0..self.output_len(input.len()))
            .map(|n| {
                let q = n * self.down + self.center;
                let newest = q / self.up;
                let phase = &self.phases[q % self.up];
                // x[j] lives at x[pad + j]
                let end = pad + newest + 1;
                dot(phase, &x[end - taps..end])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ratio_is_reduced() {
        assert_eq!(RationalResampler::new(250_000, 16_000).ratio(), (8, 125));
        assert_eq!(RationalResampler::new(44_100, 16_000).ratio(), (160, 441));
    }

    #[test]
    fn same_rate_is_identity() {
        let r = RationalResampler::new(16_000, 16_000);
        let x = vec![0.1, -0.2, 0.3];
        assert_eq!(r.process(&x), x);
    }

    #[test]
    fn tone_amplitude_and_phase_preserved() {
        let (fin, fout) = (44_100u32, 16_000u32);
        let f = 1_234.0;
        let x: Vec<f64> = (0..44_100).map(|n| (2.0 * PI * f * n as f64 / fin as f64).sin()).collect();
        let y = RationalResampler::new(fin, fout).process(&x);
        assert_eq!(y.len(), 16_000);
        for n in (2_000..14_000).step_by(97) {
            let want = (2.0 * PI * f * n as f64 / fout as f64).sin();
            assert!((y[n] - want).abs() < 2e-3, "n={n}: {} vs {want}", y[n]);
        }
    }

    #[test]
    fn out_of_band_tone_is_suppressed() {
        let fin = 250_000u32;
        let x: Vec<f64> = (0..25_000).map(|n| (2.0 * PI * 50_000.0 * n as f64 / fin as f64).sin()).collect();
        let y = RationalResampler::new(fin, 16_000).process(&x);
        let rms = |v: &[f64]| (v.iter().map(|v| v * v).sum::<f64>() / v.len() as f64).sqrt();
        // reflect padding splatters a little at the edges only
        assert!(rms(&y) < 5e-3, "{}", rms(&y));
        let mid = &y[200..y.len() - 200];
        assert!(rms(mid) < 1e-5, "{}", rms(mid));
    }
}
