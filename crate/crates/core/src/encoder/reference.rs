//! Built-in log-mel encoder standing in for a frozen pre-trained model.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Encoder, FrameEmbeddings};
use crate::band::BandSignal;
use crate::error::{Error, Result};

pub const MEL_BANDS: usize = 64;
pub const WINDOW_S: f64 = 0.025;
pub const HOP_S: f64 = 0.010;
pub const LOG_FLOOR: f64 = 1e-10;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// 64-band HTK log-mel spectrogram over `0..f_m/2` with 25 ms Hann windows
/// and a 10 ms hop.
#[derive(Clone)]
pub struct ReferenceEncoder {
    sample_rate_hz: u32,
    window: Vec<f64>,
    hop: usize,
    n_fft: usize,
    /// Sparse triangular filters as `(first_bin, weights)`.
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ReferenceEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReferenceEncoder")
            .field("sample_rate_hz", &self.sample_rate_hz)
            .field("window", &self.window.len())
            .field("hop", &self.hop)
            .field("n_fft", &self.n_fft)
            .finish()
    }
}

impl ReferenceEncoder {
    pub fn new(sample_rate_hz: u32) -> Self {
        let fs = sample_rate_hz as f64;
        let win_len = ((WINDOW_S * fs).round() as usize).max(2);
        let hop = ((HOP_S * fs).round() as usize).max(1);
        let n_fft = win_len.next_power_of_two();
        // periodic Hann
        let window = (0..win_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / win_len as f64).cos())
            .collect();

        let bins = n_fft / 2 + 1;
        let top = hz_to_mel(fs / 2.0);
        let edges: Vec<f64> = (0..MEL_BANDS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (MEL_BANDS + 1) as f64))
            .collect();
        let filters = (0..MEL_BANDS)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * fs / n_fft as f64;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(first, _)) => (first, weights.iter().map(|&(_, w)| w).collect()),
                    None => {
                        // narrower than a bin: take the bin nearest the centre
                        let k = ((mid * n_fft as f64 / fs).round() as usize).min(bins - 1);
                        (k, vec![1.0])
                    }
                }
            })
            .collect();

        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Self {
            sample_rate_hz,
            window,
            hop,
            n_fft,
            filters,
            fft,
        }
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn dim(&self) -> usize {
        MEL_BANDS
    }

    /// Frames produced for `len` samples; short inputs are zero-padded to
    /// one frame.
    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.window.len() {
            1
        } else {
            1 + (len - self.window.len()) / self.hop
        }
    }
}

impl Encoder for ReferenceEncoder {
    fn id(&self) -> String {
        format!("logmel{MEL_BANDS}@{}", self.sample_rate_hz)
    }

    fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    fn context_samples(&self) -> usize {
        self.sample_rate_hz as usize
    }

    fn min_samples(&self) -> usize {
        self.window.len()
    }

    fn encode(&self, band: &BandSignal) -> Result<FrameEmbeddings> {
        if band.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::RateMismatch {
                expected: self.sample_rate_hz,
                actual: band.sample_rate_hz,
            });
        }
        let x = &band.samples;
        let t_count = self.frame_count(x.len());
        let mut out = Vec::with_capacity(t_count * MEL_BANDS);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        for t in 0..t_count {
            let start = t * self.hop;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, w) in self.window.iter().enumerate() {
                buf[i].re = x.get(start + i).copied().unwrap_or(0.0) * w;
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (first, weights) in &self.filters {
                let e: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
                out.push(e.max(LOG_FLOOR).ln());
            }
        }
        FrameEmbeddings::new(
            out,
            MEL_BANDS,
            self.sample_rate_hz as f64 / self.hop as f64,
            band.band_index,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encode;

    fn band(samples: Vec<f64>) -> BandSignal {
        BandSignal {
            band_index: 1,
            samples,
            sample_rate_hz: 16_000,
        }
    }

    #[test]
    fn one_second_gives_98_frames_of_64() {
        let enc = ReferenceEncoder::new(16_000);
        let x: Vec<f64> = (0..16_000).map(|n| (n as f64 * 0.3).sin()).collect();
        let f = encode(&band(x), &enc).unwrap();
        // (16000 - 400) / 160 + 1
        assert_eq!(f.frame_count(), 98);
        assert_eq!(f.dim(), 64);
        assert_eq!(f.frame_rate_hz, 100.0);
    }

    #[test]
    fn silence_sits_on_the_log_floor() {
        let enc = ReferenceEncoder::new(16_000);
        let f = encode(&band(vec![0.0; 8_000]), &enc).unwrap();
        let floor = LOG_FLOOR.ln();
        assert!(f.rows().flatten().all(|&v| v == floor));
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = ReferenceEncoder::new(16_000);
        let x: Vec<f64> = (0..5_000).map(|n| ((n * 7) % 13) as f64 / 13.0).collect();
        assert_eq!(encode(&band(x.clone()), &enc).unwrap(), encode(&band(x), &enc).unwrap());
    }

    #[test]
    fn every_mel_filter_has_weight() {
        let enc = ReferenceEncoder::new(16_000);
        assert_eq!(enc.filters.len(), 64);
        assert!(enc.filters.iter().all(|(_, w)| w.iter().sum::<f64>() > 0.0));
    }

    #[test]
    fn tone_peaks_in_matching_mel_band() {
        let enc = ReferenceEncoder::new(16_000);
        let x: Vec<f64> = (0..16_000).map(|n| (2.0 * PI * 3_000.0 * n as f64 / 16_000.0).sin()).collect();
        let f = crate::encoder::pool_functional(&encode(&band(x), &enc).unwrap());
        let peak = (0..64).max_by(|&a, &b| f.vector[a].total_cmp(&f.vector[b])).unwrap();
        let top = hz_to_mel(8_000.0);
        let centre = mel_to_hz(top * (peak + 1) as f64 / 65.0);
        assert!((centre - 3_000.0).abs() < 150.0, "peak filter centred at {centre} Hz");
    }

    #[test]
    fn short_input_is_one_padded_frame() {
        let enc = ReferenceEncoder::new(16_000);
        assert_eq!(encode(&band(vec![0.1; 10]), &enc).unwrap().frame_count(), 1);
    }
}
