//! Spectral entropy and flux of a band, used by the hybrid fusion gate.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::band::BandSignal;

pub const HANDCRAFTED_FFT_SIZE: usize = 1024;
pub const HANDCRAFTED_HOP: usize = 512;

/// Per-bin floor added before normalising, so silence maps to a uniform
/// spectrum.
const SPECTRAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandcraftedFeatures {
    /// Shannon entropy of the mean power spectrum divided by `ln K`.
    pub spectral_entropy: f64,
    /// Mean L2 distance between consecutive L1-normalised magnitude spectra.
    pub spectral_flux: f64,
}

pub fn handcrafted(band: &BandSignal) -> HandcraftedFeatures {
    let n = HANDCRAFTED_FFT_SIZE;
    let bins = n / 2 + 1;
    let x = &band.samples;
    let frames = if x.len() <= n { 1 } else { 1 + (x.len() - n) / HANDCRAFTED_HOP };
    let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let fft = FftPlanner::new().plan_fft_forward(n);

    let mut mean_power = vec![0.0; bins];
    let mut flux_sum = 0.0;
    let mut prev: Option<Vec<f64>> = None;
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = t * HANDCRAFTED_HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(x.get(start + i).copied().unwrap_or(0.0) * window[i], 0.0);
        }
        fft.process(&mut buf);
        let mut mag: Vec<f64> = buf[..bins].iter().map(|c| c.norm() + SPECTRAL_FLOOR).collect();
        for (m, c) in mean_power.iter_mut().zip(&buf[..bins]) {
            *m += c.norm_sqr();
        }
        let total: f64 = mag.iter().sum();
        mag.iter_mut().for_each(|m| *m /= total);
        if let Some(p) = &prev {
            flux_sum += p.iter().zip(&mag).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
        prev = Some(mag);
    }

    let probs: Vec<f64> = mean_power.iter().map(|p| p / frames as f64 + SPECTRAL_FLOOR).collect();
    let total: f64 = probs.iter().sum();
    let entropy: f64 = probs
        .iter()
        .map(|p| p / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum::<f64>()
        / (bins as f64).ln();

    HandcraftedFeatures {
        spectral_entropy: entropy.clamp(0.0, 1.0),
        spectral_flux: if frames > 1 { flux_sum / (frames - 1) as f64 } else { 0.0 },
    }
}
