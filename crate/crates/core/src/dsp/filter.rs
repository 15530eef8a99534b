//! Kaiser-windowed sinc FIR design and zero-phase application.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::reflect_pad;

/// Stop-band attenuation used for every designed filter. The Kaiser length
/// estimate is approximate, so we design a few dB past the 60 dB floor.
pub const DESIGN_ATTENUATION_DB: f64 = 65.0;

/// Transition width as a fraction of the model Nyquist `f_m / 2`.
pub const TRANSITION_FRACTION: f64 = 0.05;

pub fn kaiser_beta(attenuation_db: f64) -> f64 {
    if attenuation_db > 50.0 {
        0.1102 * (attenuation_db - 8.7)
    } else if attenuation_db >= 21.0 {
        0.5842 * (attenuation_db - 21.0).powf(0.4) + 0.07886 * (attenuation_db - 21.0)
    } else {
        0.0
    }
}

/// Odd tap count meeting `attenuation_db` with a transition of
/// `transition` cycles/sample.
pub fn kaiser_length(attenuation_db: f64, transition: f64) -> usize {
    let n = ((attenuation_db - 7.95) / (2.285 * 2.0 * PI * transition)).ceil() as usize + 1;
    n.max(3) | 1
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

pub fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    let m = (len - 1) as f64;
    let denom = bessel_i0(beta);
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc low-pass with unit DC gain. `cutoff` is in cycles/sample.
pub fn lowpass_taps(cutoff: f64, window: &[f64]) -> Vec<f64> {
    let center = (window.len() / 2) as f64;
    let mut taps: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(n, w)| 2.0 * cutoff * sinc(2.0 * cutoff * (n as f64 - center)) * w)
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Pass-band geometry of a designed filter, in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Response {
    AllPass,
    LowPass(f64),
    HighPass(f64),
    BandPass(f64, f64),
}

impl Response {
    /// Picks the response for a `[low, high]` pass band, dropping either edge
    /// when it is 0 Hz or when its transition reaches the Nyquist frequency.
    pub fn for_band(low_hz: f64, high_hz: f64, sample_rate_hz: f64, transition_hz: f64) -> Self {
        let nyquist = sample_rate_hz / 2.0;
        let has_low = low_hz > 0.0;
        let has_high = high_hz + transition_hz / 2.0 < nyquist;
        match (has_low, has_high) {
            (false, false) => Response::AllPass,
            (false, true) => Response::LowPass(high_hz),
            (true, false) => Response::HighPass(low_hz),
            (true, true) => Response::BandPass(low_hz, high_hz),
        }
    }
}

/// Linear-phase FIR applied by FFT overlap-save, with the group delay removed
/// so the output is time-aligned with the input.
#[derive(Clone)]
pub struct FirFilter {
    taps: Vec<f64>,
    response: Response,
    engine: Option<OverlapSave>,
}

#[derive(Clone)]
struct OverlapSave {
    fft_len: usize,
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FirFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FirFilter")
            .field("response", &self.response)
            .field("taps", &self.taps.len())
            .finish()
    }
}

impl FirFilter {
    /// Designs a Kaiser-windowed filter for `response` at `sample_rate_hz`.
    pub fn design(response: Response, sample_rate_hz: f64, transition_hz: f64, attenuation_db: f64) -> Self {
        if response == Response::AllPass {
            return Self::from_taps(vec![1.0], response);
        }
        let len = kaiser_length(attenuation_db, transition_hz / sample_rate_hz);
        let window = kaiser_window(len, kaiser_beta(attenuation_db));
        let lp = |hz: f64| lowpass_taps(hz / sample_rate_hz, &window);
        let center = len / 2;
        let taps = match response {
            Response::AllPass => unreachable!(),
            Response::LowPass(hz) => lp(hz),
            Response::HighPass(hz) => {
                let mut t: Vec<f64> = lp(hz).iter().map(|v| -v).collect();
                t[center] += 1.0;
                t
            }
            Response::BandPass(lo, hi) => lp(hi).iter().zip(lp(lo)).map(|(h, l)| h - l).collect(),
        };
        Self::from_taps(taps, response)
    }

    fn from_taps(taps: Vec<f64>, response: Response) -> Self {
        assert!(taps.len() % 2 == 1, "linear-phase filter needs an odd tap count");
        let engine = (taps.len() > 1).then(|| {
            let fft_len = (4 * taps.len()).next_power_of_two().max(1024);
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(fft_len);
            let inverse = planner.plan_fft_inverse(fft_len);
            let mut spectrum = vec![Complex::new(0.0, 0.0); fft_len];
            for (s, &t) in spectrum.iter_mut().zip(&taps) {
                s.re = t / fft_len as f64;
            }
            forward.process(&mut spectrum);
            OverlapSave {
                fft_len,
                spectrum,
                forward,
                inverse,
            }
        });
        Self {
            taps,
            response,
            engine,
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn response(&self) -> Response {
        self.response
    }

    /// Filters `input` with reflect padding of one filter length at each end.
    /// Output has the input's length and no group delay.
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let Some(engine) = &self.engine else {
            return input.to_vec();
        };
        let n_taps = self.taps.len();
        let delay = n_taps / 2;
        let padded = reflect_pad(input, n_taps);
        let conv = engine.convolve(&padded, n_taps, n_taps + delay + input.len());
        conv[n_taps + delay..].to_vec()
    }
}

impl OverlapSave {
    /// First `out_len` samples of the causal convolution of `x` with the taps.
    fn convolve(&self, x: &[f64], n_taps: usize, out_len: usize) -> Vec<f64> {
        let overlap = n_taps - 1;
        let step = self.fft_len - overlap;
        let mut out = Vec::with_capacity(out_len + step);
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_len];
        let scratch_len = self.forward.get_inplace_scratch_len().max(self.inverse.get_inplace_scratch_len());
        let mut scratch = vec![Complex::new(0.0, 0.0); scratch_len];
        let mut start = 0usize;
        while out.len() < out_len {
            // block covers x[start - overlap .. start + step)
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = (start + i) as isize - overlap as isize;
                let v = if idx >= 0 { x.get(idx as usize).copied().unwrap_or(0.0) } else { 0.0 };
                *b = Complex::new(v, 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (b, h) in buf.iter_mut().zip(&self.spectrum) {
                *b *= h;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            out.extend(buf[overlap..].iter().map(|c| c.re));
            start += step;
        }
        out.truncate(out_len);
        out
    }
}

/// First-order DC blocker run forward then backward (zero phase). The input
/// is reflect padded by eight time constants so the start-up transient dies
/// out before the signal begins, and the state starts at the steady state of
/// the edge sample so constant input yields exactly zero.
pub fn dc_block_zero_phase(input: &[f64], cutoff_hz: f64, sample_rate_hz: f64) -> Vec<f64> {
    let pole = 1.0 - 2.0 * PI * cutoff_hz / sample_rate_hz;
    // unity gain at Nyquist
    let gain = (1.0 + pole) / 2.0;
    let pad = (8.0 * sample_rate_hz / (2.0 * PI * cutoff_hz)).ceil() as usize;
    let run = |x: &mut dyn Iterator<Item = f64>| -> Vec<f64> {
        let mut out = Vec::with_capacity(input.len() + 2 * pad);
        let mut prev_x = None;
        let mut prev_y = 0.0;
        for v in x {
            let px = prev_x.unwrap_or(v);
            let y = gain * (v - px) + pole * prev_y;
            out.push(y);
            prev_x = Some(v);
            prev_y = y;
        }
        out
    };
    let padded = reflect_pad(input, pad);
    let forward = run(&mut padded.iter().copied());
    let mut backward = run(&mut forward.iter().rev().copied());
    backward.reverse();
    backward.drain(..pad);
    backward.truncate(input.len());
    backward
}
