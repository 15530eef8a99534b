//! Band planning and heterodyne decomposition of wide-band clips into
//! baseband signals at the model rate, plus the baseband and time-expansion
//! baselines.
//!
//! The spectrum `[0, f_s/2]` is tiled by `B = ceil(f_s / f_m)` bands of width
//! `f_m / 2`. Band 1 is the plain baseband. Every higher band is band-pass
//! filtered, mixed down by its lower edge, low-passed at `f_m / 2`, gain
//! compensated and DC blocked, then resampled to `f_m`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::dsp::filter::{DESIGN_ATTENUATION_DB, TRANSITION_FRACTION};
use crate::dsp::{dc_block_zero_phase, FirFilter, RationalResampler, Response};
use crate::error::{Error, Result};
use crate::signal_io::{write_wav, AudioClip};

/// Cutoff of the high-pass that removes the DC line left by content sitting
/// exactly on the mixing frequency.
pub const DC_BLOCK_HZ: f64 = 20.0;

/// Amplitude correction for the product-to-sum halving.
pub const HETERODYNE_GAIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    /// 1-based band index.
    pub index: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    /// Mixing frequency; equal to `low_hz`.
    pub shift_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPlan {
    native_rate_hz: u32,
    model_rate_hz: u32,
    bands: Vec<Band>,
}

impl BandPlan {
    pub fn native_rate_hz(&self) -> u32 {
        self.native_rate_hz
    }

    pub fn model_rate_hz(&self) -> u32 {
        self.model_rate_hz
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn band_width_hz(&self) -> f64 {
        self.model_rate_hz as f64 / 2.0
    }

    /// Band `b` (1-based).
    pub fn band(&self, b: usize) -> Result<&Band> {
        b.checked_sub(1)
            .and_then(|i| self.bands.get(i))
            .ok_or_else(|| Error::BandPlan(format!("band index {b} out of range 1..={}", self.bands.len())))
    }

    /// The band whose half-open range `[low, high)` contains `freq_hz`.
    pub fn band_of(&self, freq_hz: f64) -> Option<&Band> {
        self.bands.iter().find(|b| freq_hz >= b.low_hz && freq_hz < b.high_hz)
    }

    fn transition_hz(&self) -> f64 {
        TRANSITION_FRACTION * self.band_width_hz()
    }
}

/// Splits `[0, f_s/2]` into `ceil(f_s / f_m)` contiguous bands of width `f_m/2`.
pub fn compute_band_plan(native_rate_hz: u32, model_rate_hz: u32) -> Result<BandPlan> {
    if model_rate_hz == 0 {
        return Err(Error::BandPlan("model rate must be positive".into()));
    }
    if native_rate_hz < model_rate_hz {
        return Err(Error::BandPlan(format!(
            "native rate {native_rate_hz} Hz is below the model rate {model_rate_hz} Hz; use the baseband path"
        )));
    }
    let count = native_rate_hz.div_ceil(model_rate_hz) as usize;
    let width = model_rate_hz as f64 / 2.0;
    let bands = (1..=count)
        .map(|index| {
            let low_hz = (index - 1) as f64 * width;
            Band {
                index,
                low_hz,
                high_hz: low_hz + width,
                shift_hz: low_hz,
            }
        })
        .collect();
    Ok(BandPlan {
        native_rate_hz,
        model_rate_hz,
        bands,
    })
}

/// One band's waveform. Before [`resample_to_model`] it is at the native
/// rate; afterwards at the model rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSignal {
    pub band_index: usize,
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl BandSignal {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Filters and resampler for one band plan, designed once and reused across
/// clips.
#[derive(Debug, Clone)]
pub struct Decomposer {
    plan: BandPlan,
    band_filters: Vec<FirFilter>,
    mix_lowpass: FirFilter,
    resampler: RationalResampler,
}

impl Decomposer {
    pub fn new(plan: BandPlan) -> Self {
        let fs = plan.native_rate_hz as f64;
        let tr = plan.transition_hz();
        let band_filters = plan
            .bands
            .iter()
            .map(|b| FirFilter::design(Response::for_band(b.low_hz, b.high_hz, fs, tr), fs, tr, DESIGN_ATTENUATION_DB))
            .collect();
        let mix_lowpass = FirFilter::design(
            Response::for_band(0.0, plan.band_width_hz(), fs, tr),
            fs,
            tr,
            DESIGN_ATTENUATION_DB,
        );
        let resampler = RationalResampler::new(plan.native_rate_hz, plan.model_rate_hz);
        Self {
            plan,
            band_filters,
            mix_lowpass,
            resampler,
        }
    }

    pub fn for_rates(native_rate_hz: u32, model_rate_hz: u32) -> Result<Self> {
        Ok(Self::new(compute_band_plan(native_rate_hz, model_rate_hz)?))
    }

    pub fn plan(&self) -> &BandPlan {
        &self.plan
    }

    fn check_clip(&self, clip: &AudioClip) -> Result<()> {
        if clip.sample_rate_hz() != self.plan.native_rate_hz {
            return Err(Error::RateMismatch {
                expected: self.plan.native_rate_hz,
                actual: clip.sample_rate_hz(),
            });
        }
        Ok(())
    }

    /// Band-pass slice `s_b` of the clip at the native rate.
    pub fn extract_band(&self, clip: &AudioClip, b: usize) -> Result<BandSignal> {
        self.check_clip(clip)?;
        self.plan.band(b)?;
        Ok(BandSignal {
            band_index: b,
            samples: self.band_filters[b - 1].apply(clip.samples()),
            sample_rate_hz: self.plan.native_rate_hz,
        })
    }

    /// Mixes a band slice down by its shift, then low-passes at `f_m/2`,
    /// doubles the amplitude and removes DC. Band 1 passes through.
    pub fn heterodyne(&self, band: &BandSignal) -> Result<BandSignal> {
        let spec = *self.plan.band(band.band_index)?;
        if band.sample_rate_hz != self.plan.native_rate_hz {
            return Err(Error::RateMismatch {
                expected: self.plan.native_rate_hz,
                actual: band.sample_rate_hz,
            });
        }
        if spec.index == 1 {
            return Ok(band.clone());
        }
        let fs = self.plan.native_rate_hz as f64;
        let cycles_per_sample = spec.shift_hz / fs;
        let mixed: Vec<f64> = band
            .samples
            .iter()
            .enumerate()
            .map(|(n, s)| s * (2.0 * PI * (n as f64 * cycles_per_sample).fract()).cos())
            .collect();
        let mut low = self.mix_lowpass.apply(&mixed);
        low.iter_mut().for_each(|v| *v *= HETERODYNE_GAIN);
        Ok(BandSignal {
            band_index: band.band_index,
            samples: dc_block_zero_phase(&low, DC_BLOCK_HZ, fs),
            sample_rate_hz: band.sample_rate_hz,
        })
    }

    pub fn resample(&self, band: &BandSignal) -> Result<BandSignal> {
        if band.sample_rate_hz != self.plan.native_rate_hz {
            return Err(Error::RateMismatch {
                expected: self.plan.native_rate_hz,
                actual: band.sample_rate_hz,
            });
        }
        Ok(BandSignal {
            band_index: band.band_index,
            samples: self.resampler.process(&band.samples),
            sample_rate_hz: self.plan.model_rate_hz,
        })
    }

    /// Band `b` at the model rate: extract, heterodyne and resample.
    pub fn band_at_model_rate(&self, clip: &AudioClip, b: usize) -> Result<BandSignal> {
        let slice = self.extract_band(clip, b)?;
        let shifted = self.heterodyne(&slice)?;
        self.resample(&shifted)
    }

    /// All `B` bands at the model rate, ordered by index.
    pub fn decompose(&self, clip: &AudioClip) -> Result<Vec<BandSignal>> {
        (1..=self.plan.band_count())
            .map(|b| self.band_at_model_rate(clip, b))
            .collect()
    }

    /// Baseband baseline; identical to band 1 of [`Decomposer::decompose`].
    pub fn baseband(&self, clip: &AudioClip) -> Result<BandSignal> {
        self.band_at_model_rate(clip, 1)
    }
}

pub fn extract_band(clip: &AudioClip, plan: &BandPlan, b: usize) -> Result<BandSignal> {
    Decomposer::new(plan.clone()).extract_band(clip, b)
}

pub fn heterodyne_to_baseband(band: &BandSignal, plan: &BandPlan) -> Result<BandSignal> {
    Decomposer::new(plan.clone()).heterodyne(band)
}

pub fn resample_to_model(band: &BandSignal, plan: &BandPlan) -> Result<BandSignal> {
    if band.sample_rate_hz != plan.native_rate_hz {
        return Err(Error::RateMismatch {
            expected: plan.native_rate_hz,
            actual: band.sample_rate_hz,
        });
    }
    Ok(BandSignal {
        band_index: band.band_index,
        samples: RationalResampler::new(plan.native_rate_hz, plan.model_rate_hz).process(&band.samples),
        sample_rate_hz: plan.model_rate_hz,
    })
}

pub fn decompose(clip: &AudioClip, model_rate_hz: u32) -> Result<Vec<BandSignal>> {
    Decomposer::for_rates(clip.sample_rate_hz(), model_rate_hz)?.decompose(clip)
}

/// Anti-aliased resample of the raw clip to the model rate. Clips recorded
/// below the model rate are upsampled.
pub fn to_baseband(clip: &AudioClip, model_rate_hz: u32) -> Result<BandSignal> {
    if clip.sample_rate_hz() >= model_rate_hz {
        Decomposer::for_rates(clip.sample_rate_hz(), model_rate_hz)?.baseband(clip)
    } else {
        Ok(BandSignal {
            band_index: 1,
            samples: RationalResampler::new(clip.sample_rate_hz(), model_rate_hz).process(clip.samples()),
            sample_rate_hz: model_rate_hz,
        })
    }
}

/// Slow-down factor `f_s / f_m` of the time-expansion baseline.
pub fn expansion_factor(native_rate_hz: u32, model_rate_hz: u32) -> f64 {
    native_rate_hz as f64 / model_rate_hz as f64
}

/// Time expansion by relabelling the sample rate: samples are untouched, so a
/// tone at `f` plays back at `f / k` and the clip lasts `k` times longer.
pub fn time_expand(clip: &AudioClip, model_rate_hz: u32) -> Result<BandSignal> {
    if model_rate_hz == 0 {
        return Err(Error::Invalid("model rate must be positive".into()));
    }
    Ok(BandSignal {
        band_index: 1,
        samples: clip.samples().to_vec(),
        sample_rate_hz: model_rate_hz,
    })
}

/// Writes each band as `<stem>_band<b>.wav`, returning the paths.
pub fn dump_bands(bands: &[BandSignal], dir: impl AsRef<Path>, stem: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    bands
        .iter()
        .map(|b| {
            let path = dir.join(format!("{stem}_band{}.wav", b.band_index));
            write_wav(&path, &b.samples, b.sample_rate_hz)?;
            Ok(path)
        })
        .collect()
}
