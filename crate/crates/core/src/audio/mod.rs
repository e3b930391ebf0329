//! Audio ingestion and resampling-based speed perturbation.
//!
//! Waveforms are mono, 16 kHz, with samples held as `f64` in `[-1, 1]`.
//! Speed perturbation follows the plain-resampling convention: the signal is
//! resampled by `1 / factor` and replayed at the original rate, which scales
//! duration by `1 / factor` and every frequency by `factor`.

mod resample;
mod wav;

pub use resample::{Resampler, KAISER_BETA, ZERO_CROSSINGS};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Every waveform admitted to the pipeline uses this rate.
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let energy: f64 = self.samples.iter().map(|x| x * x).sum();
        (energy / self.samples.len() as f64).sqrt()
    }
}

/// A resampling speed factor, bounded to `[0.5, 2.0]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SpeedFactor(f64);

impl SpeedFactor {
    pub const MIN: f64 = 0.5;
    pub const MAX: f64 = 2.0;

    pub fn new(value: f64) -> Result<Self> {
        if !(Self::MIN..=Self::MAX).contains(&value) {
            return Err(Error::Domain(format!(
                "speed factor {value} outside [{}, {}]",
                Self::MIN,
                Self::MAX
            )));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Closest rational `num / den` with `den <= 1000`; smallest denominator wins ties.
    pub fn as_rational(self) -> (u64, u64) {
        let mut best = (self.0.round() as u64, 1u64);
        let mut best_err = (best.0 as f64 - self.0).abs();
        for den in 2..=1000u64 {
            if best_err == 0.0 {
                break;
            }
            let num = (self.0 * den as f64).round() as u64;
            let err = (num as f64 - self.0 * den as f64).abs() / den as f64;
            if err < best_err {
                best = (num, den);
                best_err = err;
            }
        }
        best
    }

    /// Label suffix form: at least one decimal, more only when needed.
    pub fn label(self) -> String {
        let short = format!("{:.1}", self.0);
        if short.parse::<f64>().ok() == Some(self.0) {
            short
        } else {
            format!("{}", self.0)
        }
    }
}

impl std::fmt::Display for SpeedFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Output length for a perturbation of `len` samples.
pub fn perturbed_len(len: usize, factor: SpeedFactor) -> usize {
    (len as f64 / factor.value()).round() as usize
}

/// Resample by `1 / factor` and keep the original rate.
pub fn speed_perturb(wave: &Waveform, factor: SpeedFactor) -> Result<Waveform> {
    if wave.is_empty() {
        return Err(Error::Domain("cannot perturb an empty waveform".into()));
    }
    let resampler = Resampler::for_factor(factor);
    let samples = resampler.process(&wave.samples, perturbed_len(wave.len(), factor));
    Ok(Waveform {
        samples,
        sample_rate_hz: wave.sample_rate_hz,
    })
}

/// `0.5 * sin(2 pi f n / sr)` test tone.
pub fn synth_tone(freq_hz: f64, duration_s: f64, sample_rate_hz: u32) -> Result<Waveform> {
    if sample_rate_hz == 0 {
        return Err(Error::Domain("sample rate must be positive".into()));
    }
    let nyquist = sample_rate_hz as f64 / 2.0;
    if !(0.0..nyquist).contains(&freq_hz) {
        return Err(Error::Domain(format!(
            "tone frequency {freq_hz} Hz not in [0, {nyquist}) Hz"
        )));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Domain(format!("duration {duration_s} s must be positive")));
    }
    let n = (duration_s * sample_rate_hz as f64).round() as usize;
    let step = std::f64::consts::TAU * freq_hz / sample_rate_hz as f64;
    let samples = (0..n).map(|i| 0.5 * (step * i as f64).sin()).collect();
    Ok(Waveform {
        samples,
        sample_rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn peak_hz(samples: &[f64], sr: f64, fft_len: usize) -> f64 {
        let start = (samples.len() - fft_len) / 2;
        let mut buf: Vec<Complex<f64>> = samples[start..start + fft_len]
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let w = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / fft_len as f64).cos();
                Complex::new(x * w, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(fft_len).process(&mut buf);
        let bin = (0..=fft_len / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        bin as f64 * sr / fft_len as f64
    }

    #[test]
    fn perturbed_length_formula() {
        let w = Waveform::new(vec![0.1; 16_000], 16_000).unwrap();
        let out = speed_perturb(&w, SpeedFactor::new(1.1).unwrap()).unwrap();
        assert_eq!(out.len(), 14_545);
        assert_eq!(out.sample_rate_hz, 16_000);
    }

    #[test]
    fn forced_unity_factor_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..4000).map(|_| rng.random_range(-0.9..0.9)).collect();
        let w = Waveform::new(samples, 16_000).unwrap();
        let out = speed_perturb(&w, SpeedFactor::new(1.0).unwrap()).unwrap();
        assert_eq!(out.len(), w.len());
        let max_diff = w
            .samples
            .iter()
            .zip(&out.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1e-3, "max diff {max_diff}");
    }

    #[test]
    fn tone_at_440_slows_to_396() {
        let tone = synth_tone(440.0, 1.0, 16_000).unwrap();
        let out = speed_perturb(&tone, SpeedFactor::new(0.9).unwrap()).unwrap();
        let peak = peak_hz(&out.samples, 16_000.0, 8192);
        assert!((peak - 396.0).abs() <= 2.0, "peak at {peak}");
    }

    #[test]
    fn factor_bounds() {
        assert!(SpeedFactor::new(0.49).is_err());
        assert!(SpeedFactor::new(2.01).is_err());
        assert!(SpeedFactor::new(0.5).is_ok());
        assert!(SpeedFactor::new(2.0).is_ok());
        assert!(SpeedFactor::new(f64::NAN).is_err());
    }

    #[test]
    fn default_factors_are_exact_rationals() {
        assert_eq!(SpeedFactor::new(0.9).unwrap().as_rational(), (9, 10));
        assert_eq!(SpeedFactor::new(1.1).unwrap().as_rational(), (11, 10));
        assert_eq!(SpeedFactor::new(1.0).unwrap().as_rational(), (1, 1));
        let (p, q) = SpeedFactor::new(0.7123).unwrap().as_rational();
        assert!(q <= 1000);
        assert!((p as f64 / q as f64 - 0.7123).abs() < 1e-5);
    }

    #[test]
    fn factor_labels() {
        assert_eq!(SpeedFactor::new(0.9).unwrap().label(), "0.9");
        assert_eq!(SpeedFactor::new(1.1).unwrap().label(), "1.1");
        assert_eq!(SpeedFactor::new(2.0).unwrap().label(), "2.0");
        assert_eq!(SpeedFactor::new(0.95).unwrap().label(), "0.95");
    }

    #[test]
    fn tone_generation() {
        assert!(synth_tone(0.0, 0.5, 16_000)
            .unwrap()
            .samples
            .iter()
            .all(|&x| x == 0.0));
        let t = synth_tone(1000.0, 1.0, 16_000).unwrap();
        assert_eq!(t.len(), 16_000);
        assert!((t.rms() - 0.5 / 2f64.sqrt()).abs() <= 1e-3);
        assert!(synth_tone(8000.0, 1.0, 16_000).is_err());
        assert!(synth_tone(-1.0, 1.0, 16_000).is_err());
        assert!(synth_tone(100.0, 0.0, 16_000).is_err());
    }

    #[test]
    fn energy_roughly_preserved() {
        let tone = synth_tone(700.0, 1.0, 16_000).unwrap();
        for f in [0.9, 1.1] {
            let out = speed_perturb(&tone, SpeedFactor::new(f).unwrap()).unwrap();
            let ratio = out.rms() / tone.rms();
            assert!((0.9..=1.1).contains(&ratio), "factor {f}: ratio {ratio}");
        }
    }

    #[test]
    fn perturbation_is_deterministic() {
        let tone = synth_tone(300.0, 0.3, 16_000).unwrap();
        let f = SpeedFactor::new(1.1).unwrap();
        let a = speed_perturb(&tone, f).unwrap();
        let b = speed_perturb(&tone, f).unwrap();
        assert!(a
            .samples
            .iter()
            .zip(&b.samples)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn empty_waveform_rejected() {
        let w = Waveform::new(vec![], 16_000).unwrap();
        assert!(speed_perturb(&w, SpeedFactor::new(0.9).unwrap()).is_err());
    }
}
