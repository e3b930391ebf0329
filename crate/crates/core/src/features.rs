//! Log-Mel front-end.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::hash::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub fft_size: usize,
    pub mel_bins: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Standard deviation of Gaussian dither added before framing.
    pub dither: f64,
    pub dither_seed: u64,
    pub log_floor: f64,
    /// Per-utterance cepstral mean subtraction.
    pub cmn: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            fft_size: 512,
            mel_bins: 64,
            fmin_hz: 20.0,
            fmax_hz: 7600.0,
            dither: 0.0,
            dither_seed: 0,
            log_floor: 1e-10,
            cmn: true,
        }
    }
}

impl FeatureConfig {
    pub fn frame_length_samples(&self, sample_rate_hz: u32) -> usize {
        (self.frame_length_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn frame_shift_samples(&self, sample_rate_hz: u32) -> usize {
        (self.frame_shift_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    /// Frame count for a signal of `len` samples, `None` if shorter than one frame.
    pub fn num_frames(&self, len: usize, sample_rate_hz: u32) -> Option<usize> {
        let frame = self.frame_length_samples(sample_rate_hz);
        let shift = self.frame_shift_samples(sample_rate_hz);
        (len >= frame).then(|| 1 + (len - frame) / shift)
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        let frame = self.frame_length_samples(sample_rate_hz);
        let shift = self.frame_shift_samples(sample_rate_hz);
        let nyquist = sample_rate_hz as f64 / 2.0;
        let problem = if frame == 0 || shift == 0 {
            Some("frame length and shift must be at least one sample".to_string())
        } else if shift > frame {
            Some(format!("frame shift {shift} exceeds frame length {frame}"))
        } else if self.fft_size < frame {
            Some(format!("fft size {} below frame length {frame}", self.fft_size))
        } else if self.mel_bins < 2 {
            Some(format!("need at least 2 mel bins, got {}", self.mel_bins))
        } else if !(0.0 <= self.fmin_hz && self.fmin_hz < self.fmax_hz) {
            Some(format!("band [{}, {}] Hz is empty", self.fmin_hz, self.fmax_hz))
        } else if self.fmax_hz > nyquist {
            Some(format!("fmax {} Hz above Nyquist {nyquist} Hz", self.fmax_hz))
        } else if !(self.log_floor > 0.0) {
            Some("log floor must be positive".to_string())
        } else if !(self.dither >= 0.0) {
            Some("dither must be non-negative".to_string())
        } else {
            None
        };
        problem.map_or(Ok(()), |p| Err(Error::Config(p)))
    }

    /// Short content hash identifying this configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&json)[..16].to_string()
    }
}

/// Row-major `rows x cols` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Domain("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Log-Mel frames (`T x mel_bins`) tagged with the producing configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Grid,
    pub fingerprint: String,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.rows
    }

    pub fn dim(&self) -> usize {
        self.frames.cols
    }
}

fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / len as f64).cos())
        .collect()
}

/// Hann-windowed power spectrum per frame, `T x (fft_size / 2 + 1)`.
pub fn stft_power(wave: &Waveform, config: &FeatureConfig) -> Result<Grid> {
    let sr = wave.sample_rate_hz;
    config.validate(sr)?;
    let frame = config.frame_length_samples(sr);
    let shift = config.frame_shift_samples(sr);
    let frames = config.num_frames(wave.len(), sr).ok_or(Error::TooShort {
        needed: frame,
        got: wave.len(),
        unit: "samples",
    })?;

    let dithered;
    let samples = if config.dither > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.dither_seed);
        dithered = wave
            .samples
            .iter()
            .map(|&x| {
                let n: f64 = StandardNormal.sample(&mut rng);
                x + config.dither * n
            })
            .collect::<Vec<_>>();
        &dithered[..]
    } else {
        &wave.samples[..]
    };

    let n_fft = config.fft_size;
    let bins = n_fft / 2 + 1;
    let window = hann(frame);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Grid::zeros(frames, bins);
    for t in 0..frames {
        let chunk = &samples[t * shift..t * shift + frame];
        for (slot, (x, w)) in buf.iter_mut().zip(chunk.iter().zip(&window)) {
            *slot = Complex::new(x * w, 0.0);
        }
        buf[frame..].fill(Complex::new(0.0, 0.0));
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, c) in out.row_mut(t).iter_mut().zip(&buf[..bins]) {
            *dst = c.norm_sqr();
        }
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters with unit peak, `mel_bins x (fft_size / 2 + 1)`.
pub fn mel_filterbank(config: &FeatureConfig, sample_rate_hz: u32) -> Result<Grid> {
    config.validate(sample_rate_hz)?;
    let bins = config.fft_size / 2 + 1;
    let lo = hz_to_mel(config.fmin_hz);
    let hi = hz_to_mel(config.fmax_hz);
    let step = (hi - lo) / (config.mel_bins + 1) as f64;
    let edges: Vec<f64> = (0..config.mel_bins + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("mel band edges are not strictly increasing".into()));
    }
    let bin_hz = sample_rate_hz as f64 / config.fft_size as f64;
    let mut fb = Grid::zeros(config.mel_bins, bins);
    for m in 0..config.mel_bins {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = fb.row_mut(m);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - left) / (centre - left);
            let down = (right - f) / (right - centre);
            *w = up.min(down).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(format!(
                "mel filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin"
            )));
        }
    }
    Ok(fb)
}

/// Subtracts the per-dimension mean over time in place.
pub fn apply_cmn(grid: &mut Grid) {
    if grid.rows == 0 {
        return;
    }
    let mut mean = vec![0.0; grid.cols];
    for t in 0..grid.rows {
        for (m, x) in mean.iter_mut().zip(grid.row(t)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= grid.rows as f64);
    for t in 0..grid.rows {
        for (x, m) in grid.row_mut(t).iter_mut().zip(&mean) {
            *x -= m;
        }
    }
}

/// Log-Mel energies without mean subtraction.
pub fn log_mel_raw(wave: &Waveform, config: &FeatureConfig) -> Result<Grid> {
    let power = stft_power(wave, config)?;
    let fb = mel_filterbank(config, wave.sample_rate_hz)?;
    let mut out = Grid::zeros(power.rows, fb.rows);
    for t in 0..power.rows {
        let spec = power.row(t);
        for m in 0..fb.rows {
            let e: f64 = fb.row(m).iter().zip(spec).map(|(w, p)| w * p).sum();
            out.data[t * fb.rows + m] = e.max(config.log_floor).ln();
        }
    }
    Ok(out)
}

pub fn log_mel(wave: &Waveform, config: &FeatureConfig) -> Result<FeatureMatrix> {
    let mut frames = log_mel_raw(wave, config)?;
    if config.cmn {
        apply_cmn(&mut frames);
    }
    Ok(FeatureMatrix {
        frames,
        fingerprint: config.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::synth_tone;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise(seed: u64, len: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000).unwrap()
    }

    #[test]
    fn silence_gives_zero_power() {
        let w = Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
        let p = stft_power(&w, &FeatureConfig::default()).unwrap();
        assert_eq!(p.rows, 98);
        assert_eq!(p.cols, 257);
        assert!(p.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let w = synth_tone(1000.0, 1.0, 16_000).unwrap();
        let p = stft_power(&w, &FeatureConfig::default()).unwrap();
        for t in 0..p.rows {
            let row = p.row(t);
            let arg = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(arg, 32);
        }
    }

    #[test]
    fn too_short_utterance() {
        let w = Waveform::new(vec![0.0; 399], 16_000).unwrap();
        assert!(matches!(
            stft_power(&w, &FeatureConfig::default()),
            Err(Error::TooShort { needed: 400, got: 399, .. })
        ));
    }

    #[test]
    fn mel_scale_value() {
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn filterbank_rows_nonzero_ordered_overlapping() {
        let cfg = FeatureConfig::default();
        let fb = mel_filterbank(&cfg, 16_000).unwrap();
        assert_eq!((fb.rows, fb.cols), (64, 257));
        let support: Vec<(usize, usize)> = (0..fb.rows)
            .map(|m| {
                let row = fb.row(m);
                let first = row.iter().position(|&w| w > 0.0).unwrap();
                let last = row.iter().rposition(|&w| w > 0.0).unwrap();
                assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
                (first, last)
            })
            .collect();
        for pair in support.windows(2) {
            assert!(pair[0].0 <= pair[1].0 && pair[0].1 <= pair[1].1);
        }
        // neighbouring triangles share frequency range once the bands are
        // wider than a bin
        let overlaps = support.windows(2).filter(|p| p[1].0 <= p[0].1).count();
        assert!(overlaps >= 40, "{overlaps}");
    }

    #[test]
    fn degenerate_filterbank_rejected() {
        let cfg = FeatureConfig {
            mel_bins: 200,
            fft_size: 400,
            ..FeatureConfig::default()
        };
        assert!(matches!(mel_filterbank(&cfg, 16_000), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_configs() {
        let base = FeatureConfig::default();
        for cfg in [
            FeatureConfig { frame_shift_ms: 30.0, ..base.clone() },
            FeatureConfig { fmax_hz: 9000.0, ..base.clone() },
            FeatureConfig { mel_bins: 1, ..base.clone() },
            FeatureConfig { fft_size: 256, ..base.clone() },
        ] {
            assert!(matches!(cfg.validate(16_000), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn silence_log_mel_floor_and_cmn() {
        let w = Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
        let cfg = FeatureConfig::default();
        let raw = log_mel_raw(&w, &cfg).unwrap();
        assert!(raw.data.iter().all(|&x| x == cfg.log_floor.ln()));
        let f = log_mel(&w, &cfg).unwrap();
        assert!(f.frames.data.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn random_input_shape_and_cmn_mean() {
        let f = log_mel(&noise(3, 16_000), &FeatureConfig::default()).unwrap();
        assert_eq!((f.num_frames(), f.dim()), (98, 64));
        assert!(f.frames.data.iter().all(|x| x.is_finite()));
        for d in 0..f.dim() {
            let mean: f64 = (0..f.num_frames()).map(|t| f.frames.get(t, d)).sum::<f64>()
                / f.num_frames() as f64;
            assert!(mean.abs() <= 1e-9);
        }
    }

    #[test]
    fn dither_is_seeded() {
        let cfg = FeatureConfig { dither: 1e-3, dither_seed: 5, ..FeatureConfig::default() };
        let w = noise(1, 4000);
        assert_eq!(log_mel(&w, &cfg).unwrap(), log_mel(&w, &cfg).unwrap());
        assert_ne!(
            log_mel(&w, &cfg).unwrap().frames,
            log_mel(&w, &FeatureConfig::default()).unwrap().frames
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn frame_count_law(len in 400usize..6000) {
            let cfg = FeatureConfig::default();
            let w = Waveform::new(vec![0.01; len], 16_000).unwrap();
            let p = stft_power(&w, &cfg).unwrap();
            prop_assert_eq!(p.rows, 1 + (len - 400) / 160);
        }

        #[test]
        fn cmn_is_idempotent(seed in any::<u64>()) {
            let mut once = log_mel_raw(&noise(seed, 2400), &FeatureConfig::default()).unwrap();
            apply_cmn(&mut once);
            let mut twice = once.clone();
            apply_cmn(&mut twice);
            for (a, b) in once.data.iter().zip(&twice.data) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn gain_shifts_log_mel_by_twice_log_gain(seed in any::<u64>(), c in 0.05f64..4.0) {
            let cfg = FeatureConfig::default();
            let w = noise(seed, 2400);
            let scaled = Waveform::new(w.samples.iter().map(|x| x * c).collect(), 16_000).unwrap();
            let a = log_mel_raw(&w, &cfg).unwrap();
            let b = log_mel_raw(&scaled, &cfg).unwrap();
            let floor = cfg.log_floor.ln();
            let shift = 2.0 * c.ln();
            for (x, y) in a.data.iter().zip(&b.data) {
                if *x > floor && *y > floor {
                    prop_assert!((y - x - shift).abs() <= 1e-9);
                }
            }
            let fa = log_mel(&w, &cfg).unwrap();
            let fb = log_mel(&scaled, &cfg).unwrap();
            for (x, y) in fa.frames.data.iter().zip(&fb.frames.data) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}
