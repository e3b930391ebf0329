//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function wraps a plain Rust function of the same name
//! (without the `_js` suffix) so the computations are testable natively.

use augkit::audio::{speed_perturb, synth_tone, SpeedFactor};
use augkit::features::{stft_power, FeatureConfig};
use augkit::losses::{arcface_forward, ArcFaceConfig, HeadParams};
use augkit::scoring::{compute_eer, compute_min_dcf, det_points, DcfConfig, ScoreSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

const SAMPLE_RATE: u32 = 16_000;
const FFT_SIZE: usize = 2048;
/// Spectrum bins shown by the demo (0 to 4 kHz).
const SHOWN_BINS: usize = FFT_SIZE / 4;

fn js_err(e: augkit::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Average spectra of a tone before and after speed perturbation.
#[wasm_bindgen]
pub struct Spectra {
    bin_hz: f64,
    peak_in_hz: f64,
    peak_out_hz: f64,
    len_in: usize,
    len_out: usize,
    in_db: Vec<f64>,
    out_db: Vec<f64>,
}

#[wasm_bindgen]
impl Spectra {
    #[wasm_bindgen(getter)]
    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }
    #[wasm_bindgen(getter)]
    pub fn peak_in_hz(&self) -> f64 {
        self.peak_in_hz
    }
    #[wasm_bindgen(getter)]
    pub fn peak_out_hz(&self) -> f64 {
        self.peak_out_hz
    }
    #[wasm_bindgen(getter)]
    pub fn len_in(&self) -> usize {
        self.len_in
    }
    #[wasm_bindgen(getter)]
    pub fn len_out(&self) -> usize {
        self.len_out
    }
    #[wasm_bindgen(getter)]
    pub fn in_db(&self) -> Vec<f64> {
        self.in_db.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn out_db(&self) -> Vec<f64> {
        self.out_db.clone()
    }
}

fn mean_spectrum_db(wave: &augkit::audio::Waveform) -> augkit::Result<(Vec<f64>, f64)> {
    let cfg = FeatureConfig {
        frame_length_ms: 128.0,
        frame_shift_ms: 64.0,
        fft_size: FFT_SIZE,
        ..FeatureConfig::default()
    };
    let power = stft_power(wave, &cfg)?;
    let mut mean = vec![0.0; SHOWN_BINS];
    for t in 0..power.rows {
        for (m, p) in mean.iter_mut().zip(power.row(t)) {
            *m += p / power.rows as f64;
        }
    }
    let peak = (0..mean.len()).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap_or(0);
    let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
    Ok((mean.iter().map(|p| 10.0 * (p + 1e-12).log10()).collect(), peak as f64 * bin_hz))
}

/// Tone of `freq_hz` (two harmonics) perturbed by `factor`.
pub fn spectra(freq_hz: f64, factor: f64) -> augkit::Result<Spectra> {
    let mut tone = synth_tone(freq_hz, 0.8, SAMPLE_RATE)?;
    let overtone = synth_tone((2.0 * freq_hz).min(7999.0), 0.8, SAMPLE_RATE)?;
    tone.samples.iter_mut().zip(&overtone.samples).for_each(|(a, b)| *a += 0.3 * b);
    let out = speed_perturb(&tone, SpeedFactor::new(factor)?)?;
    let (in_db, peak_in_hz) = mean_spectrum_db(&tone)?;
    let (out_db, peak_out_hz) = mean_spectrum_db(&out)?;
    Ok(Spectra {
        bin_hz: SAMPLE_RATE as f64 / FFT_SIZE as f64,
        peak_in_hz,
        peak_out_hz,
        len_in: tone.len(),
        len_out: out.len(),
        in_db,
        out_db,
    })
}

#[wasm_bindgen(js_name = spectra)]
pub fn spectra_js(freq_hz: f64, factor: f64) -> Result<Spectra, JsError> {
    spectra(freq_hz, factor).map_err(js_err)
}

/// Target logit and loss against the angle to the target class, with and
/// without the margin. A single competitor class sits at `rival_deg`.
///
/// Returns `[logit_margin, logit_plain, loss_margin, loss_plain]`, each with
/// `points` samples over 0..=180 degrees, concatenated.
pub fn arcface_curves(scale: f64, margin: f64, rival_deg: f64, points: usize) -> augkit::Result<Vec<f64>> {
    let points = points.max(2);
    let rival = rival_deg.to_radians();
    let head = HeadParams {
        num_classes: 2,
        dim: 2,
        weights: vec![1.0, 0.0, rival.cos(), rival.sin()],
    };
    let with = ArcFaceConfig { scale, margin, num_classes: 2, embed_dim: 2 };
    let without = ArcFaceConfig { margin: 0.0, ..with };
    let mut curves: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(points)).collect();
    for i in 0..points {
        let theta = std::f64::consts::PI * i as f64 / (points - 1) as f64;
        let emb = [theta.cos(), theta.sin()];
        let a = arcface_forward(&emb, 0, &head, &with)?;
        let b = arcface_forward(&emb, 0, &head, &without)?;
        curves[0].push(a.logits[0]);
        curves[1].push(b.logits[0]);
        curves[2].push(a.loss);
        curves[3].push(b.loss);
    }
    Ok(curves.concat())
}

#[wasm_bindgen(js_name = arcfaceCurves)]
pub fn arcface_curves_js(scale: f64, margin: f64, rival_deg: f64, points: usize) -> Result<Vec<f64>, JsError> {
    arcface_curves(scale, margin, rival_deg, points).map_err(js_err)
}

/// Detection trade-off for Gaussian target / non-target scores.
#[wasm_bindgen]
pub struct Detection {
    eer: f64,
    eer_threshold: f64,
    min_dcf: f64,
    far: Vec<f64>,
    frr: Vec<f64>,
}

#[wasm_bindgen]
impl Detection {
    #[wasm_bindgen(getter)]
    pub fn eer(&self) -> f64 {
        self.eer
    }
    #[wasm_bindgen(getter)]
    pub fn eer_threshold(&self) -> f64 {
        self.eer_threshold
    }
    #[wasm_bindgen(getter)]
    pub fn min_dcf(&self) -> f64 {
        self.min_dcf
    }
    #[wasm_bindgen(getter)]
    pub fn far(&self) -> Vec<f64> {
        self.far.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn frr(&self) -> Vec<f64> {
        self.frr.clone()
    }
}

/// Targets ~ N(separation, 1), non-targets ~ N(0, 1).
pub fn detection(
    separation: f64,
    targets: usize,
    nontargets: usize,
    p_target: f64,
    seed: u64,
) -> augkit::Result<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ScoreSet::default();
    for i in 0..targets + nontargets {
        let z: f64 = StandardNormal.sample(&mut rng);
        let is_target = i < targets;
        set.push(z + if is_target { separation } else { 0.0 }, is_target);
    }
    let eer = compute_eer(&set)?;
    let dcf = DcfConfig { p_target, ..DcfConfig::default() };
    let min = compute_min_dcf(&set, &dcf)?;
    let points = det_points(&set)?;
    Ok(Detection {
        eer: eer.eer,
        eer_threshold: eer.threshold,
        min_dcf: min.min_dcf,
        far: points.iter().map(|p| p.far).collect(),
        frr: points.iter().map(|p| p.frr).collect(),
    })
}

#[wasm_bindgen(js_name = detection)]
pub fn detection_js(
    separation: f64,
    targets: usize,
    nontargets: usize,
    p_target: f64,
    seed: u32,
) -> Result<Detection, JsError> {
    detection(separation, targets, nontargets, p_target, seed as u64).map_err(js_err)
}
