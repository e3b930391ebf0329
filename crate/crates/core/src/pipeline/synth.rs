//! Synthetic text-dependent corpus: harmonic "voices" with speaker-specific
//! pitch and formants, all speaking the same short phrase.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::write_atomic;
use crate::audio::{write_wav, Waveform, CANONICAL_SAMPLE_RATE};
use crate::augmentation::{write_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::hash::split_seed;
use crate::parallel::par_map;
use crate::scoring::{format_trials, Trial};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub speakers: usize,
    pub train_utts: usize,
    /// Held-out utterances per speaker; the first enrolls, the rest are tested.
    pub eval_utts: usize,
    /// Non-target trials per test utterance.
    pub nontargets_per_test: usize,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            speakers: 20,
            train_utts: 9,
            eval_utts: 4,
            nontargets_per_test: 4,
            duration_s: 0.5,
            seed: 0,
        }
    }
}

/// Paths of a generated corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub root: PathBuf,
    pub train_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    pub trials: PathBuf,
    pub enrollments: PathBuf,
    pub config: PathBuf,
}

struct Voice {
    f0: f64,
    formants: [f64; 3],
    brightness: f64,
}

impl Voice {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self {
            f0: rng.random_range(90.0..260.0),
            formants: [
                rng.random_range(300.0..900.0),
                rng.random_range(900.0..2400.0),
                rng.random_range(2300.0..3600.0),
            ],
            brightness: rng.random_range(0.5..1.5),
        }
    }

    fn utterance(&self, duration_s: f64, seed: u64) -> Result<Waveform> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, 1.0).expect("unit normal");
        let f0 = self.f0 * (1.0 + 0.03 * jitter.sample(&mut rng));
        let formants = self.formants.map(|f| f * (1.0 + 0.02 * jitter.sample(&mut rng)));
        let sr = CANONICAL_SAMPLE_RATE as f64;
        let n = (duration_s * sr).round() as usize;
        let harmonics = (3800.0 / f0) as usize;
        let gains: Vec<f64> = (1..=harmonics)
            .map(|k| {
                let f = k as f64 * f0;
                let resonance: f64 = formants
                    .iter()
                    .map(|&fc| 1.0 / (1.0 + ((f - fc) / (0.12 * fc)).powi(2)))
                    .sum();
                resonance * (-(f / 4000.0) / self.brightness).exp()
            })
            .collect();
        let mut phase = 0.0;
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / n as f64;
            // rise-fall contour and envelope shared by every speaker: the phrase
            let contour = 1.0 + 0.15 * (std::f64::consts::PI * t).sin() - 0.05 * t;
            let envelope = (std::f64::consts::PI * t).sin().powf(0.5);
            phase += TAU * f0 * contour / sr;
            let voiced: f64 = gains
                .iter()
                .enumerate()
                .map(|(k, g)| g * ((k + 1) as f64 * phase).sin())
                .sum();
            samples.push(envelope * voiced + 0.002 * jitter.sample(&mut rng));
        }
        let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if peak > 0.0 {
            samples.iter_mut().for_each(|x| *x *= 0.5 / peak);
        }
        Waveform::new(samples, CANONICAL_SAMPLE_RATE)
    }
}

/// Writes audio, manifests, trials, enrollments and a starter config under
/// `root`.
pub fn synth_corpus(root: &Path, spec: &SynthSpec, jobs: usize) -> Result<SynthCorpus> {
    if spec.speakers < 2 || spec.train_utts == 0 || spec.eval_utts < 2 {
        return Err(Error::Config(
            "need >= 2 speakers, >= 1 training and >= 2 evaluation utterances each".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(spec.seed, "synth-voices"));
    let voices: Vec<Voice> = (0..spec.speakers).map(|_| Voice::draw(&mut rng)).collect();
    let label = |s: usize| format!("spk{s:03}");

    let mut train = Vec::new();
    let mut eval = Vec::new();
    for s in 0..spec.speakers {
        for u in 0..spec.train_utts {
            let id = format!("{}-t{u:02}", label(s));
            train.push((s, ManifestEntry::original(&id, label(s), format!("audio/{id}.wav"), "wake")));
        }
        for u in 0..spec.eval_utts {
            let id = format!("{}-e{u:02}", label(s));
            eval.push((s, ManifestEntry::original(&id, label(s), format!("audio/{id}.wav"), "wake")));
        }
    }

    let audio_dir = root.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let all: Vec<&(usize, ManifestEntry)> = train.iter().chain(&eval).collect();
    par_map(&all, jobs, |(s, e)| {
        let wave = voices[*s].utterance(spec.duration_s, split_seed(spec.seed, &e.utt_id))?;
        write_wav(&wave, root.join(&e.audio_path))
    })
    .into_iter()
    .collect::<Result<()>>()?;

    let mut trials = Vec::new();
    let mut enrollments = String::new();
    let mut trial_rng = ChaCha8Rng::seed_from_u64(split_seed(spec.seed, "synth-trials"));
    let k = spec.nontargets_per_test.min(spec.speakers - 1);
    for s in 0..spec.speakers {
        let _ = writeln!(enrollments, "{} {}-e00", label(s), label(s));
        for u in 1..spec.eval_utts {
            let test = format!("{}-e{u:02}", label(s));
            trials.push(Trial::new(label(s), &test, true));
            for o in sample(&mut trial_rng, spec.speakers - 1, k) {
                let other = if o >= s { o + 1 } else { o };
                trials.push(Trial::new(label(other), &test, false));
            }
        }
    }

    let corpus = SynthCorpus {
        root: root.to_path_buf(),
        train_manifest: root.join("train.jsonl"),
        eval_manifest: root.join("eval.jsonl"),
        trials: root.join("trials.txt"),
        enrollments: root.join("enroll.txt"),
        config: root.join("augkit.toml"),
    };
    let strip = |v: Vec<(usize, ManifestEntry)>| v.into_iter().map(|(_, e)| e).collect::<Vec<_>>();
    write_manifest(&corpus.train_manifest, &strip(train))?;
    write_manifest(&corpus.eval_manifest, &strip(eval))?;
    write_atomic(&corpus.trials, format_trials(&trials).as_bytes())?;
    write_atomic(&corpus.enrollments, enrollments.as_bytes())?;
    write_atomic(&corpus.config, starter_config(spec.seed).as_bytes())?;
    Ok(corpus)
}

fn starter_config(seed: u64) -> String {
    format!(
        r#"seed = {seed}
jobs = 4

[paths]
work_dir = "work"
data_root = "."
train_manifest = "train.jsonl"
eval_manifest = "eval.jsonl"
trials = "trials.txt"
enrollments = "enroll.txt"

[encoder]
embed_dim = 64

[train]
lr_init = 0.1
epochs = 40
batch_size = 32

[augment]
speed_factors = [0.9, 1.1]

[augment.vc]
enabled = true
per_speaker = 10
strength = 0.3

[scoring]
backend = "head_profile"
"#
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::read_manifest;
    use crate::pipeline::PipelineConfig;
    use crate::scoring::read_trials;

    #[test]
    fn corpus_shape() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            speakers: 3,
            train_utts: 2,
            eval_utts: 3,
            nontargets_per_test: 5,
            duration_s: 0.3,
            seed: 4,
        };
        let c = synth_corpus(dir.path(), &spec, 2).unwrap();
        assert_eq!(read_manifest(&c.train_manifest).unwrap().len(), 6);
        assert_eq!(read_manifest(&c.eval_manifest).unwrap().len(), 9);
        let trials = read_trials(&c.trials).unwrap();
        // 3 speakers x 2 tests x (1 target + 2 non-targets)
        assert_eq!(trials.len(), 18);
        assert_eq!(trials.iter().filter(|t| t.is_target).count(), 6);
        let w = crate::audio::read_wav(dir.path().join("audio/spk001-t01.wav")).unwrap();
        assert_eq!(w.len(), 4800);
        let cfg = PipelineConfig::load(&c.config, &Default::default()).unwrap();
        assert_eq!(cfg.paths.train_manifest, c.train_manifest);

        let again = tempfile::tempdir().unwrap();
        synth_corpus(again.path(), &spec, 1).unwrap();
        for f in ["train.jsonl", "trials.txt", "audio/spk002-e02.wav"] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(again.path().join(f)).unwrap()
            );
        }
    }
}
