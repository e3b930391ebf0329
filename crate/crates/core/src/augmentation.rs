//! Dataset-to-dataset augmentation: speed-perturbed copies under new speaker
//! labels, and similarity filtering of synthesized (voice-converted) speech.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{self, SpeedFactor, Waveform};
use crate::embedder::SpeakerEmbedding;
use crate::error::{Error, Result};
use crate::scoring::{cosine, normalized_mean};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    PitchShift,
    VcInSet,
    VcOutSet,
    SurrogateVc,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::PitchShift => "pitch_shift",
            Origin::VcInSet => "vc_in_set",
            Origin::VcOutSet => "vc_out_set",
            Origin::SurrogateVc => "surrogate_vc",
        }
    }

    pub fn is_vc(self) -> bool {
        matches!(self, Origin::VcInSet | Origin::VcOutSet | Origin::SurrogateVc)
    }
}

/// Where a generated utterance came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_utt_id: String,
    /// Speed factor or conversion target speaker.
    pub parameter: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub speaker_label: String,
    pub audio_path: String,
    pub phrase_id: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl ManifestEntry {
    pub fn original(
        utt_id: impl Into<String>,
        speaker_label: impl Into<String>,
        audio_path: impl Into<String>,
        phrase_id: impl Into<String>,
    ) -> Self {
        Self {
            utt_id: utt_id.into(),
            speaker_label: speaker_label.into(),
            audio_path: audio_path.into(),
            phrase_id: phrase_id.into(),
            origin: Origin::Original,
            provenance: None,
        }
    }
}

/// Unique utterance ids; provenance on every generated entry.
pub fn validate_manifest(entries: &[ManifestEntry]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.utt_id.as_str()) {
            return Err(Error::Naming(format!("duplicate utt_id {}", e.utt_id)));
        }
        if e.origin != Origin::Original && e.provenance.is_none() {
            return Err(Error::Format(format!(
                "{} has origin {} but no provenance",
                e.utt_id,
                e.origin.as_str()
            )));
        }
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).expect("serializable row");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let entries = read_jsonl(path.as_ref())?;
    validate_manifest(&entries)?;
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    validate_manifest(entries)?;
    write_jsonl(path.as_ref(), entries)
}

/// `<manifest>.aug.jsonl`
pub fn records_path(manifest: impl AsRef<Path>) -> PathBuf {
    let mut s = manifest.as_ref().as_os_str().to_owned();
    s.push(".aug.jsonl");
    PathBuf::from(s)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<AugmentationRecord>> {
    read_jsonl(path.as_ref())
}

pub fn write_records(path: impl AsRef<Path>, records: &[AugmentationRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    InSet,
    OutOfSet,
}

/// Similarity gate against the target speaker's centroid.
///
/// In-set keeps candidates strictly above the threshold; out-of-set drops
/// only those strictly below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub mode: FilterMode,
    pub threshold: f64,
}

impl FilterPolicy {
    pub const IN_SET_THRESHOLD: f64 = 0.6;
    pub const OUT_OF_SET_THRESHOLD: f64 = 0.3;

    pub fn in_set() -> Self {
        Self {
            mode: FilterMode::InSet,
            threshold: Self::IN_SET_THRESHOLD,
        }
    }

    pub fn out_of_set() -> Self {
        Self {
            mode: FilterMode::OutOfSet,
            threshold: Self::OUT_OF_SET_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "filter threshold {} outside [-1, 1]",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn retains(&self, similarity: f64) -> bool {
        match self.mode {
            FilterMode::InSet => similarity > self.threshold,
            FilterMode::OutOfSet => similarity >= self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub utt_id: String,
    pub source_utt_id: String,
    pub method: Origin,
    /// Speed factor or conversion target speaker.
    pub parameter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<FilterPolicy>,
    pub retained: bool,
}

/// `label#sp<factor>`
pub fn speed_label(label: &str, factor: SpeedFactor) -> String {
    format!("{label}#sp{}", factor.label())
}

fn audio_file_name(utt_id: &str) -> String {
    let safe: String = utt_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.wav")
}

/// Adds one speed-perturbed copy of every entry per factor, each under a new
/// speaker label. Returns the input entries followed by the generated ones
/// in utt_id order, together with one record per generated entry. Audio
/// paths of new entries point into `audio_dir`; rendering the audio is
/// [`render_speed_perturbed`]'s job.
pub fn pitch_shift_augment(
    manifest: &[ManifestEntry],
    factors: &[SpeedFactor],
    audio_dir: &str,
) -> Result<(Vec<ManifestEntry>, Vec<AugmentationRecord>)> {
    validate_manifest(manifest)?;
    if let Some(f) = factors.iter().find(|f| f.value() == 1.0) {
        return Err(Error::Domain(format!("speed factor {f} produces no augmentation")));
    }
    let existing_labels: BTreeSet<&str> =
        manifest.iter().map(|e| e.speaker_label.as_str()).collect();
    let mut ids: HashSet<String> = manifest.iter().map(|e| e.utt_id.clone()).collect();
    let mut new_labels: BTreeMap<String, (String, String)> = BTreeMap::new();

    let mut generated = Vec::with_capacity(manifest.len() * factors.len());
    let mut records = Vec::with_capacity(manifest.len() * factors.len());
    for entry in manifest {
        for &factor in factors {
            let label = speed_label(&entry.speaker_label, factor);
            if existing_labels.contains(label.as_str()) {
                return Err(Error::Naming(format!("generated speaker label {label} already exists")));
            }
            let key = (entry.speaker_label.clone(), factor.label());
            match new_labels.get(&label) {
                Some(prev) if *prev != key => {
                    return Err(Error::Naming(format!("speaker label {label} generated twice")))
                }
                _ => {
                    new_labels.insert(label.clone(), key);
                }
            }
            let utt_id = speed_label(&entry.utt_id, factor);
            if !ids.insert(utt_id.clone()) {
                return Err(Error::Naming(format!("generated utt_id {utt_id} collides")));
            }
            let audio_path = if audio_dir.is_empty() {
                audio_file_name(&utt_id)
            } else {
                format!("{}/{}", audio_dir.trim_end_matches('/'), audio_file_name(&utt_id))
            };
            records.push(AugmentationRecord {
                utt_id: utt_id.clone(),
                source_utt_id: entry.utt_id.clone(),
                method: Origin::PitchShift,
                parameter: factor.label(),
                similarity: None,
                policy: None,
                retained: true,
            });
            generated.push(ManifestEntry {
                utt_id,
                speaker_label: label,
                audio_path,
                phrase_id: entry.phrase_id.clone(),
                origin: Origin::PitchShift,
                provenance: Some(Provenance {
                    source_utt_id: entry.utt_id.clone(),
                    parameter: factor.label(),
                }),
            });
        }
    }
    generated.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    records.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    let mut out = manifest.to_vec();
    out.extend(generated);
    Ok((out, records))
}

/// Reads `source`, perturbs it, writes `dest`.
pub fn render_speed_perturbed(source: &Path, factor: SpeedFactor, dest: &Path) -> Result<()> {
    let wave = audio::read_wav(source)?;
    let out = audio::speed_perturb(&wave, factor)?;
    audio::write_wav(&out, dest)
}

/// Distinct speakers and utterance count of a manifest.
pub fn manifest_counts(entries: &[ManifestEntry]) -> (usize, usize) {
    let speakers: BTreeSet<&str> = entries.iter().map(|e| e.speaker_label.as_str()).collect();
    (speakers.len(), entries.len())
}

/// Mean of length-normalized embeddings per speaker.
pub fn speaker_centroids(embeddings: &[SpeakerEmbedding]) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut groups: BTreeMap<&str, Vec<&[f32]>> = BTreeMap::new();
    for e in embeddings {
        let label = e
            .speaker_label
            .as_deref()
            .ok_or_else(|| Error::Domain(format!("embedding {} has no speaker label", e.utt_id)))?;
        groups.entry(label).or_default().push(&e.vector);
    }
    groups
        .into_iter()
        .map(|(label, vs)| {
            let c = normalized_mean(&vs)?;
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-9 {
                return Err(Error::Degenerate(format!(
                    "centroid of speaker {label} has near-zero norm {norm:e}"
                )));
            }
            Ok((label.to_string(), c))
        })
        .collect()
}

/// A synthesized utterance awaiting the similarity gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entry: ManifestEntry,
    pub target_speaker: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub retained: Vec<ManifestEntry>,
    pub records: Vec<AugmentationRecord>,
}

/// Scores each candidate against its target speaker's centroid and keeps
/// those the policy admits. Every candidate yields one record.
pub fn filter_generated(
    candidates: &[Candidate],
    centroids: &BTreeMap<String, Vec<f64>>,
    policy: &FilterPolicy,
) -> Result<FilterOutcome> {
    policy.validate()?;
    let mut retained = Vec::new();
    let mut records = Vec::with_capacity(candidates.len());
    for c in candidates {
        let centroid = centroids
            .get(&c.target_speaker)
            .ok_or_else(|| Error::Lookup(format!("centroid for speaker {}", c.target_speaker)))?;
        let emb: Vec<f64> = c.embedding.iter().map(|&x| x as f64).collect();
        let similarity = cosine(&emb, centroid)?;
        let keep = policy.retains(similarity);
        records.push(AugmentationRecord {
            utt_id: c.entry.utt_id.clone(),
            source_utt_id: c
                .entry
                .provenance
                .as_ref()
                .map_or_else(|| c.entry.utt_id.clone(), |p| p.source_utt_id.clone()),
            method: c.entry.origin,
            parameter: c.target_speaker.clone(),
            similarity: Some(similarity),
            policy: Some(*policy),
            retained: keep,
        });
        if keep {
            retained.push(c.entry.clone());
        }
    }
    Ok(FilterOutcome { retained, records })
}

/// Stand-in for a voice-conversion system: a random time warp plus a
/// spectral tilt steered by the target centroid, both scaled by `strength`.
/// `strength = 0` returns the source unchanged.
pub fn surrogate_vc(
    source: &Waveform,
    target_centroid: &[f64],
    strength: f64,
    seed: u64,
) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Domain(format!("strength {strength} outside [0, 1]")));
    }
    if strength == 0.0 {
        return Ok(source.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let warp = 1.0 + strength * 0.06 * rng.random_range(-1.0..=1.0);
    let warped = audio::speed_perturb(source, SpeedFactor::new(warp)?)?;

    let steer = if target_centroid.is_empty() {
        0.0
    } else {
        target_centroid.iter().sum::<f64>() / (target_centroid.len() as f64).sqrt()
    };
    let tilt = strength * (0.45 + 0.4 * steer.tanh());
    let mut out = Vec::with_capacity(warped.len());
    let mut prev = 0.0;
    for &x in &warped.samples {
        out.push(x - tilt * prev);
        prev = x;
    }
    let rms_in = source.rms();
    let rms_out = (out.iter().map(|x| x * x).sum::<f64>() / out.len() as f64).sqrt();
    if rms_out > 0.0 {
        let gain = rms_in / rms_out;
        out.iter_mut().for_each(|x| *x = (*x * gain).clamp(-1.0, 1.0));
    }
    Waveform::new(out, source.sample_rate_hz)
}

/// One planned synthesized utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedUtterance {
    pub target_speaker: String,
    pub index: usize,
    /// `None` only when the pool holds no eligible source.
    pub source_utt_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub items: Vec<PlannedUtterance>,
}

impl GenerationPlan {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Utterances synthesized per target speaker.
pub fn default_budget(mode: FilterMode) -> usize {
    match mode {
        FilterMode::InSet => 200,
        FilterMode::OutOfSet => 20,
    }
}

/// Plans `per_speaker` generations for each target speaker. In-set targets
/// draw source utterances from other speakers; out-of-set targets draw from
/// the whole pool.
pub fn generation_budget(
    speakers: &[String],
    mode: FilterMode,
    per_speaker: usize,
    pool: &[ManifestEntry],
    seed: u64,
) -> GenerationPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(speakers.len() * per_speaker);
    for speaker in speakers {
        let eligible = match mode {
            FilterMode::InSet => pool.iter().filter(|e| &e.speaker_label != speaker).count(),
            FilterMode::OutOfSet => pool.len(),
        };
        for index in 0..per_speaker {
            let source_utt_id = (eligible > 0).then(|| loop {
                let pick = &pool[rng.random_range(0..pool.len())];
                if mode == FilterMode::OutOfSet || &pick.speaker_label != speaker {
                    break pick.utt_id.clone();
                }
            });
            items.push(PlannedUtterance {
                target_speaker: speaker.clone(),
                index,
                source_utt_id,
            });
        }
    }
    GenerationPlan { items }
}

/// Utt id of a planned synthesized utterance.
pub fn generated_utt_id(item: &PlannedUtterance, origin: Origin) -> String {
    format!("{}#{}{:04}", item.target_speaker, origin.as_str(), item.index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::synth_tone;
    use proptest::prelude::*;
    use rand::Rng;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn corpus(speakers: usize, utts: usize) -> Vec<ManifestEntry> {
        (0..speakers)
            .flat_map(|s| {
                (0..utts).map(move |u| {
                    ManifestEntry::original(
                        format!("spk{s:03}_u{u}"),
                        format!("spk{s:03}"),
                        format!("audio/spk{s:03}_u{u}.wav"),
                        "wake",
                    )
                })
            })
            .collect()
    }

    fn factors(v: &[f64]) -> Vec<SpeedFactor> {
        v.iter().map(|&f| SpeedFactor::new(f).unwrap()).collect()
    }

    #[test]
    fn table_scale_counts() {
        let m = corpus(340, 9);
        assert_eq!(manifest_counts(&m), (340, 3060));
        let (out, records) = pitch_shift_augment(&m, &factors(&[0.9, 1.1]), "audio/pitch").unwrap();
        assert_eq!(manifest_counts(&out), (1020, 9180));
        assert_eq!(records.len(), 6120);
    }

    #[test]
    fn no_factors_is_a_no_op() {
        let m = corpus(3, 2);
        let (out, records) = pitch_shift_augment(&m, &[], "a").unwrap();
        assert_eq!(manifest_counts(&out), manifest_counts(&m));
        assert!(records.is_empty());
    }

    #[test]
    fn single_utterance_single_factor() {
        let m = corpus(1, 1);
        let (out, records) = pitch_shift_augment(&m, &factors(&[0.9]), "aug").unwrap();
        assert_eq!(manifest_counts(&out), (2, 2));
        let new = out.iter().find(|e| e.origin == Origin::PitchShift).unwrap();
        assert_eq!(new.speaker_label, "spk000#sp0.9");
        assert_eq!(new.utt_id, "spk000_u0#sp0.9");
        assert_eq!(new.audio_path, "aug/spk000_u0_sp0.9.wav");
        assert_eq!(new.phrase_id, "wake");
        assert_eq!(records[0].parameter, "0.9");
        assert_eq!(records[0].source_utt_id, "spk000_u0");
    }

    #[test]
    fn unity_factor_and_collisions_rejected() {
        let m = corpus(1, 1);
        assert!(matches!(
            pitch_shift_augment(&m, &factors(&[1.0]), ""),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            pitch_shift_augment(&m, &factors(&[0.9, 0.9]), ""),
            Err(Error::Naming(_))
        ));
        let mut clash = corpus(1, 1);
        clash.push(ManifestEntry::original("x", "spk000#sp1.1", "x.wav", "wake"));
        assert!(matches!(
            pitch_shift_augment(&clash, &factors(&[1.1]), ""),
            Err(Error::Naming(_))
        ));
    }

    #[test]
    fn manifest_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let (out, records) = pitch_shift_augment(&corpus(2, 1), &factors(&[1.1]), "a").unwrap();
        write_manifest(&p, &out).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), out);
        let text = std::fs::read_to_string(&p).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: BTreeSet<&str> = first.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(
            keys,
            ["audio_path", "origin", "phrase_id", "speaker_label", "utt_id"].into_iter().collect()
        );
        let rp = records_path(&p);
        assert!(rp.to_string_lossy().ends_with("m.jsonl.aug.jsonl"));
        write_records(&rp, &records).unwrap();
        assert_eq!(read_records(&rp).unwrap(), records);
    }

    #[test]
    fn duplicate_ids_and_missing_provenance_rejected() {
        let mut m = corpus(1, 2);
        m[1].utt_id = m[0].utt_id.clone();
        assert!(matches!(validate_manifest(&m), Err(Error::Naming(_))));
        let mut m = corpus(1, 1);
        m[0].origin = Origin::PitchShift;
        assert!(matches!(validate_manifest(&m), Err(Error::Format(_))));
    }

    fn emb(utt: &str, spk: &str, v: &[f32]) -> SpeakerEmbedding {
        SpeakerEmbedding::new(utt, Some(spk.to_string()), v.to_vec())
    }

    #[test]
    fn centroids() {
        let c = speaker_centroids(&[emb("a", "s", &[3.0, 4.0])]).unwrap();
        assert!((c["s"][0] - 0.6).abs() < 1e-15 && (c["s"][1] - 0.8).abs() < 1e-15);

        let err = speaker_centroids(&[emb("a", "s", &[1.0, 0.0]), emb("b", "s", &[-2.0, 0.0])]);
        assert!(matches!(err, Err(Error::Degenerate(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cluster: Vec<SpeakerEmbedding> = (0..12)
            .map(|i| {
                let v: Vec<f32> = (0..6).map(|_| rng.random_range(0.5f32..2.0)).collect();
                emb(&format!("u{i}"), "k", &v)
            })
            .collect();
        let got = &speaker_centroids(&cluster).unwrap()["k"];
        for d in 0..6 {
            let direct: f64 = cluster
                .iter()
                .map(|e| {
                    let n = e.vector.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                    e.vector[d] as f64 / n
                })
                .sum::<f64>()
                / 12.0;
            assert!((got[d] - direct).abs() <= 1e-12);
        }
    }

    fn candidate(id: &str, target: &str, v: &[f32]) -> Candidate {
        Candidate {
            entry: ManifestEntry {
                utt_id: id.into(),
                speaker_label: target.into(),
                audio_path: format!("{id}.wav"),
                phrase_id: "wake".into(),
                origin: Origin::SurrogateVc,
                provenance: Some(Provenance {
                    source_utt_id: "src".into(),
                    parameter: target.into(),
                }),
            },
            target_speaker: target.into(),
            embedding: v.to_vec(),
        }
    }

    #[test]
    fn in_set_threshold_is_strict() {
        let mut centroids = BTreeMap::new();
        centroids.insert("t".to_string(), vec![1.0, 0.0, 0.0]);
        // cosines 0.55 and 0.61 via integer vectors with integral norms
        let a = candidate("a", "t", &[11.0, 2.0, f32::sqrt(400.0 - 121.0 - 4.0)]);
        let b = candidate("b", "t", &[61.0, f32::sqrt(10_000.0 - 3721.0), 0.0]);
        let out = filter_generated(&[a, b], &centroids, &FilterPolicy::in_set()).unwrap();
        let sims: Vec<f64> = out.records.iter().map(|r| r.similarity.unwrap()).collect();
        assert!((sims[0] - 0.55).abs() < 1e-6);
        assert!((sims[1] - 0.61).abs() < 1e-6);
        assert_eq!(out.retained.len(), 1);
        assert_eq!(out.retained[0].utt_id, "b");
    }

    #[test]
    fn out_of_set_boundary_retained() {
        let mut centroids = BTreeMap::new();
        centroids.insert("t".to_string(), vec![1.0, 0.0, 0.0, 0.0]);
        let c = candidate("c", "t", &[3.0, 9.0, 3.0, 1.0]);
        let out = filter_generated(std::slice::from_ref(&c), &centroids, &FilterPolicy::out_of_set()).unwrap();
        assert_eq!(out.records[0].similarity, Some(0.3));
        assert!(out.records[0].retained);
        let everything = FilterPolicy { mode: FilterMode::InSet, threshold: -1.0 };
        let anti = candidate("d", "t", &[-1.0, 0.0, 0.0, 0.0]);
        let near = candidate("e", "t", &[-1.0, 1e-3, 0.0, 0.0]);
        let out = filter_generated(&[c, near], &centroids, &everything).unwrap();
        assert_eq!(out.retained.len(), 2);
        // exactly -1 is not strictly above -1
        let out = filter_generated(&[anti], &centroids, &everything).unwrap();
        assert!(out.retained.is_empty());
    }

    #[test]
    fn missing_centroid_and_bad_threshold() {
        let centroids = BTreeMap::new();
        let c = candidate("c", "nobody", &[1.0, 0.0]);
        assert!(matches!(
            filter_generated(&[c], &centroids, &FilterPolicy::in_set()),
            Err(Error::Lookup(_))
        ));
        let bad = FilterPolicy { mode: FilterMode::InSet, threshold: 1.5 };
        assert!(matches!(filter_generated(&[], &centroids, &bad), Err(Error::Config(_))));
    }

    fn mean_log_spectrum(w: &Waveform) -> Vec<f64> {
        let n = 512;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let mut acc = vec![0.0; n / 2 + 1];
        let frames = (w.len() - n) / 256 + 1;
        for f in 0..frames {
            let mut buf: Vec<Complex<f64>> = w.samples[f * 256..f * 256 + n]
                .iter()
                .map(|&x| Complex::new(x, 0.0))
                .collect();
            fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
        }
        acc.iter().map(|p| (p / frames as f64 + 1e-12).ln()).collect()
    }

    fn log_spectral_distance(a: &Waveform, b: &Waveform) -> f64 {
        let (x, y) = (mean_log_spectrum(a), mean_log_spectrum(b));
        (x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn voiced(seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = synth_tone(180.0, 0.5, 16_000).unwrap();
        for (i, x) in w.samples.iter_mut().enumerate() {
            let t = i as f64 / 16_000.0;
            *x = 0.3 * *x
                + 0.1 * (std::f64::consts::TAU * 720.0 * t).sin()
                + 0.05 * (std::f64::consts::TAU * 2900.0 * t).sin()
                + 0.01 * rng.random_range(-1.0..1.0);
        }
        w
    }

    #[test]
    fn surrogate_identity_and_determinism() {
        let src = voiced(1);
        let centroid = vec![0.2, -0.1, 0.4];
        assert_eq!(surrogate_vc(&src, &centroid, 0.0, 5).unwrap(), src);
        let a = surrogate_vc(&src, &centroid, 0.7, 5).unwrap();
        assert_eq!(a, surrogate_vc(&src, &centroid, 0.7, 5).unwrap());
        assert_ne!(a, surrogate_vc(&src, &centroid, 0.7, 6).unwrap());
        assert!(surrogate_vc(&src, &centroid, 1.5, 5).is_err());
    }

    #[test]
    fn surrogate_distance_grows_with_strength() {
        let src = voiced(2);
        let centroid = vec![0.3; 8];
        for seed in 0..5 {
            let weak = surrogate_vc(&src, &centroid, 0.1, seed).unwrap();
            let strong = surrogate_vc(&src, &centroid, 1.0, seed).unwrap();
            let (dw, ds) = (log_spectral_distance(&src, &weak), log_spectral_distance(&src, &strong));
            assert!(ds > dw, "seed {seed}: {ds} <= {dw}");
        }
    }

    #[test]
    fn budgets() {
        let pool = corpus(340, 9);
        let speakers: Vec<String> = (0..340).map(|s| format!("spk{s:03}")).collect();
        let plan = generation_budget(&speakers, FilterMode::InSet, default_budget(FilterMode::InSet), &pool, 1);
        assert_eq!(plan.len(), 68_000);
        assert!(plan.items.iter().all(|p| {
            let src = p.source_utt_id.as_deref().unwrap();
            !src.starts_with(&format!("{}_", p.target_speaker))
        }));
        assert!(generation_budget(&[], FilterMode::InSet, 200, &pool, 1).is_empty());
        let unseen: Vec<String> = (0..10).map(|s| format!("ext{s}")).collect();
        let plan = generation_budget(&unseen, FilterMode::OutOfSet, default_budget(FilterMode::OutOfSet), &pool, 1);
        assert_eq!(plan.len(), 200);
        assert_eq!(
            plan,
            generation_budget(&unseen, FilterMode::OutOfSet, 20, &pool, 1)
        );
    }

    #[test]
    fn in_set_budget_without_other_speakers_has_no_source() {
        let pool = corpus(1, 3);
        let plan = generation_budget(&["spk000".to_string()], FilterMode::InSet, 2, &pool, 0);
        assert!(plan.items.iter().all(|p| p.source_utt_id.is_none()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn filter_partitions_and_is_monotone(
            sims in proptest::collection::vec(-1.0f64..1.0, 1..40),
            t1 in -1.0f64..1.0,
            t2 in -1.0f64..1.0,
        ) {
            let mut centroids = BTreeMap::new();
            centroids.insert("t".to_string(), vec![1.0, 0.0]);
            let cands: Vec<Candidate> = sims
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let v = [s as f32, (1.0 - s * s).max(0.0).sqrt() as f32 + 1e-3];
                    candidate(&format!("c{i}"), "t", &v)
                })
                .collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let run = |t: f64| filter_generated(
                &cands, &centroids, &FilterPolicy { mode: FilterMode::InSet, threshold: t },
            ).unwrap();
            let (a, b) = (run(lo), run(hi));
            prop_assert!(b.retained.len() <= a.retained.len());
            for out in [&a, &b] {
                prop_assert_eq!(out.records.len(), cands.len());
                let kept: BTreeSet<&str> = out.retained.iter().map(|e| e.utt_id.as_str()).collect();
                for r in &out.records {
                    let p = r.policy.unwrap();
                    prop_assert_eq!(r.retained, p.retains(r.similarity.unwrap()));
                    prop_assert_eq!(r.retained, kept.contains(r.utt_id.as_str()));
                }
            }
        }

        #[test]
        fn speed_labels_are_injective(
            a in "[a-z]{1,4}", b in "[a-z]{1,4}",
            fa in 50u32..=200, fb in 50u32..=200,
        ) {
            let fa = SpeedFactor::new(fa as f64 / 100.0).unwrap();
            let fb = SpeedFactor::new(fb as f64 / 100.0).unwrap();
            if (a.as_str(), fa) != (b.as_str(), fb) {
                prop_assert_ne!(speed_label(&a, fa), speed_label(&b, fb));
            }
        }
    }
}
