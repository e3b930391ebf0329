//! Stage orchestration over a fixed work-directory layout:
//! augment, extract, filter, train, score, evaluate, report.
//!
//! Every stage reads only configured inputs and upstream files, writes its
//! outputs atomically, and leaves a JSON run summary under `runs/`. A stage
//! that fails leaves a `.partial-<stage>` marker behind; rerunning it
//! recomputes the same outputs and clears the marker.

mod config;
mod report;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{
    ArcFaceSettings, AugmentConfig, EncoderConfig, FilterConfig, Overrides, PathsConfig,
    PipelineConfig, ScoringBackend, ScoringConfig, TrainSettings, VcConfig,
};
pub use report::{ConditionRow, DatasetStats, ReportBundle, RetentionStats};
pub use synth::{synth_corpus, SynthCorpus, SynthSpec};

use crate::audio::{self, SpeedFactor};
use crate::augmentation::{
    self, generated_utt_id, generation_budget, pitch_shift_augment, read_manifest, read_records,
    records_path, speaker_centroids, surrogate_vc, validate_manifest, Candidate, FilterMode, ManifestEntry, Origin, Provenance,
};
use crate::embedder::{embed, init_encoder, EncoderParams, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::features::log_mel;
use crate::hash::{sha256_hex, split_seed};
use crate::losses::{train_head, HeadParams};
use crate::parallel::par_map;
use crate::scoring::{
    compute_eer, compute_min_dcf, cosine, det_csv, det_points, format_scores, join_scores,
    parse_enrollments, parse_scores, read_trials, score_trials,
};
use crate::store::EmbeddingStore;

/// Training-set variants compared in the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Baseline,
    PitchShift,
    Vc,
    Combined,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Baseline,
        Condition::PitchShift,
        Condition::Vc,
        Condition::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::PitchShift => "pitch_shift",
            Condition::Vc => "vc",
            Condition::Combined => "combined",
        }
    }

    pub fn includes(self, origin: Origin) -> bool {
        match self {
            Condition::Baseline => origin == Origin::Original,
            Condition::PitchShift => matches!(origin, Origin::Original | Origin::PitchShift),
            Condition::Vc => origin == Origin::Original || origin.is_vc(),
            Condition::Combined => true,
        }
    }

    /// Conditions supported by a manifest's mix of origins.
    pub fn available(entries: &[ManifestEntry]) -> Vec<Condition> {
        let pitch = entries.iter().any(|e| e.origin == Origin::PitchShift);
        let vc = entries.iter().any(|e| e.origin.is_vc());
        let mut out = vec![Condition::Baseline];
        if pitch {
            out.push(Condition::PitchShift);
        }
        if vc {
            out.push(Condition::Vc);
        }
        if pitch && vc {
            out.push(Condition::Combined);
        }
        out
    }

    pub fn select(self, entries: &[ManifestEntry]) -> Vec<&ManifestEntry> {
        entries.iter().filter(|e| self.includes(e.origin)).collect()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// File locations inside a work directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn augmented_manifest(&self) -> PathBuf {
        self.root.join("manifests/augmented.jsonl")
    }

    pub fn filtered_manifest(&self) -> PathBuf {
        self.root.join("manifests/filtered.jsonl")
    }

    pub fn train_store(&self) -> PathBuf {
        self.root.join("emb/train.emb")
    }

    pub fn eval_store(&self) -> PathBuf {
        self.root.join("emb/eval.emb")
    }

    pub fn failures(&self) -> PathBuf {
        self.root.join("emb/failures.jsonl")
    }

    pub fn head(&self, c: Condition) -> PathBuf {
        self.root.join(format!("emb/head-{c}.emb"))
    }

    pub fn head_info(&self, c: Condition) -> PathBuf {
        self.root.join(format!("emb/head-{c}.json"))
    }

    pub fn scores(&self, c: Condition) -> PathBuf {
        self.root.join(format!("scores/{c}.scores"))
    }

    pub fn metrics(&self, c: Condition) -> PathBuf {
        self.root.join(format!("reports/metrics-{c}.json"))
    }

    pub fn det(&self, c: Condition) -> PathBuf {
        self.root.join(format!("reports/det-{c}.csv"))
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("reports/report.json")
    }

    pub fn report_text(&self) -> PathBuf {
        self.root.join("reports/report.txt")
    }

    pub fn run_summary(&self, stage: &str) -> PathBuf {
        self.root.join(format!("runs/{stage}.json"))
    }

    pub fn partial_marker(&self, stage: &str) -> PathBuf {
        self.root.join(format!(".partial-{stage}"))
    }

    fn relative<'a>(&self, path: &'a Path) -> std::borrow::Cow<'a, str> {
        match path.strip_prefix(&self.root) {
            Ok(p) => p.to_string_lossy(),
            Err(_) => path.to_string_lossy(),
        }
    }
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Dependency(path.to_path_buf()))
    }
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    stage: &'a str,
    config_hash: String,
    inputs_hash: String,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    wall_time_s: f64,
}

#[derive(Debug, Default)]
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        write_atomic(&path, bytes)?;
        self.0.push(path);
        Ok(())
    }
}

/// Stage outcome counts, printed by the command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub speakers: usize,
    pub utterances: usize,
    pub pitch_shift: usize,
    pub vc_candidates: usize,
}

impl fmt::Display for AugmentSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} speakers / {} utterances ({} speed-perturbed, {} converted)",
            self.speakers, self.utterances, self.pitch_shift, self.vc_candidates
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub train: usize,
    pub eval: usize,
}

impl fmt::Display for ExtractSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} training and {} evaluation embeddings", self.train, self.eval)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub candidates: usize,
    pub retained: usize,
    pub mean_similarity: Option<f64>,
}

impl fmt::Display for FilterSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "retained {} of {} converted utterances", self.retained, self.candidates)?;
        if let Some(m) = self.mean_similarity {
            write!(f, " (mean similarity {m:.3})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadInfo {
    pub condition: Condition,
    pub classes: usize,
    pub utterances: usize,
    pub embed_dim: usize,
    pub lr_init: f64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub loss_trace: Vec<f64>,
}

/// Per-condition metrics as written by the evaluate stage. Thresholds are
/// `null` when the optimum sits at an unbounded threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub condition: Condition,
    pub targets: usize,
    pub nontargets: usize,
    pub eer: f64,
    pub eer_threshold: Option<f64>,
    pub min_dcf: f64,
    pub min_dcf_threshold: Option<f64>,
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Serialize)]
struct Failure<'a> {
    set: &'a str,
    utt_id: &'a str,
    error: String,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub layout: Layout,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        let layout = Layout::new(config.paths.work_dir.clone());
        Self { config, layout }
    }

    fn jobs(&self) -> usize {
        self.config.jobs
    }

    /// Absolute location of an entry's audio. Original utterances live under
    /// the data root, generated ones under the work directory.
    pub fn audio_path(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else if entry.origin == Origin::Original {
            self.config.paths.data_root.join(p)
        } else {
            self.layout.root().join(p)
        }
    }

    fn stage<T>(
        &self,
        name: &str,
        inputs: &[PathBuf],
        body: impl FnOnce(&mut Outputs) -> Result<T>,
    ) -> Result<T> {
        for p in inputs {
            require(p)?;
        }
        let started = Instant::now();
        let marker = self.layout.partial_marker(name);
        write_atomic(&marker, b"")?;
        let mut outputs = Outputs::default();
        let value = body(&mut outputs)?;

        let digest = |p: &PathBuf| -> Result<FileDigest> {
            Ok(FileDigest {
                path: self.layout.relative(p).into_owned(),
                sha256: sha256_hex(&read_bytes(p)?),
            })
        };
        let inputs: Vec<FileDigest> = inputs.iter().map(digest).collect::<Result<_>>()?;
        let joined: String = inputs.iter().map(|d| d.sha256.as_str()).collect();
        let summary = RunSummary {
            stage: name,
            config_hash: self.config.content_hash(),
            inputs_hash: sha256_hex(joined.as_bytes()),
            inputs,
            outputs: outputs.0.iter().map(digest).collect::<Result<_>>()?,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        write_atomic(&self.layout.run_summary(name), &to_json(&summary))?;
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        Ok(value)
    }

    fn encoder(&self) -> Result<EncoderParams> {
        init_encoder(
            self.config.encoder_seed(),
            self.config.features.mel_bins,
            self.config.encoder.embed_dim,
        )
    }

    fn embed_entry(&self, entry: &ManifestEntry, encoder: &EncoderParams) -> Result<Vec<f32>> {
        let wave = audio::read_wav(self.audio_path(entry))?;
        let features = log_mel(&wave, &self.config.features)?;
        embed(&features, encoder)
    }

    /// Speed perturbation and surrogate conversion of the training manifest.
    pub fn augment(&self) -> Result<AugmentSummary> {
        let source = self.config.paths.train_manifest.clone();
        self.stage("augment", std::slice::from_ref(&source), |out| {
            let originals = read_manifest(&source)?;
            let factors = self.config.speed_factors()?;
            let (mut entries, records) = pitch_shift_augment(&originals, &factors, "audio/pitch")?;
            let pitch_shift = entries.len() - originals.len();
            self.render_pitch_shift(&originals, &entries[originals.len()..], &factors)?;

            let mut vc_candidates = 0;
            if self.config.augment.vc.enabled {
                let vc = self.render_surrogate_vc(&originals, &entries)?;
                vc_candidates = vc.len();
                entries.extend(vc);
            }

            validate_manifest(&entries)?;
            let manifest = self.layout.augmented_manifest();
            let (speakers, utterances) = augmentation::manifest_counts(&entries);
            out.write(manifest.clone(), &jsonl(&entries))?;
            out.write(records_path(&manifest), &jsonl(&records))?;
            Ok(AugmentSummary {
                speakers,
                utterances,
                pitch_shift,
                vc_candidates,
            })
        })
    }

    fn render_pitch_shift(
        &self,
        originals: &[ManifestEntry],
        generated: &[ManifestEntry],
        factors: &[SpeedFactor],
    ) -> Result<()> {
        let sources: HashMap<&str, &ManifestEntry> =
            originals.iter().map(|e| (e.utt_id.as_str(), e)).collect();
        let by_label: HashMap<String, SpeedFactor> =
            factors.iter().map(|f| (f.label(), *f)).collect();
        par_map(generated, self.jobs(), |entry| {
            let dest = self.audio_path(entry);
            if dest.exists() {
                return Ok(());
            }
            let prov = entry.provenance.as_ref().expect("generated entries carry provenance");
            let source = sources[prov.source_utt_id.as_str()];
            let wave = audio::read_wav(self.audio_path(source))?;
            let out = audio::speed_perturb(&wave, by_label[&prov.parameter])?;
            write_wav_atomic(&out, &dest)
        })
        .into_iter()
        .collect()
    }

    fn render_surrogate_vc(
        &self,
        originals: &[ManifestEntry],
        existing: &[ManifestEntry],
    ) -> Result<Vec<ManifestEntry>> {
        let vc = self.config.augment.vc;
        let encoder = self.encoder()?;
        let vectors = par_map(originals, self.jobs(), |e| self.embed_entry(e, &encoder));
        let embeddings = originals
            .iter()
            .zip(vectors)
            .map(|(e, v)| Ok(SpeakerEmbedding::new(&e.utt_id, Some(e.speaker_label.clone()), v?)))
            .collect::<Result<Vec<_>>>()?;
        let centroids = speaker_centroids(&embeddings)?;
        let speakers: Vec<String> = centroids.keys().cloned().collect();
        let plan = generation_budget(
            &speakers,
            FilterMode::InSet,
            vc.per_speaker,
            originals,
            self.config.stage_seed("vc-plan"),
        );

        let sources: HashMap<&str, &ManifestEntry> =
            originals.iter().map(|e| (e.utt_id.as_str(), e)).collect();
        let taken: BTreeSet<&str> = existing.iter().map(|e| e.utt_id.as_str()).collect();
        let mut entries = Vec::new();
        for item in &plan.items {
            let Some(src) = &item.source_utt_id else { continue };
            let utt_id = generated_utt_id(item, Origin::SurrogateVc);
            if taken.contains(utt_id.as_str()) {
                return Err(Error::Naming(format!("converted utt_id {utt_id} collides")));
            }
            entries.push(ManifestEntry {
                audio_path: format!("audio/vc/{}.wav", utt_id.replace('#', "_")),
                utt_id,
                speaker_label: item.target_speaker.clone(),
                phrase_id: sources[src.as_str()].phrase_id.clone(),
                origin: Origin::SurrogateVc,
                provenance: Some(Provenance {
                    source_utt_id: src.clone(),
                    parameter: item.target_speaker.clone(),
                }),
            });
        }
        entries.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));

        par_map(&entries, self.jobs(), |entry| {
            let dest = self.audio_path(entry);
            if dest.exists() {
                return Ok(());
            }
            let prov = entry.provenance.as_ref().expect("converted entries carry provenance");
            let wave = audio::read_wav(self.audio_path(sources[prov.source_utt_id.as_str()]))?;
            let seed = split_seed(self.config.stage_seed("vc"), &entry.utt_id);
            let out = surrogate_vc(&wave, &centroids[&entry.speaker_label], vc.strength, seed)?;
            write_wav_atomic(&out, &dest)
        })
        .into_iter()
        .collect::<Result<()>>()?;
        Ok(entries)
    }

    /// One embedding per utterance of the augmented and evaluation manifests.
    pub fn extract(&self) -> Result<ExtractSummary> {
        let augmented = self.layout.augmented_manifest();
        let eval = self.config.paths.eval_manifest.clone();
        self.stage("extract", &[augmented.clone(), eval.clone()], |out| {
            let encoder = self.encoder()?;
            let mut failures = Vec::new();
            let mut counts = Vec::new();
            for (set, manifest, dest) in [
                ("train", &augmented, self.layout.train_store()),
                ("eval", &eval, self.layout.eval_store()),
            ] {
                let entries = read_manifest(manifest)?;
                let vectors = par_map(&entries, self.jobs(), |e| self.embed_entry(e, &encoder));
                let mut store = EmbeddingStore::new(self.config.encoder.embed_dim);
                for (entry, v) in entries.iter().zip(vectors) {
                    match v {
                        Ok(v) => store.push(entry.utt_id.clone(), v)?,
                        Err(e) => failures.push((set, entry.utt_id.clone(), e.to_string())),
                    }
                }
                counts.push(store.len());
                out.write(dest, &store.to_bytes()?)?;
            }
            let rows: Vec<Failure> = failures
                .iter()
                .map(|(set, utt_id, error)| Failure { set, utt_id, error: error.clone() })
                .collect();
            out.write(self.layout.failures(), &jsonl(&rows))?;
            if !failures.is_empty() {
                return Err(Error::ItemFailures {
                    count: failures.len(),
                    list: self.layout.failures(),
                });
            }
            Ok(ExtractSummary {
                train: counts[0],
                eval: counts[1],
            })
        })
    }

    /// Similarity gate on converted utterances against speaker centroids.
    pub fn filter(&self) -> Result<FilterSummary> {
        let augmented = self.layout.augmented_manifest();
        let store_path = self.layout.train_store();
        self.stage("filter", &[augmented.clone(), store_path.clone()], |out| {
            let entries = read_manifest(&augmented)?;
            let sidecar = records_path(&augmented);
            let mut records = if sidecar.exists() { read_records(&sidecar)? } else { Vec::new() };
            let store = EmbeddingStore::read(&store_path)?;
            let index = store.index();
            let lookup = |id: &str| index.get(id).copied().ok_or_else(|| Error::Lookup(id.to_string()));

            let candidates: Vec<&ManifestEntry> = entries.iter().filter(|e| e.origin.is_vc()).collect();
            let mut retained_ids = BTreeSet::new();
            let mut similarities = Vec::new();
            if !candidates.is_empty() {
                let references = entries
                    .iter()
                    .filter(|e| e.origin == Origin::Original)
                    .map(|e| {
                        Ok(SpeakerEmbedding::new(
                            &e.utt_id,
                            Some(e.speaker_label.clone()),
                            lookup(&e.utt_id)?.to_vec(),
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let centroids = speaker_centroids(&references)?;
                for (mode, policy) in [
                    (false, self.config.filter.in_set()),
                    (true, self.config.filter.out_of_set()),
                ] {
                    let group = candidates
                        .iter()
                        .filter(|e| (e.origin == Origin::VcOutSet) == mode)
                        .map(|e| {
                            Ok(Candidate {
                                entry: (*e).clone(),
                                target_speaker: e.speaker_label.clone(),
                                embedding: lookup(&e.utt_id)?.to_vec(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let outcome = augmentation::filter_generated(&group, &centroids, &policy)?;
                    retained_ids.extend(outcome.retained.into_iter().map(|e| e.utt_id));
                    similarities.extend(outcome.records.iter().filter_map(|r| r.similarity));
                    records.extend(outcome.records);
                }
            }
            records.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
            let filtered: Vec<ManifestEntry> = entries
                .iter()
                .filter(|e| !e.origin.is_vc() || retained_ids.contains(&e.utt_id))
                .cloned()
                .collect();
            let manifest = self.layout.filtered_manifest();
            out.write(manifest.clone(), &jsonl(&filtered))?;
            out.write(records_path(&manifest), &jsonl(&records))?;
            Ok(FilterSummary {
                candidates: candidates.len(),
                retained: retained_ids.len(),
                mean_similarity: mean(&similarities),
            })
        })
    }

    /// Trains one ArcFace head per available condition.
    pub fn train(&self) -> Result<Vec<HeadInfo>> {
        let manifest = self.layout.filtered_manifest();
        let store_path = self.layout.train_store();
        self.stage("train", &[manifest.clone(), store_path.clone()], |out| {
            let entries = read_manifest(&manifest)?;
            let store = EmbeddingStore::read(&store_path)?;
            let index = store.index();
            let conditions = Condition::available(&entries);
            let trained = par_map(&conditions, self.jobs(), |&c| {
                let subset = c.select(&entries);
                let labels: BTreeSet<&str> = subset.iter().map(|e| e.speaker_label.as_str()).collect();
                let class_of: HashMap<&str, usize> =
                    labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
                let examples = subset
                    .iter()
                    .map(|e| {
                        let v = index.get(e.utt_id.as_str()).ok_or_else(|| Error::Lookup(e.utt_id.clone()))?;
                        Ok((v.iter().map(|&x| x as f64).collect(), class_of[e.speaker_label.as_str()]))
                    })
                    .collect::<Result<Vec<(Vec<f64>, usize)>>>()?;
                let arc = self.config.arcface(labels.len());
                let outcome = train_head(&examples, &arc, &self.config.schedule())?;
                let head = EmbeddingStore::from_records(
                    labels
                        .iter()
                        .enumerate()
                        .map(|(i, l)| (l.to_string(), outcome.head.row(i).iter().map(|&w| w as f32).collect()))
                        .collect(),
                )?;
                let info = HeadInfo {
                    condition: c,
                    classes: labels.len(),
                    utterances: examples.len(),
                    embed_dim: arc.embed_dim,
                    lr_init: self.config.train.lr_init,
                    epochs: self.config.train.epochs,
                    final_loss: outcome.loss_trace.last().copied(),
                    loss_trace: outcome.loss_trace,
                };
                Ok((c, head, info))
            });
            let mut infos = Vec::new();
            for t in trained {
                let (c, head, info) = t?;
                out.write(self.layout.head(c), &head.to_bytes()?)?;
                out.write(self.layout.head_info(c), &to_json(&info))?;
                infos.push(info);
            }
            Ok(infos)
        })
    }

    fn present(&self, path: impl Fn(Condition) -> PathBuf) -> Vec<Condition> {
        Condition::ALL.into_iter().filter(|&c| path(c).exists()).collect()
    }

    /// Scores the trial list once per trained head.
    pub fn score(&self) -> Result<Vec<Condition>> {
        let paths = &self.config.paths;
        let mut inputs = vec![paths.trials.clone(), self.layout.eval_store()];
        inputs.extend(paths.enrollments.clone());
        let conditions = self.present(|c| self.layout.head(c));
        if conditions.is_empty() {
            return Err(Error::Dependency(self.layout.head(Condition::Baseline)));
        }
        inputs.extend(conditions.iter().map(|&c| self.layout.head(c)));
        self.stage("score", &inputs, |out| {
            let trials = read_trials(&paths.trials)?;
            let enrollments = match &paths.enrollments {
                Some(p) => parse_enrollments(
                    &std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
                )?,
                None => BTreeMap::new(),
            };
            let eval = EmbeddingStore::read(self.layout.eval_store())?;
            let eval_index: HashMap<String, Vec<f32>> = eval.records.iter().cloned().collect();
            for &c in &conditions {
                let head = EmbeddingStore::read(self.layout.head(c))?;
                let scores = match self.config.scoring.backend {
                    ScoringBackend::Embedding => {
                        score_trials(&trials, &eval_index, &enrollments, self.jobs())?
                    }
                    ScoringBackend::HeadProfile => {
                        let params = head_params(&head);
                        let profiles: Vec<Result<(String, Vec<f32>)>> =
                            par_map(&eval.records, self.jobs(), |(id, v)| {
                                let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                                let p = params.cosines(&v)?;
                                Ok((id.clone(), p.iter().map(|&x| x as f32).collect()))
                            });
                        let profiles = profiles.into_iter().collect::<Result<HashMap<_, _>>>()?;
                        score_trials(&trials, &profiles, &enrollments, self.jobs())?
                    }
                    ScoringBackend::SpeakerModel => {
                        let rows = head.index();
                        par_map(&trials, self.jobs(), |t| {
                            let model = rows
                                .get(t.enroll_id.as_str())
                                .ok_or_else(|| Error::Lookup(t.enroll_id.clone()))?;
                            let test = eval_index
                                .get(&t.test_id)
                                .ok_or_else(|| Error::Lookup(t.test_id.clone()))?;
                            cosine(model, test.as_slice())
                        })
                        .into_iter()
                        .collect::<Result<Vec<f64>>>()?
                    }
                };
                out.write(self.layout.scores(c), format_scores(&trials, &scores).as_bytes())?;
            }
            Ok(conditions.clone())
        })
    }

    /// EER, minDCF and DET points for every score file present.
    pub fn evaluate(&self) -> Result<Vec<ConditionMetrics>> {
        let trials_path = self.config.paths.trials.clone();
        let conditions = self.present(|c| self.layout.scores(c));
        if conditions.is_empty() {
            return Err(Error::Dependency(self.layout.scores(Condition::Baseline)));
        }
        let mut inputs = vec![trials_path.clone()];
        inputs.extend(conditions.iter().map(|&c| self.layout.scores(c)));
        self.stage("evaluate", &inputs, |out| {
            let trials = read_trials(&trials_path)?;
            let dcf = self.config.dcf;
            let mut all = Vec::new();
            for &c in &conditions {
                let path = self.layout.scores(c);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let set = join_scores(&trials, &parse_scores(&text)?)?;
                let eer = compute_eer(&set)?;
                let min = compute_min_dcf(&set, &dcf)?;
                let metrics = ConditionMetrics {
                    condition: c,
                    targets: set.num_targets(),
                    nontargets: set.num_nontargets(),
                    eer: eer.eer,
                    eer_threshold: finite(eer.threshold),
                    min_dcf: min.min_dcf,
                    min_dcf_threshold: finite(min.threshold),
                    p_target: dcf.p_target,
                    c_miss: dcf.c_miss,
                    c_fa: dcf.c_fa,
                };
                out.write(self.layout.metrics(c), &to_json(&metrics))?;
                out.write(self.layout.det(c), det_csv(&det_points(&set)?).as_bytes())?;
                all.push(metrics);
            }
            Ok(all)
        })
    }

    /// Side-by-side table of every evaluated condition.
    pub fn report(&self) -> Result<ReportBundle> {
        let conditions = self.present(|c| self.layout.metrics(c));
        if conditions.is_empty() {
            return Err(Error::Dependency(self.layout.metrics(Condition::Baseline)));
        }
        let mut inputs: Vec<PathBuf> = conditions.iter().map(|&c| self.layout.metrics(c)).collect();
        let manifest = self.layout.filtered_manifest();
        let have_manifest = manifest.exists();
        if have_manifest {
            inputs.push(manifest.clone());
            let sidecar = records_path(&manifest);
            if sidecar.exists() {
                inputs.push(sidecar);
            }
        }
        self.stage("report", &inputs, |out| {
            let metrics = conditions
                .iter()
                .map(|&c| from_json::<ConditionMetrics>(&self.layout.metrics(c)))
                .collect::<Result<Vec<_>>>()?;
            let (entries, records) = if have_manifest {
                let sidecar = records_path(&manifest);
                let records = if sidecar.exists() { read_records(&sidecar)? } else { Vec::new() };
                (Some(read_manifest(&manifest)?), records)
            } else {
                (None, Vec::new())
            };
            let det: BTreeMap<Condition, String> = conditions
                .iter()
                .map(|&c| (c, self.layout.relative(&self.layout.det(c)).into_owned()))
                .collect();
            let bundle = ReportBundle::assemble(&metrics, entries.as_deref(), &records, det);
            out.write(self.layout.report_json(), &to_json(&bundle))?;
            out.write(self.layout.report_text(), bundle.to_text().as_bytes())?;
            Ok(bundle)
        })
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<ReportBundle> {
        self.augment()?;
        self.extract()?;
        self.filter()?;
        self.train()?;
        self.score()?;
        self.evaluate()?;
        self.report()
    }
}

fn head_params(store: &EmbeddingStore) -> HeadParams {
    HeadParams {
        num_classes: store.len(),
        dim: store.dim,
        weights: store
            .records
            .iter()
            .flat_map(|(_, v)| v.iter().map(|&x| x as f64))
            .collect(),
    }
}

fn write_wav_atomic(wave: &audio::Waveform, dest: &Path) -> Result<()> {
    if let Some(dir) = dest.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = dest.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    audio::write_wav(wave, &tmp)?;
    std::fs::rename(&tmp, dest).map_err(|e| Error::io(dest, e))
}

fn jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).expect("serializable row");
        buf.push(b'\n');
    }
    buf
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}
