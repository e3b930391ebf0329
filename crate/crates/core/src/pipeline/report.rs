use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Condition, ConditionMetrics};
use crate::augmentation::{AugmentationRecord, ManifestEntry, Origin};

/// Six decimals, so the JSON and text renderings carry identical numbers.
fn round6(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: Condition,
    /// Training-set size; absent when no manifest was available.
    pub speakers: Option<usize>,
    pub utterances: Option<usize>,
    pub eer_percent: f64,
    pub min_dcf: f64,
    pub eer_threshold: Option<f64>,
    pub min_dcf_threshold: Option<f64>,
    pub targets: usize,
    pub nontargets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub speakers: usize,
    pub utterances: usize,
    pub utterances_by_origin: BTreeMap<Origin, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub pitch_shift_generated: usize,
    pub vc_candidates: usize,
    pub vc_retained: usize,
    pub vc_mean_similarity: Option<f64>,
    pub vc_mean_retained_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub conditions: Vec<ConditionRow>,
    pub dataset: Option<DatasetStats>,
    pub augmentation: RetentionStats,
    /// DET point files, relative to the work directory.
    pub det_curves: BTreeMap<Condition, String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| round6(sum / n as f64))
}

impl ReportBundle {
    pub fn assemble(
        metrics: &[ConditionMetrics],
        manifest: Option<&[ManifestEntry]>,
        records: &[AugmentationRecord],
        det_curves: BTreeMap<Condition, String>,
    ) -> Self {
        let counts = |c: Condition| {
            manifest.map(|m| {
                let subset = c.select(m);
                let speakers: BTreeSet<&str> =
                    subset.iter().map(|e| e.speaker_label.as_str()).collect();
                (speakers.len(), subset.len())
            })
        };
        let conditions = metrics
            .iter()
            .map(|m| {
                let n = counts(m.condition);
                ConditionRow {
                    condition: m.condition,
                    speakers: n.map(|n| n.0),
                    utterances: n.map(|n| n.1),
                    eer_percent: round6(100.0 * m.eer),
                    min_dcf: round6(m.min_dcf),
                    eer_threshold: m.eer_threshold.map(round6),
                    min_dcf_threshold: m.min_dcf_threshold.map(round6),
                    targets: m.targets,
                    nontargets: m.nontargets,
                }
            })
            .collect();
        let dataset = manifest.map(|m| {
            let speakers: BTreeSet<&str> = m.iter().map(|e| e.speaker_label.as_str()).collect();
            let mut utterances_by_origin = BTreeMap::new();
            for e in m {
                *utterances_by_origin.entry(e.origin).or_insert(0) += 1;
            }
            DatasetStats {
                speakers: speakers.len(),
                utterances: m.len(),
                utterances_by_origin,
            }
        });
        let vc: Vec<&AugmentationRecord> = records.iter().filter(|r| r.method.is_vc()).collect();
        let augmentation = RetentionStats {
            pitch_shift_generated: records.iter().filter(|r| r.method == Origin::PitchShift).count(),
            vc_candidates: vc.len(),
            vc_retained: vc.iter().filter(|r| r.retained).count(),
            vc_mean_similarity: mean(vc.iter().filter_map(|r| r.similarity)),
            vc_mean_retained_similarity: mean(
                vc.iter().filter(|r| r.retained).filter_map(|r| r.similarity),
            ),
        };
        Self {
            conditions,
            dataset,
            augmentation,
            det_curves,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>11} {:>11} {:>10}",
            "condition", "speakers", "utterances", "EER[%]", "minDCF"
        );
        let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        for row in &self.conditions {
            let _ = writeln!(
                out,
                "{:<12} {:>9} {:>11} {:>11.6} {:>10.6}",
                row.condition.name(),
                opt(row.speakers),
                opt(row.utterances),
                row.eer_percent,
                row.min_dcf
            );
        }
        let a = &self.augmentation;
        let _ = writeln!(out);
        let _ = writeln!(out, "speed-perturbed utterances: {}", a.pitch_shift_generated);
        let _ = write!(out, "converted utterances retained: {} / {}", a.vc_retained, a.vc_candidates);
        if let Some(m) = a.vc_mean_similarity {
            let _ = write!(out, " (mean similarity {m:.6})");
        }
        let _ = writeln!(out);
        out
    }
}
