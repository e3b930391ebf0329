//! Cosine back-end, trial files, and the EER / minDCF detection metrics.
//!
//! A trial is accepted iff `score >= threshold`. With that convention the
//! false-acceptance rate `FAR(t)` is the fraction of non-target scores at or
//! above `t` and the false-rejection rate `FRR(t)` the fraction of target
//! scores below it.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::par_map;

/// `<a, b> / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 || !(aa * bb).is_finite() {
        return Err(Error::Domain("cosine of a zero or non-finite vector".into()));
    }
    Ok((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean of length-normalized vectors.
pub fn normalized_mean<T: Copy + Into<f64>>(vectors: &[&[T]]) -> Result<Vec<f64>> {
    let dim = vectors
        .first()
        .map(|v| v.len())
        .ok_or_else(|| Error::Domain("mean of an empty set".into()))?;
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::Domain("mixed dimensions in mean".into()));
        }
        let norm = v.iter().map(|&x| x.into() * x.into()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Domain("cannot normalize a zero vector".into()));
        }
        for (a, &x) in acc.iter_mut().zip(v.iter()) {
            *a += x.into() / norm;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub is_target: bool,
}

impl Trial {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>, is_target: bool) -> Self {
        Self {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            is_target,
        }
    }
}

/// Parses `<enroll_id> <test_id> <target|nontarget>` lines.
pub fn parse_trials(text: &str) -> Result<Vec<Trial>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [enroll, test, label] = fields[..] else {
                return Err(Error::Format(format!(
                    "trial line {}: expected 3 fields, got {}",
                    i + 1,
                    fields.len()
                )));
            };
            let is_target = match label {
                "target" => true,
                "nontarget" => false,
                other => {
                    return Err(Error::Format(format!(
                        "trial line {}: label `{other}` is neither target nor nontarget",
                        i + 1
                    )))
                }
            };
            Ok(Trial::new(enroll, test, is_target))
        })
        .collect()
}

pub fn format_trials(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        let label = if t.is_target { "target" } else { "nontarget" };
        let _ = writeln!(out, "{} {} {label}", t.enroll_id, t.test_id);
    }
    out
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trials(&text)
}

/// Score file: trial lines with the label replaced by the score (6 decimals).
pub fn format_scores(trials: &[Trial], scores: &[f64]) -> String {
    let mut out = String::new();
    for (t, s) in trials.iter().zip(scores) {
        let _ = writeln!(out, "{} {} {s:.6}", t.enroll_id, t.test_id);
    }
    out
}

/// Parses a score file as `(enroll_id, test_id, score)` triples.
pub fn parse_scores(text: &str) -> Result<Vec<(String, String, f64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [enroll, test, score] = fields[..] else {
                return Err(Error::Format(format!("score line {}: expected 3 fields", i + 1)));
            };
            let score: f64 = score
                .parse()
                .map_err(|_| Error::Format(format!("score line {}: bad number `{score}`", i + 1)))?;
            if !score.is_finite() {
                return Err(Error::Format(format!("score line {}: non-finite score", i + 1)));
            }
            Ok((enroll.to_string(), test.to_string(), score))
        })
        .collect()
}

/// Attaches target labels from `trials` to parsed scores, matching line by line.
pub fn join_scores(trials: &[Trial], scores: &[(String, String, f64)]) -> Result<ScoreSet> {
    if trials.len() != scores.len() {
        return Err(Error::Format(format!(
            "{} trials but {} scores",
            trials.len(),
            scores.len()
        )));
    }
    let mut set = ScoreSet::default();
    for (i, (t, (e, s, v))) in trials.iter().zip(scores).enumerate() {
        if &t.enroll_id != e || &t.test_id != s {
            return Err(Error::Format(format!(
                "score line {} ({e} {s}) does not match trial ({} {})",
                i + 1,
                t.enroll_id,
                t.test_id
            )));
        }
        set.push(*v, t.is_target);
    }
    Ok(set)
}

/// Scores every trial by cosine similarity, preserving trial order.
///
/// An enroll id listed in `enrollments` is modelled by the mean of its
/// utterances' length-normalized embeddings; any other id is looked up
/// directly in `embeddings`.
pub fn score_trials<V: AsRef<[f32]> + Sync>(
    trials: &[Trial],
    embeddings: &HashMap<String, V>,
    enrollments: &BTreeMap<String, Vec<String>>,
    jobs: usize,
) -> Result<Vec<f64>> {
    let lookup = |id: &str| {
        embeddings
            .get(id)
            .map(|v| v.as_ref())
            .ok_or_else(|| Error::Lookup(id.to_string()))
    };
    par_map(trials, jobs, |t| {
        let test = lookup(&t.test_id)?;
        match enrollments.get(&t.enroll_id) {
            Some(utts) => {
                let vs = utts
                    .iter()
                    .map(|u| lookup(u))
                    .collect::<Result<Vec<_>>>()?;
                let model = normalized_mean(&vs)?;
                let test: Vec<f64> = test.iter().map(|&x| x as f64).collect();
                cosine(&model, &test)
            }
            None => cosine(lookup(&t.enroll_id)?, test),
        }
    })
    .into_iter()
    .collect()
}

/// Parses `<enroll_id> <utt_id> [<utt_id> ...]` lines.
pub fn parse_enrollments(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let utts: Vec<String> = fields.map(str::to_string).collect();
        if utts.is_empty() {
            return Err(Error::Format(format!("enrollment line {}: no utterances", i + 1)));
        }
        if out.insert(id.to_string(), utts).is_some() {
            return Err(Error::Format(format!("enrollment line {}: duplicate id {id}", i + 1)));
        }
    }
    Ok(out)
}

/// Scores with their target / non-target labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub is_target: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, is_target: Vec<bool>) -> Result<Self> {
        if scores.len() != is_target.len() {
            return Err(Error::Domain("scores and labels differ in length".into()));
        }
        Ok(Self { scores, is_target })
    }

    pub fn from_trials(trials: &[Trial], scores: Vec<f64>) -> Result<Self> {
        Self::new(scores, trials.iter().map(|t| t.is_target).collect())
    }

    pub fn push(&mut self, score: f64, is_target: bool) {
        self.scores.push(score);
        self.is_target.push(is_target);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn num_targets(&self) -> usize {
        self.is_target.iter().filter(|&&t| t).count()
    }

    pub fn num_nontargets(&self) -> usize {
        self.len() - self.num_targets()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcfConfig {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfConfig {
    fn default() -> Self {
        Self {
            p_target: 0.1,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::Config(format!("p_target {} outside (0, 1)", self.p_target)));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::Config("detection costs must be positive".into()));
        }
        Ok(())
    }

    /// Cost of the better of the two trivial systems (accept all, reject all).
    pub fn default_cost(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }

    /// Normalized detection cost at the given error rates.
    pub fn normalized(&self, far: f64, frr: f64) -> f64 {
        (self.c_miss * frr * self.p_target + self.c_fa * far * (1.0 - self.p_target))
            / self.default_cost()
    }
}

/// Error rates at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Error rates at every distinct score, ascending, followed by `+inf`.
pub fn det_points(scores: &ScoreSet) -> Result<Vec<DetPoint>> {
    let n_tar = scores.num_targets();
    let n_non = scores.num_nontargets();
    if n_tar == 0 || n_non == 0 {
        return Err(Error::MetricUndefined(format!(
            "need targets and non-targets, got {n_tar} and {n_non}"
        )));
    }
    if let Some(bad) = scores.scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::MetricUndefined(format!("non-finite score {bad}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores.scores[a].total_cmp(&scores.scores[b]));

    let rates = |tar_below: usize, non_below: usize| {
        (
            (n_non - non_below) as f64 / n_non as f64,
            tar_below as f64 / n_tar as f64,
        )
    };
    let mut points = Vec::new();
    let (mut tar_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let value = scores.scores[order[i]];
        let (far, frr) = rates(tar_below, non_below);
        points.push(DetPoint { threshold: value, far, frr });
        while i < order.len() && scores.scores[order[i]] == value {
            if scores.is_target[order[i]] {
                tar_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate by linear interpolation at the FAR/FRR crossing.
pub fn compute_eer(scores: &ScoreSet) -> Result<Eer> {
    let points = det_points(scores)?;
    let diff = |p: &DetPoint| p.far - p.frr;
    // FAR - FRR is non-increasing and ends at -1, so a crossing exists.
    let i = points
        .iter()
        .position(|p| diff(p) <= 0.0)
        .expect("sweep ends at FAR=0, FRR=1");
    let hi = points[i];
    if diff(&hi) == 0.0 || i == 0 {
        return Ok(Eer {
            eer: hi.far,
            threshold: hi.threshold,
        });
    }
    let lo = points[i - 1];
    let alpha = diff(&lo) / (diff(&lo) - diff(&hi));
    let eer = lo.far + alpha * (hi.far - lo.far);
    let threshold = if hi.threshold.is_finite() {
        lo.threshold + alpha * (hi.threshold - lo.threshold)
    } else {
        lo.threshold
    };
    Ok(Eer { eer, threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinDcf {
    /// Normalized minimum detection cost.
    pub min_dcf: f64,
    pub threshold: f64,
}

/// Minimum normalized DCF over `-inf`, every distinct score, and `+inf`;
/// ties resolve to the smallest threshold.
pub fn compute_min_dcf(scores: &ScoreSet, cfg: &DcfConfig) -> Result<MinDcf> {
    cfg.validate()?;
    let points = det_points(scores)?;
    // -inf accepts everything, exactly like the lowest score
    let mut best = MinDcf {
        min_dcf: cfg.normalized(1.0, 0.0),
        threshold: f64::NEG_INFINITY,
    };
    for p in &points {
        let cost = cfg.normalized(p.far, p.frr);
        if cost < best.min_dcf {
            best = MinDcf {
                min_dcf: cost,
                threshold: p.threshold,
            };
        }
    }
    Ok(best)
}

/// Normalized DCF at a single threshold.
pub fn dcf_at(scores: &ScoreSet, threshold: f64, cfg: &DcfConfig) -> Result<f64> {
    let n_tar = scores.num_targets();
    let n_non = scores.num_nontargets();
    if n_tar == 0 || n_non == 0 {
        return Err(Error::MetricUndefined("need targets and non-targets".into()));
    }
    let mut fa = 0usize;
    let mut miss = 0usize;
    for (&s, &t) in scores.scores.iter().zip(&scores.is_target) {
        match (t, s >= threshold) {
            (true, false) => miss += 1,
            (false, true) => fa += 1,
            _ => {}
        }
    }
    Ok(cfg.normalized(fa as f64 / n_non as f64, miss as f64 / n_tar as f64))
}

/// DET points as `threshold,far,frr` CSV.
pub fn det_csv(points: &[DetPoint]) -> String {
    let mut out = String::from("threshold,far,frr\n");
    for p in points {
        let _ = writeln!(out, "{:.6},{:.6},{:.6}", p.threshold, p.far, p.frr);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(targets: &[f64], nontargets: &[f64]) -> ScoreSet {
        let mut s = ScoreSet::default();
        targets.iter().for_each(|&x| s.push(x, true));
        nontargets.iter().for_each(|&x| s.push(x, false));
        s
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0f32, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0f32, 0.0], &[0.0, 5.0]).unwrap(), 0.0);
        let a = [0.3f64, -1.2, 2.5];
        let b = a.map(|x| 3.0 * x);
        assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0f32, 0.0], &[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(cosine(&[1.0f32], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn perfect_separation() {
        let s = set(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(compute_eer(&s).unwrap().eer, 0.0);
        assert_eq!(compute_min_dcf(&s, &DcfConfig::default()).unwrap().min_dcf, 0.0);
    }

    #[test]
    fn single_shared_value_is_coin_flip() {
        let s = set(&[0.5, 0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(compute_eer(&s).unwrap().eer, 0.5);
        let d = compute_min_dcf(&s, &DcfConfig::default()).unwrap();
        assert_eq!(d.min_dcf, 1.0);
        assert_eq!(d.threshold, f64::INFINITY);
        assert!((dcf_at(&s, f64::NEG_INFINITY, &DcfConfig::default()).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn missing_class_is_undefined() {
        assert!(matches!(compute_eer(&set(&[0.1], &[])), Err(Error::MetricUndefined(_))));
        assert!(matches!(
            compute_min_dcf(&set(&[], &[0.3]), &DcfConfig::default()),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn trial_file_round_trip_and_errors() {
        let text = "spk1_e spk1_t target\nspk1_e spk2_t nontarget\n";
        let trials = parse_trials(text).unwrap();
        assert_eq!(trials.len(), 2);
        assert!(trials[0].is_target && !trials[1].is_target);
        assert_eq!(format_trials(&trials), text);
        assert!(matches!(parse_trials("a b maybe\n"), Err(Error::Format(_))));
        assert!(matches!(parse_trials("a b\n"), Err(Error::Format(_))));
    }

    #[test]
    fn score_file_format() {
        let trials = vec![Trial::new("a", "b", true), Trial::new("a", "c", false)];
        let text = format_scores(&trials, &[0.5, -0.1234567]);
        assert_eq!(text, "a b 0.500000\na c -0.123457\n");
        let parsed = parse_scores(&text).unwrap();
        let joined = join_scores(&trials, &parsed).unwrap();
        assert_eq!(joined.scores, vec![0.5, -0.123457]);
        assert_eq!(joined.is_target, vec![true, false]);
        assert!(join_scores(&trials[..1], &parsed).is_err());
    }

    #[test]
    fn scoring_lookup_and_enrollment() {
        let mut emb: HashMap<String, Vec<f32>> = HashMap::new();
        emb.insert("a".into(), vec![1.0, 0.0, 0.0]);
        emb.insert("b".into(), vec![0.0, 2.0, 0.0]);
        emb.insert("c".into(), vec![1.0, 0.0, 0.0]);
        let trials = vec![
            Trial::new("a", "c", true),
            Trial::new("a", "b", false),
            Trial::new("grp", "c", true),
        ];
        let mut enroll = BTreeMap::new();
        enroll.insert("grp".to_string(), vec!["a".to_string(), "c".to_string(), "a".to_string()]);
        let scores = score_trials(&trials, &emb, &enroll, 1).unwrap();
        assert_eq!(scores, vec![1.0, 0.0, 1.0]);

        let missing = vec![Trial::new("a", "zzz", true)];
        match score_trials(&missing, &emb, &enroll, 1) {
            Err(Error::Lookup(id)) => assert_eq!(id, "zzz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn enrollment_file() {
        let e = parse_enrollments("m1 u1 u2\n\nm2 u3\n").unwrap();
        assert_eq!(e["m1"], vec!["u1", "u2"]);
        assert!(parse_enrollments("m1\n").is_err());
        assert!(parse_enrollments("m1 a\nm1 b\n").is_err());
    }

    #[test]
    fn dcf_config_validation() {
        assert!(DcfConfig { p_target: 0.0, ..DcfConfig::default() }.validate().is_err());
        assert!(DcfConfig { c_fa: 0.0, ..DcfConfig::default() }.validate().is_err());
        assert!((DcfConfig::default().default_cost() - 0.1).abs() < 1e-15);
    }
}
