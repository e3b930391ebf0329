use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The target-cosine derivative evaluates `1 / sin(theta)` with the cosine
/// clamped to `[-1 + COS_CLAMP, 1 - COS_CLAMP]`.
pub const COS_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcFaceConfig {
    pub scale: f64,
    /// Additive angular margin in radians.
    pub margin: f64,
    pub num_classes: usize,
    pub embed_dim: usize,
}

impl ArcFaceConfig {
    pub fn new(num_classes: usize, embed_dim: usize) -> Self {
        Self {
            scale: 32.0,
            margin: 0.2,
            num_classes,
            embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale {} must be positive", self.scale)));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return Err(Error::Config(format!("margin {} outside [0, pi/2)", self.margin)));
        }
        if self.num_classes == 0 || self.embed_dim == 0 {
            return Err(Error::Config("empty classifier shape".into()));
        }
        Ok(())
    }
}

/// Class weight matrix, `num_classes x dim`, row-major.
///
/// Rows are normalized inside every forward pass, so the stored scale of a
/// row never affects logits.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub num_classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            num_classes,
            dim,
            weights: vec![0.0; num_classes * dim],
        }
    }

    /// Xavier-uniform rows scaled to unit length.
    pub fn init(seed: u64, num_classes: usize, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = Self::zeros(num_classes, dim);
        head.fill_rows(&mut rng, 0);
        head
    }

    fn fill_rows(&mut self, rng: &mut ChaCha8Rng, from: usize) {
        let bound = (6.0 / (self.num_classes + self.dim) as f64).sqrt();
        for c in from..self.num_classes {
            let row = &mut self.weights[c * self.dim..(c + 1) * self.dim];
            loop {
                row.iter_mut().for_each(|w| *w = rng.random_range(-bound..=bound));
                let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|w| *w /= norm);
                    break;
                }
            }
        }
    }

    /// Appends freshly initialized rows for `extra` new classes.
    pub fn expand(&self, extra: usize, seed: u64) -> Self {
        let mut head = self.clone();
        head.num_classes += extra;
        head.weights.resize(head.num_classes * head.dim, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        head.fill_rows(&mut rng, self.num_classes);
        head
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    /// Cosine of the embedding against every class row.
    pub fn cosines(&self, emb: &[f64]) -> Result<Vec<f64>> {
        let (u, _) = unit(emb, "embedding")?;
        (0..self.num_classes)
            .map(|c| {
                let (v, _) = unit(self.row(c), "class weight row")?;
                Ok(dot(&u, &v))
            })
            .collect()
    }

    /// Most similar class.
    pub fn predict(&self, emb: &[f64]) -> Result<usize> {
        let cos = self.cosines(emb)?;
        Ok((0..cos.len())
            .max_by(|&a, &b| cos[a].total_cmp(&cos[b]).then(b.cmp(&a)))
            .unwrap_or(0))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcFaceOutput {
    pub logits: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcFaceGrad {
    pub loss: f64,
    pub d_emb: Vec<f64>,
    /// Same layout as [`HeadParams::weights`].
    pub d_weights: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &[f64], what: &str) -> Result<(Vec<f64>, f64)> {
    let norm = dot(v, v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Domain(format!("{what} has zero or non-finite norm")));
    }
    Ok((v.iter().map(|x| x / norm).collect(), norm))
}

struct Forward {
    u: Vec<f64>,
    emb_norm: f64,
    rows: Vec<(Vec<f64>, f64)>,
    cos: Vec<f64>,
    target_cos: f64,
    logits: Vec<f64>,
    probs: Vec<f64>,
    loss: f64,
}

fn check(emb: &[f64], label: usize, head: &HeadParams, cfg: &ArcFaceConfig) -> Result<()> {
    cfg.validate()?;
    if head.num_classes != cfg.num_classes || head.dim != cfg.embed_dim {
        return Err(Error::Domain(format!(
            "head is {}x{}, config expects {}x{}",
            head.num_classes, head.dim, cfg.num_classes, cfg.embed_dim
        )));
    }
    if emb.len() != head.dim {
        return Err(Error::Domain(format!(
            "embedding dimension {} does not match head dimension {}",
            emb.len(),
            head.dim
        )));
    }
    if label >= head.num_classes {
        return Err(Error::Domain(format!(
            "label {label} out of range for {} classes",
            head.num_classes
        )));
    }
    Ok(())
}

fn forward(emb: &[f64], label: usize, head: &HeadParams, cfg: &ArcFaceConfig) -> Result<Forward> {
    check(emb, label, head, cfg)?;
    let (u, emb_norm) = unit(emb, "embedding")?;
    let rows = (0..head.num_classes)
        .map(|c| unit(head.row(c), "class weight row"))
        .collect::<Result<Vec<_>>>()?;
    let cos: Vec<f64> = rows.iter().map(|(v, _)| dot(&u, v)).collect();

    let target_cos = cos[label].clamp(-1.0, 1.0);
    let sin = (1.0 - target_cos * target_cos).max(0.0).sqrt();
    let (sin_m, cos_m) = cfg.margin.sin_cos();

    let logits: Vec<f64> = cos
        .iter()
        .enumerate()
        .map(|(c, &x)| {
            if c == label {
                cfg.scale * (target_cos * cos_m - sin * sin_m)
            } else {
                cfg.scale * x
            }
        })
        .collect();

    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    let loss = max + sum.ln() - logits[label];

    Ok(Forward {
        u,
        emb_norm,
        rows,
        cos,
        target_cos,
        logits,
        probs,
        loss,
    })
}

/// Margin-penalized logits and the cross-entropy at `label`.
pub fn arcface_forward(
    emb: &[f64],
    label: usize,
    head: &HeadParams,
    cfg: &ArcFaceConfig,
) -> Result<ArcFaceOutput> {
    let f = forward(emb, label, head, cfg)?;
    Ok(ArcFaceOutput {
        logits: f.logits,
        loss: f.loss,
    })
}

/// Analytic gradient of [`arcface_forward`]'s loss with respect to the raw
/// embedding and the raw (unnormalized) class weights.
pub fn arcface_grad(
    emb: &[f64],
    label: usize,
    head: &HeadParams,
    cfg: &ArcFaceConfig,
) -> Result<ArcFaceGrad> {
    let f = forward(emb, label, head, cfg)?;
    let (sin_m, cos_m) = cfg.margin.sin_cos();
    let dim = head.dim;

    // dL/dcos_j
    let g_cos: Vec<f64> = (0..head.num_classes)
        .map(|c| {
            let dz = f.probs[c] - if c == label { 1.0 } else { 0.0 };
            if c == label {
                let c = f.target_cos.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP);
                let sin = (1.0 - c * c).sqrt();
                dz * cfg.scale * (cos_m + c * sin_m / sin)
            } else {
                dz * cfg.scale
            }
        })
        .collect();

    let mut d_emb = vec![0.0; dim];
    let mut d_weights = vec![0.0; head.num_classes * dim];
    for (c, ((v, w_norm), &g)) in f.rows.iter().zip(&g_cos).enumerate() {
        if g == 0.0 {
            continue;
        }
        let cos = f.cos[c];
        let dw = &mut d_weights[c * dim..(c + 1) * dim];
        for k in 0..dim {
            d_emb[k] += g * (v[k] - cos * f.u[k]) / f.emb_norm;
            dw[k] = g * (f.u[k] - cos * v[k]) / w_norm;
        }
    }

    Ok(ArcFaceGrad {
        loss: f.loss,
        d_emb,
        d_weights,
    })
}
