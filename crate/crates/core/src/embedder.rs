//! Frame encoder with global statistics pooling.
//!
//! Two strided 1-D convolutions over time feed a mean/standard-deviation
//! pooling layer and a linear projection, turning a variable-length
//! feature matrix into a fixed-length speaker embedding. The encoder is
//! frozen: parameters come from a seeded initialization and never train.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Grid};

pub const CONV_CHANNELS: usize = 128;
pub const KERNEL: usize = 5;
pub const STRIDE: usize = 2;
/// Shortest input (in frames) that survives both convolutions.
pub const MIN_FRAMES: usize = KERNEL + STRIDE * (KERNEL - 1);
pub const DEFAULT_EMBED_DIM: usize = 128;
/// Variances below this pool to a zero standard deviation.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Output length of one valid strided convolution.
fn conv_len(t: usize) -> usize {
    if t < KERNEL {
        0
    } else {
        (t - KERNEL) / STRIDE + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Conv1d {
    in_ch: usize,
    out_ch: usize,
    /// `[out][k][in]`
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv1d {
    fn init(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize) -> (Self, f64) {
        let bound = (6.0 / ((in_ch + out_ch) * KERNEL) as f64).sqrt();
        let weight = (0..out_ch * KERNEL * in_ch)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let conv = Self {
            in_ch,
            out_ch,
            weight,
            bias: vec![0.0; out_ch],
        };
        (conv, bound)
    }

    /// Valid convolution with stride followed by ReLU.
    fn forward(&self, x: &Grid) -> Grid {
        debug_assert_eq!(x.cols, self.in_ch);
        let t_out = conv_len(x.rows);
        let mut y = Grid::zeros(t_out, self.out_ch);
        for t in 0..t_out {
            let out_row = y.row_mut(t);
            for (o, out) in out_row.iter_mut().enumerate() {
                let mut acc = self.bias[o];
                for k in 0..KERNEL {
                    let w = &self.weight[(o * KERNEL + k) * self.in_ch..][..self.in_ch];
                    let xs = x.row(t * STRIDE + k);
                    acc += w.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                }
                *out = acc.max(0.0);
            }
        }
        y
    }
}

/// Frozen encoder parameters, fully determined by `(seed, input_dim, embed_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub seed: u64,
    pub input_dim: usize,
    pub embed_dim: usize,
    conv1: Conv1d,
    conv2: Conv1d,
    /// `[embed_dim][2 * CONV_CHANNELS]`
    proj: Vec<f64>,
    proj_bias: Vec<f64>,
    bounds: [f64; 3],
}

impl EncoderParams {
    /// Xavier-uniform bounds of the three weight layers.
    pub fn init_bounds(&self) -> [f64; 3] {
        self.bounds
    }

    /// Weights of the three layers, in order.
    pub fn layer_weights(&self) -> [&[f64]; 3] {
        [&self.conv1.weight, &self.conv2.weight, &self.proj]
    }

    pub fn is_finite(&self) -> bool {
        self.layer_weights()
            .iter()
            .all(|w| w.iter().all(|x| x.is_finite()))
    }
}

pub fn init_encoder(seed: u64, input_dim: usize, embed_dim: usize) -> Result<EncoderParams> {
    if embed_dim < 8 {
        return Err(Error::Config(format!(
            "embedding dimension must be at least 8, got {embed_dim}"
        )));
    }
    if input_dim == 0 {
        return Err(Error::Config("input dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (conv1, b1) = Conv1d::init(&mut rng, input_dim, CONV_CHANNELS);
    let (conv2, b2) = Conv1d::init(&mut rng, CONV_CHANNELS, CONV_CHANNELS);
    let pooled = 2 * CONV_CHANNELS;
    let b3 = (6.0 / (pooled + embed_dim) as f64).sqrt();
    let proj = (0..embed_dim * pooled)
        .map(|_| rng.random_range(-b3..=b3))
        .collect();
    Ok(EncoderParams {
        seed,
        input_dim,
        embed_dim,
        conv1,
        conv2,
        proj,
        proj_bias: vec![0.0; embed_dim],
        bounds: [b1, b2, b3],
    })
}

/// Concatenated per-channel mean and population standard deviation over time.
pub fn gsp_pool(features: &Grid) -> Result<Vec<f64>> {
    if features.rows == 0 {
        return Err(Error::Domain("cannot pool zero frames".into()));
    }
    let c = features.cols;
    // Welford running moments
    let mut mean = vec![0.0; c];
    let mut m2 = vec![0.0; c];
    for t in 0..features.rows {
        let n = (t + 1) as f64;
        for ((mu, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(features.row(t)) {
            let delta = x - *mu;
            *mu += delta / n;
            *s += delta * (x - *mu);
        }
    }
    let t = features.rows as f64;
    let std = m2.iter().map(|s| {
        let var = s / t;
        if var < VARIANCE_FLOOR {
            0.0
        } else {
            var.sqrt()
        }
    });
    Ok(mean.iter().copied().chain(std).collect())
}

/// Runs the encoder and returns the unnormalized embedding.
pub fn embed(features: &FeatureMatrix, params: &EncoderParams) -> Result<Vec<f32>> {
    embed_grid(&features.frames, params)
}

pub fn embed_grid(frames: &Grid, params: &EncoderParams) -> Result<Vec<f32>> {
    if frames.cols != params.input_dim {
        return Err(Error::Domain(format!(
            "feature dimension {} does not match encoder input {}",
            frames.cols, params.input_dim
        )));
    }
    if frames.rows < MIN_FRAMES {
        return Err(Error::TooShort {
            needed: MIN_FRAMES,
            got: frames.rows,
            unit: "frames",
        });
    }
    let h1 = params.conv1.forward(frames);
    let h2 = params.conv2.forward(&h1);
    let pooled = gsp_pool(&h2)?;
    let out = params
        .proj
        .chunks(pooled.len())
        .zip(&params.proj_bias)
        .map(|(w, b)| (b + w.iter().zip(&pooled).map(|(a, x)| a * x).sum::<f64>()) as f32)
        .collect();
    Ok(out)
}

/// An utterance-level speaker embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub utt_id: String,
    pub speaker_label: Option<String>,
    pub vector: Vec<f32>,
}

impl SpeakerEmbedding {
    pub fn new(utt_id: impl Into<String>, speaker_label: Option<String>, vector: Vec<f32>) -> Self {
        Self {
            utt_id: utt_id.into(),
            speaker_label,
            vector,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Finite entries and a nonzero norm.
    pub fn validate(&self) -> Result<()> {
        if self.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("embedding {} has non-finite entries", self.utt_id)));
        }
        if self.vector.iter().all(|&x| x == 0.0) {
            return Err(Error::Domain(format!("embedding {} is the zero vector", self.utt_id)));
        }
        Ok(())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&x| x as f64).collect()
    }
}

/// Reads an embedding store; speaker labels are not part of the container.
pub fn load_embeddings(path: impl AsRef<std::path::Path>) -> Result<Vec<SpeakerEmbedding>> {
    let store = crate::store::EmbeddingStore::read(path)?;
    Ok(store
        .records
        .into_iter()
        .map(|(id, v)| SpeakerEmbedding::new(id, None, v))
        .collect())
}
