//! Per-frame keyframe weights.
//!
//! Geometric weights mix how many vertices touch the animation's dominant
//! semantic class with how far the pelvis moves. Active weights mix a learned
//! prediction of the geometric weights with a diversity rank over the
//! regressor's frame embeddings.

mod diversity;
mod geometric;
mod model;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::animation::{synth_clip, Animation, ClipKind, ClipParams, FeatureMap};
use crate::scene::SemanticVocabulary;

pub use diversity::{diversity_from_embeddings, farthest_point_order, rank_weights};
pub use geometric::{dominant_semantic_class, geometric_keyframes, motion_weights, pelvis_motion, semantic_weights};
pub use model::{build_input, resample, KeyframeModel, ModelDims, ModelInput, ModelOutput, TrainConfig, MODEL_MAGIC};

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("no non-floor semantic labels")]
    NoDominantClass,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid weighting config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightingConfig {
    pub lambda_s: f64,
    pub lambda_m: f64,
    pub lambda_g: f64,
    pub lambda_b: f64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig { lambda_s: 0.7, lambda_m: 0.3, lambda_g: 0.7, lambda_b: 0.3 }
    }
}

impl WeightingConfig {
    pub fn validate(&self) -> Result<(), KeyframeError> {
        let all = [self.lambda_s, self.lambda_m, self.lambda_g, self.lambda_b];
        if all.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(KeyframeError::InvalidConfig(format!("weights must be finite and non-negative: {all:?}")));
        }
        if self.lambda_s + self.lambda_m <= 0.0 || self.lambda_g + self.lambda_b <= 0.0 {
            return Err(KeyframeError::InvalidConfig("each weight pair needs a positive sum".into()));
        }
        Ok(())
    }
}

/// How frames are weighted in the placement objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Every frame counts equally (the unweighted temporal baseline).
    Uniform,
    Geometric,
    Active,
}

impl WeightMode {
    pub fn name(&self) -> &'static str {
        match self {
            WeightMode::Uniform => "uniform",
            WeightMode::Geometric => "geometric",
            WeightMode::Active => "active",
        }
    }
}

impl std::str::FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(WeightMode::Uniform),
            "geometric" => Ok(WeightMode::Geometric),
            "active" => Ok(WeightMode::Active),
            _ => Err(format!("unknown weight mode {s:?} (uniform, geometric, active)")),
        }
    }
}

/// `active_keyframes`: `λ_g·k̂_g + λ_b·w_d`.
pub fn active_keyframes(k_hat_g: &[f64], w_d: &[f64], config: &WeightingConfig) -> Vec<f64> {
    assert_eq!(k_hat_g.len(), w_d.len(), "predicted and diversity weights differ in length");
    k_hat_g.iter().zip(w_d).map(|(k, d)| config.lambda_g * k + config.lambda_b * d).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveWeights {
    pub k_hat_g: Vec<f64>,
    pub w_d: Vec<f64>,
    pub k_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeWeights {
    /// Dominant semantic class; `None` when every label is floor.
    pub dominant: Option<u16>,
    pub w_s: Vec<f64>,
    pub w_m: Vec<f64>,
    pub k_g: Vec<f64>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub active: Option<ActiveWeights>,
}

impl KeyframeWeights {
    pub fn frame_count(&self) -> usize {
        self.k_g.len()
    }

    /// The per-frame `k_i` for the placement objective.
    pub fn for_mode(&self, mode: WeightMode) -> Vec<f64> {
        match mode {
            WeightMode::Uniform => vec![1.0; self.k_g.len()],
            WeightMode::Geometric => self.k_g.clone(),
            WeightMode::Active => self.active.as_ref().expect("active weights were not computed").k_a.clone(),
        }
    }

    /// k_g divided by its maximum (all zeros stay zero): the regression target.
    pub fn normalized_k_g(&self) -> Vec<f64> {
        normalize(&self.k_g)
    }
}

fn normalize(w: &[f64]) -> Vec<f64> {
    let max = w.iter().copied().fold(0.0, f64::max);
    w.iter().map(|&x| if max > 0.0 { x / max } else { 0.0 }).collect()
}

/// Semantic, motion and geometric weights. All-floor animations fall back to
/// the floor class as dominant, which the semantic term then ignores.
pub fn compute_geometric(
    anim: &Animation,
    features: &FeatureMap,
    vocab: &SemanticVocabulary,
    config: &WeightingConfig,
) -> Result<KeyframeWeights, KeyframeError> {
    config.validate()?;
    features.check_shape(anim).map_err(|e| KeyframeError::Shape(e.to_string()))?;
    let dominant = match dominant_semantic_class(features, vocab) {
        Ok(id) => Some(id),
        Err(KeyframeError::NoDominantClass) => None,
        Err(e) => return Err(e),
    };
    let w_s = match dominant {
        Some(id) => semantic_weights(features, id),
        None => vec![0.0; anim.frame_count()],
    };
    let w_m = motion_weights(anim);
    let k_g = geometric_keyframes(&w_s, &w_m, config);
    Ok(KeyframeWeights { dominant, w_s, w_m, k_g, active: None })
}

/// Model prediction and frame-level hidden vectors, resampled from the model
/// window back to the animation's frames.
pub fn predict_frames(
    model: &KeyframeModel,
    anim: &Animation,
    features: &FeatureMap,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), KeyframeError> {
    let dims = model.dims();
    let out = model.forward(&build_input(anim, features, &dims)?)?;
    let n = anim.frame_count();
    let k_hat = resample(&out.k_hat, n);
    let hidden = model::resample_with(out.hidden.len(), n, |i, j, u| {
        out.hidden[i].iter().zip(&out.hidden[j]).map(|(a, b)| a * (1.0 - u) + b * u).collect()
    });
    Ok((k_hat, hidden))
}

/// Per-frame diversity weights from the model's frame embeddings.
pub fn diversity_scores(model: &KeyframeModel, anim: &Animation, features: &FeatureMap) -> Result<Vec<f64>, KeyframeError> {
    let (k_hat, hidden) = predict_frames(model, anim, features)?;
    Ok(diversity_from_embeddings(&k_hat, &hidden))
}

/// Geometric weights plus, when a model is given, the active weights.
pub fn compute_keyframes(
    anim: &Animation,
    features: &FeatureMap,
    vocab: &SemanticVocabulary,
    config: &WeightingConfig,
    model: Option<&KeyframeModel>,
) -> Result<KeyframeWeights, KeyframeError> {
    let mut weights = compute_geometric(anim, features, vocab, config)?;
    if let Some(model) = model {
        if model.dims().classes() != vocab.len() {
            return Err(KeyframeError::Shape(format!(
                "model was trained for {} classes, vocabulary has {}",
                model.dims().classes(),
                vocab.len()
            )));
        }
        let (k_hat_g, hidden) = predict_frames(model, anim, features)?;
        let w_d = diversity_from_embeddings(&k_hat_g, &hidden);
        let k_a = active_keyframes(&k_hat_g, &w_d, config);
        weights.active = Some(ActiveWeights { k_hat_g, w_d, k_a });
    }
    Ok(weights)
}

/// One training pair: model input and the normalized geometric weights resampled to the window.
pub fn training_sample(
    anim: &Animation,
    features: &FeatureMap,
    vocab: &SemanticVocabulary,
    config: &WeightingConfig,
    dims: &ModelDims,
) -> Result<(ModelInput, Vec<f64>), KeyframeError> {
    let weights = compute_geometric(anim, features, vocab, config)?;
    Ok((build_input(anim, features, dims)?, resample(&weights.normalized_k_g(), dims.window)))
}

/// A mixed corpus of synthetic clips (walk, sit, walk-then-sit, jump) drawn from `seed`.
pub fn synthetic_corpus(count: usize, seed: u64, vocab: &SemanticVocabulary) -> Vec<(Animation, FeatureMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = vocab.floor_id();
    let seats: Vec<u16> = ["chair", "sofa", "bed"].iter().filter_map(|n| vocab.id(n)).collect();
    (0..count)
        .map(|i| {
            let kind = [ClipKind::WalkThenSit, ClipKind::Sit, ClipKind::Walk, ClipKind::Jump][i % 4];
            let params = ClipParams {
                kind,
                duration: rng.gen_range(3.0..5.0),
                fps: 15.0,
                speed: rng.gen_range(0.7..1.3),
                seat_height: rng.gen_range(0.4..0.5),
                jump_height: rng.gen_range(0.2..0.4),
                idle: if rng.gen_bool(0.5) { rng.gen_range(0.0..1.5) } else { 0.0 },
                heading_deg: rng.gen_range(0.0..360.0),
                seed: rng.gen(),
            };
            let seat = if seats.is_empty() { floor } else { seats[rng.gen_range(0..seats.len())] };
            let clip = synth_clip(&params, floor, seat).expect("synthetic parameters are valid");
            (clip.animation, clip.features)
        })
        .collect()
}

/// Trains a model on a synthetic corpus. Everything derives from `seed`.
pub fn train_on_corpus(
    corpus: &[(Animation, FeatureMap)],
    vocab: &SemanticVocabulary,
    config: &WeightingConfig,
    dims: ModelDims,
    train: &TrainConfig,
) -> Result<(KeyframeModel, Vec<f64>), KeyframeError> {
    let data = corpus
        .iter()
        .map(|(a, f)| training_sample(a, f, vocab, config, &dims))
        .collect::<Result<Vec<_>, _>>()?;
    let mut model = KeyframeModel::init(dims, train.seed);
    let trace = model.train(&data, train)?;
    Ok((model, trace))
}
