use nalgebra::Point3;

use crate::animation::{Animation, FeatureMap};
use crate::scene::SemanticVocabulary;

use super::{KeyframeError, WeightingConfig};

/// Most frequent non-floor semantic id over all frames and vertices; ties go to the smaller id.
pub fn dominant_semantic_class(features: &FeatureMap, vocab: &SemanticVocabulary) -> Result<u16, KeyframeError> {
    let floor = vocab.floor_id();
    let mut counts = vec![0usize; vocab.len().max(1)];
    for &s in features.semantic() {
        if s != floor {
            if s as usize >= counts.len() {
                counts.resize(s as usize + 1, 0);
            }
            counts[s as usize] += 1;
        }
    }
    // max_by_key keeps the last maximum, so scan ids in reverse.
    counts
        .iter()
        .enumerate()
        .rev()
        .filter(|&(_, &c)| c > 0)
        .max_by_key(|&(_, &c)| c)
        .map(|(id, _)| id as u16)
        .ok_or(KeyframeError::NoDominantClass)
}

/// Per-frame count of vertices labeled `dominant`.
pub fn semantic_weights(features: &FeatureMap, dominant: u16) -> Vec<f64> {
    (0..features.frame_count())
        .map(|i| features.semantic_row(i).iter().filter(|&&s| s == dominant).count() as f64)
        .collect()
}

/// Pelvis displacement to the next frame; the last frame repeats its predecessor.
pub fn motion_weights(anim: &Animation) -> Vec<f64> {
    let pelvis: Vec<Point3<f64>> = anim.frames().iter().map(|f| f.pelvis).collect();
    pelvis_motion(&pelvis)
}

/// [`motion_weights`] on a bare pelvis track of at least two points.
pub fn pelvis_motion(pelvis: &[Point3<f64>]) -> Vec<f64> {
    let mut w: Vec<f64> = pelvis.windows(2).map(|p| (p[1] - p[0]).norm()).collect();
    w.push(*w.last().expect("at least two pelvis positions"));
    w
}

fn max_normalized(w: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = w.iter().copied().fold(0.0, f64::max);
    w.iter().map(move |&x| if max > 0.0 { x / max } else { 0.0 })
}

/// `λ_s·w_s/max(w_s) + λ_m·w_m/max(w_m)`, where a term with a zero maximum contributes nothing.
pub fn geometric_keyframes(w_s: &[f64], w_m: &[f64], config: &WeightingConfig) -> Vec<f64> {
    assert_eq!(w_s.len(), w_m.len(), "semantic and motion weights differ in length");
    max_normalized(w_s)
        .zip(max_normalized(w_m))
        .map(|(s, m)| config.lambda_s * s + config.lambda_m * m)
        .collect()
}
