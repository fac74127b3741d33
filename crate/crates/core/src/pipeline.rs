//! End-to-end runs: features, keyframe weights, placement and plausibility,
//! with JSON artifacts that echo the resolved config and input hashes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::animation::{
    estimate_features, load_animation, transform, Animation, AnimationError, FeatureMap, FeatureSource,
    HeuristicOptions, PlacementPose,
};
use crate::keyframes::{
    compute_keyframes, synthetic_corpus, train_on_corpus, KeyframeError, KeyframeModel, KeyframeWeights, ModelDims,
    TrainConfig, WeightMode, WeightingConfig,
};
use crate::metrics::{evaluate, MetricsConfig, PlausibilityReport};
use crate::placement::{place, FrameLoss, LossConfig, PlacementConfig, PlacementError, PlacementResult};
use crate::scene::{
    default_labels_path, load_scene, synth_scene, SceneError, SceneModel, SceneOptions, SceneRecipe,
    SemanticVocabulary,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scene {path}")]
    Scene { path: PathBuf, source: SceneError },
    #[error("animation {path}")]
    Animation { path: PathBuf, source: AnimationError },
    #[error("features {path}")]
    Features { path: PathBuf, source: AnimationError },
    #[error("keyframes")]
    Keyframes(#[from] KeyframeError),
    #[error("model {path}")]
    Model { path: PathBuf, source: KeyframeError },
    #[error("placement")]
    Placement(#[from] PlacementError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub cell_size: f64,
    pub max_voxels: u64,
    pub margin: f64,
    pub headroom: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let o = SceneOptions::default();
        SceneConfig { cell_size: o.cell_size, max_voxels: o.max_voxels, margin: o.margin, headroom: o.headroom }
    }
}

impl SceneConfig {
    pub fn options(&self, cache_dir: Option<PathBuf>) -> SceneOptions {
        SceneOptions {
            cell_size: self.cell_size,
            max_voxels: self.max_voxels,
            margin: self.margin,
            headroom: self.headroom,
            cache_dir,
        }
    }
}

/// Model shape and training schedule used when active mode has no model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub corpus_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub window: usize,
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let d = ModelDims::new(0, 0);
        TrainingConfig {
            corpus_size: 48,
            epochs: 150,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            window: d.window,
            m1: d.m1,
            m2: d.m2,
            m3: d.m3,
        }
    }
}

impl TrainingConfig {
    pub fn dims(&self, classes: usize, vertices: usize) -> ModelDims {
        ModelDims { window: self.window, m1: self.m1, m2: self.m2, m3: self.m3, ..ModelDims::new(classes, vertices) }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { epochs: self.epochs, learning_rate: self.learning_rate, batch_size: self.batch_size, seed }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Scene OBJ; its labels default to the sibling `.labels.json`.
    pub scene: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Synthetic scene recipe, used when `scene` is unset.
    pub recipe: Option<PathBuf>,
    pub animation: Option<PathBuf>,
    /// Feature file; the built-in heuristic estimator runs when unset.
    pub features: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of all randomness (model initialization, corpus generation, shuffling).
    pub seed: u64,
    pub mode: WeightMode,
    pub paths: PathsConfig,
    pub scene: SceneConfig,
    pub heuristic: HeuristicOptions,
    pub weighting: WeightingConfig,
    pub training: TrainingConfig,
    pub loss: LossConfig,
    pub placement: PlacementConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            mode: WeightMode::Active,
            paths: PathsConfig::default(),
            scene: SceneConfig::default(),
            heuristic: HeuristicOptions::default(),
            weighting: WeightingConfig::default(),
            training: TrainingConfig::default(),
            loss: LossConfig::default(),
            placement: PlacementConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        Self::from_toml(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn scene_options(&self) -> SceneOptions {
        self.scene.options(self.paths.cache_dir.clone())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, PipelineError> {
    Ok(hash_bytes(&fs::read(path).map_err(io_at(path))?))
}

/// sha256 of every input that shaped a result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InputHashes {
    pub scene: Option<String>,
    pub labels: Option<String>,
    pub animation: String,
    pub features: Option<String>,
    pub model: Option<String>,
}

/// A loaded scene together with the hashes of the files it came from.
pub struct SceneInput {
    pub scene: SceneModel,
    pub hash: String,
    pub labels_hash: Option<String>,
}

pub fn resolve_scene(config: &PipelineConfig) -> Result<SceneInput, PipelineError> {
    let options = config.scene_options();
    if let Some(mesh) = &config.paths.scene {
        let labels = config.paths.labels.clone().unwrap_or_else(|| default_labels_path(mesh));
        let scene = load_scene(mesh, &labels, &options).map_err(|source| PipelineError::Scene { path: mesh.clone(), source })?;
        return Ok(SceneInput { scene, hash: hash_file(mesh)?, labels_hash: Some(hash_file(&labels)?) });
    }
    let Some(path) = &config.paths.recipe else {
        return Err(PipelineError::Config("paths.scene or paths.recipe is required".into()));
    };
    let at = |source| PipelineError::Scene { path: path.clone(), source };
    let recipe = SceneRecipe::from_path(path).map_err(at)?;
    let scene = synth_scene(&recipe, &SemanticVocabulary::default(), &options).map_err(at)?;
    Ok(SceneInput { scene, hash: hash_file(path)?, labels_hash: None })
}

pub fn resolve_animation(config: &PipelineConfig) -> Result<(Animation, String), PipelineError> {
    let path = config.paths.animation.as_ref().ok_or_else(|| PipelineError::Config("paths.animation is required".into()))?;
    let anim = load_animation(path).map_err(|source| PipelineError::Animation { path: path.clone(), source })?;
    Ok((anim, hash_file(path)?))
}

/// Features from the configured file, or the heuristic estimator. The hash
/// covers the canonical binary encoding, so both sources are comparable.
pub fn resolve_features(
    config: &PipelineConfig,
    anim: &Animation,
    vocab: &SemanticVocabulary,
) -> Result<(FeatureMap, String), PipelineError> {
    let (source, label) = match &config.paths.features {
        Some(path) => (FeatureSource::File(path.clone()), path.clone()),
        None => (FeatureSource::Heuristic(config.heuristic.clone()), PathBuf::from("<heuristic>")),
    };
    let features = estimate_features(anim, &source, vocab).map_err(|source| PipelineError::Features { path: label, source })?;
    let mut bytes = Vec::new();
    features.write_to(&mut bytes).expect("writing to memory");
    let hash = hash_bytes(&bytes);
    Ok((features, hash))
}

fn model_bytes(model: &KeyframeModel) -> Vec<u8> {
    let mut bytes = Vec::new();
    model.write_to(&mut bytes).expect("writing to memory");
    bytes
}

/// Trains on the built-in synthetic corpus. With a cache directory the result is
/// stored under a key covering everything that determines it.
pub fn train_default_model(
    config: &PipelineConfig,
    vocab: &SemanticVocabulary,
    vertices: usize,
) -> Result<KeyframeModel, PipelineError> {
    let dims = config.training.dims(vocab.len(), vertices);
    let key = {
        let identity = serde_json::json!({
            "seed": config.seed,
            "training": config.training,
            "weighting": config.weighting,
            "classes": vocab.classes(),
            "vertices": vertices,
        });
        hash_bytes(identity.to_string().as_bytes())
    };
    let cached = config.paths.cache_dir.as_ref().map(|d| d.join(format!("model-{key}.bin")));
    if let Some(path) = cached.as_deref().filter(|p| p.exists()) {
        return KeyframeModel::load(path).map_err(|source| PipelineError::Model { path: path.to_path_buf(), source });
    }
    let corpus = synthetic_corpus(config.training.corpus_size, config.seed, vocab);
    let (model, _) = train_on_corpus(&corpus, vocab, &config.weighting, dims, &config.training.train_config(config.seed))?;
    if let Some(path) = cached {
        fs::create_dir_all(path.parent().expect("cache path has a parent")).map_err(io_at(&path))?;
        fs::write(&path, model_bytes(&model)).map_err(io_at(&path))?;
    }
    Ok(model)
}

/// The configured model file, or a model trained on the synthetic corpus.
pub fn resolve_model(
    config: &PipelineConfig,
    vocab: &SemanticVocabulary,
    vertices: usize,
) -> Result<(KeyframeModel, String), PipelineError> {
    let model = match &config.paths.model {
        Some(path) => KeyframeModel::load(path).map_err(|source| PipelineError::Model { path: path.clone(), source })?,
        None => train_default_model(config, vocab, vertices)?,
    };
    let hash = hash_bytes(&model_bytes(&model));
    Ok((model, hash))
}

/// Pose with the yaw in degrees for readability; `theta_rad` keeps the exact value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub tau: [f64; 3],
    pub theta_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_rad: Option<f64>,
}

impl From<&PlacementPose> for PoseRecord {
    fn from(p: &PlacementPose) -> Self {
        PoseRecord { tau: p.tau, theta_deg: p.theta_degrees(), theta_rad: Some(p.theta) }
    }
}

impl PoseRecord {
    pub fn pose(&self) -> PlacementPose {
        PlacementPose::new(self.tau, self.theta_rad.unwrap_or_else(|| self.theta_deg.to_radians()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProspectRecord {
    pub pose: PoseRecord,
    pub energy: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultArtifact {
    pub mode: WeightMode,
    pub pose: PoseRecord,
    pub energy: f64,
    pub evaluations: usize,
    pub seeds: usize,
    pub per_frame: Vec<FrameLoss>,
    pub prospects: Vec<ProspectRecord>,
    pub config: PipelineConfig,
    pub inputs: InputHashes,
}

impl ResultArtifact {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = fs::read(path).map_err(io_at(path))?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportArtifact {
    #[serde(flatten)]
    pub report: PlausibilityReport,
    pub pose: PoseRecord,
    pub config: PipelineConfig,
    pub inputs: InputHashes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsArtifact {
    pub mode: WeightMode,
    pub k: Vec<f64>,
    #[serde(flatten)]
    pub weights: KeyframeWeights,
    pub config: PipelineConfig,
    pub inputs: InputHashes,
}

/// Pretty JSON with a trailing newline. Field order is fixed by the types, so
/// equal values always produce equal bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_at(path))
}

pub struct PipelineRun {
    pub weights: WeightsArtifact,
    pub result: ResultArtifact,
    pub report: ReportArtifact,
    pub placement: PlacementResult,
}

/// Weights for one mode; the model is only consulted in active mode.
pub fn weights_for_mode(
    config: &PipelineConfig,
    anim: &Animation,
    features: &FeatureMap,
    vocab: &SemanticVocabulary,
    model: Option<&KeyframeModel>,
) -> Result<(KeyframeWeights, Vec<f64>), PipelineError> {
    let model = if config.mode == WeightMode::Active { model } else { None };
    let weights = compute_keyframes(anim, features, vocab, &config.weighting, model)?;
    let k = weights.for_mode(config.mode);
    Ok((weights, k))
}

struct Inputs<'a> {
    scene: &'a SceneInput,
    anim: &'a Animation,
    features: &'a FeatureMap,
    model: Option<&'a (KeyframeModel, String)>,
    hashes: InputHashes,
}

fn run_with(config: &PipelineConfig, inputs: &Inputs) -> Result<PipelineRun, PipelineError> {
    let scene = &inputs.scene.scene;
    let vocab = scene.vocab();
    let mut hashes = inputs.hashes.clone();
    hashes.model = match config.mode {
        WeightMode::Active => inputs.model.map(|m| m.1.clone()),
        _ => None,
    };
    let (weights, k) = weights_for_mode(config, inputs.anim, inputs.features, vocab, inputs.model.map(|m| &m.0))?;
    let outcome = place(inputs.anim, inputs.features, &k, scene, &config.loss, &config.placement)?;
    let placed = transform(inputs.anim, &outcome.best.pose);
    let report = evaluate(&placed, scene, &config.metrics);

    let pose = PoseRecord::from(&outcome.best.pose);
    let result = ResultArtifact {
        mode: config.mode,
        pose,
        energy: outcome.best.energy,
        evaluations: outcome.evaluations,
        seeds: outcome.seeds,
        per_frame: outcome.best.per_frame.clone(),
        prospects: outcome
            .prospects
            .iter()
            .map(|p| ProspectRecord { pose: PoseRecord::from(&p.pose), energy: p.energy, evaluations: p.evaluations })
            .collect(),
        config: config.clone(),
        inputs: hashes.clone(),
    };
    let report = ReportArtifact { report, pose, config: config.clone(), inputs: hashes.clone() };
    let weights = WeightsArtifact { mode: config.mode, k, weights, config: config.clone(), inputs: hashes };
    Ok(PipelineRun { weights, result, report, placement: outcome.best })
}

impl PipelineRun {
    /// Writes `weights.json`, `result.json` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        write_json(&dir.join("weights.json"), &self.weights)?;
        write_json(&dir.join("result.json"), &self.result)?;
        write_json(&dir.join("report.json"), &self.report)
    }
}

fn load_inputs(config: &PipelineConfig) -> Result<(SceneInput, Animation, FeatureMap, InputHashes), PipelineError> {
    let scene = resolve_scene(config)?;
    let (anim, animation) = resolve_animation(config)?;
    let (features, features_hash) = resolve_features(config, &anim, scene.scene.vocab())?;
    let hashes = InputHashes {
        scene: Some(scene.hash.clone()),
        labels: scene.labels_hash.clone(),
        animation,
        features: Some(features_hash),
        model: None,
    };
    Ok((scene, anim, features, hashes))
}

/// Features, keyframe weights, placement and metrics for the configured mode,
/// with artifacts written to the output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    let run = execute(config)?;
    run.write(&config.out_dir())?;
    Ok(run)
}

/// [`run_pipeline`] without writing anything.
pub fn execute(config: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    config.weighting.validate()?;
    config.placement.validate()?;
    let (scene, anim, features, hashes) = load_inputs(config)?;
    let model = match config.mode {
        WeightMode::Active => Some(resolve_model(config, scene.scene.vocab(), anim.vertex_count())?),
        _ => None,
    };
    run_with(config, &Inputs { scene: &scene, anim: &anim, features: &features, model: model.as_ref(), hashes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub mode: String,
    pub energy: f64,
    pub non_collision: f64,
    pub contact: f64,
    pub scene_hash: String,
    pub animation_hash: String,
}

/// Runs every mode against one loaded scene, writing each mode's artifacts to
/// `<out_dir>/<mode>/`.
pub fn compare(config: &PipelineConfig, modes: &[WeightMode]) -> Result<Vec<CompareRow>, PipelineError> {
    if modes.len() < 2 {
        return Err(PipelineError::Config("compare needs at least two modes".into()));
    }
    config.weighting.validate()?;
    config.placement.validate()?;
    let (scene, anim, features, hashes) = load_inputs(config)?;
    let model = if modes.contains(&WeightMode::Active) {
        Some(resolve_model(config, scene.scene.vocab(), anim.vertex_count())?)
    } else {
        None
    };
    let base = config.out_dir();
    modes
        .iter()
        .map(|&mode| {
            let mut cfg = config.clone();
            cfg.mode = mode;
            cfg.paths.out_dir = Some(base.join(mode.name()));
            let inputs = Inputs { scene: &scene, anim: &anim, features: &features, model: model.as_ref(), hashes: hashes.clone() };
            let run = run_with(&cfg, &inputs)?;
            run.write(&base.join(mode.name()))?;
            Ok(CompareRow {
                mode: mode.name().to_string(),
                energy: run.result.energy,
                non_collision: run.report.report.non_collision,
                contact: run.report.report.contact,
                scene_hash: hashes.scene.clone().unwrap_or_default(),
                animation_hash: hashes.animation.clone(),
            })
        })
        .collect()
}

pub fn write_compare_csv(rows: &[CompareRow], path: &Path) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io_at(path))
}
