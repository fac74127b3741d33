use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use paak_core::animation::{
    estimate_features_heuristic, load_animation, load_features, save_features, synth_clip, transform, ClipParams,
};
use paak_core::geometry::write_obj;
use paak_core::keyframes::train_on_corpus;
use paak_core::metrics::evaluate;
use paak_core::pipeline::{
    compare, execute, hash_file, resolve_model, run_pipeline, train_default_model, write_compare_csv,
    write_json, InputHashes, PoseRecord, ReportArtifact, WeightsArtifact,
};
use paak_core::scene::{default_labels_path, load_scene, synth_mesh, LabelsFile, SceneRecipe};
use paak_core::{PipelineConfig, SemanticVocabulary, WeightMode};
use serde_json::Value;

use crate::{Cli, Command, InputArgs, SynthTarget};

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global().context("starting worker pool")?;
    }
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.cache_dir.is_some() {
        config.paths.cache_dir = cli.cache_dir.clone();
    }

    match cli.command {
        Command::BakeSdf { scene, labels, cell_size, out } => {
            if let Some(c) = cell_size {
                config.scene.cell_size = c;
            }
            let labels = labels.unwrap_or_else(|| default_labels_path(&scene));
            let model = load_scene(&scene, &labels, &config.scene_options())?;
            let sdf = model.sdf();
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            sdf.write_to(BufWriter::new(file)).with_context(|| format!("writing {}", out.display()))?;
            println!("baked {:?} voxels at {} m into {}", sdf.dims(), sdf.cell_size(), out.display());
        }
        Command::Synth { target } => synth(target, &config)?,
        Command::Features { anim, labels, out } => {
            let vocab = vocabulary(labels.as_deref())?;
            let animation = load_animation(&anim)?;
            let features = estimate_features_heuristic(&animation, &vocab, &config.heuristic);
            save_features(&features, &out)?;
            println!("wrote {} frames x {} vertices to {}", features.frame_count(), features.vertex_count(), out.display());
        }
        Command::Keyframes { anim, features, mode, model, labels, out } => {
            config.mode = mode;
            config.paths.animation = Some(anim.clone());
            config.paths.features = Some(features.clone());
            config.paths.model = model;
            config.paths.labels = labels.clone();
            keyframes(&config, labels.as_deref(), &out)?;
        }
        Command::TrainModel { data, epochs, lr, labels, out } => {
            if let Some(e) = epochs {
                config.training.epochs = e;
            }
            if let Some(r) = lr {
                config.training.learning_rate = r;
            }
            let vocab = vocabulary(labels.as_deref())?;
            let model = match data {
                Some(dir) => {
                    let corpus = read_corpus(&dir)?;
                    let vertices = corpus[0].0.vertex_count();
                    let dims = config.training.dims(vocab.len(), vertices);
                    let (model, trace) = train_on_corpus(&corpus, &vocab, &config.weighting, dims, &config.training.train_config(config.seed))?;
                    println!("trained on {} clips, final loss {:.6}", corpus.len(), trace.last().copied().unwrap_or(f64::NAN));
                    model
                }
                None => train_default_model(&config, &vocab, paak_core::animation::BODY_VERTEX_COUNT)?,
            };
            model.save(&out)?;
            println!("wrote {} parameters to {}", model.params().len(), out.display());
        }
        Command::Place { scene, anim, features, weights, spacing, model, labels, out } => {
            config.mode = weights;
            if let Some(s) = spacing {
                config.placement.spacing = s;
            }
            config.paths.scene = Some(scene);
            config.paths.labels = labels;
            config.paths.animation = Some(anim);
            config.paths.features = Some(features);
            config.paths.model = model;
            let run = execute(&config)?;
            write_json(&out, &run.result)?;
            let p = &run.result.pose;
            println!(
                "energy {:.6} at tau ({:.3}, {:.3}, {:.3}) theta {:.1} deg after {} evaluations",
                run.result.energy, p.tau[0], p.tau[1], p.tau[2], p.theta_deg, run.result.evaluations
            );
        }
        Command::Eval { scene, anim, pose, labels, contact_threshold, out } => {
            if let Some(t) = contact_threshold {
                config.metrics.contact_threshold = t;
            }
            let labels = labels.unwrap_or_else(|| default_labels_path(&scene));
            let model = load_scene(&scene, &labels, &config.scene_options())?;
            let animation = load_animation(&anim)?;
            let record = read_pose(&pose)?;
            let report = evaluate(&transform(&animation, &record.pose()), &model, &config.metrics);
            config.paths.scene = Some(scene.clone());
            config.paths.labels = Some(labels.clone());
            config.paths.animation = Some(anim.clone());
            let inputs = InputHashes {
                scene: Some(hash_file(&scene)?),
                labels: Some(hash_file(&labels)?),
                animation: hash_file(&anim)?,
                features: None,
                model: None,
            };
            println!("non_collision {:.4} contact {:.4}", report.non_collision, report.contact);
            write_json(&out, &ReportArtifact { report, pose: record, config, inputs })?;
        }
        Command::Compare { inputs, modes, out } => {
            apply_inputs(&mut config, inputs);
            let rows = compare(&config, &modes)?;
            write_compare_csv(&rows, &out)?;
            for r in &rows {
                println!("{:<10} energy {:.6} non_collision {:.4} contact {:.4}", r.mode, r.energy, r.non_collision, r.contact);
            }
        }
        Command::Run { inputs, mode } => {
            apply_inputs(&mut config, inputs);
            if let Some(m) = mode {
                config.mode = m;
            }
            let run = run_pipeline(&config)?;
            let r = &run.report.report;
            println!(
                "{} energy {:.6} non_collision {:.4} contact {:.4}; artifacts in {}",
                config.mode.name(),
                run.result.energy,
                r.non_collision,
                r.contact,
                config.out_dir().display()
            );
        }
    }
    Ok(())
}

fn apply_inputs(config: &mut PipelineConfig, inputs: InputArgs) {
    let p = &mut config.paths;
    let InputArgs { scene, labels, recipe, anim, features, model, out_dir } = inputs;
    for (slot, value) in [
        (&mut p.scene, scene),
        (&mut p.labels, labels),
        (&mut p.recipe, recipe),
        (&mut p.animation, anim),
        (&mut p.features, features),
        (&mut p.model, model),
        (&mut p.out_dir, out_dir),
    ] {
        if value.is_some() {
            *slot = value;
        }
    }
}

fn vocabulary(labels: Option<&Path>) -> Result<SemanticVocabulary> {
    let Some(path) = labels else {
        return Ok(SemanticVocabulary::default());
    };
    let file: LabelsFile = serde_json::from_slice(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(SemanticVocabulary::new(file.classes, file.floor_id)?)
}

fn synth(target: SynthTarget, config: &PipelineConfig) -> Result<()> {
    match target {
        SynthTarget::Scene { recipe, out } => {
            let vocab = SemanticVocabulary::default();
            let (mesh, face_labels) = synth_mesh(&SceneRecipe::from_path(&recipe)?, &vocab)?;
            let mut w = BufWriter::new(fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            write_obj(&mesh, &mut w)?;
            let labels = LabelsFile { classes: vocab.classes().to_vec(), floor_id: vocab.floor_id(), face_labels };
            let labels_path = default_labels_path(&out);
            fs::write(&labels_path, serde_json::to_vec_pretty(&labels)?)?;
            println!("wrote {} faces to {} and {}", mesh.triangle_count(), out.display(), labels_path.display());
        }
        SynthTarget::Clip {
            kind,
            duration,
            fps,
            speed,
            seat_height,
            jump_height,
            idle,
            heading,
            seat_class,
            out,
            features,
            phases,
        } => {
            let vocab = SemanticVocabulary::default();
            let seat = vocab.id(&seat_class).with_context(|| format!("unknown seat class {seat_class:?}"))?;
            let params = ClipParams {
                kind,
                duration,
                fps,
                speed,
                seat_height,
                jump_height,
                idle,
                heading_deg: heading,
                seed: config.seed,
            };
            let clip = synth_clip(&params, vocab.floor_id(), seat)?;
            clip.animation.save(&out)?;
            if let Some(path) = features {
                save_features(&clip.features, &path)?;
            }
            if let Some(path) = phases {
                let doc = serde_json::json!({ "params": params, "phases": clip.phases, "seat": clip.seat });
                write_json(&path, &doc)?;
            }
            println!("wrote {} frames to {}", clip.animation.frame_count(), out.display());
        }
    }
    Ok(())
}

fn keyframes(config: &PipelineConfig, labels: Option<&Path>, out: &Path) -> Result<()> {
    let vocab = vocabulary(labels)?;
    let anim_path = config.paths.animation.as_ref().expect("set by caller");
    let features_path = config.paths.features.as_ref().expect("set by caller");
    let anim = load_animation(anim_path)?;
    let features = load_features(features_path)?;
    features.validate(&anim, &vocab)?;
    let model = match config.mode {
        WeightMode::Active => Some(resolve_model(config, &vocab, anim.vertex_count())?),
        _ => None,
    };
    let (weights, k) =
        paak_core::pipeline::weights_for_mode(config, &anim, &features, &vocab, model.as_ref().map(|m| &m.0))?;
    let inputs = InputHashes {
        scene: None,
        labels: labels.map(hash_file).transpose()?,
        animation: hash_file(anim_path)?,
        features: Some(hash_file(features_path)?),
        model: model.map(|m| m.1),
    };
    write_json(out, &WeightsArtifact { mode: config.mode, k, weights, config: config.clone(), inputs })?;
    println!("wrote {} frame weights to {}", anim.frame_count(), out.display());
    Ok(())
}

fn read_corpus(dir: &Path) -> Result<Vec<(paak_core::Animation, paak_core::FeatureMap)>> {
    let mut anims: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "anim"))
        .collect();
    anims.sort();
    if anims.is_empty() {
        bail!("no .anim files in {}", dir.display());
    }
    anims
        .iter()
        .map(|a| {
            let f = a.with_extension("ftr");
            Ok((load_animation(a)?, load_features(&f)?))
        })
        .collect()
}

/// Accepts a bare pose record or any artifact with a `pose` field.
fn read_pose(path: &Path) -> Result<PoseRecord> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    let pose = value.get("pose").cloned().unwrap_or(value);
    serde_json::from_value(pose).with_context(|| format!("{} has no pose (tau, theta_deg)", path.display()))
}
