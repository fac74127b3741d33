use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::Point3;
use paak_core::animation::{synth_clip, ClipParams};
use paak_core::keyframes::{build_input, compute_geometric, KeyframeModel, ModelDims};
use paak_core::placement::{pose_at, Evaluator, LossConfig};
use paak_core::scene::{synth_scene, SceneOptions, SceneRecipe, SemanticVocabulary};

fn room() -> paak_core::SceneModel {
    let recipe = SceneRecipe::floor_only([0., 0.], [4., 4.])
        .with_box("chair", [1.5, 1.5], [0.5, 0.5, 0.45], 20.0)
        .with_box("table", [2.6, 2.2], [1.2, 0.7, 0.75], 0.0)
        .with_box("sofa", [1.0, 3.3], [1.8, 0.8, 0.4], 90.0);
    synth_scene(&recipe, &SemanticVocabulary::default(), &SceneOptions { cell_size: 0.05, ..Default::default() }).unwrap()
}

fn probes() -> Vec<Point3<f64>> {
    (0..256).map(|i| {
        let t = i as f64 * 0.618_033_988_75;
        Point3::new(4.0 * t.fract(), 4.0 * (t * 1.7).fract(), 1.5 * (t * 2.3).fract())
    }).collect()
}

fn geometry(c: &mut Criterion) {
    let scene = room();
    let pts = probes();
    c.bench_function("nearest_surface x256", |b| {
        b.iter(|| pts.iter().map(|p| scene.bvh().nearest_surface(scene.mesh(), p).distance).sum::<f64>())
    });
    c.bench_function("sample_sdf x256", |b| b.iter(|| pts.iter().map(|p| scene.sample(black_box(p)).0).sum::<f64>()));
}

fn placement(c: &mut Criterion) {
    let scene = room();
    let vocab = SemanticVocabulary::default();
    let clip = synth_clip(&ClipParams::walk_then_sit(4.0, 15.0, 1.0, 0.45), 0, 2).unwrap();
    let k = compute_geometric(&clip.animation, &clip.features, &vocab, &Default::default()).unwrap().k_g;
    let eval = Evaluator::new(&clip.animation, &clip.features, &k, &scene, LossConfig::default()).unwrap();
    let pose = pose_at(&clip.animation, &scene, [2.0, 2.0], 0.7);
    c.bench_function("energy 60 frames", |b| b.iter(|| eval.energy(black_box(&pose))));

    let dims = ModelDims::new(vocab.len(), clip.animation.vertex_count());
    let model = KeyframeModel::init(dims, 0);
    let input = build_input(&clip.animation, &clip.features, &dims).unwrap();
    c.bench_function("model forward", |b| b.iter(|| model.forward(black_box(&input)).unwrap()));
}

criterion_group!(benches, geometry, placement);
criterion_main!(benches);
