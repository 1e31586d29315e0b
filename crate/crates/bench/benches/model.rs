use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

use diarize_core::gradcore::Graph;
use diarize_core::losses::{model_loss, LossWeights};
use diarize_core::model::{forward, DiarizationModel, ModelConfig};
use diarize_core::rng::stream_rng;
use diarize_core::types::DiarizationLabels;
use diarize_core::Tensor;

/// Ten seconds of desk-preset input.
const FRAMES: usize = 100;

fn inputs(cfg: &ModelConfig) -> (Tensor, DiarizationLabels) {
    let mut rng = stream_rng(5, 0);
    let data = (0..FRAMES * cfg.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::matrix(FRAMES, cfg.feature_dim, data).unwrap();
    let mut y = DiarizationLabels::zeros(cfg.max_speakers, FRAMES);
    for t in 0..FRAMES {
        y.set(0, t, t < 60);
        y.set(1, t, t >= 40);
    }
    (x, y)
}

fn desk(c: &mut Criterion) {
    let cfg = ModelConfig::desk();
    let model = DiarizationModel::new(cfg.clone(), 1).unwrap();
    let (x, y) = inputs(&cfg);
    let w = LossWeights::for_model(&cfg);

    c.bench_function("desk_forward", |b| b.iter(|| model.predict(&x).unwrap()));
    c.bench_function("desk_forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let bp = model.params.bind(&mut g);
            let xv = model.input(&mut g, &x).unwrap();
            let out = forward(&mut g, &bp, &cfg, xv).unwrap();
            let loss = model_loss(&mut g, &out, &y, &cfg, &w, &[]).unwrap();
            g.backward(loss.total).unwrap();
            bp.grads(&g)
        })
    });
}

criterion_group!(benches, desk);
criterion_main!(benches);
