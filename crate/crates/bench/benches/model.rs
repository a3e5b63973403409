use criterion::{criterion_group, criterion_main, Criterion};

use ctxfuse_bench::rng;
use ctxfuse_core::fusion::FusionKind;
use ctxfuse_core::pipeline::{assemble_model, generate_task, sample_loss, InputShape, ModelConfig, SyntheticTaskConfig};
use ctxfuse_core::{Matrix, Mode, Tape};

fn model(c: &mut Criterion) {
    let task = SyntheticTaskConfig {
        train_size: 8,
        val_size: 4,
        test_size: 4,
        ..SyntheticTaskConfig::default()
    };
    let data = generate_task(&task).unwrap();
    let shape = InputShape {
        n: task.n,
        t: task.t,
        d_input: task.d,
    };
    let mut group = c.benchmark_group("model");
    for fusion in [FusionKind::CoAttention, FusionKind::AttnFusion] {
        let mc = ModelConfig {
            fusion,
            ..ModelConfig::default()
        };
        let mut r = rng(5);
        let mut m = assemble_model(&mc, shape, &mut r).unwrap();
        let images: Vec<&Matrix> = data.train.iter().map(|s| &s.y).collect();
        m.init_references_from(&images, &mut r).unwrap();
        let sample = &data.train[0];
        group.bench_function(format!("predict/{fusion}"), |b| b.iter(|| m.predict(&sample.x, &sample.y).unwrap()));
        group.bench_function(format!("loss_and_gradient/{fusion}"), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let params = m.store.bind(&tape);
                let loss = sample_loss(&m, &tape, &params, sample, &mut Mode::Eval, None).unwrap();
                tape.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, model);
criterion_main!(benches);
