// speed probe (throwaway)
use lightbake::geometry::Aabb;
use lightbake::math::*;
use lightbake::model::*;
use lightbake::nn::AdamState;
use lightbake::scene::*;
use lightbake::trainer::*;
use std::time::Instant;

fn main() {
    let asset = Asset {
        name: "probe".into(),
        center: Vec3::ZERO,
        shape: Shape::Sphere { radius: 1.0 },
        bsdf: Bsdf::SmoothDielectric { eta: 1.0 },
        medium: Some(Medium { sigma_a: [1.0; 3], sigma_s: [1.0; 3], hg_g: 0.0 }),
        aabb: Aabb::new(Vec3::new(1.2, 1.2, 1.2)),
        neural: false,
        checkpoint: None,
    };
    let config = TrainConfig { batch_size: 2048, buffer_capacity: 1 << 16, ..Default::default() };

    // tuple generation speed
    let t0 = Instant::now();
    let mut buffer = SampleBuffer::new(1 << 16);
    buffer.fill(&asset, &config, 1);
    let gen_rate = (1 << 16) as f64 / t0.elapsed().as_secs_f64();
    println!("tuple generation: {:.0} tuples/s", gen_rate);

    // training speed at desk nets (k=16, 64x3 conds, 64x2 albedo)
    let mut model = TransportModel::new(config.flow_spec(), config.albedo_spec(), asset.aabb.half_extents, false);
    let mut rng = lightbake::rng::stream(1, 2, 3);
    model.init(&mut rng);
    let mut adam = AdamState::new(model.store.len(), 1e-3);
    let mut grads = Vec::new();
    let mut scratch = ModelScratch::default();
    let t0 = Instant::now();
    let mut steps = 0;
    while t0.elapsed().as_secs_f64() < 10.0 {
        let batch = buffer.next_batch(&asset, &config);
        loss_step(batch, &mut model, &mut adam, &mut grads, &mut scratch);
        steps += 1;
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "training: {:.2} steps/s at batch 2048 ({:.0} samples/s, params {})",
        steps as f64 / dt,
        steps as f64 * 2048.0 / dt,
        model.store.len()
    );

    // flow inference speed (per neural-bounce-equivalent: 6 conditioner forwards + albedo)
    let mut prefix = Vec::new();
    model.encode_prefix(Vec3::new(0.3, 0.2, 0.9), Vec3::new(0.0, 0.6, 0.8), &mut prefix);
    let t0 = Instant::now();
    let mut n = 0u64;
    let mut acc = 0.0;
    while t0.elapsed().as_secs_f64() < 5.0 {
        let (s12, pu) = model.flow.sample_u(&model.store, &prefix, 0, &mut rng, &mut scratch.flow);
        let pw_e = model.flow.pdf_omega(&model.store, &prefix, s12, [0.3, 0.7], &mut scratch.flow);
        let (_, pw) = model.flow.sample_omega(&model.store, &prefix, s12, 0, &mut rng, &mut scratch.flow);
        let a = model.albedo_eval(&prefix, &mut scratch.mlp);
        acc += pu.r + pw_e.r + pw.r + a.r;
        n += 1;
    }
    println!("neural bounce flow cost: {:.1} us/bounce (sink {acc:.3})", t0.elapsed().as_secs_f64() * 1e6 / n as f64);
}
