// bake-quality probe (throwaway): gray sphere albedo vs survival oracle
use lightbake::geometry::Aabb;
use lightbake::math::*;
use lightbake::model::*;
use lightbake::scene::*;
use lightbake::trainer::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn survival_oracle(x_o: Vec3, w_o: Vec3, sigma_t: f64, a: f64, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut sum = 0.0;
    for _ in 0..n {
        let mut pos = x_o;
        let mut dir = -w_o;
        let mut w = 1.0;
        loop {
            let b = pos.dot(dir);
            let disc = (b * b - (pos.length_squared() - 1.0)).max(0.0);
            let t_exit = -b + disc.sqrt();
            let t = -(1.0f64 - rng.gen::<f64>()).ln() / sigma_t;
            if t >= t_exit { break; }
            pos += dir * t;
            w *= a;
            if w < 1e-9 { w = 0.0; break; }
            dir = sample_uniform_sphere(rng);
        }
        sum += w;
    }
    sum / n as f64
}

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12288);
    let asset = Asset {
        name: "gray".into(),
        center: Vec3::ZERO,
        shape: Shape::Sphere { radius: 1.0 },
        bsdf: Bsdf::SmoothDielectric { eta: 1.0 },
        medium: Some(Medium { sigma_a: [1.0; 3], sigma_s: [1.0; 3], hg_g: 0.0 }),
        aabb: Aabb::new(Vec3::new(1.2, 1.2, 1.2)),
        neural: false,
        checkpoint: None,
    };
    let config = TrainConfig {
        steps,
        batch_size: 2048,
        buffer_capacity: 1 << 19,
        separate_direct: false,
        seed: 7,
        lr_decay_floor: 0.08,
        ..Default::default()
    };
    let t0 = Instant::now();
    let (model, curves) = bake(&asset, &config).unwrap();
    println!("bake: {:.1} s, skipped {}", t0.elapsed().as_secs_f64(), curves.skipped_steps);
    for (r, nll) in &curves.heldout {
        println!("  refresh {r}: heldout nll {nll:.5}");
    }
    // albedo probes vs oracle
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut scratch = ModelScratch::default();
    let mut mae = 0.0;
    let n_probe = 200;
    let mut worst: f64 = 0.0;
    for _ in 0..n_probe {
        let x = sample_uniform_sphere(&mut rng);
        let f = Frame::from_normal(x);
        let w = f.to_world(sample_cosine_hemisphere(&mut rng));
        model.encode_prefix(x, w, &mut scratch.prefix);
        let a = model.albedo_eval(&scratch.prefix, &mut scratch.mlp).mean();
        let oracle = survival_oracle(x, w, 2.0, 0.5, 20000, &mut rng);
        let err = (a - oracle).abs();
        mae += err;
        worst = worst.max(err);
    }
    println!("albedo probes: mae {:.4}, worst {:.4} ({} probes)", mae / n_probe as f64, worst, n_probe);
}
