use std::time::Instant;
use treegan::adam::AdamConfig;
use treegan::critic::CriticConfig;
use treegan::data::{Dataset, ShapeKind, TailPolicy};
use treegan::training::{TrainConfig, Trainer};
use treegan::treegcn::GeneratorConfig;

#[test]
#[ignore]
fn probe_training_speed() {
    let gen_config = GeneratorConfig {
        degrees: vec![1, 2, 2, 2, 4, 8],
        feature_dims: vec![32, 48, 48, 32, 24, 16, 3],
        supports: 10,
        slope: 0.2,
        per_node_branching: false,
        branch_before_conv: true,
    };
    let critic_config = CriticConfig {
        point_widths: vec![3, 32, 64],
        head_widths: vec![64, 32, 1],
        slope: 0.2,
    };
    let train_config = TrainConfig {
        lambda_gp: 10.0,
        critic_steps: 5,
        batch_size: 16,
        total_gen_steps: 2000,
        seed: 7,
        adam: AdamConfig::default(),
        eval_every: 0,
        tail: TailPolicy::Drop,
    };
    let dataset = Dataset::<f32>::synthetic(&ShapeKind::ALL, 200, 256, 0.02, 7).unwrap();
    let mut trainer = Trainer::new(gen_config, critic_config, train_config).unwrap();
    let start = Instant::now();
    let steps = 20u64;
    trainer.run(&dataset, steps, None, |_| {}).unwrap();
    let dt = start.elapsed().as_secs_f64();
    println!(
        "{} gen steps in {:.2}s -> {:.1}s per 100 steps, {:.0}s for 2000",
        steps, dt, dt / steps as f64 * 100.0, dt / steps as f64 * 2000.0
    );
}
