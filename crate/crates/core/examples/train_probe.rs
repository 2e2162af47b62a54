//! Desk-scale training probe: small synthetic dataset, both model
//! variants, timing and test f-scores per epoch count.
//! cargo run -p fouriernet --release --example train_probe -- [groups] [per_group] [epochs]

use fouriernet::model::{
    build_samples, evaluate_test_set, train, CascadedModel, LabeledSet, NetworkConfig, TrainConfig,
};
use fouriernet::synth::generate_dataset;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let groups: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3);
    let per_group: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(6);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2);

    let t0 = std::time::Instant::now();
    let ds = generate_dataset(42, groups, per_group, 64, 128, 0.15).unwrap();
    println!(
        "dataset: {} train / {} val / {} test in {:.2}s",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        t0.elapsed().as_secs_f64()
    );

    let to_set = |samples: &[fouriernet::synth::SyntheticSample]| {
        let mut set = LabeledSet::default();
        for s in samples {
            set.push(s.image.clone(), s.mask.clone());
        }
        set
    };
    let (train_ls, val_ls, test_ls) = (to_set(&ds.train), to_set(&ds.val), to_set(&ds.test));

    for order in [1usize, 0] {
        let net = NetworkConfig { descriptor_order: order, ..NetworkConfig::desk() };
        let tc = TrainConfig {
            max_epochs: epochs,
            early_stop_patience: epochs + 1,
            seed: 7,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let train_samples = build_samples::<f32>(&train_ls, order, 2).unwrap();
        let val_samples = build_samples::<f32>(&val_ls, order, 2).unwrap();
        println!("order {order}: samples built in {:.2}s", t0.elapsed().as_secs_f64());

        let t0 = std::time::Instant::now();
        let mut model = CascadedModel::<f32>::build(&net, tc.seed).unwrap();
        let history = train(&mut model, &train_samples, &val_samples, &tc).unwrap();
        let train_time = t0.elapsed().as_secs_f64();

        let t0 = std::time::Instant::now();
        let metrics = evaluate_test_set(&model, &test_ls).unwrap();
        println!(
            "order {order}: {:.1}s train ({:.2}s/epoch), {:.1}s test eval, f={:.4} p={:.4} r={:.4}",
            train_time,
            train_time / history.epochs.len() as f64,
            t0.elapsed().as_secs_f64(),
            metrics.f_score,
            metrics.precision,
            metrics.recall
        );
        for e in &history.epochs {
            println!("  epoch {}: train {:.4} val {:.4}", e.epoch, e.train_loss, e.val_loss);
        }
    }
}
