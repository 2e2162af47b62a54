use fouriernet::mask::{connected_components, trace_contour, BinaryMask, Connectivity};
use fouriernet::descriptor_set;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lobed_mask(seed: u64, scale: f64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = 20.0 + 5.0 * rng.random::<f64>();
    let mut cs = [0.0f64; 3];
    let mut ps = [0.0f64; 3];
    for k in 0..3 {
        cs[k] = base * (0.11 + 0.04 * rng.random::<f64>());
        ps[k] = rng.random::<f64>() * std::f64::consts::TAU;
    }
    let radius = |theta: f64| {
        base + (0..3).map(|k| cs[k] * ((k as f64 + 2.0) * theta + ps[k]).cos()).sum::<f64>()
    };
    let extent = ((base * 1.45) * scale).ceil() as usize;
    let size = 2 * extent + 3;
    let center = (size / 2) as f64;
    BinaryMask::from_fn(size, size, |r, c| {
        let dy = r as f64 - center;
        let dx = c as f64 - center;
        (dx * dx + dy * dy).sqrt() <= radius(dy.atan2(dx)) * scale
    })
}

fn amps(mask: &BinaryMask) -> Vec<f64> {
    let set = connected_components(mask, Connectivity::Eight);
    let contour = trace_contour(&set.components[0]).unwrap();
    descriptor_set(&contour, 4).unwrap().amplitudes
}

fn main() {
    let mut worst: f64 = 0.0;
    let mut worst_a1: f64 = 0.0;
    for seed in 0..12u64 {
        let a1 = amps(&lobed_mask(seed, 1.0));
        let a2 = amps(&lobed_mask(seed, 2.0));
        let d1 = (a2[0] - 2.0 * a1[0]).abs();
        worst_a1 = worst_a1.max(d1);
        print!("seed {seed}: A1 {:.3}->{:.3} (abs d {:.3}) ", a1[0], a2[0], d1);
        for n in 1..4 {
            let rel = (a2[n] - 2.0 * a1[n]).abs() / (2.0 * a1[n]);
            worst = worst.max(rel);
            print!("A{}={:.2}->{:.2} r={:.3} ", n + 1, a1[n], a2[n], rel);
        }
        println!();
    }
    println!("worst rel (n=2..4): {worst:.4}; worst A1 abs dev: {worst_a1:.4}");
}
