//! Rank agreement between a noisy scripted teacher and the noiseless one.
//!
//! cargo run --release --example teacher_noise

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scorerl::teacher::{kendall_tau_b, noisy_score, perfect_score, TeacherConfig};

fn main() {
    let base = TeacherConfig::new((0.0, 10.0), [0.0, 100.0]);
    // Returns spread evenly over the middle half of the range.
    let returns: Vec<f64> = (0..500).map(|i| 25.0 + 50.0 * i as f64 / 499.0).collect();
    let perfect: Vec<f64> = returns.iter().map(|&g| perfect_score(&base, g)).collect();
    for var in [0.0, 0.1, 0.2, 0.4, 0.8, 1.6] {
        let cfg = base.clone().with_noise(var);
        let taus: Vec<f64> = (0..20)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let noisy: Vec<f64> = returns.iter().map(|&g| noisy_score(&cfg, g, &mut rng)).collect();
                kendall_tau_b(&noisy, &perfect).unwrap().tau_b
            })
            .collect();
        let mean = taus.iter().sum::<f64>() / taus.len() as f64;
        println!("variance {var:.1}: tau_b {mean:.3}");
    }
}
