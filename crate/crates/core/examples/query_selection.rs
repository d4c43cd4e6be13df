//! Choosing which fresh episodes to send to the teacher: k-means over
//! predicted returns picks a spread instead of a clump.
//!
//! cargo run --example query_selection

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scorerl::sampling::select_queries;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Two clusters of predicted returns, one much larger than the other.
    let low = Normal::new(-5.0, 0.5).unwrap();
    let high = Normal::new(3.0, 1.0).unwrap();
    let candidates: Vec<(u64, f64)> = (0..10)
        .map(|i| (i, if i < 7 { low.sample(&mut rng) } else { high.sample(&mut rng) }))
        .collect();
    for &(id, r) in &candidates {
        println!("candidate {id}: predicted return {r:.2}");
    }
    let sel = select_queries(&candidates, 5, 11).unwrap();
    let centroids: Vec<String> = sel.centroid_returns.iter().map(|c| format!("{c:.2}")).collect();
    println!("centroids {}", centroids.join(" "));
    println!("queried {:?}", sel.selected);
}
