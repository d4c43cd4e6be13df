//! Preference targets for a range of score gaps under the three smoothing modes.
//!
//! cargo run --example soft_labels

use scorerl::reward::{soft_label, LabelSmoothing};

fn main() {
    let (lambda, constant, tie, k) = (2.0, 0.05, 0.2, 2);
    println!("{:>6} {:>9} {:>9} {:>9}", "gap", "adaptive", "constant", "hard");
    for gap in [0.0, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0] {
        let row: Vec<f64> = [LabelSmoothing::Adaptive, LabelSmoothing::Constant, LabelSmoothing::Hard]
            .iter()
            .map(|&m| soft_label(5.0 - gap / 2.0, 5.0 + gap / 2.0, m, lambda, constant, tie, k).mu_tilde)
            .collect();
        println!("{gap:>6.1} {:>9.5} {:>9.5} {:>9.5}", row[0], row[1], row[2]);
    }
    // Small gaps are uncertain, so the adaptive target stays further from 1.
}
