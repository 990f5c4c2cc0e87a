//! Bisects for the smallest constant c such that every step size above
//! the resulting threshold diverges on the calibration grid.

use eigenprecond::theory::{calibrate_divergence_constant, DIVERGENCE_CONSTANT};

fn main() {
    let c = calibrate_divergence_constant(1.0, 50.0, 1e-3).expect("calibration failed");
    println!("calibrated c = {c:.3} (pinned: {DIVERGENCE_CONSTANT})");
}
