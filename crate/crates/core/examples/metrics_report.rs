//! Aggregate statistics on synthetic results: IQM with a bootstrap interval,
//! a performance profile, and CVaR of detrended gradient norms.
//!
//! cargo run --release --example metrics_report

use emax::metrics::{bootstrap_ci, cvar_detrended, iqm, normalize_returns, performance_profile, tau_grid};
use emax::rng::stream;
use rand::Rng;

fn main() {
    let mut rng = stream(0, "synthetic");
    let steady: Vec<f64> = (0..10).map(|_| 0.8 + rng.random_range(-0.1..0.1)).collect();
    let erratic: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
    for (name, v) in [("steady", &steady), ("erratic", &erratic)] {
        let (lo, hi) = bootstrap_ci(v, 2000, 0.95, &mut rng).unwrap();
        println!("{name:<8} IQM {:.3}  95% CI [{lo:.3}, {hi:.3}]", iqm(v).unwrap());
    }

    let taus = tau_grid(10);
    println!("\ntau      {}", taus.iter().map(|t| format!("{t:>5.1}")).collect::<String>());
    for (name, v) in [("steady", &steady), ("erratic", &erratic)] {
        let fr = performance_profile(&normalize_returns(v, 0.0, 1.0), &taus);
        println!("{name:<8} {}", fr.iter().map(|f| format!("{f:>5.2}")).collect::<String>());
    }

    // A slowly drifting gradient norm with rare spikes.
    let smooth: Vec<f64> = (0..200).map(|t| 1.0 + 0.01 * t as f64 + rng.random_range(-0.05..0.05)).collect();
    let mut spiky = smooth.clone();
    for i in [30, 90, 91, 150] {
        spiky[i] += 4.0;
    }
    println!("\nCVaR(95%) detrended: smooth {:.3}, spiky {:.3}", cvar_detrended(&smooth, 0.95).unwrap(), cvar_detrended(&spiky, 0.95).unwrap());
}
