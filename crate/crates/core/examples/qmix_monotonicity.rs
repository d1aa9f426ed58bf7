//! The QMIX mixer never lowers the joint value when one agent's value rises.
//! Sweeps agent 0's value on a random mixer and prints the joint value.
//!
//! cargo run --release --example qmix_monotonicity

use emax::deep::QmixSpec;
use emax::rng::stream;
use emax::tensor::ParamStore;

fn main() {
    let spec = QmixSpec {
        n_agents: 3,
        state_dim: 4,
        embed: 32,
        hyper_embed: 64,
    };
    let mut store = ParamStore::new();
    spec.init("mixer", &mut stream(1, "mixer"), &mut store);
    let state = [0.3, -1.2, 0.8, 2.0];
    let mut previous = f64::NEG_INFINITY;
    for step in 0..=16 {
        let q0 = -4.0 + 0.5 * step as f64;
        let q_tot = spec.eval(&store, "mixer", &[q0, 1.0, -0.5], &state, 1).unwrap()[0];
        let bar = "#".repeat(((q_tot + 3.0) * 6.0).clamp(0.0, 60.0) as usize);
        println!("q0 {q0:>5.1}  Q_tot {q_tot:>8.4}  {bar}");
        assert!(q_tot >= previous - 1e-12);
        previous = q_tot;
    }
}
