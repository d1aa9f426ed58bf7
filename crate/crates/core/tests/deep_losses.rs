use emax::deep::{
    build_loss, member_prefix, mlp_forward, Batch, DeepAlgorithm, DeepConfig, DeepLearner, MixerKind, ReplayBuffer, Transition,
};
use emax::env::{EnvConfig, Environment, LbfConfig};
use emax::rng::stream;
use emax::tensor::{finite_diff_grad, relative_error};
use emax::tensor::{Graph, ParamStore, Tensor};
use rand::Rng;

fn tiny(algorithm: DeepAlgorithm) -> DeepLearner {
    let env = EnvConfig::Lbf(LbfConfig::default()).build(stream(0, "env")).unwrap();
    let config = DeepConfig {
        hidden: vec![6],
        ensemble_size: 3,
        batch_size: 4,
        buffer_capacity: 32,
        mixing_embed: 3,
        hypernet_embed: 4,
        ..DeepConfig::default()
    };
    DeepLearner::new(algorithm, config, &env.spec(), 7).unwrap()
}

fn buffer() -> ReplayBuffer {
    let mut env = EnvConfig::Lbf(LbfConfig::default()).build(stream(5, "env")).unwrap();
    let spec = env.spec();
    let mut rng = stream(5, "act");
    let mut buf = ReplayBuffer::new(32, 2, spec.obs_dim());
    let mut out = env.reset().unwrap();
    let mut last = vec![None, None];
    for _ in 0..30 {
        let a: Vec<usize> = (0..2).map(|_| rng.random_range(0..6)).collect();
        let next = env.step(&a).unwrap();
        buf.push(&Transition {
            observations: out.observations.clone(),
            last_actions: last.clone(),
            actions: a.clone(),
            // Make rewards non-trivial so targets are not all zero.
            reward: next.reward + rng.random_range(-1.0..1.0),
            next_observations: next.observations.clone(),
            terminal: next.terminal(),
        });
        last = a.into_iter().map(Some).collect();
        out = next;
        if out.done {
            out = env.reset().unwrap();
            last = vec![None, None];
        }
    }
    buf
}

fn batches(learner: &DeepLearner, buf: &ReplayBuffer) -> Vec<Batch> {
    let k = if learner.algorithm.is_emax() { learner.members() } else { 1 };
    buf.sample_bootstrapped(k, 4, &mut stream(1, "replay"))
        .unwrap()
        .iter()
        .map(|ix| Batch::from_buffer(buf, ix, &learner.layout, 0.99))
        .collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// TD targets computed row by row with plain inference, no graph involved.
fn oracle_targets(learner: &DeepLearner, batch: &Batch) -> Vec<f64> {
    let (n, b, a) = (batch.n_agents, batch.size, learner.layout.n_actions);
    let store = &learner.params;
    let net = &learner.setup().net;
    let rows = n * b;
    let next = batch.next_inputs.data();
    let values: Vec<f64> = if learner.algorithm.is_emax() {
        let k = learner.members();
        let mut acc = vec![0.0; rows * a];
        for j in 0..k {
            let out = mlp_forward(store, &member_prefix(j), net, next, rows).unwrap();
            acc.iter_mut().zip(out).for_each(|(s, v)| *s += v);
        }
        acc.iter().map(|v| v / k as f64).collect()
    } else {
        mlp_forward(store, "target.q0", net, next, rows).unwrap()
    };
    let best: Vec<f64> = values.chunks(a).map(|r| r[argmax(r)]).collect();
    match learner.algorithm.mixer() {
        MixerKind::None => (0..rows).map(|r| batch.rewards[r % b] + batch.discounts[r % b] * best[r]).collect(),
        MixerKind::Vdn => (0..b)
            .map(|s| batch.rewards[s] + batch.discounts[s] * (0..n).map(|i| best[i * b + s]).sum::<f64>())
            .collect(),
        MixerKind::Qmix => {
            let spec = learner.setup().qmix.as_ref().unwrap();
            let qs: Vec<f64> = (0..b).flat_map(|s| (0..n).map(move |i| (i, s))).map(|(i, s)| best[i * b + s]).collect();
            let mixed = spec.eval(store, "target.mixer", &qs, batch.next_states.data(), b).unwrap();
            (0..b).map(|s| batch.rewards[s] + batch.discounts[s] * mixed[s]).collect()
        }
    }
}

fn loss_value(store: &ParamStore, learner: &DeepLearner, batches: &[Batch], frozen: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let out = build_loss(&mut g, store, learner.setup(), batches, Some(frozen)).unwrap();
    g.value(out.loss).unwrap().data()[0]
}

#[test]
fn td_targets_match_row_by_row_oracle() {
    let buf = buffer();
    for algo in DeepAlgorithm::ALL {
        let mut learner = tiny(algo);
        // Move online weights away from the synced targets so the two paths differ.
        let bs = batches(&learner, &buf);
        learner.update_on(&bs).unwrap();
        let mut g = Graph::new();
        let out = build_loss(&mut g, &learner.params, learner.setup(), &bs, None).unwrap();
        for (batch, got) in bs.iter().zip(&out.targets) {
            let want = oracle_targets(&learner, batch);
            assert_eq!(got.len(), want.len(), "{algo:?}");
            for (x, y) in got.data().iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "{algo:?}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let buf = buffer();
    for algo in DeepAlgorithm::ALL {
        let learner = tiny(algo);
        let bs = batches(&learner, &buf);
        let mut g = Graph::new();
        let out = build_loss(&mut g, &learner.params, learner.setup(), &bs, None).unwrap();
        let frozen = out.targets.clone();
        let grads = g.backward(out.loss).unwrap();

        // Frozen targets make the loss a plain function of online weights.
        let mut g2 = Graph::new();
        let out2 = build_loss(&mut g2, &learner.params, learner.setup(), &bs, Some(&frozen)).unwrap();
        let grads2 = g2.backward(out2.loss).unwrap();

        for (name, p) in learner.params.iter() {
            if name.starts_with("target.") {
                let zero = grads.get(name).is_none_or(|t| t.data().iter().all(|&v| v == 0.0));
                assert!(zero, "{algo:?}: gradient leaked into {name}");
                continue;
            }
            let analytic = grads.get(name).unwrap_or_else(|| panic!("{algo:?}: no gradient for {name}"));
            assert_eq!(analytic, grads2.get(name).unwrap(), "{algo:?}: stop-gradient changed {name}");
            let numeric = finite_diff_grad(
                |t| {
                    let mut s = learner.params.clone();
                    s.insert(name.clone(), t.clone());
                    loss_value(&s, &learner, &bs, &frozen)
                },
                p,
                1e-6,
            );
            for (a, n) in analytic.data().iter().zip(numeric.data()) {
                assert!(relative_error(*a, *n) < 1e-5 || (a - n).abs() < 1e-8, "{algo:?} {name}: {a} vs {n}");
            }
        }
    }
}

#[test]
fn ensemble_loss_is_sum_of_member_losses() {
    let buf = buffer();
    let learner = tiny(DeepAlgorithm::VdnEmax);
    let bs = batches(&learner, &buf);
    let mut g = Graph::new();
    let out = build_loss(&mut g, &learner.params, learner.setup(), &bs, None).unwrap();
    assert_eq!(out.member_losses.len(), 3);
    let total: f64 = out.member_losses.iter().map(|&l| g.value(l).unwrap().data()[0]).sum();
    assert!((g.value(out.loss).unwrap().data()[0] - total).abs() < 1e-12);
    // Each member loss is the mean squared TD error on its own batch.
    for (k, batch) in bs.iter().enumerate() {
        let net = &learner.setup().net;
        let q = mlp_forward(&learner.params, &member_prefix(k), net, batch.inputs.data(), 2 * batch.size).unwrap();
        let taken: Vec<f64> = (0..2 * batch.size).map(|r| q[r * 6 + batch.actions[r]]).collect();
        let y = oracle_targets(&learner, batch);
        let want: f64 = (0..batch.size)
            .map(|s| (taken[s] + taken[batch.size + s] - y[s]).powi(2))
            .sum::<f64>()
            / batch.size as f64;
        assert!((g.value(out.member_losses[k]).unwrap().data()[0] - want).abs() < 1e-10);
    }
}
