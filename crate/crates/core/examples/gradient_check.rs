//! Reverse-mode gradients of a small network loss against central finite
//! differences, parameter by parameter.
//!
//! cargo run --release --example gradient_check

use emax::deep::{init_mlp, mlp_graph, MlpSpec};
use emax::rng::stream;
use emax::tensor::{finite_diff_grad, relative_error, Graph, ParamStore, Tensor};
use rand::Rng;

fn loss(g: &mut Graph, store: &ParamStore, spec: &MlpSpec, x: &Tensor, y: &Tensor) -> emax::tensor::NodeId {
    let xi = g.input("x", x.clone());
    let out = mlp_graph(g, store, "net", spec, xi).unwrap();
    let yi = g.input("y", y.clone());
    let err = g.sub(out, yi).unwrap();
    let sq = g.square(err).unwrap();
    g.mean(sq).unwrap()
}

fn main() {
    let spec = MlpSpec::new(4, &[8, 8], 3);
    let mut store = ParamStore::new();
    init_mlp(&spec, "net", &mut stream(0, "init"), &mut store);
    let mut rng = stream(0, "data");
    let x = Tensor::matrix(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect());
    let y = Tensor::matrix(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect());

    let mut g = Graph::new();
    let l = loss(&mut g, &store, &spec, &x, &y);
    println!("loss {:.6}", g.value(l).unwrap().data()[0]);
    let grads = g.backward(l).unwrap();

    for (name, p) in store.iter() {
        let numeric = finite_diff_grad(
            |t| {
                let mut s = store.clone();
                s.insert(name.clone(), t.clone());
                let mut g = Graph::new();
                let l = loss(&mut g, &s, &spec, &x, &y);
                g.value(l).unwrap().data()[0]
            },
            p,
            1e-5,
        );
        let analytic = grads.get(name).unwrap();
        let worst = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| relative_error(*a, *n))
            .fold(0.0, f64::max);
        println!("{name:<10} {:>4} values  max relative error {worst:.2e}", p.len());
    }
}
