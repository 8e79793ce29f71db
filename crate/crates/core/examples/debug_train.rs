use advsolve::autodiff::Tape;
use advsolve::datagen::{generate_sat_dataset, SatGenConfig};
use advsolve::sat_perturb::BipartiteAdjacency;
use advsolve::surrogate::*;

fn main() {
    let config = SatGenConfig { var_range: (3, 10), pair_count: 8, seed: 11, ..SatGenConfig::default() };
    let pairs = generate_sat_dataset(&config).unwrap();
    let params = SurrogateParams::init(SurrogateRole::Sat, 16, 8, 1);
    for (i, pair) in pairs.iter().take(4).enumerate() {
        let sat_adj = BipartiteAdjacency::from_formula(&pair.satisfiable);
        let unsat_adj = BipartiteAdjacency::from_formula(&pair.unsatisfiable);
        let ps = predict_sat(&params, sat_adj.tensor()).unwrap();
        let pu = predict_sat(&params, unsat_adj.tensor()).unwrap();
        println!("pair {i}: p(sat twin)={ps:.6} p(unsat twin)={pu:.6} diff={:.2e}", ps - pu);
    }
    // parameter gradient norms on one item
    let pair = &pairs[0];
    let adj = BipartiteAdjacency::from_formula(&pair.satisfiable);
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, &params, true);
    let a = tape.constant(adj.tensor().clone());
    let pred = forward_sat(&mut tape, &bound, a).unwrap();
    let loss = bce(&mut tape, pred, true);
    println!("loss={:.6} pred={:.6}", tape.value(loss).item(), tape.value(pred).item());
    let grads = tape.backward(loss);
    for (name, g) in SurrogateRole::Sat.tensor_names().iter().zip(bound.grads(&grads)) {
        let norm: f64 = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("grad {name:>10}: l2 = {norm:.3e}");
    }
}
