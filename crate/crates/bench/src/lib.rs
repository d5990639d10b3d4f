//! Fixtures shared by the benchmarks.

use netclt_core::graphs::half_graph;
use netclt_core::rng::{substream, Purpose};
use netclt_core::{Experiment, OutcomeProfile, SquareMatrix};

/// The dense half-graph experiment with the default profile.
pub fn half_graph_experiment(n: usize) -> Experiment {
    Experiment::new(
        half_graph(n),
        OutcomeProfile::reference().discretize(n),
        0.5,
    )
    .expect("valid experiment")
}

/// A symmetric ±1 matrix drawn from a fixed seed.
pub fn sign_matrix(n: usize, seed: u64) -> SquareMatrix {
    use rand::Rng;
    let mut rng = substream(seed, n as u64, Purpose::CutRestart);
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}
