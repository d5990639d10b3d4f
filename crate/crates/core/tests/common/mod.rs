//! Independent reference implementations used by the integration tests.
//! Everything here works from definitions: explicit neighbor loops, full
//! enumeration, direct polynomial evaluation.

#![allow(dead_code)]

use netclt_core::graphs::GraphBuilder;
use netclt_core::outcomes::Term;
use netclt_core::rng::Stream;
use netclt_core::{
    ExposureGraph, OutcomeFunction, OutcomeVector, Permutation, SquareMatrix, TreatmentVector,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> ExposureGraph {
    let mut b = GraphBuilder::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                b.add_edge(i, j);
            }
        }
    }
    b.finish()
}

pub fn random_function(rng: &mut impl Rng) -> OutcomeFunction {
    let terms: Vec<Term> = (0..rng.random_range(1..6))
        .map(|_| Term {
            coef: rng.random_range(-5.0..5.0),
            w: rng.random_range(0..2),
            x: rng.random_range(0..5),
        })
        .collect();
    OutcomeFunction::from_terms(&terms).unwrap()
}

pub fn random_outcomes(n: usize, rng: &mut impl Rng) -> OutcomeVector {
    (0..n).map(|_| random_function(rng)).collect()
}

pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Permutation {
    let mut map: Vec<usize> = (0..n).collect();
    map.shuffle(rng);
    Permutation::new(map).unwrap()
}

pub fn random_treatments(n: usize, pi: f64, rng: &mut impl Rng) -> TreatmentVector {
    TreatmentVector::new((0..n).map(|_| rng.random_bool(pi)).collect(), pi).unwrap()
}

/// `f(w, x)` from the term list.
pub fn eval_terms(f: &OutcomeFunction, w: u8, x: f64) -> f64 {
    f.terms()
        .iter()
        .filter(|t| t.w == 0 || w == 1)
        .map(|t| t.coef * x.powi(t.x as i32))
        .sum()
}

pub fn neighbors(g: &ExposureGraph, i: usize) -> Vec<usize> {
    (0..g.n()).filter(|&j| j != i && g.has_edge(i, j)).collect()
}

/// Horvitz–Thompson straight from the definition.
pub fn ht_oracle(g: &ExposureGraph, v: &OutcomeVector, w: &[bool], pi: f64) -> f64 {
    let n = g.n();
    let mut acc = 0.0;
    for i in 0..n {
        let nb = neighbors(g, i);
        let d = nb.len().max(1) as f64;
        let r = nb.iter().filter(|&&j| w[j]).count() as f64 / d;
        if w[i] {
            acc += eval_terms(v.get(i), 1, r) / pi;
        } else {
            acc -= eval_terms(v.get(i), 0, r) / (1.0 - pi);
        }
    }
    acc / n as f64
}

/// `Σ_W P(W) τ̂(W)` over all `2ⁿ` assignments.
pub fn expected_ht_by_enumeration(g: &ExposureGraph, v: &OutcomeVector, pi: f64) -> f64 {
    let n = g.n();
    assert!(n <= 16);
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        let w: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let k = w.iter().filter(|&&b| b).count() as i32;
        let p = pi.powi(k) * (1.0 - pi).powi(n as i32 - k);
        total += p * ht_oracle(g, v, &w, pi);
    }
    total
}

/// ADE by enumerating every subset of each unit's neighborhood.
pub fn ade_by_neighbor_subsets(g: &ExposureGraph, v: &OutcomeVector, pi: f64) -> f64 {
    let n = g.n();
    let mut acc = 0.0;
    for i in 0..n {
        let d = neighbors(g, i).len();
        assert!(d <= 16);
        let dc = d.max(1) as f64;
        let mut e = 0.0;
        for mask in 0u32..(1 << d) {
            let k = mask.count_ones() as i32;
            let p = pi.powi(k) * (1.0 - pi).powi(d as i32 - k);
            let r = k as f64 / dc;
            e += p * (eval_terms(v.get(i), 1, r) - eval_terms(v.get(i), 0, r));
        }
        acc += e;
    }
    acc / n as f64
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// ADE as an explicit binomial sum over the treated-neighbor count.
pub fn ade_by_binomial_sum(g: &ExposureGraph, v: &OutcomeVector, pi: f64) -> f64 {
    let n = g.n();
    let mut acc = 0.0;
    for i in 0..n {
        let d = g.degree(i);
        let dc = d.max(1) as f64;
        for k in 0..=d {
            let p = binomial(d, k) * pi.powi(k as i32) * (1.0 - pi).powi((d - k) as i32);
            let r = k as f64 / dc;
            acc += p * (eval_terms(v.get(i), 1, r) - eval_terms(v.get(i), 0, r));
        }
    }
    acc / n as f64
}

/// `max_{S,T} |Σ_{S×T} A| / n²` over every pair of subsets.
pub fn cut_norm_brute_force(a: &SquareMatrix) -> f64 {
    let n = a.n();
    assert!(n <= 10);
    let mut best = 0.0f64;
    for s in 0u32..(1 << n) {
        for t in 0u32..(1 << n) {
            let mut sum = 0.0;
            for i in (0..n).filter(|i| s >> i & 1 == 1) {
                for j in (0..n).filter(|j| t >> j & 1 == 1) {
                    sum += a.get(i, j);
                }
            }
            best = best.max(sum.abs());
        }
    }
    best / (n * n) as f64
}

pub fn random_matrix(n: usize, rng: &mut impl Rng) -> SquareMatrix {
    SquareMatrix::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_sign_symmetric(n: usize, rng: &mut impl Rng) -> SquareMatrix {
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

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn sd(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
