//! Bernoulli treatment assignment, exposure fractions, the Horvitz–Thompson
//! estimator, the exact average direct effect and its linearization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Result};
use crate::graphs::{ExposureGraph, Permutation};
use crate::outcomes::OutcomeVector;

fn check_pi(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "treatment probability {pi} is outside (0, 1)"
        )))
    }
}

/// Realized Bernoulli(π) assignment. Also kept bit-packed so treated-neighbor
/// counts are a row popcount.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreatmentVector {
    w: Vec<bool>,
    bits: Vec<u64>,
    pi_bits: u64,
}

impl TreatmentVector {
    pub fn new(w: Vec<bool>, pi: f64) -> Result<Self> {
        check_pi(pi)?;
        let mut bits = vec![0u64; w.len().div_ceil(64)];
        for (i, _) in w.iter().enumerate().filter(|(_, &t)| t) {
            bits[i / 64] |= 1 << (i % 64);
        }
        Ok(Self {
            w,
            bits,
            pi_bits: pi.to_bits(),
        })
    }

    pub fn pi(&self) -> f64 {
        f64::from_bits(self.pi_bits)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    #[inline]
    pub fn treated(&self, i: usize) -> bool {
        self.w[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.w
    }

    pub fn treated_count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn permuted(&self, perm: &Permutation) -> Result<Self> {
        Self::new(perm.apply(&self.w)?, self.pi())
    }

    /// Treated neighbors of `i`.
    #[inline]
    fn treated_neighbors(&self, graph: &ExposureGraph, i: usize) -> usize {
        graph
            .row(i)
            .iter()
            .zip(&self.bits)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }
}

/// `n` independent Bernoulli(π) draws in index order.
pub fn sample_treatments<R: Rng + ?Sized>(
    n: usize,
    pi: f64,
    rng: &mut R,
) -> Result<TreatmentVector> {
    check_pi(pi)?;
    let w = (0..n).map(|_| rng.random_bool(pi)).collect();
    TreatmentVector::new(w, pi)
}

/// `R_i = Σ_{j~i} W_j / d_i`; isolated vertices get 0.
pub fn exposure_fractions(graph: &ExposureGraph, w: &TreatmentVector) -> Result<Vec<f64>> {
    ensure_len(graph.n(), w.len())?;
    Ok((0..graph.n())
        .map(|i| w.treated_neighbors(graph, i) as f64 / graph.clamped_degree(i) as f64)
        .collect())
}

/// `τ̂ = (1/n) Σ (W_i/π − (1−W_i)/(1−π)) f_i(W_i, R_i)`.
pub fn ht_estimate(
    graph: &ExposureGraph,
    outcomes: &OutcomeVector,
    w: &TreatmentVector,
) -> Result<f64> {
    ensure_len(graph.n(), outcomes.len())?;
    ensure_len(graph.n(), w.len())?;
    let n = graph.n();
    if n == 0 {
        return Ok(0.0);
    }
    let pi = w.pi();
    let terms = outcomes
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let r = w.treated_neighbors(graph, i) as f64 / graph.clamped_degree(i) as f64;
            if w.treated(i) {
                f.value(1, r, 0) / pi
            } else {
                -f.value(0, r, 0) / (1.0 - pi)
            }
        })
        .collect();
    Ok(sorted_sum(terms) / n as f64)
}

/// Sums in sorted order, so the result does not depend on unit labels.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// `E[(K/d)^p]` for `K ~ Bin(m, π)`, `p = 0..=4`, via factorial moments.
fn exposure_moments(m: usize, d: usize, pi: f64) -> [f64; 5] {
    let m = m as f64;
    // m^(j) π^j
    let f1 = m * pi;
    let f2 = f1 * (m - 1.0) * pi;
    let f3 = f2 * (m - 2.0) * pi;
    let f4 = f3 * (m - 3.0) * pi;
    // Stirling numbers of the second kind convert factorial to raw moments.
    let raw = [
        1.0,
        f1,
        f2 + f1,
        f3 + 3.0 * f2 + f1,
        f4 + 6.0 * f3 + 7.0 * f2 + f1,
    ];
    let inv = 1.0 / d as f64;
    let mut scale = 1.0;
    let mut out = [0.0; 5];
    for (o, r) in out.iter_mut().zip(raw) {
        *o = r * scale;
        scale *= inv;
    }
    out
}

/// `τ̄ = (1/n) Σ E[f_i(1, R_i) − f_i(0, R_i)]` under Bernoulli(π).
///
/// `R_i` is the treated-neighbor count over `d_i`, so each expectation is a
/// finite binomial sum; for polynomial outcomes it reduces to the first four
/// binomial moments, which is what is evaluated here.
pub fn ade_exact(graph: &ExposureGraph, outcomes: &OutcomeVector, pi: f64) -> Result<f64> {
    check_pi(pi)?;
    ensure_len(graph.n(), outcomes.len())?;
    let n = graph.n();
    if n == 0 {
        return Ok(0.0);
    }
    let terms = outcomes
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mom = exposure_moments(graph.degree(i), graph.clamped_degree(i), pi);
            // f(1, x) - f(0, x) is the w = 1 coefficient row.
            (0..5).map(|p| f.coefficient(1, p) * mom[p]).sum::<f64>()
        })
        .collect();
    Ok(sorted_sum(terms) / n as f64)
}

/// Per-unit weights `c_i` of the linear statistic
/// `(1/n) Σ c_i (W_i − π)` with
/// `c_i = f_i(1,π)/π + f_i(0,π)/(1−π) + Σ_j G_ij/d_j (f_j'(1,π) − f_j'(0,π))`.
pub fn main_term_coefficients(
    graph: &ExposureGraph,
    outcomes: &OutcomeVector,
    pi: f64,
) -> Result<Vec<f64>> {
    check_pi(pi)?;
    ensure_len(graph.n(), outcomes.len())?;
    let spill: Vec<f64> = outcomes
        .iter()
        .enumerate()
        .map(|(j, f)| (f.value(1, pi, 1) - f.value(0, pi, 1)) / graph.clamped_degree(j) as f64)
        .collect();
    Ok(outcomes
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let direct = f.value(1, pi, 0) / pi + f.value(0, pi, 0) / (1.0 - pi);
            direct + graph.neighbors(i).map(|j| spill[j]).sum::<f64>()
        })
        .collect())
}

fn linear_statistic(coefficients: &[f64], w: &TreatmentVector) -> f64 {
    let n = coefficients.len();
    if n == 0 {
        return 0.0;
    }
    let pi = w.pi();
    let acc: f64 = coefficients
        .iter()
        .zip(w.as_slice())
        .map(|(c, &t)| c * (if t { 1.0 } else { 0.0 } - pi))
        .sum();
    acc / n as f64
}

/// The linear approximation of `τ̂ − τ̄`, derivatives taken at `x = π`.
pub fn linearized_main_term(
    graph: &ExposureGraph,
    outcomes: &OutcomeVector,
    w: &TreatmentVector,
) -> Result<f64> {
    ensure_len(graph.n(), w.len())?;
    let coefficients = main_term_coefficients(graph, outcomes, w.pi())?;
    Ok(linear_statistic(&coefficients, w))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub tau_hat: f64,
    pub tau_bar: f64,
    /// `√n (τ̂ − τ̄)`.
    pub stat: f64,
    pub main_term: f64,
    /// `τ̂ − τ̄ − main_term`.
    pub remainder: f64,
}

/// A fixed `(G, v, π)` with the assignment-independent quantities cached.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub graph: ExposureGraph,
    pub outcomes: OutcomeVector,
    pi: f64,
    tau_bar: f64,
    coefficients: Vec<f64>,
}

impl Experiment {
    pub fn new(graph: ExposureGraph, outcomes: OutcomeVector, pi: f64) -> Result<Self> {
        let tau_bar = ade_exact(&graph, &outcomes, pi)?;
        let coefficients = main_term_coefficients(&graph, &outcomes, pi)?;
        Ok(Self {
            graph,
            outcomes,
            pi,
            tau_bar,
            coefficients,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn tau_bar(&self) -> f64 {
        self.tau_bar
    }

    pub fn record(&self, w: &TreatmentVector) -> Result<EstimateRecord> {
        if w.pi() != self.pi {
            return Err(invalid(
                "treatment probability differs from the experiment's",
            ));
        }
        let tau_hat = ht_estimate(&self.graph, &self.outcomes, w)?;
        let main_term = linear_statistic(&self.coefficients, w);
        let err = tau_hat - self.tau_bar;
        Ok(EstimateRecord {
            tau_hat,
            tau_bar: self.tau_bar,
            stat: (self.n() as f64).sqrt() * err,
            main_term,
            remainder: err - main_term,
        })
    }
}

pub fn estimate_record(
    graph: &ExposureGraph,
    outcomes: &OutcomeVector,
    w: &TreatmentVector,
) -> Result<EstimateRecord> {
    Experiment::new(graph.clone(), outcomes.clone(), w.pi())?.record(w)
}
