//! Cut norm of step kernels.
//!
//! For an `n x n` step kernel `A` the supremum over measurable rectangles is
//! attained at unions of whole blocks, so
//! `‖A‖_□ = max_{S,T ⊆ [n]} |Σ_{i∈S, j∈T} A_ij| / n²`. For a fixed `S` the
//! best `T` collects the columns whose partial sums share one sign.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graphs::{graph_to_matrix, permute_graph, ExposureGraph, Permutation};
use crate::kernels::{Kernel, DEFAULT_SUBSAMPLES};
use crate::matrix::SquareMatrix;
use crate::rng::{substream, Purpose};

pub const DEFAULT_MAX_EXACT_N: usize = 20;
pub const DEFAULT_RESTARTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutMethodKind {
    Exact,
    Heuristic,
}

/// How to compute a cut norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CutNormMethod {
    Exact {
        #[serde(default = "default_max_n")]
        max_n: usize,
    },
    Heuristic {
        #[serde(default = "default_restarts")]
        restarts: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_max_n() -> usize {
    DEFAULT_MAX_EXACT_N
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

impl CutNormMethod {
    pub fn exact() -> Self {
        CutNormMethod::Exact {
            max_n: DEFAULT_MAX_EXACT_N,
        }
    }

    pub fn heuristic(seed: u64) -> Self {
        CutNormMethod::Heuristic {
            restarts: DEFAULT_RESTARTS,
            seed,
        }
    }

    /// Exact up to the default size limit, heuristic beyond it.
    pub fn auto(n: usize, seed: u64) -> Self {
        if n <= DEFAULT_MAX_EXACT_N {
            Self::exact()
        } else {
            Self::heuristic(seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutNormResult {
    pub value: f64,
    pub method: CutMethodKind,
    /// Zero-based row blocks.
    pub witness_s: Vec<usize>,
    /// Zero-based column blocks.
    pub witness_t: Vec<usize>,
    pub restarts_used: usize,
}

/// `|Σ_{i∈S, j∈T} A_ij| / n²`.
pub fn block_sum_value(matrix: &SquareMatrix, s: &[usize], t: &[usize]) -> f64 {
    let n = matrix.n();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = s
        .iter()
        .map(|&i| t.iter().map(|&j| matrix.get(i, j)).sum::<f64>())
        .sum();
    total.abs() / (n * n) as f64
}

fn column_sums(matrix: &SquareMatrix, rows: &[bool]) -> Vec<f64> {
    let mut col = vec![0.0; matrix.n()];
    for (i, _) in rows.iter().enumerate().filter(|(_, &r)| r) {
        for (c, v) in col.iter_mut().zip(matrix.row(i)) {
            *c += v;
        }
    }
    col
}

fn row_sums(matrix: &SquareMatrix, cols: &[bool]) -> Vec<f64> {
    (0..matrix.n())
        .map(|i| {
            matrix
                .row(i)
                .iter()
                .zip(cols)
                .filter(|(_, &c)| c)
                .map(|(v, _)| v)
                .sum()
        })
        .collect()
}

fn sign_set(sums: &[f64], sign: f64) -> Vec<bool> {
    sums.iter().map(|&v| sign * v > 0.0).collect()
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i)
        .collect()
}

fn finish(
    matrix: &SquareMatrix,
    s: Vec<usize>,
    t: Vec<usize>,
    method: CutMethodKind,
    restarts_used: usize,
) -> CutNormResult {
    CutNormResult {
        value: block_sum_value(matrix, &s, &t),
        method,
        witness_s: s,
        witness_t: t,
        restarts_used,
    }
}

/// Global optimum by enumerating all `2ⁿ` row subsets in Gray-code order.
pub fn cut_norm_exact(matrix: &SquareMatrix, max_n: usize) -> Result<CutNormResult> {
    let n = matrix.n();
    if n > max_n {
        return Err(Error::TooLargeForExact { n, max_n });
    }
    if n > 62 {
        return Err(Error::TooLargeForExact { n, max_n: 62 });
    }
    let mut col = vec![0.0; n];
    let mut mask: u64 = 0;
    let mut best = (0.0f64, 0u64, 1.0f64);
    for g in 1u64..(1u64 << n) {
        let bit = g.trailing_zeros() as usize;
        mask ^= 1 << bit;
        let sign = if mask >> bit & 1 == 1 { 1.0 } else { -1.0 };
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (c, v) in col.iter_mut().zip(matrix.row(bit)) {
            *c += sign * v;
            if *c > 0.0 {
                pos += *c;
            } else {
                neg -= *c;
            }
        }
        if pos > best.0 {
            best = (pos, mask, 1.0);
        }
        if neg > best.0 {
            best = (neg, mask, -1.0);
        }
    }
    let (_, mask, sign) = best;
    let rows: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
    let t = sign_set(&column_sums(matrix, &rows), sign);
    Ok(finish(
        matrix,
        indices(&rows),
        indices(&t),
        CutMethodKind::Exact,
        0,
    ))
}

/// Alternating sign-greedy maximization from random starting sets. Every
/// returned value is attained by its witnesses, so it never exceeds the true
/// cut norm.
pub fn cut_norm_heuristic<R: Rng + ?Sized>(
    matrix: &SquareMatrix,
    restarts: usize,
    rng: &mut R,
) -> Result<CutNormResult> {
    if restarts == 0 {
        return Err(invalid("restarts must be positive"));
    }
    let base: u64 = rng.random();
    let n = matrix.n();
    let runs: Vec<(f64, Vec<bool>, Vec<bool>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut stream = substream(base, r as u64, Purpose::CutRestart);
            let start: Vec<bool> = (0..n).map(|_| stream.random::<bool>()).collect();
            let mut best = (0.0, Vec::new(), Vec::new());
            for sign in [1.0, -1.0] {
                let (v, s, t) = alternate(matrix, start.clone(), sign);
                if v > best.0 {
                    best = (v, s, t);
                }
            }
            best
        })
        .collect();
    let mut best: (f64, Vec<bool>, Vec<bool>) = (0.0, Vec::new(), Vec::new());
    for run in runs {
        if run.0 > best.0 {
            best = run;
        }
    }
    Ok(finish(
        matrix,
        indices(&best.1),
        indices(&best.2),
        CutMethodKind::Heuristic,
        restarts,
    ))
}

fn alternate(matrix: &SquareMatrix, mut rows: Vec<bool>, sign: f64) -> (f64, Vec<bool>, Vec<bool>) {
    // Each half-step cannot decrease sign * block sum, so the loop ends once
    // the value stops rising strictly.
    let mut value = f64::NEG_INFINITY;
    loop {
        let col = column_sums(matrix, &rows);
        let cols = sign_set(&col, sign);
        let current: f64 = col.iter().map(|c| (sign * c).max(0.0)).sum();
        if current <= value {
            return (current, rows, cols);
        }
        value = current;
        let next = sign_set(&row_sums(matrix, &cols), sign);
        if next == rows {
            return (current, rows, cols);
        }
        rows = next;
    }
}

pub fn cut_norm(matrix: &SquareMatrix, method: &CutNormMethod) -> Result<CutNormResult> {
    match *method {
        CutNormMethod::Exact { max_n } => cut_norm_exact(matrix, max_n),
        CutNormMethod::Heuristic { restarts, seed } => cut_norm_heuristic(
            matrix,
            restarts,
            &mut substream(seed, 0, Purpose::CutRestart),
        ),
    }
}

/// `‖ρ⁻¹ G^φ − L‖_□`, with `L` averaged onto the graph's `n`-grid.
pub fn graph_kernel_distance(
    graph: &ExposureGraph,
    rho: f64,
    kernel: &Kernel,
    perm: &Permutation,
    method: &CutNormMethod,
) -> Result<CutNormResult> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(invalid(format!("rho = {rho} is outside (0, 1]")));
    }
    let permuted = permute_graph(graph, perm)?;
    let Kernel::StepMatrix(target) = kernel.block_average(graph.n(), DEFAULT_SUBSAMPLES)? else {
        unreachable!("block_average yields a step kernel")
    };
    let diff = graph_to_matrix(&permuted, rho).sub(&target)?;
    cut_norm(&diff, method)
}

/// The permutation listing vertices by increasing latent; ties keep index
/// order.
pub fn sort_by_latents(latents: &[f64]) -> Permutation {
    let mut idx: Vec<usize> = (0..latents.len()).collect();
    idx.sort_by(|&a, &b| latents[a].total_cmp(&latents[b]));
    Permutation::new(idx).expect("sorted indices form a permutation")
}
