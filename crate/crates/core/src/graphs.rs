//! Exposure graphs stored as bit-packed adjacency rows.
//!
//! Vertices are zero-based internally. The edge-list text format is one-based
//! with one `i j` pair (`i < j`) per line.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Result};
use crate::kernels::Kernel;
use crate::matrix::SquareMatrix;

const WORD: usize = 64;

#[inline]
fn words_for(n: usize) -> usize {
    n.div_ceil(WORD)
}

/// Simple undirected graph with constant-time edge queries and popcount
/// degree/intersection counts.
#[derive(Clone, PartialEq, Eq)]
pub struct ExposureGraph {
    n: usize,
    words: usize,
    bits: Vec<u64>,
    degrees: Vec<usize>,
}

impl std::fmt::Debug for ExposureGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExposureGraph")
            .field("n", &self.n)
            .field("edges", &self.edge_count())
            .finish()
    }
}

/// Accumulates edges before the degree vector is computed.
pub struct GraphBuilder {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl GraphBuilder {
    pub fn new(n: usize) -> Self {
        let words = words_for(n);
        Self {
            n,
            words,
            bits: vec![0; n * words],
        }
    }

    /// Adds the undirected edge `{i, j}`. Self-loops are ignored.
    #[inline]
    pub fn add_edge(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        self.bits[i * self.words + j / WORD] |= 1 << (j % WORD);
        self.bits[j * self.words + i / WORD] |= 1 << (i % WORD);
    }

    pub fn finish(self) -> ExposureGraph {
        let degrees = self
            .bits
            .chunks(self.words.max(1))
            .take(self.n)
            .map(|row| row.iter().map(|w| w.count_ones() as usize).sum())
            .collect::<Vec<_>>();
        ExposureGraph {
            n: self.n,
            words: self.words,
            bits: self.bits,
            degrees: if self.words == 0 {
                vec![0; self.n]
            } else {
                degrees
            },
        }
    }
}

impl ExposureGraph {
    pub fn empty(n: usize) -> Self {
        GraphBuilder::new(n).finish()
    }

    pub fn complete(n: usize) -> Self {
        let mut b = GraphBuilder::new(n);
        for i in 0..n {
            for j in i + 1..n {
                b.add_edge(i, j);
            }
        }
        b.finish()
    }

    /// Builds from zero-based edges; rejects out-of-range endpoints and loops.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut b = GraphBuilder::new(n);
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(invalid(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(invalid(format!("self-loop at vertex {i}")));
            }
            b.add_edge(i, j);
        }
        Ok(b.finish())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / WORD] >> (j % WORD) & 1 == 1
    }

    /// Bit-packed adjacency row of `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    /// `d_i = max(deg_i, 1)`.
    #[inline]
    pub fn clamped_degree(&self, i: usize) -> usize {
        self.degrees[i].max(1)
    }

    pub fn true_degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn clamped_degrees(&self) -> Vec<usize> {
        self.degrees.iter().map(|&d| d.max(1)).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.degrees.iter().sum::<usize>() / 2
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i).iter().enumerate().flat_map(|(w, &word)| {
            let mut word = word;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(w * WORD + b)
            })
        })
    }

    /// Edges `(i, j)` with `i < j`, lexicographic.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors(i)
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    /// `|N(i) ∩ N(j)|`.
    #[inline]
    pub fn common_neighbors(&self, i: usize, j: usize) -> usize {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// Degrees sorted ascending; a relabeling invariant.
    pub fn sorted_degrees(&self) -> Vec<usize> {
        let mut d = self.degrees.clone();
        d.sort_unstable();
        d
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{} {}", i + 1, j + 1);
        }
        out
    }

    /// Parses the one-based edge-list format. Blank lines and lines starting
    /// with `#` are skipped. Without `n`, the largest index seen is used.
    pub fn parse_edge_list(text: &str, n: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        let mut max_index = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|s| s.parse::<usize>().ok())
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| {
                        invalid(format!(
                            "edge list line {}: expected `i j` with 1-based indices",
                            lineno + 1
                        ))
                    })
            };
            let i = parse(parts.next())?;
            let j = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(invalid(format!(
                    "edge list line {}: trailing fields",
                    lineno + 1
                )));
            }
            if i >= j {
                return Err(invalid(format!(
                    "edge list line {}: need i < j, got {i} {j}",
                    lineno + 1
                )));
            }
            max_index = max_index.max(j);
            edges.push((i - 1, j - 1));
        }
        let n = n.unwrap_or(max_index);
        Self::from_edges(n, edges)
    }
}

/// Bijection on `{0, .., n-1}`. Position `i` of a permuted object holds
/// source element `map[i]`, so `A^φ(i, j) = A(φ(i), φ(j))`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || std::mem::replace(&mut seen[m], true) {
                return Err(invalid("permutation is not a bijection"));
            }
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    pub fn reversal(n: usize) -> Self {
        Self {
            map: (0..n).rev().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[inline]
    pub fn source(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Self { map: inv }
    }

    /// `out[i] = values[φ(i)]`.
    pub fn apply<T: Clone>(&self, values: &[T]) -> Result<Vec<T>> {
        ensure_len(self.map.len(), values.len())?;
        Ok(self.map.iter().map(|&m| values[m].clone()).collect())
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = crate::Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Self::new(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

/// `Hₙ`: edge `{i, j}` (one-based) iff `i ≠ j` and `i + j > n`.
pub fn half_graph(n: usize) -> ExposureGraph {
    let mut b = GraphBuilder::new(n);
    for i in 1..=n {
        for j in (i + 1).max(n + 1 - i)..=n {
            if i + j > n {
                b.add_edge(i - 1, j - 1);
            }
        }
    }
    b.finish()
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("rho = {rho} is outside (0, 1]")))
    }
}

/// Keeps each edge independently with probability `rho`, one draw per edge
/// in lexicographic order.
pub fn sparsify<R: Rng + ?Sized>(
    graph: &ExposureGraph,
    rho: f64,
    rng: &mut R,
) -> Result<ExposureGraph> {
    check_rho(rho)?;
    let mut b = GraphBuilder::new(graph.n());
    for (i, j) in graph.edges() {
        if rng.random::<f64>() < rho {
            b.add_edge(i, j);
        }
    }
    Ok(b.finish())
}

/// `G(n, L, ρ)` given latents: each pair `i < j`, in lexicographic order,
/// consumes one uniform draw and becomes an edge with probability
/// `min(1, ρ L(U_i, U_j))`.
pub fn sample_graphon_graph<R: Rng + ?Sized>(
    n: usize,
    kernel: &Kernel,
    rho: f64,
    latents: &[f64],
    rng: &mut R,
) -> Result<ExposureGraph> {
    check_rho(rho)?;
    ensure_len(n, latents.len())?;
    if let Some(u) = latents.iter().find(|u| !(0.0..=1.0).contains(*u)) {
        return Err(invalid(format!("latent {u} is outside [0, 1]")));
    }
    let mut b = GraphBuilder::new(n);
    for i in 0..n {
        let ui = latents[i];
        for (j, &uj) in latents.iter().enumerate().skip(i + 1) {
            let p = (rho * kernel.value(ui, uj)).min(1.0);
            if rng.random::<f64>() < p {
                b.add_edge(i, j);
            }
        }
    }
    Ok(b.finish())
}

pub fn permute_graph(graph: &ExposureGraph, perm: &Permutation) -> Result<ExposureGraph> {
    ensure_len(graph.n(), perm.len())?;
    let inv = perm.inverse();
    let mut b = GraphBuilder::new(graph.n());
    for (a, c) in graph.edges() {
        b.add_edge(inv.source(a), inv.source(c));
    }
    Ok(b.finish())
}

/// `ρ⁻¹ A` as an `n x n` step kernel.
pub fn graph_to_step_kernel(graph: &ExposureGraph, rho: f64) -> Result<Kernel> {
    if rho.is_nan() || rho <= 0.0 {
        return Err(invalid(format!("rho = {rho} must be positive")));
    }
    Ok(Kernel::StepMatrix(graph_to_matrix(graph, rho)))
}

pub(crate) fn graph_to_matrix(graph: &ExposureGraph, rho: f64) -> SquareMatrix {
    let w = 1.0 / rho;
    SquareMatrix::from_fn(graph.n(), |i, j| if graph.has_edge(i, j) { w } else { 0.0 })
}

pub const DEFAULT_C_BOUND: f64 = 1.0;

/// Degree-moment diagnostics and the linearization remainder scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConditionReport {
    pub min_clamped_degree: usize,
    /// `Σ d_i⁴ / (n⁵ ρ⁴)`.
    pub degree_fourth_moment_ratio: f64,
    /// `min d_i / (n ρ)`.
    pub min_degree_ratio: f64,
    pub sum_d: u64,
    pub sum_d2: u64,
    pub sum_d4: u128,
    /// Minimum true (unclamped) degree.
    pub delta_n: usize,
    /// `Σ_{i,j} |{k ∉ {i,j} : k ~ i, k ~ j}|` over ordered pairs, `i = j` included.
    pub gamma_sum: u64,
    /// `C (1/√(n δ) + √γ / (n δ^{3/2}))`; infinite when `δ = 0`.
    pub remainder_bound: f64,
}

pub fn check_graph_conditions(
    graph: &ExposureGraph,
    rho: f64,
    c_bound: f64,
) -> Result<GraphConditionReport> {
    check_rho(rho)?;
    let n = graph.n();
    let clamped = graph.clamped_degrees();
    let sum_d: u64 = clamped.iter().map(|&d| d as u64).sum();
    let sum_d2: u64 = clamped.iter().map(|&d| (d as u64).pow(2)).sum();
    let sum_d4: u128 = clamped.iter().map(|&d| (d as u128).pow(4)).sum();
    let min_clamped = clamped.iter().copied().min().unwrap_or(0);
    let delta_n = graph.true_degrees().iter().copied().min().unwrap_or(0);

    // Without self-loops k ~ i already excludes k = i, so γ_{i,j} is the
    // common-neighbor count of i and j.
    let mut gamma_sum = 0u64;
    for i in 0..n {
        gamma_sum += graph.common_neighbors(i, i) as u64;
        for j in i + 1..n {
            gamma_sum += 2 * graph.common_neighbors(i, j) as u64;
        }
    }

    let nf = n as f64;
    let remainder_bound = if delta_n == 0 {
        f64::INFINITY
    } else {
        let d = delta_n as f64;
        c_bound * (1.0 / (nf * d).sqrt() + (gamma_sum as f64).sqrt() / (nf * d.powf(1.5)))
    };
    Ok(GraphConditionReport {
        min_clamped_degree: min_clamped,
        degree_fourth_moment_ratio: sum_d4 as f64 / (nf.powi(5) * rho.powi(4)),
        min_degree_ratio: min_clamped as f64 / (nf * rho),
        sum_d,
        sum_d2,
        sum_d4,
        delta_n,
        gamma_sum,
        remainder_bound,
    })
}
