//! The limiting variance `σ² = π(1−π) E[(R + Q)²]`, normality diagnostics and
//! the coupling discrepancies between a fixed experiment and a kernel-sampled
//! one.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cutnorm::{cut_norm, sort_by_latents, CutNormMethod};
use crate::error::{ensure_len, invalid, Result};
use crate::estimation::TreatmentVector;
use crate::graphs::{graph_to_matrix, permute_graph, ExposureGraph, Permutation};
use crate::kernels::Kernel;
use crate::outcomes::{outcome_l1_distance, OutcomeProfile, OutcomeVector};
use crate::rng::{substream, Purpose};

pub const DEFAULT_QUADRATURE_POINTS: usize = 2048;
pub const DEFAULT_HISTOGRAM_BINS: usize = 60;
const MC_CHUNK: usize = 4096;

fn check_pi(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "treatment probability {pi} is outside (0, 1)"
        )))
    }
}

#[inline]
fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

/// `Q(u)` together with the number of quadrature nodes dropped because the
/// marginal vanished there while `L(u, x) > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QTerm {
    pub value: f64,
    pub skipped_nodes: usize,
}

/// `Q(u) = ∫₀¹ L(u, x) (ℓ'(x, 1, π) − ℓ'(x, 0, π)) / ∫₀¹ L(z, x) dz  dx`.
///
/// Midpoint rule on each piece between the kernel's breakpoints, with about
/// `quadrature_points` nodes in total. Pieces where `L(u, ·)` vanishes
/// contribute nothing.
pub fn q_term_detailed(
    kernel: &Kernel,
    profile: &OutcomeProfile,
    pi: f64,
    u: f64,
    quadrature_points: usize,
) -> Result<QTerm> {
    check_pi(pi)?;
    if !(0.0..=1.0).contains(&u) {
        return Err(invalid(format!("u = {u} is outside [0, 1]")));
    }
    if quadrature_points == 0 {
        return Err(invalid("quadrature_points must be positive"));
    }
    Ok(QPlan::new(kernel, profile, pi, quadrature_points).eval(u))
}

pub fn q_term(
    kernel: &Kernel,
    profile: &OutcomeProfile,
    pi: f64,
    u: f64,
    quadrature_points: usize,
) -> Result<f64> {
    q_term_detailed(kernel, profile, pi, u, quadrature_points).map(|q| q.value)
}

/// Quadrature nodes for `Q`. Block kernels have the same breakpoints for every
/// `u`, so their nodes and `gap/marginal` weights are tabulated once.
enum QPlan<'a> {
    Adaptive {
        kernel: &'a Kernel,
        gap: [f64; 5],
        points: usize,
    },
    Fixed {
        kernel: &'a Kernel,
        /// `(x, h, gap(x)/marginal(x))`, the weight `None` where the marginal vanishes.
        nodes: Vec<(f64, f64, Option<f64>)>,
    },
}

impl<'a> QPlan<'a> {
    fn new(kernel: &'a Kernel, profile: &OutcomeProfile, pi: f64, points: usize) -> Self {
        let gap = profile.derivative_gap_poly(pi);
        match kernel {
            Kernel::HalfGraphIndicator => QPlan::Adaptive {
                kernel,
                gap,
                points,
            },
            Kernel::StepMatrix(_) | Kernel::GridSampled(_) => {
                let mut nodes = Vec::new();
                for (a, b) in pieces(kernel, 0.5) {
                    let (n_nodes, h) = piece_nodes(a, b, points);
                    for m in 0..n_nodes {
                        let x = a + (m as f64 + 0.5) * h;
                        let marginal = kernel.marginal_unchecked(x, points);
                        let weight = (marginal > 0.0).then(|| horner(&gap, x) / marginal);
                        nodes.push((x, h, weight));
                    }
                }
                QPlan::Fixed { kernel, nodes }
            }
        }
    }

    fn eval(&self, u: f64) -> QTerm {
        match self {
            QPlan::Fixed { kernel, nodes } => {
                let mut value = 0.0;
                let mut skipped = 0;
                for &(x, h, weight) in nodes {
                    let l = kernel.value(u, x);
                    if l == 0.0 {
                        continue;
                    }
                    match weight {
                        Some(g) => value += l * g * h,
                        None => skipped += 1,
                    }
                }
                QTerm {
                    value,
                    skipped_nodes: skipped,
                }
            }
            QPlan::Adaptive {
                kernel,
                gap,
                points,
            } => {
                let mut value = 0.0;
                let mut skipped = 0;
                for (a, b) in pieces(kernel, u) {
                    if kernel.value(u, 0.5 * (a + b)) == 0.0 {
                        continue;
                    }
                    let (n_nodes, h) = piece_nodes(a, b, *points);
                    let mut acc = 0.0;
                    for m in 0..n_nodes {
                        let x = a + (m as f64 + 0.5) * h;
                        let l = kernel.value(u, x);
                        if l == 0.0 {
                            continue;
                        }
                        let marginal = kernel.marginal_unchecked(x, *points);
                        if marginal <= 0.0 {
                            skipped += 1;
                            continue;
                        }
                        acc += l * horner(gap, x) / marginal;
                    }
                    value += acc * h;
                }
                QTerm {
                    value,
                    skipped_nodes: skipped,
                }
            }
        }
    }
}

fn pieces(kernel: &Kernel, u: f64) -> Vec<(f64, f64)> {
    let mut cuts = vec![0.0];
    cuts.extend(kernel.breakpoints(u));
    cuts.push(1.0);
    cuts.windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|(a, b)| b > a)
        .collect()
}

fn piece_nodes(a: f64, b: f64, points: usize) -> (usize, f64) {
    let nodes = ((points as f64 * (b - a)).round() as usize).max(1);
    (nodes, (b - a) / nodes as f64)
}

/// `R(u) = ℓ(u, 1, π)/π + ℓ(u, 0, π)/(1−π)`.
fn r_term(profile: &OutcomeProfile, pi: f64, u: f64) -> f64 {
    let f = profile.at(u);
    f.value(1, pi, 0) / pi + f.value(0, pi, 0) / (1.0 - pi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub sigma2: f64,
    pub mc_samples: usize,
    pub mc_standard_error: f64,
    pub quadrature_points: usize,
    pub skipped_nodes: usize,
}

/// Monte Carlo over `U ~ U[0, 1]` of `π(1−π)(R + Q)²`, with `Q` by
/// quadrature. Draws come from counter-derived chunks of a base seed taken
/// from `rng`, so the result does not depend on thread count.
pub fn limiting_variance_mc<R: Rng + ?Sized>(
    kernel: &Kernel,
    profile: &OutcomeProfile,
    pi: f64,
    mc_samples: usize,
    quadrature_points: usize,
    rng: &mut R,
) -> Result<VarianceEstimate> {
    check_pi(pi)?;
    if mc_samples < 2 {
        return Err(invalid("mc_samples must be at least 2"));
    }
    if quadrature_points == 0 {
        return Err(invalid("quadrature_points must be positive"));
    }
    let base: u64 = rng.random();
    let plan = QPlan::new(kernel, profile, pi, quadrature_points);
    let chunks = mc_samples.div_ceil(MC_CHUNK);
    let parts: Vec<(Vec<f64>, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream = substream(base, c as u64, Purpose::MonteCarlo);
            let len = MC_CHUNK.min(mc_samples - c * MC_CHUNK);
            let mut skipped = 0;
            let values = (0..len)
                .map(|_| {
                    let u: f64 = stream.random();
                    let q = plan.eval(u);
                    skipped += q.skipped_nodes;
                    let s = r_term(profile, pi, u) + q.value;
                    s * s
                })
                .collect();
            (values, skipped)
        })
        .collect();
    let skipped_nodes = parts.iter().map(|p| p.1).sum();
    let values: Vec<f64> = parts.into_iter().flat_map(|p| p.0).collect();
    let (mean, var) = mean_var(&values);
    let scale = pi * (1.0 - pi);
    Ok(VarianceEstimate {
        sigma2: scale * mean,
        mc_samples,
        mc_standard_error: scale * (var / mc_samples as f64).sqrt(),
        quadrature_points,
        skipped_nodes,
    })
}

/// Deterministic counterpart of [`limiting_variance_mc`]: midpoint rule over
/// `u` with `u_points` nodes.
pub fn limiting_variance_quadrature(
    kernel: &Kernel,
    profile: &OutcomeProfile,
    pi: f64,
    u_points: usize,
    quadrature_points: usize,
) -> Result<f64> {
    check_pi(pi)?;
    if u_points == 0 || quadrature_points == 0 {
        return Err(invalid("quadrature sizes must be positive"));
    }
    let plan = QPlan::new(kernel, profile, pi, quadrature_points);
    let h = 1.0 / u_points as f64;
    let total: f64 = (0..u_points)
        .into_par_iter()
        .map(|m| {
            let u = (m as f64 + 0.5) * h;
            let s = r_term(profile, pi, u) + plan.eval(u).value;
            s * s
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(pi * (1.0 - pi) * total * h)
}

/// `(mean, unbiased variance)`.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, ss / (n - 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub sample_mean: f64,
    pub sample_var: f64,
    /// Squared correlation of sorted standardized samples with standard
    /// normal quantiles at `(i − 0.5)/m`.
    pub qq_r2: f64,
    pub n_samples: usize,
    pub histogram: Vec<HistogramBin>,
}

pub fn normality_report(samples: &[f64], bins: usize) -> Result<NormalityReport> {
    let m = samples.len();
    if m < 10 {
        return Err(invalid(format!(
            "normality report needs at least 10 samples, got {m}"
        )));
    }
    if bins == 0 {
        return Err(invalid("histogram needs at least one bin"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(invalid("samples contain non-finite values"));
    }
    let (mean, var) = mean_var(samples);
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 0.0 {
        return Err(invalid("samples have zero standard deviation"));
    }
    let mut z: Vec<f64> = samples.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let q: Vec<f64> = (0..m)
        .map(|i| normal.inverse_cdf((i as f64 + 0.5) / m as f64))
        .collect();
    let qq_r2 = squared_correlation(&z, &q);

    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in samples {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            left: lo + b as f64 * width,
            right: if b + 1 == bins {
                hi
            } else {
                lo + (b + 1) as f64 * width
            },
            count,
        })
        .collect();
    Ok(NormalityReport {
        sample_mean: mean,
        sample_var: var,
        qq_r2,
        n_samples: m,
        histogram,
    })
}

fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_var(a);
    let (mb, _) = mean_var(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab * sab / (saa * sbb)).clamp(0.0, 1.0)
}

/// The two experiments entering one coupling draw, before alignment.
#[derive(Clone, Copy, Debug)]
pub struct CouplingInputs<'a> {
    pub det_graph: &'a ExposureGraph,
    pub det_outcomes: &'a OutcomeVector,
    /// Aligns the fixed experiment with the limit.
    pub det_perm: &'a Permutation,
    pub sampled_graph: &'a ExposureGraph,
    pub sampled_outcomes: &'a OutcomeVector,
    /// Latents of the sampled experiment; sorting them aligns it.
    pub latents: &'a [f64],
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingDraw {
    pub d1: f64,
    pub d2: f64,
    pub l1_outcome_gap: f64,
    pub l1_derivative_gap: f64,
    /// `ρ⁻¹ ‖G^φ − L^σ‖_□`, when requested.
    pub cut_gap: Option<f64>,
}

/// Evaluates `D₁` and `D₂` for one treatment draw on the aligned pair.
pub fn coupling_discrepancies(
    inputs: &CouplingInputs<'_>,
    w: &TreatmentVector,
    cut_method: Option<&CutNormMethod>,
) -> Result<CouplingDraw> {
    let n = inputs.det_graph.n();
    ensure_len(n, inputs.det_outcomes.len())?;
    ensure_len(n, inputs.sampled_graph.n())?;
    ensure_len(n, inputs.sampled_outcomes.len())?;
    ensure_len(n, inputs.latents.len())?;
    ensure_len(n, w.len())?;
    let pi = w.pi();

    let g = permute_graph(inputs.det_graph, inputs.det_perm)?;
    let v = inputs.det_outcomes.permuted(inputs.det_perm)?;
    let sigma = sort_by_latents(inputs.latents);
    let l_graph = permute_graph(inputs.sampled_graph, &sigma)?;
    let l = inputs.sampled_outcomes.permuted(&sigma)?;

    let spill = |graph: &ExposureGraph, out: &OutcomeVector| -> Vec<f64> {
        out.iter()
            .enumerate()
            .map(|(j, f)| (f.value(1, pi, 1) - f.value(0, pi, 1)) / graph.clamped_degree(j) as f64)
            .collect()
    };
    let spill_g = spill(&g, &v);
    let spill_l = spill(&l_graph, &l);

    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for i in 0..n {
        let centered = if w.treated(i) { 1.0 } else { 0.0 } - pi;
        let (fv, fl) = (v.get(i), l.get(i));
        let direct = (fv.value(1, pi, 0) - fl.value(1, pi, 0)) / pi
            + (fv.value(0, pi, 0) - fl.value(0, pi, 0)) / (1.0 - pi);
        d1 += direct * centered;
        let sg: f64 = g.neighbors(i).map(|j| spill_g[j]).sum();
        let sl: f64 = l_graph.neighbors(i).map(|j| spill_l[j]).sum();
        d2 += (sg - sl) * centered;
    }
    let nf = n.max(1) as f64;

    let max_gap = |k: usize| -> Result<f64> {
        Ok(outcome_l1_distance(&v, &l, 0, pi, k)?.max(outcome_l1_distance(&v, &l, 1, pi, k)?))
    };
    let cut_gap = match cut_method {
        Some(method) => {
            let diff =
                graph_to_matrix(&g, inputs.rho).sub(&graph_to_matrix(&l_graph, inputs.rho))?;
            Some(cut_norm(&diff, method)?.value)
        }
        None => None,
    };
    Ok(CouplingDraw {
        d1: d1 / nf,
        d2: d2 / nf,
        l1_outcome_gap: max_gap(0)?,
        l1_derivative_gap: max_gap(1)?,
        cut_gap,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingDiagnostics {
    pub n: usize,
    pub draws: usize,
    pub d1: f64,
    pub d2: f64,
    pub n_times_var_d1: f64,
    pub n_times_var_d2: f64,
    /// Median over draws of `n D₁²`; robust counterpart of `n · Var̂(D₁)`.
    pub median_n_d1_sq: f64,
    pub median_n_d2_sq: f64,
    pub l1_outcome_gap: f64,
    pub l1_derivative_gap: f64,
    pub cut_gap: Option<f64>,
}

/// Means of the per-draw quantities and `n · Var̂` of `D₁`, `D₂`.
pub fn summarize_coupling(n: usize, draws: &[CouplingDraw]) -> Result<CouplingDiagnostics> {
    if draws.len() < 2 {
        return Err(invalid("coupling summary needs at least two draws"));
    }
    let col = |f: fn(&CouplingDraw) -> f64| -> Vec<f64> { draws.iter().map(f).collect() };
    let (m1, v1) = mean_var(&col(|d| d.d1));
    let (m2, v2) = mean_var(&col(|d| d.d2));
    let cut: Option<Vec<f64>> = draws.iter().map(|d| d.cut_gap).collect();
    Ok(CouplingDiagnostics {
        n,
        draws: draws.len(),
        d1: m1,
        d2: m2,
        n_times_var_d1: n as f64 * v1,
        n_times_var_d2: n as f64 * v2,
        median_n_d1_sq: median(draws.iter().map(|d| n as f64 * d.d1 * d.d1).collect()),
        median_n_d2_sq: median(draws.iter().map(|d| n as f64 * d.d2 * d.d2).collect()),
        l1_outcome_gap: mean_var(&col(|d| d.l1_outcome_gap)).0,
        l1_derivative_gap: mean_var(&col(|d| d.l1_derivative_gap)).0,
        cut_gap: cut.map(|c| mean_var(&c).0),
    })
}

pub fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::half_graph;
    use crate::outcomes::{ProfileTerm, Term};
    use crate::rng::Stream;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn reference() -> OutcomeProfile {
        OutcomeProfile::reference()
    }

    #[test]
    fn q_term_examples() {
        let h = Kernel::HalfGraphIndicator;
        assert_eq!(q_term(&h, &reference(), 0.5, 0.0, 4096).unwrap(), 0.0);
        let q = q_term(&h, &reference(), 0.5, 0.5, 4096).unwrap();
        assert!((q + 4.0 * 0.5f64.ln()).abs() < 1e-3, "{q}");
        let no_w = OutcomeProfile::from_terms(&[
            ProfileTerm {
                coef: 1.0,
                t: 1,
                w: 0,
                x: 2,
            },
            ProfileTerm {
                coef: 2.0,
                t: 0,
                w: 0,
                x: 1,
            },
        ])
        .unwrap();
        for u in [0.0, 0.3, 0.9, 1.0] {
            assert_eq!(q_term(&h, &no_w, 0.5, u, 256).unwrap(), 0.0);
        }
        assert!(q_term(&h, &reference(), 1.0, 0.5, 16).is_err());
        assert!(q_term(&h, &reference(), 0.5, 1.5, 16).is_err());
    }

    #[test]
    fn q_term_matches_closed_form_on_grid() {
        let h = Kernel::HalfGraphIndicator;
        for qp in [64, 512, 2048] {
            for k in 0..10 {
                let u = k as f64 / 10.0;
                let q = q_term(&h, &reference(), 0.5, u, qp).unwrap();
                let exact = -4.0 * (1.0 - u).ln();
                assert!(
                    (q - exact).abs() <= 2.0 / qp as f64 + 1e-9,
                    "qp={qp} u={u} q={q} exact={exact}"
                );
            }
        }
    }

    #[test]
    fn q_term_on_step_kernels() {
        // Constant kernel c: marginal c, so Q = ∫ gap(x) dx = 4 for the reference profile.
        let k = Kernel::constant(0.7).unwrap();
        let q = q_term(&k, &reference(), 0.5, 0.42, 128).unwrap();
        assert!((q - 4.0).abs() < 1e-12);

        // Zero column: node skipped when L(u, x) > 0 is impossible, so nothing counted.
        let z = Kernel::constant(0.0).unwrap();
        let d = q_term_detailed(&z, &reference(), 0.5, 0.3, 64).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.skipped_nodes, 0);
    }

    #[test]
    fn variance_examples() {
        let mut rng = Stream::seed_from_u64(3);
        let zero = limiting_variance_mc(
            &Kernel::HalfGraphIndicator,
            &OutcomeProfile::zero(),
            0.5,
            100,
            64,
            &mut rng,
        )
        .unwrap();
        assert_eq!(zero.sigma2, 0.0);
        assert!(limiting_variance_mc(
            &Kernel::HalfGraphIndicator,
            &reference(),
            0.5,
            1,
            64,
            &mut rng
        )
        .is_err());

        let closed = 2395.0 / 12.0;
        let q = limiting_variance_quadrature(
            &Kernel::HalfGraphIndicator,
            &reference(),
            0.5,
            4096,
            2048,
        )
        .unwrap();
        assert!((q - closed).abs() < 0.05, "{q}");
    }

    #[test]
    fn variance_is_stable_under_quadrature_refinement() {
        let base = 99;
        let a = limiting_variance_mc(
            &Kernel::HalfGraphIndicator,
            &reference(),
            0.5,
            20_000,
            256,
            &mut Stream::seed_from_u64(base),
        )
        .unwrap();
        let b = limiting_variance_mc(
            &Kernel::HalfGraphIndicator,
            &reference(),
            0.5,
            20_000,
            512,
            &mut Stream::seed_from_u64(base),
        )
        .unwrap();
        assert!((a.sigma2 - b.sigma2).abs() < 3.0 * a.mc_standard_error);
        assert!((a.sigma2 - 2395.0 / 12.0).abs() < 4.0 * a.mc_standard_error);
    }

    #[test]
    fn normality_examples() {
        let mut rng = Stream::seed_from_u64(17);
        let normal: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let r = normality_report(&normal, 60).unwrap();
        assert!(r.qq_r2 >= 0.999, "{}", r.qq_r2);
        assert_eq!(r.histogram.iter().map(|b| b.count).sum::<usize>(), 10_000);
        assert_eq!(r.histogram.len(), 60);

        assert!(normality_report(&[2.5; 20], 10).is_err());
        assert!(normality_report(&[1.0, 2.0], 10).is_err());

        let uniform: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let u = normality_report(&uniform, 60).unwrap();
        assert!(u.qq_r2 < r.qq_r2);
    }

    #[test]
    fn qq_r2_is_affine_invariant() {
        let mut rng = Stream::seed_from_u64(5);
        let x: Vec<f64> = (0..500).map(|_| rng.random::<f64>().powi(3)).collect();
        let base = normality_report(&x, 20).unwrap().qq_r2;
        for (a, b) in [(3.0, -7.0), (0.01, 100.0), (-2.0, 1.0)] {
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r = normality_report(&y, 20).unwrap().qq_r2;
            assert!((r - base).abs() < 1e-12, "a={a}: {r} vs {base}");
        }
    }

    fn tv(bits: &[u8], pi: f64) -> TreatmentVector {
        TreatmentVector::new(bits.iter().map(|&b| b == 1).collect(), pi).unwrap()
    }

    #[test]
    fn coupling_with_itself_vanishes() {
        let n = 12;
        let u: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let g = crate::graphs::sample_graphon_graph(
            n,
            &Kernel::HalfGraphIndicator,
            1.0,
            &u,
            &mut Stream::seed_from_u64(0),
        )
        .unwrap();
        let v = reference().sample(&u).unwrap();
        let inputs = CouplingInputs {
            det_graph: &g,
            det_outcomes: &v,
            det_perm: &Permutation::identity(n),
            sampled_graph: &g,
            sampled_outcomes: &v,
            latents: &u,
            rho: 1.0,
        };
        let w = tv(&[1, 0, 0, 1, 1, 0, 1, 0, 1, 1, 0, 0], 0.5);
        let d = coupling_discrepancies(&inputs, &w, Some(&CutNormMethod::exact())).unwrap();
        assert_eq!(
            d,
            CouplingDraw {
                d1: 0.0,
                d2: 0.0,
                l1_outcome_gap: 0.0,
                l1_derivative_gap: 0.0,
                cut_gap: Some(0.0)
            }
        );
    }

    #[test]
    fn coupling_one_edge_difference_by_hand() {
        // Same outcomes f(w, x) = 2wx on both sides; graphs differ in edge {3,4}.
        let f = crate::OutcomeFunction::from_terms(&[Term {
            coef: 2.0,
            w: 1,
            x: 1,
        }])
        .unwrap();
        let v = OutcomeVector::new(vec![f; 4]);
        let g = half_graph(4);
        let l = ExposureGraph::from_edges(4, [(0, 3), (1, 2), (1, 3)]).unwrap();
        let u = [0.1, 0.2, 0.3, 0.4];
        let inputs = CouplingInputs {
            det_graph: &g,
            det_outcomes: &v,
            det_perm: &Permutation::identity(4),
            sampled_graph: &l,
            sampled_outcomes: &v,
            latents: &u,
            rho: 1.0,
        };
        let w = tv(&[1, 0, 1, 1], 0.5);
        let d = coupling_discrepancies(&inputs, &w, Some(&CutNormMethod::exact())).unwrap();
        assert_eq!(d.d1, 0.0);
        // Derivative gap is 2 everywhere. Degrees: G (1,2,2,3), L (1,2,1,2).
        // Row sums Σ_j G_ij 2/d_j minus Σ_j L_ij 2/d_j:
        //   1: 2/3 - 2/2 ; 2: (2/2 + 2/3) - (2/1 + 2/2) ; 3: (2/2 + 2/3) - 2/2 ; 4: (2/1+2/2+2/2) - (2/1+2/2)
        let rows = [2.0 / 3.0 - 1.0, 1.0 + 2.0 / 3.0 - 3.0, 2.0 / 3.0, 1.0];
        let centered = [0.5, -0.5, 0.5, 0.5];
        let expected: f64 = rows.iter().zip(centered).map(|(r, c)| r * c).sum::<f64>() / 4.0;
        assert!((d.d2 - expected).abs() < 1e-15);
        assert!((d.cut_gap.unwrap() - 2.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn d1_has_mean_zero_under_enumeration() {
        let n = 8;
        let g = half_graph(n);
        let v = reference().discretize(n);
        let u: Vec<f64> = (0..n)
            .map(|i| ((i * 5 + 3) % n) as f64 / n as f64 + 0.01)
            .collect();
        let l = crate::graphs::sample_graphon_graph(
            n,
            &Kernel::HalfGraphIndicator,
            1.0,
            &u,
            &mut Stream::seed_from_u64(1),
        )
        .unwrap();
        let lo = reference().sample(&u).unwrap();
        let inputs = CouplingInputs {
            det_graph: &g,
            det_outcomes: &v,
            det_perm: &Permutation::identity(n),
            sampled_graph: &l,
            sampled_outcomes: &lo,
            latents: &u,
            rho: 1.0,
        };
        let pi: f64 = 0.3;
        let mut e1: f64 = 0.0;
        let mut e2: f64 = 0.0;
        for mask in 0u32..(1 << n) {
            let bits: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let k = bits.iter().filter(|&&b| b).count() as i32;
            let p = pi.powi(k) * (1.0 - pi).powi(n as i32 - k);
            let d = coupling_discrepancies(&inputs, &TreatmentVector::new(bits, pi).unwrap(), None)
                .unwrap();
            e1 += p * d.d1;
            e2 += p * d.d2;
        }
        assert!(e1.abs() < 1e-12 && e2.abs() < 1e-12, "{e1} {e2}");
    }

    #[test]
    fn summary_needs_two_draws() {
        let d = CouplingDraw {
            d1: 1.0,
            d2: 0.0,
            l1_outcome_gap: 0.0,
            l1_derivative_gap: 0.0,
            cut_gap: None,
        };
        assert!(summarize_coupling(4, &[d]).is_err());
        let s = summarize_coupling(4, &[d, CouplingDraw { d1: 3.0, ..d }]).unwrap();
        assert_eq!(s.d1, 2.0);
        assert_eq!(s.n_times_var_d1, 8.0);
        assert_eq!(s.cut_gap, None);
        assert_eq!(s.median_n_d1_sq, 20.0);
    }

    #[test]
    fn tabulated_plan_agrees_with_adaptive() {
        let grid = Kernel::sample_grid(256, |x, y| if x + y > 1.0 { 1.0 } else { 0.0 }).unwrap();
        for u in [0.1, 0.37, 0.8] {
            let a = q_term(&grid, &reference(), 0.5, u, 1024).unwrap();
            let b = q_term(&Kernel::HalfGraphIndicator, &reference(), 0.5, u, 1024).unwrap();
            assert!((a - b).abs() < 0.05, "u={u}: {a} vs {b}");
        }
    }
}
