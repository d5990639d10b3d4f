//! Limit kernels on the unit square, their marginals, condition checks and
//! block averages on an `n`-grid.
//!
//! Step kernels use an equal `k`-grid partition of `[0, 1]`; a point lying on
//! a grid line belongs to the lower-index block.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix::SquareMatrix;

pub const DEFAULT_MARGINAL_POINTS: usize = 2048;
pub const DEFAULT_SUBSAMPLES: usize = 64;

/// A symmetric, nonnegative, bounded function on `[0, 1]^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub enum Kernel {
    /// `L(x, y) = 1{x + y > 1}`.
    HalfGraphIndicator,
    StepMatrix(SquareMatrix),
    /// A kernel tabulated on an `m x m` grid, evaluated as a step kernel.
    /// Marginals go through midpoint quadrature rather than a closed form.
    GridSampled(SquareMatrix),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum KernelRepr {
    HalfGraph,
    Step { values: SquareMatrix },
    GridSampled { values: SquareMatrix },
}

impl TryFrom<KernelRepr> for Kernel {
    type Error = crate::Error;

    fn try_from(repr: KernelRepr) -> Result<Self> {
        match repr {
            KernelRepr::HalfGraph => Ok(Kernel::HalfGraphIndicator),
            KernelRepr::Step { values } => Kernel::step(values),
            KernelRepr::GridSampled { values } => Kernel::grid_sampled(values),
        }
    }
}

impl From<Kernel> for KernelRepr {
    fn from(k: Kernel) -> Self {
        match k {
            Kernel::HalfGraphIndicator => KernelRepr::HalfGraph,
            Kernel::StepMatrix(values) => KernelRepr::Step { values },
            Kernel::GridSampled(values) => KernelRepr::GridSampled { values },
        }
    }
}

fn validate_step(values: &SquareMatrix) -> Result<()> {
    if values.n() == 0 {
        return Err(invalid("step kernel needs at least one block"));
    }
    if let Some(v) = values
        .as_slice()
        .iter()
        .find(|v| !v.is_finite() || **v < 0.0)
    {
        return Err(invalid(format!(
            "step kernel entries must be finite and nonnegative, found {v}"
        )));
    }
    if !values.is_symmetric() {
        return Err(invalid("step kernel matrix must be symmetric"));
    }
    Ok(())
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {v} is outside [0, 1]")))
    }
}

/// Zero-based block containing `x` in an equal `k`-grid; grid lines go to the
/// lower block.
#[inline]
pub(crate) fn block_index(x: f64, k: usize) -> usize {
    let c = (x * k as f64).ceil() as usize;
    c.clamp(1, k) - 1
}

impl Kernel {
    pub fn step(values: SquareMatrix) -> Result<Self> {
        validate_step(&values)?;
        Ok(Kernel::StepMatrix(values))
    }

    pub fn grid_sampled(values: SquareMatrix) -> Result<Self> {
        validate_step(&values)?;
        Ok(Kernel::GridSampled(values))
    }

    /// Tabulates `f` at the midpoints of an `m x m` grid. `f` is symmetrized.
    pub fn sample_grid(m: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mid = |i: usize| (i as f64 + 0.5) / m as f64;
        let values = SquareMatrix::from_fn(m, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            f(mid(a), mid(b))
        });
        Self::grid_sampled(values)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::step(SquareMatrix::from_fn(1, |_, _| value))
    }

    /// `L(x, y)`, assuming both coordinates are already in `[0, 1]`.
    #[inline]
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            Kernel::HalfGraphIndicator => {
                if x + y > 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::StepMatrix(m) | Kernel::GridSampled(m) => {
                let k = m.n();
                m.get(block_index(x, k), block_index(y, k))
            }
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        check_unit("x", x)?;
        check_unit("y", y)?;
        Ok(self.value(x, y))
    }

    /// `∫₀¹ L(x, y) dx`.
    pub fn marginal(&self, y: f64, quadrature_points: usize) -> Result<f64> {
        check_unit("y", y)?;
        if quadrature_points == 0 {
            return Err(invalid("quadrature_points must be positive"));
        }
        Ok(self.marginal_unchecked(y, quadrature_points))
    }

    pub(crate) fn marginal_unchecked(&self, y: f64, quadrature_points: usize) -> f64 {
        match self {
            Kernel::HalfGraphIndicator => y,
            Kernel::StepMatrix(m) => {
                let k = m.n();
                let col = block_index(y, k);
                (0..k).map(|i| m.get(i, col)).sum::<f64>() / k as f64
            }
            Kernel::GridSampled(_) => midpoint_marginal(self, y, quadrature_points),
        }
    }

    /// Whether the kernel only takes the values 0 and 1.
    pub fn is_zero_one(&self) -> bool {
        match self {
            Kernel::HalfGraphIndicator => true,
            Kernel::StepMatrix(m) | Kernel::GridSampled(m) => {
                m.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
            }
        }
    }

    /// Points in `(0, 1)` where `x ↦ L(u, x)` or the marginal can jump.
    pub(crate) fn breakpoints(&self, u: f64) -> Vec<f64> {
        match self {
            Kernel::HalfGraphIndicator => {
                let b = 1.0 - u;
                if b > 0.0 && b < 1.0 {
                    vec![b]
                } else {
                    Vec::new()
                }
            }
            Kernel::StepMatrix(m) | Kernel::GridSampled(m) => {
                let k = m.n();
                (1..k).map(|i| i as f64 / k as f64).collect()
            }
        }
    }

    pub fn check_conditions(&self, grid_points: usize) -> Result<KernelConditionReport> {
        if grid_points < 2 {
            return Err(invalid("grid_points must be at least 2"));
        }
        let g = grid_points;
        let mid = |i: usize| (i as f64 + 0.5) / g as f64;
        let mut fourth = 0.0;
        let mut min_marginal = f64::INFINITY;
        for i in 0..g {
            let x = mid(i);
            let mut clipped = 0.0;
            for j in 0..g {
                let v = self.value(x, mid(j));
                fourth += v.powi(4);
                clipped += v.min(1.0);
            }
            min_marginal = min_marginal.min(clipped / g as f64);
        }
        let l4_norm = (fourth / (g * g) as f64).powf(0.25);
        Ok(KernelConditionReport {
            l4_norm,
            min_clipped_marginal: min_marginal,
            finite_l4_norm: l4_norm.is_finite(),
            marginal_bounded_below: min_marginal > 0.0,
            c_witness: min_marginal,
        })
    }

    /// Average of the kernel over each cell of the `n x n` grid.
    pub fn block_average(&self, n: usize, subsamples_per_block: usize) -> Result<Kernel> {
        if n == 0 {
            return Err(invalid("block_average needs n >= 1"));
        }
        if subsamples_per_block == 0 {
            return Err(invalid("subsamples_per_block must be positive"));
        }
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = self.cell_average(n, i, j, subsamples_per_block);
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        Ok(Kernel::StepMatrix(out))
    }

    fn cell_average(&self, n: usize, i: usize, j: usize, s: usize) -> f64 {
        match self {
            Kernel::HalfGraphIndicator => {
                // Cell (i, j) rescaled to the unit square: x + y > 1 becomes
                // u + v > n + 2 - i - j with one-based indices.
                let c = n as f64 - (i + j) as f64;
                if c <= 0.0 {
                    1.0
                } else if c <= 1.0 {
                    1.0 - c * c / 2.0
                } else if c < 2.0 {
                    (2.0 - c) * (2.0 - c) / 2.0
                } else {
                    0.0
                }
            }
            Kernel::StepMatrix(m) if n.is_multiple_of(m.n()) => {
                let k = m.n();
                m.get(i * k / n, j * k / n)
            }
            Kernel::StepMatrix(m) if m.n().is_multiple_of(n) => {
                let r = m.n() / n;
                let mut acc = 0.0;
                for a in i * r..(i + 1) * r {
                    for b in j * r..(j + 1) * r {
                        acc += m.get(a, b);
                    }
                }
                acc / (r * r) as f64
            }
            _ => {
                let sub =
                    |cell: usize, a: usize| (cell as f64 + (a as f64 + 0.5) / s as f64) / n as f64;
                let mut acc = 0.0;
                for a in 0..s {
                    let x = sub(i, a);
                    for b in 0..s {
                        acc += self.value(x, sub(j, b));
                    }
                }
                acc / (s * s) as f64
            }
        }
    }
}

fn midpoint_marginal(kernel: &Kernel, y: f64, points: usize) -> f64 {
    let h = 1.0 / points as f64;
    (0..points)
        .map(|m| kernel.value((m as f64 + 0.5) * h, y))
        .sum::<f64>()
        * h
}

/// Edge-density normalization `ρₙ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScaleSequence {
    Dense,
    /// `ρₙ = n^(-exponent)`.
    PowerLaw {
        exponent: f64,
    },
}

impl ScaleSequence {
    pub fn rho(&self, n: usize) -> f64 {
        match *self {
            ScaleSequence::Dense => 1.0,
            ScaleSequence::PowerLaw { exponent } => (n.max(1) as f64).powf(-exponent),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, ScaleSequence::Dense)
    }

    /// Dense, or a power law with exponent in `(0, 1)`: `ρₙ → 0`, `nρₙ → ∞`
    /// and `log ρₙ / log n → -exponent > -1`.
    pub fn satisfies_scale_conditions(&self) -> bool {
        match *self {
            ScaleSequence::Dense => true,
            ScaleSequence::PowerLaw { exponent } => exponent > 0.0 && exponent < 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConditionReport {
    pub l4_norm: f64,
    pub min_clipped_marginal: f64,
    pub finite_l4_norm: bool,
    pub marginal_bounded_below: bool,
    pub c_witness: f64,
}
