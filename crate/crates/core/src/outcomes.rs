//! Polynomial potential-outcome functions `f(w, x)` and outcome profiles
//! `t ↦ ℓ(t)`.
//!
//! Both are stored as dense coefficient tables: degree at most 4 in `t` and
//! `x`, at most 1 in `w`. Derivatives are always taken in the exposure
//! argument `x`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Result};
use crate::graphs::Permutation;

pub const MAX_POWER: usize = 4;
const P: usize = MAX_POWER + 1;

/// `p (p-1) ... (p-k+1)`.
#[inline]
fn falling(p: usize, k: usize) -> f64 {
    if k > p {
        return 0.0;
    }
    ((p - k + 1)..=p).product::<usize>() as f64
}

fn check_w(w: u8) -> Result<()> {
    if w <= 1 {
        Ok(())
    } else {
        Err(invalid(format!("treatment value {w} is not 0 or 1")))
    }
}

fn check_order(k: usize) -> Result<()> {
    if k <= 3 {
        Ok(())
    } else {
        Err(invalid(format!("derivative order {k} exceeds 3")))
    }
}

/// One monomial `coef · w^w · x^x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    #[serde(default)]
    pub w: u8,
    #[serde(default)]
    pub x: u8,
}

/// One monomial `coef · t^t · w^w · x^x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileTerm {
    pub coef: f64,
    #[serde(default)]
    pub t: u8,
    #[serde(default)]
    pub w: u8,
    #[serde(default)]
    pub x: u8,
}

/// A potential-outcome function `f: {0,1} × [0,1] → ℝ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Term>", into = "Vec<Term>")]
pub struct OutcomeFunction {
    // coeffs[w_power][x_power]
    coeffs: [[f64; P]; 2],
}

impl OutcomeFunction {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: &[Term]) -> Result<Self> {
        let mut coeffs = [[0.0; P]; 2];
        for t in terms {
            if t.w > 1 || t.x as usize > MAX_POWER {
                return Err(invalid(format!(
                    "term powers (w={}, x={}) exceed (1, {MAX_POWER})",
                    t.w, t.x
                )));
            }
            if !t.coef.is_finite() {
                return Err(invalid("term coefficient is not finite"));
            }
            coeffs[t.w as usize][t.x as usize] += t.coef;
        }
        Ok(Self { coeffs })
    }

    /// Nonzero monomials ordered by `(w, x)`.
    pub fn terms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        for w in 0..2 {
            for x in 0..P {
                let coef = self.coeffs[w][x];
                if coef != 0.0 {
                    out.push(Term {
                        coef,
                        w: w as u8,
                        x: x as u8,
                    });
                }
            }
        }
        out
    }

    pub fn coefficient(&self, w_power: usize, x_power: usize) -> f64 {
        self.coeffs[w_power][x_power]
    }

    /// `∂ₓᵏ f(w, x)` without domain checks.
    #[inline]
    pub fn value(&self, w: u8, x: f64, k: usize) -> f64 {
        let mut acc = 0.0;
        let mut xp = 1.0;
        for p in k..P {
            let c = if w == 1 {
                self.coeffs[0][p] + self.coeffs[1][p]
            } else {
                self.coeffs[0][p]
            };
            acc += c * falling(p, k) * xp;
            xp *= x;
        }
        acc
    }

    pub fn eval(&self, w: u8, x: f64, derivative_order: usize) -> Result<f64> {
        check_w(w)?;
        check_order(derivative_order)?;
        if !(0.0..=1.0).contains(&x) {
            return Err(invalid(format!("exposure {x} is outside [0, 1]")));
        }
        Ok(self.value(w, x, derivative_order))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut coeffs = self.coeffs;
        coeffs.iter_mut().flatten().for_each(|c| *c *= factor);
        Self { coeffs }
    }

    /// Upper bound on `|∂ₓ^{k} f|` over `[0, 1]` from absolute coefficients.
    fn coefficient_bound(&self, k: usize) -> f64 {
        (0..2)
            .flat_map(|w| (k..P).map(move |p| (w, p)))
            .map(|(w, p)| self.coeffs[w][p].abs() * falling(p, k))
            .sum()
    }

    /// Grid maximum of `|∂ₓᵏ f(w, x)|` over `k ≤ 3`, `w ∈ {0, 1}`, padded by
    /// half the grid spacing times a bound on the next derivative.
    pub fn class_f_bound(&self, grid_points: usize) -> Result<f64> {
        if grid_points < 2 {
            return Err(invalid("grid_points must be at least 2"));
        }
        let h = 1.0 / (grid_points - 1) as f64;
        let mut bound = 0.0f64;
        for k in 0..=3 {
            let mut m = 0.0f64;
            for w in 0..2u8 {
                for g in 0..grid_points {
                    m = m.max(self.value(w, g as f64 * h, k).abs());
                }
            }
            bound = bound.max(m + 0.5 * h * self.coefficient_bound(k + 1));
        }
        Ok(bound)
    }
}

impl TryFrom<Vec<Term>> for OutcomeFunction {
    type Error = crate::Error;

    fn try_from(terms: Vec<Term>) -> Result<Self> {
        Self::from_terms(&terms)
    }
}

impl From<OutcomeFunction> for Vec<Term> {
    fn from(f: OutcomeFunction) -> Self {
        f.terms()
    }
}

/// A measurable map `ℓ: [0, 1] → F`, polynomial in the latent type `t`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRepr", into = "Vec<ProfileTerm>")]
pub struct OutcomeProfile {
    // coeffs[t_power][w_power][x_power]
    coeffs: [[[f64; P]; 2]; P],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProfileRepr {
    Preset(String),
    Terms(Vec<ProfileTerm>),
}

impl TryFrom<ProfileRepr> for OutcomeProfile {
    type Error = crate::Error;

    fn try_from(repr: ProfileRepr) -> Result<Self> {
        match repr {
            ProfileRepr::Preset(name) => Self::preset(&name),
            ProfileRepr::Terms(terms) => Self::from_terms(&terms),
        }
    }
}

impl From<OutcomeProfile> for Vec<ProfileTerm> {
    fn from(p: OutcomeProfile) -> Self {
        p.terms()
    }
}

impl OutcomeProfile {
    pub const REFERENCE_PRESET: &'static str = "paper_sec4";

    pub fn from_terms(terms: &[ProfileTerm]) -> Result<Self> {
        let mut coeffs = [[[0.0; P]; 2]; P];
        for t in terms {
            if t.t as usize > MAX_POWER || t.w > 1 || t.x as usize > MAX_POWER {
                return Err(invalid(format!(
                    "profile term powers (t={}, w={}, x={}) exceed ({MAX_POWER}, 1, {MAX_POWER})",
                    t.t, t.w, t.x
                )));
            }
            if !t.coef.is_finite() {
                return Err(invalid("profile term coefficient is not finite"));
            }
            coeffs[t.t as usize][t.w as usize][t.x as usize] += t.coef;
        }
        Ok(Self { coeffs })
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            Self::REFERENCE_PRESET => Ok(Self::reference()),
            other => Err(invalid(format!("unknown outcome profile preset `{other}`"))),
        }
    }

    /// `ℓ(t, w, x) = t + (1 + 4t) w + (2 + 2t) x + 5x² + 4wx`.
    pub fn reference() -> Self {
        let term = |coef, t, w, x| ProfileTerm { coef, t, w, x };
        Self::from_terms(&[
            term(1.0, 1, 0, 0),
            term(1.0, 0, 1, 0),
            term(4.0, 1, 1, 0),
            term(2.0, 0, 0, 1),
            term(2.0, 1, 0, 1),
            term(5.0, 0, 0, 2),
            term(4.0, 0, 1, 1),
        ])
        .expect("preset terms are valid")
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Profile whose every type has the same outcome function.
    pub fn constant(f: &OutcomeFunction) -> Self {
        let mut coeffs = [[[0.0; P]; 2]; P];
        coeffs[0] = f.coeffs;
        Self { coeffs }
    }

    pub fn terms(&self) -> Vec<ProfileTerm> {
        let mut out = Vec::new();
        for t in 0..P {
            for w in 0..2 {
                for x in 0..P {
                    let coef = self.coeffs[t][w][x];
                    if coef != 0.0 {
                        out.push(ProfileTerm {
                            coef,
                            t: t as u8,
                            w: w as u8,
                            x: x as u8,
                        });
                    }
                }
            }
        }
        out
    }

    /// `ℓ(t)`, with coefficients collected by `(w, x)` powers.
    pub fn at(&self, t: f64) -> OutcomeFunction {
        let mut coeffs = [[0.0; P]; 2];
        for (w, row) in coeffs.iter_mut().enumerate() {
            for (x, out) in row.iter_mut().enumerate() {
                // Horner in t.
                *out = (0..P).rev().fold(0.0, |c, a| c * t + self.coeffs[a][w][x]);
            }
        }
        OutcomeFunction { coeffs }
    }

    pub fn profile_at(&self, t: f64) -> Result<OutcomeFunction> {
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid(format!("type t = {t} is outside [0, 1]")));
        }
        Ok(self.at(t))
    }

    /// `∂ₓℓ(t, 1, π) − ∂ₓℓ(t, 0, π)`.
    pub fn derivative_gap(&self, t: f64, pi: f64) -> f64 {
        let f = self.at(t);
        f.value(1, pi, 1) - f.value(0, pi, 1)
    }

    /// Coefficients in `t` (ascending powers) of `t ↦ ∂ₓℓ(t, 1, π) − ∂ₓℓ(t, 0, π)`.
    pub fn derivative_gap_poly(&self, pi: f64) -> [f64; P] {
        let mut out = [0.0; P];
        for (a, o) in out.iter_mut().enumerate() {
            let mut pp = 1.0;
            for x in 1..P {
                *o += self.coeffs[a][1][x] * x as f64 * pp;
                pp *= pi;
            }
        }
        out
    }

    /// `ℓ(i/n)` for `i = 1..=n`.
    pub fn discretize(&self, n: usize) -> OutcomeVector {
        OutcomeVector::new((1..=n).map(|i| self.at(i as f64 / n as f64)).collect())
    }

    /// `(ℓ(U_1), …, ℓ(U_n))`.
    pub fn sample(&self, latents: &[f64]) -> Result<OutcomeVector> {
        latents
            .iter()
            .map(|&u| self.profile_at(u))
            .collect::<Result<Vec<_>>>()
            .map(OutcomeVector::new)
    }

    /// Like [`OutcomeFunction::class_f_bound`], maximized over a `t`-grid too.
    pub fn class_f_bound(&self, grid_points: usize) -> Result<f64> {
        if grid_points < 2 {
            return Err(invalid("grid_points must be at least 2"));
        }
        let h = 1.0 / (grid_points - 1) as f64;
        // Bounds on |∂ₓ^{k+1}| and |∂_t ∂ₓ^k| over the whole cube.
        let dx_bound = |k: usize| -> f64 {
            let mut s = 0.0;
            for a in 0..P {
                for w in 0..2 {
                    for x in k + 1..P {
                        s += self.coeffs[a][w][x].abs() * falling(x, k + 1);
                    }
                }
            }
            s
        };
        let dt_bound = |k: usize| -> f64 {
            let mut s = 0.0;
            for a in 1..P {
                for w in 0..2 {
                    for x in k..P {
                        s += self.coeffs[a][w][x].abs() * a as f64 * falling(x, k);
                    }
                }
            }
            s
        };
        let fs: Vec<OutcomeFunction> = (0..grid_points).map(|g| self.at(g as f64 * h)).collect();
        let mut bound = 0.0f64;
        for k in 0..=3 {
            let mut m = 0.0f64;
            for f in &fs {
                for w in 0..2u8 {
                    for g in 0..grid_points {
                        m = m.max(f.value(w, g as f64 * h, k).abs());
                    }
                }
            }
            bound = bound.max(m + 0.5 * h * (dx_bound(k) + dt_bound(k)));
        }
        Ok(bound)
    }
}

/// The map `i ↦ f_i` for one experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeVector {
    functions: Vec<OutcomeFunction>,
}

impl OutcomeVector {
    pub fn new(functions: Vec<OutcomeFunction>) -> Self {
        Self { functions }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn get(&self, i: usize) -> &OutcomeFunction {
        &self.functions[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, OutcomeFunction> {
        self.functions.iter()
    }

    pub fn as_slice(&self) -> &[OutcomeFunction] {
        &self.functions
    }

    pub fn permuted(&self, perm: &Permutation) -> Result<Self> {
        perm.apply(&self.functions).map(Self::new)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.functions.iter().map(|f| f.scaled(factor)).collect())
    }
}

impl FromIterator<OutcomeFunction> for OutcomeVector {
    fn from_iter<I: IntoIterator<Item = OutcomeFunction>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// `(1/n) Σᵢ |∂ₓᵏ aᵢ(w, π) − ∂ₓᵏ bᵢ(w, π)|`: the L¹ norm of the step-function
/// embedding of the difference.
pub fn outcome_l1_distance(
    a: &OutcomeVector,
    b: &OutcomeVector,
    w: u8,
    pi: f64,
    derivative_order: usize,
) -> Result<f64> {
    ensure_len(a.len(), b.len())?;
    check_w(w)?;
    if derivative_order > 1 {
        return Err(invalid("L1 distance supports derivative orders 0 and 1"));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(f, g)| (f.value(w, pi, derivative_order) - g.value(w, pi, derivative_order)).abs())
        .sum();
    Ok(total / a.len() as f64)
}
