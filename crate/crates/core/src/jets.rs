//! Derivative stacks of scalar functions up to fourth order.
//!
//! The filter and the equivalence transform are built from `f`, `g`, `f/g`
//! and their derivatives at a single point. A [`Jet4`] carries the value of a
//! function together with its first four derivatives; arithmetic on jets
//! applies the Leibniz and chain rules exactly, so composite expressions can
//! be differentiated in forward mode without finite differences.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Default bound below which a denominator is treated as zero.
pub const SINGULARITY_THRESHOLD: f64 = 1e-12;

/// Value and derivatives of orders 1 to 4 at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet4 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
}

const BINOM4: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

impl Jet4 {
    pub const fn new(value: f64, d1: f64, d2: f64, d3: f64, d4: f64) -> Self {
        Self { value, d1, d2, d3, d4 }
    }

    pub const fn constant(c: f64) -> Self {
        Self::new(c, 0.0, 0.0, 0.0, 0.0)
    }

    /// The identity function seeded at `x`.
    pub const fn variable(x: f64) -> Self {
        Self::new(x, 1.0, 0.0, 0.0, 0.0)
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.value, self.d1, self.d2, self.d3, self.d4]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn scale(self, c: f64) -> Self {
        Self::from_array(self.to_array().map(|v| c * v))
    }

    /// Derivative of order `k` (0 is the value).
    pub fn derivative(&self, k: usize) -> f64 {
        self.to_array()[k]
    }

    /// `outer ∘ self`, where `outer` holds the value and first four
    /// derivatives of the outer function evaluated at `self.value`
    /// (Faà di Bruno up to order 4).
    pub fn compose(self, outer: [f64; 5]) -> Self {
        let [f0, f1, f2, f3, f4] = outer;
        let (u1, u2, u3, u4) = (self.d1, self.d2, self.d3, self.d4);
        Self::new(
            f0,
            f1 * u1,
            f2 * u1 * u1 + f1 * u2,
            f3 * u1 * u1 * u1 + 3.0 * f2 * u1 * u2 + f1 * u3,
            f4 * u1.powi(4)
                + 6.0 * f3 * u1 * u1 * u2
                + f2 * (3.0 * u2 * u2 + 4.0 * u1 * u3)
                + f1 * u4,
        )
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.compose([e; 5])
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.compose([s, c, -s, -c, s])
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.compose([c, -s, -c, s, c])
    }

    pub fn powi(self, n: i32) -> Self {
        let u = self.value;
        let nf = f64::from(n);
        let p = |k: i32| if n - k < 0 && u == 0.0 { f64::NAN } else { u.powi(n - k) };
        self.compose([
            p(0),
            nf * p(1),
            nf * (nf - 1.0) * p(2),
            nf * (nf - 1.0) * (nf - 2.0) * p(3),
            nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0) * p(4),
        ])
    }

    /// Checked quotient; see [`ratio_jet`].
    pub fn checked_div(self, rhs: Jet4) -> Result<Self> {
        ratio_jet(self, rhs)
    }
}

impl Add for Jet4 {
    type Output = Jet4;
    fn add(self, rhs: Jet4) -> Jet4 {
        let (a, b) = (self.to_array(), rhs.to_array());
        Jet4::from_array(std::array::from_fn(|k| a[k] + b[k]))
    }
}

impl Sub for Jet4 {
    type Output = Jet4;
    fn sub(self, rhs: Jet4) -> Jet4 {
        let (a, b) = (self.to_array(), rhs.to_array());
        Jet4::from_array(std::array::from_fn(|k| a[k] - b[k]))
    }
}

impl Neg for Jet4 {
    type Output = Jet4;
    fn neg(self) -> Jet4 {
        self.scale(-1.0)
    }
}

impl Mul for Jet4 {
    type Output = Jet4;
    /// Leibniz rule.
    fn mul(self, rhs: Jet4) -> Jet4 {
        let (a, b) = (self.to_array(), rhs.to_array());
        Jet4::from_array(std::array::from_fn(|n| {
            (0..=n).map(|k| BINOM4[n][k] * a[k] * b[n - k]).sum()
        }))
    }
}

impl Mul<f64> for Jet4 {
    type Output = Jet4;
    fn mul(self, c: f64) -> Jet4 {
        self.scale(c)
    }
}

impl Add<f64> for Jet4 {
    type Output = Jet4;
    fn add(self, c: f64) -> Jet4 {
        Jet4 { value: self.value + c, ..self }
    }
}

/// Jet of `f/g` by the quotient rule, with the default singularity threshold.
pub fn ratio_jet(fj: Jet4, gj: Jet4) -> Result<Jet4> {
    ratio_jet_with_threshold(fj, gj, SINGULARITY_THRESHOLD)
}

/// Jet of `f/g`. Solves `f⁽ⁿ⁾ = Σₖ C(n,k) q⁽ᵏ⁾ g⁽ⁿ⁻ᵏ⁾` for `q⁽ⁿ⁾` order by order.
pub fn ratio_jet_with_threshold(fj: Jet4, gj: Jet4, threshold: f64) -> Result<Jet4> {
    let g0 = gj.value;
    if !(g0.abs() >= threshold) {
        return Err(Error::SingularNoiseCoefficient {
            x: f64::NAN,
            g_abs: g0.abs(),
            threshold,
        });
    }
    let f = fj.to_array();
    let g = gj.to_array();
    let mut q = [0.0; 5];
    for n in 0..5 {
        let mut acc = f[n];
        for k in 0..n {
            acc -= BINOM4[n][k] * q[k] * g[n - k];
        }
        q[n] = acc / g0;
    }
    Ok(Jet4::from_array(q))
}

/// A scalar function that can report its value and first four derivatives.
pub trait SmoothFn: Send + Sync {
    fn jet(&self, x: f64) -> Jet4;

    fn value(&self, x: f64) -> f64 {
        self.jet(x).value
    }

    /// Value and first derivative.
    fn value_d1(&self, x: f64) -> (f64, f64) {
        let j = self.jet(x);
        (j.value, j.d1)
    }
}

impl<T: SmoothFn + ?Sized> SmoothFn for Arc<T> {
    fn jet(&self, x: f64) -> Jet4 {
        (**self).jet(x)
    }
    fn value(&self, x: f64) -> f64 {
        (**self).value(x)
    }
    fn value_d1(&self, x: f64) -> (f64, f64) {
        (**self).value_d1(x)
    }
}

impl<T: SmoothFn + ?Sized> SmoothFn for &T {
    fn jet(&self, x: f64) -> Jet4 {
        (**self).jet(x)
    }
    fn value(&self, x: f64) -> f64 {
        (**self).value(x)
    }
    fn value_d1(&self, x: f64) -> (f64, f64) {
        (**self).value_d1(x)
    }
}

/// Polynomial with coefficients in ascending order of degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: impl Into<Vec<f64>>) -> Self {
        Self { coeffs: coeffs.into() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// `slope * x + intercept`
    pub fn linear(slope: f64, intercept: f64) -> Self {
        Self::new(vec![intercept, slope])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }
}

impl SmoothFn for Polynomial {
    fn jet(&self, x: f64) -> Jet4 {
        // Horner on each derivative: the k-th derivative has coefficients
        // c_i * i!/(i-k)! for i >= k.
        let mut out = [0.0; 5];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in (k..self.coeffs.len()).rev() {
                let falling: f64 = (0..k).map(|j| (i - j) as f64).product();
                acc = acc * x + self.coeffs[i] * falling;
            }
            *slot = acc;
        }
        Jet4::from_array(out)
    }

    fn value(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    fn value_d1(&self, x: f64) -> (f64, f64) {
        self.coeffs.iter().rev().fold((0.0, 0.0), |(v, d), &c| (v * x + c, d * x + v))
    }
}

/// Forward-mode fallback: differentiates any closure written over [`Jet4`]
/// arithmetic by seeding it with the identity jet.
pub struct JetFn<F> {
    f: F,
}

impl<F> JetFn<F>
where
    F: Fn(Jet4) -> Jet4 + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> SmoothFn for JetFn<F>
where
    F: Fn(Jet4) -> Jet4 + Send + Sync,
{
    fn jet(&self, x: f64) -> Jet4 {
        (self.f)(Jet4::variable(x))
    }
}

impl<F> std::fmt::Debug for JetFn<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("JetFn")
    }
}

// Nine-point central stencils (offsets -4..=4).
const FD_D1: [f64; 9] = [
    1.0 / 280.0, -4.0 / 105.0, 1.0 / 5.0, -4.0 / 5.0, 0.0,
    4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0,
];
const FD_D2: [f64; 9] = [
    -1.0 / 560.0, 8.0 / 315.0, -1.0 / 5.0, 8.0 / 5.0, -205.0 / 72.0,
    8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0,
];
const FD_D3: [f64; 9] = [
    -7.0 / 240.0, 3.0 / 10.0, -169.0 / 120.0, 61.0 / 30.0, 0.0,
    -61.0 / 30.0, 169.0 / 120.0, -3.0 / 10.0, 7.0 / 240.0,
];
const FD_D4: [f64; 9] = [
    7.0 / 240.0, -2.0 / 5.0, 169.0 / 60.0, -122.0 / 15.0, 91.0 / 8.0,
    -122.0 / 15.0, 169.0 / 60.0, -2.0 / 5.0, 7.0 / 240.0,
];

/// Step used by [`validate_jet`] around `x`.
pub fn validation_step(x: f64) -> f64 {
    0.02 * x.abs().max(1.0)
}

/// Derivatives 1..4 of `func.value` at `x` from nine-point central differences.
pub fn finite_difference_derivatives(func: &dyn SmoothFn, x: f64, h: f64) -> [f64; 4] {
    let samples: [f64; 9] = std::array::from_fn(|i| func.value(x + (i as f64 - 4.0) * h));
    let apply = |w: &[f64; 9], order: i32| {
        w.iter().zip(&samples).map(|(c, v)| c * v).sum::<f64>() / h.powi(order)
    };
    [
        apply(&FD_D1, 1),
        apply(&FD_D2, 2),
        apply(&FD_D3, 3),
        apply(&FD_D4, 4),
    ]
}

/// True iff every derivative in the jet matches central finite differences of
/// the value within `tol` (relative for magnitudes of at least one, absolute
/// below that).
pub fn validate_jet(func: &dyn SmoothFn, x: f64, tol: f64) -> bool {
    let jet = func.jet(x);
    if !jet.is_finite() {
        return false;
    }
    let fd = finite_difference_derivatives(func, x, validation_step(x));
    let claimed = [jet.d1, jet.d2, jet.d3, jet.d4];
    claimed
        .iter()
        .zip(fd.iter())
        .all(|(&c, &n)| (c - n).abs() <= tol * c.abs().max(1.0))
}
