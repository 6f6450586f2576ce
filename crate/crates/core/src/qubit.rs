//! Dual-rail qubit states `|z⟩ ∝ z|0⟩ + |1⟩` on the extended complex plane.
//!
//! A point is stored as a normalized projective pair `(alpha, beta)` with
//! `z = alpha / beta`, so `z = ∞` is simply `beta = 0` and arithmetic never
//! overflows near the pole.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannPoint {
    alpha: C64,
    beta: C64,
}

impl RiemannPoint {
    /// Canonical representative of the pair: unit norm, `beta` real and
    /// non-negative, `alpha = 1` at infinity. `None` for `(0, 0)`.
    pub fn from_pair(alpha: C64, beta: C64) -> Option<Self> {
        if beta == ZERO {
            return if alpha == ZERO { None } else { Some(Self::infinity()) };
        }
        let n = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        let phase = beta.conj() / beta.norm();
        Some(RiemannPoint {
            alpha: alpha * phase / n,
            beta: C64::new(beta.norm() / n, 0.0),
        })
    }

    pub fn finite(z: C64) -> Self {
        Self::from_pair(z, ONE).expect("beta = 1 is never degenerate")
    }

    pub fn real(x: f64) -> Self {
        Self::finite(C64::new(x, 0.0))
    }

    pub fn zero() -> Self {
        RiemannPoint { alpha: ZERO, beta: ONE }
    }

    pub fn infinity() -> Self {
        RiemannPoint { alpha: ONE, beta: ZERO }
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }

    pub fn beta(&self) -> C64 {
        self.beta
    }

    pub fn is_infinite(&self) -> bool {
        self.beta == ZERO
    }

    /// `z` as a complex number, `None` at infinity.
    pub fn value(&self) -> Option<C64> {
        (!self.is_infinite()).then(|| self.alpha / self.beta)
    }

    /// `|z|²` extended to `+∞` at the pole.
    pub fn norm_sqr(&self) -> f64 {
        self.value().map_or(f64::INFINITY, |z| z.norm_sqr())
    }

    /// Point at polar angle `theta ∈ [0, π]` and azimuth `phi` on the Bloch
    /// sphere: `z = tan(θ/2) e^{iφ}`.
    pub fn from_bloch(theta: f64, phi: f64) -> Self {
        if theta >= PI {
            return Self::infinity();
        }
        let (s, c) = (theta / 2.0).sin_cos();
        Self::from_pair(C64::from_polar(s, phi), C64::new(c, 0.0)).expect("cos(θ/2) > 0 for θ < π")
    }

    /// Inverse of [`from_bloch`](Self::from_bloch), with `φ ∈ [0, 2π)`.
    pub fn to_bloch(&self) -> (f64, f64) {
        let theta = 2.0 * self.alpha.norm().atan2(self.beta.norm());
        let phi = if self.alpha == ZERO || self.is_infinite() {
            0.0
        } else {
            self.alpha.arg().rem_euclid(TAU)
        };
        (theta, phi)
    }

    /// Point with `h = (1 − |z|²)/(1 + |z|²)` and azimuth `phi`.
    pub fn from_haar_coordinates(h: f64, phi: f64) -> Self {
        let a = ((1.0 - h) / 2.0).max(0.0).sqrt();
        let b = ((1.0 + h) / 2.0).max(0.0).sqrt();
        Self::from_pair(C64::from_polar(a, phi), C64::new(b, 0.0)).expect("a² + b² = 1")
    }

    /// Uniformly distributed point on the Bloch sphere.
    pub fn sample_haar<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let h = 1.0 - 2.0 * rng.random::<f64>();
        let phi = TAU * rng.random::<f64>();
        Self::from_haar_coordinates(h, phi)
    }

    /// State after a 2×2 unitary acting on `(|0⟩, |1⟩)` amplitudes.
    pub fn apply_unitary(&self, u: &Matrix2<C64>) -> Self {
        let a = u[(0, 0)] * self.alpha + u[(0, 1)] * self.beta;
        let b = u[(1, 0)] * self.alpha + u[(1, 1)] * self.beta;
        Self::from_pair(a, b).expect("unitaries map nonzero vectors to nonzero vectors")
    }
}

/// `|⟨a|b⟩|²`.
pub fn fidelity_pure(a: &RiemannPoint, b: &RiemannPoint) -> f64 {
    let ov = a.alpha * b.alpha.conj() + a.beta * b.beta.conj();
    ov.norm_sqr().clamp(0.0, 1.0)
}

/// Outcome of a field operation on the extended plane. Serialized as the
/// point itself or the string `"indeterminate"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldResult {
    Point(RiemannPoint),
    Indeterminate,
}

impl FieldResult {
    fn from_pair(alpha: C64, beta: C64) -> Self {
        RiemannPoint::from_pair(alpha, beta).map_or(FieldResult::Indeterminate, FieldResult::Point)
    }

    pub fn point(&self) -> Option<RiemannPoint> {
        match self {
            FieldResult::Point(p) => Some(*p),
            FieldResult::Indeterminate => None,
        }
    }

    pub fn is_indeterminate(&self) -> bool {
        matches!(self, FieldResult::Indeterminate)
    }

    /// Chains a binary operation, propagating indeterminacy.
    pub fn and_then(self, f: impl FnOnce(RiemannPoint) -> FieldResult) -> FieldResult {
        match self {
            FieldResult::Point(p) => f(p),
            FieldResult::Indeterminate => FieldResult::Indeterminate,
        }
    }
}

impl fmt::Display for FieldResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldResult::Point(p) => p.fmt(f),
            FieldResult::Indeterminate => f.write_str("indeterminate"),
        }
    }
}

pub fn field_mul(z1: &RiemannPoint, z2: &RiemannPoint) -> FieldResult {
    FieldResult::from_pair(z1.alpha * z2.alpha, z1.beta * z2.beta)
}

pub fn field_add(z1: &RiemannPoint, z2: &RiemannPoint) -> FieldResult {
    FieldResult::from_pair(z1.alpha * z2.beta + z2.alpha * z1.beta, z1.beta * z2.beta)
}

pub fn field_inv(z: &RiemannPoint) -> FieldResult {
    FieldResult::from_pair(z.beta, z.alpha)
}

/// `−z1·z2 / (z1 + z2)`, the harmonic-mean branch of the addition block.
pub fn field_harmonic(z1: &RiemannPoint, z2: &RiemannPoint) -> FieldResult {
    FieldResult::from_pair(-z1.alpha * z2.alpha, z1.alpha * z2.beta + z2.alpha * z1.beta)
}

pub fn field_neg(z: &RiemannPoint) -> FieldResult {
    FieldResult::from_pair(-z.alpha, z.beta)
}

/// Single-qubit density matrix in the `{|0⟩, |1⟩}` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitDensity(Matrix2<C64>);

pub const TOL_DENSITY: f64 = 1e-12;

impl QubitDensity {
    pub fn new(m: Matrix2<C64>) -> Result<Self> {
        Self::with_tolerance(m, TOL_DENSITY)
    }

    pub fn with_tolerance(m: Matrix2<C64>, tol: f64) -> Result<Self> {
        let herm = (m - m.adjoint()).iter().fold(0.0f64, |a, x| a.max(x.norm()));
        if herm > tol {
            return Err(Error::NonPhysical(format!("not Hermitian ({herm:.3e})")));
        }
        let tr = (m[(0, 0)] + m[(1, 1)]).re;
        if (tr - 1.0).abs() > tol {
            return Err(Error::NonPhysical(format!("trace {tr}")));
        }
        let rho = QubitDensity(m);
        let (lo, _) = rho.eigenvalues();
        if lo < -tol {
            return Err(Error::NonPhysical(format!("negative eigenvalue {lo:.3e}")));
        }
        Ok(rho)
    }

    /// Divides a positive semidefinite matrix by its trace.
    pub fn from_unnormalized(m: Matrix2<C64>) -> Result<Self> {
        let tr = (m[(0, 0)] + m[(1, 1)]).re;
        if tr <= 0.0 {
            return Err(Error::NonPhysical(format!("trace {tr}")));
        }
        let mut n = m / C64::new(tr, 0.0);
        // Remove rounding asymmetry before validation.
        n = (n + n.adjoint()) * C64::new(0.5, 0.0);
        Self::with_tolerance(n, 1e-10)
    }

    pub fn pure(z: &RiemannPoint) -> Self {
        let v = nalgebra::Vector2::new(z.alpha, z.beta);
        QubitDensity(v * v.adjoint())
    }

    pub fn maximally_mixed() -> Self {
        QubitDensity(Matrix2::new(C64::new(0.5, 0.0), ZERO, ZERO, C64::new(0.5, 0.0)))
    }

    pub fn matrix(&self) -> &Matrix2<C64> {
        &self.0
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = &self.0;
        let mean = 0.5 * (m[(0, 0)].re + m[(1, 1)].re);
        let half = 0.5 * (m[(0, 0)].re - m[(1, 1)].re);
        let r = (half * half + m[(0, 1)].norm_sqr()).sqrt();
        (mean - r, mean + r)
    }
}

/// `⟨target|ρ|target⟩`.
pub fn fidelity_mixed(rho: &QubitDensity, target: &RiemannPoint) -> f64 {
    let v = nalgebra::Vector2::new(target.alpha, target.beta);
    (v.adjoint() * rho.0 * v)[(0, 0)].re.clamp(0.0, 1.0)
}

impl fmt::Display for RiemannPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            None => f.write_str("inf"),
            Some(z) if z.im == 0.0 => write!(f, "{}", z.re),
            Some(z) if z.im < 0.0 => write!(f, "{}-{}i", z.re, -z.im),
            Some(z) => write!(f, "{}+{}i", z.re, z.im),
        }
    }
}

/// Parses `"a+bi"`, `"a"`, `"bi"` or `"inf"`.
impl FromStr for RiemannPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parameter(format!("malformed complex literal `{s}`"));
        if s.eq_ignore_ascii_case("inf") || s == "∞" {
            return Ok(Self::infinity());
        }
        let Some(body) = s.strip_suffix('i') else {
            return s.parse::<f64>().map(Self::real).map_err(|_| bad());
        };
        let bytes = body.as_bytes();
        let split = (1..bytes.len())
            .rev()
            .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
        let imag = |t: &str| -> Result<f64> {
            match t {
                "" | "+" => Ok(1.0),
                "-" => Ok(-1.0),
                _ => t.parse::<f64>().map_err(|_| bad()),
            }
        };
        let (re, im) = match split {
            Some(k) => (body[..k].parse::<f64>().map_err(|_| bad())?, imag(&body[k..])?),
            None => (0.0, imag(body)?),
        };
        if !re.is_finite() || !im.is_finite() {
            return Err(bad());
        }
        Ok(Self::finite(C64::new(re, im)))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PointRepr {
    Finite { re: f64, im: f64 },
    Tag(String),
}

impl Serialize for RiemannPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.value() {
            None => PointRepr::Tag("inf".into()).serialize(s),
            Some(z) => PointRepr::Finite { re: z.re, im: z.im }.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for RiemannPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match PointRepr::deserialize(d)? {
            PointRepr::Finite { re, im } => Ok(Self::finite(C64::new(re, im))),
            PointRepr::Tag(t) if t == "inf" => Ok(Self::infinity()),
            PointRepr::Tag(t) => Err(serde::de::Error::custom(format!("expected \"inf\", got {t:?}"))),
        }
    }
}

impl Serialize for FieldResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FieldResult::Point(p) => p.serialize(s),
            FieldResult::Indeterminate => s.serialize_str("indeterminate"),
        }
    }
}

impl<'de> Deserialize<'de> for FieldResult {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match PointRepr::deserialize(d)? {
            PointRepr::Finite { re, im } => Ok(FieldResult::Point(RiemannPoint::finite(C64::new(re, im)))),
            PointRepr::Tag(t) if t == "inf" => Ok(FieldResult::Point(RiemannPoint::infinity())),
            PointRepr::Tag(t) if t == "indeterminate" => Ok(FieldResult::Indeterminate),
            PointRepr::Tag(t) => Err(serde::de::Error::custom(format!(
                "expected \"inf\" or \"indeterminate\", got {t:?}"
            ))),
        }
    }
}

impl Serialize for QubitDensity {
    /// Row-major `[[re, im], …]` entries.
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m = &self.0;
        let rows: [[[f64; 2]; 2]; 2] = std::array::from_fn(|i| std::array::from_fn(|j| [m[(i, j)].re, m[(i, j)].im]));
        rows.serialize(s)
    }
}
