//! Numerical check of the hypotheses on Carleman weights `φ_k = exp(λψ_k)`.
//!
//! Side 1 is the damped subdomain, side 2 the elastic one. The normal `ν` is
//! always the outer normal of the elastic side; the metric is Euclidean.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradients below this are treated as vanishing.
pub const GRAD_TOL: f64 = 1e-8;
/// Allowed `|φ₁ − φ₂|` on the interface.
pub const TRACE_TOL: f64 = 1e-12;
/// Default near-zero threshold on the unit cosphere.
pub const EPS_ZERO: f64 = 1e-2;
/// Default lower bound for the bracket near symbol zeros.
pub const C_MIN: f64 = 1e-3;
pub const TAU_MIN: f64 = 0.05;
const DOMAIN_SLACK: f64 = 1e-12;

type Vec2 = [f64; 2];
type Mat2 = [[f64; 2]; 2];

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn quad(h: Mat2, a: Vec2, b: Vec2) -> f64 {
    a[0] * (h[0][0] * b[0] + h[0][1] * b[1]) + a[1] * (h[1][0] * b[0] + h[1][1] * b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "1")]
    Damped,
    #[serde(rename = "2")]
    Elastic,
}

impl Side {
    pub fn index(self) -> u8 {
        match self {
            Side::Damped => 1,
            Side::Elastic => 2,
        }
    }
}

/// Scalar field with closed-form gradient and Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Psi {
    /// `grad · (x − origin)`.
    Linear { grad: Vec2, origin: Vec2 },
    /// `slope · (|x − center| − r0)`.
    Radial { center: Vec2, slope: f64, r0: f64 },
    /// `coef · |x − center|² + offset`.
    Quadratic {
        center: Vec2,
        coef: f64,
        offset: f64,
    },
}

impl Psi {
    pub fn value(&self, x: Vec2) -> f64 {
        match *self {
            Psi::Linear { grad, origin } => dot(grad, [x[0] - origin[0], x[1] - origin[1]]),
            Psi::Radial { center, slope, r0 } => {
                slope * ((x[0] - center[0]).hypot(x[1] - center[1]) - r0)
            }
            Psi::Quadratic {
                center,
                coef,
                offset,
            } => {
                let d = [x[0] - center[0], x[1] - center[1]];
                coef * dot(d, d) + offset
            }
        }
    }

    pub fn grad(&self, x: Vec2) -> Vec2 {
        match *self {
            Psi::Linear { grad, .. } => grad,
            Psi::Radial { center, slope, .. } => {
                let d = [x[0] - center[0], x[1] - center[1]];
                let r = d[0].hypot(d[1]);
                [slope * d[0] / r, slope * d[1] / r]
            }
            Psi::Quadratic { center, coef, .. } => [
                2.0 * coef * (x[0] - center[0]),
                2.0 * coef * (x[1] - center[1]),
            ],
        }
    }

    pub fn hessian(&self, x: Vec2) -> Mat2 {
        match *self {
            Psi::Linear { .. } => [[0.0; 2]; 2],
            Psi::Radial { center, slope, .. } => {
                let d = [x[0] - center[0], x[1] - center[1]];
                let r = d[0].hypot(d[1]);
                let r3 = r * r * r;
                [
                    [
                        slope * (1.0 / r - d[0] * d[0] / r3),
                        -slope * d[0] * d[1] / r3,
                    ],
                    [
                        -slope * d[0] * d[1] / r3,
                        slope * (1.0 / r - d[1] * d[1] / r3),
                    ],
                ]
            }
            Psi::Quadratic { coef, .. } => [[2.0 * coef, 0.0], [0.0, 2.0 * coef]],
        }
    }
}

/// Two-sided geometry. 1D points and covectors use the first component only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum CarlemanGeometry {
    /// Damped side `[a, interface]`, elastic side `[interface, b]`.
    Interval { a: f64, interface: f64, b: f64 },
    /// Damped ring `r_in ≤ r ≤ r_if`, elastic ring `r_if ≤ r ≤ r_out`.
    Annulus {
        center: Vec2,
        r_in: f64,
        r_if: f64,
        r_out: f64,
    },
}

/// Point on a boundary piece together with `ν`.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryPoint {
    pub x: Vec2,
    pub normal: Vec2,
}

impl CarlemanGeometry {
    pub fn dim(&self) -> usize {
        match self {
            CarlemanGeometry::Interval { .. } => 1,
            CarlemanGeometry::Annulus { .. } => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CarlemanGeometry::Interval { a, interface, b } => a < interface && interface < b,
            CarlemanGeometry::Annulus {
                r_in, r_if, r_out, ..
            } => 0.0 < r_in && r_in < r_if && r_if < r_out,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "subdomains must be ordered and nonempty: {self:?}"
            )))
        }
    }

    fn radius(center: Vec2, x: Vec2) -> f64 {
        (x[0] - center[0]).hypot(x[1] - center[1])
    }

    /// Closed-subdomain membership.
    pub fn contains(&self, side: Side, x: Vec2) -> bool {
        let (lo, hi, t) = match (*self, side) {
            (CarlemanGeometry::Interval { a, interface, .. }, Side::Damped) => (a, interface, x[0]),
            (CarlemanGeometry::Interval { interface, b, .. }, Side::Elastic) => {
                (interface, b, x[0])
            }
            (
                CarlemanGeometry::Annulus {
                    center, r_in, r_if, ..
                },
                Side::Damped,
            ) => (r_in, r_if, Self::radius(center, x)),
            (
                CarlemanGeometry::Annulus {
                    center,
                    r_if,
                    r_out,
                    ..
                },
                Side::Elastic,
            ) => (r_if, r_out, Self::radius(center, x)),
        };
        let flat = self.dim() == 2 || x[1] == 0.0;
        flat && t >= lo - DOMAIN_SLACK && t <= hi + DOMAIN_SLACK
    }

    /// Tensor grid of the closed subdomain, `n` points per dimension
    /// (`4n` angles on the annulus).
    pub fn area_samples(&self, side: Side, n: usize) -> Vec<Vec2> {
        let lin = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
        match (*self, side) {
            (CarlemanGeometry::Interval { a, interface, b }, _) => {
                let (lo, hi) = if side == Side::Damped {
                    (a, interface)
                } else {
                    (interface, b)
                };
                (0..n).map(|i| [lin(lo, hi, i), 0.0]).collect()
            }
            (
                CarlemanGeometry::Annulus {
                    center,
                    r_in,
                    r_if,
                    r_out,
                },
                _,
            ) => {
                let (lo, hi) = if side == Side::Damped {
                    (r_in, r_if)
                } else {
                    (r_if, r_out)
                };
                let n_theta = 4 * n;
                let mut out = Vec::with_capacity(n * n_theta);
                for i in 0..n {
                    let r = lin(lo, hi, i);
                    for j in 0..n_theta {
                        let t = 2.0 * PI * j as f64 / n_theta as f64;
                        out.push([center[0] + r * t.cos(), center[1] + r * t.sin()]);
                    }
                }
                out
            }
        }
    }

    /// Interface samples; `ν` points into the damped side.
    pub fn interface_samples(&self, n: usize) -> Vec<BoundaryPoint> {
        match *self {
            CarlemanGeometry::Interval { interface, .. } => vec![BoundaryPoint {
                x: [interface, 0.0],
                normal: [-1.0, 0.0],
            }],
            CarlemanGeometry::Annulus { center, r_if, .. } => circle(center, r_if, 4 * n, -1.0),
        }
    }

    /// Outer boundary of the elastic side; `ν` points outwards.
    pub fn outer_samples(&self, n: usize) -> Vec<BoundaryPoint> {
        match *self {
            CarlemanGeometry::Interval { b, .. } => vec![BoundaryPoint {
                x: [b, 0.0],
                normal: [1.0, 0.0],
            }],
            CarlemanGeometry::Annulus { center, r_out, .. } => circle(center, r_out, 4 * n, 1.0),
        }
    }
}

fn circle(center: Vec2, r: f64, n: usize, orient: f64) -> Vec<BoundaryPoint> {
    (0..n)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / n as f64;
            let (s, c) = t.sin_cos();
            BoundaryPoint {
                x: [center[0] + r * c, center[1] + r * s],
                normal: [orient * c, orient * s],
            }
        })
        .collect()
}

fn default_alpha() -> Complex64 {
    Complex64::new(0.0, 1.0)
}

fn default_tau_min() -> f64 {
    TAU_MIN
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub psi1: Psi,
    pub psi2: Psi,
    pub lambda: f64,
    /// Parameter of the zeroth-order term `τ²/(1+ατ)` of `P₁`; only used by
    /// [`alpha_sensitivity`].
    #[serde(default = "default_alpha")]
    pub alpha: Complex64,
    #[serde(default = "default_tau_min")]
    pub tau_min: f64,
    pub geometry: CarlemanGeometry,
}

/// `φ`, `∇φ` and the Hessian of `φ` at one point.
#[derive(Debug, Clone, Copy)]
pub struct WeightJet {
    pub phi: f64,
    pub grad: Vec2,
    pub hess: Mat2,
}

impl WeightSpec {
    pub fn new(psi1: Psi, psi2: Psi, lambda: f64, geometry: CarlemanGeometry) -> Self {
        Self {
            psi1,
            psi2,
            lambda,
            alpha: default_alpha(),
            tau_min: TAU_MIN,
            geometry,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    fn psi(&self, side: Side) -> &Psi {
        match side {
            Side::Damped => &self.psi1,
            Side::Elastic => &self.psi2,
        }
    }

    pub fn phi(&self, side: Side, x: Vec2) -> f64 {
        (self.lambda * self.psi(side).value(x)).exp()
    }

    /// `∇φ = λφ∇ψ`, `∇²φ = λφ(∇²ψ + λ∇ψ∇ψᵀ)`; no domain check.
    pub fn jet(&self, side: Side, x: Vec2) -> WeightJet {
        let psi = self.psi(side);
        let l = self.lambda;
        let phi = self.phi(side, x);
        let g = psi.grad(x);
        let h = psi.hessian(x);
        let mut hess = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                hess[i][j] = l * phi * (h[i][j] + l * g[i] * g[j]);
            }
        }
        let mut out = WeightJet {
            phi,
            grad: [l * phi * g[0], l * phi * g[1]],
            hess,
        };
        if self.geometry.dim() == 1 {
            out.grad[1] = 0.0;
            out.hess = [[out.hess[0][0], 0.0], [0.0, 0.0]];
        }
        out
    }

    /// Checks `λ > 0`, `τ_min ∈ (0,1)` and `|φ₁ − φ₂| ≤ 1e−12` on the interface.
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.tau_min > 0.0 && self.tau_min < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_min must lie in (0, 1), got {}",
                self.tau_min
            )));
        }
        for p in self.geometry.interface_samples(16) {
            let gap = (self.phi(Side::Damped, p.x) - self.phi(Side::Elastic, p.x)).abs();
            if gap > TRACE_TOL {
                return Err(Error::InvalidArgument(format!(
                    "weights disagree on the interface at {:?}: |phi1 - phi2| = {gap:e}",
                    p.x
                )));
            }
        }
        Ok(())
    }

    fn check_point(&self, side: Side, x: Vec2, xi: Vec2) -> Result<()> {
        if !self.geometry.contains(side, x) {
            return Err(Error::OutsideDomain(format!(
                "{x:?} is not in side {}",
                side.index()
            )));
        }
        if self.geometry.dim() == 1 && xi[1] != 0.0 {
            return Err(Error::InvalidArgument(
                "1D covector must have xi[1] = 0".into(),
            ));
        }
        Ok(())
    }
}

fn symbol_from_jet(jet: &WeightJet, xi: Vec2, tau: f64, side: Side) -> Complex64 {
    let g2 = dot(jet.grad, jet.grad);
    let extra = if side == Side::Elastic {
        tau * tau
    } else {
        0.0
    };
    Complex64::new(
        dot(xi, xi) - tau * tau * g2 - extra,
        2.0 * tau * dot(xi, jet.grad),
    )
}

fn bracket_from_jet(jet: &WeightJet, xi: Vec2, tau: f64) -> f64 {
    4.0 * tau * quad(jet.hess, xi, xi) + 4.0 * tau.powi(3) * quad(jet.hess, jet.grad, jet.grad)
}

/// `p₁ = |ξ|² + 2iτ ξ·∇φ₁ − τ²|∇φ₁|²`; `p₂` carries an extra `−τ²`.
pub fn eval_symbol(w: &WeightSpec, x: Vec2, xi: Vec2, tau: f64, side: Side) -> Result<Complex64> {
    w.check_point(side, x, xi)?;
    Ok(symbol_from_jet(&w.jet(side, x), xi, tau, side))
}

/// `{Re p, Im p} = 4τ ξᵀ∇²φ ξ + 4τ³ ∇φᵀ∇²φ ∇φ`, identical on both sides.
pub fn poisson_bracket(w: &WeightSpec, x: Vec2, xi: Vec2, tau: f64, side: Side) -> Result<f64> {
    w.check_point(side, x, xi)?;
    Ok(bracket_from_jet(&w.jet(side, x), xi, tau))
}

/// The same bracket from central differences of the symbol with step `h`.
/// Points may sit within `h` of the subdomain boundary.
pub fn poisson_bracket_fd(
    w: &WeightSpec,
    x: Vec2,
    xi: Vec2,
    tau: f64,
    side: Side,
    h: f64,
) -> Result<f64> {
    w.check_point(side, x, xi)?;
    let p = |x: Vec2, xi: Vec2| symbol_from_jet(&w.jet(side, x), xi, tau, side);
    let mut total = 0.0;
    for j in 0..w.geometry.dim() {
        let mut xp = x;
        let mut xm = x;
        xp[j] += h;
        xm[j] -= h;
        let dx = (p(xp, xi) - p(xm, xi)) / (2.0 * h);
        let mut ep = xi;
        let mut em = xi;
        ep[j] += h;
        em[j] -= h;
        let dxi = (p(x, ep) - p(x, em)) / (2.0 * h);
        total += dxi.re * dx.im - dx.re * dxi.im;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConditionId {
    Grad,
    OuterSign,
    InterfaceSign,
    Jump,
    Subell,
}

impl ConditionId {
    pub const ALL: [ConditionId; 5] = [
        ConditionId::Grad,
        ConditionId::OuterSign,
        ConditionId::InterfaceSign,
        ConditionId::Jump,
        ConditionId::Subell,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionId::Grad => "GRAD",
            ConditionId::OuterSign => "OUTER_SIGN",
            ConditionId::InterfaceSign => "INTERFACE_SIGN",
            ConditionId::Jump => "JUMP",
            ConditionId::Subell => "SUBELL",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionRecord {
    pub id: ConditionId,
    /// `None` when the sample set is empty (the condition holds vacuously).
    pub worst_margin: Option<f64>,
    pub worst_point: Option<Vec2>,
    pub worst_side: Option<u8>,
    pub samples: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SymbolSample {
    pub x: Vec2,
    pub xi: Vec2,
    pub tau: f64,
    pub side: u8,
    pub p_value: Complex64,
    pub bracket_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    /// Points per space dimension.
    pub n_points: usize,
    pub n_theta: usize,
    pub n_tau: usize,
    pub eps_zero: f64,
    pub c_min: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            n_points: 17,
            n_theta: 64,
            n_tau: 32,
            eps_zero: EPS_ZERO,
            c_min: C_MIN,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightReport {
    pub conditions: Vec<ConditionRecord>,
    pub pass: bool,
    /// Refined zeros of the symbol on the sampled cosphere.
    pub n_zeros: usize,
    /// Smallest bracket at refined zeros.
    pub min_bracket_at_zeros: Option<f64>,
    #[serde(skip)]
    pub near_zero: Vec<SymbolSample>,
}

impl WeightReport {
    pub fn condition(&self, id: ConditionId) -> &ConditionRecord {
        self.conditions
            .iter()
            .find(|c| c.id == id)
            .expect("all conditions are recorded")
    }

    /// Ids of the failing conditions.
    pub fn failures(&self) -> Vec<ConditionId> {
        self.conditions
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.id)
            .collect()
    }

    /// CSV `x,xi,tau,side,abs_p,bracket`; vector fields are space separated.
    pub fn write_near_zero_csv<W: Write>(&self, mut w: W, dim: usize) -> std::io::Result<()> {
        writeln!(w, "x,xi,tau,side,abs_p,bracket")?;
        let vec = |v: Vec2| {
            if dim == 1 {
                format!("{:.16e}", v[0])
            } else {
                format!("{:.16e} {:.16e}", v[0], v[1])
            }
        };
        for s in &self.near_zero {
            writeln!(
                w,
                "{},{},{:.16e},{},{:.16e},{:.16e}",
                vec(s.x),
                vec(s.xi),
                s.tau,
                s.side,
                s.p_value.norm(),
                s.bracket_value
            )?;
        }
        Ok(())
    }
}

/// Minimum of `(margin, point, side)` triples; `pass` tests the minimum.
fn record(
    id: ConditionId,
    items: impl Iterator<Item = (f64, Vec2, Side)>,
    pass: impl Fn(f64) -> bool,
) -> ConditionRecord {
    let mut worst: Option<(f64, Vec2, Side)> = None;
    let mut samples = 0;
    for it in items {
        samples += 1;
        if worst.is_none_or(|w| it.0 < w.0 || it.0.is_nan()) {
            worst = Some(it);
        }
    }
    ConditionRecord {
        id,
        worst_margin: worst.map(|w| w.0),
        worst_point: worst.map(|w| w.1),
        worst_side: worst.map(|w| w.2.index()),
        samples,
        pass: worst.is_none_or(|w| pass(w.0)),
    }
}

fn cosphere(dim: usize, theta: f64, tau: f64) -> Vec2 {
    let rho = (1.0 - tau * tau).max(0.0).sqrt();
    if dim == 1 {
        [if theta.cos() >= 0.0 { rho } else { -rho }, 0.0]
    } else {
        [rho * theta.cos(), rho * theta.sin()]
    }
}

struct ZeroScan {
    /// `(θ, τ)` of grid and ring points with `|q| ≤ ε`.
    near: Vec<(f64, f64)>,
    /// Newton-refined zeros.
    zeros: Vec<(f64, f64)>,
}

/// Locates `{q = 0}` on the `(θ, τ)` chart of the unit cosphere.
fn scan_zeros(
    dim: usize,
    s: &Sampling,
    tau_min: f64,
    q: impl Fn(f64, f64) -> Complex64,
) -> ZeroScan {
    let thetas: Vec<f64> = if dim == 1 {
        vec![0.0, PI]
    } else {
        (0..s.n_theta)
            .map(|j| 2.0 * PI * j as f64 / s.n_theta as f64)
            .collect()
    };
    let taus: Vec<f64> = (0..s.n_tau)
        .map(|i| tau_min + (1.0 - tau_min) * i as f64 / s.n_tau as f64)
        .collect();
    let nt = thetas.len();
    let grid: Vec<f64> = thetas
        .iter()
        .flat_map(|&th| taus.iter().map(move |&ta| (th, ta)))
        .map(|(th, ta)| q(th, ta).norm())
        .collect();
    let at = |j: usize, i: usize| grid[j * s.n_tau + i];

    let mut near = Vec::new();
    for j in 0..nt {
        for i in 0..s.n_tau {
            if at(j, i) <= s.eps_zero {
                near.push((thetas[j], taus[i]));
            }
        }
    }
    let mut zeros: Vec<(f64, f64)> = Vec::new();
    if dim == 1 {
        // a real covector orthogonal to a nonzero gradient is zero: no zeros for τ > 0
        return ZeroScan { near, zeros };
    }
    let in_range = |ta: f64| ta >= tau_min && ta < 1.0;
    for j in 0..nt {
        for i in 0..s.n_tau {
            let v = at(j, i);
            let mut is_min = true;
            for dj in [nt - 1, 0, 1] {
                for di in [-1i64, 0, 1] {
                    let ii = i as i64 + di;
                    if (dj == 0 && di == 0) || ii < 0 || ii >= s.n_tau as i64 {
                        continue;
                    }
                    if at((j + dj) % nt, ii as usize) < v {
                        is_min = false;
                    }
                }
            }
            if !is_min {
                continue;
            }
            let Some((th, ta)) = newton_zero(&q, thetas[j], taus[i]) else {
                continue;
            };
            if !in_range(ta) {
                continue;
            }
            let th = th.rem_euclid(2.0 * PI);
            if zeros.iter().any(|&(t0, a0)| {
                let dt = (t0 - th).abs();
                dt.min(2.0 * PI - dt) < 1e-8 && (a0 - ta).abs() < 1e-8
            }) {
                continue;
            }
            zeros.push((th, ta));
        }
    }
    // rings around each zero, sized by the local Jacobian so |q| ≈ fraction·ε
    for &(th, ta) in &zeros {
        let jac = jacobian(&q, th, ta);
        for k in 0..8 {
            let a = 2.0 * PI * k as f64 / 8.0;
            let dir = [a.cos(), a.sin()];
            let slope = Complex64::new(
                jac[0][0] * dir[0] + jac[0][1] * dir[1],
                jac[1][0] * dir[0] + jac[1][1] * dir[1],
            )
            .norm();
            if slope == 0.0 {
                continue;
            }
            for frac in [0.25, 0.5, 0.9] {
                let r = frac * s.eps_zero / slope;
                let (t1, a1) = (th + r * dir[0], ta + r * dir[1]);
                if in_range(a1) && q(t1, a1).norm() <= s.eps_zero {
                    near.push((t1, a1));
                }
            }
        }
        near.push((th, ta));
    }
    ZeroScan { near, zeros }
}

fn jacobian(q: &impl Fn(f64, f64) -> Complex64, th: f64, ta: f64) -> Mat2 {
    let h = 1e-7;
    let dth = (q(th + h, ta) - q(th - h, ta)) / (2.0 * h);
    let dta = (q(th, ta + h) - q(th, ta - h)) / (2.0 * h);
    [[dth.re, dta.re], [dth.im, dta.im]]
}

fn newton_zero(q: &impl Fn(f64, f64) -> Complex64, mut th: f64, mut ta: f64) -> Option<(f64, f64)> {
    for _ in 0..40 {
        let v = q(th, ta);
        if v.norm() < 1e-13 {
            return Some((th, ta));
        }
        let j = jacobian(q, th, ta);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            return None;
        }
        let d_th = (j[1][1] * v.re - j[0][1] * v.im) / det;
        let d_ta = (-j[1][0] * v.re + j[0][0] * v.im) / det;
        th -= d_th;
        ta -= d_ta;
        if !(ta > 0.0 && ta < 1.0) {
            return None;
        }
    }
    (q(th, ta).norm() < 1e-10).then_some((th, ta))
}

struct PointScan {
    near: Vec<SymbolSample>,
    zero_brackets: Vec<f64>,
}

fn scan_point(w: &WeightSpec, s: &Sampling, side: Side, x: Vec2) -> PointScan {
    let dim = w.geometry.dim();
    let jet = w.jet(side, x);
    let q = |th: f64, ta: f64| symbol_from_jet(&jet, cosphere(dim, th, ta), ta, side);
    let scan = scan_zeros(dim, s, w.tau_min, q);
    let sample = |(th, ta): (f64, f64)| {
        let xi = cosphere(dim, th, ta);
        SymbolSample {
            x,
            xi,
            tau: ta,
            side: side.index(),
            p_value: symbol_from_jet(&jet, xi, ta, side),
            bracket_value: bracket_from_jet(&jet, xi, ta),
        }
    };
    PointScan {
        near: scan.near.into_iter().map(sample).collect(),
        zero_brackets: scan
            .zeros
            .into_iter()
            .map(|z| sample(z).bracket_value)
            .collect(),
    }
}

/// Evaluates GRAD, OUTER_SIGN, INTERFACE_SIGN, JUMP and SUBELL on `sampling`.
pub fn check_weight_conditions(w: &WeightSpec, sampling: &Sampling) -> Result<WeightReport> {
    w.validate()?;
    if sampling.n_points < 16 {
        return Err(Error::InvalidArgument(format!(
            "need at least 16 points per dimension, got {}",
            sampling.n_points
        )));
    }
    if sampling.n_tau < 2 || (w.geometry.dim() == 2 && sampling.n_theta < 8) {
        return Err(Error::InvalidArgument("cosphere grid too coarse".into()));
    }
    if !(sampling.eps_zero > 0.0) || !(sampling.c_min >= 0.0) {
        return Err(Error::InvalidArgument(
            "eps_zero must be positive and c_min nonnegative".into(),
        ));
    }
    let n = sampling.n_points;
    let sides = [Side::Damped, Side::Elastic];
    let area: Vec<(Side, Vec2)> = sides
        .iter()
        .flat_map(|&side| {
            w.geometry
                .area_samples(side, n)
                .into_iter()
                .map(move |x| (side, x))
        })
        .collect();

    let grad = record(
        ConditionId::Grad,
        area.iter().map(|&(side, x)| {
            let g = w.jet(side, x).grad;
            (g[0].hypot(g[1]), x, side)
        }),
        |m| m > GRAD_TOL,
    );
    let outer = record(
        ConditionId::OuterSign,
        w.geometry.outer_samples(n).into_iter().map(|p| {
            (
                -dot(w.jet(Side::Elastic, p.x).grad, p.normal),
                p.x,
                Side::Elastic,
            )
        }),
        |m| m > 0.0,
    );
    let iface = w.geometry.interface_samples(n);
    let normal_derivs: Vec<(f64, f64)> = iface
        .iter()
        .map(|p| {
            (
                dot(w.jet(Side::Damped, p.x).grad, p.normal),
                dot(w.jet(Side::Elastic, p.x).grad, p.normal),
            )
        })
        .collect();
    let interface_sign = record(
        ConditionId::InterfaceSign,
        iface
            .iter()
            .zip(&normal_derivs)
            .flat_map(|(p, &(d1, d2))| [(d1, p.x, Side::Damped), (d2, p.x, Side::Elastic)]),
        |m| m > 0.0,
    );
    let jump = record(
        ConditionId::Jump,
        iface
            .iter()
            .zip(&normal_derivs)
            .map(|(p, &(d1, d2))| (d1 * d1 - d2 * d2 - 1.0, p.x, Side::Damped)),
        |m| m > 0.0,
    );

    let scans: Vec<PointScan> = area
        .par_iter()
        .map(|&(side, x)| scan_point(w, sampling, side, x))
        .collect();
    let mut near_zero = Vec::new();
    let mut zero_brackets = Vec::new();
    for s in scans {
        near_zero.extend(s.near);
        zero_brackets.extend(s.zero_brackets);
    }
    let c_min = sampling.c_min;
    let subell = record(
        ConditionId::Subell,
        near_zero.iter().map(|s| {
            let side = if s.side == 1 {
                Side::Damped
            } else {
                Side::Elastic
            };
            (s.bracket_value - c_min, s.x, side)
        }),
        |m| m >= 0.0,
    );
    let conditions = vec![grad, outer, interface_sign, jump, subell];
    let pass = conditions.iter().all(|c| c.pass);
    Ok(WeightReport {
        pass,
        n_zeros: zero_brackets.len(),
        min_bracket_at_zeros: zero_brackets.iter().copied().reduce(f64::min),
        conditions,
        near_zero,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaSensitivity {
    pub alpha: Complex64,
    /// Zeros of `p₁ + τ²/(1+ατ)` found on the damped side.
    pub n_zeros: usize,
    /// Smallest bracket there (the extra term does not depend on `x`, `ξ`).
    pub min_bracket: Option<f64>,
    /// Same quantity for `p₁` alone.
    pub min_bracket_unperturbed: Option<f64>,
}

/// Effect of the zeroth-order term of `P₁` on the damped-side zero set.
/// Informational only; it does not enter [`WeightReport::pass`].
pub fn alpha_sensitivity(w: &WeightSpec, sampling: &Sampling) -> Result<AlphaSensitivity> {
    w.validate()?;
    let dim = w.geometry.dim();
    let alpha = w.alpha;
    let per_point: Vec<(Vec<f64>, Vec<f64>)> = w
        .geometry
        .area_samples(Side::Damped, sampling.n_points)
        .par_iter()
        .map(|&x| {
            let jet = w.jet(Side::Damped, x);
            let brackets = |zeros: Vec<(f64, f64)>| -> Vec<f64> {
                zeros
                    .into_iter()
                    .map(|(th, ta)| bracket_from_jet(&jet, cosphere(dim, th, ta), ta))
                    .collect()
            };
            let plain =
                |th: f64, ta: f64| symbol_from_jet(&jet, cosphere(dim, th, ta), ta, Side::Damped);
            let shifted = |th: f64, ta: f64| plain(th, ta) + ta * ta / (1.0 + alpha * ta);
            (
                brackets(scan_zeros(dim, sampling, w.tau_min, shifted).zeros),
                brackets(scan_zeros(dim, sampling, w.tau_min, plain).zeros),
            )
        })
        .collect();
    let shifted: Vec<f64> = per_point.iter().flat_map(|p| p.0.iter().copied()).collect();
    Ok(AlphaSensitivity {
        alpha,
        n_zeros: shifted.len(),
        min_bracket: shifted.iter().copied().reduce(f64::min),
        min_bracket_unperturbed: per_point
            .iter()
            .flat_map(|p| p.1.iter().copied())
            .reduce(f64::min),
    })
}

/// Damped interval `[0.3, 0.7]`, elastic `[0.7, 1]`.
pub const CATALOG_INTERVAL: CarlemanGeometry = CarlemanGeometry::Interval {
    a: 0.3,
    interface: 0.7,
    b: 1.0,
};

/// Damped ring `0.2 ≤ r ≤ 0.3`, elastic ring `0.3 ≤ r ≤ 0.5`.
pub const CATALOG_ANNULUS: CarlemanGeometry = CarlemanGeometry::Annulus {
    center: [0.0, 0.0],
    r_in: 0.2,
    r_if: 0.3,
    r_out: 0.5,
};

/// Weight decreasing linearly in the distance from the interface, with
/// slopes `s1` (damped) and `s2` (elastic).
pub fn normal_linear_weight(
    geometry: CarlemanGeometry,
    s1: f64,
    s2: f64,
    lambda: f64,
) -> WeightSpec {
    let (psi1, psi2) = match geometry {
        CarlemanGeometry::Interval { interface, .. } => (
            Psi::Linear {
                grad: [-s1, 0.0],
                origin: [interface, 0.0],
            },
            Psi::Linear {
                grad: [-s2, 0.0],
                origin: [interface, 0.0],
            },
        ),
        CarlemanGeometry::Annulus { center, r_if, .. } => (
            Psi::Radial {
                center,
                slope: -s1,
                r0: r_if,
            },
            Psi::Radial {
                center,
                slope: -s2,
                r0: r_if,
            },
        ),
    };
    WeightSpec::new(psi1, psi2, lambda, geometry)
}

/// Slopes `s1 = 0.75`, `s2 = 0.5`: jump margin `λ²·0.3125 − 1`.
pub fn radial_linear(lambda: f64) -> WeightSpec {
    normal_linear_weight(CATALOG_ANNULUS, 0.75, 0.5, lambda)
}

pub fn interval_linear(lambda: f64) -> WeightSpec {
    normal_linear_weight(CATALOG_INTERVAL, 0.75, 0.5, lambda)
}

/// Slopes with `(∂νφ₁)² − (∂νφ₂)² = 0.5` on the interface, so JUMP fails
/// with margin `−0.5`. On the annulus `λ s1 = 6`, which keeps SUBELL intact.
pub fn jump_violating(geometry: CarlemanGeometry, lambda: f64) -> WeightSpec {
    let (s1, s2) = match geometry {
        CarlemanGeometry::Interval { .. } => {
            let s2 = 0.5;
            ((s2 * s2 + 0.5 / (lambda * lambda)).sqrt(), s2)
        }
        CarlemanGeometry::Annulus { .. } => {
            let s1 = 6.0 / lambda;
            (s1, (s1 * s1 - 0.5 / (lambda * lambda)).sqrt())
        }
    };
    normal_linear_weight(geometry, s1, s2, lambda)
}

/// Damped-side weight with a critical point at `x = 0.5`.
pub fn critical_point(lambda: f64) -> WeightSpec {
    let g = CATALOG_INTERVAL;
    let psi1 = Psi::Quadratic {
        center: [0.5, 0.0],
        coef: -1.0,
        offset: 0.0,
    };
    // match ψ₁(0.7) = −0.04 on the interface
    let psi2 = Psi::Linear {
        grad: [-0.5, 0.0],
        origin: [0.7 - 0.04 / 0.5, 0.0],
    };
    WeightSpec::new(psi1, psi2, lambda, g)
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub weight: WeightSpec,
    /// Whether every condition is meant to hold.
    pub admissible: bool,
}

pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "radial-linear",
            weight: radial_linear(8.0),
            admissible: true,
        },
        CatalogEntry {
            name: "interval-linear",
            weight: interval_linear(8.0),
            admissible: true,
        },
        CatalogEntry {
            name: "jump-violating-interval",
            weight: jump_violating(CATALOG_INTERVAL, 8.0),
            admissible: false,
        },
        CatalogEntry {
            name: "jump-violating-annulus",
            weight: jump_violating(CATALOG_ANNULUS, 8.0),
            admissible: false,
        },
        CatalogEntry {
            name: "critical-point",
            weight: critical_point(8.0),
            admissible: false,
        },
    ]
}

pub fn catalog_entry(name: &str) -> Option<CatalogEntry> {
    catalog().into_iter().find(|e| e.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn symbol_trivial_cases() {
        let w = radial_linear(8.0);
        let x = [0.25, 0.05];
        let xi = [0.3, -0.4];
        let p = eval_symbol(&w, x, xi, 0.0, Side::Damped).unwrap();
        assert!((p - Complex64::new(0.25, 0.0)).norm() < 1e-15);

        let g = w.jet(Side::Damped, x).grad;
        let p = eval_symbol(&w, x, [0.0, 0.0], 0.7, Side::Damped).unwrap();
        assert!((p.re + 0.49 * dot(g, g)).abs() < 1e-12 * dot(g, g));
        assert_eq!(p.im, 0.0);

        // ξ ⊥ ∇φ₁ with |ξ| = τ|∇φ₁|
        let tau = 0.3;
        let gn = g[0].hypot(g[1]);
        let xi0 = [-g[1] / gn * tau * gn, g[0] / gn * tau * gn];
        let p = eval_symbol(&w, x, xi0, tau, Side::Damped).unwrap();
        assert!(p.norm() < 1e-12 * dot(g, g));
        assert!(poisson_bracket(&w, x, xi0, tau, Side::Damped).unwrap() > 0.0);
    }

    #[test]
    fn elastic_symbol_has_the_extra_term() {
        let w = radial_linear(4.0);
        let x = [0.0, 0.4];
        let xi = [0.2, 0.1];
        let tau = 0.5;
        let jet = w.jet(Side::Elastic, x);
        let p = eval_symbol(&w, x, xi, tau, Side::Elastic).unwrap();
        let expect = dot(xi, xi) - tau * tau * dot(jet.grad, jet.grad) - tau * tau;
        assert!((p.re - expect).abs() < 1e-12);
    }

    #[test]
    fn bracket_at_constructed_zero_of_linear_weight() {
        // ψ linear: ∇²ψ = 0 and ξ ⊥ ∇ψ, so the bracket is 4τ³λφ·λ(∇ψ·∇φ)²
        let w = WeightSpec::new(
            Psi::Linear {
                grad: [0.0, -1.0],
                origin: [0.0, 0.3],
            },
            Psi::Linear {
                grad: [0.0, -1.0],
                origin: [0.0, 0.3],
            },
            3.0,
            CATALOG_ANNULUS,
        );
        let x = [0.0, 0.25];
        let jet = w.jet(Side::Damped, x);
        let gn = jet.grad[1].abs();
        let tau = 0.2;
        let xi = [tau * gn, 0.0];
        let l = w.lambda;
        let expect = 4.0 * tau.powi(3) * l * jet.phi * l * (l * jet.phi).powi(2);
        let b = poisson_bracket(&w, x, xi, tau, Side::Damped).unwrap();
        assert!(rel(b, expect) < 1e-12, "{b} {expect}");
        assert!(eval_symbol(&w, x, xi, tau, Side::Damped).unwrap().norm() < 1e-12);
    }

    #[test]
    fn bracket_vanishes_at_tau_zero() {
        let w = radial_linear(8.0);
        let b = poisson_bracket(&w, [0.4, 0.0], [0.6, 0.8], 0.0, Side::Elastic).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn bracket_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for w in [
            radial_linear(8.0),
            interval_linear(8.0),
            critical_point(4.0),
        ] {
            let dim = w.geometry.dim();
            for _ in 0..100 {
                let side = if rng.random_bool(0.5) {
                    Side::Damped
                } else {
                    Side::Elastic
                };
                let pts = w.geometry.area_samples(side, 16);
                let x = pts[rng.random_range(0..pts.len())];
                let tau: f64 = rng.random_range(0.05..1.0);
                let xi = cosphere(dim, rng.random_range(0.0..2.0 * PI), tau);
                let exact = poisson_bracket(&w, x, xi, tau, side).unwrap();
                let fd = poisson_bracket_fd(&w, x, xi, tau, side, 1e-5).unwrap();
                let jet = w.jet(side, x);
                let scale = exact
                    .abs()
                    .max(4.0 * tau * jet.hess.iter().flatten().map(|v| v.abs()).sum::<f64>());
                assert!((exact - fd).abs() <= 1e-6 * scale, "{exact} {fd}");
            }
        }
    }

    #[test]
    fn jet_matches_finite_differences() {
        let w = radial_linear(8.0);
        let x = [0.31, -0.22];
        let h = 1e-5;
        let j = w.jet(Side::Elastic, x);
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let dphi = (w.phi(Side::Elastic, xp) - w.phi(Side::Elastic, xm)) / (2.0 * h);
            assert!(rel(dphi, j.grad[k]) < 1e-8);
            let gp = w.jet(Side::Elastic, xp).grad;
            let gm = w.jet(Side::Elastic, xm).grad;
            for l in 0..2 {
                let d = (gp[l] - gm[l]) / (2.0 * h);
                assert!((d - j.hess[k][l]).abs() < 1e-6 * j.hess[0][0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn homogeneity() {
        let w = radial_linear(8.0);
        let x = [-0.1, 0.35];
        let xi = [0.3, 0.5];
        let tau = 0.4;
        let p = eval_symbol(&w, x, xi, tau, Side::Elastic).unwrap();
        let b = poisson_bracket(&w, x, xi, tau, Side::Elastic).unwrap();
        for s in [0.5, 3.0, 17.0] {
            let ps = eval_symbol(&w, x, [s * xi[0], s * xi[1]], s * tau, Side::Elastic).unwrap();
            let bs =
                poisson_bracket(&w, x, [s * xi[0], s * xi[1]], s * tau, Side::Elastic).unwrap();
            assert!((ps - p * s * s).norm() <= 1e-10 * ps.norm());
            assert!(rel(bs, b * s.powi(3)) <= 1e-10);
        }
    }

    #[test]
    fn outside_domain_is_an_error() {
        let w = radial_linear(8.0);
        assert!(matches!(
            eval_symbol(&w, [0.45, 0.0], [1.0, 0.0], 0.1, Side::Damped),
            Err(Error::OutsideDomain(_))
        ));
        assert!(poisson_bracket(&w, [0.1, 0.0], [1.0, 0.0], 0.1, Side::Elastic).is_err());
        let w1 = interval_linear(8.0);
        assert!(eval_symbol(&w1, [0.8, 0.0], [1.0, 0.0], 0.1, Side::Damped).is_err());
        assert!(eval_symbol(&w1, [0.5, 0.0], [1.0, 0.5], 0.1, Side::Damped).is_err());
        // closed subdomains include the interface
        assert!(eval_symbol(&w1, [0.7, 0.0], [1.0, 0.0], 0.1, Side::Damped).is_ok());
        assert!(eval_symbol(&w1, [0.7, 0.0], [1.0, 0.0], 0.1, Side::Elastic).is_ok());
    }

    #[test]
    fn interface_traces_agree() {
        for e in catalog() {
            let w = e.weight;
            for p in w.geometry.interface_samples(64) {
                let gap = (w.phi(Side::Damped, p.x) - w.phi(Side::Elastic, p.x)).abs();
                assert!(gap <= TRACE_TOL, "{} {gap}", e.name);
            }
        }
    }

    #[test]
    fn mismatched_traces_are_rejected() {
        let mut w = interval_linear(8.0);
        w.psi2 = Psi::Linear {
            grad: [-0.5, 0.0],
            origin: [0.6, 0.0],
        };
        assert!(w.validate().is_err());
        assert!(check_weight_conditions(&w, &Sampling::default()).is_err());
        let w = interval_linear(0.0);
        assert!(w.validate().is_err());
    }

    #[test]
    fn coarse_sampling_is_rejected() {
        let s = Sampling {
            n_points: 8,
            ..Sampling::default()
        };
        assert!(check_weight_conditions(&radial_linear(8.0), &s).is_err());
    }

    #[test]
    fn catalog_weights_pass() {
        for w in [radial_linear(8.0), interval_linear(8.0)] {
            let r = check_weight_conditions(&w, &Sampling::default()).unwrap();
            assert!(r.pass, "{:?}", r.conditions);
            for c in &r.conditions {
                if let Some(m) = c.worst_margin {
                    assert!(m > 0.0, "{:?}", c);
                }
            }
            let jump = r.condition(ConditionId::Jump).worst_margin.unwrap();
            assert!((jump - (64.0 * 0.3125 - 1.0)).abs() < 1e-10, "{jump}");
        }
    }

    #[test]
    fn annulus_zeros_are_found_and_sub_elliptic() {
        let w = radial_linear(8.0);
        let r = check_weight_conditions(&w, &Sampling::default()).unwrap();
        // two tangential zero directions per sample point on each side
        let n_pts = 2 * 17 * 68;
        assert_eq!(r.n_zeros, 2 * n_pts);
        assert!(r.near_zero.iter().all(|s| s.p_value.norm() <= EPS_ZERO));
        // closed form at a zero: 4τ³λ³φ³s³(λs − 1/r) on the damped side
        let x = [0.2, 0.0];
        let jet = w.jet(Side::Damped, x);
        let g = jet.grad[0].abs();
        let tau = 1.0 / (1.0 + g * g).sqrt();
        let xi = cosphere(2, PI / 2.0, tau);
        let b = poisson_bracket(&w, x, xi, tau, Side::Damped).unwrap();
        let expect = 4.0 * tau.powi(3) * g.powi(3) * (6.0 - 5.0);
        assert!(rel(b, expect) < 1e-12, "{b} {expect}");
    }

    #[test]
    fn jump_violation_fails_only_jump() {
        for geom in [CATALOG_INTERVAL, CATALOG_ANNULUS] {
            let r =
                check_weight_conditions(&jump_violating(geom, 8.0), &Sampling::default()).unwrap();
            assert!(!r.pass);
            assert_eq!(r.failures(), vec![ConditionId::Jump]);
            let m = r.condition(ConditionId::Jump).worst_margin.unwrap();
            assert!((m + 0.5).abs() < 1e-10, "{m}");
        }
    }

    #[test]
    fn critical_point_fails_grad_there() {
        let r = check_weight_conditions(&critical_point(8.0), &Sampling::default()).unwrap();
        let g = r.condition(ConditionId::Grad);
        assert!(!g.pass);
        assert_eq!(g.worst_point, Some([0.5, 0.0]));
        assert_eq!(g.worst_side, Some(1));
    }

    #[test]
    fn convexification_is_monotone() {
        let s = Sampling::default();
        let mins: Vec<f64> = [2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&l| {
                check_weight_conditions(&radial_linear(l), &s)
                    .unwrap()
                    .min_bracket_at_zeros
                    .unwrap()
            })
            .collect();
        assert!(mins.windows(2).all(|p| p[1] >= p[0]), "{mins:?}");
    }

    #[test]
    fn alpha_sensitivity_reports_without_gating() {
        let w = radial_linear(8.0);
        let a = alpha_sensitivity(&w, &Sampling::default()).unwrap();
        assert!(a.min_bracket_unperturbed.is_some());
        assert_eq!(a.alpha, Complex64::new(0.0, 1.0));
        let a1 = alpha_sensitivity(&interval_linear(8.0), &Sampling::default()).unwrap();
        assert_eq!(a1.n_zeros, 0);
    }

    #[test]
    fn near_zero_csv_and_json() {
        let r = check_weight_conditions(&radial_linear(8.0), &Sampling::default()).unwrap();
        let mut buf = Vec::new();
        r.write_near_zero_csv(&mut buf, 2).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next(), Some("x,xi,tau,side,abs_p,bracket"));
        assert_eq!(s.lines().count(), r.near_zero.len() + 1);
        let row: Vec<&str> = s.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row.len(), 6);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["conditions"][4]["id"], "SUBELL");
    }

    #[test]
    fn weight_spec_round_trips_through_json() {
        let w = radial_linear(8.0);
        let s = serde_json::to_string(&w).unwrap();
        let back: WeightSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(w, back);
        let minimal = r#"{"psi1":{"kind":"linear","grad":[-1,0],"origin":[0.7,0]},
            "psi2":{"kind":"linear","grad":[-0.5,0],"origin":[0.7,0]},"lambda":2,
            "geometry":{"shape":"interval","a":0.3,"interface":0.7,"b":1.0}}"#;
        let w: WeightSpec = serde_json::from_str(minimal).unwrap();
        assert_eq!(w.tau_min, TAU_MIN);
    }
}
