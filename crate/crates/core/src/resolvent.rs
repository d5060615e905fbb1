//! Resolvent along the imaginary axis: energy-norm scans, the envelope fit,
//! the monolithic and transmission solvers, and the interface and Helmholtz
//! inequalities.

use std::io::Write;

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{element_matrices, EnergyFrame, OperatorSet, ShiftedSolver, State};
use crate::error::{Error, Result};
use crate::geometry::{Mesh, OmegaDescriptor, Region};
use crate::linalg::{BandLu, BandMatrix, CsrMatrix};

/// Resolution rule for scan frequencies: at least ten nodes per wavelength.
pub const MAX_MU_H: f64 = 0.6;
/// `σ_min / σ_max` below which a sample counts as an eigenvalue hit.
pub const EIGEN_HIT_RATIO: f64 = 1e-13;
/// Largest `n_dof` for which [`ResolventMethod::Auto`] picks the dense SVD.
pub const AUTO_DENSE_LIMIT: usize = 500;
/// Relative residual accepted from the monolithic solve.
pub const MONOLITHIC_RESIDUAL_TOL: f64 = 1e-10;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolventMethod {
    #[default]
    Auto,
    DenseSvd,
    InverseIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFlag {
    Ok,
    /// `iμ` is numerically an eigenvalue; the norm is reported as infinite.
    EigenvalueHit,
    /// Inverse iteration stopped at its iteration cap.
    NotConverged,
}

impl SampleFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::EigenvalueHit => "eigenvalue_hit",
            Self::NotConverged => "not_converged",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResolventSample {
    pub mu: f64,
    pub norm: f64,
    pub flag: SampleFlag,
}

/// Evaluates `‖(A_h − iμ)⁻¹‖` in the energy norm.
pub struct ResolventEvaluator<'a> {
    ops: &'a OperatorSet,
    method: ResolventMethod,
    frame: Option<EnergyFrame>,
    pub max_iterations: usize,
    pub rel_tol: f64,
}

impl<'a> ResolventEvaluator<'a> {
    pub fn new(ops: &'a OperatorSet, method: ResolventMethod) -> Result<Self> {
        let method = match method {
            ResolventMethod::Auto if ops.n_dof <= AUTO_DENSE_LIMIT => ResolventMethod::DenseSvd,
            ResolventMethod::Auto => ResolventMethod::InverseIteration,
            m => m,
        };
        let frame = match method {
            ResolventMethod::DenseSvd => Some(EnergyFrame::new(ops)?),
            _ => None,
        };
        Ok(Self {
            ops,
            method,
            frame,
            max_iterations: 2000,
            rel_tol: 1e-12,
        })
    }

    pub fn method(&self) -> ResolventMethod {
        self.method
    }

    pub fn norm(&self, mu: f64) -> Result<ResolventSample> {
        if !mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mu must be finite, got {mu}"
            )));
        }
        match &self.frame {
            Some(frame) => dense_norm(frame, mu),
            None => self.iterative_norm(mu),
        }
    }

    /// Power iteration on `R^* R` with `R = (A_h − iμ)⁻¹` and `^*` the G-adjoint.
    fn iterative_norm(&self, mu: f64) -> Result<ResolventSample> {
        let ops = self.ops;
        let forward = match ShiftedSolver::new(ops, Complex64::new(0.0, mu)) {
            Ok(s) => s,
            Err(Error::NearSingular(_)) | Err(Error::Singular { .. }) => {
                return Ok(ResolventSample {
                    mu,
                    norm: f64::INFINITY,
                    flag: SampleFlag::EigenvalueHit,
                })
            }
            Err(e) => return Err(e),
        };
        let adjoint = AdjointSolver::new(ops, mu)?;
        let n = ops.n_dof;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut draw = || -> Vec<Complex64> {
            (0..n)
                .map(|_| {
                    Complex64::new(
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    )
                })
                .collect()
        };
        let mut x = State {
            u: draw(),
            v: draw(),
        };
        x = x.scaled(1.0 / ops.h_norm(&x));
        let mut est = 0.0;
        for _ in 0..self.max_iterations {
            let y = forward.solve(&x)?;
            let ny = ops.h_norm(&y);
            let z = adjoint.solve(&y);
            let nz = ops.h_norm(&z);
            if !(nz > 0.0) || !nz.is_finite() {
                return Ok(ResolventSample {
                    mu,
                    norm: f64::INFINITY,
                    flag: SampleFlag::EigenvalueHit,
                });
            }
            x = z.scaled(1.0 / nz);
            if (ny - est).abs() <= self.rel_tol * ny {
                return Ok(ResolventSample {
                    mu,
                    norm: ny,
                    flag: SampleFlag::Ok,
                });
            }
            est = ny;
        }
        Ok(ResolventSample {
            mu,
            norm: est,
            flag: SampleFlag::NotConverged,
        })
    }
}

fn dense_norm(frame: &EnergyFrame, mu: f64) -> Result<ResolventSample> {
    let a = &frame.a_hat;
    let n = a.nrows();
    let shifted = Mat::<Complex64>::from_fn(n, n, |i, j| {
        Complex64::new(a[(i, j)], if i == j { -mu } else { 0.0 })
    });
    let sv = shifted
        .singular_values()
        .map_err(|e| Error::Eigen(format!("SVD did not converge at mu = {mu}: {e:?}")))?;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin <= EIGEN_HIT_RATIO * smax {
        return Ok(ResolventSample {
            mu,
            norm: f64::INFINITY,
            flag: SampleFlag::EigenvalueHit,
        });
    }
    Ok(ResolventSample {
        mu,
        norm: 1.0 / smin,
        flag: SampleFlag::Ok,
    })
}

/// Applies the G-adjoint of `(A_h − iμ)⁻¹`: with `r = G x`, solve
/// `(−K + iμD + μ²M) s = r_u − iμ r_v`, then `w = r_v + D s − iμ M s` and
/// return `(K⁻¹ w, s)`.
pub struct AdjointSolver<'a> {
    ops: &'a OperatorSet,
    mu: f64,
    lu: BandLu<Complex64>,
}

impl<'a> AdjointSolver<'a> {
    pub fn new(ops: &'a OperatorSet, mu: f64) -> Result<Self> {
        let lu = BandMatrix::from_combination(&[
            (Complex64::new(-1.0, 0.0), &ops.k),
            (Complex64::new(0.0, mu), &ops.d),
            (Complex64::new(mu * mu, 0.0), &ops.m),
        ])
        .factor()?;
        Ok(Self { ops, mu, lu })
    }

    pub fn solve(&self, x: &State<Complex64>) -> State<Complex64> {
        let ops = self.ops;
        let iw = Complex64::new(0.0, self.mu);
        let ru = ops.k.mul_vec(&x.u);
        let rv = ops.m.mul_vec(&x.v);
        let rhs: Vec<Complex64> = ru.iter().zip(&rv).map(|(&a, &b)| a - iw * b).collect();
        let s = self.lu.solve(&rhs);
        let ds = ops.d.mul_vec(&s);
        let ms = ops.m.mul_vec(&s);
        let w: Vec<Complex64> = (0..ops.n_dof).map(|i| rv[i] + ds[i] - iw * ms[i]).collect();
        State {
            u: ops.solve_stiffness(&w),
            v: s,
        }
    }
}

pub fn resolvent_norm(ops: &OperatorSet, mu: f64) -> Result<ResolventSample> {
    ResolventEvaluator::new(ops, ResolventMethod::Auto)?.norm(mu)
}

/// One-sided affine envelope `ln‖R(iμ)‖ ≤ C₁ + C₂|μ|`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnvelopeFit {
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    /// Least-squares slope of `ln‖R‖` against `ln μ` over samples with `μ ≥ 1`.
    pub growth_exponent: Option<f64>,
    pub n_used: usize,
    pub degenerate: bool,
}

impl EnvelopeFit {
    pub fn bound(&self, mu: f64) -> f64 {
        self.c1 + self.c2 * mu.abs()
    }

    /// Smallest slack `C₁ + C₂|μ| − y` over the given samples.
    pub fn min_slack(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| self.bound(xi) - yi)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Minimizes `Σ (C₁ + C₂xᵢ − yᵢ)²` subject to `C₁ + C₂xᵢ ≥ yᵢ`, `C₂ ≥ 0`.
///
/// For fixed `C₂` the best feasible `C₁` is `max(y − C₂x)`; the remaining
/// one-dimensional objective is convex and is minimized by golden section.
pub fn fit_envelope(x: &[f64], y: &[f64]) -> EnvelopeFit {
    assert_eq!(x.len(), y.len());
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(&a, &b)| (a.abs(), b))
        .collect();
    let n_used = pts.len();
    if n_used == 0 {
        return EnvelopeFit {
            c1: f64::NAN,
            c2: f64::NAN,
            growth_exponent: None,
            n_used,
            degenerate: true,
        };
    }
    let c1_for = |c2: f64| {
        pts.iter()
            .map(|&(a, b)| b - c2 * a)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let cost = |c2: f64| {
        let c1 = c1_for(c2);
        pts.iter()
            .map(|&(a, b)| (c1 + c2 * a - b).powi(2))
            .sum::<f64>()
    };
    let xmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let degenerate = xmax - xmin <= 1e-12 * xmax.abs().max(1.0);
    let growth_exponent = growth_exponent(&pts);
    if degenerate {
        return EnvelopeFit {
            c1: c1_for(0.0),
            c2: 0.0,
            growth_exponent,
            n_used,
            degenerate,
        };
    }
    // Beyond the steepest pairwise slope the envelope pivots on the leftmost
    // sample and the cost only grows.
    let mut hi: f64 = 0.0;
    for (i, p) in pts.iter().enumerate() {
        for q in &pts[i + 1..] {
            if (p.0 - q.0).abs() > 0.0 {
                hi = hi.max((p.1 - q.1) / (p.0 - q.0));
            }
        }
    }
    let (mut a, mut b) = (0.0, hi);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..200 {
        if b - a <= 1e-14 * hi.max(1.0) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = cost(d);
        }
    }
    let mut c2 = 0.5 * (a + b);
    if cost(0.0) <= cost(c2) {
        c2 = 0.0;
    }
    EnvelopeFit {
        c1: c1_for(c2),
        c2,
        growth_exponent,
        n_used,
        degenerate,
    }
}

fn growth_exponent(pts: &[(f64, f64)]) -> Option<f64> {
    let lp: Vec<(f64, f64)> = pts
        .iter()
        .filter(|p| p.0 >= 1.0)
        .map(|&(a, b)| (a.ln(), b))
        .collect();
    if lp.len() < 2 {
        return None;
    }
    let n = lp.len() as f64;
    let mx = lp.iter().map(|p| p.0).sum::<f64>() / n;
    let my = lp.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = lp.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = lp.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolventScan {
    pub samples: Vec<ResolventSample>,
    pub fit: EnvelopeFit,
    /// Grid indices left out of the fit (infinite norms).
    pub excluded: Vec<usize>,
}

impl ResolventScan {
    pub fn mu_values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mu).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.norm).collect()
    }

    /// Smallest `C₁ + C₂|μ| − ln‖R‖` over the fitted samples.
    pub fn min_slack(&self) -> f64 {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .samples
            .iter()
            .filter(|s| s.norm.is_finite())
            .map(|s| (s.mu, s.norm.ln()))
            .unzip();
        self.fit.min_slack(&x, &y)
    }

    /// CSV `mu,norm,flag`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "mu,norm,flag")?;
        for s in &self.samples {
            writeln!(w, "{:.16e},{:.16e},{}", s.mu, s.norm, s.flag.as_str())?;
        }
        Ok(())
    }
}

/// `[lo, lo+step, …, hi]`, inclusive up to rounding.
pub fn mu_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

pub fn scan_resolvent(
    ops: &OperatorSet,
    grid: &[f64],
    method: ResolventMethod,
) -> Result<ResolventScan> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty mu grid".into()));
    }
    let mut sorted = grid.to_vec();
    if sorted.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidArgument(
            "mu grid contains non-finite values".into(),
        ));
    }
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(
            "mu grid values must be distinct".into(),
        ));
    }
    let h = ops.mesh.h;
    if let Some(bad) = grid.iter().find(|m| m.abs() * h > MAX_MU_H) {
        return Err(Error::InvalidArgument(format!(
            "mu = {bad} is under-resolved on this mesh (mu*h = {:.3} > {MAX_MU_H})",
            bad.abs() * h
        )));
    }
    let eval = ResolventEvaluator::new(ops, method)?;
    let samples: Vec<ResolventSample> = grid
        .par_iter()
        .map(|&mu| eval.norm(mu))
        .collect::<Result<Vec<_>>>()?;
    let excluded: Vec<usize> = (0..samples.len())
        .filter(|&i| !samples[i].norm.is_finite())
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|s| s.norm.is_finite())
        .map(|s| (s.mu, s.norm.ln()))
        .unzip();
    let fit = fit_envelope(&x, &y);
    Ok(ResolventScan {
        samples,
        fit,
        excluded,
    })
}

// ---------------------------------------------------------------------------
// Resolvent equation solvers

/// Solves `(A_h − iμ)(u, v) = (f, g)`.
pub fn monolithic_resolvent_solve(
    ops: &OperatorSet,
    mu: f64,
    f: &[Complex64],
    g: &[Complex64],
) -> Result<State<Complex64>> {
    let y = State {
        u: f.to_vec(),
        v: g.to_vec(),
    };
    let solver = ShiftedSolver::new(ops, Complex64::new(0.0, mu))?;
    let z = solver.solve(&y)?;
    let res = solver.residual(&z, &y);
    if !(res <= MONOLITHIC_RESIDUAL_TOL) {
        return Err(Error::NearSingular(format!(
            "resolvent solve at mu = {mu} left relative residual {res:.3e}"
        )));
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Boundary,
    /// Touches only DAMPED elements.
    OmegaInterior,
    /// Touches DAMPED and ELASTIC elements.
    Interface,
    /// Touches only ELASTIC elements.
    Elastic,
}

pub fn classify_nodes(mesh: &Mesh) -> Vec<NodeKind> {
    let dn = mesh.region_nodes(Region::Damped);
    let en = mesh.region_nodes(Region::Elastic);
    (0..mesh.nodes.len())
        .map(|k| {
            if mesh.dof_of_node(k).is_none() {
                NodeKind::Boundary
            } else {
                match (dn[k], en[k]) {
                    (true, true) => NodeKind::Interface,
                    (true, false) => NodeKind::OmegaInterior,
                    _ => NodeKind::Elastic,
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TransmissionState {
    /// `w₁ = (1+idμ)u₁ + d f₁` at nodes of DAMPED elements (zero elsewhere).
    pub w1: Vec<Complex64>,
    /// `w₂ = u₂` at nodes of ELASTIC elements (zero elsewhere, zero on Γ).
    pub w2: Vec<Complex64>,
    /// `(node, w₁ − w₂)` at interface nodes.
    pub phi: Vec<(usize, Complex64)>,
    pub mu: f64,
    pub d: f64,
    /// `(u, v)` rebuilt from `w₁, w₂` on the interior dofs.
    pub state: State<Complex64>,
    /// `max |λ₁ + λ₂| / max |λ|` over interface nodes, `λ_s` the discrete
    /// normal flux of side `s`.
    pub flux_jump: f64,
}

/// Transmission form of the resolvent equation:
/// `Δw₁ + μ²/(1+idμ) w₁ = Φ₁` in ω, `Δw₂ + μ² w₂ = Φ₂` outside, coupled by
/// `w₁ = w₂ + φ` and equal fluxes on I, with `φ = d f₁ + idμ u₁` eliminated
/// through `u₁ = u₂` on I.
pub fn solve_transmission(
    ops: &OperatorSet,
    mu: f64,
    f: &[Complex64],
    g: &[Complex64],
) -> Result<TransmissionState> {
    let mesh = &*ops.mesh;
    let n = ops.n_dof;
    for len in [f.len(), g.len()] {
        if len != n {
            return Err(Error::Dimension {
                expected: n,
                got: len,
            });
        }
    }
    let d = ops.damping.d;
    let kind = classify_nodes(mesh);
    let nodal = |x: &[Complex64], node: usize| {
        mesh.dof_of_node(node)
            .map_or(Complex64::new(0.0, 0.0), |i| x[i])
    };
    let one = Complex64::new(1.0, 0.0);
    let c = one + I * (d * mu);
    let kappa = mu * mu / c;

    let bw = ops.k.half_bandwidth();
    let mut a = BandMatrix::<Complex64>::zeros(n, bw, bw);
    let mut b = vec![Complex64::new(0.0, 0.0); n];
    let mut element_ops = Vec::with_capacity(mesh.elements.len());
    for e in 0..mesh.elements.len() {
        let (ke, me) = element_matrices(mesh, e);
        let el = &mesh.elements[e];
        let m = el.len();
        let damped = mesh.element_region[e] == Region::Damped;
        let coef = if damped {
            kappa
        } else {
            Complex64::new(mu * mu, 0.0)
        };
        let local: Vec<Complex64> = (0..m * m).map(|k| -ke[k] + coef * me[k]).collect();
        let phi: Vec<Complex64> = el
            .iter()
            .map(|&v| {
                let (fv, gv) = (nodal(f, v), nodal(g, v));
                if damped {
                    gv + I * mu * fv / c
                } else {
                    gv + I * mu * fv
                }
            })
            .collect();
        for p in 0..m {
            let Some(row) = mesh.dof_of_node(el[p]) else {
                continue;
            };
            for q in 0..m {
                b[row] += me[m * p + q] * phi[q];
                let Some(col) = mesh.dof_of_node(el[q]) else {
                    continue;
                };
                let l = local[m * p + q];
                if damped && kind[el[q]] == NodeKind::Interface {
                    // w₁ = (1+idμ) w₂ + d f on I
                    a.add(row, col, l * c);
                    b[row] -= l * d * f[col];
                } else {
                    a.add(row, col, l);
                }
            }
        }
        element_ops.push((local, phi));
    }
    let x = a.factor()?.solve(&b);

    let mut w1 = vec![Complex64::new(0.0, 0.0); mesh.nodes.len()];
    let mut w2 = vec![Complex64::new(0.0, 0.0); mesh.nodes.len()];
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    for node in 0..mesh.nodes.len() {
        let Some(i) = mesh.dof_of_node(node) else {
            continue;
        };
        match kind[node] {
            NodeKind::OmegaInterior => {
                w1[node] = x[i];
                u[i] = (x[i] - d * f[i]) / c;
            }
            NodeKind::Interface => {
                w2[node] = x[i];
                w1[node] = c * x[i] + d * f[i];
                u[i] = x[i];
            }
            NodeKind::Elastic => {
                w2[node] = x[i];
                u[i] = x[i];
            }
            NodeKind::Boundary => {}
        }
    }
    let phi: Vec<(usize, Complex64)> = (0..mesh.nodes.len())
        .filter(|&k| kind[k] == NodeKind::Interface)
        .map(|k| (k, w1[k] - w2[k]))
        .collect();

    // side residuals at interface nodes
    let mut lam1 = vec![Complex64::new(0.0, 0.0); mesh.nodes.len()];
    let mut lam2 = vec![Complex64::new(0.0, 0.0); mesh.nodes.len()];
    for (e, (local, phi_e)) in element_ops.iter().enumerate() {
        let el = &mesh.elements[e];
        let m = el.len();
        let (_, me) = element_matrices(mesh, e);
        let damped = mesh.element_region[e] == Region::Damped;
        let w = if damped { &w1 } else { &w2 };
        for p in 0..m {
            if kind[el[p]] != NodeKind::Interface {
                continue;
            }
            let mut r = Complex64::new(0.0, 0.0);
            for q in 0..m {
                r += local[m * p + q] * w[el[q]] - me[m * p + q] * phi_e[q];
            }
            if damped {
                lam1[el[p]] += r;
            } else {
                lam2[el[p]] += r;
            }
        }
    }
    let mut jump: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &(k, _) in &phi {
        jump = jump.max((lam1[k] + lam2[k]).norm());
        scale = scale.max(lam1[k].norm()).max(lam2[k].norm());
    }
    let flux_jump = if scale > 0.0 { jump / scale } else { 0.0 };

    let v = u.iter().zip(f).map(|(&ui, &fi)| I * mu * ui + fi).collect();
    Ok(TransmissionState {
        w1,
        w2,
        phi,
        mu,
        d,
        state: State { u, v },
        flux_jump,
    })
}

/// Relative energy-norm difference between the two solvers.
pub fn transmission_equivalence(
    ops: &OperatorSet,
    mu: f64,
    f: &[Complex64],
    g: &[Complex64],
) -> Result<f64> {
    let mono = monolithic_resolvent_solve(ops, mu, f, g)?;
    let trans = solve_transmission(ops, mu, f, g)?;
    let scale = ops.h_norm(&mono);
    let diff = ops.h_norm(&mono.sub(&trans.state));
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Standard complex normal nodal vectors `(f, g)`.
pub fn random_rhs(n: usize, seed: u64) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<Complex64> {
        (0..n)
            .map(|_| {
                Complex64::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                )
            })
            .collect()
    };
    let f = draw();
    let g = draw();
    (f, g)
}

// ---------------------------------------------------------------------------
// Interface dissipation

/// `|μ| uᴴDu / (μ² fᴴKf + gᴴMg)` for the resolvent solution `u`.
pub fn interface_dissipation_ratio(
    ops: &OperatorSet,
    mu: f64,
    f: &[Complex64],
    g: &[Complex64],
) -> Result<f64> {
    let z = monolithic_resolvent_solve(ops, mu, f, g)?;
    let lhs = mu.abs() * ops.d.quad_form(&z.u);
    let rhs = mu * mu * ops.k.quad_form(f) + ops.m.quad_form(g);
    Ok(if rhs > 0.0 { lhs / rhs } else { 0.0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct DissipationStudy {
    /// `(μ, max ratio over the random right-hand sides)`.
    pub per_mu: Vec<(f64, f64)>,
    /// Constant fitted on the lower half of the μ grid.
    pub c_fit: f64,
    /// Largest ratio over the upper half, which `c_fit` must bound.
    pub max_holdout: f64,
    pub pass: bool,
}

/// Fits one constant on the lower half of `mus` (sorted) and tests it on the
/// upper half, so the check says something about μ-uniformity.
pub fn interface_dissipation_study(
    ops: &OperatorSet,
    mus: &[f64],
    n_rhs: usize,
    seed: u64,
) -> Result<DissipationStudy> {
    if mus.len() < 2 || n_rhs == 0 {
        return Err(Error::InvalidArgument(
            "need at least two mu values and one right-hand side".into(),
        ));
    }
    let mut mus = mus.to_vec();
    mus.sort_by(f64::total_cmp);
    let per_mu: Vec<(f64, f64)> = mus
        .par_iter()
        .enumerate()
        .map(|(k, &mu)| {
            let mut worst: f64 = 0.0;
            for t in 0..n_rhs {
                let (f, g) = random_rhs(ops.n_dof, seed.wrapping_add((k * n_rhs + t) as u64));
                worst = worst.max(interface_dissipation_ratio(ops, mu, &f, &g)?);
            }
            Ok((mu, worst))
        })
        .collect::<Result<Vec<_>>>()?;
    let half = per_mu.len() / 2;
    let c_fit = per_mu[..half].iter().map(|p| p.1).fold(0.0, f64::max);
    let max_holdout = per_mu[half..].iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(DissipationStudy {
        per_mu,
        c_fit,
        max_holdout,
        pass: c_fit.is_finite() && max_holdout <= c_fit,
    })
}

// ---------------------------------------------------------------------------
// Helmholtz H¹ lemma

/// Default lower frequency limit of the Helmholtz check.
pub const HELMHOLTZ_MU0: f64 = 10.0;

/// P1 matrices of the damped subdomain O = ω on its own node set, with ∂O
/// taken as the nodes shared with ELASTIC elements (or Γ).
struct Subdomain {
    nodes: Vec<usize>,
    boundary: Vec<bool>,
    k: CsrMatrix,
    m: CsrMatrix,
}

fn damped_subdomain(mesh: &Mesh) -> Result<Subdomain> {
    let dn = mesh.region_nodes(Region::Damped);
    let en = mesh.region_nodes(Region::Elastic);
    let nodes: Vec<usize> = (0..mesh.nodes.len()).filter(|&k| dn[k]).collect();
    if nodes.is_empty() {
        return Err(Error::Geometry("mesh has no damped elements".into()));
    }
    let mut local = vec![usize::MAX; mesh.nodes.len()];
    for (i, &k) in nodes.iter().enumerate() {
        local[k] = i;
    }
    let boundary = nodes
        .iter()
        .map(|&k| en[k] || mesh.dof_of_node(k).is_none())
        .collect();
    let mut tk = Vec::new();
    let mut tm = Vec::new();
    for e in 0..mesh.elements.len() {
        if mesh.element_region[e] != Region::Damped {
            continue;
        }
        let (ke, me) = element_matrices(mesh, e);
        let el = &mesh.elements[e];
        let m = el.len();
        for p in 0..m {
            for q in 0..m {
                tk.push((local[el[p]], local[el[q]], ke[m * p + q]));
                tm.push((local[el[p]], local[el[q]], me[m * p + q]));
            }
        }
    }
    let n = nodes.len();
    Ok(Subdomain {
        nodes,
        boundary,
        k: CsrMatrix::from_triplets(n, &tk),
        m: CsrMatrix::from_triplets(n, &tm),
    })
}

/// Smooth random field on ω: cosines on its bounding box (6 modes in 1D,
/// 4×4 in 2D) with complex coefficients uniform in `[-1,1]²`.
fn smooth_field(
    omega: &OmegaDescriptor,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> impl Fn([f64; 2]) -> Complex64 {
    let (lo, hi) = omega.bounding_box();
    let modes: Vec<(usize, usize)> = if dim == 1 {
        (0..6).map(|j| (j, 0)).collect()
    } else {
        (0..4).flat_map(|j| (0..4).map(move |l| (j, l))).collect()
    };
    let coef: Vec<Complex64> = modes
        .iter()
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let span = [hi[0] - lo[0], (hi[1] - lo[1]).max(f64::MIN_POSITIVE)];
    move |p: [f64; 2]| {
        modes
            .iter()
            .zip(&coef)
            .fold(Complex64::new(0.0, 0.0), |acc, (&(j, l), &c)| {
                let cx = (j as f64 * std::f64::consts::PI * (p[0] - lo[0]) / span[0]).cos();
                let cy = (l as f64 * std::f64::consts::PI * (p[1] - lo[1]) / span[1]).cos();
                acc + c * cx * cy
            })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HelmholtzResult {
    pub mu: f64,
    pub n_cells: usize,
    /// Largest `‖w‖²_{H¹} / (‖∇w‖² + ‖F‖²)` over the trials.
    pub max_ratio: f64,
    pub trials_used: usize,
    pub skipped: usize,
}

/// Solves `Δw + μ²/(1+idμ) w = F` on O = ω for smooth random `F` and smooth
/// random Dirichlet data on ∂O, and records the largest H¹ ratio.
pub fn helmholtz_h1_check(
    mesh: &Mesh,
    d: f64,
    mu: f64,
    trials: usize,
    seed: u64,
    mu0: f64,
) -> Result<HelmholtzResult> {
    if mu.abs() < mu0 {
        return Err(Error::InvalidArgument(format!(
            "|mu| = {} is below mu0 = {mu0}",
            mu.abs()
        )));
    }
    let sub = damped_subdomain(mesh)?;
    let n = sub.nodes.len();
    let kappa = mu * mu / Complex64::new(1.0, d * mu);
    let free: Vec<usize> = (0..n).filter(|&i| !sub.boundary[i]).collect();
    let mut free_idx = vec![usize::MAX; n];
    for (r, &i) in free.iter().enumerate() {
        free_idx[i] = r;
    }
    // −K + κM restricted to free nodes; band from the lexicographic node order
    let bw = sub.k.half_bandwidth();
    let mut a = BandMatrix::<Complex64>::zeros(free.len(), bw, bw);
    for (i, j, kv) in sub.k.triplets() {
        if free_idx[i] != usize::MAX && free_idx[j] != usize::MAX {
            a.add(
                free_idx[i],
                free_idx[j],
                Complex64::new(-kv, 0.0) + kappa * sub.m.get(i, j),
            );
        }
    }
    let lu = a.factor()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for _ in 0..trials {
        let forcing = smooth_field(&mesh.omega, mesh.dim, &mut rng);
        let bdata = smooth_field(&mesh.omega, mesh.dim, &mut rng);
        let fv: Vec<Complex64> = sub.nodes.iter().map(|&k| forcing(mesh.nodes[k])).collect();
        let mut w: Vec<Complex64> = (0..n)
            .map(|i| {
                if sub.boundary[i] {
                    bdata(mesh.nodes[sub.nodes[i]])
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let mf = sub.m.mul_vec(&fv);
        // rhs = M F − (−K + κM) w_boundary on the free rows
        let kw = sub.k.mul_vec(&w);
        let mw = sub.m.mul_vec(&w);
        let rhs: Vec<Complex64> = free
            .iter()
            .map(|&i| mf[i] + kw[i] - kappa * mw[i])
            .collect();
        let sol = lu.solve(&rhs);
        for (r, &i) in free.iter().enumerate() {
            w[i] = sol[r];
        }
        let l2 = sub.m.quad_form(&w);
        let g2 = sub.k.quad_form(&w);
        let f2 = sub.m.quad_form(&fv);
        let denom = g2 + f2;
        if !(denom > 0.0) {
            skipped += 1;
            continue;
        }
        used += 1;
        best = best.max((l2 + g2) / denom);
    }
    Ok(HelmholtzResult {
        mu,
        n_cells: mesh.n_cells,
        max_ratio: best,
        trials_used: used,
        skipped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HelmholtzStudy {
    pub results: Vec<HelmholtzResult>,
    /// Midrange `(max + min)/2` of the ratios.
    pub reference: f64,
    /// `(max − min)/(max + min)`: half-width of the tightest band around
    /// `reference` holding every ratio, relative to `reference`.
    pub max_deviation: f64,
    /// `ratio(μ_max) / ratio(μ_prev)` on the finest mesh.
    pub top_mu_growth: f64,
    pub pass: bool,
}

/// Runs [`helmholtz_h1_check`] over meshes × μ values; passes when every max
/// ratio lies within `±tol` of a common centre. `make_mesh`
/// builds the mesh for a given cell count.
pub fn helmholtz_stability_study<F>(
    make_mesh: F,
    cells: &[usize],
    mus: &[f64],
    d: f64,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<HelmholtzStudy>
where
    F: Fn(usize) -> Result<Mesh> + Sync,
{
    if cells.is_empty() || mus.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one mesh and one mu".into(),
        ));
    }
    let jobs: Vec<(usize, f64)> = cells
        .iter()
        .flat_map(|&c| mus.iter().map(move |&m| (c, m)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(c, mu)| {
            let mesh = make_mesh(c)?;
            helmholtz_h1_check(&mesh, d, mu, trials, seed, HELMHOLTZ_MU0.min(mu.abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = results
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
            (a.min(r.max_ratio), b.max(r.max_ratio))
        });
    let reference = 0.5 * (lo + hi);
    let max_deviation = (hi - lo) / (hi + lo);
    let finest: Vec<&HelmholtzResult> = results.iter().rev().take(mus.len()).collect();
    let top_mu_growth = if finest.len() >= 2 {
        finest[0].max_ratio / finest[1].max_ratio
    } else {
        1.0
    };
    Ok(HelmholtzStudy {
        pass: reference > 0.0 && max_deviation <= tol,
        results,
        reference,
        max_deviation,
        top_mu_growth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{apply_generator, assemble_operators};
    use crate::geometry::{build_interval_mesh, build_square_mesh, DampingField};
    use faer::Side;
    use std::sync::Arc;

    fn ops_1d(n: usize, d: f64) -> OperatorSet {
        let mesh = Arc::new(build_interval_mesh(n, 0.3, 0.7).unwrap());
        let omega = mesh.omega;
        assemble_operators(mesh, DampingField::new(d, omega).unwrap()).unwrap()
    }

    fn ops_2d(n: usize, d: f64) -> OperatorSet {
        let mesh = Arc::new(build_square_mesh(n, 0.25, 0.75, 0.375, 0.75).unwrap());
        let omega = mesh.omega;
        assemble_operators(mesh, DampingField::new(d, omega).unwrap()).unwrap()
    }

    /// `±θ_n^{1/2}` from a dense symmetric eigensolve of `M^{-1/2} K M^{-1/2}`.
    fn undamped_frequencies(ops: &OperatorSet) -> Vec<f64> {
        let l = ops.m.to_dense().llt(Side::Lower).unwrap().L().to_owned();
        let mut c = ops.k.to_dense();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            l.as_ref(),
            c.as_mut(),
            faer::Par::Seq,
        );
        let mut c = c.transpose().to_owned();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            l.as_ref(),
            c.as_mut(),
            faer::Par::Seq,
        );
        c.self_adjoint_eigenvalues(Side::Lower)
            .unwrap()
            .into_iter()
            .map(f64::sqrt)
            .collect()
    }

    #[test]
    fn undamped_norm_is_inverse_distance() {
        let ops = ops_1d(40, 0.0);
        let freqs = undamped_frequencies(&ops);
        for method in [ResolventMethod::DenseSvd, ResolventMethod::InverseIteration] {
            let eval = ResolventEvaluator::new(&ops, method).unwrap();
            for mu in [PI_HALF, 5.0, 11.3, 27.0] {
                let s = eval.norm(mu).unwrap();
                let dist = freqs
                    .iter()
                    .map(|w| (w - mu.abs()).abs())
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    (s.norm * dist - 1.0).abs() < 1e-6,
                    "{method:?} {mu}: {}",
                    s.norm * dist
                );
            }
        }
        let s = resolvent_norm(&ops, PI_HALF).unwrap();
        assert!((s.norm - 2.0 / std::f64::consts::PI).abs() < 1e-3);
    }

    const PI_HALF: f64 = std::f64::consts::FRAC_PI_2;

    #[test]
    fn dense_and_iterative_agree_when_damped() {
        for ops in [ops_1d(50, 1.0), ops_2d(8, 1.0)] {
            let dense = ResolventEvaluator::new(&ops, ResolventMethod::DenseSvd).unwrap();
            let iter = ResolventEvaluator::new(&ops, ResolventMethod::InverseIteration).unwrap();
            for mu in [0.0, 3.0, 12.0] {
                let a = dense.norm(mu).unwrap();
                let b = iter.norm(mu).unwrap();
                assert_eq!(b.flag, SampleFlag::Ok);
                assert!(
                    (a.norm / b.norm - 1.0).abs() < 1e-6,
                    "{mu}: {} vs {}",
                    a.norm,
                    b.norm
                );
            }
        }
    }

    #[test]
    fn mu_zero_is_inverse_generator_norm() {
        let ops = ops_1d(30, 1.0);
        let s = resolvent_norm(&ops, 0.0).unwrap();
        assert!(s.norm.is_finite() && s.norm > 0.0);
        // lower bound from one application of A_h⁻¹
        let (f, g) = random_rhs(ops.n_dof, 1);
        let y = State { u: f, v: g };
        let z = crate::assembly::apply_generator_inverse(&ops, &y).unwrap();
        assert!(ops.h_norm(&z) / ops.h_norm(&y) <= s.norm * (1.0 + 1e-10));
    }

    #[test]
    fn adjoint_is_g_adjoint() {
        let ops = ops_2d(8, 1.3);
        let mu = 4.0;
        let fwd = ShiftedSolver::new(&ops, Complex64::new(0.0, mu)).unwrap();
        let adj = AdjointSolver::new(&ops, mu).unwrap();
        let (a, b) = random_rhs(ops.n_dof, 2);
        let (c, d) = random_rhs(ops.n_dof, 3);
        let x = State { u: a, v: b };
        let y = State { u: c, v: d };
        let lhs = ops.g_inner(&fwd.solve(&x).unwrap(), &y);
        let rhs = ops.g_inner(&x, &adj.solve(&y));
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
    }

    #[test]
    fn eigenvalue_hit_is_flagged() {
        let ops = ops_1d(4, 0.0);
        let h: f64 = 0.25;
        let pi = std::f64::consts::PI;
        let theta = 6.0 / (h * h) * (1.0 - (pi * h).cos()) / (2.0 + (pi * h).cos());
        for method in [ResolventMethod::DenseSvd, ResolventMethod::InverseIteration] {
            let s = ResolventEvaluator::new(&ops, method)
                .unwrap()
                .norm(theta.sqrt())
                .unwrap();
            assert_eq!(s.flag, SampleFlag::EigenvalueHit, "{method:?} {}", s.norm);
            assert!(s.norm.is_infinite());
        }
    }

    #[test]
    fn envelope_covers_samples() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|t| 0.3 * t + (3.0 * t).sin()).collect();
        let fit = fit_envelope(&x, &y);
        assert!(fit.min_slack(&x, &y) >= -1e-12);
        assert!(fit.min_slack(&x, &y) <= 1e-9);
        assert!(fit.c2 >= 0.0);
        assert!((fit.c2 - 0.3).abs() < 0.1);
    }

    #[test]
    fn envelope_of_a_line_is_the_line() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|t| 1.5 + 0.25 * t).collect();
        let fit = fit_envelope(&x, &y);
        assert!((fit.c1 - 1.5).abs() < 1e-9 && (fit.c2 - 0.25).abs() < 1e-9);
    }

    #[test]
    fn envelope_degenerate_and_decreasing() {
        let fit = fit_envelope(&[0.0], &[2.0]);
        assert!(fit.degenerate && fit.c2 == 0.0 && fit.c1 == 2.0);
        let fit = fit_envelope(&[0.0, 1.0, 2.0], &[3.0, 2.0, 1.0]);
        assert_eq!(fit.c2, 0.0);
        assert_eq!(fit.c1, 3.0);
    }

    #[test]
    fn growth_exponent_of_power_law() {
        let x: Vec<f64> = (1..40).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|t| 2.0 * t.ln() + 0.1).collect();
        let fit = fit_envelope(&x, &y);
        assert!((fit.growth_exponent.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scan_validates_grid_and_keeps_order() {
        let ops = ops_1d(40, 1.0);
        assert!(scan_resolvent(&ops, &[], ResolventMethod::Auto).is_err());
        assert!(scan_resolvent(&ops, &[1.0, 1.0], ResolventMethod::Auto).is_err());
        assert!(scan_resolvent(&ops, &[30.0], ResolventMethod::Auto).is_err());
        let grid = [5.0, 0.0, 2.5];
        let scan = scan_resolvent(&ops, &grid, ResolventMethod::Auto).unwrap();
        assert_eq!(scan.mu_values(), grid.to_vec());
        assert!(scan.min_slack() >= -1e-12);
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next(), Some("mu,norm,flag"));
        assert_eq!(s.lines().count(), 4);
    }

    #[test]
    fn constant_grid_is_degenerate() {
        let ops = ops_1d(20, 1.0);
        let scan = scan_resolvent(&ops, &[0.0], ResolventMethod::Auto).unwrap();
        assert!(scan.fit.degenerate);
        assert_eq!(scan.fit.c2, 0.0);
    }

    #[test]
    fn norm_stays_bounded_when_every_ray_meets_the_damping() {
        // in 1D the damped interval separates the two elastic pieces
        let ops = ops_1d(100, 1.0);
        let norms: Vec<f64> = [5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|&mu| resolvent_norm(&ops, mu).unwrap().norm)
            .collect();
        assert!(norms.iter().all(|&x| x < 2.0), "{norms:?}");
    }

    #[test]
    fn monolithic_contracts() {
        let ops = ops_2d(10, 1.0);
        let zero = vec![Complex64::new(0.0, 0.0); ops.n_dof];
        let z = monolithic_resolvent_solve(&ops, 3.0, &zero, &zero).unwrap();
        assert!(z.u.iter().chain(&z.v).all(|x| x.norm() == 0.0));
        let (f, g) = random_rhs(ops.n_dof, 9);
        let mu = 7.0;
        let z = monolithic_resolvent_solve(&ops, mu, &f, &g).unwrap();
        for i in 0..ops.n_dof {
            assert!((z.v[i] - (I * mu * z.u[i] + f[i])).norm() <= 1e-12 * (1.0 + z.v[i].norm()));
        }
        let az = apply_generator(&ops, &z).unwrap();
        let res = az
            .sub(&z.mul_scalar(I * mu))
            .sub(&State { u: f, v: g.clone() });
        assert!(ops.h_norm(&res) <= 1e-9 * ops.h_norm(&State { u: g.clone(), v: g }));
    }

    #[test]
    fn monolithic_flags_undamped_resonance() {
        let ops = ops_1d(4, 0.0);
        let h: f64 = 0.25;
        let pi = std::f64::consts::PI;
        let theta = 6.0 / (h * h) * (1.0 - (pi * h).cos()) / (2.0 + (pi * h).cos());
        let (f, g) = random_rhs(ops.n_dof, 1);
        assert!(monolithic_resolvent_solve(&ops, theta.sqrt(), &f, &g).is_err());
    }

    #[test]
    fn transmission_matches_monolithic() {
        for ops in [ops_1d(60, 1.0), ops_2d(12, 0.8)] {
            for (seed, mu) in [(1, 1.0), (2, 10.0), (3, 15.0)] {
                let (f, g) = random_rhs(ops.n_dof, seed);
                let r = transmission_equivalence(&ops, mu, &f, &g).unwrap();
                assert!(r <= 1e-9, "mu {mu}: {r}");
                let t = solve_transmission(&ops, mu, &f, &g).unwrap();
                assert!(t.flux_jump <= 1e-9, "flux {}", t.flux_jump);
                // jump datum φ = d f + idμ u on I
                for &(k, phi) in &t.phi {
                    let i = ops.mesh.dof_of_node(k).unwrap();
                    let expect = ops.damping.d * f[i] + I * (ops.damping.d * mu) * t.state.u[i];
                    assert!((phi - expect).norm() <= 1e-10 * (1.0 + expect.norm()));
                }
            }
        }
    }

    #[test]
    fn transmission_reconstruction_on_damped_nodes() {
        let ops = ops_1d(50, 1.0);
        let (f, g) = random_rhs(ops.n_dof, 4);
        let mu = 6.0;
        let mono = monolithic_resolvent_solve(&ops, mu, &f, &g).unwrap();
        let t = solve_transmission(&ops, mu, &f, &g).unwrap();
        let kinds = classify_nodes(&ops.mesh);
        let c = Complex64::new(1.0, ops.damping.d * mu);
        for (k, kind) in kinds.iter().enumerate() {
            if *kind == NodeKind::OmegaInterior || *kind == NodeKind::Interface {
                let i = ops.mesh.dof_of_node(k).unwrap();
                let u1 = (t.w1[k] - ops.damping.d * f[i]) / c;
                assert!((u1 - mono.u[i]).norm() <= 1e-10 * (1.0 + mono.u[i].norm()));
            }
        }
        // w2 vanishes on Γ
        for &b in &ops.mesh.boundary_nodes {
            assert_eq!(t.w2[b].norm(), 0.0);
        }
    }

    #[test]
    fn transmission_of_zero_data() {
        let ops = ops_1d(20, 1.0);
        let zero = vec![Complex64::new(0.0, 0.0); ops.n_dof];
        let t = solve_transmission(&ops, 5.0, &zero, &zero).unwrap();
        assert!(t.w1.iter().chain(&t.w2).all(|x| x.norm() == 0.0));
        assert_eq!(
            transmission_equivalence(&ops, 5.0, &zero, &zero).unwrap(),
            0.0
        );
    }

    #[test]
    fn dissipation_ratio_is_bounded_and_decays() {
        let ops = ops_1d(80, 1.0);
        let study =
            interface_dissipation_study(&ops, &[1.0, 2.0, 5.0, 10.0, 20.0, 40.0], 5, 11).unwrap();
        assert!(study.pass);
        assert!(study.per_mu.first().unwrap().1 > study.per_mu.last().unwrap().1);
    }

    #[test]
    fn helmholtz_ratio_is_stable() {
        let make = |c: usize| build_interval_mesh(c, 0.3, 0.7);
        let study =
            helmholtz_stability_study(make, &[50, 100], &[10.0, 20.0, 40.0], 1.0, 20, 3, 0.2)
                .unwrap();
        assert!(study.pass, "{:?}", study.results);
        assert!(study.top_mu_growth <= 1.2);
    }

    #[test]
    fn helmholtz_below_mu0_is_rejected() {
        let mesh = build_interval_mesh(50, 0.3, 0.7).unwrap();
        assert!(helmholtz_h1_check(&mesh, 1.0, 5.0, 3, 0, HELMHOLTZ_MU0).is_err());
        let r = helmholtz_h1_check(&mesh, 1.0, 20.0, 0, 0, HELMHOLTZ_MU0).unwrap();
        assert_eq!(r.trials_used, 0);
    }

    #[test]
    fn helmholtz_2d_runs() {
        let mesh = build_square_mesh(16, 0.25, 0.75, 0.25, 0.75).unwrap();
        let r = helmholtz_h1_check(&mesh, 1.0, 10.0, 5, 1, HELMHOLTZ_MU0).unwrap();
        assert_eq!(r.trials_used, 5);
        assert!(r.max_ratio.is_finite() && r.max_ratio > 0.0);
    }
}
