//! Spectrum of the damped generator via the pencil `λ²M + λD + K`.

use std::io::Write;

use faer::Mat;
use num_complex::Complex64;
use serde::Serialize;

use crate::assembly::{EnergyFrame, OperatorSet, ShiftedSolver, State, DENSE_DOF_LIMIT};
use crate::error::{Error, Result};
use crate::geometry::OmegaDescriptor;
use crate::linalg;

/// Scaled pencil residual above which an eigenpair is tagged UNTRUSTED.
pub const UNTRUSTED_RESIDUAL: f64 = 1e-6;
/// Default tolerance of [`verify_strong_stability`].
pub const STRONG_STABILITY_TOL: f64 = 1e-10;
/// Fraction of the wavenumber range kept for band statistics.
pub const BAND_KEEP_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumProvenance {
    pub dim: usize,
    pub n_cells: usize,
    pub n_dof: usize,
    pub d: f64,
    pub omega: OmegaDescriptor,
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    /// `‖(λ²M+λD+K)u‖ / ((‖K‖ + |λ|‖D‖ + |λ|²‖M‖)‖u‖)`.
    pub residuals: Vec<f64>,
    pub trusted: Vec<bool>,
    /// Spatial wavenumber `(uᴴKu / uᴴMu)^{1/2}` of each eigenvector.
    pub wavenumbers: Vec<f64>,
    pub provenance: SpectrumProvenance,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn trusted_eigenvalues(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.eigenvalues
            .iter()
            .zip(&self.trusted)
            .filter(|(_, &t)| t)
            .map(|(&l, _)| l)
    }

    pub fn max_real_part(&self) -> f64 {
        self.trusted_eigenvalues()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// `max_λ min_μ |conj(λ) − μ|`.
    pub fn conjugation_defect(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| {
                self.eigenvalues
                    .iter()
                    .map(|m| (l.conj() - m).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    /// CSV `re,im,residual,trusted`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "re,im,residual,trusted")?;
        for i in 0..self.len() {
            let l = self.eigenvalues[i];
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{}",
                l.re, l.im, self.residuals[i], self.trusted[i]
            )?;
        }
        Ok(())
    }
}

fn provenance(ops: &OperatorSet) -> SpectrumProvenance {
    SpectrumProvenance {
        dim: ops.mesh.dim,
        n_cells: ops.mesh.n_cells,
        n_dof: ops.n_dof,
        d: ops.damping.d,
        omega: ops.damping.omega,
    }
}

struct PencilNorms {
    k: f64,
    d: f64,
    m: f64,
}

fn pencil_check(
    ops: &OperatorSet,
    norms: &PencilNorms,
    lambda: Complex64,
    u: &[Complex64],
) -> (f64, f64) {
    let ku = ops.k.mul_vec(u);
    let du = ops.d.mul_vec(u);
    let mu = ops.m.mul_vec(u);
    let r: Vec<Complex64> = (0..u.len())
        .map(|i| lambda * lambda * mu[i] + lambda * du[i] + ku[i])
        .collect();
    let a = lambda.norm();
    let unorm = linalg::norm2(u);
    let scale = (norms.k + a * norms.d + a * a * norms.m) * unorm;
    let residual = if scale > 0.0 {
        linalg::norm2(&r) / scale
    } else {
        f64::INFINITY
    };
    let kq = linalg::dot(&ku, u).re;
    let mq = linalg::dot(&mu, u).re;
    (residual, (kq / mq).max(0.0).sqrt())
}

fn assemble_spectrum(ops: &OperatorSet, pairs: Vec<(Complex64, Vec<Complex64>)>) -> Spectrum {
    let norms = PencilNorms {
        k: ops.k.norm_inf(),
        d: ops.d.norm_inf(),
        m: ops.m.norm_inf(),
    };
    let mut eigenvalues = Vec::with_capacity(pairs.len());
    let mut residuals = Vec::with_capacity(pairs.len());
    let mut trusted = Vec::with_capacity(pairs.len());
    let mut wavenumbers = Vec::with_capacity(pairs.len());
    for (lambda, u) in pairs {
        let (res, kappa) = pencil_check(ops, &norms, lambda, &u);
        eigenvalues.push(lambda);
        residuals.push(res);
        trusted.push(res <= UNTRUSTED_RESIDUAL);
        wavenumbers.push(kappa);
    }
    Spectrum {
        eigenvalues,
        residuals,
        trusted,
        wavenumbers,
        provenance: provenance(ops),
    }
}

/// All `2·n_dof` eigenvalues, dense.
pub fn solve_qep(ops: &OperatorSet) -> Result<Spectrum> {
    if ops.n_dof > DENSE_DOF_LIMIT {
        return Err(Error::TooLarge {
            n: ops.n_dof,
            max: DENSE_DOF_LIMIT,
        });
    }
    let frame = EnergyFrame::new(ops)?;
    let evd = frame
        .a_hat
        .eigen()
        .map_err(|e| Error::Eigen(format!("dense eigensolver did not converge: {e:?}")))?;
    let s = evd.S();
    let vecs = evd.U();
    let n2 = 2 * ops.n_dof;
    let pairs = (0..n2)
        .map(|j| {
            let coords: Vec<Complex64> = (0..n2).map(|i| vecs[(i, j)]).collect();
            let z = frame.to_state(&coords);
            (s[j], z.u)
        })
        .collect();
    Ok(assemble_spectrum(ops, pairs))
}

/// Eigenvalues nearest `target` by shift-invert Arnoldi on `(A_h − σ)⁻¹`.
///
/// No restarts: `krylov_dim` bounds the work and must exceed `nev`.
pub fn shift_invert_eigs(
    ops: &OperatorSet,
    target: Complex64,
    nev: usize,
    krylov_dim: usize,
) -> Result<Spectrum> {
    let n = ops.n_dof;
    let m = krylov_dim.min(2 * n);
    if nev == 0 || nev > m {
        return Err(Error::InvalidArgument(format!(
            "need 0 < nev <= krylov_dim, got nev = {nev}, krylov_dim = {m}"
        )));
    }
    let solver = ShiftedSolver::new(ops, target)?;
    let zero = Complex64::new(0.0, 0.0);
    let split = |x: &[Complex64]| State {
        u: x[..n].to_vec(),
        v: x[n..].to_vec(),
    };
    let join = |z: State<Complex64>| {
        let mut x = z.u;
        x.extend(z.v);
        x
    };

    // deterministic start vector with all modes present
    let mut q0: Vec<Complex64> = (0..2 * n)
        .map(|i| Complex64::new(1.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
        .collect();
    let s0 = linalg::norm2(&q0);
    q0.iter_mut().for_each(|x| *x /= s0);
    let mut basis = vec![q0];
    let mut hess = Mat::<Complex64>::zeros(m + 1, m);
    let mut steps = m;
    for j in 0..m {
        let mut w = join(solver.solve(&split(&basis[j]))?);
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = linalg::dot(&w, q);
                hess[(i, j)] += c;
                linalg::axpy(-c, q, &mut w);
            }
        }
        let beta = linalg::norm2(&w);
        hess[(j + 1, j)] = Complex64::new(beta, 0.0);
        if beta < 1e-14 {
            steps = j + 1;
            break;
        }
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }
    let h = hess.get(0..steps, 0..steps).to_owned();
    let evd = h
        .eigen()
        .map_err(|e| Error::Eigen(format!("Hessenberg eigensolver failed: {e:?}")))?;
    let mut ritz: Vec<(Complex64, Vec<Complex64>)> = (0..steps)
        .filter(|&j| evd.S()[j].norm() > 0.0)
        .map(|j| {
            let theta = evd.S()[j];
            let mut y = vec![zero; 2 * n];
            for i in 0..steps {
                linalg::axpy(evd.U()[(i, j)], &basis[i], &mut y);
            }
            (target + theta.inv(), y[..n].to_vec())
        })
        .collect();
    ritz.sort_by(|a, b| (a.0 - target).norm().total_cmp(&(b.0 - target).norm()));
    ritz.truncate(nev);
    Ok(assemble_spectrum(ops, ritz))
}

#[derive(Debug, Clone, Serialize)]
pub struct Band {
    pub j: u32,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` when no trusted eigenvalue falls in the band.
    pub abscissa: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BandReport {
    pub bands: Vec<Band>,
    /// Wavenumber cutoff applied before binning.
    pub cutoff: f64,
    /// Strict increase over the last three present bands with the last
    /// abscissa at most 0.9 times the first in magnitude.
    pub trend: bool,
}

impl BandReport {
    pub fn present(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.bands
            .iter()
            .filter_map(|b| b.abscissa.map(|a| (b.j, a)))
    }
}

/// Per dyadic wavenumber band `[2^j, 2^{j+1})`, `j ≤ j_max`, the largest `Re λ`.
///
/// Eigenpairs are keyed by spatial wavenumber rather than `Im λ` so that
/// overdamped (real) branches are binned with the modes they come from.
pub fn band_abscissa(spec: &Spectrum, j_max: u32) -> Result<BandReport> {
    if spec.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    let kmax = spec
        .wavenumbers
        .iter()
        .zip(&spec.trusted)
        .filter(|(_, &t)| t)
        .map(|(&k, _)| k)
        .fold(0.0, f64::max);
    let cutoff = BAND_KEEP_FRACTION * kmax;
    let mut bands: Vec<Band> = (0..=j_max)
        .map(|j| Band {
            j,
            lo: 2f64.powi(j as i32),
            hi: 2f64.powi(j as i32 + 1),
            count: 0,
            abscissa: None,
        })
        .collect();
    for i in 0..spec.len() {
        let k = spec.wavenumbers[i];
        if !spec.trusted[i] || k > cutoff || k < 1.0 {
            continue;
        }
        let j = k.log2().floor() as usize;
        if let Some(b) = bands.get_mut(j) {
            b.count += 1;
            let re = spec.eigenvalues[i].re;
            b.abscissa = Some(b.abscissa.map_or(re, |a: f64| a.max(re)));
        }
    }
    let present: Vec<f64> = bands.iter().filter_map(|b| b.abscissa).collect();
    let trend = present.len() >= 3 && {
        let last = &present[present.len() - 3..];
        last[0] < last[1] && last[1] < last[2] && last[2].abs() <= 0.9 * last[0].abs()
    };
    Ok(BandReport {
        bands,
        cutoff,
        trend,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub pass: bool,
    pub no_data: bool,
    pub checked: usize,
    pub offenders: Vec<(f64, f64)>,
    pub max_real_part: f64,
}

/// PASS iff every trusted eigenvalue has `Re λ < −tol·(1+|λ|)`.
pub fn verify_strong_stability(spec: &Spectrum, tol: f64) -> StabilityReport {
    let mut offenders = Vec::new();
    let mut checked = 0;
    let mut max_re = f64::NEG_INFINITY;
    for l in spec.trusted_eigenvalues() {
        checked += 1;
        max_re = max_re.max(l.re);
        if l.re >= -tol * (1.0 + l.norm()) {
            offenders.push((l.re, l.im));
        }
    }
    StabilityReport {
        pass: offenders.is_empty(),
        no_data: checked == 0,
        checked,
        offenders,
        max_real_part: max_re,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_operators;
    use crate::geometry::{
        build_fully_damped_interval, build_interval_mesh, build_square_mesh, DampingField,
    };
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn ops_1d(n: usize, d: f64) -> OperatorSet {
        let mesh = Arc::new(build_interval_mesh(n, 0.3, 0.7).unwrap());
        let omega = mesh.omega;
        assemble_operators(mesh, DampingField::new(d, omega).unwrap()).unwrap()
    }

    fn fully_damped(n: usize, d: f64) -> OperatorSet {
        let mesh = Arc::new(build_fully_damped_interval(n).unwrap());
        assemble_operators(mesh, DampingField::new(d, OmegaDescriptor::Whole).unwrap()).unwrap()
    }

    fn closest(spec: &Spectrum, z: Complex64) -> Complex64 {
        *spec
            .eigenvalues
            .iter()
            .min_by(|a, b| (**a - z).norm().total_cmp(&(**b - z).norm()))
            .unwrap()
    }

    #[test]
    fn undamped_lowest_pair() {
        let spec = solve_qep(&ops_1d(100, 0.0)).unwrap();
        assert_eq!(spec.len(), 2 * 99);
        for s in [1.0, -1.0] {
            let l = closest(&spec, Complex64::new(0.0, s * PI));
            assert!((l - Complex64::new(0.0, s * PI)).norm() < 1e-3 * PI);
        }
        assert!(spec.conjugation_defect() < 1e-8);
        assert!(spec.max_residual() < 1e-8);
    }

    #[test]
    fn fully_damped_first_mode_roots() {
        let spec = solve_qep(&fully_damped(60, 1.0)).unwrap();
        let disc = (PI.powi(4) - 4.0 * PI * PI).sqrt();
        for root in [(-PI * PI + disc) / 2.0, (-PI * PI - disc) / 2.0] {
            let l = closest(&spec, Complex64::new(root, 0.0));
            assert!(
                (l.re / root - 1.0).abs() < 0.02 && l.im.abs() < 1e-6,
                "{l} vs {root}"
            );
        }
    }

    #[test]
    fn damped_spectrum_in_left_half_plane() {
        for ops in [ops_1d(60, 1.0), {
            let mesh = Arc::new(build_square_mesh(10, 0.3, 0.7, 0.3, 0.7).unwrap());
            let omega = mesh.omega;
            assemble_operators(mesh, DampingField::new(1.0, omega).unwrap()).unwrap()
        }] {
            let spec = solve_qep(&ops).unwrap();
            assert_eq!(spec.len(), 2 * ops.n_dof);
            assert!(spec.trusted.iter().all(|&t| t));
            assert!(spec.max_real_part() < 0.0);
            assert!(spec.conjugation_defect() < 1e-8);
            assert!(spec.max_residual() < 1e-8);
            let rep = verify_strong_stability(&spec, STRONG_STABILITY_TOL);
            assert!(rep.pass && !rep.no_data);
        }
    }

    #[test]
    fn undamped_fails_strong_stability_everywhere() {
        let spec = solve_qep(&ops_1d(40, 0.0)).unwrap();
        let rep = verify_strong_stability(&spec, STRONG_STABILITY_TOL);
        assert!(!rep.pass);
        assert_eq!(rep.offenders.len(), spec.len());
    }

    #[test]
    fn empty_spectrum_is_vacuous_pass() {
        let spec = Spectrum {
            eigenvalues: vec![],
            residuals: vec![],
            trusted: vec![],
            wavenumbers: vec![],
            provenance: provenance(&ops_1d(10, 1.0)),
        };
        let rep = verify_strong_stability(&spec, STRONG_STABILITY_TOL);
        assert!(rep.pass && rep.no_data);
        assert!(band_abscissa(&spec, 8).is_err());
    }

    #[test]
    fn small_damping_is_continuous() {
        let ops0 = ops_1d(40, 0.0);
        let ops = ops_1d(40, 1e-6);
        let s0 = solve_qep(&ops0).unwrap();
        let s = solve_qep(&ops).unwrap();
        // the shift grows like d·|λ|²/2, so only the resolved low modes are compared
        for &l in s0.eigenvalues.iter().filter(|l| l.norm() <= 10.0) {
            assert!((closest(&s, l) - l).norm() < 1e-4);
        }
    }

    #[test]
    fn fully_damped_bands_approach_minus_inverse_d() {
        let spec = solve_qep(&fully_damped(120, 1.0)).unwrap();
        let rep = band_abscissa(&spec, 12).unwrap();
        let present: Vec<f64> = rep.present().map(|(_, a)| a).collect();
        let last = *present.last().unwrap();
        assert!((last + 1.0).abs() < 0.05, "{present:?}");
        assert!(!rep.trend);
    }

    #[test]
    fn band_binning_and_cutoff() {
        let spec = solve_qep(&ops_1d(80, 1.0)).unwrap();
        let rep = band_abscissa(&spec, 12).unwrap();
        let total: usize = rep.bands.iter().map(|b| b.count).sum();
        let expected = spec
            .wavenumbers
            .iter()
            .filter(|&&k| k >= 1.0 && k <= rep.cutoff)
            .count();
        assert_eq!(total, expected);
        for b in &rep.bands {
            if let Some(a) = b.abscissa {
                assert!(a <= 1e-8);
            }
        }
    }

    #[test]
    fn shift_invert_matches_dense() {
        let ops = ops_1d(60, 1.0);
        let dense = solve_qep(&ops).unwrap();
        let target = Complex64::new(0.0, 30.0);
        let near = shift_invert_eigs(&ops, target, 4, 40).unwrap();
        assert_eq!(near.len(), 4);
        for &l in &near.eigenvalues {
            assert!(
                (closest(&dense, l) - l).norm() < 1e-8 * (1.0 + l.norm()),
                "{l}"
            );
        }
        // and they are the four closest
        let mut d: Vec<f64> = dense
            .eigenvalues
            .iter()
            .map(|l| (l - target).norm())
            .collect();
        d.sort_by(f64::total_cmp);
        let far = near
            .eigenvalues
            .iter()
            .map(|l| (l - target).norm())
            .fold(0.0, f64::max);
        assert!((far - d[3]).abs() < 1e-8);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let spec = solve_qep(&ops_1d(10, 1.0)).unwrap();
        let mut buf = Vec::new();
        spec.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next(), Some("re,im,residual,trusted"));
        assert_eq!(s.lines().count(), 1 + spec.len());
    }
}
