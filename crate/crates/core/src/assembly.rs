//! P1 operators on the energy space H¹₀ × L² and the discrete generator.

use std::sync::Arc;

use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Mat, Par, Side};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{DampingField, Mesh, OmegaDescriptor, Region};
use crate::linalg::{self, BandLu, BandMatrix, CsrMatrix, Scalar};

/// Largest `n_dof` accepted by the dense energy-frame routines.
pub const DENSE_DOF_LIMIT: usize = 2000;

/// Element stiffness and mass matrices (row-major, `m × m` with `m = dim + 1`).
pub fn element_matrices(mesh: &Mesh, e: usize) -> (Vec<f64>, Vec<f64>) {
    let el = &mesh.elements[e];
    let meas = mesh.element_measure(e);
    match mesh.dim {
        1 => {
            let h = meas;
            (
                vec![1.0 / h, -1.0 / h, -1.0 / h, 1.0 / h],
                vec![h / 3.0, h / 6.0, h / 6.0, h / 3.0],
            )
        }
        _ => {
            let p: Vec<[f64; 2]> = el.iter().map(|&v| mesh.nodes[v]).collect();
            // ∇φ_i = rot90(opposite edge) / (2·area)
            let grads: Vec<[f64; 2]> = (0..3)
                .map(|i| {
                    let a = p[(i + 1) % 3];
                    let b = p[(i + 2) % 3];
                    [(a[1] - b[1]) / (2.0 * meas), (b[0] - a[0]) / (2.0 * meas)]
                })
                .collect();
            let mut k = vec![0.0; 9];
            let mut m = vec![0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    k[3 * i + j] = meas * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                    m[3 * i + j] = meas / 12.0 * if i == j { 2.0 } else { 1.0 };
                }
            }
            (k, m)
        }
    }
}

/// Coefficient pair `(u, v)` in the energy space.
#[derive(Debug, Clone, PartialEq)]
pub struct State<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> State<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            u: self.u.iter().map(|x| x.scale(s)).collect(),
            v: self.v.iter().map(|x| x.scale(s)).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            u: self.u.iter().zip(&other.u).map(|(&a, &b)| a - b).collect(),
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        linalg::is_finite(&self.u) && linalg::is_finite(&self.v)
    }
}

impl State<Complex64> {
    pub fn mul_scalar(&self, s: Complex64) -> Self {
        Self {
            u: self.u.iter().map(|&x| x * s).collect(),
            v: self.v.iter().map(|&x| x * s).collect(),
        }
    }
}

impl State<f64> {
    pub fn to_complex(&self) -> State<Complex64> {
        State {
            u: linalg::to_complex(&self.u),
            v: linalg::to_complex(&self.v),
        }
    }
}

/// Assembled operators for one mesh and damping field.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub mesh: Arc<Mesh>,
    pub damping: DampingField,
    pub m: CsrMatrix,
    pub k: CsrMatrix,
    /// d × stiffness over DAMPED elements.
    pub d: CsrMatrix,
    pub n_dof: usize,
    m_lu: BandLu<f64>,
    k_lu: BandLu<f64>,
}

fn check_pairing(mesh: &Mesh, damping: &DampingField) -> Result<()> {
    match damping.omega {
        OmegaDescriptor::Whole => {
            if !mesh.is_fully_damped() {
                return Err(Error::Inconsistent(
                    "fully damped field paired with a mesh that has an elastic part".into(),
                ));
            }
        }
        omega => {
            if omega.dim() != Some(mesh.dim) {
                return Err(Error::Inconsistent(format!(
                    "{}D damping region on a {}D mesh",
                    omega.dim().unwrap_or(0),
                    mesh.dim
                )));
            }
            for e in 0..mesh.elements.len() {
                let inside = omega.contains(mesh.element_centroid(e));
                if inside != (mesh.element_region[e] == Region::Damped) {
                    return Err(Error::Inconsistent(format!(
                        "element {e} is tagged {:?} but the damping region says otherwise",
                        mesh.element_region[e]
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn assemble_operators(mesh: Arc<Mesh>, damping: DampingField) -> Result<OperatorSet> {
    check_pairing(&mesh, &damping)?;
    let mut tm = Vec::new();
    let mut tk = Vec::new();
    let mut td = Vec::new();
    for e in 0..mesh.elements.len() {
        let (ke, me) = element_matrices(&mesh, e);
        let el = &mesh.elements[e];
        let m = el.len();
        let damped = mesh.element_region[e] == Region::Damped;
        for p in 0..m {
            let Some(i) = mesh.dof_of_node(el[p]) else {
                continue;
            };
            for q in 0..m {
                let Some(j) = mesh.dof_of_node(el[q]) else {
                    continue;
                };
                tk.push((i, j, ke[m * p + q]));
                tm.push((i, j, me[m * p + q]));
                if damped && damping.d != 0.0 {
                    td.push((i, j, damping.d * ke[m * p + q]));
                }
            }
        }
    }
    let n = mesh.n_dof();
    let m = CsrMatrix::from_triplets(n, &tm);
    let k = CsrMatrix::from_triplets(n, &tk);
    let d = CsrMatrix::from_triplets(n, &td);
    let m_lu = BandMatrix::from_combination(&[(1.0, &m)]).factor()?;
    let k_lu = BandMatrix::from_combination(&[(1.0, &k)]).factor()?;
    Ok(OperatorSet {
        mesh,
        damping,
        m,
        k,
        d,
        n_dof: n,
        m_lu,
        k_lu,
    })
}

/// Solves `M x = b`, real or complex.
pub trait RealSolve<T> {
    fn solve_with(lu: &BandLu<f64>, b: &[T]) -> Vec<T>;
}

impl RealSolve<f64> for f64 {
    fn solve_with(lu: &BandLu<f64>, b: &[f64]) -> Vec<f64> {
        lu.solve(b)
    }
}

impl RealSolve<Complex64> for Complex64 {
    fn solve_with(lu: &BandLu<f64>, b: &[Complex64]) -> Vec<Complex64> {
        lu.solve_complex(b)
    }
}

impl OperatorSet {
    fn check_dim<T>(&self, z: &State<T>) -> Result<()> {
        for len in [z.u.len(), z.v.len()] {
            if len != self.n_dof {
                return Err(Error::Dimension {
                    expected: self.n_dof,
                    got: len,
                });
            }
        }
        Ok(())
    }

    pub fn solve_mass<T: Scalar + RealSolve<T>>(&self, b: &[T]) -> Vec<T> {
        T::solve_with(&self.m_lu, b)
    }

    pub fn solve_stiffness<T: Scalar + RealSolve<T>>(&self, b: &[T]) -> Vec<T> {
        T::solve_with(&self.k_lu, b)
    }

    /// `⟨z₁, z₂⟩_G = z₂ᴴ G z₁` with `G = diag(K, M)`.
    pub fn g_inner<T: Scalar>(&self, z1: &State<T>, z2: &State<T>) -> T {
        linalg::dot(&self.k.mul_vec(&z1.u), &z2.u) + linalg::dot(&self.m.mul_vec(&z1.v), &z2.v)
    }

    /// Energy-space norm `‖z‖_H = (2E)^{1/2}`.
    pub fn h_norm<T: Scalar>(&self, z: &State<T>) -> f64 {
        (self.k.quad_form(&z.u) + self.m.quad_form(&z.v))
            .max(0.0)
            .sqrt()
    }

    /// Dissipation rate `vᴴ D v`.
    pub fn dissipation<T: Scalar>(&self, v: &[T]) -> f64 {
        self.d.quad_form(v)
    }
}

/// `A_h (u, v) = (v, −M⁻¹(K u + D v))`.
pub fn apply_generator<T: Scalar + RealSolve<T>>(
    ops: &OperatorSet,
    z: &State<T>,
) -> Result<State<T>> {
    ops.check_dim(z)?;
    let mut rhs = ops.k.mul_vec(&z.u);
    linalg::axpy(T::from_real(1.0), &ops.d.mul_vec(&z.v), &mut rhs);
    let w = ops.solve_mass(&rhs);
    Ok(State {
        u: z.v.clone(),
        v: w.into_iter().map(|x| -x).collect(),
    })
}

/// `A_h⁻¹ (f, g)`: `v = f`, `K u = −(M g + D f)`.
pub fn apply_generator_inverse<T: Scalar + RealSolve<T>>(
    ops: &OperatorSet,
    y: &State<T>,
) -> Result<State<T>> {
    ops.check_dim(y)?;
    let mut rhs = ops.m.mul_vec(&y.v);
    linalg::axpy(T::from_real(1.0), &ops.d.mul_vec(&y.u), &mut rhs);
    let u = ops.solve_stiffness(&rhs);
    Ok(State {
        u: u.into_iter().map(|x| -x).collect(),
        v: y.u.clone(),
    })
}

/// `E = ½(uᴴKu + vᴴMv)`.
pub fn energy<T: Scalar>(ops: &OperatorSet, z: &State<T>) -> f64 {
    0.5 * (ops.k.quad_form(&z.u) + ops.m.quad_form(&z.v))
}

/// Pivot ratio below which a shifted factorization is reported as near-singular.
pub const NEAR_SINGULAR_PIVOT_RATIO: f64 = 1e-13;

/// Solver for `(A_h − σ) z = y` through the pencil `K + σD + σ²M`:
/// `v = σu + f` and `(K + σD + σ²M) u = −(M g + D f + σ M f)`.
pub struct ShiftedSolver<'a> {
    ops: &'a OperatorSet,
    sigma: Complex64,
    lu: BandLu<Complex64>,
}

impl<'a> ShiftedSolver<'a> {
    pub fn new(ops: &'a OperatorSet, sigma: Complex64) -> Result<Self> {
        let one = Complex64::new(1.0, 0.0);
        let lu = BandMatrix::from_combination(&[
            (one, &ops.k),
            (sigma, &ops.d),
            (sigma * sigma, &ops.m),
        ])
        .factor()?;
        if lu.pivot_ratio() < NEAR_SINGULAR_PIVOT_RATIO {
            return Err(Error::NearSingular(format!(
                "shift {sigma} is numerically an eigenvalue (pivot ratio {:.3e})",
                lu.pivot_ratio()
            )));
        }
        Ok(Self { ops, sigma, lu })
    }

    pub fn sigma(&self) -> Complex64 {
        self.sigma
    }

    pub fn solve(&self, y: &State<Complex64>) -> Result<State<Complex64>> {
        let ops = self.ops;
        ops.check_dim(y)?;
        let s = self.sigma;
        let mf = ops.m.mul_vec(&y.u);
        let mg = ops.m.mul_vec(&y.v);
        let df = ops.d.mul_vec(&y.u);
        let rhs: Vec<Complex64> = (0..ops.n_dof)
            .map(|i| -(mg[i] + df[i] + s * mf[i]))
            .collect();
        let u = self.lu.solve(&rhs);
        let v = u.iter().zip(&y.u).map(|(&ui, &fi)| s * ui + fi).collect();
        Ok(State { u, v })
    }

    /// Relative residual of the second block row, `M·(A_h − σ)z − M·y`, in the
    /// form `−(Ku + Dv) − σMv − Mg`.
    pub fn residual(&self, z: &State<Complex64>, y: &State<Complex64>) -> f64 {
        let ops = self.ops;
        let s = self.sigma;
        let ku = ops.k.mul_vec(&z.u);
        let dv = ops.d.mul_vec(&z.v);
        let mv = ops.m.mul_vec(&z.v);
        let mg = ops.m.mul_vec(&y.v);
        let r: Vec<Complex64> = (0..ops.n_dof)
            .map(|i| -(ku[i] + dv[i]) - s * mv[i] - mg[i])
            .collect();
        let first: Vec<Complex64> = (0..ops.n_dof)
            .map(|i| z.v[i] - s * z.u[i] - y.u[i])
            .collect();
        let scale = linalg::norm2(&ku)
            + linalg::norm2(&dv)
            + s.norm() * linalg::norm2(&mv)
            + linalg::norm2(&mg);
        let scale1 = linalg::norm2(&z.v) + s.norm() * linalg::norm2(&z.u) + linalg::norm2(&y.u);
        let r2 = if scale > 0.0 {
            linalg::norm2(&r) / scale
        } else {
            0.0
        };
        let r1 = if scale1 > 0.0 {
            linalg::norm2(&first) / scale1
        } else {
            0.0
        };
        r1.max(r2)
    }
}

/// Random element of D(A_h^k) with its graph norm.
#[derive(Debug, Clone)]
pub struct DakData {
    pub z: State<f64>,
    /// `(Σ_{j≤k} ‖A_h^j z‖²_H)^{1/2}`.
    pub norm: f64,
    /// `y = A_h^k z`, the unit-norm draw.
    pub y: State<f64>,
}

pub const MAX_DAK_ORDER: usize = 4;

/// Draws `y` with `‖y‖_H = 1` and returns `z = A_h^{-k} y`.
pub fn make_dak_data(ops: &OperatorSet, k: usize, seed: u64) -> Result<DakData> {
    if k > MAX_DAK_ORDER {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the supported maximum {MAX_DAK_ORDER}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ops.n_dof;
    let mut draw = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let raw = State {
        u: draw(),
        v: draw(),
    };
    let y = raw.scaled(1.0 / ops.h_norm(&raw));

    let mut sq = ops.h_norm(&y).powi(2);
    let mut z = y.clone();
    for _ in 0..k {
        z = apply_generator_inverse(ops, &z)?;
        if !z.is_finite() {
            return Err(Error::Singular { row: 0 });
        }
        sq += ops.h_norm(&z).powi(2);
    }
    Ok(DakData {
        z,
        norm: sq.sqrt(),
        y,
    })
}

/// The generator written in energy coordinates `a = R_Kᵀu`, `b = L_Mᵀv`
/// (`K = R_K R_Kᵀ`, `M = L_M L_Mᵀ`):
/// `Â = [[0, Bᵀ], [−B, −L_M⁻¹ D L_M⁻ᵀ]]` with `B = L_M⁻¹ R_K`.
///
/// `Â` is similar to `A_h` and orthogonally equivalent in the G-norm, so its
/// eigenvalues are those of `A_h` and `‖(A_h − iμ)⁻¹‖_G = 1/σ_min(Â − iμ)`.
pub struct EnergyFrame {
    pub a_hat: Mat<f64>,
    r_k: Mat<f64>,
    l_m: Mat<f64>,
}

impl EnergyFrame {
    pub fn new(ops: &OperatorSet) -> Result<Self> {
        let n = ops.n_dof;
        if n > DENSE_DOF_LIMIT {
            return Err(Error::TooLarge {
                n,
                max: DENSE_DOF_LIMIT,
            });
        }
        let chol = |a: &CsrMatrix, what: &str| -> Result<Mat<f64>> {
            a.to_dense()
                .llt(Side::Lower)
                .map(|l| l.L().to_owned())
                .map_err(|e| Error::Eigen(format!("Cholesky of {what} failed: {e:?}")))
        };
        let r_k = chol(&ops.k, "K")?;
        let l_m = chol(&ops.m, "M")?;

        let mut b = r_k.clone();
        solve_lower_triangular_in_place(l_m.as_ref(), b.as_mut(), Par::Seq);
        let mut c = ops.d.to_dense();
        solve_lower_triangular_in_place(l_m.as_ref(), c.as_mut(), Par::Seq);
        let mut c = c.transpose().to_owned();
        solve_lower_triangular_in_place(l_m.as_ref(), c.as_mut(), Par::Seq);

        let mut a_hat = Mat::<f64>::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                a_hat[(i, n + j)] = b[(j, i)];
                a_hat[(n + i, j)] = -b[(i, j)];
                a_hat[(n + i, n + j)] = -c[(i, j)];
            }
        }
        Ok(Self { a_hat, r_k, l_m })
    }

    pub fn dim(&self) -> usize {
        self.r_k.nrows()
    }

    /// Maps energy coordinates `(a, b)` back to `(u, v)`.
    pub fn to_state(&self, coords: &[Complex64]) -> State<Complex64> {
        let n = self.dim();
        assert_eq!(coords.len(), 2 * n);
        let back = |l: &Mat<f64>, part: &[Complex64]| -> Vec<Complex64> {
            let mut x =
                Mat::<f64>::from_fn(n, 2, |i, j| if j == 0 { part[i].re } else { part[i].im });
            solve_upper_triangular_in_place(l.transpose(), x.as_mut(), Par::Seq);
            (0..n)
                .map(|i| Complex64::new(x[(i, 0)], x[(i, 1)]))
                .collect()
        };
        State {
            u: back(&self.r_k, &coords[..n]),
            v: back(&self.l_m, &coords[n..]),
        }
    }

    /// Maps `(u, v)` to energy coordinates `(R_Kᵀu, L_Mᵀv)`.
    pub fn to_coords(&self, z: &State<Complex64>) -> Vec<Complex64> {
        let n = self.dim();
        let fwd = |l: &Mat<f64>, x: &[Complex64]| -> Vec<Complex64> {
            (0..n)
                .map(|i| (i..n).fold(Complex64::new(0.0, 0.0), |acc, j| acc + x[j] * l[(j, i)]))
                .collect()
        };
        let mut out = fwd(&self.r_k, &z.u);
        out.extend(fwd(&self.l_m, &z.v));
        out
    }
}
