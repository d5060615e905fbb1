//! Energy-exact time stepping of `ż = A_h z` and the logarithmic decay proxy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::assembly::{energy, OperatorSet, State};
use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Midpoint,
    BackwardEuler,
}

/// One-step integrator with its system matrix factorized once.
pub struct Stepper<'a> {
    ops: &'a OperatorSet,
    dt: f64,
    scheme: Scheme,
    lu: BandLu<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(ops: &'a OperatorSet, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        Self::with_signed_dt(ops, dt, scheme)
    }

    /// Like [`Stepper::new`] but accepts `dt < 0`, used to run the undamped
    /// midpoint scheme backwards in time.
    pub fn with_signed_dt(ops: &'a OperatorSet, dt: f64, scheme: Scheme) -> Result<Self> {
        if dt == 0.0 || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "dt must be nonzero and finite, got {dt}"
            )));
        }
        let (cd, ck) = match scheme {
            Scheme::Midpoint => (0.5 * dt, 0.25 * dt * dt),
            Scheme::BackwardEuler => (dt, dt * dt),
        };
        let lu =
            BandMatrix::from_combination(&[(1.0, &ops.m), (cd, &ops.d), (ck, &ops.k)]).factor()?;
        Ok(Self {
            ops,
            dt,
            scheme,
            lu,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one step; also returns the dissipated energy of the step.
    pub fn step(&self, z: &State<f64>) -> Result<(State<f64>, f64)> {
        let ops = self.ops;
        let dt = self.dt;
        let n = ops.n_dof;
        if z.u.len() != n || z.v.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: z.u.len().max(z.v.len()),
            });
        }
        let mv = ops.m.mul_vec(&z.v);
        let ku = ops.k.mul_vec(&z.u);
        match self.scheme {
            Scheme::Midpoint => {
                // (M + dt/2 D + dt²/4 K) v₊ = (M − dt/2 D − dt²/4 K) v − dt K u
                let dv = ops.d.mul_vec(&z.v);
                let kv = ops.k.mul_vec(&z.v);
                let mut rhs: Vec<f64> = (0..n)
                    .map(|i| mv[i] - 0.5 * dt * dv[i] - 0.25 * dt * dt * kv[i] - dt * ku[i])
                    .collect();
                self.lu.solve_in_place(&mut rhs);
                let v_new = rhs;
                let u_new: Vec<f64> = (0..n)
                    .map(|i| z.u[i] + 0.5 * dt * (z.v[i] + v_new[i]))
                    .collect();
                let v_mid: Vec<f64> = (0..n).map(|i| 0.5 * (z.v[i] + v_new[i])).collect();
                let diss = dt * ops.d.quad_form(&v_mid);
                Ok((State { u: u_new, v: v_new }, diss))
            }
            Scheme::BackwardEuler => {
                // (M + dt D + dt² K) v₊ = M v − dt K u
                let mut rhs: Vec<f64> = (0..n).map(|i| mv[i] - dt * ku[i]).collect();
                self.lu.solve_in_place(&mut rhs);
                let v_new = rhs;
                let u_new: Vec<f64> = (0..n).map(|i| z.u[i] + dt * v_new[i]).collect();
                let diss = dt * ops.d.quad_form(&v_new);
                Ok((State { u: u_new, v: v_new }, diss))
            }
        }
    }
}

/// Single implicit-midpoint step.
pub fn step_midpoint(ops: &OperatorSet, z: &State<f64>, dt: f64) -> Result<State<f64>> {
    Ok(Stepper::new(ops, dt, Scheme::Midpoint)?.step(z)?.0)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    pub k: Option<usize>,
    pub norm_dak: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// Energy dissipated in step `n → n+1`; one shorter than `energies`.
    pub dissipation: Vec<f64>,
    pub meta: TraceMeta,
    /// `max_n |E(tₙ) − E(0) + Σ_{m<n} diss_m| / E(0)`.
    pub identity_residual: f64,
    /// `max_n |E(tₙ) − E(0)| / E(0)`.
    pub max_drift: f64,
    pub final_state: State<f64>,
}

impl EnergyTrace {
    pub fn cumulative_dissipation(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.energies.len());
        out.push(0.0);
        for d in &self.dissipation {
            acc += d;
            out.push(acc);
        }
        out
    }

    /// Largest relative increase `E(tₙ₊₁)/E(tₙ) − 1` (nonpositive for a dissipative run).
    pub fn max_relative_increase(&self) -> f64 {
        self.energies
            .windows(2)
            .map(|w| {
                if w[0] > 0.0 {
                    w[1] / w[0] - 1.0
                } else {
                    w[1] - w[0]
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV `t,E,diss_cum,ratio` every `stride` steps (the last step is always
    /// written). Without a ratio series the column holds `E/E(0)`.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        ratio: Option<&[f64]>,
        stride: usize,
    ) -> std::io::Result<()> {
        let stride = stride.max(1);
        let cum = self.cumulative_dissipation();
        let e0 = self.energies.first().copied().unwrap_or(0.0);
        writeln!(w, "t,E,diss_cum,ratio")?;
        let last = self.times.len().saturating_sub(1);
        for i in (0..self.times.len()).filter(|&i| i % stride == 0 || i == last) {
            let r = match ratio {
                Some(r) => r[i],
                None if e0 > 0.0 => self.energies[i] / e0,
                None => 0.0,
            };
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i], self.energies[i], cum[i], r
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimulateOptions {
    pub scheme: Scheme,
    pub k: Option<usize>,
    pub norm_dak: Option<f64>,
}

/// Integrates from `z0` over `[0, T]` with `round(T/dt)` steps.
pub fn simulate(
    ops: &OperatorSet,
    z0: &State<f64>,
    dt: f64,
    t_final: f64,
    opts: SimulateOptions,
) -> Result<EnergyTrace> {
    if !(t_final >= dt) {
        return Err(Error::InvalidArgument(format!(
            "horizon T = {t_final} is shorter than dt = {dt}"
        )));
    }
    let stepper = Stepper::new(ops, dt, opts.scheme)?;
    let n_steps = (t_final / dt).round() as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut energies = Vec::with_capacity(n_steps + 1);
    let mut dissipation = Vec::with_capacity(n_steps);

    let e0 = energy(ops, z0);
    let scale = if e0 > 0.0 { e0 } else { 1.0 };
    times.push(0.0);
    energies.push(e0);
    let mut z = z0.clone();
    let mut cum = 0.0;
    let mut identity_residual: f64 = 0.0;
    let mut max_drift: f64 = 0.0;
    for step in 1..=n_steps {
        let (next, diss) = stepper.step(&z)?;
        let e = energy(ops, &next);
        if !next.is_finite() || !e.is_finite() {
            return Err(Error::NonFinite { step });
        }
        cum += diss;
        identity_residual = identity_residual.max((e - e0 + cum).abs() / scale);
        max_drift = max_drift.max((e - e0).abs() / scale);
        times.push(step as f64 * dt);
        energies.push(e);
        dissipation.push(diss);
        z = next;
    }
    Ok(EnergyTrace {
        times,
        energies,
        dissipation,
        meta: TraceMeta {
            dt,
            t_final: n_steps as f64 * dt,
            scheme: opts.scheme,
            k: opts.k,
            norm_dak: opts.norm_dak,
        },
        identity_residual,
        max_drift,
        final_state: z,
    })
}

/// Boundedness threshold for `tail_growth`.
pub const TAIL_GROWTH_TOL: f64 = 1.05;

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub k: usize,
    /// `ρ(t) = E(t)·ln(2+t)^{2k} / ‖z₀‖²_{D(A^k)}`.
    pub ratio_series: Vec<f64>,
    pub sup_ratio: f64,
    /// `max ρ` over the second half of the trace divided by `max ρ` over the first half.
    pub tail_growth: f64,
    /// `k = 0` with nonzero data: the decay law does not apply.
    pub inapplicable: bool,
}

impl DecayReport {
    pub fn passes(&self, tol: f64) -> bool {
        !self.inapplicable && self.tail_growth <= tol
    }
}

pub fn fit_log_decay(trace: &EnergyTrace, k: usize, norm_dak: f64) -> Result<DecayReport> {
    if trace.energies.is_empty() {
        return Err(Error::InvalidArgument("empty energy trace".into()));
    }
    if !(norm_dak > 0.0) || !norm_dak.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "D(A^k) norm must be positive, got {norm_dak}"
        )));
    }
    let denom = norm_dak * norm_dak;
    let ratio_series: Vec<f64> = trace
        .times
        .iter()
        .zip(&trace.energies)
        .map(|(&t, &e)| e * (2.0 + t).ln().powi(2 * k as i32) / denom)
        .collect();
    let sup_ratio = ratio_series.iter().copied().fold(0.0, f64::max);
    let half = ratio_series.len() / 2;
    let (first, last) = ratio_series.split_at(half.max(1).min(ratio_series.len()));
    let m_first = first.iter().copied().fold(0.0, f64::max);
    let m_last = last.iter().copied().fold(0.0, f64::max);
    let tail_growth = if m_first > 0.0 { m_last / m_first } else { 0.0 };
    Ok(DecayReport {
        k,
        ratio_series,
        sup_ratio,
        tail_growth,
        inapplicable: k == 0 && sup_ratio > 0.0,
    })
}
