//! One pipeline per experiment kind.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use kvwave_core::assembly::{assemble_operators, make_dak_data, OperatorSet};
use kvwave_core::carleman::{
    alpha_sensitivity, catalog, catalog_entry, check_weight_conditions, Sampling,
};
use kvwave_core::evolution::{fit_log_decay, simulate, Scheme, SimulateOptions, TAIL_GROWTH_TOL};
use kvwave_core::geometry::{
    build_fully_damped_interval, build_interval_mesh, build_square_mesh, DampingField, Mesh,
    OmegaDescriptor,
};
use kvwave_core::resolvent::{
    helmholtz_stability_study, interface_dissipation_study, mu_grid, random_rhs, scan_resolvent,
    solve_transmission, transmission_equivalence,
};
use kvwave_core::spectral::{
    band_abscissa, solve_qep, verify_strong_stability, STRONG_STABILITY_TOL, UNTRUSTED_RESIDUAL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{require, ExperimentConfig, GeometryConfig, Kind};
use crate::plot::{emit_plots, histogram, Figure, Series, Style};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// `null` when the quantity is not finite or not defined.
    pub value: Option<f64>,
    pub tol: f64,
}

impl Check {
    fn new(name: &str, pass: bool, value: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            pass,
            value: value.is_finite().then_some(value),
            tol,
        }
    }

    /// Passes when `value ≤ tol`.
    fn at_most(name: &str, value: f64, tol: f64) -> Self {
        Self::new(name, value <= tol, value, tol)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config_echo: Value,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub details: Value,
}

impl Summary {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

struct Outcome {
    checks: Vec<Check>,
    details: Value,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_with(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut w = create(&path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn build_mesh(g: &GeometryConfig, n_cells: usize) -> kvwave_core::Result<Mesh> {
    match g.omega {
        OmegaDescriptor::Interval { a, b } => build_interval_mesh(n_cells, a, b),
        OmegaDescriptor::Rectangle { x0, x1, y0, y1 } => build_square_mesh(n_cells, x0, x1, y0, y1),
        OmegaDescriptor::Whole => build_fully_damped_interval(n_cells),
    }
}

fn build_ops(cfg: &ExperimentConfig) -> Result<OperatorSet, CliError> {
    let g = require(&cfg.geometry, "geometry")?;
    let d = require(&cfg.damping, "damping")?.d;
    let mesh = build_mesh(&g, g.n_cells)?;
    let omega = mesh.omega;
    Ok(assemble_operators(
        Arc::new(mesh),
        DampingField::new(d, omega)?,
    )?)
}

/// Runs the configured pipeline and writes `summary.json` into `out`.
pub fn run(
    kind: Kind,
    cfg: &ExperimentConfig,
    echo: Value,
    out: &Path,
) -> Result<Summary, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let outcome = match kind {
        Kind::Simulate => run_simulate(cfg, out)?,
        Kind::Decay => run_decay(cfg, out)?,
        Kind::Spectrum => run_spectrum(cfg, out)?,
        Kind::Resolvent => run_resolvent(cfg, out)?,
        Kind::TransmissionCheck => run_transmission(cfg, out)?,
        Kind::HelmholtzCheck => run_helmholtz(cfg, out)?,
        Kind::CarlemanCheck => run_carleman(cfg, out)?,
    };
    let summary = Summary {
        config_echo: echo,
        seed: cfg.seed,
        checks: outcome.checks,
        details: outcome.details,
    };
    write_with(out, "summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &summary).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    Ok(summary)
}

fn time_series(name: &str, y_label: &str, t: &[f64], y: &[f64], color: &'static str) -> Figure {
    Figure::new(name, "t", y_label).with(Series::new(
        y_label,
        Style::Line,
        color,
        t.iter().copied().zip(y.iter().copied()).collect(),
    ))
}

fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let n = &cfg.numerics;
    let ops = build_ops(cfg)?;
    let (dt, t_final) = (
        require(&n.dt, "numerics.dt")?,
        require(&n.t_final, "numerics.t_final")?,
    );
    let scheme = n.scheme.unwrap_or_default();
    let k = n.k.unwrap_or(0);
    let data = make_dak_data(&ops, k, cfg.seed)?;
    let opts = SimulateOptions {
        scheme,
        k: Some(k),
        norm_dak: Some(data.norm),
    };
    let trace = simulate(&ops, &data.z, dt, t_final, opts)?;
    let tol = n.tol.unwrap_or(1e-10);
    let mut checks = Vec::new();
    if scheme == Scheme::Midpoint {
        checks.push(Check::at_most(
            "energy_identity",
            trace.identity_residual,
            tol,
        ));
    }
    if ops.damping.d == 0.0 {
        checks.push(Check::at_most("energy_drift", trace.max_drift, tol));
    } else {
        checks.push(Check::at_most(
            "energy_nonincreasing",
            trace.max_relative_increase(),
            tol,
        ));
    }
    let stride = n.csv_stride.unwrap_or(1);
    write_with(out, "energy.csv", |w| trace.write_csv(w, None, stride))?;
    emit_plots(
        &[(
            "energy.svg".into(),
            time_series("energy", "E", &trace.times, &trace.energies, "#1f77b4"),
        )],
        out,
    )?;
    Ok(Outcome {
        checks,
        details: json!({
            "n_dof": ops.n_dof,
            "n_steps": trace.times.len() - 1,
            "e0": trace.energies[0],
            "e_final": trace.energies.last(),
            "identity_residual": trace.identity_residual,
            "max_drift": trace.max_drift,
            "max_relative_increase": trace.max_relative_increase(),
            "norm_dak": data.norm,
        }),
    })
}

fn run_decay(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let n = &cfg.numerics;
    let ops = build_ops(cfg)?;
    let (dt, t_final) = (
        require(&n.dt, "numerics.dt")?,
        require(&n.t_final, "numerics.t_final")?,
    );
    let k = require(&n.k, "numerics.k")?;
    let data = make_dak_data(&ops, k, cfg.seed)?;
    let opts = SimulateOptions {
        scheme: n.scheme.unwrap_or_default(),
        k: Some(k),
        norm_dak: Some(data.norm),
    };
    let trace = simulate(&ops, &data.z, dt, t_final, opts)?;
    let report = fit_log_decay(&trace, k, data.norm)?;
    let tol = n.tol.unwrap_or(TAIL_GROWTH_TOL);
    let checks = vec![Check::new(
        "tail_growth",
        report.passes(tol),
        report.tail_growth,
        tol,
    )];
    let stride = n.csv_stride.unwrap_or(1);
    write_with(out, "decay.csv", |w| {
        trace.write_csv(w, Some(&report.ratio_series), stride)
    })?;
    emit_plots(
        &[
            (
                "energy.svg".into(),
                time_series("energy", "E", &trace.times, &trace.energies, "#1f77b4"),
            ),
            (
                "ratio.svg".into(),
                time_series(
                    "decay ratio",
                    "rho",
                    &trace.times,
                    &report.ratio_series,
                    "#2ca02c",
                ),
            ),
        ],
        out,
    )?;
    Ok(Outcome {
        checks,
        details: json!({
            "k": k,
            "norm_dak": data.norm,
            "sup_ratio": report.sup_ratio,
            "tail_growth": report.tail_growth,
            "inapplicable": report.inapplicable,
        }),
    })
}

fn run_spectrum(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let n = &cfg.numerics;
    let ops = build_ops(cfg)?;
    let spec = solve_qep(&ops)?;
    let tol = n.tol.unwrap_or(STRONG_STABILITY_TOL);
    let mut checks = vec![Check::at_most(
        "max_residual",
        spec.max_residual(),
        UNTRUSTED_RESIDUAL,
    )];
    let stab = verify_strong_stability(&spec, tol);
    if ops.damping.d > 0.0 {
        checks.push(Check::new(
            "strong_stability",
            stab.pass,
            stab.max_real_part,
            tol,
        ));
    }
    write_with(out, "spectrum.csv", |w| spec.write_csv(w))?;
    let mut details = json!({
        "n_dof": ops.n_dof,
        "n_eigenvalues": spec.len(),
        "max_real_part": spec.max_real_part(),
        "min_real_part": spec.trusted_eigenvalues().map(|l| l.re).fold(f64::INFINITY, f64::min),
        "max_residual": spec.max_residual(),
        "offenders": stab.offenders.len(),
    });
    if let Some(j_max) = n.band_j_max {
        let bands = band_abscissa(&spec, j_max)?;
        write_with(out, "bands.csv", |w| {
            writeln!(w, "j,lo,hi,count,abscissa")?;
            for b in &bands.bands {
                let a = b
                    .abscissa
                    .map_or_else(|| "nan".to_string(), |a| format!("{a:.16e}"));
                writeln!(w, "{},{:.16e},{:.16e},{},{a}", b.j, b.lo, b.hi, b.count)?;
            }
            Ok(())
        })?;
        details["band_trend"] = json!(bands.trend);
        details["bands"] =
            serde_json::to_value(&bands.bands).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let pts = spec.eigenvalues.iter().map(|l| (l.re, l.im)).collect();
    emit_plots(
        &[(
            "spectrum.svg".into(),
            Figure::new("spectrum", "Re", "Im").with(Series::new(
                "eigenvalues",
                Style::Markers,
                "#1f77b4",
                pts,
            )),
        )],
        out,
    )?;
    Ok(Outcome { checks, details })
}

fn run_resolvent(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let n = &cfg.numerics;
    let ops = build_ops(cfg)?;
    let grid = match (&n.mus, n.mu_grid) {
        (Some(m), _) => m.clone(),
        (None, Some(g)) => {
            if !(g.step > 0.0) {
                return Err(CliError::Config(
                    "numerics.mu_grid.step must be positive".into(),
                ));
            }
            mu_grid(g.lo, g.hi, g.step)
        }
        (None, None) => return Err(CliError::Config("missing field `numerics.mu_grid`".into())),
    };
    let scan = scan_resolvent(&ops, &grid, n.method.unwrap_or_default())?;
    let tol = n.tol.unwrap_or(1e-12);
    let slack = scan.min_slack();
    let mut checks = vec![Check::new(
        "envelope_covers",
        slack >= -tol && scan.fit.c1.is_finite() && scan.fit.c2.is_finite(),
        slack,
        tol,
    )];
    let mut details = json!({ "fit": scan.fit, "excluded": scan.excluded });
    if ops.damping.d == 0.0 {
        // ‖R(iμ)‖ = 1/dist(iμ, σ) for the undamped (normal) generator
        let spec = solve_qep(&ops)?;
        let worst = scan
            .samples
            .iter()
            .filter(|s| s.norm.is_finite())
            .map(|s| {
                let dist = spec
                    .eigenvalues
                    .iter()
                    .map(|l| (l.im - s.mu).hypot(l.re))
                    .fold(f64::INFINITY, f64::min);
                (s.norm * dist - 1.0).abs()
            })
            .fold(0.0, f64::max);
        checks.push(Check::at_most("distance_identity", worst, 1e-3));
        details["distance_identity"] = json!(worst);
    }
    write_with(out, "resolvent.csv", |w| scan.write_csv(w))?;
    let pts: Vec<(f64, f64)> = scan
        .samples
        .iter()
        .filter(|s| s.norm.is_finite())
        .map(|s| (s.mu, s.norm.ln()))
        .collect();
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let envelope = if lo.is_finite() {
        vec![(lo, scan.fit.bound(lo)), (hi, scan.fit.bound(hi))]
    } else {
        Vec::new()
    };
    emit_plots(
        &[(
            "resolvent.svg".into(),
            Figure::new("resolvent norm", "mu", "ln norm")
                .with(Series::new("samples", Style::Markers, "#1f77b4", pts))
                .with(Series::new("envelope", Style::Line, "#d62728", envelope)),
        )],
        out,
    )?;
    Ok(Outcome { checks, details })
}

fn run_transmission(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let n = &cfg.numerics;
    let ops = build_ops(cfg)?;
    let [lo, hi] = require(&n.mu_range, "numerics.mu_range")?;
    if !(lo <= hi) {
        return Err(CliError::Config(format!(
            "numerics.mu_range must be ordered, got [{lo}, {hi}]"
        )));
    }
    let n_cases = n.n_cases.unwrap_or(50);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(n_cases);
    for c in 0..n_cases {
        let mu = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        let (f, g) = random_rhs(ops.n_dof, cfg.seed.wrapping_add(1 + c as u64));
        let diff = transmission_equivalence(&ops, mu, &f, &g)?;
        let flux = solve_transmission(&ops, mu, &f, &g)?.flux_jump;
        rows.push((mu, diff, flux));
    }
    write_with(out, "transmission.csv", |w| {
        writeln!(w, "case,mu,rel_diff,flux_jump")?;
        for (c, (mu, d, fl)) in rows.iter().enumerate() {
            writeln!(w, "{c},{mu:.16e},{d:.16e},{fl:.16e}")?;
        }
        Ok(())
    })?;
    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let tol = n.tol.unwrap_or(1e-8);
    let mut checks = vec![Check::at_most("transmission_equivalence", worst, tol)];
    let mut details = json!({ "n_cases": n_cases, "max_rel_diff": worst });
    if let Some(mus) = &n.dissipation_mus {
        let study = interface_dissipation_study(&ops, mus, n.n_rhs.unwrap_or(20), cfg.seed)?;
        let ratio = study.max_holdout / study.c_fit;
        checks.push(Check::new("interface_dissipation", study.pass, ratio, 1.0));
        write_with(out, "dissipation.csv", |w| {
            writeln!(w, "mu,max_ratio")?;
            for (mu, r) in &study.per_mu {
                writeln!(w, "{mu:.16e},{r:.16e}")?;
            }
            Ok(())
        })?;
        emit_plots(
            &[(
                "dissipation.svg".into(),
                Figure::new("interface dissipation ratio", "mu", "ratio").with(Series::new(
                    "max over rhs",
                    Style::Markers,
                    "#9467bd",
                    study.per_mu.clone(),
                )),
            )],
            out,
        )?;
        details["dissipation"] =
            serde_json::to_value(&study).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(Outcome { checks, details })
}

fn run_helmholtz(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let n = &cfg.numerics;
    let g = require(&cfg.geometry, "geometry")?;
    let d = require(&cfg.damping, "damping")?.d;
    let cells = require(&n.cells, "numerics.cells")?;
    let mus = require(&n.mus, "numerics.mus")?;
    let tol = n.tol.unwrap_or(0.2);
    let study = helmholtz_stability_study(
        |c| build_mesh(&g, c),
        &cells,
        &mus,
        d,
        n.trials.unwrap_or(20),
        cfg.seed,
        tol,
    )?;
    write_with(out, "helmholtz.csv", |w| {
        writeln!(w, "n_cells,mu,max_ratio,trials_used,skipped")?;
        for r in &study.results {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{},{}",
                r.n_cells, r.mu, r.max_ratio, r.trials_used, r.skipped
            )?;
        }
        Ok(())
    })?;
    Ok(Outcome {
        checks: vec![Check::new(
            "helmholtz_stability",
            study.pass,
            study.max_deviation,
            tol,
        )],
        details: serde_json::to_value(&study).map_err(|e| CliError::Config(e.to_string()))?,
    })
}

fn run_carleman(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let c = require(&cfg.carleman, "carleman")?;
    let weight = match (c.weight, &c.catalog) {
        (Some(w), _) => w,
        (None, Some(name)) => {
            catalog_entry(name)
                .ok_or_else(|| {
                    let names: Vec<&str> = catalog().iter().map(|e| e.name).collect();
                    CliError::Config(format!(
                        "unknown catalog weight `{name}`; known: {}",
                        names.join(", ")
                    ))
                })?
                .weight
        }
        (None, None) => return Err(CliError::Config("missing field `carleman.weight`".into())),
    };
    let sampling = c.sampling.unwrap_or_default();
    let report = check_weight_conditions(&weight, &sampling)?;
    let alpha = alpha_sensitivity(&weight, &sampling)?;
    let checks = report
        .conditions
        .iter()
        .map(|r| Check {
            name: r.id.as_str().to_string(),
            pass: r.pass,
            value: r.worst_margin.filter(|m| m.is_finite()),
            tol: 0.0,
        })
        .collect();
    let details = json!({ "report": report, "alpha_sensitivity": alpha, "sampling": sampling_json(&sampling) });
    write_with(out, "carleman_report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &details).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    write_with(out, "subell_near_zero.csv", |w| {
        report.write_near_zero_csv(w, weight.geometry.dim())
    })?;
    let brackets: Vec<f64> = report.near_zero.iter().map(|s| s.bracket_value).collect();
    if !brackets.is_empty() {
        emit_plots(
            &[(
                "subell_hist.svg".into(),
                Figure::new("bracket near symbol zeros", "bracket", "count").with(Series::new(
                    "samples",
                    Style::Bars,
                    "#ff7f0e",
                    histogram(&brackets, 30),
                )),
            )],
            out,
        )?;
    }
    Ok(Outcome { checks, details })
}

fn sampling_json(s: &Sampling) -> Value {
    serde_json::to_value(s).unwrap_or(Value::Null)
}
