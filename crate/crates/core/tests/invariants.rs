use std::f64::consts::TAU;
use std::sync::Arc;

use kvwave_core::assembly::{
    apply_generator, apply_generator_inverse, assemble_operators, energy, OperatorSet, State,
};
use kvwave_core::carleman::{eval_symbol, poisson_bracket, radial_linear, Side};
use kvwave_core::evolution::{Scheme, Stepper};
use kvwave_core::geometry::{build_interval_mesh, DampingField};
use proptest::prelude::*;

fn ops(n: usize, a: usize, b: usize, d: f64) -> OperatorSet {
    let mesh = build_interval_mesh(n, a as f64 / n as f64, b as f64 / n as f64).unwrap();
    let omega = mesh.omega;
    assemble_operators(Arc::new(mesh), DampingField::new(d, omega).unwrap()).unwrap()
}

prop_compose! {
    fn config()(n in 8usize..60)(a in 1..n - 3, gap in 1usize..3, n in Just(n), d in 0.0f64..5.0) -> (usize, usize, usize, f64) {
        (n, a, (a + gap).min(n - 1), d)
    }
}

fn state(ops: &OperatorSet, seed: &[f64]) -> State<f64> {
    let n = ops.n_dof;
    let pick = |i: usize| seed[i % seed.len()] * ((i as f64 * 0.37).sin() + 1.5);
    State {
        u: (0..n).map(pick).collect(),
        v: (0..n).map(|i| pick(i + n)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generator_inverse_round_trip(c in config(), seed in prop::collection::vec(-1.0f64..1.0, 4..12)) {
        let o = ops(c.0, c.1, c.2, c.3);
        let z = state(&o, &seed);
        let back = apply_generator_inverse(&o, &apply_generator(&o, &z).unwrap()).unwrap();
        let err = o.h_norm(&back.sub(&z));
        prop_assert!(err <= 1e-9 * (1.0 + o.h_norm(&z)), "err {err}");
    }

    #[test]
    fn generator_is_dissipative(c in config(), seed in prop::collection::vec(-1.0f64..1.0, 4..12)) {
        let o = ops(c.0, c.1, c.2, c.3);
        let z = state(&o, &seed);
        let az = apply_generator(&o, &z).unwrap();
        let re = o.g_inner(&az, &z);
        let scale = o.h_norm(&z) * o.h_norm(&az) + 1.0;
        prop_assert!((re + o.dissipation(&z.v)).abs() <= 1e-9 * scale);
        prop_assert!(re <= 1e-9 * scale);
    }

    #[test]
    fn steps_never_increase_energy(
        c in config(),
        seed in prop::collection::vec(-1.0f64..1.0, 4..12),
        dt in 1e-3f64..0.2,
        be in any::<bool>(),
    ) {
        let o = ops(c.0, c.1, c.2, c.3);
        let scheme = if be { Scheme::BackwardEuler } else { Scheme::Midpoint };
        let stepper = Stepper::new(&o, dt, scheme).unwrap();
        let mut z = state(&o, &seed);
        let mut e = energy(&o, &z);
        for _ in 0..20 {
            z = stepper.step(&z).unwrap().0;
            let next = energy(&o, &z);
            prop_assert!(next <= e * (1.0 + 1e-12));
            e = next;
        }
    }

    #[test]
    fn symbol_and_bracket_are_homogeneous(
        r in 0.2f64..0.5,
        th in 0.0..TAU,
        a in 0.0..TAU,
        tau in 0.05f64..0.99,
        s in 0.1f64..10.0,
    ) {
        let w = radial_linear(8.0);
        let side = if r < 0.3 { Side::Damped } else { Side::Elastic };
        let x = [r * th.cos(), r * th.sin()];
        let rho = (1.0 - tau * tau).sqrt();
        let xi = [rho * a.cos(), rho * a.sin()];
        let sxi = [s * xi[0], s * xi[1]];
        let p = eval_symbol(&w, x, xi, tau, side).unwrap();
        let ps = eval_symbol(&w, x, sxi, s * tau, side).unwrap();
        prop_assert!((ps - p * s * s).norm() <= 1e-10 * ps.norm().max(1e-300));
        let b = poisson_bracket(&w, x, xi, tau, side).unwrap();
        let bs = poisson_bracket(&w, x, sxi, s * tau, side).unwrap();
        prop_assert!((bs - b * s.powi(3)).abs() <= 1e-10 * bs.abs().max(1e-300));
    }
}
