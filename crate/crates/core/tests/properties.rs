//! Property-based tests of the discrete structure: summation by parts,
//! monotonicity of the operator, contraction of the implicit step,
//! truncation algebra, analytic derivatives and the regularizer bounds.

use proptest::prelude::*;
use renorm_plap::grid::edge_norm_lq;
use renorm_plap::regularizer::apply_pi_n;
use renorm_plap::truncation::{t_k, theta, tilde_t_k};
use renorm_plap::*;

fn mesh_strategy() -> impl Strategy<Value = Mesh> {
    prop_oneof![
        (1usize..40).prop_map(|n| Mesh::line(n).unwrap()),
        (1usize..8).prop_map(|n| Mesh::square(n).unwrap()),
    ]
}

fn grid_fn(mesh: Mesh, amp: f64) -> impl Strategy<Value = GridFunction> {
    prop::collection::vec(-amp..amp, mesh.n_nodes()).prop_map(move |v| GridFunction::from_values(mesh, v).unwrap())
}

fn edge_fn(mesh: Mesh, amp: f64) -> impl Strategy<Value = EdgeField> {
    prop::collection::vec(-amp..amp, mesh.n_edges()).prop_map(move |v| EdgeField::from_values(mesh, v).unwrap())
}

fn pair(amp: f64) -> impl Strategy<Value = (GridFunction, GridFunction)> {
    mesh_strategy().prop_flat_map(move |m| (grid_fn(m, amp), grid_fn(m, amp)))
}

fn params_strategy() -> impl Strategy<Value = PlapParams> {
    prop_oneof![
        (1.2f64..2.0).prop_map(|p| PlapParams::new(p, 1e-3).unwrap()),
        (2.0f64..4.0).prop_map(|p| PlapParams::new(p, 0.0).unwrap()),
        (2.0f64..4.0).prop_map(|p| PlapParams::new(p, 1e-2).unwrap()),
    ]
}

proptest! {
    #[test]
    fn summation_by_parts(
        (u, f) in mesh_strategy().prop_flat_map(|m| (grid_fn(m, 5.0), edge_fn(m, 5.0)))
    ) {
        let lhs = discrete_divergence(&f).dot(&u);
        let rhs = -f.dot(&discrete_gradient(&u));
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn operator_is_monotone((u, v) in pair(3.0), params in params_strategy()) {
        let au = apply_plap(&u, &params).unwrap();
        let av = apply_plap(&v, &params).unwrap();
        let pairing = au.sub(&av).unwrap().dot(&u.sub(&v).unwrap());
        prop_assert!(pairing >= -1e-12 * (1.0 + pairing.abs()));
    }

    #[test]
    fn operator_is_t_monotone((u, v) in pair(3.0), params in params_strategy()) {
        let au = apply_plap(&u, &params).unwrap();
        let av = apply_plap(&v, &params).unwrap();
        let positive = u.zip_with(&v, |a, b| if a > b { 1.0 } else { 0.0 }).unwrap();
        let pairing = au.sub(&av).unwrap().dot(&positive);
        let scale = 1.0 + norm_lq(&au, 1.0).unwrap() + norm_lq(&av, 1.0).unwrap();
        prop_assert!(pairing >= -1e-12 * scale, "{pairing}");
    }

    #[test]
    fn energy_gradient_matches_finite_differences((u, d) in pair(2.0), params in params_strategy()) {
        let grad_d = discrete_gradient(&d);
        let d_max = grad_d.values().iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut tau = 1e-5;
        if params.p() < 2.0 && d_max > 0.0 {
            let eps = params.eps();
            let scale = discrete_gradient(&u).values().iter().fold(f64::INFINITY, |m, g| m.min(g.hypot(eps)));
            tau = f64::min(tau, 1e-3 * scale / d_max);
        }
        let plus = u.zip_with(&d, |a, b| a + tau * b).unwrap();
        let minus = u.zip_with(&d, |a, b| a - tau * b).unwrap();
        let fd = (energy(&plus, &params) - energy(&minus, &params)) / (2.0 * tau);
        let exact = apply_plap(&u, &params).unwrap().dot(&d);
        let grad_norm = edge_norm_lq(&grad_d, 1.0).unwrap();
        prop_assert!((fd - exact).abs() <= 1e-6 * (exact.abs() + grad_norm + 1e-8), "{fd} vs {exact}");
    }

    #[test]
    fn implicit_step_contracts_and_preserves_order(
        (u, v) in pair(3.0),
        forcing_amp in 0.0f64..1.0,
        dt in 1e-3f64..0.1,
        params in params_strategy(),
    ) {
        let mesh = *u.mesh();
        let opts = SolverOptions::new(1e-10, 100).unwrap();
        let forcing = GridFunction::from_fn(mesh, |x| forcing_amp * (x[0] - 0.3));
        let slack = 10.0 * mesh.n_nodes() as f64 * opts.newton_tol;
        let su = implicit_step(&u, dt, &forcing, &params, &opts).unwrap();
        let sv = implicit_step(&v, dt, &forcing, &params, &opts).unwrap();
        for q in [1.0, 2.0] {
            let before = norm_lq(&u.sub(&v).unwrap(), q).unwrap();
            let after = norm_lq(&su.sub(&sv).unwrap(), q).unwrap();
            prop_assert!(after <= before + slack, "q={q}: {after} > {before}");
        }
        let lower = u.zip_with(&v, f64::min).unwrap();
        let upper = u.zip_with(&v, f64::max).unwrap();
        let sl = implicit_step(&lower, dt, &forcing, &params, &opts).unwrap();
        let su2 = implicit_step(&upper, dt, &forcing, &params, &opts).unwrap();
        for (a, b) in sl.values().iter().zip(su2.values()) {
            prop_assert!(*a <= b + slack);
        }
    }

    #[test]
    fn truncation_algebra(r in -20.0f64..20.0, k in 0.01f64..10.0, kp in 0.01f64..10.0, e in 0.0f64..5.0) {
        prop_assert_eq!(t_k(t_k(r, k + e), k), t_k(r, k));
        prop_assert!((theta(r, k, kp) - (t_k(r, k + kp) - t_k(r, k))).abs() <= 1e-12);
        let step = 1e-6;
        if ((r.abs() - k).abs()) > 2.0 * step {
            let fd = (tilde_t_k(r + step, k) - tilde_t_k(r - step, k)) / (2.0 * step);
            prop_assert!((fd - t_k(r, k)).abs() <= 1e-6 * (1.0 + k));
        }
    }

    #[test]
    fn family_derivatives_match_finite_differences(
        r in -8.0f64..8.0,
        a in 0.1f64..3.0,
        b in 0.1f64..3.0,
        which in 0usize..6,
    ) {
        let family = match which {
            0 => ScalarFamily::Tk(a),
            1 => ScalarFamily::TildeTk(a),
            2 => ScalarFamily::Theta { k: a, kp: b },
            3 => ScalarFamily::Hl(a),
            4 => ScalarFamily::TsSigma { s: a, sigma: b },
            _ => ScalarFamily::compact_s(a, a + b),
        };
        let step = 1e-6;
        prop_assume!(family.breakpoints().iter().all(|bp| (r - bp).abs() > 4.0 * step));
        prop_assume!(r.abs() > 4.0 * step);
        let d1 = (family.value(r + step) - family.value(r - step)) / (2.0 * step);
        let d2 = (family.d1(r + step) - family.d1(r - step)) / (2.0 * step);
        prop_assert!((d1 - family.d1(r)).abs() <= 1e-5, "{family:?} d1 at {r}");
        prop_assert!((d2 - family.d2(r)).abs() <= 1e-5, "{family:?} d2 at {r}");
    }

    #[test]
    fn regularizer_does_not_increase_norms(
        (v, n) in mesh_strategy()
            .prop_flat_map(|m| (grid_fn(m, 10.0), 2usize..=m.n_per_axis() + 1)),
    ) {
        let w = apply_pi_n(&v, n, v.mesh()).unwrap();
        for q in [1.0, 2.0] {
            prop_assert!(norm_lq(&w, q).unwrap() <= norm_lq(&v, q).unwrap() * (1.0 + 1e-14));
        }
    }
}
