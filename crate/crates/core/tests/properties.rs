use proptest::prelude::*;
use weak_euler::{
    catalog_model, closed_form_sides, make_grid, mc, psi_from_gradients, verify_error_identity, BrownianPath, CoupledPair,
    Params,
};

fn bounded(drift: f64, x0: f64) -> weak_euler::DelayModel {
    let mut p = Params::new();
    p.insert("drift".into(), drift);
    p.insert("x0".into(), x0);
    catalog_model("bounded", &p).unwrap().model
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coarsening_is_exact(n in 1usize..6, k1 in 1usize..4, k2 in 1usize..4, seed in any::<u64>(), p in 0u64..1000) {
        let g = make_grid(1.0, n, 1.0).unwrap();
        let path = BrownianPath::sample(&g, k1 * k2, seed, p).unwrap();
        let mid = path.coarsen(k2).unwrap();
        let direct = path.to_coarse().unwrap();
        let via = mid.to_coarse().unwrap();
        prop_assert_eq!(direct.increments(), via.increments());
        prop_assert_eq!(path.terminal(), direct.terminal());
    }

    #[test]
    fn error_identity_for_random_drift(drift in -2.0f64..2.0, x0 in -1.0f64..1.0, n in 1usize..4, k in 0u32..3, p in 0u64..100) {
        let m = bounded(drift, x0);
        let g = make_grid(1.0, 1 << n, 1.0).unwrap();
        let path = BrownianPath::sample(&g, 1 << k, 3, p).unwrap();
        let r = verify_error_identity(&m, &path).unwrap();
        prop_assert!(r.passed(1e-9), "{:?}", r);
    }

    #[test]
    fn coupled_pair_coarse_matches_direct_scheme(n in 1usize..5, k in 1usize..5, p in 0u64..100) {
        let e = catalog_model("delay", &Params::new()).unwrap();
        let g = make_grid(e.model.r, n, e.horizon).unwrap();
        let path = BrownianPath::sample(&g, k, 9, p).unwrap();
        let pair = CoupledPair::simulate(&e.model, &path).unwrap();
        let direct = weak_euler::euler_delay(&e.model, &path.to_coarse().unwrap(), &g).unwrap();
        prop_assert_eq!(pair.coarse.values(), direct.values());
    }

    /// Where ψ ≠ 0 the covariance of every convex combination stays above γ_X / 4.
    #[test]
    fn inclusion_is_a_property_of_the_cutoff(fine in prop::collection::vec(-3.0f64..3.0, 8), coarse in prop::collection::vec(-3.0f64..3.0, 2)) {
        if let Ok(s) = psi_from_gradients(&fine, &coarse, 0.125, 4, 0) {
            prop_assert!(s.inclusion_holds(1e-12), "{:?}", s);
        }
    }

    #[test]
    fn closed_form_rhs_is_independent_of_a(a1 in -1.0f64..1.0, a2 in -1.0f64..1.0, bbar in -2.0f64..2.0, g in 0.1f64..3.0) {
        let s1 = closed_form_sides(a1, bbar, g, 1.0).unwrap();
        let s2 = closed_form_sides(a2, bbar, g, 1.0).unwrap();
        prop_assert!((s1.rhs - s2.rhs).abs() < 1e-10);
        prop_assert!((s1.lhs - s1.formula).abs() < 1e-10 * s1.formula.abs().max(1.0));
    }
}

#[test]
fn moments_do_not_depend_on_thread_count() {
    let e = catalog_model("two-atom", &Params::new()).unwrap();
    let g = make_grid(e.model.r, 4, e.horizon).unwrap();
    let job = || {
        mc::moments(10_000, 2, |p, out| {
            let path = BrownianPath::sample(&g, 2, 17, p)?;
            let pair = CoupledPair::simulate(&e.model, &path)?;
            out[0] = pair.fine.terminal();
            out[1] = pair.coarse.terminal().sin();
            Ok(())
        })
        .unwrap()
    };
    let runs: Vec<Vec<(u64, u64)>> = [1, 2, 5]
        .iter()
        .map(|&t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            pool.install(job).iter().map(|m| (m.mean.to_bits(), m.variance().to_bits())).collect()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}
