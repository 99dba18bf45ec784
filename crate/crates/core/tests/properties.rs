use equiflow::assembler::{assemble, ObjectiveKind};
use equiflow::netmodel::Network;
use equiflow::paths::decompose;
use equiflow::round_sig;
use equiflow::scenarios::{generate_grid_city, prepare_network, GridCitySpec, ScenarioConfig};
use equiflow::solution::FlowSolution;
use equiflow::solver::{solve, SolveStatus};
use proptest::prelude::*;

fn unconstrained() -> ScenarioConfig {
    ScenarioConfig { budget_enabled: false, n_amod_max: 1e6, ..ScenarioConfig::default() }
}

fn scaled(net: &Network, k: f64) -> Network {
    let arcs = net
        .arcs()
        .iter()
        .cloned()
        .map(|mut a| {
            a.time_min *= k;
            a
        })
        .collect();
    Network::new(net.safety_threshold, net.nodes().to_vec(), arcs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_sig_is_idempotent(x in prop::num::f64::NORMAL) {
        let r = round_sig(x);
        prop_assert_eq!(round_sig(r), r);
        prop_assert!((r - x).abs() <= 1e-11 * x.abs());
    }

    #[test]
    fn generator_is_a_function_of_the_seed(seed in any::<u64>()) {
        let a = generate_grid_city(&GridCitySpec::tiny(), seed).unwrap();
        let b = generate_grid_city(&GridCitySpec::tiny(), seed).unwrap();
        prop_assert_eq!(a.0.to_json(), b.0.to_json());
        prop_assert_eq!(a.1.to_json(), b.1.to_json());
    }

    #[test]
    fn efficiency_optimum_scales_with_travel_times(seed in 0u64..500, k in 0.5f64..4.0) {
        let cfg = unconstrained();
        let (net, dem) = generate_grid_city(&GridCitySpec::tiny(), seed).unwrap();
        let net = prepare_network(&net, &cfg);
        let base = solve(&assemble(&net, &dem, &cfg, ObjectiveKind::UtilEff).unwrap(), &cfg.solver);
        let stretched = solve(&assemble(&scaled(&net, k), &dem, &cfg, ObjectiveKind::UtilEff).unwrap(), &cfg.solver);
        prop_assert_eq!(base.status, SolveStatus::Optimal);
        prop_assert_eq!(stretched.status, SolveStatus::Optimal);
        let expect = k * base.objective;
        prop_assert!((stretched.objective - expect).abs() <= 1e-6 * (1.0 + expect.abs()));
    }

    #[test]
    fn paths_rebuild_the_arc_flows(seed in 0u64..500, suff in any::<bool>()) {
        let cfg = ScenarioConfig::default();
        let kind = if suff { ObjectiveKind::CommSuff } else { ObjectiveKind::UtilEff };
        let (net, dem) = generate_grid_city(&GridCitySpec::tiny(), seed).unwrap();
        let net = prepare_network(&net, &cfg);
        let p = assemble(&net, &dem, &cfg, kind).unwrap();
        let r = solve(&p, &cfg.solver);
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        let sol = FlowSolution::from_result(&p, &r, &net, &dem, cfg.t_suff).rounded();
        let paths = decompose(&sol, &net, &dem, cfg.solver.feasibility_tol).unwrap();
        for (m, d) in dem.demands.iter().enumerate() {
            let rebuilt = paths.reconstruct(m);
            for f in &sol.flows[m] {
                let got = rebuilt.get(&f.arc).copied().unwrap_or(0.0);
                prop_assert!((got - f.value).abs() <= 1e-8, "demand {} arc {}: {} vs {}", m, f.arc, got, f.value);
            }
            let shares = &paths.demands[m].paths;
            prop_assert!(shares.iter().all(|p| p.share > 0.0));
            let total: f64 = shares.iter().map(|p| p.share).sum();
            prop_assert!((total - d.rate).abs() <= 1e-9);
        }
    }
}
