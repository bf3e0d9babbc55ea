use drkf_core::conditions::varpi_sequence;
use drkf_core::linalg;
use drkf_core::moment::{propagate_pi, DEFAULT_PI_CAP};
use drkf_sim::scenario::{builtin_scenarios, example1, example2, EXAMPLE2_TOPOLOGY_SEED};
use drkf_sim::{run_monte_carlo, FilterKind, RunStatistics, Scenario};

fn run(s: &Scenario, filter: FilterKind) -> RunStatistics {
    let mut s = s.clone();
    s.filter = filter;
    run_monte_carlo(&s).unwrap()
}

#[test]
fn every_preset_is_consistent_after_warmup() {
    for s in builtin_scenarios().unwrap() {
        for filter in [FilterKind::Drkf, FilterKind::DrkfSwf] {
            let stats = run(&s, filter);
            let frac = stats.consistency_fraction(s.warmup);
            assert!(frac >= 0.99, "{} {filter}: {frac}", s.name);
        }
    }
}

#[test]
fn bounds_do_not_trend_up() {
    let cases = [
        (example1(1).unwrap(), FilterKind::Drkf),
        (example1(1).unwrap(), FilterKind::DrkfSwf),
        (example2(EXAMPLE2_TOPOLOGY_SEED).unwrap(), FilterKind::Drkf),
        (
            example2(EXAMPLE2_TOPOLOGY_SEED).unwrap(),
            FilterKind::DrkfSwf,
        ),
    ];
    for (s, filter) in cases {
        let mut s = s;
        s.runs = 20;
        let stats = run(&s, filter);
        let (early, late) = (stats.p_max(26..=50), stats.p_max(51..=100));
        assert!(
            late.is_finite() && late <= 1.1 * early,
            "{} {filter}: {late} vs {early}",
            s.name
        );
    }
}

#[test]
fn window_fusion_tightens_network_bound_at_optimization_instants() {
    let s = example1(1).unwrap();
    let plain = run(&s, FilterKind::Drkf);
    let window = run(&s, FilterKind::DrkfSwf);
    for k in (s.delta..=s.horizon()).step_by(s.delta) {
        assert!(
            window.trp_network(k) <= plain.trp_network(k) + 1e-8,
            "k={k}"
        );
    }
}

#[test]
fn statistics_do_not_depend_on_thread_count() {
    let mut s = example1(1).unwrap().with_horizon(30).unwrap();
    s.runs = 16;
    s.filter = FilterKind::DrkfSwf;
    let parallel = run_monte_carlo(&s).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_monte_carlo(&s).unwrap());
    assert_eq!(parallel, single);
}

#[test]
fn moment_bound_below_varpi_on_presets() {
    for s in builtin_scenarios().unwrap() {
        let (model, bounds) = (&s.setup.model, &s.setup.bounds);
        let pi = propagate_pi(model, bounds, s.horizon(), DEFAULT_PI_CAP).unwrap();
        let varpi = varpi_sequence(model, bounds, s.horizon());
        for k in 0..=s.horizon() {
            assert!(
                linalg::spectral_norm(pi.get(k)) <= varpi[k] * (1.0 + 1e-12),
                "{} k={k}",
                s.name
            );
        }
    }
}
