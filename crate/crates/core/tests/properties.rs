//! Statistical and structural properties checked against exact answers.

use std::collections::HashMap;

use excursion_lab::extremes::{dkw_epsilon, gumbel_cdf, ks_distance_lattice, normalize};
use excursion_lab::renewal_dp::{composition_law, renewal_mass, restricted_masses, LongestLaw};
use excursion_lab::sampler::{run_experiment, stream, Mode, TiltedSampler};
use excursion_lab::{ExcursionLaw, TiltOptions, TiltedModel};
use proptest::prelude::*;

fn law_strategy() -> impl Strategy<Value = ExcursionLaw> {
    prop_oneof![
        (0.05f64..0.95).prop_map(|q| ExcursionLaw::two_point(q).unwrap()),
        (1.3f64..4.0).prop_map(|a| ExcursionLaw::zeta(a).unwrap()),
        Just(ExcursionLaw::srw1d()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pinned_paths_follow_composition_law(
        law in law_strategy(),
        beta in 0.2f64..2.5,
        n in 2usize..=12,
        seed in any::<u64>(),
    ) {
        let model = TiltedModel::build(law.clone(), beta, TiltOptions::default()).unwrap();
        let exact = composition_law(&law, beta, n).unwrap();
        let table = renewal_mass(&model, n).unwrap();
        let sampler = TiltedSampler::new(&model).unwrap();
        let draws = 4000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for i in 0..draws {
            let mut rng = stream(seed, i);
            let p = sampler.sample_pinned(&mut rng, &table, n).unwrap();
            prop_assert_eq!(p.total, n as u64);
            let parts: Vec<usize> = p.lengths.iter().map(|&l| l as usize).collect();
            *counts.entry(parts).or_default() += 1;
        }
        let mut tv = 0.0;
        for (parts, w) in &exact {
            let freq = counts.remove(parts).unwrap_or(0) as f64 / draws as f64;
            tv += (freq - w).abs();
        }
        prop_assert!(counts.is_empty(), "sampled a composition of zero weight");
        tv *= 0.5;
        let bound = 3.0 * (exact.len() as f64 / draws as f64).sqrt();
        prop_assert!(tv <= bound, "tv {} > {}", tv, bound);
    }

    #[test]
    fn restricted_mass_is_monotone_in_cap(
        law in law_strategy(),
        beta in 0.2f64..2.5,
        n in 1usize..=200,
    ) {
        let model = TiltedModel::build(law, beta, TiltOptions::default()).unwrap();
        let caps: Vec<usize> = (1..=n).collect();
        let masses = restricted_masses(&model, n, &caps).unwrap();
        let full = renewal_mass(&model, n).unwrap().get(n);
        for w in masses.windows(2) {
            prop_assert!(w[1] >= w[0] * (1.0 - 1e-14));
        }
        prop_assert!((masses[n - 1] - full).abs() <= 1e-13 * full.max(1e-300));
    }

    #[test]
    fn gumbel_threshold_round_trips(x in -3.0f64..4.0, n in 20usize..100_000) {
        let model = TiltedModel::build(ExcursionLaw::zeta(2.0).unwrap(), 1.0, TiltOptions::default()).unwrap();
        let g = model.gamma_threshold(x, n as f64 / model.mean_excursion()).unwrap();
        let back = normalize(&model, g, n).unwrap();
        prop_assert!((back - x).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&gumbel_cdf(x)));
    }
}

#[test]
fn monte_carlo_within_dkw_envelope() {
    let model = TiltedModel::build(
        ExcursionLaw::zeta(2.5).unwrap(),
        0.7,
        TiltOptions::default(),
    )
    .unwrap();
    let n = 3000;
    let samples = 20_000;
    let table = renewal_mass(&model, n).unwrap();
    let exact = LongestLaw::exact(&model, &table, n).unwrap();
    let recs = run_experiment(&model, Mode::Pinned, n, samples, 99, 4).unwrap();
    let gammas: Vec<i64> = recs.iter().map(|r| r.gamma as i64).collect();
    let ks = ks_distance_lattice(&gammas, |g| exact.cdf(g)).unwrap();
    assert!(ks <= dkw_epsilon(samples, 0.01), "ks = {ks}");
}

#[test]
fn free_mode_stops_at_first_crossing() {
    let model = TiltedModel::build(ExcursionLaw::srw1d(), 1.0, TiltOptions::default()).unwrap();
    let sampler = TiltedSampler::new(&model).unwrap();
    let mut rng = stream(1, 0);
    for _ in 0..200 {
        let p = sampler.sample_free(&mut rng, 500);
        assert!(p.total >= 500);
        let before: u64 = p.lengths[..p.k() - 1].iter().map(|&l| l as u64).sum();
        assert!(before < 500);
    }
}
