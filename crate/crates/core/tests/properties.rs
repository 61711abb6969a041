//! Property tests of cross-module invariants. Every oracle is computed from
//! the inputs before the code under test runs.

mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdrkit::admin::plan_sessions;
use sdrkit::assembly::{assemble, enumerate_candidates, AssemblyConfig, KeyRange};
use sdrkit::desirability::{aggregate_ratings, Rating, RatingDataset};
use sdrkit::inventory::{Condition, Format, TraitDomain};
use sdrkit::metrics::{cohens_dz, direction_correct};
use sdrkit::ordinal::{category_probs, survivor, survivor_from_cutpoints};
use sdrkit::persona::{default_covariance, sample_personas, sample_z, z_to_stanine, Lexicon, STANINE_CUTS};
use sdrkit::sim::{simulate_response_set, ParamOptions, SimParams, SimSession, SimSpec};
use sdrkit::stats::TwoWayAnova;
use statrs::distribution::{ContinuousCDF, Normal};

/// Strictly increasing thresholds from a start and positive gaps.
fn thresholds() -> impl Strategy<Value = [f64; 6]> {
    (-4.0..2.0f64, prop::array::uniform5(0.01..2.0f64)).prop_map(|(start, gaps)| {
        let mut k = [start; 6];
        for i in 1..6 {
            k[i] = k[i - 1] + gaps[i - 1];
        }
        k
    })
}

#[test]
fn persona_marginals_pass_a_kolmogorov_smirnov_test() {
    let n = 10_000;
    // asymptotic two-sided critical value at α = 0.01
    let critical = 1.6276 / (n as f64).sqrt();
    let cov = default_covariance();
    let z = sample_z(n, &cov, 2024).unwrap();
    for t in TraitDomain::ALL {
        let sd = cov.get(t, t).sqrt();
        let normal = Normal::new(0.0, sd).unwrap();
        let mut col: Vec<f64> = z.iter().map(|v| v[t.index()]).collect();
        col.sort_by(f64::total_cmp);
        let d = col
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal.cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < critical, "{}: KS statistic {d} ≥ {critical}", t.label());
    }
}

#[test]
fn stanine_steps_exactly_at_each_cut() {
    for (i, &c) in STANINE_CUTS.iter().enumerate() {
        let below = i as u8 + 1;
        assert_eq!(z_to_stanine(c - 1e-9).unwrap(), below);
        assert_eq!(z_to_stanine(c).unwrap(), below, "a score on a cut stays in the lower stanine");
        assert_eq!(z_to_stanine(c + 1e-9).unwrap(), below + 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stanine_is_monotone(a in -5.0..5.0f64, b in -5.0..5.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (s_lo, s_hi) = (z_to_stanine(lo).unwrap(), z_to_stanine(hi).unwrap());
        prop_assert!(s_lo <= s_hi);
        prop_assert!((1..=9).contains(&s_lo) && (1..=9).contains(&s_hi));
    }

    #[test]
    fn category_probabilities_sum_to_one(eta in -10.0..10.0f64, kappa in thresholds()) {
        let p = category_probs(eta, &kappa).unwrap();
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn survivor_and_cutpoint_forms_agree(eta in -10.0..10.0f64, kappa in thresholds(), k in 1usize..=8) {
        prop_assert!((survivor(eta, &kappa, k) - survivor_from_cutpoints(eta, &kappa, k)).abs() <= 1e-12);
    }

    #[test]
    fn cohens_dz_is_scale_equivariant(x in prop::collection::vec(-3.0..3.0f64, 3..40), c in prop_oneof![-10.0..-0.1f64, 0.1..10.0f64]) {
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        match cohens_dz(&x) {
            Ok(d) => {
                let expected = c.signum() * d;
                let got = cohens_dz(&scaled).unwrap();
                prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
            }
            Err(_) => prop_assert!(cohens_dz(&scaled).is_err()),
        }
    }

    #[test]
    fn direction_correction_is_an_involution(d in -5.0..5.0f64, t in 0usize..5) {
        let t = TraitDomain::ALL[t];
        prop_assert_eq!(direction_correct(direction_correct(d, t), t), d);
        prop_assert_eq!(direction_correct(d, t).abs(), d.abs());
    }

    #[test]
    fn aggregation_ignores_insertion_order(values in prop::collection::vec(1u8..=9, 24), seed in any::<u64>()) {
        let ratings: Vec<Rating> = values
            .iter()
            .enumerate()
            .map(|(i, &value)| Rating {
                item: format!("I{}", i % 4),
                rater: format!("r{}", (i / 4) % 2),
                replication: (i / 8) as u32 + 1,
                value,
            })
            .collect();
        let mut expected = std::collections::BTreeMap::new();
        for item in 0..4 {
            let v: Vec<f64> = values.iter().enumerate().filter(|(i, _)| i % 4 == item).map(|(_, &v)| v as f64).collect();
            expected.insert(format!("I{item}"), v.iter().sum::<f64>() / v.len() as f64);
        }
        let mut shuffled = ratings.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let build = |rs: &[Rating]| {
            let mut ds = RatingDataset::new();
            for r in rs {
                ds.insert(r.clone()).unwrap();
            }
            aggregate_ratings(&ds).unwrap().to_map()
        };
        prop_assert_eq!(build(&ratings), expected.clone());
        prop_assert_eq!(build(&shuffled), expected);
    }

    #[test]
    fn icc_ignores_replication_column_order(
        data in prop::collection::vec(prop::collection::vec(1u8..=9, 5), 6),
        seed in any::<u64>(),
    ) {
        let rows: Vec<Vec<f64>> = data.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let mut order: Vec<usize> = (0..5).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<Vec<f64>> = rows.iter().map(|r| order.iter().map(|&c| r[c]).collect()).collect();
        let a = TwoWayAnova::new(&rows).unwrap();
        let b = TwoWayAnova::new(&permuted).unwrap();
        prop_assert_eq!(a, b);
        match (a.icc_a1(), b.icc_a1()) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relaxing_the_mixed_key_range_never_raises_the_optimum(seed in 0u64..10_000) {
        let (pool, mut cfg) = common::small_instance(seed);
        let blocks = cfg.blocks;
        cfg.mixed_key = Some(KeyRange { min: blocks / 2, max: blocks / 2 });
        let relaxed = AssemblyConfig { mixed_key: Some(KeyRange { min: 0, max: blocks }), ..cfg.clone() };
        let cands = enumerate_candidates(&pool).unwrap();
        if let Ok(tight) = assemble(&cands, &cfg) {
            let loose = assemble(&cands, &relaxed).expect("relaxation of a feasible instance is feasible");
            prop_assert!(loose.m_star <= tight.m_star);
            if loose.m_star == tight.m_star {
                prop_assert!(loose.sse <= tight.sse);
            }
        }
    }

    #[test]
    fn assembly_is_feasible_and_deterministic(seed in 0u64..10_000) {
        let (pool, cfg) = common::small_instance(seed);
        let cands = enumerate_candidates(&pool).unwrap();
        if let Ok(a) = assemble(&cands, &cfg) {
            prop_assert!(sdrkit::assembly::selection_feasible(&cands, &a.selected, &cfg));
            prop_assert_eq!(a.selected.len(), cfg.blocks);
            let b = assemble(&cands, &cfg).unwrap();
            prop_assert_eq!(a.selected, b.selected);
            prop_assert_eq!(a.m_star, b.m_star);
            prop_assert_eq!(a.sse, b.sse);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn presentation_is_shared_across_conditions(seed in any::<u64>(), n in 1usize..4) {
        let pool = sdrkit::inventory::load_item_pool(common::fixture("reference_pool.tsv"), &[]).unwrap();
        let inv = sdrkit::inventory::load_inventory(common::fixture("reference_inventory.tsv"), &pool).unwrap();
        let personas = sample_personas(n, &default_covariance(), seed, &Lexicon::default()).unwrap();
        let plans = plan_sessions("m", &personas.personas, &Format::ALL, &Condition::ALL, &inv, seed);
        prop_assert_eq!(plans.len(), n * 4);
        for p in &plans {
            let twin = plans
                .iter()
                .find(|q| q.persona_id == p.persona_id && q.format == p.format && q.condition != p.condition)
                .unwrap();
            prop_assert_eq!(&p.presentation_order, &twin.presentation_order);
            prop_assert_eq!(&p.side_assignment, &twin.side_assignment);
        }
    }

    #[test]
    fn simulated_response_sets_are_complete(seed in any::<u64>(), delta in -2.0..2.0f64) {
        let pool = sdrkit::inventory::load_item_pool(common::fixture("reference_pool.tsv"), &[]).unwrap();
        let inv = sdrkit::inventory::load_inventory(common::fixture("reference_inventory.tsv"), &pool).unwrap();
        let personas = sample_personas(2, &default_covariance(), seed, &Lexicon::default()).unwrap();
        let params = SimParams::draw(&inv, &pool, seed, &ParamOptions::default()).unwrap();
        let plans = plan_sessions("sim", &personas.personas, &Format::ALL, &Condition::ALL, &inv, seed);
        for plan in &plans {
            let persona = personas.get(&plan.persona_id).unwrap();
            let session = SimSession {
                respondent_id: "sim",
                persona_id: &persona.id,
                z: &persona.z,
                format: plan.format,
                condition: plan.condition,
                presentation_order: plan.presentation_order.clone(),
                side_assignment: plan.side_assignment.clone(),
            };
            let rs = simulate_response_set(&session, &inv, &params, &SimSpec { delta, seed }).unwrap();
            prop_assert!(rs.check_complete(&inv).is_ok());
            prop_assert_eq!(rs.answers.len(), inv.unit_ids(plan.format).len());
        }
    }
}
