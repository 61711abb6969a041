#![allow(dead_code)]

use std::fs::File;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdrkit::assembly::{AssemblyConfig, KeyRange, SignFloor};
use sdrkit::inventory::{Item, ItemPool, Keying, TraitDomain};

pub fn fixture(name: &str) -> File {
    File::open(fixture_path(name)).unwrap()
}

/// Test data lives in the core crate; the path also resolves from sibling
/// crates that include this module.
pub fn fixture_path(name: &str) -> String {
    format!("{}/../core/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Small random assembly instance: 6-12 items over 2-5 domains, ratings on a
/// quarter-point grid (so ties are common), P in 1..=3 and a random subset of
/// the mixed-key and sign-floor constraints.
pub fn small_instance(seed: u64) -> (ItemPool, AssemblyConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(6..=12);
    let domains = rng.random_range(2..=5);
    let items = (0..n)
        .map(|i| Item {
            id: format!("s{i:02}"),
            text: format!("Statement {i}."),
            domain: TraitDomain::ALL[if i < domains { i } else { rng.random_range(0..domains) }],
            keying: if rng.random_bool(0.5) { Keying::Positive } else { Keying::Negative },
            desirability: Some(1.0 + rng.random_range(0..=32) as f64 / 4.0),
        })
        .collect();
    let pool = ItemPool::new(items, vec![]).unwrap();
    let blocks = rng.random_range(1..=3);
    let mut cfg = AssemblyConfig::unconstrained(blocks);
    if rng.random_bool(0.5) {
        let min = rng.random_range(0..=blocks);
        let max = rng.random_range(min..=blocks);
        cfg.mixed_key = Some(KeyRange { min, max });
    }
    if rng.random_bool(0.3) {
        cfg.sign_floor = Some(SignFloor::THIRTY_PERCENT);
    }
    (pool, cfg)
}

/// Simulated study on the reference inventory: `n` personas drawn from the
/// default trait covariance, one respondent, both conditions.
pub struct Study {
    pub pool: sdrkit::inventory::ItemPool,
    pub inventory: sdrkit::inventory::Inventory,
    pub personas: sdrkit::persona::PersonaSet,
    pub params: sdrkit::sim::SimParams,
    pub sets: Vec<sdrkit::inventory::ResponseSet>,
}

#[allow(dead_code)]
pub fn study(n: usize, delta: f64, seed: u64, formats: &[sdrkit::inventory::Format], opts: &sdrkit::sim::ParamOptions) -> Study {
    use sdrkit::persona::{default_covariance, sample_personas, Lexicon};
    use sdrkit::sim::{simulate_study, SimParams, SimSpec};
    let pool = sdrkit::inventory::load_item_pool(fixture("reference_pool.tsv"), &[]).unwrap();
    let inventory = sdrkit::inventory::load_inventory(fixture("reference_inventory.tsv"), &pool).unwrap();
    let personas = sample_personas(n, &default_covariance(), seed, &Lexicon::default()).unwrap();
    let params = SimParams::draw(&inventory, &pool, seed.wrapping_add(1), opts).unwrap();
    let spec = SimSpec { delta, seed: seed.wrapping_add(2) };
    let sets = simulate_study("sim", &personas.personas, formats, &inventory, &params, &spec).unwrap();
    Study { pool, inventory, personas, params, sets }
}
