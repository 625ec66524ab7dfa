mod common;

use common::Phase;
use crystal_kit::hull::{build_diagram, classify, PhaseDiagram, ReferencePhase, StabilityClass};
use crystal_kit::Composition;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn diagram(phases: &[Phase]) -> PhaseDiagram {
    let refs = phases
        .iter()
        .enumerate()
        .map(|(i, (c, e))| ReferencePhase::new(format!("p{i}"), c.clone(), *e).unwrap())
        .collect();
    build_diagram(refs).unwrap()
}

fn e_hull(phases: &[Phase], query: &Phase) -> f64 {
    diagram(phases).energy_above_hull(&query.0, query.1).unwrap()
}

fn system(seed: u64) -> (Vec<Phase>, Phase) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ternary = rng.random_bool(0.5);
    common::random_system(&mut rng, ternary)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_construction_oracle(seed in any::<u64>()) {
        let (phases, query) = system(seed);
        let got = e_hull(&phases, &query);
        prop_assert!((got - common::hull_construction_oracle(&phases, &query)).abs() <= 1e-9);
    }

    /// Adding c_el per atom of each element is a change of energy zero.
    #[test]
    fn gauge_shift_leaves_hull_energy_unchanged(seed in any::<u64>(), shifts in prop::collection::vec(-5.0..5.0f64, 3)) {
        let (phases, query) = system(seed);
        let mut elements: Vec<String> = phases.iter().flat_map(|(c, _)| c.elements().map(String::from)).collect();
        elements.sort();
        elements.dedup();
        let shift = |c: &Composition| -> f64 {
            elements.iter().zip(&shifts).map(|(el, s)| c.fraction(el) * s).sum()
        };
        let moved: Vec<Phase> = phases.iter().map(|(c, e)| (c.clone(), e + shift(c))).collect();
        let q = (query.0.clone(), query.1 + shift(&query.0));
        prop_assert!((e_hull(&phases, &query) - e_hull(&moved, &q)).abs() <= 1e-9);
    }

    #[test]
    fn phase_order_does_not_matter(seed in any::<u64>()) {
        let (mut phases, query) = system(seed);
        let before = e_hull(&phases, &query);
        phases.shuffle(&mut ChaCha8Rng::seed_from_u64(!seed));
        prop_assert!((before - e_hull(&phases, &query)).abs() <= 1e-12);
    }

    /// The hull energy at the query composition, e - E_hull, only drops as
    /// phases are added.
    #[test]
    fn hull_only_moves_down_as_phases_are_added(seed in any::<u64>()) {
        let (mut phases, query) = system(seed);
        phases.sort_by_key(|(c, _)| c.num_elements());
        let n_elements = phases.iter().filter(|(c, _)| c.num_elements() == 1).count();
        let mut previous = f64::INFINITY;
        for k in n_elements..=phases.len() {
            let baseline = query.1 - e_hull(&phases[..k], &query);
            prop_assert!(baseline <= previous + 1e-12);
            previous = baseline;
        }
    }

    #[test]
    fn reference_phases_sit_on_or_above_the_hull(seed in any::<u64>()) {
        let (phases, _) = system(seed);
        let d = diagram(&phases);
        for (c, e) in &phases {
            prop_assert!(d.energy_above_hull(c, *e).unwrap() >= -1e-9);
        }
    }
}

fn ab(a: u32, b: u32) -> Composition {
    Composition::from_counts([("Na", a), ("Cl", b)].into_iter().filter(|(_, n)| *n > 0))
}

/// Binary A-B with refs A = -1, B = -2 and AB at -2 eV/atom.
#[test]
fn worked_binary() {
    let phases = vec![(ab(1, 0), -1.0), (ab(0, 1), -2.0), (ab(1, 1), -2.0)];
    let d = diagram(&phases);
    let formation = d.formation_energy_per_atom(&ab(1, 1), -2.0).unwrap();
    assert!((formation - (-2.0 - (0.5 * -1.0 + 0.5 * -2.0))).abs() < 1e-12);
    let query = (ab(1, 1), -1.6);
    // candidates on the binary simplex at x = 1/2: AB itself, or half A + half B
    let oracle = -1.6 - f64::min(-2.0, 0.5 * -1.0 + 0.5 * -2.0);
    assert!((d.energy_above_hull(&query.0, query.1).unwrap() - oracle).abs() < 1e-9);
    assert!((oracle - 0.4).abs() < 1e-12);
    assert!(d.energy_above_hull(&ab(1, 0), -1.0).unwrap().abs() < 1e-9);
    assert!(d.energy_above_hull(&ab(1, 1), -2.0).unwrap().abs() < 1e-9);
}

#[test]
fn stability_boundaries() {
    assert_eq!(classify(-0.01), StabilityClass::Stable);
    assert_eq!(classify(0.0), StabilityClass::Metastable);
    assert_eq!(classify(0.05), StabilityClass::Metastable);
    assert_eq!(classify(0.1), StabilityClass::Unstable);
}
