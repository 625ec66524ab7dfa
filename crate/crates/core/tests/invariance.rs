mod common;

use crystal_kit::augment::{self, AugmentConfig};
use crystal_kit::fingerprints::{comp_fingerprint, euclidean, struct_fingerprint};
use crystal_kit::validity::{self, compositional_validity, structural_validity, OverlapMode, ValidityConfig};
use crystal_kit::{codec, elements, Composition, Crystal};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn crystal_from(seed: u64) -> Crystal {
    common::random_crystal(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn pair_distances(c: &Crystal) -> Vec<f64> {
    let s = c.sites();
    let mut d: Vec<f64> = (0..s.len())
        .flat_map(|i| (i + 1..s.len()).map(move |j| (i, j)))
        .map(|(i, j)| c.lattice.min_image_distance(s[i].frac(), s[j].frac()))
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

fn sorted_elements(c: &Crystal) -> Vec<String> {
    let mut v: Vec<String> = c.sites().iter().map(|s| s.element.clone()).collect();
    v.sort();
    v
}

const MODES: [OverlapMode; 2] = [OverlapMode::RadiusFraction, OverlapMode::AbsoluteCutoff(0.5)];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn translation_keeps_cell_composition_and_distances(seed in any::<u64>(), s in prop::array::uniform3(-3.0..3.0f64)) {
        let c = crystal_from(seed);
        let t = c.translate(s);
        prop_assert_eq!(t.lattice.volume(), c.lattice.volume());
        prop_assert_eq!(t.composition(), c.composition());
        for (a, b) in pair_distances(&c).iter().zip(pair_distances(&t)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn augmentations_keep_lattice_and_elements(seed in any::<u64>(), permute in any::<bool>()) {
        let c = crystal_from(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let cfg = AugmentConfig { translate: true, permute };
        let a = cfg.apply(&c, &mut rng);
        prop_assert_eq!(&a.lattice, &c.lattice);
        prop_assert_eq!(sorted_elements(&a), sorted_elements(&c));
        let again = cfg.apply(&c, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        prop_assert_eq!(a, again);
    }

    #[test]
    fn structural_verdict_is_translation_invariant(seed in any::<u64>(), s in prop::array::uniform3(0.0..1.0f64)) {
        let c = crystal_from(seed);
        let t = c.translate(s);
        for mode in MODES {
            let (a, b) = (structural_validity(&c, mode).unwrap(), structural_validity(&t, mode).unwrap());
            prop_assert_eq!(a.valid, b.valid);
            prop_assert!((a.min_pair_distance - b.min_pair_distance).abs() <= 1e-9);
        }
    }

    #[test]
    fn charge_verdict_depends_on_reduced_composition(seed in any::<u64>(), k in 1u32..5) {
        let comp = crystal_from(seed).composition();
        let cfg = ValidityConfig::default();
        prop_assume!(comp.num_elements() <= cfg.max_distinct_elements);
        let base = compositional_validity(&comp, &cfg).unwrap();
        let scaled = compositional_validity(&comp.scaled(k), &cfg).unwrap();
        prop_assert_eq!(base.is_some(), scaled.is_some());
        prop_assert_eq!(base.is_some(), compositional_validity(&comp.reduced(), &cfg).unwrap().is_some());
        if let Some(assignment) = base {
            let net: i64 = assignment.iter().map(|(el, q)| i64::from(*q) * i64::from(comp.get(el))).sum();
            prop_assert_eq!(net, 0);
            for (el, q) in &assignment {
                prop_assert!(elements::lookup(el).unwrap().oxidation_states(false).contains(q));
            }
        }
    }

    #[test]
    fn fingerprints_ignore_translation_and_site_order(seed in any::<u64>(), s in prop::array::uniform3(0.0..1.0f64)) {
        let c = crystal_from(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fp = struct_fingerprint(&c);
        prop_assert!(fp.iter().all(|v| *v >= 0.0));
        prop_assert!(euclidean(&fp, &struct_fingerprint(&c.translate(s))) <= 1e-8);
        let permuted = augment::permute_sites(&c, &mut rng);
        prop_assert_eq!(&fp, &struct_fingerprint(&permuted));
        prop_assert_eq!(comp_fingerprint(&c.composition()).unwrap(), comp_fingerprint(&permuted.composition()).unwrap());
    }

    #[test]
    fn composition_fingerprint_ignores_scaling(seed in any::<u64>(), k in 1u32..7) {
        let comp = crystal_from(seed).composition();
        prop_assert_eq!(comp_fingerprint(&comp).unwrap(), comp_fingerprint(&comp.scaled(k)).unwrap());
    }

    #[test]
    fn on_grid_crystals_keep_their_fingerprint_through_text(seed in any::<u64>()) {
        let proto = common::prototype_crystal(&mut ChaCha8Rng::seed_from_u64(seed));
        let on_grid = codec::quantize(&proto).unwrap().lattice;
        let c = Crystal::new(on_grid, proto.sites().to_vec()).unwrap();
        let back = codec::decode(codec::encode(&c).as_str()).unwrap();
        prop_assert!(euclidean(&struct_fingerprint(&c), &struct_fingerprint(&back)) <= 1e-9);
    }

    #[test]
    fn reduced_formula_ignores_scaling(seed in any::<u64>(), k in 1u32..9) {
        let comp = crystal_from(seed).composition();
        prop_assert_eq!(comp.scaled(k).reduced_formula(), comp.reduced_formula());
    }
}

/// Electronegativity ordering applied by hand: less electronegative first.
#[test]
fn silica_formula_follows_electronegativity() {
    let en = |s: &str| elements::lookup(s).unwrap().electronegativity.unwrap();
    assert!(en("Si") < en("O"));
    let comp = Composition::from_counts([("O", 8), ("Si", 4)]);
    assert_eq!(comp.reduced_formula(), "SiO2");
}

/// Rock salt: nearest neighbours sit at a/2 = 2.82 Å, which clears half the
/// sum of the Na and Cl radii in the table.
#[test]
fn rock_salt_clears_both_overlap_modes() {
    let c = codec::decode(
        "5.6 5.6 5.6\n90 90 90\nNa\n0.00 0.00 0.00\nNa\n0.00 0.50 0.50\nNa\n0.50 0.00 0.50\nNa\n0.50 0.50 0.00\n\
         Cl\n0.50 0.50 0.50\nCl\n0.50 0.00 0.00\nCl\n0.00 0.50 0.00\nCl\n0.00 0.00 0.50",
    )
    .unwrap();
    let radii = elements::lookup("Na").unwrap().empirical_radius + elements::lookup("Cl").unwrap().empirical_radius;
    assert!(2.8 > validity::RADIUS_FRACTION * radii);
    for mode in MODES {
        let v = structural_validity(&c, mode).unwrap();
        assert!(v.valid);
        assert!((v.min_pair_distance - 2.8).abs() < 1e-9);
    }
    let report = validity::validate(&c, &ValidityConfig::default());
    assert!(report.is_valid());
    assert_eq!(report.oxidation_assignment.unwrap(), [("Cl".to_string(), -1), ("Na".to_string(), 1)].into());
}
