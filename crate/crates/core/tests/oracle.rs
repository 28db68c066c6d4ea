//! The virtual backend against an independent reference interpreter, and
//! structural checks against brute-force oracles.

mod support;

use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stitch_core::{load_spec, wire, Backend, VirtualBackend};
use support::{gen, reference};

#[test]
fn virtual_backend_matches_reference_on_random_programs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut kinds = [0usize; 3];
    for _ in 0..300 {
        let spec = gen::spec(&mut rng, 4);
        let vm = VirtualBackend::new(&spec).unwrap();
        let oracle = reference::Reference::new(&spec);
        let shapes = vm.param_shapes();
        for _ in 0..10 {
            let t = gen::testcase(&mut rng, &spec, &shapes, 6);
            let want = oracle.run(&t);
            let got = reference::observe(&vm, &vm.execute(&t).unwrap());
            assert_eq!(got, want, "spec {spec:?}\ntestcase {t:?}");
            kinds[match want.kind {
                reference::Kind::Completed => 0,
                reference::Kind::Bail(_) => 1,
                reference::Kind::Crash(..) => 2,
            }] += 1;
        }
    }
    assert!(kinds.iter().all(|&k| k >= 50), "unbalanced battery {kinds:?}");
}

#[test]
fn reference_reads_the_shipped_fixtures() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for f in ["xml40.json", "misuse_unguarded.json", "minijson.json"] {
        let spec = load_spec(&dir.join(f)).unwrap();
        let vm = VirtualBackend::new(&spec).unwrap();
        let oracle = reference::Reference::new(&spec);
        let shapes = vm.param_shapes();
        for _ in 0..300 {
            let t = gen::testcase(&mut rng, &spec, &shapes, 8);
            assert_eq!(
                reference::observe(&vm, &vm.execute(&t).unwrap()),
                oracle.run(&t),
                "{f}: {t:?}"
            );
        }
    }
}

proptest! {
    #[test]
    fn wire_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = gen::spec(&mut rng, 4);
        let shapes = VirtualBackend::new(&spec).unwrap().param_shapes();
        let t = gen::testcase(&mut rng, &spec, &shapes, 6);
        let bytes = wire::serialize(&t);
        prop_assert_eq!(wire::deserialize(&bytes, &spec).unwrap(), t.clone());
        prop_assert_eq!(wire::deserialize_unchecked(&bytes).unwrap(), t);
    }

    #[test]
    fn validate_agrees_with_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = gen::spec(&mut rng, 4);
        let t = gen::wild_testcase(&mut rng, &spec, 6);
        prop_assert_eq!(t.is_well_formed(&spec), gen::brute_well_formed(&spec, &t));
    }

    #[test]
    fn generated_testcases_are_well_formed(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = gen::spec(&mut rng, 4);
        let shapes = VirtualBackend::new(&spec).unwrap().param_shapes();
        let t = gen::testcase(&mut rng, &spec, &shapes, 6);
        prop_assert!(gen::brute_well_formed(&spec, &t));
    }
}
