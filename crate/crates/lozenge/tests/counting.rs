use lozenge::counting::*;
use lozenge::domain::{Domain, PolygonalDomain};
use proptest::prelude::*;

fn hex(n: i64, a: i64, b: i64, c: i64) -> Domain {
    Domain::new(PolygonalDomain::hexagon(n, a, b, c)).unwrap()
}

/// Every strictly increasing `m`-subset of `0..w`.
fn subsets(m: usize, w: i64) -> Vec<Vec<i64>> {
    (0u32..(1 << w)).filter(|s| s.count_ones() as usize == m).map(|s| (0..w).filter(|b| s >> b & 1 == 1).collect()).collect()
}

#[test]
fn free_strips_match_lgv_exhaustively() {
    let mut instances = 0;
    for m in 1..=4 {
        for steps in 0..=8 {
            for start in subsets(m, m as i64 + 1) {
                for end in subsets(m, m as i64 + steps.min(4) + 1) {
                    assert_eq!(
                        count_free_strip(&start, &end, steps).unwrap(),
                        count_lgv_lattice(&start, &end, steps).unwrap(),
                        "{start:?} -> {end:?} in {steps}"
                    );
                    instances += 1;
                }
            }
        }
    }
    assert!(instances > 1000, "{instances}");
}

#[test]
fn recursion_audit_holds() {
    let l_shape =
        PolygonalDomain::from_lattice_vertices(2, &[(0, 0), (2, 0), (3, 1), (3, 2), (5, 2), (6, 3), (6, 5), (2, 5), (0, 3)]);
    for d in [hex(1, 2, 3, 2), hex(2, 2, 1, 3), Domain::new(l_shape).unwrap()] {
        assert!(audit_recursion(&d, DEFAULT_STATE_CAP).unwrap());
    }
}

#[test]
fn large_hexagon_needs_big_integers() {
    let c = count_tilings(&hex(1, 8, 8, 8)).unwrap().value;
    assert_eq!(c, count_hexagon_product(8, 8, 8));
    assert!(c.bits() > 64);
}

proptest! {
    #[test]
    fn hexagon_count_is_symmetric(a in 1i64..5, b in 1i64..5, c in 1i64..5, n in 1i64..3) {
        let base = count_tilings(&hex(n, a, b, c)).unwrap().value;
        for (x, y, z) in [(b, a, c), (c, b, a), (a, c, b), (b, c, a)] {
            prop_assert_eq!(&count_tilings(&hex(n, x, y, z)).unwrap().value, &base);
        }
        prop_assert_eq!(base, count_hexagon_product(a as u32, b as u32, c as u32));
    }
}
