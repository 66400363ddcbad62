use lozenge::domain::*;
use lozenge::rational::Rat;
use lozenge::sampler::ExactSampler;
use num_traits::Zero;
use proptest::prelude::*;

fn domains() -> Vec<Domain> {
    [
        PolygonalDomain::hexagon(1, 2, 2, 2),
        PolygonalDomain::hexagon(2, 1, 3, 2),
        // Two particles created at t = 1/2.
        PolygonalDomain::from_lattice_vertices(2, &[(0, 0), (2, 0), (3, 1), (3, 2), (5, 2), (6, 3), (6, 5), (2, 5), (0, 3)]),
        // A notch in the bottom edge.
        PolygonalDomain::from_lattice_vertices(1, &[(0, 0), (1, 0), (2, 1), (2, 0), (3, 0), (4, 1), (4, 2), (2, 2)]),
    ]
    .into_iter()
    .map(|p| Domain::new(p).unwrap())
    .collect()
}

#[test]
fn config_height_meets_boundary_height() {
    for d in domains() {
        let n = d.n();
        let tilings = ExactSampler::new(&d).unwrap().enumerate(10_000).unwrap();
        assert!(!tilings.is_empty());
        for rows in &tilings {
            for (j, row) in rows.iter().enumerate().take(d.steps() as usize) {
                let c = ParticleConfiguration::from_lattice(n, j as i64, row);
                assert_eq!(d.particle_count(c.t.0).unwrap(), row.len() as i64);
                for piece in config_height(&c, &d).unwrap() {
                    for x in [piece.interval.0, piece.interval.1] {
                        let beta = d.boundary_height(&RatPoint::new(x, c.t.0));
                        assert_eq!(piece.eval(x), beta, "level {j}, x = {x}");
                    }
                }
            }
        }
    }
}

/// Length of the lower horizontal edges at `t`, in lattice steps.
fn created_at(d: &Domain, t: Rat) -> i64 {
    let v = d.raw().vertices();
    let n = Rat::from_integer(d.n());
    (0..v.len())
        .map(|i| (&v[i], &v[(i + 1) % v.len()]))
        .filter(|(a, b)| a.t == t && b.t == t && b.x > a.x)
        .map(|(a, b)| ((b.x - a.x) * n).to_integer())
        .sum()
}

#[test]
fn creation_adds_exactly_the_edge_mass() {
    for d in domains() {
        let n = d.n();
        for (k, t) in d.horizontal_times().into_iter().enumerate() {
            if t == d.height() {
                continue;
            }
            let level = (t * Rat::from_integer(n)).to_integer();
            let inserted = created_at(&d, t);
            let mut ok = 0;
            // Every subset of the first 12 lattice sites as a candidate.
            for mask in 0u32..(1 << 12) {
                let pos: Vec<i64> = (0..12).filter(|b| mask >> b & 1 == 1).collect();
                let before = ParticleConfiguration::from_lattice(n, level, &pos);
                if let Ok(after) = apply_creation(&before, &d, t) {
                    let (_, a) = after.to_lattice(n).unwrap();
                    assert!(pos.iter().all(|p| a.contains(p)));
                    assert_eq!(a.len() as i64, pos.len() as i64 + inserted);
                    ok += 1;
                }
            }
            assert!(ok > 0 || k > 0 || t.is_zero(), "no valid configuration at {t}");
        }
    }
}

/// Union of closed intervals with touching pieces merged.
fn union(ivs: Vec<(Rat, Rat)>) -> Vec<(Rat, Rat)> {
    let mut out: Vec<(Rat, Rat)> = Vec::new();
    for (a, b) in ivs {
        match out.last_mut() {
            Some(last) if last.1 >= a => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn slices_agree_off_edge_times(which in 0usize..4, p in 1i64..60, q in 2i64..61) {
        prop_assume!(p < q);
        let d = &domains()[which];
        let t = d.height() * Rat::new(p, q);
        prop_assume!(!d.horizontal_times().contains(&t));
        let lower = d.slice_at(t, Side::Lower).unwrap();
        let upper = d.slice_at(t, Side::Upper).unwrap();
        // The upper slice keeps pieces that touch at a notch apex apart
        // (each carries its own mass); as point sets the slices agree.
        prop_assert_eq!(union(lower.intervals), union(upper.intervals));
    }

    #[test]
    fn particle_count_is_defined_inside_the_strip(which in 0usize..4, p in -20i64..200, q in 1i64..30) {
        let d = &domains()[which];
        let t = Rat::new(p, q);
        let inside = t >= Rat::zero() && t <= d.height();
        let m = d.particle_count(t);
        prop_assert_eq!(m.is_ok(), inside);
        if let Ok(m) = m {
            prop_assert!(m >= 0);
        }
    }
}
