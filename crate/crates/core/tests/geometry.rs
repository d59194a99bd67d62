use proptest::prelude::*;
use qplab_core::lattice::{
    adjust_region, adjust_region_with_floor, check_region_pair, enumerate_elementary_regions,
    find_window, sup_distance, AdjustCase, ElementaryRegion, IBox, LatticePoint, PointSet, Sign,
    SignPattern,
};

fn p(v: &[i64]) -> LatticePoint {
    LatticePoint::new(v.to_vec())
}

/// Exhaustive check of the three window postconditions.
fn window_ok(k: &LatticePoint, domain: &PointSet, w: &ElementaryRegion) -> bool {
    let pts = w.points();
    if !pts.contains(k) || !pts.is_subset_of(domain) {
        return false;
    }
    domain
        .difference(&pts)
        .iter()
        .all(|q| 2 * sup_distance(k, q).unwrap() >= w.size)
}

#[test]
fn corner_window_is_carved_or_shifted() {
    let dom = PointSet::cube(&p(&[0, 0]), 10);
    let k = p(&[10, 10]);
    let w = find_window(&k, &dom, 2).expect("corner admits a window");
    assert!(window_ok(&k, &dom, &w));
    assert_eq!(w.size, 2);
}

#[test]
fn windows_in_an_l_shaped_domain() {
    let big = PointSet::cube(&p(&[0, 0]), 6);
    let hole = PointSet::from_box(&IBox {
        lo: vec![1, 1],
        hi: vec![6, 6],
    });
    let dom = big.difference(&hole);
    for k in dom.iter() {
        if let Some(w) = find_window(k, &dom, 2) {
            assert!(window_ok(k, &dom, &w), "bad window at {k}");
        }
    }
}

#[test]
fn interior_case_keeps_the_cube() {
    let q = ElementaryRegion::cube(p(&[0, 0]), 30);
    let n = p(&[1, -2]);
    let adj = adjust_region(&n, &q, 12, 2).unwrap();
    assert_eq!(adj.case, AdjustCase::Interior);
    assert_eq!(adj.pair.outer, ElementaryRegion::cube(n.clone(), 12));
    assert_eq!(adj.pair.inner, PointSet::cube(&n, adj.inner_radius));
    assert!(check_region_pair(&n, &q, 12, 2, &adj).is_empty());
}

#[test]
fn near_boundary_cases() {
    let q = ElementaryRegion::cube(p(&[0]), 40);
    // inner cube well away from the edge, outer cube sticks out
    let n = p(&[33]);
    let adj = adjust_region(&n, &q, 16, 2).unwrap();
    assert_eq!(adj.case, AdjustCase::Shrunk);
    assert!(check_region_pair(&n, &q, 16, 2, &adj).is_empty());
    // a sliver too thin for a window between the inner cube and the edge
    let n = p(&[36]);
    let adj = adjust_region(&n, &q, 16, 2).unwrap();
    assert!(check_region_pair(&n, &q, 16, 2, &adj).is_empty());
    assert_eq!(adj.case, AdjustCase::Collared);
}

#[test]
fn infeasible_reports_condition() {
    let q = ElementaryRegion::cube(p(&[0]), 5);
    let err = adjust_region(&p(&[0]), &q, 4, 4).unwrap_err();
    assert!(err.to_string().contains("size floor"), "{err}");
}

#[test]
fn toy_scale_geometry_every_point() {
    let q = ElementaryRegion::cube(p(&[0]), 24);
    for k in -24..=24 {
        let n = p(&[k]);
        let adj = adjust_region_with_floor(&n, &q, 16, 4, 8).unwrap();
        let v = check_region_pair(&n, &q, 16, 4, &adj);
        assert!(v.is_empty(), "n={k}: {v:?}");
    }
}

#[test]
fn two_dimensional_sweep_with_carved_q() {
    let pat = SignPattern::new(vec![Sign::Gt, Sign::Lt]).unwrap();
    let q = ElementaryRegion::carved(p(&[0, 0]), 14, pat).unwrap();
    let mut ok = 0;
    for pt in q.points().iter().step_by(7) {
        match adjust_region_with_floor(pt, &q, 12, 1, 4) {
            Ok(adj) => {
                let v = check_region_pair(pt, &q, 12, 1, &adj);
                assert!(v.is_empty(), "n={pt}: {v:?}");
                ok += 1;
            }
            Err(e) => assert!(e.to_string().contains("infeasible"), "{e}"),
        }
    }
    assert!(ok > 0);
}

fn small_region(d: usize) -> impl Strategy<Value = ElementaryRegion> {
    (1u64..5, 0usize..21).prop_map(move |(n, idx)| {
        let all = enumerate_elementary_regions(n, d).unwrap();
        all[idx % all.len()].clone()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn region_cardinality_bounds(r in small_region(3)) {
        let pts = r.points();
        prop_assert!(pts.len() as u64 <= (2 * r.size + 1).pow(3));
        prop_assert!(pts.diameter() <= 2 * r.size);
        prop_assert_eq!(pts.len() as u64, r.cardinality());
    }

    #[test]
    fn find_window_postconditions(
        d in 1usize..3,
        size in 3u64..7,
        m in 1u64..4,
        seed in 0usize..10_000,
    ) {
        let regions = enumerate_elementary_regions(size, d).unwrap();
        let dom = regions[seed % regions.len()].points();
        let k = dom.points()[seed % dom.len()].clone();
        if let Some(w) = find_window(&k, &dom, m) {
            prop_assert!(window_ok(&k, &dom, &w));
        }
    }

    #[test]
    fn adjust_region_passes_checker(
        d in 1usize..3,
        qsize in 10u64..22,
        n_bar in 8u64..16,
        seed in 0usize..100_000,
    ) {
        let regions = enumerate_elementary_regions(qsize, d).unwrap();
        let q = regions[seed % regions.len()].clone();
        let pts = q.points();
        let n = pts.points()[(seed / 7) % pts.len()].clone();
        if let Ok(adj) = adjust_region_with_floor(&n, &q, n_bar, 1, n_bar.div_ceil(4)) {
            let v = check_region_pair(&n, &q, n_bar, 1, &adj);
            prop_assert!(v.is_empty(), "{:?}", v);
        }
    }

    #[test]
    fn adjust_region_is_translation_equivariant(
        k in -24i64..=24,
        t in -50i64..50,
        n_bar in 12u64..20,
    ) {
        let q = ElementaryRegion::cube(p(&[0]), 24);
        let n = p(&[k]);
        let tt = p(&[t]);
        let a = adjust_region_with_floor(&n, &q, n_bar, 2, 6);
        let b = adjust_region_with_floor(&n.translate(&tt), &q.translate(&tt), n_bar, 2, 6);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.pair.outer.translate(&tt), b.pair.outer);
                prop_assert_eq!(a.pair.inner.translate(&tt), b.pair.inner);
                prop_assert_eq!(a.case, b.case);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "feasibility changed under translation"),
        }
    }
}
