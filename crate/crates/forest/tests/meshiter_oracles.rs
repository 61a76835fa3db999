//! Face iteration against the all-pairs adjacency oracle, and intersection
//! table bounds and symmetry.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

mod common;

use forest_amr::forest::Forest;
use forest_amr::ghost::build_ghost;
use forest_amr::meshiter::{
    build_intersections, iterate_faces, FaceConfig, RankView, SideRef,
};
use forest_amr::quadrant::{num_children, num_faces, opposite_face};
use forest_amr::World;
use std::collections::BTreeMap;
use std::sync::Arc;

type LeafKey = (u32, u128, u8);

/// Multiset of unordered side pairs visited per rank, with boundary faces
/// keyed against a sentinel.
fn visited_pairs(
    forest: &Forest<2>,
    layers: &[forest_amr::GhostLayer<2>],
) -> Vec<BTreeMap<(LeafKey, Option<LeafKey>), usize>> {
    let mut per_rank = Vec::new();
    for rank in 0..forest.num_ranks() {
        let view = RankView::new(forest, rank, &layers[rank]);
        let mut seen: BTreeMap<(LeafKey, Option<LeafKey>), usize> = BTreeMap::new();
        iterate_faces(&view, rank, |rec| {
            let inside = view.leaves[rec.inside as usize].key();
            match &rec.config {
                FaceConfig::Boundary => {
                    // Boundary faces keyed by (inside, None) and face index
                    // via the level slot to keep them distinct per face.
                    let mut key = inside;
                    key.2 = rec.inside_face;
                    *seen.entry((key, None)).or_default() += 1;
                }
                FaceConfig::Same(side) | FaceConfig::OutsideCoarser(side) => {
                    let other = view.leaf_of(*side).key();
                    let pair = if inside <= other {
                        (inside, Some(other))
                    } else {
                        (other, Some(inside))
                    };
                    *seen.entry(pair).or_default() += 1;
                }
                FaceConfig::InsideCoarser(children) => {
                    for side in children {
                        let other = view.leaf_of(*side).key();
                        let pair = if inside <= other {
                            (inside, Some(other))
                        } else {
                            (other, Some(inside))
                        };
                        *seen.entry(pair).or_default() += 1;
                    }
                }
            }
        })
        .unwrap();
        per_rank.push(seen);
    }
    per_rank
}

#[test]
fn counting_examples() {
    // A single leaf: four boundary faces, nothing interior.
    let conn = Arc::new(forest_amr::Connectivity::<2>::unit_cube());
    let forest = Forest::new_uniform(conn.clone(), 0, 1);
    let mut world = World::new(1);
    let layers = build_ghost(&forest, &mut world);
    let view = RankView::new(&forest, 0, &layers[0]);
    let mut boundary = 0;
    let mut interior = 0;
    iterate_faces(&view, 0, |rec| match rec.config {
        FaceConfig::Boundary => boundary += 1,
        _ => interior += 1,
    })
    .unwrap();
    assert_eq!((boundary, interior), (4, 0));

    // Uniform level 1: 4 interior faces, 8 boundary faces.
    let forest = Forest::new_uniform(conn, 1, 1);
    let layers = build_ghost(&forest, &mut world);
    let view = RankView::new(&forest, 0, &layers[0]);
    let mut boundary = 0;
    let mut interior = 0;
    iterate_faces(&view, 0, |rec| match rec.config {
        FaceConfig::Boundary => boundary += 1,
        _ => interior += 1,
    })
    .unwrap();
    assert_eq!((boundary, interior), (8, 4));
}

#[test]
fn hanging_configuration_is_reported_from_the_coarse_side() {
    // One level-1 leaf beside two level-2 leaves: the coarse side's face
    // carries both children; each fine side holds one entry to the coarse
    // leaf.
    let conn = Arc::new(forest_amr::Connectivity::<2>::unit_cube());
    let mut forest = Forest::new_uniform(conn, 1, 1);
    let mut world = World::new(1);
    let layers = build_ghost(&forest, &mut world);
    let mut marking = forest_amr::Marking::zeros(&forest);
    marking.ranks[0][0] = 1;
    let mut handlers = [forest_amr::forest::NoData];
    forest_amr::forest::adapt(&mut forest, &layers, &marking, &mut handlers, &mut world).unwrap();

    let layers = build_ghost(&forest, &mut world);
    let view = RankView::new(&forest, 0, &layers[0]);
    let mut hanging_records = 0;
    iterate_faces(&view, 0, |rec| {
        if let FaceConfig::InsideCoarser(children) = &rec.config {
            hanging_records += 1;
            assert_eq!(children.len(), 2);
        }
        assert!(!matches!(rec.config, FaceConfig::OutsideCoarser(_)));
    })
    .unwrap();
    // The refined child 0 hangs against child 1 (x) and child 2 (y).
    assert_eq!(hanging_records, 2);

    let table = build_intersections(&view, 0).unwrap();
    // Leaf 4 is the level-1 child 1: its -x face holds two entries.
    let entries = table.entries_of(4);
    let minus_x: Vec<_> = entries.iter().filter(|e| e.face == 0).collect();
    assert_eq!(minus_x.len(), 2);
    // Each fine neighbor holds exactly one entry pointing back.
    for e in minus_x {
        let Some(SideRef::Local(j)) = e.side else {
            panic!("expected local side")
        };
        let back: Vec<_> = table
            .entries_of(j as usize)
            .iter()
            .filter(|b| b.side == Some(SideRef::Local(4)))
            .collect();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].face, 1);
    }
}

#[test]
fn face_multiset_matches_all_pairs_oracle() {
    let mut rng = common::rng(91);
    let pool = common::connectivity_pool_2d();
    for case in 0..30 {
        let conn = pool[case % pool.len()].clone();
        let ranks = 1 + case % 4;
        let (forest, mut world) =
            common::random_balanced_forest(conn.clone(), ranks, 2, 4, &mut rng);
        let layers = build_ghost(&forest, &mut world);
        let visited = visited_pairs(&forest, &layers);

        for rank in 0..ranks {
            // Oracle: every local-involved unordered adjacency pair across all
            // shared faces, plus boundary faces of local leaves.
            let mut expected: BTreeMap<(LeafKey, Option<LeafKey>), usize> = BTreeMap::new();
            let locals = forest.rank_leaves(rank);
            // Local-local and local-ghost adjacency.
            let mut others: Vec<forest_amr::Leaf<2>> = Vec::new();
            for r in 0..ranks {
                if r != rank {
                    others.extend_from_slice(forest.rank_leaves(r));
                }
            }
            for (i, a) in locals.iter().enumerate() {
                // Boundary faces.
                for f in 0..num_faces(2) {
                    if common::neighbor_region(forest.connectivity(), a.tree, &a.quad, f)
                        .is_none()
                    {
                        let mut key = a.key();
                        key.2 = f as u8;
                        *expected.entry((key, None)).or_default() += 1;
                    }
                }
                for b in locals.iter().skip(i + 1) {
                    let shares = common::shared_faces(forest.connectivity(), a, b).len();
                    if shares > 0 {
                        let pair = if a.key() <= b.key() {
                            (a.key(), Some(b.key()))
                        } else {
                            (b.key(), Some(a.key()))
                        };
                        *expected.entry(pair).or_default() += shares;
                    }
                }
                for b in others.iter() {
                    let shares = common::shared_faces(forest.connectivity(), a, b).len();
                    if shares > 0 && common::face_adjacent(forest.connectivity(), a, b) {
                        let pair = if a.key() <= b.key() {
                            (a.key(), Some(b.key()))
                        } else {
                            (b.key(), Some(a.key()))
                        };
                        *expected.entry(pair).or_default() += shares;
                    }
                }
                // Periodic self-adjacency (a leaf meeting itself through the
                // torus).
                let selfs = common::shared_faces(forest.connectivity(), a, a).len();
                if selfs > 0 {
                    *expected.entry((a.key(), Some(a.key()))).or_default() += selfs / 2;
                }
            }
            assert_eq!(visited[rank], expected, "case {case} rank {rank}");
        }
    }
}

#[test]
fn iteration_is_deterministic() {
    let mut rng = common::rng(97);
    let conn = common::connectivity_pool_2d()[2].clone();
    let (forest, mut world) = common::random_balanced_forest(conn, 3, 2, 4, &mut rng);
    let layers = build_ghost(&forest, &mut world);
    let collect = || {
        let mut out = Vec::new();
        for rank in 0..3 {
            let view = RankView::new(&forest, rank, &layers[rank]);
            iterate_faces(&view, rank, |rec| {
                out.push((rank, rec.inside, rec.inside_face, rec.outside_face));
            })
            .unwrap();
        }
        out
    };
    assert_eq!(collect(), collect());
}

#[test]
fn intersection_tables_hold_the_entry_bound_and_symmetry() {
    let mut rng = common::rng(93);
    let pool = common::connectivity_pool_2d();
    for case in 0..30 {
        let conn = pool[case % pool.len()].clone();
        let ranks = 1 + case % 3;
        let (forest, mut world) =
            common::random_balanced_forest(conn, ranks, 2, 5, &mut rng);
        let layers = build_ghost(&forest, &mut world);
        for rank in 0..ranks {
            let view = RankView::new(&forest, rank, &layers[rank]);
            let table = build_intersections(&view, rank).unwrap();
            assert!(table.max_entries_per_leaf() <= 2 * num_children(2));

            for i in 0..view.leaves.len() {
                for e in table.entries_of(i) {
                    // Local-local entries are mutual.
                    if let Some(SideRef::Local(j)) = e.side {
                        let back = table
                            .entries_of(j as usize)
                            .iter()
                            .filter(|b| {
                                b.side == Some(SideRef::Local(i as u32))
                                    && b.face == e.nbr_face
                                    && b.nbr_face == e.face
                            })
                            .count();
                        assert_eq!(back, 1, "rank {rank} leaf {i} face {}", e.face);
                    }
                    // Boundary entries carry the inside face number.
                    if e.side.is_none() {
                        assert_eq!(e.face, e.nbr_face);
                    }
                }
            }

            // Consistency with the face iterator: per-leaf entry counts.
            let mut counted = vec![0usize; view.leaves.len()];
            iterate_faces(&view, rank, |rec| match &rec.config {
                FaceConfig::Boundary => counted[rec.inside as usize] += 1,
                FaceConfig::Same(side) | FaceConfig::OutsideCoarser(side) => {
                    counted[rec.inside as usize] += 1;
                    if let SideRef::Local(j) = side {
                        counted[*j as usize] += 1;
                    }
                }
                FaceConfig::InsideCoarser(children) => {
                    for side in children {
                        counted[rec.inside as usize] += 1;
                        if let SideRef::Local(j) = side {
                            counted[*j as usize] += 1;
                        }
                    }
                }
            })
            .unwrap();
            for i in 0..view.leaves.len() {
                assert_eq!(counted[i], table.entries_of(i).len(), "leaf {i}");
            }
        }
    }
}

#[test]
fn unbalanced_forests_are_rejected() {
    let conn = Arc::new(forest_amr::Connectivity::<2>::unit_cube());
    let mut forest = Forest::new_uniform(conn, 1, 1);
    let mut world = World::new(1);
    for _ in 0..2 {
        let mut marking = forest_amr::Marking::zeros(&forest);
        marking.ranks[0][3] = 1;
        let mut handlers = [forest_amr::forest::NoData];
        forest_amr::forest::adapt_raw(&mut forest, &marking, &mut handlers, &mut world).unwrap();
    }
    let layers = build_ghost(&forest, &mut world);
    let view = RankView::new(&forest, 0, &layers[0]);
    assert!(iterate_faces(&view, 0, |_| {}).is_err());
    assert!(build_intersections(&view, 0).is_err());
    let _ = opposite_face(0);
}
