mod common;

use std::collections::BTreeSet;

use lsr_core::mapping::LatentTuple;
use lsr_core::roadmap::{agglomerate, optimize_tau, Clustering, Linkage, RoadmapBuilder};
use lsr_core::task::{Action, Cell};
use lsr_core::MetricKind;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

#[test]
fn nn_chain_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..100 {
        let n = rng.random_range(2..=64);
        let dim = rng.random_range(1..=4);
        let points = random_points(&mut rng, n, dim);
        let metric = [MetricKind::L1, MetricKind::L2, MetricKind::Linf][case % 3];
        for linkage in [Linkage::Average, Linkage::Single, Linkage::Complete] {
            let d = agglomerate(&points, metric, linkage).unwrap();
            let want = naive(&points, metric, linkage);
            assert!(
                same_steps(&steps_of(&d), &want),
                "case {case}: n={n} {metric} {linkage} disagrees with the oracle"
            );
        }
    }
}

#[test]
fn average_heights_are_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = random_points(&mut rng, 300, 5);
    let d = agglomerate(&points, MetricKind::L1, Linkage::Average).unwrap();
    assert!(d.merges().windows(2).all(|w| w[0].height <= w[1].height));
    assert_eq!(d.merges().last().unwrap().size, 300);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cuts_are_nested(seed in 0u64..10_000, t1 in 0.0f64..6.0, dt in 0.0f64..6.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = random_points(&mut rng, 40, 2);
        let d = agglomerate(&points, MetricKind::L1, Linkage::Average).unwrap();
        let fine = d.cut(t1);
        let coarse = d.cut(t1 + dt);
        // Every fine cluster lies inside one coarse cluster.
        for members in fine.members() {
            let l = coarse.labels[members[0]];
            prop_assert!(members.iter().all(|&m| coarse.labels[m] == l));
        }
        prop_assert!(coarse.n_clusters <= fine.n_clusters);
    }
}

/// Blobs on a line, neighbours joined by action pairs: ψ is zero-edged at
/// small τ (too many components), peaks while each blob is its own region and
/// drops once blobs merge.
fn chain_fixture(blobs: usize, per_blob: usize, seed: u64) -> Vec<LatentTuple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = Action::PickPlace {
        pick: Cell { row: 0, col: 0 },
        release: Cell { row: 0, col: 1 },
    };
    let jitter = |rng: &mut ChaCha8Rng, c: f64| vec![c + rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)];
    let mut out = Vec::new();
    for b in 0..blobs {
        let c = 2.0 * b as f64;
        for _ in 0..per_blob {
            out.push(LatentTuple {
                z1: jitter(&mut rng, c),
                z2: jitter(&mut rng, c),
                action: None,
                s1: Some(b),
                s2: Some(b),
            });
        }
        if b + 1 < blobs {
            for (from, to) in [(b, b + 1), (b + 1, b)] {
                out.push(LatentTuple {
                    z1: jitter(&mut rng, 2.0 * from as f64),
                    z2: jitter(&mut rng, 2.0 * to as f64),
                    action: Some(act),
                    s1: Some(from),
                    s2: Some(to),
                });
            }
        }
    }
    out
}

#[test]
fn brent_matches_grid_search_on_unimodal_fixture() {
    let tuples = chain_fixture(6, 5, 11);
    let builder = RoadmapBuilder::new(&tuples, MetricKind::L1, Clustering::AVERAGE).unwrap();
    let search = optimize_tau(&builder, 0.0, 3.0, 1, 1e-3).unwrap();
    let grid_best = (0..=3000)
        .map(|k| builder.psi(k as f64 * 1e-3, 1))
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(search.psi, grid_best);
    assert!((0.0..=3.0).contains(&search.tau));
    assert_eq!(search.roadmap.n_regions(), 6);
    assert_eq!(search.roadmap.edges.len(), 10);
    assert_eq!(search.roadmap.components, 1);
    // Each region holds exactly one blob.
    for i in 0..6 {
        let states: BTreeSet<_> = search.roadmap.regions[i]
            .members
            .iter()
            .map(|&m| search.roadmap.point_states[m])
            .collect();
        assert_eq!(states.len(), 1);
    }
}

#[test]
fn tau_search_never_leaves_the_interval() {
    let tuples = chain_fixture(4, 3, 5);
    let builder = RoadmapBuilder::new(&tuples, MetricKind::L2, Clustering::AVERAGE).unwrap();
    for (lo, hi) in [(0.0, 3.0), (0.5, 0.7), (2.5, 40.0)] {
        if let Ok(s) = optimize_tau(&builder, lo, hi, usize::MAX, 1e-3) {
            assert!(s.tau >= lo && s.tau <= hi);
            assert!(s.evaluations.iter().all(|&(t, _)| t >= lo && t <= hi));
            let ends = [builder.psi(lo, usize::MAX), builder.psi(hi, usize::MAX)];
            assert!(ends.iter().all(|&e| s.psi >= e));
        }
    }
    assert!(optimize_tau(&builder, 1.0, 1.0, 1, 1e-3).is_err());
}

#[test]
fn infeasible_component_bound_is_an_error() {
    // Two blobs with no action pair between them never form one component
    // below the height that merges them.
    let mut tuples = chain_fixture(1, 4, 2);
    tuples.extend(chain_fixture(1, 4, 3).into_iter().map(|mut t| {
        t.z1[0] += 50.0;
        t.z2[0] += 50.0;
        t
    }));
    let builder = RoadmapBuilder::new(&tuples, MetricKind::L1, Clustering::AVERAGE).unwrap();
    assert!(optimize_tau(&builder, 0.0, 3.0, 1, 1e-3).is_err());
    assert!(optimize_tau(&builder, 0.0, 3.0, 2, 1e-3).is_ok());
}
