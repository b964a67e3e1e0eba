mod common;

use lsr_core::eval::{covered_fraction, region_states, relative_contrast, score_planning, uniform_noise_observations};
use lsr_core::mapping::LatentTuple;
use lsr_core::planner::PlannerConfig;
use lsr_core::task::TaskKind;
use lsr_core::MetricKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracle_fixture;

#[test]
fn oracle_roadmap_scores_perfectly() {
    for task in [TaskKind::NormalStacking, TaskKind::RopeBox] {
        let (map, model, holdout) = oracle_fixture(task);
        assert_eq!(map.n_regions(), task.space().len());
        assert_eq!(map.components, 1);
        let states = region_states(task, &map, &model).unwrap();
        assert!((0..map.n_regions()).all(|i| Some(states[i]) == map.majority_state(i)));
        let r = score_planning(task, &map, &model, &holdout, 300, 9, &PlannerConfig::default()).unwrap();
        assert_eq!((r.pct_all, r.pct_any, r.pct_trans), (100.0, 100.0, 100.0), "{task}: {r:?}");
        assert_eq!(r.unreachable, 0);
    }
}

#[test]
fn oracle_roadmap_does_not_cover_noise() {
    let task = TaskKind::NormalStacking;
    let (map, model, _) = oracle_fixture(task);
    let noise = uniform_noise_observations(task.obs_dim(), 200, 4);
    assert_eq!(covered_fraction(&map, &model, &noise).unwrap(), 0.0);
}

/// (mean furthest − mean nearest) / mean nearest, over both halves, by
/// sorting each point's distance list.
fn rc_direct(tuples: &[LatentTuple]) -> f64 {
    let (mut lo, mut hi, mut n) = (0.0, 0.0, 0.0);
    for half in [
        tuples.iter().map(|t| t.z1.clone()).collect::<Vec<_>>(),
        tuples.iter().map(|t| t.z2.clone()).collect(),
    ] {
        for (i, p) in half.iter().enumerate() {
            let mut d: Vec<f64> = half
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
                .collect();
            d.sort_by(f64::total_cmp);
            lo += d[0];
            hi += d[d.len() - 1];
            n += 1.0;
        }
    }
    (hi / n - lo / n) / (lo / n)
}

#[test]
fn relative_contrast_matches_direct_recompute() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(2..60);
        let dim = rng.random_range(1..8);
        let mut v = || (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let tuples: Vec<LatentTuple> = (0..n)
            .map(|_| LatentTuple {
                z1: v(),
                z2: v(),
                action: None,
                s1: None,
                s2: None,
            })
            .collect();
        let got = relative_contrast(&tuples, MetricKind::L1).unwrap();
        let want = rc_direct(&tuples);
        assert!((got.rc - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {want}", got.rc);
    }
}
