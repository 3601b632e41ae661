use force_effect::dataset::{generate, GenConfig, Split};
use force_effect::eval::{
    edit_distance, evaluate, holdout_split, neighbor_table, relaxed_correct, strict_correct,
    EDIT_DS, RELAXED_KS,
};
use force_effect::quantize::{build_vocabulary, Token, VelocitySequence, MAX_STEPS, NUM_DIRECTIONS};
use force_effect::scene::Category;
use force_effect::seed;
use proptest::prelude::*;
use rand::Rng;

fn seq(ix: &[usize]) -> VelocitySequence {
    VelocitySequence::new(ix.iter().map(|&i| Token::new(i).unwrap()).collect()).unwrap()
}

fn random_seq(rng: &mut impl Rng) -> VelocitySequence {
    let len = rng.random_range(1..=MAX_STEPS);
    let mut ix: Vec<usize> = (0..len).map(|_| rng.random_range(0..NUM_DIRECTIONS)).collect();
    if len < MAX_STEPS || rng.random_bool(0.5) {
        ix[len - 1] = 17;
    }
    seq(&ix)
}

/// Copy of `s` with each direction replaced with probability `p`, so strict matches occur.
fn perturbed(s: &VelocitySequence, p: f64, rng: &mut impl Rng) -> VelocitySequence {
    let ix = s
        .tokens()
        .iter()
        .map(|t| {
            if !t.is_stop() && rng.random_bool(p) {
                rng.random_range(0..NUM_DIRECTIONS)
            } else {
                t.index()
            }
        })
        .collect::<Vec<_>>();
    seq(&ix)
}

fn random_pair(rng: &mut impl Rng) -> (VelocitySequence, VelocitySequence) {
    let a = random_seq(rng);
    let b = if rng.random_bool(0.5) { perturbed(&a, 0.3, rng) } else { random_seq(rng) };
    (a, b)
}

/// Full-matrix recursive Levenshtein.
fn dp_oracle(a: &[usize], b: &[usize]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

fn indices(s: &VelocitySequence) -> Vec<usize> {
    s.tokens().iter().map(|t| t.index()).collect()
}

#[test]
fn strict_examples() {
    assert!(strict_correct(&seq(&[3, 17]), &seq(&[3, 17])));
    assert!(!strict_correct(&seq(&[0, 17]), &seq(&[0, 1, 17])));
    assert!(!strict_correct(&seq(&[0, 4, 17]), &seq(&[0, 5, 17])));
}

#[test]
fn relaxation_at_zero_is_strict() {
    let table = neighbor_table(&build_vocabulary());
    let mut rng = seed::rng(seed::derive(1, 0x6576));
    let mut matches = 0;
    for _ in 0..10_000 {
        let (a, b) = random_pair(&mut rng);
        let strict = strict_correct(&a, &b);
        matches += usize::from(strict);
        assert_eq!(relaxed_correct(&a, &b, 0, &table), strict, "{a:?} {b:?}");
    }
    assert!(matches > 500, "scan must exercise the accepting branch, got {matches}");
}

#[test]
fn full_relaxation_accepts_any_direction() {
    let table = neighbor_table(&build_vocabulary());
    let mut rng = seed::rng(seed::derive(2, 0x6576));
    for _ in 0..2000 {
        let a = random_seq(&mut rng);
        let b = perturbed(&a, 1.0, &mut rng);
        assert!(relaxed_correct(&b, &a, 16, &table));
    }
    assert!(!relaxed_correct(&seq(&[0, 0, 0, 0, 0, 0]), &seq(&[0, 0, 0, 0, 0, 17]), 16, &table));
    assert!(!relaxed_correct(&seq(&[0, 17]), &seq(&[0, 0, 17]), 16, &table));
}

#[test]
fn adjacent_azimuth_accepted_at_one() {
    let table = neighbor_table(&build_vocabulary());
    assert!(!relaxed_correct(&seq(&[1, 17]), &seq(&[0, 17]), 0, &table));
    assert!(relaxed_correct(&seq(&[1, 17]), &seq(&[0, 17]), 1, &table));
}

#[test]
fn neighbor_table_matches_brute_force() {
    let vocab = build_vocabulary();
    let table = neighbor_table(&vocab);
    let dirs = vocab.directions();
    let ang = |i: usize, j: usize| {
        let c = dirs[i].dot(dirs[j]) / (dirs[i].norm() * dirs[j].norm());
        c.clamp(-1.0, 1.0).acos()
    };
    for i in 0..NUM_DIRECTIONS {
        let row = table.order[i];
        assert_eq!(row[0], i);
        let mut sorted = row.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..NUM_DIRECTIONS).collect::<Vec<_>>(), "row {i} is a permutation");
        for w in row.windows(2) {
            assert!(ang(i, w[0]) <= ang(i, w[1]) + 1e-9, "row {i} not sorted by angle");
        }
        for k in 0..NUM_DIRECTIONS {
            // Brute force: j is within k iff fewer than k+1 directions are strictly closer.
            for j in 0..NUM_DIRECTIONS {
                let closer = (0..NUM_DIRECTIONS).filter(|&m| ang(i, m) < ang(i, j) - 1e-9).count();
                if table.within(i, j, k) {
                    assert!(closer <= k, "({i},{j}) accepted at k={k} with {closer} closer");
                }
                let tied_or_closer =
                    (0..NUM_DIRECTIONS).filter(|&m| ang(i, m) <= ang(i, j) + 1e-9).count();
                if tied_or_closer <= k + 1 {
                    assert!(table.within(i, j, k), "({i},{j}) rejected at k={k}");
                }
            }
        }
    }
    for i in 0..NUM_DIRECTIONS {
        for j in 0..NUM_DIRECTIONS {
            assert!((ang(i, j) - ang(j, i)).abs() < 1e-12);
        }
    }
}

#[test]
fn edit_distance_examples() {
    assert_eq!(edit_distance(&seq(&[2, 17]), &seq(&[2, 17])), 0);
    assert_eq!(edit_distance(&seq(&[0, 17]), &seq(&[0, 1, 17])), 1);
    assert_eq!(edit_distance(&seq(&[17]), &seq(&[5, 6, 7, 17])), 3);
}

#[test]
fn edit_distance_matches_dp_oracle() {
    let mut rng = seed::rng(seed::derive(3, 0x6576));
    for _ in 0..1000 {
        let (a, b) = random_pair(&mut rng);
        let d = edit_distance(&a, &b);
        assert_eq!(d, dp_oracle(&indices(&a), &indices(&b)));
        assert!(d >= a.len().abs_diff(b.len()));
    }
}

#[test]
fn evaluate_examples() {
    let vocab = build_vocabulary();
    let gt = vec![seq(&[17]), seq(&[0, 17]), seq(&[17]), seq(&[4, 4, 17])];
    let cats = vec![Category::Chair, Category::Box, Category::Box, Category::Lamp];
    let perfect = evaluate(&gt, &gt, &cats, &vocab).unwrap();
    assert_eq!(perfect.strict_accuracy, 1.0);
    assert_eq!(perfect.relaxed.len(), RELAXED_KS);
    assert_eq!(perfect.edit_curve.len(), EDIT_DS);
    assert!(perfect.relaxed.iter().chain(&perfect.edit_curve).all(|&v| v == 1.0));
    assert_eq!(perfect.n_samples, 4);
    assert_eq!(perfect.n_distinct_gt_patterns, 3);
    assert_eq!(perfect.chance_level, 1.0 / 3.0);
    assert_eq!(perfect.majority_level, 0.5);

    let stops = vec![VelocitySequence::stop(); 4];
    let r = evaluate(&stops, &gt, &cats, &vocab).unwrap();
    assert_eq!(r.strict_accuracy, 0.5);
    assert_eq!(r.edit_curve, vec![0.5, 0.75, 1.0, 1.0, 1.0, 1.0]);
    assert_eq!(r.per_category["box"].n_samples, 2);
    assert_eq!(r.per_category["box"].strict_accuracy, 0.5);
    assert_eq!(r.per_category["chair"].strict_accuracy, 1.0);
    assert_eq!(r.per_category["lamp"].strict_accuracy, 0.0);

    assert!(evaluate(&stops[..3], &gt, &cats, &vocab).is_err());
}

fn random_report_inputs(rng: &mut impl Rng, n: usize) -> (Vec<VelocitySequence>, Vec<VelocitySequence>) {
    let gt: Vec<_> = (0..n).map(|_| random_seq(rng)).collect();
    let pred = gt
        .iter()
        .map(|g| if rng.random_bool(0.2) { random_seq(rng) } else { perturbed(g, 0.2, rng) })
        .collect();
    (pred, gt)
}

#[test]
fn report_identities_and_monotone_curves() {
    let vocab = build_vocabulary();
    let mut rng = seed::rng(seed::derive(4, 0x6576));
    for _ in 0..50 {
        let (pred, gt) = random_report_inputs(&mut rng, 200);
        let cats = vec![Category::Desk; gt.len()];
        let r = evaluate(&pred, &gt, &cats, &vocab).unwrap();
        assert_eq!(r.relaxed[0], r.strict_accuracy);
        assert_eq!(r.edit_curve[0], r.strict_accuracy);
        for w in r.relaxed.windows(2).chain(r.edit_curve.windows(2)) {
            assert!(w[0] <= w[1]);
        }
        assert!(r.relaxed.iter().chain(&r.edit_curve).all(|v| (0.0..=1.0).contains(v)));
    }
}

fn small_dataset() -> force_effect::dataset::Dataset {
    generate(&GenConfig { scenes: 24, forces_per_body: 2, seed: 5, ..GenConfig::default() }).unwrap()
}

#[test]
fn holdout_partitions_training_set() {
    let ds = small_dataset();
    let train: Vec<_> = ds.split(Split::Train).into_iter().cloned().collect();
    let test_len = ds.split(Split::Test).len();
    let mut any_removed = false;
    for cat in Category::MOVABLE {
        let h = holdout_split(&ds, cat.name()).unwrap();
        assert_eq!(h.test.len(), test_len);
        assert!(h.test.iter().all(|r| r.split == Split::Test));
        assert!(h.train.iter().all(|r| r.target_category().unwrap() != cat));
        assert!(h.removed.iter().all(|r| r.target_category().unwrap() == cat));
        assert_eq!(h.train.len() + h.removed.len(), train.len());
        // Partition in original order: merging by position must rebuild the train split.
        let (mut i, mut j) = (0, 0);
        for r in &train {
            if i < h.train.len() && h.train[i] == *r {
                i += 1;
            } else {
                assert_eq!(h.removed[j], *r);
                j += 1;
            }
        }
        any_removed |= !h.removed.is_empty();
    }
    assert!(any_removed);
    assert!(holdout_split(&ds, "spaceship").is_err());
}

proptest! {
    #[test]
    fn edit_distance_is_a_metric(s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let (a, b, c) = (random_seq(&mut rng), random_seq(&mut rng), random_seq(&mut rng));
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
    }

    #[test]
    fn relaxation_grows_with_k(s in any::<u64>()) {
        let table = neighbor_table(&build_vocabulary());
        let mut rng = seed::rng(s);
        let (a, b) = random_pair(&mut rng);
        for k in 0..16 {
            prop_assert!(!relaxed_correct(&a, &b, k, &table) || relaxed_correct(&a, &b, k + 1, &table));
        }
    }
}
