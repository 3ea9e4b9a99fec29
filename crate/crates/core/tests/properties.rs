use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vlhsa::align::{build_phrases, build_regions, fuse};
use vlhsa::assignment::{assign_loss, assignment_cost, decode};
use vlhsa::datagen::{
    caption_scene, fragment_image, generate_record, place_pieces, render_scene, stitch, DatasetConfig, PaletteColor,
    SceneSpec, Shape, Split, SplitSizes,
};
use vlhsa::encoders::mean_pool;
use vlhsa::puzzle::{neighbor_accuracy, off_by_category, piece_accuracy, Axis, GridGeometry, OffBy, Permutation};
use vlhsa::training::{cosine_lr, Scheduler, SchedulerConfig};

fn perm(n: usize) -> impl Strategy<Value = Permutation> {
    Just((0..n).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(|v| Permutation::new(v).unwrap())
}

fn perm_pair(max_n: usize) -> impl Strategy<Value = (Permutation, Permutation, Permutation)> {
    (2..=max_n).prop_flat_map(|n| (perm(n), perm(n), perm(n)))
}

fn matrix(n: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-5.0f64..5.0, n * n).prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
}

proptest! {
    #[test]
    fn piece_accuracy_of_itself_is_one(p in (2usize..30).prop_flat_map(perm)) {
        prop_assert_eq!(piece_accuracy(&p, &p).unwrap(), 1.0);
    }

    #[test]
    fn piece_accuracy_ignores_position_relabeling((p, t, q) in perm_pair(12)) {
        let qp = q.compose(&p).unwrap();
        let qt = q.compose(&t).unwrap();
        prop_assert_eq!(piece_accuracy(&qp, &qt).unwrap(), piece_accuracy(&p, &t).unwrap());
    }

    #[test]
    fn off_by_one_never_happens((p, t, _) in perm_pair(12)) {
        let m = p.misplaced_against(&t).unwrap();
        prop_assert_ne!(m, 1);
        let cat = off_by_category(&p, &t).unwrap();
        prop_assert_eq!(cat == OffBy::Perfect, m == 0);
    }

    #[test]
    fn identity_keeps_every_neighbour(rows in 2usize..7, cols in 2usize..7) {
        let geo = GridGeometry::new(rows, cols, 4, 0, 0).unwrap();
        let id = Permutation::identity(geo.n());
        prop_assert_eq!(neighbor_accuracy(&id, &id, &geo, Axis::Horizontal).unwrap(), 1.0);
        prop_assert_eq!(neighbor_accuracy(&id, &id, &geo, Axis::Vertical).unwrap(), 1.0);
    }

    #[test]
    fn decode_returns_an_optimal_bijection(n in prop::sample::select(vec![4usize, 9, 25]), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = Array2::from_shape_fn((n, n), |_| rand::Rng::gen_range(&mut rng, -3.0..3.0));
        let sigma = decode(&scores).unwrap();
        let mut seen = vec![false; n];
        for &j in sigma.as_slice() {
            prop_assert!(!seen[j]);
            seen[j] = true;
        }
        // any other assignment scores no higher
        let other = Permutation::random(n, seed ^ 1).unwrap();
        prop_assert!(assignment_cost(&scores, &sigma) >= assignment_cost(&scores, &other) - 1e-9);
    }

    #[test]
    fn decode_ignores_constant_shifts_and_row_order(scores in matrix(6), c in -100.0f64..100.0, q in perm(6)) {
        let base = decode(&scores).unwrap();
        let best = assignment_cost(&scores, &base);
        let shifted = decode(&scores.mapv(|x| x + c)).unwrap();
        prop_assert!((assignment_cost(&scores, &shifted) - best).abs() < 1e-9);
        // permute rows, decode, and map the rows back
        let mut permuted = Array2::zeros((6, 6));
        for i in 0..6 {
            permuted.row_mut(q.get(i)).assign(&scores.row(i));
        }
        let dp = decode(&permuted).unwrap();
        let back = Permutation::new((0..6).map(|i| dp.get(q.get(i))).collect()).unwrap();
        prop_assert!((assignment_cost(&scores, &back) - best).abs() < 1e-9);
    }

    #[test]
    fn favouring_the_truth_lowers_assign_loss(t in (2usize..10).prop_flat_map(perm), boost in 0.01f64..5.0) {
        let n = t.len();
        let mut logits = Array2::zeros((n, n));
        for i in 0..n {
            logits[[i, t.get(i)]] = boost;
        }
        let uniform = assign_loss(&Array2::zeros((n, n)), &t, 0.0).unwrap();
        prop_assert!((uniform - (n as f64).ln()).abs() < 1e-12);
        prop_assert!(assign_loss(&logits, &t, 0.0).unwrap() < uniform);
    }

    #[test]
    fn fusion_weights_lie_on_the_simplex(theta in prop::array::uniform3(-30.0f64..30.0)) {
        let a = Array2::from_elem((2, 2), 1.0);
        let (_, alpha) = fuse(&[&a, &a, &a], theta);
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(alpha.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn window_builders_reduce_to_identity_and_mean(seed in any::<u64>(), rows in 2usize..5, cols in 2usize..5, len in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let v = draw(rows * cols, 3);
        prop_assert_eq!(build_regions(&v, rows, cols, 1).unwrap(), v.clone());
        if rows == cols {
            let whole = build_regions(&v, rows, cols, rows).unwrap();
            prop_assert!((&whole - &mean_pool(&v)).iter().all(|x| x.abs() < 1e-12));
        }
        let t = draw(len, 4);
        prop_assert_eq!(build_phrases(&t, 1).unwrap(), t.clone());
        let full = build_phrases(&t, len).unwrap();
        prop_assert!((&full - &mean_pool(&t)).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn cosine_schedule_stays_in_range(t in 0usize..200, base in 1e-5f64..1.0) {
        let lr = cosine_lr(base, 1e-6, 50, t);
        prop_assert!(lr >= 1e-6 - 1e-15 && lr <= base + 1e-15);
        let mut s = Scheduler::new(SchedulerConfig::default(), base);
        for _ in 0..t {
            s.step(0.5);
        }
        prop_assert!((s.lr() - lr).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_a_pure_function_of_the_seed(seed in any::<u64>(), index in 0usize..4) {
        let geo = GridGeometry::new(3, 3, 8, 2, 1).unwrap();
        let cfg = DatasetConfig::new(geo, SplitSizes { train: 4, val: 0, test: 0 }, seed);
        let a = generate_record(&cfg, Split::Train, index).unwrap();
        let b = generate_record(&cfg, Split::Train, index).unwrap();
        prop_assert_eq!(a.instance, b.instance);
        prop_assert_eq!(a.scene, b.scene);
    }

    #[test]
    fn unshuffled_gapless_fragments_restitch_to_the_scene(seed in any::<u64>(), rows in 2usize..5, cols in 2usize..5) {
        let geo = GridGeometry::new(rows, cols, 6, 0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = SceneSpec::random(&mut rng, 2, seed, None).unwrap();
        let (h, w) = geo.image_px();
        prop_assume!(h == w);
        let image = render_scene(&spec, h).unwrap();
        let (pieces, _) = fragment_image(&image, &geo, &mut rng).unwrap();
        let shuffle = Permutation::random(geo.n(), seed).unwrap();
        let shuffled = place_pieces(&pieces, shuffle.inverse().as_slice());
        let restored = place_pieces(&shuffled, shuffle.as_slice());
        prop_assert_eq!(stitch(&restored, rows, cols).unwrap(), image);
    }

    #[test]
    fn captions_and_scenes_agree(seed in any::<u64>(), n in 0usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = SceneSpec::random(&mut rng, n, seed, None).unwrap();
        let caption = caption_scene(&spec).unwrap();
        let words: Vec<&str> = caption.split_whitespace().collect();
        prop_assert!((4..=14).contains(&words.len()), "{}", caption);
        for c in PaletteColor::ALL {
            let in_spec = spec.background == c || spec.objects.iter().any(|o| o.color == c);
            prop_assert_eq!(words.contains(&c.word()), in_spec, "{} / {:?}", caption, c);
        }
        for s in Shape::ALL {
            let in_spec = spec.objects.iter().any(|o| o.shape == s);
            prop_assert_eq!(words.contains(&s.word()), in_spec, "{} / {:?}", caption, s);
        }
    }
}
