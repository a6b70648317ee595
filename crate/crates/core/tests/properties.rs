use evidar_core::agent::{
    evaluate, fuse_strategy, rollout, AgentKind, Controller, EpisodeRng, FusionKind, RewardKind, RolloutSpec,
};
use evidar_core::bench::{difficulty_level, difficulty_score, generate_test_set, BenchConfig, Level, TestSet};
use evidar_core::edl::{edl_loss, kl_regularizer, total_loss, EvidentialClassifier, OneHot};
use evidar_core::numerics::{digamma, lgamma, log_softmax, Activation};
use evidar_core::opinion::{fuse_pair, fuse_sequence, opinion_from_evidence, EvidenceVector, Opinion};
use evidar_core::world::{Action, Pose, World, WorldConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn evidence(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => (-4.0f64..7.0).prop_map(f64::exp)], k)
}

fn opinion_of(e: Vec<f64>) -> Opinion {
    opinion_from_evidence(&EvidenceVector::new(e).unwrap())
}

fn pair() -> impl Strategy<Value = (Opinion, Opinion)> {
    (2usize..=6).prop_flat_map(|k| (evidence(k), evidence(k))).prop_map(|(a, b)| (opinion_of(a), opinion_of(b)))
}

fn sequence() -> impl Strategy<Value = (Vec<Opinion>, Vec<Opinion>)> {
    (2usize..=6, 2usize..=10)
        .prop_flat_map(|(k, n)| prop::collection::vec(evidence(k), n))
        .prop_map(|es| es.into_iter().map(opinion_of).collect::<Vec<_>>())
        .prop_flat_map(|ops| (Just(ops.clone()), Just(ops).prop_shuffle()))
}

fn mass_total(o: &Opinion) -> f64 {
    o.beliefs().iter().sum::<f64>() + o.uncertainty()
}

fn max_diff(a: &Opinion, b: &Opinion) -> f64 {
    a.beliefs()
        .iter()
        .zip(b.beliefs())
        .map(|(x, y)| (x - y).abs())
        .fold((a.uncertainty() - b.uncertainty()).abs(), f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn fusion_is_normalized_commutative_and_contracting((a, b) in pair()) {
        let ab = fuse_pair(&a, &b).unwrap();
        prop_assert!((mass_total(&ab) - 1.0).abs() <= 1e-12);
        prop_assert_eq!(&ab, &fuse_pair(&b, &a).unwrap());
        prop_assert!(ab.uncertainty() <= a.uncertainty().min(b.uncertainty()) + 1e-12);
    }

    #[test]
    fn vacuous_is_two_sided_identity((a, _) in pair()) {
        let v = Opinion::vacuous(a.class_count());
        prop_assert_eq!(&fuse_pair(&v, &a).unwrap(), &a);
        prop_assert_eq!(&fuse_pair(&a, &v).unwrap(), &a);
    }

    #[test]
    fn fusion_order_does_not_matter((ops, shuffled) in sequence()) {
        let x = fuse_sequence(&ops).unwrap();
        let y = fuse_sequence(&shuffled).unwrap();
        prop_assert!(max_diff(&x, &y) <= 1e-9);
        prop_assert!((mass_total(&y) - 1.0).abs() <= 1e-12);
    }

}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, max_global_rejects: 20_000, ..ProptestConfig::default() })]

    // With a clear enough margin, a nearly certain opinion decides the fused
    // class against any less certain one.
    #[test]
    fn confident_opinion_dominates(
        (p, b) in (2usize..=6).prop_flat_map(|k| (prop::collection::vec(0.01f64..1.0, k), evidence(k))),
    ) {
        let total: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|v| v / total).collect();
        let b = opinion_of(b);
        let top = evidar_core::opinion::rank_descending(&p);
        let margin = p[top[0]] - p[top[1]];
        let rest: f64 = b.beliefs().iter().enumerate().filter(|(k, _)| *k != top[0]).map(|(_, v)| v).sum();
        prop_assume!(margin > rest + 0.01);
        for u in [1e-3, 1e-6, 1e-9] {
            let a = Opinion::new(p.iter().map(|v| v * (1.0 - u)).collect(), u).unwrap();
            if a.uncertainty() < b.uncertainty() {
                prop_assert_eq!(fuse_pair(&a, &b).unwrap().argmax(), top[0]);
            }
        }
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn special_function_recurrences(r in -3.0f64..3.0) {
        let x = 10f64.powf(r);
        let dpsi = digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x;
        let dlg = lgamma(x + 1.0).unwrap() - lgamma(x).unwrap() - x.ln();
        prop_assert!(dpsi.abs() <= 1e-10 * (1.0 / x).max(1.0), "digamma at {x}: {dpsi}");
        prop_assert!(dlg.abs() <= 1e-10 * x.ln().abs().max(1.0), "lgamma at {x}: {dlg}");
    }

    #[test]
    fn log_softmax_is_a_log_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..8)) {
        let lp = log_softmax(&logits);
        prop_assert!(lp.iter().all(|&v| v <= 0.0));
        prop_assert!((lp.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn classifier_output_is_a_valid_opinion(
        seed in 0u64..1000,
        x in prop::collection::vec(-1e3f64..1e3, 6),
        act in prop_oneof![Just(Activation::Exp), Just(Activation::Softplus), Just(Activation::Sigmoid)],
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = EvidentialClassifier::init(6, 8, 4, act, &mut rng);
        let op = model.opinion(&x).unwrap();
        prop_assert!(op.beliefs().iter().all(|&b| (0.0..=1.0).contains(&b)));
        prop_assert!((0.0..=1.0).contains(&op.uncertainty()));
        prop_assert!((mass_total(&op) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn losses_are_relabelling_invariant(
        (alpha, y, perm) in (2usize..=8).prop_flat_map(|k| (
            prop::collection::vec((0.0f64..9.0).prop_map(f64::exp), k),
            0..k,
            Just((0..k).collect::<Vec<usize>>()).prop_shuffle(),
        )),
        lambda in 0.0f64..=1.0,
    ) {
        let k = alpha.len();
        let label = OneHot::new(y, k).unwrap();
        prop_assert!(edl_loss(&alpha, label).unwrap() >= 0.0);
        prop_assert!(kl_regularizer(&alpha, label).unwrap() >= 0.0);
        // class c moves to position perm[c]
        let mut permuted = vec![0.0; k];
        for (c, &to) in perm.iter().enumerate() {
            permuted[to] = alpha[c];
        }
        let moved = OneHot::new(perm[y], k).unwrap();
        prop_assert_eq!(total_loss(&alpha, label, lambda).unwrap(), total_loss(&permuted, moved, lambda).unwrap());
    }

    #[test]
    fn difficulty_level_is_monotone(
        v in 0.0f64..=1.0, d in 3.0f64..=6.0, p in 0.0f64..=1.0, bump in 0.0f64..=1.0, which in 0usize..3,
    ) {
        let base = difficulty_level(difficulty_score(v, d, p).unwrap());
        let raised = match which {
            0 => difficulty_score((v + bump).min(1.0), d, p),
            // closer is easier
            1 => difficulty_score(v, (d - 3.0 * bump).max(3.0), p),
            _ => difficulty_score(v, d, (p + bump).min(1.0)),
        };
        prop_assert!(difficulty_level(raised.unwrap()).index() <= base.index());
    }
}

fn small_world() -> (World, BenchConfig) {
    let bench = BenchConfig::default();
    (World::new(bench.world.clone()).unwrap(), bench)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn world_is_deterministic_and_well_formed(
        seed in 0u64..10_000,
        actions in prop::collection::vec(0usize..3, 1..30),
        obs_seed in 0u64..1000,
    ) {
        let (world, bench) = small_world();
        let inst = evidar_core::bench::sample_instance(&world, &bench, seed, 0).unwrap();
        let scene = world.generate_scene(inst.scene_seed).unwrap();
        prop_assert_eq!(&scene, &world.generate_scene(inst.scene_seed).unwrap());
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(obs_seed);
            let mut pose = inst.start;
            let mut out = Vec::new();
            for &a in &actions {
                let obs = world.observe(&scene, pose, &mut rng);
                pose = world.step(&scene, pose, Action::from_index(a).unwrap());
                out.push((pose, obs));
            }
            out
        };
        let first = run();
        prop_assert_eq!(&first, &run());
        for (pose, obs) in &first {
            prop_assert!(!scene.is_wall(pose.x, pose.y) && !scene.is_target(pose.x, pose.y));
            let stats = world.visibility_stats(&scene, *pose);
            prop_assert!((0.0..=1.0).contains(&stats.visibility));
            prop_assert!(stats.observed_cells <= scene.target_cells().len());
            prop_assert!((0.0..=1.0).contains(&obs.quality));
        }
    }

    #[test]
    fn fixation_centres_and_approaches(seed in 0u64..10_000, steps in 1usize..25) {
        let (world, bench) = small_world();
        let inst = evidar_core::bench::sample_instance(&world, &bench, seed, 0).unwrap();
        let scene = world.generate_scene(inst.scene_seed).unwrap();
        let mut pose = inst.start;
        for _ in 0..steps {
            let err = world.bearing_error(&scene, pose);
            let action = world.fixation_action(&scene, pose);
            let next = world.step(&scene, pose, action);
            match action {
                // centring turns; once aligned the heuristic may hold by alternating turns
                Action::TurnLeft | Action::TurnRight if err.abs() > 5.0 => {
                    prop_assert!(world.bearing_error(&scene, next).abs() < err.abs());
                }
                Action::MoveForward if next != pose => {
                    prop_assert!(
                        world.target_distance(&scene, next.x, next.y) <= world.target_distance(&scene, pose.x, pose.y)
                    );
                }
                _ => {}
            }
            pose = next;
        }
    }

    #[test]
    fn rollout_rewards_and_fused_uncertainty(seed in 0u64..10_000, random in any::<bool>(), binary in any::<bool>()) {
        let (world, bench) = small_world();
        let inst = evidar_core::bench::sample_instance(&world, &bench, seed, 0).unwrap();
        let scene = world.generate_scene(inst.scene_seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rec = EvidentialClassifier::init(16, 8, 8, Activation::Exp, &mut rng);
        let controller = if random { Controller::Random } else { Controller::Fixation };
        let spec = RolloutSpec {
            horizon: 10,
            reward: if binary { RewardKind::Binary } else { RewardKind::Belief },
            feature_noise: 0.0,
        };
        let tr = rollout(&world, &scene, inst.start, &controller, &rec, &spec, &mut EpisodeRng::new(seed)).unwrap();
        prop_assert!(tr.rewards.iter().all(|r| (0.0..=1.0).contains(r)));
        prop_assert!((0.0..=9.0).contains(&tr.total_reward()));
        prop_assert!(tr.fused.windows(2).all(|w| w[1].uncertainty() <= w[0].uncertainty()));
    }

    #[test]
    fn strategies_agree_on_a_single_opinion((a, _) in pair()) {
        let first = fuse_strategy(FusionKind::Evidential, std::slice::from_ref(&a)).unwrap().ranking;
        for kind in FusionKind::ALL {
            prop_assert_eq!(&fuse_strategy(kind, std::slice::from_ref(&a)).unwrap().ranking, &first);
        }
    }
}

#[test]
fn rescoring_a_loaded_test_set_reproduces_scores() {
    let bench = BenchConfig::default();
    let ts = generate_test_set(300, 9, &bench).unwrap();
    let loaded = TestSet::from_jsonl(&ts.to_jsonl()).unwrap();
    for inst in &loaded.instances {
        let rec = inst.record(bench.world.cap_cells).unwrap();
        assert!((rec.score - inst.score).abs() <= 1e-12);
        assert_eq!(rec.level, inst.level);
    }
}

#[test]
fn mean_feature_converges_to_scaled_prototype() {
    let (world, bench) = small_world();
    let inst = evidar_core::bench::sample_instance(&world, &bench, 3, 0).unwrap();
    let scene = world.generate_scene(inst.scene_seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let first = world.observe(&scene, inst.start, &mut rng);
    let q = first.quality;
    let cfg: &WorldConfig = world.config();
    let sigma = cfg.sigma0 * (1.0 - q) + cfg.sigma_min;
    let n = 10_000;
    let mut mean = vec![0.0; cfg.feature_dim];
    for _ in 0..n {
        for (m, x) in mean.iter_mut().zip(world.observe(&scene, inst.start, &mut rng).features) {
            *m += x / n as f64;
        }
    }
    let proto = world.prototype(scene.target_class());
    for (m, mu) in mean.iter().zip(proto) {
        assert!((m - q * mu).abs() <= 3.0 * sigma / 100.0, "{m} vs {}", q * mu);
    }
}

#[test]
fn evaluation_ignores_worker_count() {
    let ts = generate_test_set(40, 2, &BenchConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rec = EvidentialClassifier::init(16, 8, 8, Activation::Exp, &mut rng);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| evaluate(AgentKind::Random, None, &rec, &ts, FusionKind::Evidential, 3.0, 10, 8).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn difficulty_levels_cover_thresholds() {
    assert_eq!(difficulty_level(0.0), Level::Hard);
    assert_eq!(difficulty_level(0.33), Level::Moderate);
    assert_eq!(difficulty_level(0.66), Level::Easy);
}

#[test]
fn start_pose_is_not_blocked() {
    let (world, bench) = small_world();
    for i in 0..50 {
        let inst = evidar_core::bench::sample_instance(&world, &bench, 99, i).unwrap();
        let scene = world.generate_scene(inst.scene_seed).unwrap();
        let Pose { x, y, .. } = inst.start;
        assert!(scene.is_free(x, y));
    }
}
