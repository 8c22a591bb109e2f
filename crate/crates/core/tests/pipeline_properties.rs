//! Property and determinism tests for the network encoding, windowing,
//! crowd, episodes and planner.

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use szn_core::data::{loo_split, make_windows, Neighbor, Track, Window, NEIGHBOR_RADIUS, PAST, WINDOW};
use szn_core::lip::EgoState;
use szn_core::nn::features::Sample;
use szn_core::nn::train::predict_window;
use szn_core::nn::zseq::OUT_DIM;
use szn_core::nn::{SznArch, SznModel, ZonotopeSeq};
use szn_core::planner::{MpcConfig, PedObs, PlanEnv, Planner, PlannerMode};
use szn_core::sim::corpus::{synthesize_scene, CorpusConfig};
use szn_core::sim::crowd::{Crowd, CrowdParams};
use szn_core::sim::metrics::summarize;
use szn_core::sim::{run_episode, Scenario, ScenarioConfig};
use szn_core::zono::Vec2;

fn tiny_model(seed: u64) -> SznModel {
    SznModel::new(SznArch::tiny(4, 16), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn vec2(r: f64) -> impl Strategy<Value = Vec2> {
    (-r..r, -r..r).prop_map(|(x, y)| Vec2::new(x, y))
}

fn walk(start: Vec2, step: Vec2, n: usize) -> Vec<Vec2> {
    (0..n).map(|i| start + step * i as f64).collect()
}

fn window(origin: Vec2, peds: &[(Vec2, Vec2)]) -> Window {
    let ego = walk(origin - Vec2::new(2.8, 0.0), Vec2::new(0.4, 0.05), WINDOW);
    Window {
        scene: "s".into(),
        ego_id: 0,
        start_frame: 0,
        ego_past: ego[..PAST].to_vec(),
        ego_future: ego[PAST..].to_vec(),
        goal: origin + Vec2::new(6.0, 1.0),
        neighbors: peds
            .iter()
            .enumerate()
            .map(|(i, &(p, v))| {
                let t = walk(origin + p - v * (PAST - 1) as f64, v, WINDOW);
                Neighbor { id: i as i64 + 1, past: t[..PAST].to_vec(), future: t[PAST..].to_vec() }
            })
            .collect(),
    }
}

fn shift(w: &Window, by: Vec2) -> Window {
    let mv = |v: &[Vec2]| v.iter().map(|p| p + by).collect::<Vec<_>>();
    Window {
        ego_past: mv(&w.ego_past),
        ego_future: mv(&w.ego_future),
        goal: w.goal + by,
        neighbors: w.neighbors.iter().map(|n| Neighbor { id: n.id, past: mv(&n.past), future: mv(&n.future) }).collect(),
        ..w.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoding_round_trips(v in prop::collection::vec(-10.0..10.0f64, OUT_DIM)) {
        prop_assert_eq!(ZonotopeSeq::decode(&v).encode(), v);
    }

    #[test]
    fn predictions_translate_with_the_scene(
        by in vec2(50.0), peds in prop::collection::vec((vec2(3.0), vec2(0.5)), 0..3), seed in 0u64..4,
    ) {
        let model = tiny_model(seed);
        let w = window(Vec2::new(3.0, 4.0), &peds);
        let a = predict_window(&model, &Sample::from_window(&w)).unwrap();
        let b = predict_window(&model, &Sample::from_window(&shift(&w, by))).unwrap();
        for (ca, cb) in a.ego.centers().iter().zip(b.ego.centers()) {
            prop_assert!((cb - ca - by).norm() <= 1e-9);
        }
        for (pa, pb) in a.peds.iter().zip(&b.peds) {
            for (ca, cb) in pa.centers().iter().zip(pb.centers()) {
                prop_assert!((cb - ca - by).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn window_count_matches_brute_force(
        tracks in prop::collection::vec((0i64..30, 0usize..40, vec2(6.0), vec2(0.3)), 1..6),
    ) {
        let stride = 10;
        let tracks: Vec<Track> = tracks
            .iter()
            .enumerate()
            .map(|(i, &(start, len, p, v))| Track {
                id: i as i64,
                frames: (0..len as i64).map(|k| (start + k) * stride).collect(),
                points: walk(p, v, len),
            })
            .collect();
        let windows = make_windows("s", &tracks, NEIGHBOR_RADIUS);
        let mut expected = 0;
        let mut neighbors = 0;
        for ego in &tracks {
            for (s, &f0) in ego.frames.iter().enumerate() {
                let frames: Vec<i64> = (0..WINDOW as i64).map(|k| f0 + k * stride).collect();
                if !frames.iter().all(|f| ego.frames.contains(f)) {
                    continue;
                }
                expected += 1;
                let now = ego.points[s + PAST - 1];
                for other in tracks.iter().filter(|o| o.id != ego.id) {
                    if frames.iter().all(|f| other.frames.contains(f)) {
                        let i = other.frames.iter().position(|&f| f == frames[PAST - 1]).unwrap();
                        neighbors += usize::from((other.points[i] - now).norm() < NEIGHBOR_RADIUS);
                    }
                }
            }
        }
        prop_assert_eq!(windows.len(), expected);
        prop_assert_eq!(windows.iter().map(|w| w.neighbors.len()).sum::<usize>(), neighbors);
    }

    #[test]
    fn crowd_conserves_agents_and_never_teleports(n in 0usize..15, seed in 0u64..1000, ego in vec2(7.0)) {
        let params = CrowdParams::default();
        let mut c = Crowd::new(params.clone(), ChaCha8Rng::seed_from_u64(seed));
        c.spawn(n, Vec2::new(0.0, 7.0), 1.0);
        let count = c.peds.len();
        let ego = ego + Vec2::new(7.0, 7.0);
        let dt = 0.4;
        for _ in 0..20 {
            let before: Vec<Vec2> = c.peds.iter().map(|p| p.pos).collect();
            c.step(dt, Some(ego));
            prop_assert_eq!(c.peds.len(), count);
            for (p, q) in c.peds.iter().zip(before) {
                prop_assert!((p.pos - q).norm() <= params.v_cap * dt + 1e-9);
            }
        }
    }
}

#[test]
fn held_out_scene_never_reaches_training() {
    let cfg = CorpusConfig { steps: 80, ..Default::default() };
    let scenes: Vec<(String, Vec<Window>)> = ["eth", "hotel", "univ"]
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), make_windows(name, &synthesize_scene(6, &cfg, i as u64), NEIGHBOR_RADIUS)))
        .collect();
    assert!(scenes.iter().all(|s| !s.1.is_empty()));
    for (held, _) in &scenes {
        let (train, test) = loo_split(&scenes, held);
        assert!(train.iter().all(|w| &w.scene != held));
        assert!(test.iter().all(|w| &w.scene == held));
        assert_eq!(train.len() + test.len(), scenes.iter().map(|s| s.1.len()).sum::<usize>());
    }
}

fn short_scenario() -> ScenarioConfig {
    ScenarioConfig { max_steps: 6, pedestrians: 4, ..Default::default() }
}

#[test]
fn episodes_are_deterministic_per_seed() {
    let model = Arc::new(tiny_model(1));
    for mode in [PlannerMode::Coupled, PlannerMode::Decoupled, PlannerMode::Dcbf] {
        let run = || {
            let mut planner = Planner::new(MpcConfig { mode, ..Default::default() }, model.clone(), None).unwrap();
            run_episode(&Scenario::sample(&short_scenario(), 7), &mut planner, None).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.trajectory, b.trajectory, "{mode:?}");
        assert_eq!((a.reached, a.steps, a.fallbacks), (b.reached, b.steps, b.fallbacks));
        assert_eq!(a.min_distance, b.min_distance);
        assert_eq!(a.converged, b.converged);
        assert_eq!(a.social_metric, b.social_metric);
    }
}

#[test]
fn metrics_depend_only_on_the_log() {
    let model = Arc::new(tiny_model(2));
    let mut planner = Planner::new(MpcConfig::default(), model, None).unwrap();
    let ep = run_episode(&Scenario::sample(&short_scenario(), 3), &mut planner, None).unwrap();
    let relabeled = szn_core::sim::EpisodeResult { mode: PlannerMode::Dcbf, ..ep.clone() };
    let a = summarize(PlannerMode::Coupled, &[ep.clone()]);
    let b = summarize(PlannerMode::Coupled, &[relabeled]);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&summarize(PlannerMode::Coupled, &[ep])).unwrap());
}

#[test]
fn solver_is_deterministic_from_a_fixed_warm_start() {
    let model = Arc::new(tiny_model(3));
    let x0 = EgoState { x: 1.0, y: 6.0, v_loc: 0.3, theta: 0.1 };
    let peds = vec![PedObs { id: 0, history: walk(Vec2::new(5.0, 8.0), Vec2::new(-0.2, -0.1), PAST) }];
    let env = PlanEnv { goal: Vec2::new(6.0, 12.0), peds };
    for mode in [PlannerMode::Coupled, PlannerMode::Decoupled, PlannerMode::Dcbf] {
        let solve = || {
            let mut p = Planner::new(MpcConfig { mode, ..Default::default() }, model.clone(), None).unwrap();
            p.solve(&x0, &env).map(|s| (s.controls, s.converged))
        };
        match (solve(), solve()) {
            (Ok(a), Ok(b)) => assert_eq!(a, b, "{mode:?}"),
            (Err(a), Err(b)) => assert_eq!(a.to_string(), b.to_string()),
            (a, b) => panic!("{mode:?}: {a:?} vs {b:?}"),
        }
    }
}
