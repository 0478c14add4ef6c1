use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::reach::*;
use super::*;
use crate::kinematics::fixtures::{PLANAR2_URDF, SERIAL3_URDF};
use crate::kinematics::{end_effector_position, parse_urdf, KinematicChain};
use crate::projection::{overhead_camera, validate_episode, ValidationConfig, Verdict};

fn planar() -> KinematicChain<f64> {
    parse_urdf(PLANAR2_URDF).unwrap()
}

fn stream(period_ns: i64, n: usize) -> Episode {
    Episode {
        header: EpisodeHeader::new("planar2", 2, "00", period_ns as u64, "test"),
        frames: (0..n).map(|k| Frame::new(k as i64 * period_ns, vec![0.01 * k as f64, 0.0])).collect(),
    }
}

fn round_trip(e: &Episode) -> Episode {
    let mut buf = Vec::new();
    write_episode_to(e, &mut buf).unwrap();
    read_episode_from(&buf[..]).unwrap()
}

#[test]
fn empty_episode_round_trips() {
    let e = stream(20_000_000, 0);
    assert_eq!(round_trip(&e), e);
}

#[test]
fn thousand_frames_round_trip_bit_exact() {
    let chain = planar();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = sample_reach_problem(&chain, false, &mut rng).unwrap();
    let cfg = ReachConfig {
        min_frames: 1000,
        max_frames: 1000,
        ..ReachConfig::default()
    };
    let mut e = reach_episode(&chain, &p, &cfg, &[overhead_camera("top")]).unwrap();
    e.frames[3].q[0] = f64::from_bits(0x3ff0_0000_0000_0001);
    e.frames[4].q[1] = -0.0;
    assert_eq!(e.frames.len(), 1000);
    let back = round_trip(&e);
    assert_eq!(back, e);
    for (a, b) in back.frames.iter().zip(&e.frames) {
        for (x, y) in a.q.iter().zip(&b.q) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn truncated_file_reports_frame() {
    let e = stream(20_000_000, 5);
    let mut buf = Vec::new();
    write_episode_to(&e, &mut buf).unwrap();
    buf.truncate(buf.len() - 3);
    match read_episode_from(&buf[..]) {
        Err(EpisodeError::CorruptFrame { index, .. }) => assert_eq!(index, 4),
        other => panic!("{other:?}"),
    }
}

#[test]
fn version_mismatch() {
    let e = stream(20_000_000, 2);
    let mut buf = Vec::new();
    write_episode_to(&e, &mut buf).unwrap();
    let text = String::from_utf8_lossy(&buf).replacen("\"version\":1", "\"version\":7", 1);
    assert!(matches!(
        read_episode_from(text.as_bytes()),
        Err(EpisodeError::FormatVersionMismatch { found: 7, .. })
    ));
}

#[test]
fn wrong_joint_count_rejected_on_write() {
    let mut e = stream(20_000_000, 3);
    e.frames[1].q.push(1.0);
    assert!(write_episode_to(&e, Vec::new()).is_err());
}

#[test]
fn integrity_examples() {
    let period = 33_333_333;
    let e = stream(period, 90);
    assert_eq!(integrity_check(&e, 3.0).unwrap().verdict, Verdict::Pass);

    let mut gap = stream(period, 90);
    for f in gap.frames.iter_mut().skip(40) {
        f.timestamp_ns += 120_000_000 - period;
    }
    let r = integrity_check(&gap, 3.0).unwrap();
    assert_eq!(r.gaps, vec![Gap { frame: 40, gap_ns: 120_000_000 }]);
    assert_eq!(r.verdict, Verdict::Fail);

    let mut swapped = stream(period, 90);
    let t = swapped.frames[10].timestamp_ns;
    swapped.frames[10].timestamp_ns = swapped.frames[11].timestamp_ns;
    swapped.frames[11].timestamp_ns = t;
    let r = integrity_check(&swapped, 3.0).unwrap();
    assert_eq!(r.non_monotonic, 1);
    assert_eq!(r.verdict, Verdict::Fail);

    assert!(matches!(integrity_check(&stream(period, 1), 3.0), Err(EpisodeError::TooFewFrames(1))));
}

#[test]
fn static_pruning() {
    let mut e = stream(20_000_000, 40);
    // frames 10..=25 hold still
    for k in 10..40 {
        let hold = e.frames[10].q.clone();
        if k <= 25 {
            e.frames[k].q = hold;
        }
    }
    let pruned = prune_static_frames(&e, 1e-4, 10, &[]);
    assert_eq!(pruned.frames.len(), 40 - 15);
    let kept = prune_static_frames(&e, 1e-4, 10, &[20]);
    assert_eq!(kept.frames.len(), 40 - 14);
    // short pauses survive
    assert_eq!(prune_static_frames(&e, 1e-4, 20, &[]).frames.len(), 40);
}

#[test]
fn ik_examples() {
    let sols = two_link_ik(1.0, 1.0, [2.0, 0.0]).unwrap();
    assert!(sols[0][0].abs() < 1e-12 && sols[0][1].abs() < 1e-6);
    assert!(two_link_ik(1.0, 1.0, [2.5, 0.0]).is_none());
    let chain = planar();
    assert_eq!(planar_two_link(&chain), Some((1.0, 1.0)));
    for target in [[1.2, 0.7], [0.3, -1.1], [-0.4, 0.9]] {
        for q in two_link_ik(1.0, 1.0, target).unwrap() {
            let p = end_effector_position(&chain, &q).unwrap();
            assert!((p[0] - target[0]).abs() < 1e-12 && (p[1] - target[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn full_extension_target_is_reached() {
    let chain = planar();
    let target = [2.0f64.sqrt(), 2.0f64.sqrt(), 0.0];
    let goal = two_link_ik(1.0, 1.0, [target[0], target[1]]).unwrap()[0].to_vec();
    let p = ReachProblem {
        start: vec![0.2, 0.5],
        goal,
        target,
        branch: None,
    };
    let e = reach_episode(&chain, &p, &ReachConfig::default(), &[]).unwrap();
    let end = end_effector_position(&chain, &e.frames.last().unwrap().q).unwrap();
    for k in 0..3 {
        assert!((end[k] - target[k]).abs() < 1e-6);
    }
}

#[test]
fn dls_ik_on_serial_chain() {
    let chain: KinematicChain<f64> = parse_urdf(SERIAL3_URDF).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let p = sample_reach_problem(&chain, false, &mut rng).unwrap();
        let end = end_effector_position(&chain, &p.goal).unwrap();
        for k in 0..3 {
            assert!((end[k] - p.target[k]).abs() < 1e-8);
        }
    }
}

#[test]
fn min_jerk_endpoints() {
    assert_eq!(min_jerk(0.0), 0.0);
    assert_eq!(min_jerk(1.0), 1.0);
    for s in [0.0, 1.0] {
        assert!(min_jerk_velocity(s).abs() < 1e-9);
        assert!(min_jerk_acceleration(s).abs() < 1e-9);
    }
    assert!((min_jerk_velocity(0.5) - 1.875).abs() < 1e-12);
}

#[test]
fn generation_is_deterministic_and_valid() {
    let chain = planar();
    let cfg = ReachConfig {
        episodes: 6,
        seed: 42,
        ..ReachConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = generate_reach_dataset(&chain, &cfg, a.path()).unwrap();
    generate_reach_dataset(&chain, &cfg, b.path()).unwrap();
    for f in m.files.iter().chain(std::iter::once(&"manifest.json".to_string())) {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let (_, episodes) = load_dataset(a.path()).unwrap();
    for e in &episodes {
        assert!((64..=128).contains(&e.frames.len()));
        e.validate().unwrap();
        assert_eq!(integrity_check(e, 3.0).unwrap().verdict, Verdict::Pass);
        let r = validate_episode(e, &chain, &e.header.cameras, ValidationConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.mean_error_px, 0.0);
        // speed stays under the limit
        for w in e.frames.windows(2) {
            for (x, y) in w[0].q.iter().zip(&w[1].q) {
                assert!((y - x).abs() <= 2.5 * 0.02 + 1e-12);
            }
        }
        let p = reach_params(e).unwrap();
        let end = end_effector_position(&chain, &e.frames.last().unwrap().q).unwrap();
        assert!((end[0] - p.target[0]).abs() < 1e-6 && (end[1] - p.target[1]).abs() < 1e-6);
    }
}

#[test]
fn bimodal_branches_are_balanced() {
    let chain = planar();
    let cfg = ReachConfig {
        episodes: 400,
        seed: 5,
        bimodal: true,
        annotate: false,
        ..ReachConfig::default()
    };
    let eps = generate_reach_episodes(&chain, &cfg).unwrap();
    let pos = eps
        .iter()
        .filter(|e| reach_params(e).unwrap().branch == Some(Branch::ElbowPositive))
        .count();
    assert!((160..=240).contains(&pos), "{pos}");
    for e in &eps {
        let p = reach_params(e).unwrap();
        let sign = p.goal[1].signum();
        match p.branch.unwrap() {
            Branch::ElbowPositive => assert_eq!(sign, 1.0),
            Branch::ElbowNegative => assert_eq!(sign, -1.0),
        }
        assert_eq!(p.start[1], 0.0);
    }
}

#[test]
fn dataset_chunks() {
    let chain = planar();
    let cfg = ReachConfig {
        episodes: 2,
        seed: 1,
        annotate: false,
        ..ReachConfig::default()
    };
    let eps = generate_reach_episodes(&chain, &cfg).unwrap();
    let ds = ReachDataset::new(&chain, &eps, 64).unwrap();
    let s = ds.sample_at(0, 5);
    assert_eq!(s.gt.dim(), (64, 16));
    let q = &eps[0].frames;
    assert!((s.gt[[0, 0]] - (q[6].q[0] - q[5].q[0])).abs() < 1e-15);
    let last = q.len() - 1;
    let s = ds.sample_at(0, last);
    assert!(s.gt.iter().all(|v| *v == 0.0));
    assert_eq!(s.obs.len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn random_episodes_round_trip(
        n in 0usize..30,
        n_cam in 0usize..3,
        seed in any::<u64>(),
        text in "[a-z é]{0,12}",
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut header = EpisodeHeader::new("arm", 3, "abcd", 1_000_000, "free text");
        header.cameras = (0..n_cam).map(|i| overhead_camera(&format!("c{i}"))).collect();
        header.task_params = serde_json::json!({"k": seed.to_string()});
        let frames = (0..n).map(|k| Frame {
            timestamp_ns: k as i64 * 1000 - 7,
            q: (0..3).map(|_| f64::from_bits(rng.random::<u64>() & 0x7fef_ffff_ffff_ffff)).collect(),
            annotations: rng.random_bool(0.5).then(|| {
                (0..n_cam).map(|_| (0..3).map(|_| rng.random_bool(0.7).then(|| [rng.random(), rng.random()])).collect()).collect()
            }),
            instruction: rng.random_bool(0.3).then(|| text.clone()),
        }).collect();
        let e = Episode { header, frames };
        prop_assert_eq!(round_trip(&e), e);
    }
}
