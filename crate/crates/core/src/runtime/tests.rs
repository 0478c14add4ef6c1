use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffusion::NoiseSchedule;
use crate::episodes::reach::{reach_observation, sample_reach_problem};
use crate::kinematics::fixtures::PLANAR2_URDF;
use crate::kinematics::{parse_urdf, KinematicChain};
use crate::simplant::ExpertDenoiser;

fn planar() -> KinematicChain<f64> {
    parse_urdf(PLANAR2_URDF).unwrap()
}

fn noise_policy(horizon: usize) -> Policy {
    // x-prediction that shrinks the input; output depends on the noise
    let denoiser = |x: &Array2<f64>, _obs: &[f64], _tau: usize| x.mapv(|v| 0.1 * v);
    Policy {
        denoiser: Box::new(denoiser),
        schedule: NoiseSchedule::cosine(1000),
        chain: planar(),
        horizon,
        obs_dim: 5,
    }
}

fn expert_policy(horizon: usize) -> Policy {
    let chain = planar();
    Policy {
        denoiser: Box::new(ExpertDenoiser {
            chain: chain.clone(),
            horizon,
            step: 0.04,
        }),
        schedule: NoiseSchedule::cosine(1000),
        chain,
        horizon,
        obs_dim: 5,
    }
}

fn request(sequence: u64, q: Vec<f64>, executed: usize, latency_ns: Option<u64>) -> ObservationRequest {
    ObservationRequest {
        session: 1,
        sequence,
        timestamp_ns: 0,
        obs: reach_observation(&q, &[1.0, 0.5, 0.0]),
        q,
        executed,
        latency_ns,
    }
}

#[test]
fn ping_frame_bytes() {
    let bytes = encode_message(&WireMessage::Control(Control::Ping)).unwrap();
    assert_eq!(&bytes[..4], &[0, 0, 0, 12]);
    assert_eq!(&bytes[4..], br#"{"t":"ping"}"#);
    assert_eq!(decode_message(&bytes).unwrap(), WireMessage::Control(Control::Ping));
}

#[test]
fn framing_errors() {
    let big = WireMessage::error("x", "a".repeat(17 * 1024 * 1024));
    assert!(matches!(encode_message(&big), Err(WireError::FrameTooLarge(_))));
    let mut prefix = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
    prefix.extend_from_slice(b"{}");
    assert!(matches!(read_message(&mut &prefix[..]), Err(WireError::FrameTooLarge(_))));
    assert!(matches!(decode_payload(br#"{"t":"teleport"}"#), Err(WireError::UnknownTag(t)) if t == "teleport"));
    assert!(matches!(decode_payload(b"{not json"), Err(WireError::MalformedJson(_))));
    assert!(matches!(decode_payload(br#"{"t":"chunk"}"#), Err(WireError::MalformedJson(_))));
    let mut r = request(1, vec![0.0, f64::NAN], 0, None);
    r.obs[0] = 0.0;
    assert!(matches!(encode_message(&WireMessage::Observation(r)), Err(WireError::NonFinite(_))));
    assert!(read_message(&mut &b""[..]).unwrap().is_none());
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(5e-324),
    ]
}

pub(crate) fn message_strategy() -> impl Strategy<Value = WireMessage> {
    let obs = (
        any::<u64>(),
        any::<u64>(),
        any::<i64>(),
        prop::collection::vec(finite(), 0..8),
        prop::collection::vec(finite(), 0..8),
        any::<usize>(),
        proptest::option::of(any::<u64>()),
    )
        .prop_map(|(session, sequence, timestamp_ns, q, obs, executed, latency_ns)| {
            WireMessage::Observation(ObservationRequest {
                session,
                sequence,
                timestamp_ns,
                q,
                obs,
                executed,
                latency_ns,
            })
        });
    let chunk = (
        any::<u64>(),
        any::<u64>(),
        prop::collection::vec(prop::collection::vec(finite(), 3), 0..6),
        prop::collection::vec(finite(), 0..4),
        any::<i64>(),
        any::<usize>(),
    )
        .prop_map(|(session, sequence, chunk, reference, generated_ns, delay)| {
            WireMessage::Chunk(ChunkResponse {
                session,
                sequence,
                chunk,
                reference,
                generated_ns,
                delay,
            })
        });
    let control = prop_oneof![
        Just(Control::Start),
        Just(Control::Pause),
        Just(Control::Stop),
        Just(Control::Ping),
        Just(Control::Pong)
    ]
    .prop_map(WireMessage::Control);
    let error = (".{0,12}", "\\PC{0,40}").prop_map(|(code, text)| WireMessage::Error(ErrorMessage { code, text }));
    prop_oneof![obs, chunk, control, error]
}

proptest! {
    #[test]
    fn wire_round_trip(m in message_strategy()) {
        let bytes = encode_message(&m).unwrap();
        let back = decode_message(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        // bit-exact floats, including the sign of zero
        prop_assert_eq!(encode_message(&back).unwrap(), bytes);
    }
}

#[test]
fn first_request_is_unguided_then_prefix_is_exact() {
    let policy = Arc::new(noise_policy(32));
    let mut s = InferenceSession::new(policy, ServerConfig::default(), 1);
    let q = vec![0.3, -0.2];
    let first = s.handle(&request(1, q.clone(), 0, None), 0).unwrap();
    assert_eq!(first.delay, 4);
    // 80 ms at 20 ms per step
    let second = s.handle(&request(2, q.clone(), 10, Some(80_000_000)), 1).unwrap();
    assert_eq!(second.delay, 4);
    for t in 0..=4 {
        assert_eq!(second.chunk[t], first.chunk[10 + t], "row {t}");
    }
    assert_ne!(second.chunk[20], first.chunk[30]);
    assert!(matches!(s.handle(&request(2, q, 0, None), 2), Err(RuntimeError::Protocol(_))));
}

#[test]
fn rebased_prefix_keeps_absolute_commands() {
    let policy = Arc::new(noise_policy(32));
    let mut s = InferenceSession::new(policy, ServerConfig::default(), 1);
    let first = s.handle(&request(1, vec![0.3, -0.2], 0, None), 0).unwrap();
    let moved = vec![0.31, -0.18];
    let second = s.handle(&request(2, moved.clone(), 6, Some(60_000_000)), 1).unwrap();
    assert_eq!(second.delay, 3);
    for t in 0..=3 {
        for j in 0..2 {
            let old = first.reference[j] + first.chunk[6 + t][j * 8];
            let new = moved[j] + second.chunk[t][j * 8];
            assert!((old - new).abs() < 1e-12);
        }
    }
}

#[test]
fn rtc_off_ignores_previous_chunk() {
    let policy = Arc::new(noise_policy(16));
    let cfg = ServerConfig {
        rtc: false,
        ..ServerConfig::default()
    };
    let mut s = InferenceSession::new(policy, cfg, 1);
    let q = vec![0.0, 0.5];
    let first = s.handle(&request(1, q.clone(), 0, None), 0).unwrap();
    let second = s.handle(&request(2, q, 2, Some(1)), 0).unwrap();
    assert_ne!(second.chunk[0], first.chunk[2]);
}

#[test]
fn latency_estimate_converges() {
    let policy = Arc::new(noise_policy(16));
    let mut s = InferenceSession::new(policy, ServerConfig::default(), 1);
    // first report is far off; constant 150 ms afterwards
    s.handle(&request(1, vec![0.0, 0.5], 0, Some(2_000_000_000)), 0).unwrap();
    for k in 2..=21 {
        s.handle(&request(k, vec![0.0, 0.5], 0, Some(150_000_000)), 0).unwrap();
    }
    let ema = s.state.latency_ns.unwrap();
    assert!((ema - 150e6).abs() < 0.1 * 150e6, "{ema}");
    assert_eq!(s.delay_steps(), 8);
}

#[test]
fn executor_switch_accounting() {
    let chain = planar();
    let reference = crate::embodiment::RobotState::from_q(&chain, vec![0.0, 0.0], 0).unwrap();
    let ramp = |offset: f64| {
        let mut d = Array2::zeros((8, 16));
        for t in 0..8 {
            d[[t, 0]] = offset + 0.01 * (t + 1) as f64;
        }
        crate::embodiment::ActionChunk::new(d, reference.clone()).unwrap()
    };
    let mut ex = ChunkExecutor::new(ExecutionMode::Async);
    assert!(ex.needs_dispatch());
    let (s1, e1) = ex.dispatch();
    assert_eq!(e1, 0);
    assert_eq!(ex.command(&[0.0, 0.0]), vec![0.0, 0.0]);
    let sw = ex.adopt(s1, ramp(0.0), 4).unwrap();
    assert_eq!(sw.row, 0);
    assert_eq!(sw.discontinuity, None);
    let (s2, e2) = ex.dispatch();
    assert_eq!(e2, 0);
    for _ in 0..3 {
        ex.command(&[0.0, 0.0]);
    }
    // stale sequence is ignored
    assert!(ex.adopt(s1, ramp(0.0), 3).is_none());
    let sw = ex.adopt(s2, ramp(0.5), 3).unwrap();
    assert_eq!(sw.row, 3);
    assert!((sw.discontinuity.unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(ex.stats.delay_mismatches, 0);
    ex.dispatch();
    for _ in 0..6 {
        ex.command(&[0.0, 0.0]);
    }
    assert_eq!(ex.stats.starvation_events, 1);

    let mut sync = ChunkExecutor::new(ExecutionMode::Sync { effective_steps: 2 });
    let (s, _) = sync.dispatch();
    assert!(!sync.needs_dispatch());
    sync.adopt(s, ramp(0.0), 0);
    assert!(!sync.needs_dispatch());
    sync.command(&[0.0, 0.0]);
    sync.command(&[0.0, 0.0]);
    assert!(sync.needs_dispatch());
    assert_eq!(sync.dispatch().1, 2);
    assert_eq!(sync.command(&[0.0, 0.0])[0], 0.02);
    assert_eq!(sync.stats.starvation_events, 0);
}

fn fast_client(mode: ExecutionMode) -> ClientConfig {
    ClientConfig {
        mode,
        control_period_ns: 5_000_000,
        vmax: 8.0,
        max_ticks: 400,
        timeout_ms: 2_000,
        ..ClientConfig::default()
    }
}

#[test]
fn tcp_ping_and_errors() {
    let server = Server::bind("127.0.0.1:0", Arc::new(noise_policy(8)), ServerConfig::default()).unwrap();
    let handle = server.spawn().unwrap();
    let mut s = std::net::TcpStream::connect(handle.addr).unwrap();
    write_message(&mut s, &WireMessage::Control(Control::Ping)).unwrap();
    assert_eq!(read_message(&mut s).unwrap(), Some(WireMessage::Control(Control::Pong)));
    let mut bad = request(1, vec![0.0], 0, None);
    bad.obs.truncate(2);
    write_message(&mut s, &WireMessage::Observation(bad)).unwrap();
    assert!(matches!(read_message(&mut s).unwrap(), Some(WireMessage::Error(e)) if e.code == "inference"));
    write_message(&mut s, &WireMessage::Observation(request(2, vec![0.0, 0.1], 0, None))).unwrap();
    match read_message(&mut s).unwrap() {
        Some(WireMessage::Chunk(c)) => {
            assert_eq!(c.sequence, 2);
            assert_eq!(c.chunk.len(), 8);
        }
        other => panic!("{other:?}"),
    }
    handle.shutdown().unwrap();
}

#[test]
fn tcp_clients_reach_with_oracle() {
    let chain = planar();
    let server = Server::bind("127.0.0.1:0", Arc::new(expert_policy(32)), ServerConfig::default()).unwrap();
    let handle = server.spawn().unwrap();
    let addr = handle.addr.to_string();
    let problem = sample_reach_problem(&chain, false, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let (m, ep) = client_async(&addr, &chain, &problem, &fast_client(ExecutionMode::Async)).unwrap();
    assert!(m.success, "{m:?}");
    assert_eq!(m.rate_violations, 0);
    assert_eq!(ep.frames.len(), m.ticks + 1);
    ep.validate().unwrap();
    let (m, _) = client_sync(&addr, &chain, &problem, 8, &fast_client(ExecutionMode::Async)).unwrap();
    assert!(m.success, "{m:?}");
    assert_eq!(m.starvation_events, 0);
    handle.shutdown().unwrap();
}

#[test]
fn slow_server_starves_gracefully() {
    let chain = planar();
    let server = Server::bind("127.0.0.1:0", Arc::new(expert_policy(4)), ServerConfig::default()).unwrap();
    let handle = server.spawn().unwrap();
    let problem = sample_reach_problem(&chain, false, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let cfg = ClientConfig {
        inject_delay_ms: 60.0,
        max_ticks: 60,
        ..fast_client(ExecutionMode::Async)
    };
    let (m, _) = client_async(&handle.addr.to_string(), &chain, &problem, &cfg).unwrap();
    assert!(m.starvation_events > 0);
    assert_eq!(m.rate_violations, 0);
    handle.shutdown().unwrap();
}

#[test]
fn server_down_is_connection_lost() {
    let chain = planar();
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let problem = sample_reach_problem(&chain, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let r = client_async(&addr, &chain, &problem, &fast_client(ExecutionMode::Async));
    assert!(matches!(r, Err(RuntimeError::ConnectionLost(_))), "{r:?}");
}

#[test]
fn silent_server_times_out() {
    let chain = planar();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let keep = std::thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        std::thread::sleep(std::time::Duration::from_millis(800));
        drop(s);
    });
    let problem = sample_reach_problem(&chain, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let cfg = ClientConfig {
        timeout_ms: 200,
        ..fast_client(ExecutionMode::Sync { effective_steps: 4 })
    };
    let r = run_client(&addr, &chain, &problem, &cfg);
    assert!(matches!(r, Err(RuntimeError::Timeout(_))), "{r:?}");
    keep.join().unwrap();
}
