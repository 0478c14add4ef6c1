use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::executor::{ChunkExecutor, ExecutionMode};
use super::protocol::{read_message, write_message, ChunkResponse, ObservationRequest, WireError, WireMessage};
use super::RuntimeError;
use crate::episodes::reach::{reach_observation, ReachProblem};
use crate::episodes::Episode;
use crate::kinematics::KinematicChain;
use crate::simplant::{reach_record, response_chunk, step_plant, PlantState, Recorder, RolloutConfig, RolloutMetrics, SuccessCriterion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub mode: ExecutionMode,
    pub control_period_ns: u64,
    pub vmax: f64,
    pub max_ticks: usize,
    /// Longest wait for any single response.
    pub timeout_ms: u64,
    /// Extra delay added to every round trip before the chunk is handed over.
    pub inject_delay_ms: f64,
    pub success: SuccessCriterion,
    pub session: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            mode: ExecutionMode::Async,
            control_period_ns: 20_000_000,
            vmax: 2.5,
            max_ticks: 600,
            timeout_ms: 10_000,
            inject_delay_ms: 0.0,
            success: SuccessCriterion::default(),
            session: 1,
        }
    }
}

enum NetEvent {
    Chunk(ChunkResponse, u64),
    Dropped(u64),
    Failed(RuntimeError),
}

fn connect(addr: &str, timeout: Duration) -> Result<TcpStream, RuntimeError> {
    let addrs: Vec<SocketAddr> = addr
        .to_socket_addrs()
        .map_err(|e| RuntimeError::ConnectionLost(format!("{addr}: {e}")))?
        .collect();
    let mut last = format!("{addr}: no address");
    for a in addrs {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = format!("{a}: {e}"),
        }
    }
    Err(RuntimeError::ConnectionLost(last))
}

fn lost(e: WireError) -> RuntimeError {
    match e {
        WireError::Io(e) => RuntimeError::ConnectionLost(e.to_string()),
        other => other.into(),
    }
}

/// Network side: sends each request, waits for its answer, reports round trips.
fn exchange(mut stream: TcpStream, requests: Receiver<ObservationRequest>, events: Sender<NetEvent>, timeout: Duration, inject: Duration) {
    let mut reader = match stream.try_clone() {
        Ok(s) => std::io::BufReader::new(s),
        Err(e) => {
            let _ = events.send(NetEvent::Failed(e.into()));
            return;
        }
    };
    if let Err(e) = reader.get_ref().set_read_timeout(Some(timeout)) {
        let _ = events.send(NetEvent::Failed(e.into()));
        return;
    }
    for req in requests {
        let sent = Instant::now();
        if let Err(e) = write_message(&mut stream, &WireMessage::Observation(req.clone())) {
            let _ = events.send(NetEvent::Failed(lost(e)));
            return;
        }
        let event = loop {
            match read_message(&mut reader) {
                Ok(Some(WireMessage::Chunk(c))) if c.sequence == req.sequence => {
                    let elapsed = sent.elapsed();
                    if elapsed < inject {
                        std::thread::sleep(inject - elapsed);
                    }
                    break NetEvent::Chunk(c, sent.elapsed().as_nanos() as u64);
                }
                Ok(Some(WireMessage::Chunk(_))) | Ok(Some(WireMessage::Control(_))) => continue,
                Ok(Some(WireMessage::Error(e))) if e.code == "superseded" || e.code == "paused" => {
                    break NetEvent::Dropped(req.sequence)
                }
                Ok(Some(WireMessage::Error(e))) => {
                    break NetEvent::Failed(RuntimeError::Server {
                        code: e.code,
                        text: e.text,
                    })
                }
                Ok(Some(WireMessage::Observation(_))) => {
                    break NetEvent::Failed(RuntimeError::Protocol("server sent an observation".into()))
                }
                Ok(None) => break NetEvent::Failed(RuntimeError::ConnectionLost("server closed the connection".into())),
                Err(WireError::Io(e)) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    break NetEvent::Failed(RuntimeError::Timeout(timeout))
                }
                Err(e) => break NetEvent::Failed(lost(e)),
            }
        };
        let fatal = matches!(event, NetEvent::Failed(_));
        if events.send(event).is_err() || fatal {
            return;
        }
    }
}

/// Real-time reach against a remote server.
///
/// The control loop ticks at the control period on this thread; a network
/// thread exchanges messages. Responses pass through a channel that the loop
/// drains at the start of each tick, so a switch always happens between ticks.
pub fn run_client(
    addr: &str,
    chain: &KinematicChain<f64>,
    problem: &ReachProblem,
    cfg: &ClientConfig,
) -> Result<(RolloutMetrics, Episode), RuntimeError> {
    let timeout = Duration::from_millis(cfg.timeout_ms);
    let stream = connect(addr, timeout)?;
    let (req_tx, req_rx) = mpsc::channel();
    let (ev_tx, ev_rx) = mpsc::channel();
    let inject = Duration::from_secs_f64(cfg.inject_delay_ms.max(0.0) / 1e3);
    let net = std::thread::spawn(move || exchange(stream, req_rx, ev_tx, timeout, inject));

    let period = Duration::from_nanos(cfg.control_period_ns);
    let period_s = cfg.control_period_ns as f64 * 1e-9;
    let mut plant = PlantState::at_rest(problem.start.clone(), cfg.vmax, period_s);
    let max_step = (0..plant.q.len()).map(|j| plant.max_step(j)).collect();
    let mut rec = Recorder::new(chain, problem.target, cfg.success, plant.q.clone(), max_step, period_s);
    let mut exec = ChunkExecutor::new(cfg.mode);
    let mut measured: Option<u64> = None;
    let start = Instant::now();
    let mut outcome = Ok(());
    'ticks: for tick in 0..cfg.max_ticks {
        loop {
            match ev_rx.try_recv() {
                Ok(NetEvent::Chunk(resp, rtt)) => {
                    measured = Some(rtt);
                    let chunk = response_chunk(chain, &resp)?;
                    exec.adopt(resp.sequence, chunk, resp.delay);
                }
                Ok(NetEvent::Dropped(seq)) => exec.cancel(seq),
                Ok(NetEvent::Failed(e)) => {
                    outcome = Err(e);
                    break 'ticks;
                }
                Err(_) => break,
            }
        }
        if exec.needs_dispatch() {
            let (sequence, executed) = exec.dispatch();
            let now = start.elapsed().as_nanos() as i64;
            let req = ObservationRequest {
                session: cfg.session,
                sequence,
                timestamp_ns: now,
                q: plant.q.clone(),
                obs: reach_observation(&plant.q, &problem.target),
                executed,
                latency_ns: measured,
            };
            if req_tx.send(req).is_err() {
                outcome = Err(match ev_rx.recv_timeout(Duration::from_millis(100)) {
                    Ok(NetEvent::Failed(e)) => e,
                    Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) | Ok(_) => {
                        RuntimeError::ConnectionLost("network thread ended".into())
                    }
                });
                break;
            }
        }
        let cmd = exec.command(&plant.q);
        plant = step_plant(&plant, &cmd).map_err(|e| RuntimeError::Protocol(e.to_string()))?;
        if rec.push(plant.q.clone()) {
            break;
        }
        let deadline = period * (tick as u32 + 1);
        if let Some(wait) = deadline.checked_sub(start.elapsed()) {
            std::thread::sleep(wait);
        }
    }
    drop(req_tx);
    let _ = net.join();
    outcome?;
    let rollout = RolloutConfig {
        mode: cfg.mode,
        control_period_ns: cfg.control_period_ns,
        vmax: cfg.vmax,
        max_ticks: cfg.max_ticks,
        success: cfg.success,
        latency_ms: cfg.inject_delay_ms,
    };
    Ok((rec.finish(&exec.stats), reach_record(chain, problem, &rollout, &rec.q)))
}

/// Observe, block for the chunk while holding, execute `effective_steps` rows.
pub fn client_sync(
    addr: &str,
    chain: &KinematicChain<f64>,
    problem: &ReachProblem,
    effective_steps: usize,
    cfg: &ClientConfig,
) -> Result<(RolloutMetrics, Episode), RuntimeError> {
    let cfg = ClientConfig {
        mode: ExecutionMode::Sync { effective_steps },
        ..cfg.clone()
    };
    run_client(addr, chain, problem, &cfg)
}

/// Execute continuously, requesting the next chunk as soon as one arrives.
pub fn client_async(
    addr: &str,
    chain: &KinematicChain<f64>,
    problem: &ReachProblem,
    cfg: &ClientConfig,
) -> Result<(RolloutMetrics, Episode), RuntimeError> {
    let cfg = ClientConfig {
        mode: ExecutionMode::Async,
        ..cfg.clone()
    };
    run_client(addr, chain, problem, &cfg)
}
