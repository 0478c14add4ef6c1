use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use super::protocol::{read_message, write_message, Control, ObservationRequest, WireError, WireMessage};
use super::session::{InferenceSession, Policy, ServerConfig};
use super::RuntimeError;

fn now_ns() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as i64)
}

/// TCP inference service: one thread per connection plus one inference
/// worker per connection.
pub struct Server {
    listener: TcpListener,
    policy: Arc<Policy>,
    config: ServerConfig,
    stop: Arc<AtomicBool>,
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<(), RuntimeError>>>,
}

impl ServerHandle {
    pub fn shutdown(mut self) -> Result<(), RuntimeError> {
        self.stop.store(true, Ordering::SeqCst);
        self.thread.take().map_or(Ok(()), |t| t.join().unwrap_or(Ok(())))
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, policy: Arc<Policy>, config: ServerConfig) -> Result<Self, RuntimeError> {
        let listener = TcpListener::bind(addr)?;
        Ok(Self {
            listener,
            policy,
            config,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, RuntimeError> {
        Ok(self.listener.local_addr()?)
    }

    /// Flag that makes [`Server::run`] return.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Accepts connections until the stop flag is set.
    pub fn run(self) -> Result<(), RuntimeError> {
        self.listener.set_nonblocking(true)?;
        let mut conn_id = 0u64;
        while !self.stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    conn_id += 1;
                    log::info!("session {conn_id} from {peer}");
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    let session = InferenceSession::new(self.policy.clone(), self.config.clone(), conn_id);
                    let stop = self.stop.clone();
                    std::thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, session, stop) {
                            log::warn!("session {conn_id} ended: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    pub fn spawn(self) -> Result<ServerHandle, RuntimeError> {
        let addr = self.local_addr()?;
        let stop = self.stop.clone();
        let thread = std::thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

#[derive(Default)]
struct Slot {
    request: Option<ObservationRequest>,
    closed: bool,
}

type Shared = Arc<(Mutex<Slot>, Condvar)>;

fn send(writer: &Mutex<TcpStream>, m: &WireMessage) -> Result<(), WireError> {
    let mut w = writer.lock().expect("writer lock");
    write_message(&mut *w, m)
}

/// Reader side of one connection. Requests go through a single slot, so a
/// request that arrives while another is still queued replaces it.
fn serve_connection(stream: TcpStream, session: InferenceSession, stop: Arc<AtomicBool>) -> Result<(), RuntimeError> {
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let shared: Shared = Arc::new((Mutex::new(Slot::default()), Condvar::new()));
    let paused = Arc::new(AtomicBool::new(false));
    let worker = {
        let (writer, shared, paused) = (writer.clone(), shared.clone(), paused.clone());
        std::thread::spawn(move || inference_worker(session, &writer, &shared, &paused))
    };
    let mut reader = std::io::BufReader::new(stream);
    let result = loop {
        if stop.load(Ordering::SeqCst) {
            break Ok(());
        }
        let msg = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => break Ok(()),
            Err(WireError::Io(e)) => break Err(e.into()),
            Err(e) => {
                let _ = send(&writer, &WireMessage::error("bad_frame", e.to_string()));
                break Err(e.into());
            }
        };
        match msg {
            WireMessage::Observation(req) => {
                let (lock, cv) = &*shared;
                let replaced = lock.lock().expect("slot lock").request.replace(req);
                cv.notify_one();
                if let Some(old) = replaced {
                    send(&writer, &WireMessage::error("superseded", old.sequence.to_string()))?;
                }
            }
            WireMessage::Control(Control::Ping) => send(&writer, &WireMessage::Control(Control::Pong))?,
            WireMessage::Control(Control::Pong) => {}
            WireMessage::Control(Control::Pause) => paused.store(true, Ordering::SeqCst),
            WireMessage::Control(Control::Start) => paused.store(false, Ordering::SeqCst),
            WireMessage::Control(Control::Stop) => break Ok(()),
            WireMessage::Chunk(_) | WireMessage::Error(_) => {
                send(&writer, &WireMessage::error("unexpected", "clients send observations and control messages"))?
            }
        }
    };
    {
        let (lock, cv) = &*shared;
        lock.lock().expect("slot lock").closed = true;
        cv.notify_one();
    }
    let _ = worker.join();
    let _ = writer.lock().expect("writer lock").shutdown(std::net::Shutdown::Both);
    result
}

fn inference_worker(mut session: InferenceSession, writer: &Mutex<TcpStream>, shared: &Shared, paused: &AtomicBool) {
    let (lock, cv) = &**shared;
    loop {
        let req = {
            let mut slot = lock.lock().expect("slot lock");
            loop {
                if slot.closed {
                    return;
                }
                if let Some(r) = slot.request.take() {
                    break r;
                }
                slot = cv.wait(slot).expect("slot lock");
            }
        };
        let reply = if paused.load(Ordering::SeqCst) {
            WireMessage::error("paused", req.sequence.to_string())
        } else {
            match session.handle(&req, now_ns()) {
                Ok(chunk) => WireMessage::Chunk(chunk),
                Err(e) => WireMessage::error("inference", e.to_string()),
            }
        };
        if send(writer, &reply).is_err() {
            return;
        }
    }
}
