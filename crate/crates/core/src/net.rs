//! Wire protocol: JSON messages in length-prefixed frames.
//!
//! A frame is a 4-byte big-endian body length followed by that many bytes
//! of JSON. Bodies over [`MAX_FRAME`] are refused. Requests and responses
//! share a correlation id; audit events reuse the id of the subscribe
//! request that started them.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::client::{HandleService, ServiceError};
use crate::crypto::{RecordSignature, Timestamp};
use crate::handle::Handle;
use crate::name::Name;
use crate::record::RType;
use crate::resolution::{Resolution, ResolveError};
use crate::server::{subscribe_with, AuditEvent, AuditTrail, HandleServer, RecordAnswer, Store, UpdateMessage, Verdict};

pub const MAX_FRAME: usize = 1 << 20;
const POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Kind {
    QueryResolve,
    QueryRecord,
    Update,
    AuditSubscribe,
    AuditEvent,
    Response,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub correlation_id: u64,
    pub kind: Kind,
    #[serde(default)]
    pub body: Value,
}

impl WireMessage {
    pub fn new(correlation_id: u64, kind: Kind, body: impl Serialize) -> Self {
        WireMessage {
            correlation_id,
            kind,
            body: serde_json::to_value(body).expect("wire bodies serialize"),
        }
    }

    fn error(correlation_id: u64, err: &WireError) -> Self {
        WireMessage::new(correlation_id, Kind::Error, err)
    }
}

/// Everything that can go wrong with a request, as sent in ERROR bodies.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "kebab-case")]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("resolution failed: {0}")]
    Resolution(ResolveError),
    #[error("audit subscription refused: {0}")]
    Audit(String),
    #[error("server error: {0}")]
    Internal(String),
}

pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let body = serde_json::to_vec(msg).map_err(|e| WireError::Internal(e.to_string()))?;
    if body.len() > MAX_FRAME {
        return Err(WireError::FrameTooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

fn frame_len(buf: &[u8]) -> Result<Option<usize>, WireError> {
    let Some(header) = buf.get(..4) else { return Ok(None) };
    let len = u32::from_be_bytes(header.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(WireError::FrameTooLarge(len));
    }
    Ok(Some(len))
}

fn parse_body(body: &[u8]) -> Result<WireMessage, WireError> {
    serde_json::from_slice(body).map_err(|e| WireError::MalformedFrame(e.to_string()))
}

/// Decodes the first frame in `buf`. `Ok(None)` means more bytes are
/// needed; on success the second value is the number of bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(WireMessage, usize)>, WireError> {
    let Some(len) = frame_len(buf)? else { return Ok(None) };
    let Some(body) = buf.get(4..4 + len) else { return Ok(None) };
    Ok(Some((parse_body(body)?, 4 + len)))
}

/// Decodes a buffer that must hold exactly one frame.
pub fn decode_exact(buf: &[u8]) -> Result<WireMessage, WireError> {
    match decode_frame(buf)? {
        None => Err(WireError::MalformedFrame("truncated frame".into())),
        Some((_, used)) if used != buf.len() => Err(WireError::MalformedFrame("trailing bytes after frame".into())),
        Some((msg, _)) => Ok(msg),
    }
}

pub fn write_frame(w: &mut impl Write, msg: &WireMessage) -> io::Result<()> {
    let bytes = encode_frame(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    w.write_all(&bytes)?;
    w.flush()
}

/// Blocking frame read. `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<WireMessage>> {
    let mut header = [0u8; 4];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = frame_len(&header)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?
        .expect("full header");
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    parse_body(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolveRequest {
    pub handle: Handle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordRequest {
    pub name: Name,
    pub rtype: RType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubscribeRequest {
    pub handle: Handle,
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner_proof: Option<RecordSignature>,
    /// Replay past updates before live events.
    #[serde(default)]
    pub history: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubscribeResponse {
    pub subscription: u64,
    pub history: usize,
}

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

/// Result of dispatching one request.
pub struct Reply {
    pub message: WireMessage,
    /// Set for an accepted audit subscription; the caller pumps it.
    pub trail: Option<AuditTrail>,
    pub history: Vec<AuditEvent>,
}

/// Routes requests to a [`HandleServer`]. Updates are serialized by a
/// mutex; queries run against the latest published snapshot without
/// taking it.
pub struct Dispatcher {
    server: Mutex<HandleServer>,
    current: RwLock<Arc<Store>>,
    clock: Clock,
    depth_budget: usize,
}

impl std::fmt::Debug for Dispatcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dispatcher").field("depth_budget", &self.depth_budget).finish()
    }
}

impl Dispatcher {
    pub fn new(server: HandleServer) -> Self {
        Dispatcher::with_clock(server, Arc::new(Timestamp::now))
    }

    pub fn with_clock(server: HandleServer, clock: Clock) -> Self {
        Dispatcher {
            current: RwLock::new(server.snapshot()),
            depth_budget: server.depth_budget(),
            server: Mutex::new(server),
            clock,
        }
    }

    pub fn now(&self) -> Timestamp {
        (self.clock)()
    }

    pub fn snapshot(&self) -> Arc<Store> {
        self.current.read().expect("snapshot lock poisoned").clone()
    }

    /// Runs `f` with exclusive access to the server, then republishes its
    /// snapshot.
    pub fn with_server<T>(&self, f: impl FnOnce(&mut HandleServer) -> T) -> T {
        let mut server = self.server.lock().expect("server lock poisoned");
        let out = f(&mut server);
        *self.current.write().expect("snapshot lock poisoned") = server.snapshot();
        out
    }

    pub fn resolve(&self, handle: &Handle, budget: Option<usize>) -> Result<Resolution, ResolveError> {
        self.snapshot()
            .resolve(handle, budget.unwrap_or(self.depth_budget), self.now())
    }

    pub fn query_record(&self, name: &Name, rtype: RType) -> RecordAnswer {
        self.snapshot().query_record(name, rtype, self.now())
    }

    pub fn update(&self, msg: UpdateMessage) -> Result<Verdict, WireError> {
        let now = self.now();
        self.with_server(|s| s.try_apply_update(msg, now))
            .map_err(|e| WireError::Internal(format!("update log write failed: {e}")))
    }

    pub fn dispatch(&self, req: WireMessage) -> Reply {
        let id = req.correlation_id;
        let reply = |message| Reply {
            message,
            trail: None,
            history: Vec::new(),
        };
        let fail = |e: WireError| reply(WireMessage::error(id, &e));
        fn body<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, WireError> {
            serde_json::from_value(v).map_err(|e| WireError::BadRequest(e.to_string()))
        }
        match req.kind {
            Kind::QueryResolve => match body::<ResolveRequest>(req.body) {
                Ok(r) => match self.resolve(&r.handle, r.budget) {
                    Ok(res) => reply(WireMessage::new(id, Kind::Response, res)),
                    Err(e) => fail(WireError::Resolution(e)),
                },
                Err(e) => fail(e),
            },
            Kind::QueryRecord => match body::<RecordRequest>(req.body) {
                Ok(r) => reply(WireMessage::new(id, Kind::Response, self.query_record(&r.name, r.rtype))),
                Err(e) => fail(e),
            },
            Kind::Update => match body::<UpdateMessage>(req.body).and_then(|m| self.update(m)) {
                Ok(v) => reply(WireMessage::new(id, Kind::Response, v)),
                Err(e) => fail(e),
            },
            Kind::AuditSubscribe => match body::<SubscribeRequest>(req.body) {
                Ok(r) => {
                    let now = self.now();
                    let subscribed = self.with_server(|s| {
                        let trail = subscribe_with(
                            &s.snapshot(),
                            &s.audit_hub(),
                            &r.handle,
                            &r.endpoint,
                            r.owner_proof.as_ref(),
                            now,
                        )?;
                        let history: Vec<AuditEvent> = if r.history {
                            s.update_log()
                                .iter()
                                .enumerate()
                                .filter(|(_, rec)| rec.message.target.is_descendant_of(&r.handle))
                                .map(|(seq, rec)| AuditEvent {
                                    seq: seq as u64,
                                    arrival: rec.arrival,
                                    message: rec.message.clone(),
                                    verdict: rec.verdict.clone(),
                                })
                                .collect()
                        } else {
                            Vec::new()
                        };
                        Ok::<_, crate::server::AuditError>((trail, history))
                    });
                    match subscribed {
                        Ok((trail, history)) => Reply {
                            message: WireMessage::new(
                                id,
                                Kind::Response,
                                SubscribeResponse {
                                    subscription: trail.id(),
                                    history: history.len(),
                                },
                            ),
                            trail: Some(trail),
                            history,
                        },
                        Err(e) => fail(WireError::Audit(e.to_string())),
                    }
                }
                Err(e) => fail(e),
            },
            Kind::AuditEvent | Kind::Response | Kind::Error => {
                fail(WireError::BadRequest(format!("{:?} is not a request kind", req.kind)))
            }
        }
    }

    /// Decodes one complete frame, dispatches it and returns the encoded
    /// reply. Any input yields a frame; bad input yields an ERROR frame.
    pub fn dispatch_bytes(&self, frame: &[u8]) -> Vec<u8> {
        let reply = match decode_exact(frame) {
            Ok(req) => self.dispatch(req).message,
            Err(e) => WireMessage::error(0, &e),
        };
        encode_frame(&reply).unwrap_or_else(|e| {
            encode_frame(&WireMessage::error(reply.correlation_id, &e)).expect("error frames are small")
        })
    }

    pub fn unsubscribe(&self, trail: &AuditTrail) {
        self.with_server(|s| s.unsubscribe(trail));
    }
}

impl HandleService for Dispatcher {
    fn resolve(&self, handle: &Handle) -> Result<Resolution, ServiceError> {
        Dispatcher::resolve(self, handle, None).map_err(ServiceError::Resolve)
    }

    fn query_record(&self, name: &Name, rtype: RType) -> Result<RecordAnswer, ServiceError> {
        Ok(Dispatcher::query_record(self, name, rtype))
    }

    fn submit(&self, msg: &UpdateMessage) -> Result<Verdict, ServiceError> {
        self.update(msg.clone()).map_err(|e| ServiceError::Server(e.to_string()))
    }
}

fn into_service_error(e: WireError) -> ServiceError {
    match e {
        WireError::Resolution(r) => ServiceError::Resolve(r),
        other => ServiceError::Server(other.to_string()),
    }
}

fn expect_response<T: serde::de::DeserializeOwned>(msg: WireMessage) -> Result<T, ServiceError> {
    match msg.kind {
        Kind::Response => serde_json::from_value(msg.body).map_err(|e| ServiceError::Transport(e.to_string())),
        Kind::Error => Err(into_service_error(
            serde_json::from_value(msg.body).map_err(|e| ServiceError::Transport(e.to_string()))?,
        )),
        other => Err(ServiceError::Transport(format!("unexpected {other:?} reply"))),
    }
}

/// Request/response helper shared by the two client transports.
trait Exchange {
    fn exchange(&self, kind: Kind, body: Value) -> Result<WireMessage, ServiceError>;

    fn call<T: serde::de::DeserializeOwned>(&self, kind: Kind, body: Value) -> Result<T, ServiceError> {
        expect_response(self.exchange(kind, body)?)
    }
}

macro_rules! service_via_exchange {
    ($ty:ty) => {
        impl HandleService for $ty {
            fn resolve(&self, handle: &Handle) -> Result<Resolution, ServiceError> {
                self.call(Kind::QueryResolve, json!({ "handle": handle }))
            }
            fn query_record(&self, name: &Name, rtype: RType) -> Result<RecordAnswer, ServiceError> {
                self.call(Kind::QueryRecord, json!({ "name": name, "rtype": rtype }))
            }
            fn submit(&self, msg: &UpdateMessage) -> Result<Verdict, ServiceError> {
                self.call(Kind::Update, serde_json::to_value(msg).expect("messages serialize"))
            }
        }
    };
}

/// In-process endpoint that still goes through frame encoding, so tests
/// exercise the same bytes as the network.
#[derive(Debug, Clone)]
pub struct MemoryEndpoint {
    dispatcher: Arc<Dispatcher>,
    next_id: Arc<AtomicU64>,
}

impl MemoryEndpoint {
    pub fn new(dispatcher: Arc<Dispatcher>) -> Self {
        MemoryEndpoint {
            dispatcher,
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }
}

impl Exchange for MemoryEndpoint {
    fn exchange(&self, kind: Kind, body: Value) -> Result<WireMessage, ServiceError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let frame = encode_frame(&WireMessage { correlation_id: id, kind, body })
            .map_err(|e| ServiceError::Transport(e.to_string()))?;
        let reply = decode_exact(&self.dispatcher.dispatch_bytes(&frame))
            .map_err(|e| ServiceError::Transport(e.to_string()))?;
        if reply.correlation_id != id {
            return Err(ServiceError::Transport("correlation id mismatch".into()));
        }
        Ok(reply)
    }
}

service_via_exchange!(MemoryEndpoint);

// ---------------------------------------------------------------------------
// TCP

/// A running TCP front end. Dropping it does not stop it; call
/// [`NetServer::shutdown`].
#[derive(Debug)]
pub struct NetServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    dispatcher: Arc<Dispatcher>,
}

impl NetServer {
    pub fn bind(dispatcher: Arc<Dispatcher>, listen: &str) -> io::Result<Self> {
        let listener = TcpListener::bind(listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let (stop, dispatcher) = (stop.clone(), dispatcher.clone());
            thread::spawn(move || accept_loop(listener, dispatcher, stop))
        };
        Ok(NetServer {
            addr,
            stop,
            accept: Some(accept),
            dispatcher,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn dispatcher(&self) -> &Arc<Dispatcher> {
        &self.dispatcher
    }

    /// Blocks until the stop flag is raised, then shuts down.
    pub fn run_until_stopped(mut self) {
        while !self.stop.load(Ordering::SeqCst) {
            thread::sleep(POLL);
        }
        self.join();
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.join();
    }

    fn join(&mut self) {
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
        self.dispatcher.with_server(|s| s.audit_hub().close_all());
    }
}

fn accept_loop(listener: TcpListener, dispatcher: Arc<Dispatcher>, stop: Arc<AtomicBool>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let (d, s) = (dispatcher.clone(), stop.clone());
                workers.push(thread::spawn(move || {
                    let _ = serve_connection(stream, d, s);
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
            Err(_) => thread::sleep(POLL),
        }
        workers.retain(|w| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

fn send(writer: &Mutex<TcpStream>, msg: &WireMessage) -> io::Result<()> {
    write_frame(&mut *writer.lock().expect("writer poisoned"), msg)
}

fn serve_connection(stream: TcpStream, dispatcher: Arc<Dispatcher>, stop: Arc<AtomicBool>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let mut reader = stream;
    let closed = Arc::new(AtomicBool::new(false));
    let mut trails: Vec<AuditTrail> = Vec::new();
    let mut pumps: Vec<JoinHandle<()>> = Vec::new();
    let mut buf: Vec<u8> = Vec::new();
    let mut chunk = [0u8; 8192];
    let result = 'conn: loop {
        // Handle every complete frame already buffered.
        loop {
            match decode_frame(&buf) {
                Ok(None) => break,
                Ok(Some((req, used))) => {
                    buf.drain(..used);
                    let id = req.correlation_id;
                    let reply = dispatcher.dispatch(req);
                    if let Err(e) = send(&writer, &reply.message) {
                        break 'conn Err(e);
                    }
                    for event in reply.history {
                        if let Err(e) = send(&writer, &WireMessage::new(id, Kind::AuditEvent, event)) {
                            break 'conn Err(e);
                        }
                    }
                    if let Some(trail) = reply.trail {
                        pumps.push(spawn_pump(trail.clone(), id, writer.clone(), stop.clone(), closed.clone()));
                        trails.push(trail);
                    }
                }
                Err(WireError::MalformedFrame(detail)) => {
                    // The length was sane, so the stream is still in sync.
                    let len = frame_len(&buf).ok().flatten().unwrap_or(0);
                    buf.drain(..(4 + len).min(buf.len()));
                    let _ = send(&writer, &WireMessage::error(0, &WireError::MalformedFrame(detail)));
                }
                Err(e) => {
                    // Oversized length: no way to find the next frame.
                    let _ = send(&writer, &WireMessage::error(0, &e));
                    break 'conn Ok(());
                }
            }
        }
        if stop.load(Ordering::SeqCst) {
            break Ok(());
        }
        match reader.read(&mut chunk) {
            Ok(0) => break Ok(()),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => break Err(e),
        }
    };
    closed.store(true, Ordering::SeqCst);
    for t in &trails {
        dispatcher.unsubscribe(t);
    }
    for p in pumps {
        let _ = p.join();
    }
    let _ = reader.shutdown(std::net::Shutdown::Both);
    result
}

fn spawn_pump(
    trail: AuditTrail,
    id: u64,
    writer: Arc<Mutex<TcpStream>>,
    stop: Arc<AtomicBool>,
    closed: Arc<AtomicBool>,
) -> JoinHandle<()> {
    thread::spawn(move || {
        while !stop.load(Ordering::SeqCst) && !closed.load(Ordering::SeqCst) {
            match trail.recv_timeout(POLL) {
                Some(event) => {
                    if send(&writer, &WireMessage::new(id, Kind::AuditEvent, event)).is_err() {
                        return;
                    }
                }
                None if trail.is_closed() => return,
                None => {}
            }
        }
    })
}

/// Blocking TCP client. One request at a time per client.
#[derive(Debug)]
pub struct TcpClient {
    stream: Mutex<TcpStream>,
    next_id: AtomicU64,
}

impl TcpClient {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> io::Result<Self> {
        let mut last = io::Error::new(io::ErrorKind::InvalidInput, "no address");
        for a in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout))?;
                    stream.set_write_timeout(Some(timeout))?;
                    stream.set_nodelay(true)?;
                    return Ok(TcpClient {
                        stream: Mutex::new(stream),
                        next_id: AtomicU64::new(1),
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    /// Sends raw bytes; for exercising the server with bad input.
    pub fn send_raw(&self, bytes: &[u8]) -> io::Result<()> {
        let mut s = self.stream.lock().expect("stream poisoned");
        s.write_all(bytes)?;
        s.flush()
    }

    pub fn read_message(&self) -> io::Result<Option<WireMessage>> {
        read_frame(&mut *self.stream.lock().expect("stream poisoned"))
    }

    /// Subscribes to audit events; the connection is then dedicated to the
    /// subscription.
    pub fn subscribe(self, req: &SubscribeRequest) -> Result<AuditFollower, ServiceError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let resp: SubscribeResponse = self.call_with_id(id, Kind::AuditSubscribe, serde_json::to_value(req).expect("serializes"))?;
        Ok(AuditFollower {
            stream: self.stream.into_inner().expect("stream poisoned"),
            id,
            subscription: resp.subscription,
            history: resp.history,
        })
    }

    fn call_with_id<T: serde::de::DeserializeOwned>(&self, id: u64, kind: Kind, body: Value) -> Result<T, ServiceError> {
        let transport = |e: io::Error| ServiceError::Transport(e.to_string());
        let mut s = self.stream.lock().expect("stream poisoned");
        write_frame(&mut *s, &WireMessage { correlation_id: id, kind, body }).map_err(transport)?;
        loop {
            let msg = read_frame(&mut *s)
                .map_err(transport)?
                .ok_or_else(|| ServiceError::Transport("connection closed".into()))?;
            if msg.correlation_id == id || (msg.kind == Kind::Error && msg.correlation_id == 0) {
                return expect_response(msg);
            }
        }
    }
}

impl Exchange for TcpClient {
    fn exchange(&self, kind: Kind, body: Value) -> Result<WireMessage, ServiceError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let transport = |e: io::Error| ServiceError::Transport(e.to_string());
        let mut s = self.stream.lock().expect("stream poisoned");
        write_frame(&mut *s, &WireMessage { correlation_id: id, kind, body }).map_err(transport)?;
        loop {
            let msg = read_frame(&mut *s)
                .map_err(transport)?
                .ok_or_else(|| ServiceError::Transport("connection closed".into()))?;
            if msg.correlation_id == id || (msg.kind == Kind::Error && msg.correlation_id == 0) {
                return Ok(msg);
            }
        }
    }
}

service_via_exchange!(TcpClient);

/// Receiving end of an audit subscription over TCP.
#[derive(Debug)]
pub struct AuditFollower {
    stream: TcpStream,
    id: u64,
    pub subscription: u64,
    /// Number of past events the server will send first.
    pub history: usize,
}

impl AuditFollower {
    /// Next event, or `Ok(None)` if none arrives within `timeout`.
    pub fn next_event(&mut self, timeout: Duration) -> Result<Option<AuditEvent>, ServiceError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.stream
                .set_read_timeout(Some(left))
                .map_err(|e| ServiceError::Transport(e.to_string()))?;
            match read_frame(&mut self.stream) {
                Ok(Some(msg)) if msg.kind == Kind::AuditEvent && msg.correlation_id == self.id => {
                    return serde_json::from_value(msg.body)
                        .map(Some)
                        .map_err(|e| ServiceError::Transport(e.to_string()));
                }
                Ok(Some(msg)) if msg.kind == Kind::Error => return expect_response(msg),
                Ok(Some(_)) => {}
                Ok(None) => return Err(ServiceError::Transport("connection closed".into())),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return Ok(None),
                Err(e) => return Err(ServiceError::Transport(e.to_string())),
            }
        }
    }
}
