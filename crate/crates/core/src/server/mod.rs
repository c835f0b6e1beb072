//! The authoritative handle server.
//!
//! All updates go through [`HandleServer::apply_update`], which validates a
//! message against the target's apex key, merges it into a fresh [`Store`]
//! version, appends it to the update log (and the write-ahead file when the
//! server is durable) and forwards it to audit subscribers. Readers work on
//! `Arc<Store>` snapshots and never block the writer.

pub mod audit;
pub mod config;
pub mod message;
pub mod store;

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use thiserror::Error;

use crate::crypto::{verify_rrset, AlgorithmCode, CryptoError, KeyPair, RecordSignature, Timestamp};
use crate::handle::Handle;
use crate::name::Name;
use crate::record::{RData, RRset, RType, SignedRRset};
use crate::resolution::{Resolution, ResolveError, DEFAULT_DEPTH_BUDGET};
use crate::zone::{parse_zone, ZoneError, ZoneSnapshot, DEFAULT_TTL};

pub use audit::{AuditError, AuditEvent, AuditHub, AuditTrail};
pub use config::{ConfigError, ServerConfig};
pub use message::{Action, Payload, RejectReason, Signer, UpdateMessage, Verdict};
pub use store::{HandleEntry, HandleStatus, RecordAnswer, Store};

use message::{parse_compromise_text, CREATED_TXT};

pub const WAL_FILE: &str = "updates.log";
pub const ROOT_KEY_FILE: &str = "root.key";
pub const ZONE_DIR: &str = "zones";
pub const ZONE_EXT: &str = "zone";

/// One entry of the update log.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LogRecord {
    pub message: UpdateMessage,
    pub verdict: Verdict,
    pub arrival: Timestamp,
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Zone { path: String, source: ZoneError },
    #[error("{path}: {owner} {rtype}: {detail}")]
    Load {
        path: String,
        owner: Name,
        rtype: RType,
        detail: String,
    },
    #[error("{path} line {line}: {detail}")]
    Wal { path: String, line: usize, detail: String },
    #[error("{path}: {source}")]
    Key { path: String, source: CryptoError },
}

/// A zone record that could not be loaded.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{owner} {rtype}: {detail}")]
pub struct LoadError {
    pub owner: Name,
    pub rtype: RType,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub replayed: usize,
    /// Entries whose verdict on replay differs from the logged one.
    pub mismatched: usize,
    /// A torn final line was discarded.
    pub truncated_tail: bool,
}

struct Wal {
    file: File,
}

impl Wal {
    fn append(&mut self, rec: &LogRecord) -> io::Result<()> {
        let line = format!(
            "{} {} {}\n",
            B64.encode(rec.message.to_canonical_json()),
            rec.verdict.tag(),
            rec.arrival
        );
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()
    }
}

fn parse_wal_line(line: &str) -> Result<(UpdateMessage, String, Timestamp), String> {
    let mut parts = line.split(' ');
    let (Some(msg), Some(tag), Some(ts), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err("expected three fields".into());
    };
    let json = B64.decode(msg).map_err(|e| e.to_string())?;
    let message: UpdateMessage = serde_json::from_slice(&json).map_err(|e| e.to_string())?;
    let arrival = Timestamp::parse(ts)?;
    Ok((message, tag.to_string(), arrival))
}

/// Record set an audit subscriber signs to prove ownership of `handle`.
pub fn audit_proof_rrset(handle: &Handle, endpoint: &str) -> RRset {
    RRset::new(handle.name(), DEFAULT_TTL, vec![RData::Txt(format!("audit-subscribe {endpoint}"))])
        .expect("one record")
}

pub struct HandleServer {
    store: Arc<Store>,
    log: Vec<LogRecord>,
    audit: Arc<AuditHub>,
    wal: Option<Wal>,
    depth_budget: usize,
}

impl std::fmt::Debug for HandleServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HandleServer")
            .field("root", self.store.root())
            .field("log_len", &self.log.len())
            .field("durable", &self.wal.is_some())
            .finish()
    }
}

impl HandleServer {
    /// An in-memory server. With a root key, the server publishes its KEY at
    /// the root and signs absence proofs.
    pub fn new(root: Name, root_key: Option<KeyPair>) -> Self {
        HandleServer {
            store: Arc::new(Store::new(root, root_key.map(Arc::new))),
            log: Vec::new(),
            audit: Arc::new(AuditHub::default()),
            wal: None,
            depth_budget: DEFAULT_DEPTH_BUDGET,
        }
    }

    pub fn with_limits(mut self, depth_budget: usize, audit_cap: usize) -> Self {
        self.depth_budget = depth_budget.max(1);
        self.audit = Arc::new(AuditHub::new(audit_cap, audit::DEFAULT_QUEUE_CAP));
        self
    }

    /// Opens a durable server on `config.data_dir`: loads or creates the root
    /// key, loads every zone file (root zone first) and replays the update
    /// log. Later updates are written to the log before they are
    /// acknowledged.
    pub fn open(config: &ServerConfig, now: Timestamp) -> Result<(Self, ReplayReport), ServerError> {
        let dir = &config.data_dir;
        let io_err = |path: &Path| {
            let path = path.display().to_string();
            move |source| ServerError::Io { path, source }
        };
        fs::create_dir_all(dir.join(ZONE_DIR)).map_err(io_err(dir))?;
        let root_key = load_or_create_root_key(&dir.join(ROOT_KEY_FILE))?;
        let mut server = HandleServer::new(config.root_zone.clone(), Some(root_key))
            .with_limits(config.depth_budget, config.audit_cap);

        let mut zones = Vec::new();
        let zone_dir = dir.join(ZONE_DIR);
        for item in fs::read_dir(&zone_dir).map_err(io_err(&zone_dir))? {
            let path = item.map_err(io_err(&zone_dir))?.path();
            if path.extension().is_some_and(|e| e == ZONE_EXT) {
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let zone = parse_zone(&text).map_err(|source| ServerError::Zone {
                    path: path.display().to_string(),
                    source,
                })?;
                zones.push((path, zone));
            }
        }
        let root = config.root_zone.clone();
        zones.sort_by(|(pa, a), (pb, b)| {
            (a.apex() != &root, a.apex(), pa).cmp(&(b.apex() != &root, b.apex(), pb))
        });
        for (path, zone) in &zones {
            server.load_zone(zone, now).map_err(|e| ServerError::Load {
                path: path.display().to_string(),
                owner: e.owner,
                rtype: e.rtype,
                detail: e.detail,
            })?;
        }

        let wal_path = dir.join(WAL_FILE);
        let report = server.replay_wal(&wal_path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&wal_path)
            .map_err(io_err(&wal_path))?;
        server.wal = Some(Wal { file });
        Ok((server, report))
    }

    fn replay_wal(&mut self, path: &Path) -> Result<ReplayReport, ServerError> {
        let mut report = ReplayReport::default();
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(report),
            Err(source) => {
                return Err(ServerError::Io {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let mut good_len = 0usize;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for (idx, raw) in lines.iter().enumerate() {
            let complete = raw.ends_with('\n');
            let parsed = parse_wal_line(raw.trim_end_matches('\n'));
            match parsed {
                Ok((message, tag, arrival)) if complete => {
                    let verdict = self.apply_logged(message, arrival, false).expect("no io without a log file");
                    if verdict.tag() != tag {
                        report.mismatched += 1;
                    }
                    report.replayed += 1;
                    good_len += raw.len();
                }
                _ if idx + 1 == lines.len() => {
                    report.truncated_tail = true;
                }
                Ok(_) => unreachable!("only the last piece can lack a newline"),
                Err(detail) => {
                    return Err(ServerError::Wal {
                        path: path.display().to_string(),
                        line: idx + 1,
                        detail,
                    })
                }
            }
        }
        if report.truncated_tail {
            let file = OpenOptions::new().write(true).open(path).map_err(|source| ServerError::Io {
                path: path.display().to_string(),
                source,
            })?;
            file.set_len(good_len as u64).map_err(|source| ServerError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(report)
    }

    fn apply_logged(&mut self, message: UpdateMessage, now: Timestamp, persist: bool) -> io::Result<Verdict> {
        let mut next = (*self.store).clone();
        let verdict = next.apply(&message, now, true);
        let record = LogRecord {
            message,
            verdict: verdict.clone(),
            arrival: now,
        };
        if persist {
            if let Some(wal) = &mut self.wal {
                wal.append(&record)?;
            }
        }
        if verdict.is_accepted() {
            self.store = Arc::new(next);
        }
        if persist {
            self.audit.publish(&record.message, &record.verdict, now);
        }
        self.log.push(record);
        Ok(verdict)
    }

    /// Validates, merges, logs and forwards one update. On a durable server
    /// the log line is on disk before this returns.
    pub fn try_apply_update(&mut self, msg: UpdateMessage, now: Timestamp) -> io::Result<Verdict> {
        self.apply_logged(msg, now, true)
    }

    /// As [`HandleServer::try_apply_update`]; a failed log write is reported
    /// as a rejection and leaves the store unchanged.
    pub fn apply_update(&mut self, msg: UpdateMessage, now: Timestamp) -> Verdict {
        let before = self.store.clone();
        match self.try_apply_update(msg, now) {
            Ok(v) => v,
            Err(e) => {
                self.store = before;
                Verdict::rejected(RejectReason::Malformed(format!("update log write failed: {e}")))
            }
        }
    }

    /// Claims an apex. Same path as any update; non-claims are malformed.
    pub fn claim_pk_handle(&mut self, msg: UpdateMessage, now: Timestamp) -> Verdict {
        if msg.action != Action::Claim {
            let verdict = Verdict::rejected(RejectReason::Malformed("not a claim".into()));
            self.log.push(LogRecord {
                message: msg,
                verdict: verdict.clone(),
                arrival: now,
            });
            return verdict;
        }
        self.apply_update(msg, now)
    }

    pub fn snapshot(&self) -> Arc<Store> {
        self.store.clone()
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn depth_budget(&self) -> usize {
        self.depth_budget
    }

    pub fn audit_hub(&self) -> Arc<AuditHub> {
        self.audit.clone()
    }

    pub fn update_log(&self) -> &[LogRecord] {
        &self.log
    }

    /// Log entries whose target is `handle`.
    pub fn update_log_for<'a>(&'a self, handle: &'a Handle) -> impl Iterator<Item = &'a LogRecord> {
        self.log.iter().filter(move |r| &r.message.target == handle)
    }

    pub fn status(&self, handle: &Handle) -> HandleStatus {
        self.store.status(handle)
    }

    pub fn resolve(&self, handle: &Handle, now: Timestamp) -> Result<Resolution, ResolveError> {
        self.store.resolve(handle, self.depth_budget, now)
    }

    pub fn resolve_with_budget(
        &self,
        handle: &Handle,
        depth_budget: usize,
        now: Timestamp,
    ) -> Result<Resolution, ResolveError> {
        self.store.resolve(handle, depth_budget.max(1), now)
    }

    pub fn query_record(&self, name: &Name, rtype: RType, now: Timestamp) -> RecordAnswer {
        self.store.query_record(name, rtype, now)
    }

    pub fn canonical_state(&self) -> String {
        self.store.canonical_state()
    }

    pub fn root_zone(&self, now: Timestamp) -> ZoneSnapshot {
        self.store.root_zone(now)
    }

    pub fn owner_zone(&self, apex: &Handle, now: Timestamp) -> ZoneSnapshot {
        self.store.owner_zone(apex, now)
    }

    /// Subscribes `endpoint` to updates at or below `handle`. An
    /// `owner_proof` (the apex key's signature over [`audit_proof_rrset`])
    /// bypasses the subscriber cap.
    pub fn subscribe_audit(
        &self,
        handle: &Handle,
        endpoint: &str,
        owner_proof: Option<&RecordSignature>,
        now: Timestamp,
    ) -> Result<AuditTrail, AuditError> {
        subscribe_with(&self.store, &self.audit, handle, endpoint, owner_proof, now)
    }

    pub fn unsubscribe(&self, trail: &AuditTrail) {
        self.audit.unsubscribe(trail.id());
    }

    /// Loads a parsed zone file. Handle bindings become updates validated
    /// like any other (except that signature validity periods are not
    /// enforced); SOA, NS and glue records are kept as zone data. Nothing
    /// is logged.
    pub fn load_zone(&mut self, zone: &ZoneSnapshot, now: Timestamp) -> Result<usize, LoadError> {
        let mut next = (*self.store).clone();
        let zone_apex = zone.apex().clone();
        let fail = |set: &SignedRRset, detail: String| LoadError {
            owner: set.owner().clone(),
            rtype: set.rtype(),
            detail,
        };
        let mut loaded = 0;
        let (keys, others): (Vec<&SignedRRset>, Vec<&SignedRRset>) =
            zone.rrsets().partition(|s| s.rtype() == RType::Key);

        for set in keys {
            match next.handle_of(set.owner()) {
                Some(h) if h.is_apex() => {
                    let result = match &set.signature {
                        None => next.register_key(&h, set.clone()),
                        Some(_) => match message_for(set, &h, None) {
                            Ok(msg) => match next.apply(&msg, now, false) {
                                Verdict::Accepted => Ok(()),
                                Verdict::Rejected { reason } => Err(reason),
                            },
                            Err(detail) => return Err(fail(set, detail)),
                        },
                    };
                    result.map_err(|r| fail(set, r.to_string()))?;
                }
                Some(_) => return Err(fail(set, "KEY below an apex".into())),
                None => next.insert_aux(&zone_apex, set.clone()).map_err(|d| fail(set, d))?,
            }
            loaded += 1;
        }

        for set in others {
            if set.rtype() == RType::Nxt {
                continue;
            }
            let handle = next.handle_of(set.owner());
            let is_binding = matches!(set.rtype(), RType::A | RType::Dname | RType::Txt);
            let txt_binding = |s: &SignedRRset| match s.rrset.rdata() {
                [RData::Txt(t)] => t == CREATED_TXT || parse_compromise_text(t).is_some(),
                _ => false,
            };
            match handle {
                Some(h) if is_binding && (set.rtype() != RType::Txt || txt_binding(set)) => {
                    let compromise_here = zone
                        .get(set.owner(), RType::Txt)
                        .is_some_and(crate::resolution::is_compromise_txt);
                    if set.is_cancellation() && compromise_here {
                        // Loaded together with its compromise announcement.
                        continue;
                    }
                    let cancel = if crate::resolution::is_compromise_txt(set) {
                        Some(
                            zone.get(set.owner(), RType::A)
                                .filter(|a| a.is_cancellation())
                                .ok_or_else(|| fail(set, "compromise without its cancellation record".into()))?,
                        )
                    } else {
                        None
                    };
                    let msg = message_for(set, &h, cancel).map_err(|d| fail(set, d))?;
                    if let Verdict::Rejected { reason } = next.apply(&msg, now, false) {
                        return Err(fail(set, reason.to_string()));
                    }
                }
                _ => next.insert_aux(&zone_apex, set.clone()).map_err(|d| fail(set, d))?,
            }
            loaded += 1;
        }
        self.store = Arc::new(next);
        Ok(loaded)
    }
}

pub(crate) fn subscribe_with(
    store: &Store,
    hub: &AuditHub,
    handle: &Handle,
    endpoint: &str,
    owner_proof: Option<&RecordSignature>,
    now: Timestamp,
) -> Result<AuditTrail, AuditError> {
    let owner = match owner_proof {
        None => false,
        Some(proof) => {
            let key = store.apex_key(handle).ok_or(AuditError::BadOwnerProof)?;
            let rrset = audit_proof_rrset(handle, endpoint);
            if proof.params.signer != handle.apex().name() || !verify_rrset(&rrset, proof, key, now).is_accept() {
                return Err(AuditError::BadOwnerProof);
            }
            true
        }
    };
    hub.subscribe(handle, endpoint, owner)
}

/// Rebuilds the update message a signed binding set came from.
fn message_for(set: &SignedRRset, target: &Handle, cancel: Option<&SignedRRset>) -> Result<UpdateMessage, String> {
    let signature = set
        .signature
        .clone()
        .ok_or_else(|| "binding record is not signed".to_string())?;
    let suffix = target.root_suffix().to_string();
    let to_handle = |n: &Name| Handle::parse(&n.to_fqdn(), &suffix).map_err(|e| e.to_string());
    let payload = match set.rrset.rdata() {
        [RData::Key(key)] => Payload::Claim { key: key.clone() },
        [RData::A(a)] if set.is_cancellation() => Payload::Cancel,
        [RData::A(a)] => Payload::Assign {
            address: *a,
            ttl: set.rrset.ttl(),
        },
        [RData::Dname(n)] => Payload::Delegate { target: to_handle(n)? },
        [RData::Transfer(n)] => Payload::Transfer { target: to_handle(n)? },
        [RData::Txt(t)] if t == CREATED_TXT => Payload::CreateChild,
        [RData::Txt(t)] => {
            let cancel = cancel.ok_or("compromise without its cancellation record")?;
            Payload::Compromise {
                note: t.clone(),
                cancel_signature: cancel
                    .signature
                    .clone()
                    .ok_or("cancellation record is not signed")?,
            }
        }
        _ => return Err("record set does not describe a single binding".into()),
    };
    Ok(UpdateMessage {
        target: target.clone(),
        action: payload.action(),
        serial: signature.params.serial,
        payload,
        signature,
    })
}

fn load_or_create_root_key(path: &PathBuf) -> Result<KeyPair, ServerError> {
    let key_err = |source| ServerError::Key {
        path: path.display().to_string(),
        source,
    };
    let io_err = |source| ServerError::Io {
        path: path.display().to_string(),
        source,
    };
    match fs::read_to_string(path) {
        Ok(text) => KeyPair::from_secret_file(&text).map_err(key_err),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let kp = KeyPair::generate(AlgorithmCode::RSA_SHA1).map_err(key_err)?;
            fs::write(path, kp.to_secret_file().map_err(key_err)?).map_err(io_err)?;
            Ok(kp)
        }
        Err(e) => Err(io_err(e)),
    }
}
