//! The verifying resolver client.
//!
//! Trust comes from the handle itself: every signature in a resolution must
//! verify under the key whose hash the apex label embeds. The server is only
//! a courier. After checking signatures the client replays the walk over
//! the evidence and insists on reaching the outcome the server reported.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::NaiveDate;
use thiserror::Error;

use crate::crypto::{
    derive_pk_label, pk_label_matches, AlgorithmCode, CryptoError, KeyPair, PublicKey, SigFailure, Timestamp,
    Verification,
};
use crate::handle::{Handle, HandleError};
use crate::name::Name;
use crate::record::{RData, RType, SignedRRset};
use crate::resolution::{
    decide, is_compromise_txt, LevelRecords, Outcome, Resolution, ResolveError, Rewrite, Step, DEFAULT_DEPTH_BUDGET,
};
use crate::server::{Payload, RecordAnswer, RejectReason, Signer, UpdateMessage, Verdict};
use crate::zone::nxt_covers;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("resolution failed: {0}")]
    Resolve(ResolveError),
    #[error("server error: {0}")]
    Server(String),
}

/// Anything that answers handle queries and accepts updates: a local
/// server, an in-memory endpoint or a network connection.
pub trait HandleService {
    fn resolve(&self, handle: &Handle) -> Result<Resolution, ServiceError>;
    fn query_record(&self, name: &Name, rtype: RType) -> Result<RecordAnswer, ServiceError>;
    fn submit(&self, msg: &UpdateMessage) -> Result<Verdict, ServiceError>;
}

impl<T: HandleService + ?Sized> HandleService for &T {
    fn resolve(&self, handle: &Handle) -> Result<Resolution, ServiceError> {
        (**self).resolve(handle)
    }
    fn query_record(&self, name: &Name, rtype: RType) -> Result<RecordAnswer, ServiceError> {
        (**self).query_record(name, rtype)
    }
    fn submit(&self, msg: &UpdateMessage) -> Result<Verdict, ServiceError> {
        (**self).submit(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvidenceResult {
    Accept,
    /// An irrevocable record whose signature has expired; still believed.
    StaleIrrevocable,
    Reject(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceVerdict {
    pub owner: Name,
    pub rtype: RType,
    pub result: EvidenceResult,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedResolution {
    pub resolution: Resolution,
    pub verdicts: Vec<EvidenceVerdict>,
    /// Apex labels whose embedded key hash was checked.
    pub trust_basis: Vec<String>,
    pub warnings: Vec<String>,
}

impl VerifiedResolution {
    pub fn outcome(&self) -> Outcome {
        self.resolution.outcome
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("resolution failed: {0}")]
    Resolution(ResolveError),
    #[error("verification failed: {0}")]
    VerificationFailed(String),
    #[error("handle is compromised")]
    Compromised(Box<VerifiedResolution>),
}

impl From<ServiceError> for ClientError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Transport(t) | ServiceError::Server(t) => ClientError::Transport(t),
            ServiceError::Resolve(r) => ClientError::Resolution(r),
        }
    }
}

/// Verification settings.
#[derive(Debug, Clone)]
pub struct Verifier {
    pub now: Timestamp,
    /// Full keys pinned per apex name; these replace the label-hash check.
    pub pinned: BTreeMap<Name, PublicKey>,
    /// Root key for absence proofs. Without one, the root KEY served in the
    /// evidence is used.
    pub root_key: Option<PublicKey>,
    pub depth_budget: usize,
}

impl Verifier {
    pub fn new(now: Timestamp) -> Self {
        Verifier {
            now,
            pinned: BTreeMap::new(),
            root_key: None,
            depth_budget: DEFAULT_DEPTH_BUDGET,
        }
    }

    pub fn pin(mut self, apex: &Handle, key: PublicKey) -> Self {
        self.pinned.insert(apex.apex().name(), key);
        self
    }
}

fn is_irrevocable(set: &SignedRRset) -> bool {
    set.is_cancellation() || set.is_transfer() || is_compromise_txt(set)
}

struct Checked<'a> {
    index: HashMap<(Name, RType), &'a SignedRRset>,
    apex_keys: HashMap<Name, PublicKey>,
    root_key: Option<PublicKey>,
    verdicts: Vec<EvidenceVerdict>,
    trust_basis: Vec<String>,
    warnings: Vec<String>,
}

/// Checks every signature in `evidence`; returns the first failure.
fn check_evidence<'a>(
    evidence: &'a [SignedRRset],
    root: &Name,
    suffix: &str,
    v: &Verifier,
) -> Result<Checked<'a>, String> {
    let mut c = Checked {
        index: HashMap::new(),
        apex_keys: HashMap::new(),
        root_key: v.root_key.clone(),
        verdicts: Vec::new(),
        trust_basis: Vec::new(),
        warnings: Vec::new(),
    };
    for set in evidence {
        let key = (set.owner().clone(), set.rtype());
        if let Some(prev) = c.index.insert(key, set) {
            if prev != set {
                return Err(format!("conflicting {} sets for {}", set.rtype(), set.owner()));
            }
        }
    }
    let record = |c: &mut Checked<'a>, set: &SignedRRset, result: EvidenceResult| -> Result<(), String> {
        let fail = match &result {
            EvidenceResult::Reject(why) => Some(format!("{} {}: {why}", set.owner(), set.rtype())),
            EvidenceResult::StaleIrrevocable => {
                c.warnings
                    .push(format!("stale-irrevocable: {} {}", set.owner(), set.rtype()));
                None
            }
            EvidenceResult::Accept => None,
        };
        c.verdicts.push(EvidenceVerdict {
            owner: set.owner().clone(),
            rtype: set.rtype(),
            result,
        });
        fail.map_or(Ok(()), Err)
    };

    // Keys first: each must match its label (or the pinned key).
    for set in evidence.iter().filter(|s| s.rtype() == RType::Key) {
        let key = match set.rrset.rdata() {
            [RData::Key(k)] => k.clone(),
            _ => {
                record(&mut c, set, EvidenceResult::Reject("KEY set must hold exactly one key".into()))?;
                continue;
            }
        };
        let self_check = |key: &PublicKey| match set.verify(key, v.now) {
            None | Some(Verification::Accept) => EvidenceResult::Accept,
            Some(Verification::Reject(SigFailure::Expired)) => EvidenceResult::StaleIrrevocable,
            Some(Verification::Reject(f)) => EvidenceResult::Reject(format!("key self-signature: {f}")),
        };
        if set.owner() == root {
            let result = match &v.root_key {
                Some(pinned) if *pinned != key => EvidenceResult::Reject("root key differs from the pinned key".into()),
                _ => self_check(&key),
            };
            if result != EvidenceResult::Accept && result != EvidenceResult::StaleIrrevocable {
                record(&mut c, set, result)?;
                continue;
            }
            c.root_key.get_or_insert(key);
            record(&mut c, set, result)?;
            continue;
        }
        let apex = match Handle::parse(&set.owner().to_fqdn(), suffix) {
            Ok(h) if h.is_apex() => h,
            _ => {
                record(&mut c, set, EvidenceResult::Reject("KEY owner is not an apex".into()))?;
                continue;
            }
        };
        let matches = match v.pinned.get(set.owner()) {
            Some(pinned) => *pinned == key,
            None => pk_label_matches(&key, apex.apex_label()),
        };
        if !matches {
            record(&mut c, set, EvidenceResult::Reject("key does not match the handle label".into()))?;
            continue;
        }
        let result = self_check(&key);
        c.apex_keys.insert(set.owner().clone(), key);
        c.trust_basis.push(apex.leaf_label().encode());
        record(&mut c, set, result)?;
    }

    for set in evidence.iter().filter(|s| s.rtype() != RType::Key) {
        let Some(sig) = &set.signature else {
            record(&mut c, set, EvidenceResult::Reject("unsigned".into()))?;
            continue;
        };
        let key = if set.rtype() == RType::Nxt {
            if &sig.params.signer != root {
                record(&mut c, set, EvidenceResult::Reject("NXT not signed by the root".into()))?;
                continue;
            }
            c.root_key.clone()
        } else {
            let owner_apex = Handle::parse(&set.owner().to_fqdn(), suffix).ok().map(|h| h.apex().name());
            if owner_apex.as_ref() != Some(&sig.params.signer) {
                record(&mut c, set, EvidenceResult::Reject("signer is not the owner's apex".into()))?;
                continue;
            }
            c.apex_keys.get(&sig.params.signer).cloned()
        };
        let Some(key) = key else {
            record(&mut c, set, EvidenceResult::Reject(format!("no verified key for {}", sig.params.signer)))?;
            continue;
        };
        let result = match set.verify(&key, v.now).expect("signed") {
            Verification::Accept => EvidenceResult::Accept,
            Verification::Reject(SigFailure::Expired) if is_irrevocable(set) => EvidenceResult::StaleIrrevocable,
            Verification::Reject(f) => EvidenceResult::Reject(f.to_string()),
        };
        record(&mut c, set, result)?;
    }
    Ok(c)
}

struct Replay {
    /// Evidence sets the walk actually consulted.
    used: HashSet<(Name, RType)>,
    outcome: Outcome,
    resolved: Handle,
    rewrites: Vec<Rewrite>,
    transfer_notices: Vec<SignedRRset>,
}

/// The NXT in the evidence that proves `name` has no binding, if any.
fn absence_witness(c: &Checked<'_>, name: &Name) -> Option<Name> {
    c.index.values().find_map(|s| match s.rrset.rdata() {
        [RData::Nxt { next, types }] if s.rtype() == RType::Nxt => {
            let proves = if s.owner() == name {
                !types.contains(&RType::A) && !types.contains(&RType::Dname)
            } else {
                nxt_covers(s.owner(), next, name)
            };
            proves.then(|| s.owner().clone())
        }
        _ => None,
    })
}

/// Walks the evidence the way a server would, independently of what the
/// server claims.
fn replay(queried: &Handle, c: &Checked<'_>, budget: usize) -> Result<Replay, String> {
    let suffix = queried.root_suffix().to_string();
    let get = |name: &Name, t: RType| c.index.get(&(name.clone(), t)).copied();
    let mut current = queried.clone();
    let mut rewrites = Vec::new();
    let mut notices = Vec::new();
    let mut visited = HashSet::from([queried.clone()]);
    let mut used: HashSet<(Name, RType)> = HashSet::new();
    let root_key = (queried.root().clone(), RType::Key);
    let done = |used: HashSet<(Name, RType)>,
                outcome: Outcome,
                resolved: Handle,
                rewrites: Vec<Rewrite>,
                notices: Vec<SignedRRset>| {
        let outcome = match outcome {
            Outcome::Address(a) if !notices.is_empty() => Outcome::TransferredAndAddress(a),
            o => o,
        };
        Ok(Replay {
            used,
            outcome,
            resolved,
            rewrites,
            transfer_notices: notices,
        })
    };
    'walk: loop {
        let apex_name = current.apex().name();
        if !c.apex_keys.contains_key(&apex_name) {
            if let Some(nxt) = absence_witness(c, &apex_name) {
                used.insert((nxt, RType::Nxt));
                used.insert(root_key.clone());
                return done(used, Outcome::NotFound, current, rewrites, notices);
            }
            return Err(format!("no verified key for {apex_name}"));
        }
        used.insert((apex_name, RType::Key));
        let depth = current.depth();
        for d in 1..=depth {
            let h = current.truncate(d);
            let name = h.name();
            let level = LevelRecords {
                a: get(&name, RType::A),
                dname: get(&name, RType::Dname),
                txt: get(&name, RType::Txt),
            };
            for (set, t) in [(level.a, RType::A), (level.dname, RType::Dname), (level.txt, RType::Txt)] {
                if set.is_some() {
                    used.insert((name.clone(), t));
                }
            }
            match decide(level, d == depth, &suffix) {
                Step::Compromised => return done(used, Outcome::Compromised, h, rewrites, notices),
                Step::Cancelled => return done(used, Outcome::Cancelled, h, rewrites, notices),
                Step::Rewrite { target, transfer } => {
                    if transfer {
                        notices.push(level.dname.expect("rewrite from DNAME").clone());
                    }
                    let next = current.rewrite(d, &target).map_err(|e| e.to_string())?;
                    rewrites.push(Rewrite {
                        from: current.clone(),
                        to: next.clone(),
                        transfer,
                    });
                    if !visited.insert(next.clone()) || rewrites.len() > budget {
                        return Err("evidence describes a looping or over-long rewrite chain".into());
                    }
                    current = next;
                    continue 'walk;
                }
                Step::Address(a) => return done(used, Outcome::Address(a), current, rewrites, notices),
                Step::Continue if d == depth => {
                    if let Some(nxt) = absence_witness(c, &name) {
                        used.insert((nxt, RType::Nxt));
                        used.insert(root_key.clone());
                        return done(used, Outcome::NotFound, current, rewrites, notices);
                    }
                    return Err(format!("no address and no proof of absence for {name}"));
                }
                Step::Continue => {}
            }
        }
        unreachable!("the leaf level always returns or rewrites");
    }
}

/// Verifies one resolution without contacting anyone.
pub fn verify_resolution(res: &Resolution, v: &Verifier) -> Result<VerifiedResolution, String> {
    let root = res.queried.root().clone();
    let suffix = res.queried.root_suffix().to_string();
    let checked = check_evidence(&res.evidence, &root, &suffix, v)?;
    let replayed = replay(&res.queried, &checked, v.depth_budget)?;
    if let Some(extra) = res
        .evidence
        .iter()
        .find(|s| !replayed.used.contains(&(s.owner().clone(), s.rtype())))
    {
        return Err(format!("evidence includes unused {} {}", extra.owner(), extra.rtype()));
    }
    if replayed.outcome != res.outcome {
        return Err(format!(
            "evidence supports {} but the server reported {}",
            replayed.outcome, res.outcome
        ));
    }
    if replayed.resolved != res.resolved || replayed.rewrites != res.rewrites {
        return Err("rewrite chain does not match the evidence".into());
    }
    let mut ours: Vec<&SignedRRset> = replayed.transfer_notices.iter().collect();
    let mut theirs: Vec<&SignedRRset> = res.transfer_notices.iter().collect();
    ours.sort_by_key(|s| s.owner().clone());
    theirs.sort_by_key(|s| s.owner().clone());
    if ours != theirs {
        return Err("transfer notices do not match the evidence".into());
    }
    Ok(VerifiedResolution {
        resolution: res.clone(),
        verdicts: checked.verdicts,
        trust_basis: checked.trust_basis,
        warnings: checked.warnings,
    })
}

/// Resolves `handle` through each service in turn; the first resolution
/// that verifies wins. A verified compromise is reported as
/// [`ClientError::Compromised`].
pub fn resolve_and_verify<S: HandleService + ?Sized>(
    handle: &Handle,
    services: &[&S],
    v: &Verifier,
) -> Result<VerifiedResolution, ClientError> {
    let mut last = ClientError::Transport("no server endpoints given".into());
    for service in services {
        let res = match service.resolve(handle) {
            Ok(r) => r,
            Err(e) => {
                last = e.into();
                continue;
            }
        };
        if &res.queried != handle {
            last = ClientError::VerificationFailed("server answered a different query".into());
            continue;
        }
        match verify_resolution(&res, v) {
            Ok(vr) if vr.outcome() == Outcome::Compromised => return Err(ClientError::Compromised(Box::new(vr))),
            Ok(vr) => return Ok(vr),
            Err(detail) => last = ClientError::VerificationFailed(detail),
        }
    }
    Err(last)
}

// ---------------------------------------------------------------------------
// References

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandleReference {
    pub handle: Handle,
    pub pinned_key: Option<PublicKey>,
    pub last_resolution: Option<Resolution>,
    pub superseded_by: Option<Handle>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReferenceError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("missing handle line")]
    MissingHandle,
    #[error(transparent)]
    Handle(#[from] HandleError),
    #[error(transparent)]
    Key(#[from] CryptoError),
}

impl HandleReference {
    pub fn new(handle: Handle) -> Self {
        HandleReference {
            handle,
            pinned_key: None,
            last_resolution: None,
            superseded_by: None,
        }
    }

    /// The handle to use now: the successor once a transfer has been seen.
    pub fn effective(&self) -> &Handle {
        self.superseded_by.as_ref().unwrap_or(&self.handle)
    }

    /// Text form: `root`, `handle`, optional `superseded_by` and
    /// `pinned_key` lines.
    pub fn to_file(&self) -> String {
        let mut out = format!(
            "root {}\nhandle {}\n",
            self.handle.root_suffix(),
            self.handle.relative_text()
        );
        if let Some(s) = &self.superseded_by {
            out.push_str(&format!("superseded_by {}\n", s.relative_text()));
        }
        if let Some(k) = &self.pinned_key {
            out.push_str(&format!("pinned_key {}\n", B64.encode(k.key_bytes())));
        }
        out
    }

    pub fn from_file(text: &str) -> Result<Self, ReferenceError> {
        let mut root = ".".to_string();
        let mut handle = None;
        let mut superseded = None;
        let mut pinned = None;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(' ').ok_or_else(|| ReferenceError::Syntax {
                line: idx + 1,
                detail: "expected '<key> <value>'".into(),
            })?;
            match key {
                "root" => root = value.trim().to_string(),
                "handle" => handle = Some(value.trim().to_string()),
                "superseded_by" => superseded = Some(value.trim().to_string()),
                "pinned_key" => {
                    let bytes = B64.decode(value.trim()).map_err(|e| ReferenceError::Syntax {
                        line: idx + 1,
                        detail: e.to_string(),
                    })?;
                    pinned = Some(PublicKey::from_rdata(bytes)?);
                }
                other => {
                    return Err(ReferenceError::Syntax {
                        line: idx + 1,
                        detail: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        let parse = |rel: &str| {
            let fqdn = if root == "." { format!("{rel}.") } else { format!("{rel}.{root}") };
            Handle::parse(&fqdn, &root)
        };
        let handle = parse(&handle.ok_or(ReferenceError::MissingHandle)?)?;
        Ok(HandleReference {
            handle,
            pinned_key: pinned,
            last_resolution: None,
            superseded_by: superseded.as_deref().map(parse).transpose()?,
        })
    }
}

/// Follows verified transfers. Only rewrites that are transfers from the
/// start of the chain count: a reference does not follow a temporary
/// delegation, nor a transfer reached through one.
pub fn update_reference(reference: &HandleReference, verified: &VerifiedResolution) -> HandleReference {
    let mut next = reference.clone();
    let res = &verified.resolution;
    if &res.queried != reference.effective() {
        return next;
    }
    let successor = res
        .rewrites
        .iter()
        .take_while(|r| r.transfer)
        .last()
        .map(|r| r.to.clone());
    if let Some(s) = successor {
        next.superseded_by = Some(s);
    }
    next.last_resolution = Some(res.clone());
    next
}

// ---------------------------------------------------------------------------
// Key upgrade

#[derive(Debug, Clone)]
pub struct UpgradeOptions {
    pub new_algorithm: AlgorithmCode,
    pub suffix_len: usize,
    pub now: Timestamp,
    pub lifetime_secs: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpgradeStep {
    pub description: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct UpgradeReport {
    pub new_apex: Option<Handle>,
    pub new_key: Option<KeyPair>,
    pub steps: Vec<UpgradeStep>,
    pub transferred: bool,
    pub aborted: Option<String>,
}

impl fmt::Display for UpgradeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            writeln!(f, "[{}] {}: {}", if s.ok { "ok" } else { "FAILED" }, s.description, s.detail)?;
        }
        match &self.aborted {
            Some(why) => write!(f, "aborted before transfer: {why}"),
            None => write!(f, "transferred: {}", self.transferred),
        }
    }
}

/// Bindings of one handle, as read back from the server.
#[derive(Debug, Clone, Default)]
struct Bindings {
    created: Option<SignedRRset>,
    a: Option<SignedRRset>,
    dname: Option<SignedRRset>,
    txt_compromise: Option<SignedRRset>,
}

/// Every owner name in the zone of `apex`, found by walking its NXT chain.
pub fn enumerate_zone<S: HandleService + ?Sized>(service: &S, apex: &Handle) -> Result<Vec<Name>, ServiceError> {
    let start = apex.name();
    let mut names = vec![start.clone()];
    let mut seen = HashSet::from([start.clone()]);
    let mut cur = start.clone();
    loop {
        let answer = service.query_record(&cur, RType::Nxt)?;
        let next = match answer.rrset.as_ref().map(|s| s.rrset.rdata()) {
            Some([RData::Nxt { next, .. }]) => next.clone(),
            _ => return Err(ServiceError::Server(format!("no NXT record at {cur}"))),
        };
        if !seen.insert(next.clone()) {
            return Ok(names);
        }
        names.push(next.clone());
        cur = next;
    }
}

/// Handles strictly below `apex`, as label paths relative to the apex.
pub fn ordinal_paths<S: HandleService + ?Sized>(
    service: &S,
    apex: &Handle,
) -> Result<BTreeSet<Vec<String>>, ServiceError> {
    let suffix = apex.root_suffix().to_string();
    Ok(enumerate_zone(service, apex)?
        .into_iter()
        .filter_map(|n| Handle::parse(&n.to_fqdn(), &suffix).ok())
        .filter(|h| h.is_descendant_of(apex) && !h.is_apex())
        .map(|h| h.labels()[1..].iter().map(|l| l.encode()).collect())
        .collect())
}

fn read_bindings<S: HandleService + ?Sized>(
    service: &S,
    handle: &Handle,
    key: &PublicKey,
) -> Result<Bindings, String> {
    let name = handle.name();
    let mut b = Bindings::default();
    for rtype in [RType::Txt, RType::A, RType::Dname] {
        let answer = service.query_record(&name, rtype).map_err(|e| e.to_string())?;
        let Some(set) = answer.rrset else { continue };
        match set.verify(key, Timestamp::from_unix(0)) {
            Some(Verification::Accept | Verification::Reject(SigFailure::NotYetValid | SigFailure::Expired)) => {}
            _ => return Err(format!("{name} {rtype} does not verify under the old key")),
        }
        match rtype {
            RType::Txt if is_compromise_txt(&set) => b.txt_compromise = Some(set),
            RType::Txt => b.created = Some(set),
            RType::A => b.a = Some(set),
            _ => b.dname = Some(set),
        }
    }
    Ok(b)
}

/// Moves everything below `old_apex` to a freshly claimed key:
///
/// 1. claim the new apex;
/// 2. enumerate the old zone through its NXT chain;
/// 3. re-issue creations, assignments, delegations, cancellations and
///    transfers under the new apex with the same ordinals and serials,
///    pointing delegations into the old hierarchy at the new one;
/// 4. check through test resolutions that each copy resolves like its
///    original;
/// 5. transfer the old apex to the new one.
///
/// Any failure stops the run before step 5, leaving the old apex untouched.
pub fn key_upgrade<S: HandleService + ?Sized>(
    old_apex: &Handle,
    old_key: &KeyPair,
    new_key: Option<KeyPair>,
    opts: &UpgradeOptions,
    service: &S,
) -> UpgradeReport {
    let mut report = UpgradeReport {
        new_apex: None,
        new_key: None,
        steps: Vec::new(),
        transferred: false,
        aborted: None,
    };
    let old_apex = old_apex.apex();
    macro_rules! step {
        ($desc:expr, $result:expr) => {
            match $result {
                Ok(detail) => report.steps.push(UpgradeStep {
                    description: $desc.to_string(),
                    ok: true,
                    detail,
                }),
                Err(detail) => {
                    let detail: String = detail;
                    report.steps.push(UpgradeStep {
                        description: $desc.to_string(),
                        ok: false,
                        detail: detail.clone(),
                    });
                    report.aborted = Some(format!("{}: {detail}", $desc));
                    return report;
                }
            }
        };
    }

    let new_key = match new_key.map(Ok).unwrap_or_else(|| KeyPair::generate(opts.new_algorithm)) {
        Ok(k) => k,
        Err(e) => {
            step!("generate new key", Err::<String, _>(e.to_string()));
            unreachable!()
        }
    };
    let new_label = match derive_pk_label(&new_key.public, opts.suffix_len) {
        Ok(l) => l,
        Err(e) => {
            step!("derive new label", Err::<String, _>(e.to_string()));
            unreachable!()
        }
    };
    let new_apex = Handle::apex_of(new_label, old_apex.root_suffix()).expect("derived label is valid");
    report.new_apex = Some(new_apex.clone());
    report.new_key = Some(new_key.clone());
    let old_signer = Signer::new(old_key, opts.now, opts.lifetime_secs);
    let new_signer = Signer::new(&new_key, opts.now, opts.lifetime_secs);
    let submit = |msg: Result<UpdateMessage, CryptoError>| -> Result<String, String> {
        let msg = msg.map_err(|e| e.to_string())?;
        match service.submit(&msg).map_err(|e| e.to_string())? {
            Verdict::Accepted => Ok(format!("{} {} accepted", msg.action, msg.target.relative_text())),
            Verdict::Rejected { reason } => Err(format!("{} {} rejected: {reason}", msg.action, msg.target.relative_text())),
        }
    };

    step!(format!("claim {}", new_apex.relative_text()), submit(new_signer.claim(&new_apex)));

    // Enumerate the old hierarchy.
    let suffix = old_apex.root_suffix().to_string();
    let mut handles: Vec<Handle> = Vec::new();
    step!(
        "enumerate old hierarchy",
        enumerate_zone(service, &old_apex).map_err(|e| e.to_string()).map(|names| {
            handles = names
                .iter()
                .filter_map(|n| Handle::parse(&n.to_fqdn(), &suffix).ok())
                .filter(|h| h.is_descendant_of(&old_apex))
                .collect();
            handles.sort();
            format!("{} handles", handles.len())
        })
    );

    let redirect = |h: &Handle| -> Handle {
        if h.is_descendant_of(&old_apex) {
            h.rewrite(1, &new_apex).unwrap_or_else(|_| h.clone())
        } else {
            h.clone()
        }
    };
    let mut copied: Vec<Handle> = Vec::new();
    for old in &handles {
        let bindings = match read_bindings(service, old, &old_key.public) {
            Ok(b) => b,
            Err(e) => {
                step!(format!("read {}", old.relative_text()), Err::<String, _>(e));
                unreachable!()
            }
        };
        if old.is_apex() {
            if bindings.dname.as_ref().is_some_and(SignedRRset::is_transfer) {
                step!("check old apex", Err::<String, _>("old apex is already transferred".into()));
            }
            if bindings.a.as_ref().is_some_and(SignedRRset::is_cancellation) {
                step!("check old apex", Err::<String, _>("old apex is already cancelled".into()));
            }
        }
        let new = redirect(old);
        let serial = |s: &Option<SignedRRset>| s.as_ref().map_or(1, SignedRRset::serial);
        let mut msgs: Vec<Result<UpdateMessage, CryptoError>> = Vec::new();
        if !new.is_apex() && bindings.created.is_some() {
            msgs.push(new_signer.message(&new, Payload::CreateChild, serial(&bindings.created)));
        }
        let dname_target = |set: &SignedRRset| match set.rrset.rdata() {
            [RData::Dname(n)] | [RData::Transfer(n)] => Handle::parse(&n.to_fqdn(), &suffix).ok().map(|h| redirect(&h)),
            _ => None,
        };
        match &bindings.a {
            Some(a) if !a.is_cancellation() => {
                if let Some(addr) = a.rrset.rdata().first().and_then(RData::as_address) {
                    msgs.push(new_signer.message(
                        &new,
                        Payload::Assign {
                            address: addr,
                            ttl: a.rrset.ttl(),
                        },
                        a.serial(),
                    ));
                }
            }
            _ => {}
        }
        if let Some(d) = bindings.dname.as_ref().filter(|d| !d.is_transfer()) {
            if let Some(target) = dname_target(d) {
                msgs.push(new_signer.message(&new, Payload::Delegate { target }, d.serial()));
            }
        }
        if let Some(c) = bindings.a.as_ref().filter(|a| a.is_cancellation()) {
            if bindings.txt_compromise.is_none() {
                msgs.push(new_signer.message(&new, Payload::Cancel, c.serial()));
            }
        }
        if let Some(t) = bindings.dname.as_ref().filter(|d| d.is_transfer()) {
            if let Some(target) = dname_target(t) {
                msgs.push(new_signer.message(&new, Payload::Transfer { target }, t.serial()));
            }
        }
        if let Some(c) = &bindings.txt_compromise {
            let note = match c.rrset.rdata() {
                [RData::Txt(t)] => t.clone(),
                _ => String::new(),
            };
            msgs.push(new_signer.message(
                &new,
                Payload::Compromise {
                    note,
                    cancel_signature: crate::server::message::placeholder_signature(),
                },
                c.serial(),
            ));
        }
        let count = msgs.len();
        for m in msgs {
            step!(format!("copy {}", new.relative_text()), submit(m));
        }
        if count > 0 || !new.is_apex() {
            copied.push(old.clone());
        }
    }

    // Test queries: each copy must resolve like its original.
    let verifier = Verifier::new(opts.now);
    for old in &copied {
        let new = redirect(old);
        let outcome = |h: &Handle| match resolve_and_verify(h, &[service], &verifier) {
            Ok(vr) => Ok(vr.outcome()),
            Err(ClientError::Compromised(_)) => Ok(Outcome::Compromised),
            Err(ClientError::Resolution(e)) => Err(e.to_string()),
            Err(e) => Err(format!("unverifiable: {e}")),
        };
        let (was, now) = (outcome(old), outcome(&new));
        let result = match (&was, &now) {
            (Ok(a), Ok(b)) if a == b => Ok(format!("{a}")),
            (Err(a), Err(b)) if a.split(' ').next() == b.split(' ').next() => Ok(format!("both fail: {a}")),
            _ => Err(format!("old {was:?}, new {now:?}")),
        };
        step!(format!("verify {}", new.relative_text()), result);
    }

    step!(
        format!("transfer {} to {}", old_apex.relative_text(), new_apex.relative_text()),
        submit(old_signer.message(&old_apex, Payload::Transfer { target: new_apex.clone() }, 1))
    );
    report.transferred = true;
    report
}

#[derive(Debug, Clone)]
pub struct CancelReport {
    pub verdicts: Vec<(crate::server::Action, Verdict)>,
    pub warnings: Vec<String>,
}

impl CancelReport {
    pub fn all_accepted(&self) -> bool {
        self.verdicts.iter().all(|(_, v)| v.is_accepted())
    }
}

/// Irrevocably cancels the old apex, and marks it compromised when
/// `compromised_on` is given. Warns if the apex has not been transferred.
pub fn cancel_old_key<S: HandleService + ?Sized>(
    old_apex: &Handle,
    old_key: &KeyPair,
    compromised_on: Option<NaiveDate>,
    now: Timestamp,
    lifetime_secs: i64,
    service: &S,
) -> Result<CancelReport, ClientError> {
    let apex = old_apex.apex();
    let mut report = CancelReport {
        verdicts: Vec::new(),
        warnings: Vec::new(),
    };
    let dname = service.query_record(&apex.name(), RType::Dname)?;
    if !dname.rrset.as_ref().is_some_and(SignedRRset::is_transfer) {
        report
            .warnings
            .push(format!("{} has not been transferred", apex.relative_text()));
    }
    let signer = Signer::new(old_key, now, lifetime_secs);
    let sign_err = |e: CryptoError| ClientError::Transport(format!("signing failed: {e}"));
    let cancel = signer.message(&apex, Payload::Cancel, 1).map_err(sign_err)?;
    report
        .verdicts
        .push((cancel.action, service.submit(&cancel)?));
    if let Some(date) = compromised_on {
        let msg = signer.compromise(&apex, date, 1).map_err(sign_err)?;
        report.verdicts.push((msg.action, service.submit(&msg)?));
    }
    Ok(report)
}

/// Reason carried by a rejection, for callers that only care about that.
pub fn rejection(v: &Verdict) -> Option<&RejectReason> {
    v.reason()
}
