//! The handle store: per-handle record slots, the merge law, the
//! resolution walk and zone views.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::{sign_rrset, KeyPair, PublicKey, SigFailure, SignatureParams, Timestamp, Verification};
use crate::handle::Handle;
use crate::name::Name;
use crate::record::{RData, RRset, RType, SignedRRset};
use crate::resolution::{decide, LevelRecords, Outcome, Resolution, ResolveError, Rewrite, Step};
use crate::zone::{build_nxt_chain, nxt_covers, ZoneSnapshot};

use super::message::{parse_compromise_text, Action, Payload, RejectReason, UpdateMessage, Verdict};

/// Lifetime of signatures the server makes on demand (absence proofs).
const PROOF_LIFETIME_SECS: i64 = 86_400;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandleStatus {
    pub transferred_to: Option<Handle>,
    pub cancelled: bool,
    pub compromised: bool,
    pub compromise_note: Option<String>,
}

/// Everything stored for one handle. Irrevocable slots are only ever filled
/// or replaced by an equivalent record with a higher merge key, never
/// emptied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandleEntry {
    pub handle: Handle,
    pub key: Option<SignedRRset>,
    pub creation: Option<SignedRRset>,
    pub assignment: Option<SignedRRset>,
    pub delegation: Option<SignedRRset>,
    pub transfer: Option<SignedRRset>,
    pub cancellation: Option<SignedRRset>,
    pub compromise: Option<SignedRRset>,
}

impl HandleEntry {
    pub fn new(handle: Handle) -> Self {
        HandleEntry {
            handle,
            key: None,
            creation: None,
            assignment: None,
            delegation: None,
            transfer: None,
            cancellation: None,
            compromise: None,
        }
    }

    pub fn apex_key(&self) -> Option<&PublicKey> {
        match self.key.as_ref()?.rrset.rdata() {
            [RData::Key(k)] => Some(k),
            _ => None,
        }
    }

    pub fn status(&self) -> HandleStatus {
        let transferred_to = self.transfer.as_ref().and_then(|t| match t.rrset.rdata() {
            [RData::Transfer(n)] => Handle::parse(&n.to_fqdn(), self.handle.root_suffix()).ok(),
            _ => None,
        });
        let compromise_note = self.compromise.as_ref().and_then(|c| match c.rrset.rdata() {
            [RData::Txt(t)] => Some(t.clone()),
            _ => None,
        });
        HandleStatus {
            transferred_to,
            cancelled: self.cancellation.is_some(),
            compromised: self.compromise.is_some(),
            compromise_note,
        }
    }

    /// The set served for `rtype`: irrevocable records shadow revocable ones.
    pub fn served(&self, rtype: RType) -> Option<&SignedRRset> {
        match rtype {
            RType::A => self.cancellation.as_ref().or(self.assignment.as_ref()),
            RType::Dname => self.transfer.as_ref().or(self.delegation.as_ref()),
            RType::Txt => self.compromise.as_ref().or(self.creation.as_ref()),
            RType::Key => self.key.as_ref(),
            _ => None,
        }
    }

    pub fn served_sets(&self) -> impl Iterator<Item = &SignedRRset> {
        [RType::A, RType::Txt, RType::Key, RType::Dname]
            .into_iter()
            .filter_map(|t| self.served(t))
    }

    pub fn irrevocable_sets(&self) -> impl Iterator<Item = &SignedRRset> {
        [&self.compromise, &self.transfer, &self.cancellation]
            .into_iter()
            .filter_map(Option::as_ref)
    }

    fn level(&self) -> LevelRecords<'_> {
        LevelRecords {
            a: self.served(RType::A),
            dname: self.served(RType::Dname),
            txt: self.served(RType::Txt),
        }
    }
}

/// Answer to a single-record query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordAnswer {
    pub name: Name,
    pub rtype: RType,
    pub rrset: Option<SignedRRset>,
    /// Transfer, cancellation and compromise records of the handle and its
    /// ancestors.
    pub status: Vec<SignedRRset>,
    /// KEY sets needed to check the signatures above.
    pub keys: Vec<SignedRRset>,
    /// Signed proof of absence when `rrset` is empty.
    pub nxt: Vec<SignedRRset>,
}

type SetMap = BTreeMap<(Name, RType), SignedRRset>;

/// One immutable version of the server's data. Updates produce a new
/// version; readers keep whichever `Arc<Store>` they were handed.
#[derive(Debug, Clone)]
pub struct Store {
    root: Name,
    /// Records that are not handle bindings (SOA, NS, glue, the root KEY),
    /// grouped by the apex of the zone file they came from.
    aux: BTreeMap<Name, SetMap>,
    entries: BTreeMap<Handle, Arc<HandleEntry>>,
    root_signer: Option<Arc<KeyPair>>,
}

#[derive(Serialize)]
struct CanonicalState<'a> {
    root: &'a Name,
    aux: Vec<(&'a Name, Vec<&'a SignedRRset>)>,
    entries: Vec<&'a HandleEntry>,
}

/// Accept a signature whose only fault is its validity window.
fn authentic(v: Verification) -> bool {
    matches!(
        v,
        Verification::Accept | Verification::Reject(SigFailure::Expired | SigFailure::NotYetValid)
    )
}

fn keep_max(slot: &mut Option<SignedRRset>, new: SignedRRset) {
    let replace = match slot {
        Some(old) => new.merge_key() > old.merge_key(),
        None => true,
    };
    if replace {
        *slot = Some(new);
    }
}

/// Revocable merge: a strictly lower key is stale; an equal key is a replay.
fn merge_revocable(slot: &mut Option<SignedRRset>, new: SignedRRset) -> Result<(), RejectReason> {
    if let Some(old) = slot {
        match new.merge_key().cmp(&old.merge_key()) {
            std::cmp::Ordering::Less => return Err(RejectReason::StaleSerial),
            std::cmp::Ordering::Equal => return Ok(()),
            std::cmp::Ordering::Greater => {}
        }
    }
    *slot = Some(new);
    Ok(())
}

impl Store {
    pub fn new(root: Name, root_signer: Option<Arc<KeyPair>>) -> Self {
        let mut store = Store {
            root,
            aux: BTreeMap::new(),
            entries: BTreeMap::new(),
            root_signer,
        };
        if let Some(signer) = store.root_signer.clone() {
            store.install_root_key(&signer);
        }
        store
    }

    fn install_root_key(&mut self, signer: &KeyPair) {
        let rrset = RRset::new(self.root.clone(), crate::zone::DEFAULT_TTL, vec![RData::Key(signer.public.clone())])
            .expect("one record");
        let set = self.sign_as_root(rrset, Timestamp::from_unix(0), i64::from(i32::MAX));
        self.aux
            .entry(self.root.clone())
            .or_default()
            .insert((self.root.clone(), RType::Key), set);
    }

    pub fn root(&self) -> &Name {
        &self.root
    }

    pub fn root_suffix(&self) -> String {
        self.root.to_fqdn()
    }

    pub fn root_key(&self) -> Option<&SignedRRset> {
        self.aux.get(&self.root)?.get(&(self.root.clone(), RType::Key))
    }

    pub fn entry(&self, handle: &Handle) -> Option<&HandleEntry> {
        self.entries.get(handle).map(Arc::as_ref)
    }

    pub fn entries(&self) -> impl Iterator<Item = &HandleEntry> {
        self.entries.values().map(Arc::as_ref)
    }

    pub fn status(&self, handle: &Handle) -> HandleStatus {
        self.entry(handle).map(HandleEntry::status).unwrap_or_default()
    }

    pub fn apex_key(&self, handle: &Handle) -> Option<&PublicKey> {
        self.entry(&handle.apex())?.apex_key()
    }

    /// `handle` with the root suffix spelled the way this store spells it.
    fn canonical_handle(&self, handle: &Handle) -> Handle {
        Handle::new(handle.labels().to_vec(), &self.root_suffix()).unwrap_or_else(|_| handle.clone())
    }

    /// Parses `name` as a handle under this store's root.
    pub fn handle_of(&self, name: &Name) -> Option<Handle> {
        Handle::parse(&name.to_fqdn(), &self.root_suffix()).ok()
    }

    /// True if `handle` has records, or lies above a handle that does.
    fn exists(&self, handle: &Handle) -> bool {
        if handle.is_apex() {
            return self.apex_key(handle).is_some();
        }
        self.entries
            .range(handle.clone()..)
            .next()
            .is_some_and(|(h, _)| h.is_descendant_of(handle))
    }

    /// Deterministic text of the whole store, used to compare stores.
    pub fn canonical_state(&self) -> String {
        let state = CanonicalState {
            root: &self.root,
            aux: self
                .aux
                .iter()
                .map(|(zone, sets)| (zone, sets.values().collect()))
                .collect(),
            entries: self.entries.values().map(Arc::as_ref).collect(),
        };
        serde_json::to_string(&state).expect("store serializes")
    }

    fn sign_as_root(&self, rrset: RRset, inception: Timestamp, lifetime: i64) -> SignedRRset {
        match &self.root_signer {
            Some(kp) => {
                let params = SignatureParams::for_rrset(
                    &rrset,
                    kp.public.algorithm(),
                    self.root.clone(),
                    inception,
                    lifetime,
                    0,
                );
                let sig = sign_rrset(&rrset, &kp.secret, params).expect("root key signs");
                SignedRRset {
                    rrset,
                    signature: Some(sig),
                }
            }
            None => SignedRRset::unsigned(rrset),
        }
    }

    // ---------------------------------------------------------------------
    // Updates

    /// Validates `msg` and, if accepted, merges it. With `check_window`
    /// false only the signature itself is checked, not its validity period
    /// (used for records loaded from zone files).
    pub(crate) fn apply(&mut self, msg: &UpdateMessage, now: Timestamp, check_window: bool) -> Verdict {
        match self.try_apply(msg, now, check_window) {
            Ok(()) => Verdict::Accepted,
            Err(reason) => Verdict::rejected(reason),
        }
    }

    fn try_apply(&mut self, msg: &UpdateMessage, now: Timestamp, check_window: bool) -> Result<(), RejectReason> {
        let malformed = |s: &str| RejectReason::Malformed(s.to_string());
        let target = &msg.target;
        if msg.action != msg.payload.action() {
            return Err(malformed("action does not match payload"));
        }
        if target.root() != &self.root {
            return Err(malformed("target is not under this handle root"));
        }
        match &msg.payload {
            Payload::Claim { .. } if !target.is_apex() => return Err(malformed("claim target is not an apex")),
            Payload::CreateChild if target.is_apex() => return Err(malformed("an apex cannot be created as a child")),
            Payload::Assign { address, .. } if *address == crate::record::CANCELLED_ADDRESS => {
                return Err(malformed("the cancellation address cannot be assigned"))
            }
            Payload::Delegate { target: to } | Payload::Transfer { target: to } => {
                if to.root() != &self.root {
                    return Err(malformed("delegation target is not under this handle root"));
                }
                if to == target {
                    return Err(malformed("handle delegated to itself"));
                }
            }
            Payload::Compromise { note, .. } if parse_compromise_text(note).is_none() => {
                return Err(malformed("compromise note is not 'Compromised <date>'"))
            }
            _ => {}
        }
        let sets = msg
            .signed_rrsets()
            .ok_or_else(|| malformed("payload has no record form"))?;
        let apex_name = target.apex().name();
        for set in &sets {
            let sig = set.signature.as_ref().expect("messages are signed");
            if sig.params.signer != apex_name {
                return Err(RejectReason::WrongAuthority);
            }
            if sig.params.serial != msg.serial {
                return Err(malformed("signature serial differs from message serial"));
            }
        }

        let key = match &msg.payload {
            Payload::Claim { key } => {
                if !crate::crypto::pk_label_matches(key, target.apex_label()) {
                    return Err(RejectReason::KeyLabelMismatch);
                }
                if let Some(existing) = self.apex_key(target) {
                    if existing != key {
                        return Err(RejectReason::AlreadyClaimedWithDifferentKey);
                    }
                }
                key.clone()
            }
            _ => {
                let key = self.apex_key(target).ok_or(RejectReason::UnclaimedApex)?.clone();
                if !crate::crypto::pk_label_matches(&key, target.apex_label()) {
                    return Err(RejectReason::KeyLabelMismatch);
                }
                key
            }
        };
        for set in &sets {
            match set.verify(&key, now).expect("signed") {
                Verification::Accept => {}
                Verification::Reject(SigFailure::Expired | SigFailure::NotYetValid) if !check_window => {}
                Verification::Reject(SigFailure::Expired) => return Err(RejectReason::ExpiredSignature),
                Verification::Reject(SigFailure::NotYetValid) => {
                    return Err(RejectReason::SignatureNotYetValid)
                }
                Verification::Reject(SigFailure::BadSignature | SigFailure::ParamsMismatch) => {
                    return Err(RejectReason::BadSignature)
                }
            }
        }
        if msg.action == Action::CreateChild {
            let parent = target.parent().expect("not an apex");
            if !self.exists(&parent) {
                return Err(RejectReason::UnknownParent);
            }
        }

        let mut entry = self
            .entries
            .get(target)
            .map(|e| (**e).clone())
            .unwrap_or_else(|| HandleEntry::new(self.canonical_handle(target)));
        let mut sets = sets.into_iter();
        let primary = sets.next().expect("primary set");
        match msg.action {
            Action::Claim => merge_revocable(&mut entry.key, primary)?,
            Action::CreateChild => merge_revocable(&mut entry.creation, primary)?,
            Action::Assign | Action::Delegate => {
                if entry.cancellation.is_some() {
                    return Err(RejectReason::HandleCancelled);
                }
                if entry.transfer.is_some() {
                    return Err(RejectReason::HandleTransferred);
                }
                let slot = if msg.action == Action::Assign {
                    &mut entry.assignment
                } else {
                    &mut entry.delegation
                };
                merge_revocable(slot, primary)?;
            }
            Action::Cancel => keep_max(&mut entry.cancellation, primary),
            Action::Transfer => {
                if let Some(existing) = &entry.transfer {
                    if existing.rrset.rdata() != primary.rrset.rdata() {
                        return Err(RejectReason::HandleTransferred);
                    }
                }
                keep_max(&mut entry.transfer, primary);
            }
            Action::Compromise => {
                keep_max(&mut entry.compromise, primary);
                keep_max(&mut entry.cancellation, sets.next().expect("cancellation set"));
            }
        }
        if msg.action.is_irrevocable() {
            entry.assignment = None;
            entry.delegation = None;
        }
        self.entries.insert(target.clone(), Arc::new(entry));
        Ok(())
    }

    /// Installs a claim read from a zone file without a signature.
    pub(crate) fn register_key(&mut self, apex: &Handle, set: SignedRRset) -> Result<(), RejectReason> {
        let key = match set.rrset.rdata() {
            [RData::Key(k)] => k.clone(),
            _ => return Err(RejectReason::Malformed("KEY set must hold one key".into())),
        };
        if !crate::crypto::pk_label_matches(&key, apex.apex_label()) {
            return Err(RejectReason::KeyLabelMismatch);
        }
        if let Some(existing) = self.apex_key(apex) {
            if *existing != key {
                return Err(RejectReason::AlreadyClaimedWithDifferentKey);
            }
            return Ok(());
        }
        let mut entry = HandleEntry::new(self.canonical_handle(apex));
        entry.key = Some(set);
        self.entries.insert(apex.clone(), Arc::new(entry));
        Ok(())
    }

    /// Stores a non-handle record from the zone file with apex `zone`. The
    /// signature must be authentic under the root key or the key of the
    /// apex that signed it.
    pub(crate) fn insert_aux(&mut self, zone: &Name, set: SignedRRset) -> Result<(), String> {
        let is_root_key = set.rtype() == RType::Key && set.owner() == &self.root;
        if is_root_key && self.root_signer.is_some() {
            // The server's own key takes precedence over one in a file.
            return Ok(());
        }
        match &set.signature {
            None if is_root_key => {}
            None => return Err(format!("{} {} is not signed", set.owner(), set.rtype())),
            Some(sig) => {
                let key = if sig.params.signer == self.root {
                    match self.root_key().map(|k| k.rrset.rdata()) {
                        Some([RData::Key(k)]) => k.clone(),
                        _ if is_root_key => match set.rrset.rdata() {
                            [RData::Key(k)] => k.clone(),
                            _ => return Err("root KEY set must hold one key".into()),
                        },
                        _ => return Err(format!("no root key to check {} {}", set.owner(), set.rtype())),
                    }
                } else {
                    let signer = self
                        .handle_of(&sig.params.signer)
                        .filter(Handle::is_apex)
                        .ok_or_else(|| format!("unknown signer {}", sig.params.signer))?;
                    self.apex_key(&signer)
                        .cloned()
                        .ok_or_else(|| format!("signer {} has not claimed a key", sig.params.signer))?
                };
                let v = set.verify(&key, Timestamp::from_unix(0)).expect("signed");
                if !authentic(v) {
                    return Err(format!("{} {}: {}", set.owner(), set.rtype(), SigFailure::BadSignature));
                }
            }
        }
        let sets = self.aux.entry(zone.clone()).or_default();
        let mut slot = sets.remove(&(set.owner().clone(), set.rtype()));
        keep_max(&mut slot, set.clone());
        sets.insert((set.owner().clone(), set.rtype()), slot.expect("filled"));
        Ok(())
    }

    // ---------------------------------------------------------------------
    // Zones

    fn zone_with_chain(&self, mut zone: ZoneSnapshot, now: Timestamp) -> ZoneSnapshot {
        zone.replace_nxt_chain(|rrset| self.sign_as_root(rrset, now, PROOF_LIFETIME_SECS));
        zone
    }

    fn root_zone_unchained(&self) -> ZoneSnapshot {
        let mut zone = ZoneSnapshot::new(self.root.clone());
        for set in self.aux.get(&self.root).into_iter().flat_map(|m| m.values()) {
            zone.insert(set.clone());
        }
        for entry in self.entries() {
            if let Some(key) = &entry.key {
                zone.insert(key.clone());
            }
            for set in entry.irrevocable_sets() {
                zone.insert(set.clone());
            }
        }
        zone
    }

    fn owner_zone_unchained(&self, apex: &Handle) -> ZoneSnapshot {
        let apex_name = apex.name();
        let mut zone = ZoneSnapshot::new(apex_name.clone());
        for set in self.aux.get(&apex_name).into_iter().flat_map(|m| m.values()) {
            zone.insert(set.clone());
        }
        for (_, entry) in self
            .entries
            .range(apex.clone()..)
            .take_while(|(h, _)| h.is_descendant_of(apex))
        {
            for set in entry.served_sets() {
                zone.insert(set.clone());
            }
        }
        zone
    }

    /// The root zone: root records, every claimed KEY and every irrevocable
    /// record, closed by an NXT chain signed with the root key.
    pub fn root_zone(&self, now: Timestamp) -> ZoneSnapshot {
        self.zone_with_chain(self.root_zone_unchained(), now)
    }

    /// The zone of one apex: its own SOA/NS/glue plus every served record at
    /// or below it.
    pub fn owner_zone(&self, apex: &Handle, now: Timestamp) -> ZoneSnapshot {
        self.zone_with_chain(self.owner_zone_unchained(apex), now)
    }

    /// Apexes with a claimed key.
    pub fn apexes(&self) -> Vec<Handle> {
        self.entries
            .values()
            .filter(|e| e.handle.is_apex() && e.key.is_some())
            .map(|e| e.handle.clone())
            .collect()
    }

    /// The NXT proving nothing of `rtype` exists at `name`, plus the root
    /// KEY that signs it.
    fn absence_proof(&self, name: &Name, now: Timestamp) -> Vec<SignedRRset> {
        let zone = match self.handle_of(name).map(|h| h.apex()) {
            Some(apex) if self.apex_key(&apex).is_some() => self.owner_zone_unchained(&apex),
            _ => self.root_zone_unchained(),
        };
        let chain = build_nxt_chain(&zone);
        let hit = chain
            .iter()
            .find(|r| &r.owner == name)
            .or_else(|| {
                chain.iter().find(|r| match &r.rdata {
                    RData::Nxt { next, .. } => nxt_covers(&r.owner, next, name),
                    _ => false,
                })
            })
            .cloned();
        let mut out = Vec::new();
        if let Some(record) = hit {
            let rrset = RRset::new(record.owner, record.ttl, vec![record.rdata]).expect("one record");
            out.push(self.sign_as_root(rrset, now, PROOF_LIFETIME_SECS));
        }
        if let Some(key) = self.root_key() {
            out.push(key.clone());
        }
        out
    }

    // ---------------------------------------------------------------------
    // Queries

    pub fn resolve(&self, handle: &Handle, budget: usize, now: Timestamp) -> Result<Resolution, ResolveError> {
        let suffix = self.root_suffix();
        let mut evidence: Vec<SignedRRset> = Vec::new();
        let mut transfer_notices = Vec::new();
        let mut rewrites: Vec<Rewrite> = Vec::new();
        let mut visited: HashSet<Handle> = HashSet::from([handle.clone()]);
        let mut current = handle.clone();

        fn push(evidence: &mut Vec<SignedRRset>, set: &SignedRRset) {
            if !evidence.contains(set) {
                evidence.push(set.clone());
            }
        }

        let finish = |outcome: Outcome,
                      resolved: Handle,
                      rewrites: Vec<Rewrite>,
                      evidence: Vec<SignedRRset>,
                      transfer_notices: Vec<SignedRRset>| {
            let outcome = match outcome {
                Outcome::Address(a) if !transfer_notices.is_empty() => Outcome::TransferredAndAddress(a),
                o => o,
            };
            Ok(Resolution {
                queried: handle.clone(),
                outcome,
                resolved,
                rewrites,
                evidence,
                transfer_notices,
            })
        };

        'walk: loop {
            let apex = current.apex();
            let Some(key_set) = self.entry(&apex).and_then(|e| e.key.as_ref()) else {
                for set in self.absence_proof(&apex.name(), now) {
                    push(&mut evidence, &set);
                }
                return finish(Outcome::NotFound, current, rewrites, evidence, transfer_notices);
            };
            push(&mut evidence, key_set);
            let depth = current.depth();
            for d in 1..=depth {
                let level_handle = current.truncate(d);
                let at_leaf = d == depth;
                let entry = self.entry(&level_handle);
                if let Some(e) = entry {
                    for set in e.irrevocable_sets() {
                        push(&mut evidence, set);
                    }
                }
                let level = entry.map(HandleEntry::level).unwrap_or_default();
                match decide(level, at_leaf, &suffix) {
                    Step::Compromised => {
                        return finish(Outcome::Compromised, level_handle, rewrites, evidence, transfer_notices)
                    }
                    Step::Cancelled => {
                        return finish(Outcome::Cancelled, level_handle, rewrites, evidence, transfer_notices)
                    }
                    Step::Rewrite { target, transfer } => {
                        let dname = level.dname.expect("rewrite comes from a DNAME");
                        push(&mut evidence, dname);
                        if transfer {
                            transfer_notices.push(dname.clone());
                        }
                        let next = current
                            .rewrite(d, &target)
                            .map_err(|e| ResolveError::BadRewrite { detail: e.to_string() })?;
                        rewrites.push(Rewrite {
                            from: current.clone(),
                            to: next.clone(),
                            transfer,
                        });
                        if !visited.insert(next.clone()) {
                            return Err(ResolveError::DelegationLoop { at: next.to_fqdn() });
                        }
                        if rewrites.len() > budget {
                            return Err(ResolveError::DepthExceeded { budget });
                        }
                        current = next;
                        continue 'walk;
                    }
                    Step::Address(addr) => {
                        push(&mut evidence, level.a.expect("address comes from an A set"));
                        return finish(Outcome::Address(addr), current, rewrites, evidence, transfer_notices);
                    }
                    Step::Continue if at_leaf => {
                        for set in self.absence_proof(&level_handle.name(), now) {
                            push(&mut evidence, &set);
                        }
                        return finish(Outcome::NotFound, current, rewrites, evidence, transfer_notices);
                    }
                    Step::Continue => {}
                }
            }
            unreachable!("the leaf level always returns or rewrites");
        }
    }

    pub fn query_record(&self, name: &Name, rtype: RType, now: Timestamp) -> RecordAnswer {
        let mut answer = RecordAnswer {
            name: name.clone(),
            rtype,
            rrset: None,
            status: Vec::new(),
            keys: Vec::new(),
            nxt: Vec::new(),
        };
        let handle = self.handle_of(name);
        if let Some(h) = &handle {
            for d in 1..=h.depth() {
                if let Some(e) = self.entry(&h.truncate(d)) {
                    answer.status.extend(e.irrevocable_sets().cloned());
                }
            }
            if let Some(key) = self.entry(&h.apex()).and_then(|e| e.key.clone()) {
                answer.keys.push(key);
            }
        }
        answer.rrset = if rtype == RType::Nxt {
            let zone = match handle.as_ref().map(Handle::apex) {
                Some(apex) if self.apex_key(&apex).is_some() => self.owner_zone_unchained(&apex),
                _ => self.root_zone_unchained(),
            };
            build_nxt_chain(&zone)
                .into_iter()
                .find(|r| &r.owner == name)
                .map(|r| {
                    let rrset = RRset::new(r.owner, r.ttl, vec![r.rdata]).expect("one record");
                    self.sign_as_root(rrset, now, PROOF_LIFETIME_SECS)
                })
        } else {
            handle
                .as_ref()
                .and_then(|h| self.entry(h))
                .and_then(|e| e.served(rtype).cloned())
                .or_else(|| {
                    self.aux
                        .values()
                        .find_map(|m| m.get(&(name.clone(), rtype)).cloned())
                })
        };
        let needs_root_key = matches!(&answer.rrset, Some(s) if s.rtype() == RType::Nxt);
        if answer.rrset.is_none() {
            let proof = self.absence_proof(name, now);
            for set in proof {
                if set.rtype() == RType::Key {
                    answer.keys.push(set);
                } else {
                    answer.nxt.push(set);
                }
            }
        } else if needs_root_key {
            answer.keys.extend(self.root_key().cloned());
        }
        answer
    }
}
