//! Signed update messages and verdicts.
//!
//! Every message carries the record set it would install together with the
//! owner's signature over that set, so its validity can be decided from the
//! message and the target's apex key alone.

use std::fmt;
use std::net::Ipv4Addr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::crypto::{AlgorithmCode, CryptoError, KeyPair, PublicKey, RecordSignature, SignatureParams, Timestamp};
use crate::handle::Handle;
use crate::record::{RData, RRset, SignedRRset, CANCELLED_ADDRESS};
use crate::zone::DEFAULT_TTL;

pub const CREATED_TXT: &str = "Created";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Claim,
    CreateChild,
    Assign,
    Delegate,
    Cancel,
    Transfer,
    Compromise,
}

impl Action {
    /// Actions whose effect can never be undone.
    pub fn is_irrevocable(self) -> bool {
        matches!(self, Action::Cancel | Action::Transfer | Action::Compromise)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Claim { key: PublicKey },
    CreateChild,
    Assign { address: Ipv4Addr, ttl: u32 },
    Delegate { target: Handle },
    Cancel,
    Transfer { target: Handle },
    Compromise {
        note: String,
        /// Signature over the accompanying cancellation record.
        cancel_signature: RecordSignature,
    },
}

impl Payload {
    pub fn action(&self) -> Action {
        match self {
            Payload::Claim { .. } => Action::Claim,
            Payload::CreateChild => Action::CreateChild,
            Payload::Assign { .. } => Action::Assign,
            Payload::Delegate { .. } => Action::Delegate,
            Payload::Cancel => Action::Cancel,
            Payload::Transfer { .. } => Action::Transfer,
            Payload::Compromise { .. } => Action::Compromise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateMessage {
    pub target: Handle,
    pub action: Action,
    pub payload: Payload,
    pub serial: u64,
    pub signature: RecordSignature,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "kebab-case")]
pub enum RejectReason {
    BadSignature,
    ExpiredSignature,
    SignatureNotYetValid,
    WrongAuthority,
    HandleCancelled,
    HandleTransferred,
    UnknownParent,
    UnknownHandle,
    UnclaimedApex,
    KeyLabelMismatch,
    AlreadyClaimedWithDifferentKey,
    StaleSerial,
    Malformed(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let RejectReason::Malformed(detail) = self {
            return write!(f, "malformed: {detail}");
        }
        let v = serde_json::to_value(self).expect("serializable");
        f.write_str(v["reason"].as_str().expect("tag"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected { reason: RejectReason },
}

impl Verdict {
    pub fn rejected(reason: RejectReason) -> Self {
        Verdict::Rejected { reason }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }

    pub fn reason(&self) -> Option<&RejectReason> {
        match self {
            Verdict::Accepted => None,
            Verdict::Rejected { reason } => Some(reason),
        }
    }

    /// Short tag used in the update log.
    pub fn tag(&self) -> String {
        match self {
            Verdict::Accepted => "accepted".into(),
            Verdict::Rejected { reason } => match reason {
                RejectReason::Malformed(_) => "rejected:malformed".into(),
                other => format!("rejected:{other}"),
            },
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Accepted => f.write_str("accepted"),
            Verdict::Rejected { reason } => write!(f, "rejected ({reason})"),
        }
    }
}

/// Formats a compromise announcement.
pub fn compromise_text(date: NaiveDate) -> String {
    format!("Compromised {}", date.format("%Y-%m-%d"))
}

/// Reads a compromise announcement, in ISO form or the older `dd/mm/yyyy`.
pub fn parse_compromise_text(text: &str) -> Option<NaiveDate> {
    let date = text.strip_prefix("Compromised ")?.trim();
    NaiveDate::parse_from_str(date, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(date, "%d/%m/%Y"))
        .ok()
}

/// The cancellation record set for `target`.
pub fn cancellation_rrset(target: &Handle) -> RRset {
    RRset::new(target.name(), DEFAULT_TTL, vec![RData::A(CANCELLED_ADDRESS)]).expect("one record")
}

impl UpdateMessage {
    /// The record set the primary signature covers. `None` if the payload
    /// cannot be expressed as records.
    pub fn signed_rrset(&self) -> Option<RRset> {
        let owner = self.target.name();
        let (ttl, rdata) = match &self.payload {
            Payload::Claim { key } => (DEFAULT_TTL, RData::Key(key.clone())),
            Payload::CreateChild => (DEFAULT_TTL, RData::Txt(CREATED_TXT.into())),
            Payload::Assign { address, ttl } => (*ttl, RData::A(*address)),
            Payload::Delegate { target } => (DEFAULT_TTL, RData::Dname(target.name())),
            Payload::Cancel => (DEFAULT_TTL, RData::A(CANCELLED_ADDRESS)),
            Payload::Transfer { target } => (DEFAULT_TTL, RData::Transfer(target.name())),
            Payload::Compromise { note, .. } => (DEFAULT_TTL, RData::Txt(note.clone())),
        };
        RRset::new(owner, ttl, vec![rdata]).ok()
    }

    /// Every signed set this message installs: the primary set, plus the
    /// cancellation for a compromise.
    pub fn signed_rrsets(&self) -> Option<Vec<SignedRRset>> {
        let primary = SignedRRset {
            rrset: self.signed_rrset()?,
            signature: Some(self.signature.clone()),
        };
        let mut out = vec![primary];
        if let Payload::Compromise { cancel_signature, .. } = &self.payload {
            out.push(SignedRRset {
                rrset: cancellation_rrset(&self.target),
                signature: Some(cancel_signature.clone()),
            });
        }
        Some(out)
    }

    /// Canonical bytes for logging and comparison.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

/// Builds and signs update messages on behalf of one apex key.
#[derive(Debug)]
pub struct Signer<'a> {
    pub key: &'a KeyPair,
    pub inception: Timestamp,
    pub lifetime_secs: i64,
}

impl<'a> Signer<'a> {
    pub fn new(key: &'a KeyPair, inception: Timestamp, lifetime_secs: i64) -> Self {
        Signer {
            key,
            inception,
            lifetime_secs,
        }
    }

    fn sign_set(&self, rrset: &RRset, signer: &Handle, serial: u64) -> Result<RecordSignature, CryptoError> {
        let params = SignatureParams::for_rrset(
            rrset,
            self.key.public.algorithm(),
            signer.apex().name(),
            self.inception,
            self.lifetime_secs,
            serial,
        );
        crate::crypto::sign_rrset(rrset, &self.key.secret, params)
    }

    /// Signs `payload` for `target`. For a compromise, `payload`'s
    /// cancellation signature is filled in here.
    pub fn message(&self, target: &Handle, payload: Payload, serial: u64) -> Result<UpdateMessage, CryptoError> {
        let payload = match payload {
            Payload::Compromise { note, .. } => {
                let cancel = self.sign_set(&cancellation_rrset(target), target, serial)?;
                Payload::Compromise {
                    note,
                    cancel_signature: cancel,
                }
            }
            other => other,
        };
        let mut msg = UpdateMessage {
            target: target.clone(),
            action: payload.action(),
            payload,
            serial,
            signature: placeholder_signature(),
        };
        let rrset = msg
            .signed_rrset()
            .ok_or(CryptoError::ParamsMismatch("payload has no record form"))?;
        msg.signature = self.sign_set(&rrset, target, serial)?;
        Ok(msg)
    }

    pub fn claim(&self, apex: &Handle) -> Result<UpdateMessage, CryptoError> {
        self.message(apex, Payload::Claim { key: self.key.public.clone() }, 1)
    }

    pub fn compromise(&self, target: &Handle, date: NaiveDate, serial: u64) -> Result<UpdateMessage, CryptoError> {
        self.message(
            target,
            Payload::Compromise {
                note: compromise_text(date),
                cancel_signature: placeholder_signature(),
            },
            serial,
        )
    }
}

/// An empty signature, replaced before a message leaves [`Signer`].
pub fn placeholder_signature() -> RecordSignature {
    RecordSignature {
        params: SignatureParams {
            algorithm: AlgorithmCode(0),
            label_count: 0,
            original_ttl: 0,
            expiration: Timestamp::from_unix(0),
            inception: Timestamp::from_unix(0),
            serial: 0,
            signer: crate::name::Name::root(),
        },
        signature_bytes: Vec::new(),
    }
}
