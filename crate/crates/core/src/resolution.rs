//! Resolution results and the per-handle decision rule shared by the server
//! walk and the client's independent replay.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handle::Handle;
use crate::record::{RData, RType, SignedRRset};

pub const DEFAULT_DEPTH_BUDGET: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "address", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Address(Ipv4Addr),
    Cancelled,
    Compromised,
    TransferredAndAddress(Ipv4Addr),
    NotFound,
}

impl Outcome {
    pub fn address(self) -> Option<Ipv4Addr> {
        match self {
            Outcome::Address(a) | Outcome::TransferredAndAddress(a) => Some(a),
            _ => None,
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Address(a) => write!(f, "ADDRESS({a})"),
            Outcome::Cancelled => f.write_str("CANCELLED"),
            Outcome::Compromised => f.write_str("COMPROMISED"),
            Outcome::TransferredAndAddress(a) => write!(f, "TRANSFERRED_AND_ADDRESS({a})"),
            Outcome::NotFound => f.write_str("NOT_FOUND"),
        }
    }
}

/// One DNAME rewrite performed during a walk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rewrite {
    pub from: Handle,
    pub to: Handle,
    pub transfer: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub queried: Handle,
    pub outcome: Outcome,
    /// Handle at which the walk stopped, after all rewrites.
    pub resolved: Handle,
    pub rewrites: Vec<Rewrite>,
    pub evidence: Vec<SignedRRset>,
    pub transfer_notices: Vec<SignedRRset>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum ResolveError {
    #[error("delegation loop at {at}")]
    DelegationLoop { at: String },
    #[error("more than {budget} rewrites")]
    DepthExceeded { budget: usize },
    #[error("rewrite produced an invalid handle: {detail}")]
    BadRewrite { detail: String },
}

/// Records visible at one handle, as served.
#[derive(Debug, Default, Clone, Copy)]
pub struct LevelRecords<'a> {
    pub a: Option<&'a SignedRRset>,
    pub dname: Option<&'a SignedRRset>,
    pub txt: Option<&'a SignedRRset>,
}

/// What the walk does at one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Compromised,
    Cancelled,
    Rewrite { target: Handle, transfer: bool },
    Address(Ipv4Addr),
    /// Nothing decisive here; keep descending (or, at the leaf, no address).
    Continue,
}

/// True for a TXT set announcing a key compromise.
pub fn is_compromise_txt(set: &SignedRRset) -> bool {
    set.rtype() == RType::Txt
        && set
            .rrset
            .rdata()
            .iter()
            .any(|r| matches!(r, RData::Txt(t) if t.starts_with("Compromised")))
}

fn dname_target(set: &SignedRRset, root_suffix: &str) -> Option<(Handle, bool)> {
    let (name, transfer) = match set.rrset.rdata() {
        [RData::Dname(n)] => (n, false),
        [RData::Transfer(n)] => (n, true),
        _ => return None,
    };
    Handle::parse(&name.to_fqdn(), root_suffix)
        .ok()
        .map(|h| (h, transfer))
}

/// The decision rule at one level of the walk.
///
/// Compromise wins everywhere. Above the leaf a transfer is followed before
/// a cancellation is reported, so a cancelled, transferred ancestor still
/// forwards its descendants. At the queried handle itself the cancellation
/// wins, so an old apex reports its own status.
pub fn decide(level: LevelRecords<'_>, at_leaf: bool, root_suffix: &str) -> Step {
    if level.txt.is_some_and(is_compromise_txt) {
        return Step::Compromised;
    }
    let cancelled = level.a.is_some_and(SignedRRset::is_cancellation);
    let dname = level.dname.and_then(|d| dname_target(d, root_suffix));
    let transfer = dname.as_ref().filter(|(_, t)| *t);
    if !at_leaf {
        if let Some((target, _)) = transfer {
            return Step::Rewrite {
                target: target.clone(),
                transfer: true,
            };
        }
    }
    if cancelled {
        return Step::Cancelled;
    }
    if let Some((target, transfer)) = dname {
        return Step::Rewrite { target, transfer };
    }
    if at_leaf {
        if let Some(addr) = level.a.and_then(|a| a.rrset.rdata().first()).and_then(RData::as_address) {
            return Step::Address(addr);
        }
    }
    Step::Continue
}
