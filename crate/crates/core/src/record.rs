//! Resource records and signed record sets.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    sign_rrset, verify_rrset, CryptoError, PublicKey, RecordSignature, SecretKey, SignatureParams,
    Timestamp, Verification,
};
use crate::name::Name;

/// Address that encodes an irrevocable cancellation.
pub const CANCELLED_ADDRESS: Ipv4Addr = Ipv4Addr::UNSPECIFIED;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("record set is empty")]
    Empty,
    #[error("record set mixes types {0} and {1}")]
    MixedTypes(RType, RType),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RType {
    A,
    Ns,
    Soa,
    Txt,
    Key,
    Nxt,
    Dname,
}

impl RType {
    pub const ALL: [RType; 7] = [
        RType::A,
        RType::Ns,
        RType::Soa,
        RType::Txt,
        RType::Key,
        RType::Nxt,
        RType::Dname,
    ];

    pub fn code(self) -> u16 {
        match self {
            RType::A => 1,
            RType::Ns => 2,
            RType::Soa => 6,
            RType::Txt => 16,
            RType::Key => 25,
            RType::Nxt => 30,
            RType::Dname => 39,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            RType::A => "A",
            RType::Ns => "NS",
            RType::Soa => "SOA",
            RType::Txt => "TXT",
            RType::Key => "KEY",
            RType::Nxt => "NXT",
            RType::Dname => "DNAME",
        }
    }
}

impl fmt::Display for RType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for RType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RType::ALL
            .into_iter()
            .find(|t| t.mnemonic().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown record type {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Soa {
    pub mname: Name,
    pub rname: Name,
    pub serial: u32,
    pub refresh: u32,
    pub retry: u32,
    pub expire: u32,
    pub minimum: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum RData {
    A(Ipv4Addr),
    Ns(Name),
    Soa(Soa),
    Txt(String),
    Key(PublicKey),
    Nxt { next: Name, types: BTreeSet<RType> },
    /// Temporary delegation.
    Dname(Name),
    /// Irrevocable transfer; a DNAME whose signed form carries the transfer
    /// marker.
    Transfer(Name),
}

impl RData {
    pub fn rtype(&self) -> RType {
        match self {
            RData::A(_) => RType::A,
            RData::Ns(_) => RType::Ns,
            RData::Soa(_) => RType::Soa,
            RData::Txt(_) => RType::Txt,
            RData::Key(_) => RType::Key,
            RData::Nxt { .. } => RType::Nxt,
            RData::Dname(_) | RData::Transfer(_) => RType::Dname,
        }
    }

    /// Wire-style octets used for signing and for ordering within a set.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            RData::A(addr) => out.extend_from_slice(&addr.octets()),
            RData::Ns(name) => out.extend(name.to_canonical_wire()),
            RData::Soa(soa) => {
                out.extend(soa.mname.to_canonical_wire());
                out.extend(soa.rname.to_canonical_wire());
                for v in [soa.serial, soa.refresh, soa.retry, soa.expire, soa.minimum] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            }
            RData::Txt(text) => {
                let bytes = text.as_bytes();
                if bytes.is_empty() {
                    out.push(0);
                }
                for chunk in bytes.chunks(255) {
                    out.push(chunk.len() as u8);
                    out.extend_from_slice(chunk);
                }
            }
            RData::Key(key) => out.extend_from_slice(key.key_bytes()),
            RData::Nxt { next, types } => {
                out.extend(next.to_canonical_wire());
                for t in types {
                    out.extend_from_slice(&t.code().to_be_bytes());
                }
            }
            RData::Dname(target) => {
                out.extend(target.to_canonical_wire());
                out.push(0);
            }
            RData::Transfer(target) => {
                out.extend(target.to_canonical_wire());
                out.push(1);
            }
        }
        out
    }

    pub fn as_address(&self) -> Option<Ipv4Addr> {
        match self {
            RData::A(a) => Some(*a),
            _ => None,
        }
    }
}

/// One record, as listed in a zone file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceRecord {
    pub owner: Name,
    pub ttl: u32,
    pub rdata: RData,
}

impl ResourceRecord {
    pub fn rtype(&self) -> RType {
        self.rdata.rtype()
    }
}

/// Records sharing owner, type and TTL, kept sorted by canonical RDATA and
/// free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RRset {
    owner: Name,
    ttl: u32,
    rtype: RType,
    rdata: Vec<RData>,
}

impl RRset {
    pub fn new(owner: Name, ttl: u32, rdata: Vec<RData>) -> Result<Self, RecordError> {
        let rtype = rdata.first().ok_or(RecordError::Empty)?.rtype();
        if let Some(other) = rdata.iter().map(RData::rtype).find(|t| *t != rtype) {
            return Err(RecordError::MixedTypes(rtype, other));
        }
        let mut keyed: Vec<(Vec<u8>, RData)> =
            rdata.into_iter().map(|r| (r.canonical_bytes(), r)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        keyed.dedup_by(|a, b| a.0 == b.0);
        Ok(RRset {
            owner,
            ttl,
            rtype,
            rdata: keyed.into_iter().map(|(_, r)| r).collect(),
        })
    }

    pub fn owner(&self) -> &Name {
        &self.owner
    }

    pub fn ttl(&self) -> u32 {
        self.ttl
    }

    pub fn rtype(&self) -> RType {
        self.rtype
    }

    pub fn rdata(&self) -> &[RData] {
        &self.rdata
    }

    pub fn records(&self) -> impl Iterator<Item = ResourceRecord> + '_ {
        self.rdata.iter().map(move |r| ResourceRecord {
            owner: self.owner.clone(),
            ttl: self.ttl,
            rdata: r.clone(),
        })
    }

    /// Concatenated canonical RDATA of every member, length-prefixed.
    pub fn canonical_rdata(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.rdata {
            let bytes = r.canonical_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            out.extend(bytes);
        }
        out
    }

    /// The octets a signature covers: the parameters, then each record in
    /// canonical order as owner, type, class, original TTL and
    /// length-prefixed RDATA.
    pub fn signing_input(&self, params: &SignatureParams) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.rtype.code().to_be_bytes());
        out.push(params.algorithm.0);
        out.push(params.label_count);
        out.extend_from_slice(&params.original_ttl.to_be_bytes());
        out.extend_from_slice(&params.expiration.unix().to_be_bytes());
        out.extend_from_slice(&params.inception.unix().to_be_bytes());
        out.extend_from_slice(&params.serial.to_be_bytes());
        out.extend(params.signer.to_canonical_wire());
        let owner = self.owner.to_canonical_wire();
        for r in &self.rdata {
            let rdata = r.canonical_bytes();
            out.extend_from_slice(&owner);
            out.extend_from_slice(&self.rtype.code().to_be_bytes());
            out.extend_from_slice(&1u16.to_be_bytes());
            out.extend_from_slice(&params.original_ttl.to_be_bytes());
            out.extend_from_slice(&(rdata.len() as u32).to_be_bytes());
            out.extend(rdata);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedRRset {
    pub rrset: RRset,
    pub signature: Option<RecordSignature>,
}

impl SignedRRset {
    pub fn unsigned(rrset: RRset) -> Self {
        SignedRRset {
            rrset,
            signature: None,
        }
    }

    pub fn sign(
        rrset: RRset,
        secret: &SecretKey,
        params: SignatureParams,
    ) -> Result<Self, CryptoError> {
        let signature = sign_rrset(&rrset, secret, params)?;
        Ok(SignedRRset {
            rrset,
            signature: Some(signature),
        })
    }

    pub fn owner(&self) -> &Name {
        self.rrset.owner()
    }

    pub fn rtype(&self) -> RType {
        self.rrset.rtype()
    }

    pub fn serial(&self) -> u64 {
        self.signature.as_ref().map_or(0, |s| s.params.serial)
    }

    /// `None` for unsigned sets.
    pub fn verify(&self, key: &PublicKey, now: Timestamp) -> Option<Verification> {
        self.signature
            .as_ref()
            .map(|sig| verify_rrset(&self.rrset, sig, key, now))
    }

    /// Sort key for merging competing versions of one set: serial, then
    /// canonical RDATA, then the signature octets so that ties are still
    /// decided deterministically.
    pub fn merge_key(&self) -> (u64, Vec<u8>, Vec<u8>) {
        let sig = self
            .signature
            .as_ref()
            .map(|s| {
                let mut v = s.params.expiration.unix().to_be_bytes().to_vec();
                v.extend_from_slice(&s.params.inception.unix().to_be_bytes());
                v.extend_from_slice(&s.signature_bytes);
                v
            })
            .unwrap_or_default();
        (self.serial(), self.rrset.canonical_rdata(), sig)
    }

    pub fn is_cancellation(&self) -> bool {
        self.rtype() == RType::A && self.rrset.rdata() == [RData::A(CANCELLED_ADDRESS)]
    }

    pub fn is_transfer(&self) -> bool {
        matches!(self.rrset.rdata(), [RData::Transfer(_)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> Name {
        Name::parse(s).unwrap()
    }

    #[test]
    fn rrset_sorted_and_deduped() {
        let set = RRset::new(
            n("x.org"),
            60,
            vec![
                RData::Ns(n("ns2.x.org")),
                RData::Ns(n("ns1.x.org")),
                RData::Ns(n("NS1.x.org")),
            ],
        )
        .unwrap();
        assert_eq!(set.rdata(), &[RData::Ns(n("ns1.x.org")), RData::Ns(n("ns2.x.org"))]);
    }

    #[test]
    fn rrset_rejects_mixed_or_empty() {
        assert_eq!(RRset::new(n("x"), 1, vec![]), Err(RecordError::Empty));
        assert_eq!(
            RRset::new(n("x"), 1, vec![RData::A(Ipv4Addr::LOCALHOST), RData::Txt("t".into())]),
            Err(RecordError::MixedTypes(RType::A, RType::Txt))
        );
    }

    #[test]
    fn delegation_and_transfer_differ_in_signed_bytes() {
        let t = n("h0k427.x.org");
        assert_ne!(
            RData::Dname(t.clone()).canonical_bytes(),
            RData::Transfer(t.clone()).canonical_bytes()
        );
        assert_eq!(RData::Transfer(t).rtype(), RType::Dname);
    }

    #[test]
    fn long_txt_is_chunked() {
        let bytes = RData::Txt("a".repeat(300)).canonical_bytes();
        assert_eq!(bytes.len(), 302);
        assert_eq!(bytes[0], 255);
        assert_eq!(bytes[256], 45);
    }

    #[test]
    fn rtype_parse() {
        assert_eq!("dname".parse::<RType>().unwrap(), RType::Dname);
        assert!("MX".parse::<RType>().is_err());
    }
}
