//! Keys, the key-to-handle correspondence rule, and record-set signatures.
//!
//! A public key's canonical encoding is its KEY record RDATA (flags,
//! protocol, algorithm, key material). A PK label carries the low-order hex
//! digits of the SHA-1 hash of that encoding.

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::{DateTime, NaiveDateTime, Utc};
use rand::rngs::OsRng;
use rsa::pkcs1::{DecodeRsaPrivateKey, EncodeRsaPrivateKey};
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::traits::PublicKeyParts;
use rsa::{BigUint, RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::handle::{HandleLabel, PkLabel, MAX_SUFFIX_LEN, MIN_SUFFIX_LEN};
use crate::name::Name;
use crate::record::RRset;

/// Modulus size for generated RSA keys.
pub const RSA_BITS: usize = 1024;

/// KEY flags for a zone key, as in `KEY 256 3 5`.
pub const KEY_FLAGS: u16 = 256;
pub const KEY_PROTOCOL: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("unsupported algorithm code {0}")]
    UnsupportedAlgorithm(u8),
    #[error("suffix length {0} outside 14..=40")]
    SuffixLength(usize),
    #[error("label is not a PK label")]
    WrongLabelKind,
    #[error("signature parameters do not match record set: {0}")]
    ParamsMismatch(&'static str),
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("key file: {0}")]
    KeyFile(String),
    #[error("signing failed: {0}")]
    Signing(String),
}

/// DNS KEY/SIG algorithm number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlgorithmCode(pub u8);

impl AlgorithmCode {
    pub const RSA_SHA1: AlgorithmCode = AlgorithmCode(5);
    pub const ED25519: AlgorithmCode = AlgorithmCode(15);

    /// Codes this build can generate keys and signatures for.
    pub const REGISTRY: [AlgorithmCode; 2] = [Self::RSA_SHA1, Self::ED25519];

    pub fn is_supported(self) -> bool {
        Self::REGISTRY.contains(&self)
    }

    pub fn ensure_supported(self) -> Result<Self, CryptoError> {
        if self.is_supported() {
            Ok(self)
        } else {
            Err(CryptoError::UnsupportedAlgorithm(self.0))
        }
    }
}

impl fmt::Display for AlgorithmCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// UTC second-resolution time, rendered as `YYYYMMDDHHMMSS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn from_unix(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub fn unix(self) -> i64 {
        self.0
    }

    pub fn now() -> Self {
        Timestamp(Utc::now().timestamp())
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        if text.len() != 14 || !text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad timestamp {text:?}"));
        }
        NaiveDateTime::parse_from_str(text, "%Y%m%d%H%M%S")
            .map(|t| Timestamp(t.and_utc().timestamp()))
            .map_err(|e| format!("bad timestamp {text:?}: {e}"))
    }

    pub fn plus_secs(self, secs: i64) -> Self {
        Timestamp(self.0 + secs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::from_timestamp(self.0, 0) {
            Some(t) => write!(f, "{}", t.format("%Y%m%d%H%M%S")),
            None => write!(f, "@{}", self.0),
        }
    }
}

impl FromStr for Timestamp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Timestamp::parse(s)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Timestamp::parse(&text).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod b64 {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(deserializer)?;
        B64.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}

/// A public key in canonical KEY RDATA form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PublicKey {
    algorithm: AlgorithmCode,
    #[serde(with = "b64")]
    key_bytes: Vec<u8>,
}

impl PublicKey {
    /// Wraps raw key material (RSA per RFC 3110, Ed25519 as 32 octets) with
    /// the standard zone-key flags and protocol.
    pub fn from_material(algorithm: AlgorithmCode, material: &[u8]) -> Self {
        let mut key_bytes = Vec::with_capacity(material.len() + 4);
        key_bytes.extend_from_slice(&KEY_FLAGS.to_be_bytes());
        key_bytes.push(KEY_PROTOCOL);
        key_bytes.push(algorithm.0);
        key_bytes.extend_from_slice(material);
        PublicKey {
            algorithm,
            key_bytes,
        }
    }

    /// Parses canonical KEY RDATA.
    pub fn from_rdata(key_bytes: Vec<u8>) -> Result<Self, CryptoError> {
        if key_bytes.len() < 5 {
            return Err(CryptoError::MalformedKey("KEY rdata too short".into()));
        }
        Ok(PublicKey {
            algorithm: AlgorithmCode(key_bytes[3]),
            key_bytes,
        })
    }

    pub fn algorithm(&self) -> AlgorithmCode {
        self.algorithm
    }

    pub fn flags(&self) -> u16 {
        u16::from_be_bytes([self.key_bytes[0], self.key_bytes[1]])
    }

    pub fn protocol(&self) -> u8 {
        self.key_bytes[2]
    }

    pub fn material(&self) -> &[u8] {
        &self.key_bytes[4..]
    }

    /// The canonical encoding that [`key_hash_hex`] hashes.
    pub fn key_bytes(&self) -> &[u8] {
        &self.key_bytes
    }

    fn rsa(&self) -> Result<RsaPublicKey, CryptoError> {
        let m = self.material();
        let bad = || CryptoError::MalformedKey("truncated RSA key".into());
        let (e_len, rest) = match m.first() {
            Some(0) if m.len() >= 3 => (u16::from_be_bytes([m[1], m[2]]) as usize, &m[3..]),
            Some(&n) if n != 0 => (n as usize, &m[1..]),
            _ => return Err(bad()),
        };
        if rest.len() <= e_len {
            return Err(bad());
        }
        let (e, n) = rest.split_at(e_len);
        RsaPublicKey::new(BigUint::from_bytes_be(n), BigUint::from_bytes_be(e))
            .map_err(|e| CryptoError::MalformedKey(e.to_string()))
    }

    fn ed25519(&self) -> Result<ed25519_dalek::VerifyingKey, CryptoError> {
        let bytes: [u8; 32] = self
            .material()
            .try_into()
            .map_err(|_| CryptoError::MalformedKey("Ed25519 key is not 32 octets".into()))?;
        ed25519_dalek::VerifyingKey::from_bytes(&bytes)
            .map_err(|e| CryptoError::MalformedKey(e.to_string()))
    }

    fn verify_raw(&self, message: &[u8], signature: &[u8]) -> bool {
        match self.algorithm {
            AlgorithmCode::RSA_SHA1 => {
                let Ok(key) = self.rsa() else { return false };
                let Ok(sig) = rsa::pkcs1v15::Signature::try_from(signature) else {
                    return false;
                };
                rsa::pkcs1v15::VerifyingKey::<Sha1>::new(key)
                    .verify(message, &sig)
                    .is_ok()
            }
            AlgorithmCode::ED25519 => {
                let Ok(key) = self.ed25519() else { return false };
                let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
                    return false;
                };
                key.verify(message, &sig).is_ok()
            }
            _ => false,
        }
    }
}

fn rsa_material(key: &RsaPublicKey) -> Vec<u8> {
    let e = key.e().to_bytes_be();
    let n = key.n().to_bytes_be();
    let mut out = Vec::with_capacity(e.len() + n.len() + 3);
    if e.len() <= 255 {
        out.push(e.len() as u8);
    } else {
        out.push(0);
        out.extend_from_slice(&(e.len() as u16).to_be_bytes());
    }
    out.extend_from_slice(&e);
    out.extend_from_slice(&n);
    out
}

#[derive(Clone)]
pub enum SecretKey {
    RsaSha1(Box<RsaPrivateKey>),
    Ed25519(Box<ed25519_dalek::SigningKey>),
}

impl SecretKey {
    pub fn algorithm(&self) -> AlgorithmCode {
        match self {
            SecretKey::RsaSha1(_) => AlgorithmCode::RSA_SHA1,
            SecretKey::Ed25519(_) => AlgorithmCode::ED25519,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        match self {
            SecretKey::RsaSha1(k) => {
                PublicKey::from_material(AlgorithmCode::RSA_SHA1, &rsa_material(&k.to_public_key()))
            }
            SecretKey::Ed25519(k) => {
                PublicKey::from_material(AlgorithmCode::ED25519, k.verifying_key().as_bytes())
            }
        }
    }

    fn sign_raw(&self, message: &[u8]) -> Result<Vec<u8>, CryptoError> {
        match self {
            SecretKey::RsaSha1(k) => {
                let signer = rsa::pkcs1v15::SigningKey::<Sha1>::new((**k).clone());
                signer
                    .try_sign(message)
                    .map(|s| s.to_vec())
                    .map_err(|e| CryptoError::Signing(e.to_string()))
            }
            SecretKey::Ed25519(k) => Ok(k.sign(message).to_bytes().to_vec()),
        }
    }

    fn to_bytes(&self) -> Result<Vec<u8>, CryptoError> {
        match self {
            SecretKey::RsaSha1(k) => k
                .to_pkcs1_der()
                .map(|d| d.as_bytes().to_vec())
                .map_err(|e| CryptoError::KeyFile(e.to_string())),
            SecretKey::Ed25519(k) => Ok(k.to_bytes().to_vec()),
        }
    }

    fn from_bytes(algorithm: AlgorithmCode, bytes: &[u8]) -> Result<Self, CryptoError> {
        match algorithm {
            AlgorithmCode::RSA_SHA1 => RsaPrivateKey::from_pkcs1_der(bytes)
                .map(|k| SecretKey::RsaSha1(Box::new(k)))
                .map_err(|e| CryptoError::KeyFile(e.to_string())),
            AlgorithmCode::ED25519 => {
                let seed: [u8; 32] = bytes
                    .try_into()
                    .map_err(|_| CryptoError::KeyFile("Ed25519 secret is not 32 octets".into()))?;
                Ok(SecretKey::Ed25519(Box::new(ed25519_dalek::SigningKey::from_bytes(&seed))))
            }
            other => Err(CryptoError::UnsupportedAlgorithm(other.0)),
        }
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey(alg {})", self.algorithm())
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

impl KeyPair {
    pub fn generate(algorithm: AlgorithmCode) -> Result<Self, CryptoError> {
        let secret = match algorithm.ensure_supported()? {
            AlgorithmCode::RSA_SHA1 => {
                let key = RsaPrivateKey::new(&mut OsRng, RSA_BITS)
                    .map_err(|e| CryptoError::Signing(e.to_string()))?;
                SecretKey::RsaSha1(Box::new(key))
            }
            _ => SecretKey::Ed25519(Box::new(ed25519_dalek::SigningKey::generate(&mut OsRng))),
        };
        Ok(KeyPair {
            public: secret.public_key(),
            secret,
        })
    }

    /// Three lines: algorithm code, base64 public key, base64 secret.
    pub fn to_secret_file(&self) -> Result<String, CryptoError> {
        Ok(format!(
            "{}\n{}\n{}\n",
            self.public.algorithm,
            B64.encode(&self.public.key_bytes),
            B64.encode(self.secret.to_bytes()?)
        ))
    }

    pub fn from_secret_file(text: &str) -> Result<Self, CryptoError> {
        let (public, mut lines) = read_public_lines(text)?;
        let secret_line = lines
            .next()
            .ok_or_else(|| CryptoError::KeyFile("missing secret line".into()))?;
        let secret_bytes = B64
            .decode(secret_line.trim())
            .map_err(|e| CryptoError::KeyFile(e.to_string()))?;
        let secret = SecretKey::from_bytes(public.algorithm, &secret_bytes)?;
        if secret.public_key() != public {
            return Err(CryptoError::KeyFile("secret does not match public key".into()));
        }
        Ok(KeyPair { public, secret })
    }
}

/// Two lines: algorithm code and base64 public key.
pub fn public_key_file(key: &PublicKey) -> String {
    format!("{}\n{}\n", key.algorithm, B64.encode(&key.key_bytes))
}

pub fn parse_public_key_file(text: &str) -> Result<PublicKey, CryptoError> {
    read_public_lines(text).map(|(k, _)| k)
}

fn read_public_lines(text: &str) -> Result<(PublicKey, std::str::Lines<'_>), CryptoError> {
    let mut lines = text.lines();
    let alg: u8 = lines
        .next()
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| CryptoError::KeyFile("bad algorithm line".into()))?;
    let public = lines
        .next()
        .ok_or_else(|| CryptoError::KeyFile("missing public key line".into()))?;
    let bytes = B64
        .decode(public.trim())
        .map_err(|e| CryptoError::KeyFile(e.to_string()))?;
    let key = PublicKey::from_rdata(bytes)?;
    if key.algorithm.0 != alg {
        return Err(CryptoError::KeyFile("algorithm line disagrees with key".into()));
    }
    Ok((key, lines))
}

/// SHA-1 of the canonical key encoding as 40 uppercase hex digits.
pub fn key_hash_hex(key: &PublicKey) -> String {
    Sha1::digest(&key.key_bytes)
        .iter()
        .map(|b| format!("{b:02X}"))
        .collect()
}

/// The PK label for `key` using the last `suffix_len` hash digits.
pub fn derive_pk_label(key: &PublicKey, suffix_len: usize) -> Result<PkLabel, CryptoError> {
    if !(MIN_SUFFIX_LEN..=MAX_SUFFIX_LEN).contains(&suffix_len) {
        return Err(CryptoError::SuffixLength(suffix_len));
    }
    let hash = key_hash_hex(key);
    PkLabel::new(key.algorithm.0, &hash[hash.len() - suffix_len..])
        .map_err(|_| CryptoError::SuffixLength(suffix_len))
}

/// Whether `label` names `key`: same algorithm, and the label's suffix is a
/// suffix of the key hash.
pub fn verify_key_matches_label(key: &PublicKey, label: &HandleLabel) -> Result<bool, CryptoError> {
    let pk = label.as_pk().ok_or(CryptoError::WrongLabelKind)?;
    Ok(pk_label_matches(key, pk))
}

pub fn pk_label_matches(key: &PublicKey, label: &PkLabel) -> bool {
    label.algorithm() == key.algorithm.0 && key_hash_hex(key).ends_with(label.key_suffix())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignatureParams {
    pub algorithm: AlgorithmCode,
    pub label_count: u8,
    pub original_ttl: u32,
    pub expiration: Timestamp,
    pub inception: Timestamp,
    /// Signer-chosen sequence number for the signed set; higher replaces lower.
    pub serial: u64,
    pub signer: Name,
}

impl SignatureParams {
    /// Parameters for signing `rrset` on behalf of `signer`, valid from
    /// `inception` for `lifetime_secs`.
    pub fn for_rrset(
        rrset: &RRset,
        algorithm: AlgorithmCode,
        signer: Name,
        inception: Timestamp,
        lifetime_secs: i64,
        serial: u64,
    ) -> Self {
        SignatureParams {
            algorithm,
            label_count: rrset.owner().label_count() as u8,
            original_ttl: rrset.ttl(),
            expiration: inception.plus_secs(lifetime_secs),
            inception,
            serial,
            signer,
        }
    }

    fn check_against(&self, rrset: &RRset) -> Result<(), CryptoError> {
        if usize::from(self.label_count) != rrset.owner().label_count() {
            return Err(CryptoError::ParamsMismatch("label count"));
        }
        if self.original_ttl != rrset.ttl() {
            return Err(CryptoError::ParamsMismatch("original ttl"));
        }
        if self.inception >= self.expiration {
            return Err(CryptoError::ParamsMismatch("inception not before expiration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecordSignature {
    pub params: SignatureParams,
    #[serde(with = "b64")]
    pub signature_bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigFailure {
    BadSignature,
    Expired,
    NotYetValid,
    ParamsMismatch,
}

impl fmt::Display for SigFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigFailure::BadSignature => "bad-signature",
            SigFailure::Expired => "expired",
            SigFailure::NotYetValid => "not-yet-valid",
            SigFailure::ParamsMismatch => "params-mismatch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    Accept,
    Reject(SigFailure),
}

impl Verification {
    pub fn is_accept(self) -> bool {
        self == Verification::Accept
    }
}

pub fn sign_rrset(
    rrset: &RRset,
    secret: &SecretKey,
    params: SignatureParams,
) -> Result<RecordSignature, CryptoError> {
    if params.algorithm != secret.algorithm() {
        return Err(CryptoError::ParamsMismatch("algorithm"));
    }
    params.check_against(rrset)?;
    let signature_bytes = secret.sign_raw(&rrset.signing_input(&params))?;
    Ok(RecordSignature {
        params,
        signature_bytes,
    })
}

/// Checks, in order: parameters against the set and key, the signature
/// itself, then the validity window `inception <= now < expiration`.
pub fn verify_rrset(
    rrset: &RRset,
    sig: &RecordSignature,
    key: &PublicKey,
    now: Timestamp,
) -> Verification {
    let params = &sig.params;
    if params.algorithm != key.algorithm || params.check_against(rrset).is_err() {
        return Verification::Reject(SigFailure::ParamsMismatch);
    }
    if !key.verify_raw(&rrset.signing_input(params), &sig.signature_bytes) {
        return Verification::Reject(SigFailure::BadSignature);
    }
    if now < params.inception {
        Verification::Reject(SigFailure::NotYetValid)
    } else if now >= params.expiration {
        Verification::Reject(SigFailure::Expired)
    } else {
        Verification::Accept
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::RData;
    use std::net::Ipv4Addr;

    fn ts(s: &str) -> Timestamp {
        Timestamp::parse(s).unwrap()
    }

    fn a_rrset() -> RRset {
        RRset::new(
            Name::parse("h0k2.h0k3.h1g5k0061A38F9A3540B9.handleroot.example.org").unwrap(),
            3600,
            vec![RData::A(Ipv4Addr::new(192, 253, 254, 63))],
        )
        .unwrap()
    }

    fn params_for(rrset: &RRset, kp: &KeyPair) -> SignatureParams {
        SignatureParams::for_rrset(
            rrset,
            kp.public.algorithm(),
            Name::parse("h1g5k0061A38F9A3540B9.handleroot.example.org").unwrap(),
            ts("20050401223412"),
            14 * 86400,
            1,
        )
    }

    #[test]
    fn timestamp_format() {
        let t = ts("20050415223412");
        assert_eq!(t.to_string(), "20050415223412");
        assert_eq!(t.plus_secs(1).to_string(), "20050415223413");
        assert!(Timestamp::parse("2005041522341").is_err());
        assert!(Timestamp::parse("20051315223412").is_err());
    }

    #[test]
    fn unsupported_algorithm() {
        assert_eq!(
            KeyPair::generate(AlgorithmCode(250)).unwrap_err(),
            CryptoError::UnsupportedAlgorithm(250)
        );
    }

    #[test]
    fn successive_keys_differ() {
        for alg in AlgorithmCode::REGISTRY {
            let a = KeyPair::generate(alg).unwrap();
            let b = KeyPair::generate(alg).unwrap();
            assert_ne!(a.public.key_bytes(), b.public.key_bytes());
            assert_ne!(key_hash_hex(&a.public), key_hash_hex(&b.public));
        }
    }

    #[test]
    fn key_rdata_layout() {
        let kp = KeyPair::generate(AlgorithmCode::RSA_SHA1).unwrap();
        assert_eq!(kp.public.flags(), 256);
        assert_eq!(kp.public.protocol(), 3);
        assert_eq!(kp.public.key_bytes()[3], 5);
        // Exponent 65537 is three octets behind a one-octet length.
        assert_eq!(&kp.public.material()[..4], &[3, 1, 0, 1]);
        assert_eq!(kp.public.material().len(), 4 + RSA_BITS / 8);
    }

    #[test]
    fn key_file_round_trip_preserves_hash() {
        for alg in AlgorithmCode::REGISTRY {
            let kp = KeyPair::generate(alg).unwrap();
            let text = kp.to_secret_file().unwrap();
            assert_eq!(text.lines().count(), 3);
            let back = KeyPair::from_secret_file(&text).unwrap();
            assert_eq!(key_hash_hex(&back.public), key_hash_hex(&kp.public));
            let public = parse_public_key_file(&public_key_file(&kp.public)).unwrap();
            assert_eq!(public, kp.public);
        }
    }

    #[test]
    fn hash_is_forty_uppercase_hex() {
        let kp = KeyPair::generate(AlgorithmCode::ED25519).unwrap();
        let h = key_hash_hex(&kp.public);
        assert_eq!(h.len(), 40);
        assert!(h.bytes().all(|b| b.is_ascii_digit() || (b'A'..=b'F').contains(&b)));
    }

    #[test]
    fn derive_label_bounds() {
        let kp = KeyPair::generate(AlgorithmCode::ED25519).unwrap();
        let hash = key_hash_hex(&kp.public);
        assert_eq!(derive_pk_label(&kp.public, 40).unwrap().key_suffix(), hash);
        assert_eq!(derive_pk_label(&kp.public, 16).unwrap().key_suffix(), &hash[24..]);
        assert_eq!(derive_pk_label(&kp.public, 13), Err(CryptoError::SuffixLength(13)));
        assert_eq!(derive_pk_label(&kp.public, 41), Err(CryptoError::SuffixLength(41)));
    }

    #[test]
    fn label_match_checks_algorithm_and_suffix() {
        let kp = KeyPair::generate(AlgorithmCode::RSA_SHA1).unwrap();
        let other = KeyPair::generate(AlgorithmCode::RSA_SHA1).unwrap();
        let label = HandleLabel::Pk(derive_pk_label(&kp.public, 20).unwrap());
        assert!(verify_key_matches_label(&kp.public, &label).unwrap());
        assert!(!verify_key_matches_label(&other.public, &label).unwrap());
        let wrong_alg = HandleLabel::pk(3, label.as_pk().unwrap().key_suffix()).unwrap();
        assert!(!verify_key_matches_label(&kp.public, &wrong_alg).unwrap());
        assert_eq!(
            verify_key_matches_label(&kp.public, &HandleLabel::ia("1").unwrap()),
            Err(CryptoError::WrongLabelKind)
        );
    }

    #[test]
    fn sign_verify_window() {
        for alg in AlgorithmCode::REGISTRY {
            let kp = KeyPair::generate(alg).unwrap();
            let rrset = a_rrset();
            let sig = sign_rrset(&rrset, &kp.secret, params_for(&rrset, &kp)).unwrap();
            let inside = ts("20050408223412");
            assert_eq!(verify_rrset(&rrset, &sig, &kp.public, inside), Verification::Accept);
            assert_eq!(
                verify_rrset(&rrset, &sig, &kp.public, ts("20050401223411")),
                Verification::Reject(SigFailure::NotYetValid)
            );
            assert_eq!(
                verify_rrset(&rrset, &sig, &kp.public, ts("20050415223412")),
                Verification::Reject(SigFailure::Expired)
            );
            assert_eq!(
                verify_rrset(&rrset, &sig, &kp.public, ts("20050415223413")),
                Verification::Reject(SigFailure::Expired)
            );
            let other = KeyPair::generate(alg).unwrap();
            assert_eq!(
                verify_rrset(&rrset, &sig, &other.public, inside),
                Verification::Reject(SigFailure::BadSignature)
            );
        }
    }

    #[test]
    fn params_mismatch_refused() {
        let kp = KeyPair::generate(AlgorithmCode::ED25519).unwrap();
        let rrset = a_rrset();
        let mut p = params_for(&rrset, &kp);
        p.label_count += 1;
        assert_eq!(
            sign_rrset(&rrset, &kp.secret, p).unwrap_err(),
            CryptoError::ParamsMismatch("label count")
        );
        let mut p = params_for(&rrset, &kp);
        p.algorithm = AlgorithmCode::RSA_SHA1;
        assert!(sign_rrset(&rrset, &kp.secret, p).is_err());

        let sig = sign_rrset(&rrset, &kp.secret, params_for(&rrset, &kp)).unwrap();
        let mut forged = sig.clone();
        forged.params.label_count = 2;
        assert_eq!(
            verify_rrset(&rrset, &forged, &kp.public, ts("20050408223412")),
            Verification::Reject(SigFailure::ParamsMismatch)
        );
    }
}
