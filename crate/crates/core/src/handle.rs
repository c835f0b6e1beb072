//! Handle labels and handles, and their rendering as domain names.
//!
//! Label grammar:
//!
//! ```text
//! h1g<alg>k<hex suffix>    public-key (PK) label
//! h0k<ordinal>             inherited-authority (IA) label
//! h2k<ordinal>             out-of-band-authenticated (OA) label
//! ```
//!
//! The algorithm code is decimal without leading zeroes (1..=255), the key
//! suffix is 14 to 40 hexadecimal digits with leading zeroes kept, and
//! ordinals are 1 to 60 decimal digits without leading zeroes.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::name::{Name, NameError, MAX_LABEL_LEN, MAX_NAME_LEN};

pub const MIN_SUFFIX_LEN: usize = 14;
pub const MAX_SUFFIX_LEN: usize = 40;
pub const MAX_ORDINAL_DIGITS: usize = 60;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("syntax error in handle label {0:?}")]
    Syntax(String),
    #[error("key suffix in {label:?} has {len} hex digits, expected 14..=40")]
    Length { label: String, len: usize },
    #[error("leading zero in {0:?}")]
    LeadingZero(String),
    #[error("algorithm code out of range in {0:?}")]
    Algorithm(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandleError {
    #[error("{name:?} is not under handle root {root:?}")]
    NotUnderRoot { name: String, root: String },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("bad handle structure: {0}")]
    Structure(&'static str),
    #[error("rendered handle too long: {0}")]
    TooLong(String),
    #[error(transparent)]
    Name(#[from] NameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelKind {
    Pk,
    Ia,
    Oa,
}

/// Public-key label: algorithm code plus the low-order hex digits of the
/// SHA-1 hash of the key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PkLabel {
    algorithm: u8,
    key_suffix: String,
}

impl PkLabel {
    pub fn new(algorithm: u8, key_suffix: &str) -> Result<Self, LabelError> {
        let render = || format!("h1g{algorithm}k{key_suffix}");
        if algorithm == 0 {
            return Err(LabelError::Algorithm(render()));
        }
        if key_suffix.is_empty() || !key_suffix.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(LabelError::Syntax(render()));
        }
        if !(MIN_SUFFIX_LEN..=MAX_SUFFIX_LEN).contains(&key_suffix.len()) {
            return Err(LabelError::Length {
                label: render(),
                len: key_suffix.len(),
            });
        }
        Ok(PkLabel {
            algorithm,
            key_suffix: key_suffix.to_ascii_uppercase(),
        })
    }

    pub fn algorithm(&self) -> u8 {
        self.algorithm
    }

    /// Uppercase hex digits.
    pub fn key_suffix(&self) -> &str {
        &self.key_suffix
    }
}

/// Decimal ordinal distinguishing sibling IA/OA handles.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ordinal(String);

impl Ordinal {
    pub fn new(digits: &str) -> Result<Self, LabelError> {
        if digits.is_empty()
            || digits.len() > MAX_ORDINAL_DIGITS
            || !digits.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(LabelError::Syntax(digits.to_string()));
        }
        if digits.len() > 1 && digits.starts_with('0') {
            return Err(LabelError::LeadingZero(digits.to_string()));
        }
        Ok(Ordinal(digits.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<u64> for Ordinal {
    fn from(n: u64) -> Self {
        Ordinal(n.to_string())
    }
}

impl fmt::Display for Ordinal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum HandleLabel {
    Pk(PkLabel),
    Ia(Ordinal),
    Oa(Ordinal),
}

impl HandleLabel {
    pub fn pk(algorithm: u8, key_suffix: &str) -> Result<Self, LabelError> {
        PkLabel::new(algorithm, key_suffix).map(HandleLabel::Pk)
    }

    pub fn ia(ordinal: &str) -> Result<Self, LabelError> {
        Ordinal::new(ordinal).map(HandleLabel::Ia)
    }

    pub fn oa(ordinal: &str) -> Result<Self, LabelError> {
        Ordinal::new(ordinal).map(HandleLabel::Oa)
    }

    pub fn kind(&self) -> LabelKind {
        match self {
            HandleLabel::Pk(_) => LabelKind::Pk,
            HandleLabel::Ia(_) => LabelKind::Ia,
            HandleLabel::Oa(_) => LabelKind::Oa,
        }
    }

    pub fn as_pk(&self) -> Option<&PkLabel> {
        match self {
            HandleLabel::Pk(pk) => Some(pk),
            _ => None,
        }
    }

    pub fn ordinal(&self) -> Option<&Ordinal> {
        match self {
            HandleLabel::Ia(o) | HandleLabel::Oa(o) => Some(o),
            HandleLabel::Pk(_) => None,
        }
    }

    pub fn encode(&self) -> String {
        match self {
            HandleLabel::Pk(pk) => format!("h1g{}k{}", pk.algorithm, pk.key_suffix),
            HandleLabel::Ia(o) => format!("h0k{o}"),
            HandleLabel::Oa(o) => format!("h2k{o}"),
        }
    }

    /// Parses one label. Letters and hex digits are accepted in either case;
    /// the result is canonical (lowercase markers, uppercase hex).
    pub fn parse(text: &str) -> Result<Self, LabelError> {
        let syntax = || LabelError::Syntax(text.to_string());
        let lower = text.to_ascii_lowercase();
        let bytes = lower.as_bytes();
        if bytes.len() < 4 || bytes[0] != b'h' {
            return Err(syntax());
        }
        match bytes[1] {
            b'1' => {
                if bytes[2] != b'g' {
                    return Err(syntax());
                }
                let rest = &text[3..];
                let k = rest.find(['k', 'K']).ok_or_else(syntax)?;
                let (alg, suffix) = (&rest[..k], &rest[k + 1..]);
                if alg.is_empty() || alg.len() > 3 || !alg.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(syntax());
                }
                if alg.len() > 1 && alg.starts_with('0') {
                    return Err(LabelError::LeadingZero(text.to_string()));
                }
                let algorithm: u8 = alg
                    .parse()
                    .map_err(|_| LabelError::Algorithm(text.to_string()))?;
                if suffix.is_empty() || !suffix.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(syntax());
                }
                PkLabel::new(algorithm, suffix)
                    .map(HandleLabel::Pk)
                    .map_err(|e| match e {
                        LabelError::Length { len, .. } => LabelError::Length {
                            label: text.to_string(),
                            len,
                        },
                        LabelError::Algorithm(_) => LabelError::Algorithm(text.to_string()),
                        _ => syntax(),
                    })
            }
            b'0' | b'2' => {
                if bytes[2] != b'k' {
                    return Err(syntax());
                }
                let ordinal = Ordinal::new(&text[3..]).map_err(|e| match e {
                    LabelError::LeadingZero(_) => LabelError::LeadingZero(text.to_string()),
                    _ => syntax(),
                })?;
                Ok(if bytes[1] == b'0' {
                    HandleLabel::Ia(ordinal)
                } else {
                    HandleLabel::Oa(ordinal)
                })
            }
            _ => Err(syntax()),
        }
    }
}

impl fmt::Display for HandleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl FromStr for HandleLabel {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HandleLabel::parse(s)
    }
}

/// A full handle: a PK apex label followed by IA/OA labels, anchored at a
/// root suffix such as `handleroot.example.org`.
///
/// The root suffix keeps the text it was parsed from (including a trailing
/// dot) so rendering is byte-identical; equality ignores its case.
#[derive(Clone)]
pub struct Handle {
    labels: Vec<HandleLabel>,
    root_suffix: String,
    root: Name,
}

impl Handle {
    /// `labels` are apex first.
    pub fn new(labels: Vec<HandleLabel>, root_suffix: &str) -> Result<Self, HandleError> {
        let root = Name::parse(root_suffix)?;
        match labels.first() {
            None => return Err(HandleError::Structure("handle has no labels")),
            Some(HandleLabel::Pk(_)) => {}
            Some(_) => return Err(HandleError::Structure("apex label is not a PK label")),
        }
        if labels[1..].iter().any(|l| l.kind() == LabelKind::Pk) {
            return Err(HandleError::Structure("PK label below the apex"));
        }
        let handle = Handle {
            labels,
            root_suffix: root_suffix.to_string(),
            root,
        };
        let fqdn = handle.to_fqdn();
        let bare = fqdn.strip_suffix('.').unwrap_or(&fqdn);
        if bare.len() > MAX_NAME_LEN {
            return Err(HandleError::TooLong(fqdn));
        }
        if let Some(l) = handle.labels.iter().find(|l| l.encode().len() > MAX_LABEL_LEN) {
            return Err(HandleError::TooLong(l.encode()));
        }
        Ok(handle)
    }

    /// Apex-only handle.
    pub fn apex_of(label: PkLabel, root_suffix: &str) -> Result<Self, HandleError> {
        Handle::new(vec![HandleLabel::Pk(label)], root_suffix)
    }

    /// Parses `fqdn` as a handle below `root_suffix`. Matching of the root is
    /// case-insensitive and either text may carry a trailing dot; the
    /// handle keeps the suffix text as written in `fqdn`.
    pub fn parse(fqdn: &str, root_suffix: &str) -> Result<Self, HandleError> {
        let root = Name::parse(root_suffix)?;
        let name = Name::parse(fqdn)?;
        let not_under = || HandleError::NotUnderRoot {
            name: fqdn.to_string(),
            root: root_suffix.to_string(),
        };
        let rel = name.strip_suffix(&root).ok_or_else(not_under)?;
        if rel.is_empty() {
            return Err(not_under());
        }
        let labels = rel
            .iter()
            .rev()
            .map(|l| HandleLabel::parse(l))
            .collect::<Result<Vec<_>, _>>()?;
        // Keep the written form of the suffix: everything after the handle
        // labels and their separating dots.
        let consumed: usize = rel.iter().map(|l| l.len() + 1).sum();
        let written_suffix = if root.is_root() {
            fqdn.get(consumed..).unwrap_or("").to_string()
        } else {
            fqdn[consumed..].to_string()
        };
        Handle::new(labels, &written_suffix)
    }

    /// Parses a handle without being told its root: the apex is the rightmost
    /// label that reads as a PK label, and everything to its right is the
    /// root suffix.
    pub fn infer(fqdn: &str) -> Result<Self, HandleError> {
        let name = Name::parse(fqdn)?;
        let idx = name
            .labels()
            .iter()
            .rposition(|l| matches!(HandleLabel::parse(l), Ok(HandleLabel::Pk(_))))
            .ok_or(HandleError::Structure("no PK label in name"))?;
        let consumed: usize = name.labels()[..=idx].iter().map(|l| l.len() + 1).sum();
        let suffix = fqdn.get(consumed..).unwrap_or("");
        Handle::parse(fqdn, if suffix.is_empty() { "." } else { suffix })
    }

    /// Apex first.
    pub fn labels(&self) -> &[HandleLabel] {
        &self.labels
    }

    pub fn root_suffix(&self) -> &str {
        &self.root_suffix
    }

    pub fn root(&self) -> &Name {
        &self.root
    }

    pub fn depth(&self) -> usize {
        self.labels.len()
    }

    pub fn is_apex(&self) -> bool {
        self.labels.len() == 1
    }

    pub fn apex_label(&self) -> &PkLabel {
        self.labels[0].as_pk().expect("apex is always a PK label")
    }

    pub fn leaf_label(&self) -> &HandleLabel {
        self.labels.last().expect("handle is never empty")
    }

    pub fn apex(&self) -> Handle {
        self.truncate(1)
    }

    /// The ancestor with the first `depth` labels (clamped to at least 1).
    pub fn truncate(&self, depth: usize) -> Handle {
        let depth = depth.clamp(1, self.labels.len());
        Handle {
            labels: self.labels[..depth].to_vec(),
            root_suffix: self.root_suffix.clone(),
            root: self.root.clone(),
        }
    }

    pub fn parent(&self) -> Option<Handle> {
        (self.labels.len() > 1).then(|| self.truncate(self.labels.len() - 1))
    }

    pub fn child(&self, label: HandleLabel) -> Result<Handle, HandleError> {
        let mut labels = self.labels.clone();
        labels.push(label);
        Handle::new(labels, &self.root_suffix)
    }

    /// True if `self` equals `other` or lies below it.
    pub fn is_descendant_of(&self, other: &Handle) -> bool {
        self.root == other.root
            && self.labels.len() >= other.labels.len()
            && self.labels[..other.labels.len()] == other.labels[..]
    }

    /// Replaces the first `depth` labels of `self` with `target`, keeping the
    /// labels below. This is the rewrite a DNAME at `self.truncate(depth)`
    /// performs.
    pub fn rewrite(&self, depth: usize, target: &Handle) -> Result<Handle, HandleError> {
        let mut labels = target.labels.clone();
        labels.extend_from_slice(&self.labels[depth..]);
        Handle::new(labels, &target.root_suffix)
    }

    /// Absolute domain name.
    pub fn name(&self) -> Name {
        self.root
            .prepend(&self.labels.iter().rev().map(|l| l.encode()).collect::<Vec<_>>())
            .expect("handle length was validated")
    }

    /// Leaf-first dotted labels without the root suffix.
    pub fn relative_text(&self) -> String {
        self.labels
            .iter()
            .rev()
            .map(|l| l.encode())
            .collect::<Vec<_>>()
            .join(".")
    }

    /// Leaf-first dotted name ending in the root suffix as written.
    pub fn to_fqdn(&self) -> String {
        let rel = self.relative_text();
        if self.root_suffix.is_empty() || self.root_suffix == "." {
            format!("{rel}{}", self.root_suffix)
        } else {
            format!("{rel}.{}", self.root_suffix)
        }
    }
}

impl PartialEq for Handle {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.root == other.root
    }
}

impl Eq for Handle {}

impl Hash for Handle {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.labels.hash(state);
        self.root.hash(state);
    }
}

/// Canonical order of the rendered names.
impl Ord for Handle {
    fn cmp(&self, other: &Self) -> Ordering {
        self.name().cmp(&other.name())
    }
}

impl PartialOrd for Handle {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_fqdn())
    }
}

impl fmt::Debug for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Handle({})", self.to_fqdn())
    }
}

#[derive(Serialize, Deserialize)]
struct HandleRepr {
    root_suffix: String,
    labels: Vec<String>,
}

impl Serialize for Handle {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        HandleRepr {
            root_suffix: self.root_suffix.clone(),
            labels: self.labels.iter().map(HandleLabel::encode).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Handle {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = HandleRepr::deserialize(deserializer)?;
        let labels = repr
            .labels
            .iter()
            .map(|l| HandleLabel::parse(l))
            .collect::<Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        Handle::new(labels, &repr.root_suffix).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROOT: &str = "handleroot.example.org";

    fn pk() -> HandleLabel {
        HandleLabel::pk(5, "0061A38F9A3540B9").unwrap()
    }

    #[test]
    fn encodes_pk_ia_and_oa() {
        assert_eq!(pk().encode(), "h1g5k0061A38F9A3540B9");
        assert_eq!(HandleLabel::ia("427").unwrap().encode(), "h0k427");
        assert_eq!(HandleLabel::oa("1").unwrap().encode(), "h2k1");
    }

    #[test]
    fn parses_labels() {
        assert_eq!(HandleLabel::parse("h0k2").unwrap(), HandleLabel::ia("2").unwrap());
        assert_eq!(HandleLabel::parse("h2k9").unwrap(), HandleLabel::oa("9").unwrap());
        assert_eq!(HandleLabel::parse("h1g5k0061a38f9a3540b9").unwrap(), pk());
        assert_eq!(HandleLabel::parse("H1G5K0061A38F9A3540B9").unwrap(), pk());
    }

    #[test]
    fn rejects_leading_zeroes() {
        assert_eq!(
            HandleLabel::parse("h0k007"),
            Err(LabelError::LeadingZero("h0k007".into()))
        );
        assert!(matches!(
            HandleLabel::parse("h1g05k0061A38F9A3540B9"),
            Err(LabelError::LeadingZero(_))
        ));
        // A lone zero has no leading zero.
        assert!(HandleLabel::parse("h0k0").is_ok());
    }

    #[test]
    fn rejects_short_and_long_suffixes() {
        assert_eq!(
            HandleLabel::parse("h1g5k0061A38F9A354"),
            Err(LabelError::Length {
                label: "h1g5k0061A38F9A354".into(),
                len: 13
            })
        );
        let long = format!("h1g5k{}", "A".repeat(41));
        assert!(matches!(HandleLabel::parse(&long), Err(LabelError::Length { len: 41, .. })));
        assert!(HandleLabel::parse(&format!("h1g5k{}", "0".repeat(40))).is_ok());
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "", "h", "h3k1", "x0k1", "h0x1", "h0k", "h0k1a", "h1g5", "h1gk0061A38F9A3540B9",
            "h1g1234k0061A38F9A3540B9", "h1g256k0061A38F9A3540B9", "h1g0k0061A38F9A3540B9",
            "h1g5k0061A38F9A3540BZ",
        ] {
            assert!(HandleLabel::parse(bad).is_err(), "{bad:?} parsed");
        }
        assert!(HandleLabel::parse(&format!("h0k{}", "1".repeat(61))).is_err());
    }

    #[test]
    fn parses_example_handles() {
        let h = Handle::parse("h0k2.h0k3.h1g5k0061A38F9A3540B9.handleroot.example.org", ROOT).unwrap();
        assert_eq!(
            h.labels(),
            &[pk(), HandleLabel::ia("3").unwrap(), HandleLabel::ia("2").unwrap()]
        );
        assert_eq!(h.to_fqdn(), "h0k2.h0k3.h1g5k0061A38F9A3540B9.handleroot.example.org");

        let fq = "h1g5k0061A38F9A3540B9.handleroot.example.org.";
        let apex = Handle::parse(fq, ROOT).unwrap();
        assert!(apex.is_apex());
        assert_eq!(apex.to_fqdn(), fq);
        assert_eq!(apex, h.apex());
    }

    #[test]
    fn root_mismatch() {
        assert!(matches!(
            Handle::parse("h0k3.h0k2.h1g5k0061A38F9A3540B9.other.org", ROOT),
            Err(HandleError::NotUnderRoot { .. })
        ));
        assert!(matches!(Handle::parse(ROOT, ROOT), Err(HandleError::NotUnderRoot { .. })));
    }

    #[test]
    fn structure_enforced() {
        assert!(matches!(
            Handle::parse("h0k2.handleroot.example.org", ROOT),
            Err(HandleError::Structure(_))
        ));
        assert!(matches!(
            Handle::parse("h1g5k0061A38F9A3540B9.h0k2.h1g5k0061A38F9A3540B9.handleroot.example.org", ROOT),
            Err(HandleError::Structure(_))
        ));
    }

    #[test]
    fn long_labels_accepted() {
        let full = HandleLabel::pk(5, &"AB".repeat(20)).unwrap();
        let h = Handle::new(vec![full], ROOT).unwrap();
        assert_eq!(h.relative_text().len(), 45);
        let ord = format!("1{}", "0".repeat(59));
        let h = Handle::new(vec![pk(), HandleLabel::ia(&ord).unwrap()], ROOT).unwrap();
        assert_eq!(h.labels()[1].encode().len(), 63);
        assert!(h.to_fqdn().starts_with(&format!("h0k{ord}.")));
    }

    #[test]
    fn too_long_handle_rejected() {
        let ord = "9".repeat(60);
        let labels = std::iter::once(pk())
            .chain((0..4).map(|_| HandleLabel::ia(&ord).unwrap()))
            .collect();
        assert!(matches!(Handle::new(labels, ROOT), Err(HandleError::TooLong(_))));
    }

    #[test]
    fn equality_ignores_root_case() {
        let a = Handle::parse("h0k2.h1g5k0061A38F9A3540B9.HandleRoot.Example.org", ROOT).unwrap();
        let b = Handle::parse("h0k2.h1g5k0061a38f9a3540b9.handleroot.example.org.", ROOT).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infers_root() {
        let h = Handle::infer("h0k2.h0k3.h1g5k0061A38F9A3540B9.handleroot.example.org").unwrap();
        assert_eq!(h.root_suffix(), ROOT);
        assert_eq!(h.depth(), 3);
    }

    #[test]
    fn rewrite_moves_suffix() {
        let h = Handle::parse("h0k5.h0k1.h1g5k0061A38F9A3540B9.handleroot.example.org", ROOT).unwrap();
        let target = Handle::parse("h0k427.h1g5kEFA0A37BB4260D3C.handleroot.example.org", ROOT).unwrap();
        let out = h.rewrite(2, &target).unwrap();
        assert_eq!(out.to_fqdn(), "h0k5.h0k427.h1g5kEFA0A37BB4260D3C.handleroot.example.org");
    }

    #[test]
    fn serde_round_trip() {
        let h = Handle::parse("h2k7.h0k3.h1g5k0061A38F9A3540B9.handleroot.example.org.", ROOT).unwrap();
        let json = serde_json::to_string(&h).unwrap();
        let back: Handle = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_fqdn(), h.to_fqdn());
    }
}
