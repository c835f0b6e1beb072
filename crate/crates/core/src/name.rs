//! Absolute domain names with DNS-style case-insensitive comparison and
//! canonical ordering.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Longest rendered name, excluding the trailing dot.
pub const MAX_NAME_LEN: usize = 253;
/// Longest single label.
pub const MAX_LABEL_LEN: usize = 63;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("empty label in {0:?}")]
    EmptyLabel(String),
    #[error("label {0:?} longer than 63 characters")]
    LabelTooLong(String),
    #[error("name longer than 253 characters")]
    NameTooLong,
    #[error("invalid character {1:?} in {0:?}")]
    BadCharacter(String, char),
}

/// An absolute domain name. The root name has no labels.
///
/// Labels keep the case they were written with; equality, hashing and
/// ordering ignore ASCII case.
#[derive(Clone, Default)]
pub struct Name {
    labels: Vec<String>,
}

impl Name {
    pub fn root() -> Self {
        Name { labels: Vec::new() }
    }

    /// Parses dotted text. A trailing dot is optional; `"."` and `""` are the
    /// root.
    pub fn parse(text: &str) -> Result<Self, NameError> {
        let trimmed = text.strip_suffix('.').unwrap_or(text);
        if trimmed.is_empty() {
            return Ok(Self::root());
        }
        let labels = trimmed
            .split('.')
            .map(|l| l.to_string())
            .collect::<Vec<_>>();
        Self::from_labels(labels)
    }

    /// Builds a name from labels ordered leftmost (leaf) first.
    pub fn from_labels<I, S>(labels: I) -> Result<Self, NameError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        for label in &labels {
            if label.is_empty() {
                return Err(NameError::EmptyLabel(labels.join(".")));
            }
            if label.len() > MAX_LABEL_LEN {
                return Err(NameError::LabelTooLong(label.clone()));
            }
            if let Some(c) = label
                .chars()
                .find(|c| !(c.is_ascii_alphanumeric() || *c == '-' || *c == '_'))
            {
                return Err(NameError::BadCharacter(label.clone(), c));
            }
        }
        let name = Name { labels };
        if name.text_len() > MAX_NAME_LEN {
            return Err(NameError::NameTooLong);
        }
        Ok(name)
    }

    /// Labels leftmost first.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn is_root(&self) -> bool {
        self.labels.is_empty()
    }

    fn text_len(&self) -> usize {
        if self.labels.is_empty() {
            0
        } else {
            self.labels.iter().map(String::len).sum::<usize>() + self.labels.len() - 1
        }
    }

    /// True if `self` equals `ancestor` or lies below it.
    pub fn is_subdomain_of(&self, ancestor: &Name) -> bool {
        let n = ancestor.labels.len();
        if n > self.labels.len() {
            return false;
        }
        let offset = self.labels.len() - n;
        self.labels[offset..]
            .iter()
            .zip(&ancestor.labels)
            .all(|(a, b)| a.eq_ignore_ascii_case(b))
    }

    /// Labels of `self` that precede `ancestor`, leftmost first. `None` if
    /// `self` is not under `ancestor`.
    pub fn strip_suffix(&self, ancestor: &Name) -> Option<&[String]> {
        if !self.is_subdomain_of(ancestor) {
            return None;
        }
        Some(&self.labels[..self.labels.len() - ancestor.labels.len()])
    }

    /// Prepends labels (leftmost first) to this name.
    pub fn prepend<S: AsRef<str>>(&self, labels: &[S]) -> Result<Name, NameError> {
        Name::from_labels(
            labels
                .iter()
                .map(|s| s.as_ref().to_string())
                .chain(self.labels.iter().cloned()),
        )
    }

    pub fn parent(&self) -> Option<Name> {
        if self.labels.is_empty() {
            None
        } else {
            Some(Name {
                labels: self.labels[1..].to_vec(),
            })
        }
    }

    /// Text with a trailing dot.
    pub fn to_fqdn(&self) -> String {
        format!("{}.", self.labels.join("."))
    }

    /// Uncompressed lower-cased wire form: length-prefixed labels followed by
    /// the zero-length root label.
    pub fn to_canonical_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.text_len() + 2);
        for label in &self.labels {
            out.push(label.len() as u8);
            out.extend(label.bytes().map(|b| b.to_ascii_lowercase()));
        }
        out.push(0);
        out
    }

    fn lowered_rev(&self) -> impl Iterator<Item = Vec<u8>> + '_ {
        self.labels
            .iter()
            .rev()
            .map(|l| l.bytes().map(|b| b.to_ascii_lowercase()).collect())
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.labels.is_empty() {
            f.write_str(".")
        } else {
            f.write_str(&self.labels.join("."))
        }
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Name({self})")
    }
}

impl FromStr for Name {
    type Err = NameError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Name::parse(s)
    }
}

impl PartialEq for Name {
    fn eq(&self, other: &Self) -> bool {
        self.labels.len() == other.labels.len()
            && self
                .labels
                .iter()
                .zip(&other.labels)
                .all(|(a, b)| a.eq_ignore_ascii_case(b))
    }
}

impl Eq for Name {}

impl Hash for Name {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for label in self.lowered_rev() {
            label.hash(state);
        }
    }
}

/// Canonical DNS order: label sequences compared right to left, each label
/// compared bytewise after lower-casing. A parent sorts before its children.
impl Ord for Name {
    fn cmp(&self, other: &Self) -> Ordering {
        self.lowered_rev().cmp(other.lowered_rev())
    }
}

impl PartialOrd for Name {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for Name {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_fqdn())
    }
}

impl<'de> Deserialize<'de> for Name {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Name::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> Name {
        Name::parse(s).unwrap()
    }

    #[test]
    fn case_insensitive_equality() {
        assert_eq!(n("HandleRoot.Example.ORG."), n("handleroot.example.org"));
    }

    #[test]
    fn parent_sorts_before_children() {
        let x = n("x.org");
        let mut names = vec![n("h0k2.x.org"), n("h0k1.x.org"), x.clone()];
        names.sort();
        assert_eq!(names, vec![x, n("h0k1.x.org"), n("h0k2.x.org")]);
    }

    #[test]
    fn subdomain_checks() {
        let root = n("handleroot.example.org");
        let h = n("h0k2.h1g5k0061A38F9A3540B9.HANDLEROOT.example.org.");
        assert!(h.is_subdomain_of(&root));
        assert_eq!(
            h.strip_suffix(&root).unwrap(),
            &["h0k2".to_string(), "h1g5k0061A38F9A3540B9".to_string()]
        );
        assert!(!root.is_subdomain_of(&h));
        assert!(n("other.org").strip_suffix(&root).is_none());
    }

    #[test]
    fn length_limits() {
        let long = "a".repeat(64);
        assert!(matches!(Name::parse(&long), Err(NameError::LabelTooLong(_))));
        let many = vec!["abcdefghi"; 26].join(".");
        assert_eq!(Name::parse(&many), Err(NameError::NameTooLong));
        assert!(matches!(Name::parse("a..b"), Err(NameError::EmptyLabel(_))));
    }

    #[test]
    fn wire_form_lowercases() {
        assert_eq!(n("Ab.c").to_canonical_wire(), b"\x02ab\x01c\x00".to_vec());
        assert_eq!(Name::root().to_canonical_wire(), vec![0]);
    }
}
