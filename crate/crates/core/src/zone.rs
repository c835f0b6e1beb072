//! Zone snapshots, canonical ordering, NXT chains and the master-file text
//! format.
//!
//! The text format follows the classic master-file layout: one record per
//! logical line, parentheses continue a record across lines, `;` starts a
//! comment, `$ORIGIN` and `$TTL` directives are honoured. Each signature is
//! written as a `SIG <type>` line directly after the set it covers:
//!
//! ```text
//! handleroot.example.org. SIG SOA (
//!    5 3 86400 20050415223412 20050401223412 1
//!    handleroot.example.org.
//!    <base64 signature>
//!    )
//! ```
//!
//! The six numbers are algorithm, label count, original TTL, expiration,
//! inception and serial. The serial may be omitted on input (it reads as 0).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::net::Ipv4Addr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use thiserror::Error;

use crate::crypto::{AlgorithmCode, PublicKey, RecordSignature, SignatureParams, Timestamp, KEY_FLAGS, KEY_PROTOCOL};
use crate::handle::HandleLabel;
use crate::name::Name;
use crate::record::{RData, RRset, RType, ResourceRecord, SignedRRset, Soa};

/// TTL used when a record gives none and no `$TTL` is in force.
pub const DEFAULT_TTL: u32 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ZoneError {
    #[error("line {line}: syntax error: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("line {line}: unknown record type {rtype:?}")]
    UnknownRType { line: usize, rtype: String },
    #[error("line {line}: bad {rtype} rdata: {detail}")]
    RdataFormat {
        line: usize,
        rtype: String,
        detail: String,
    },
}

/// An immutable view of one zone: its apex and its record sets, at most one
/// per (owner, type).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneSnapshot {
    apex: Name,
    rrsets: BTreeMap<(Name, RType), SignedRRset>,
}

impl ZoneSnapshot {
    pub fn new(apex: Name) -> Self {
        ZoneSnapshot {
            apex,
            rrsets: BTreeMap::new(),
        }
    }

    pub fn apex(&self) -> &Name {
        &self.apex
    }

    /// SOA serial, or 0 for a zone without SOA.
    pub fn serial(&self) -> u32 {
        match self.get(&self.apex, RType::Soa).and_then(|s| s.rrset.rdata().first()) {
            Some(RData::Soa(soa)) => soa.serial,
            _ => 0,
        }
    }

    /// Adds or replaces the set for its (owner, type).
    pub fn insert(&mut self, set: SignedRRset) {
        self.rrsets
            .insert((set.owner().clone(), set.rtype()), set);
    }

    pub fn remove(&mut self, owner: &Name, rtype: RType) -> Option<SignedRRset> {
        self.rrsets.remove(&(owner.clone(), rtype))
    }

    pub fn get(&self, owner: &Name, rtype: RType) -> Option<&SignedRRset> {
        self.rrsets.get(&(owner.clone(), rtype))
    }

    /// Sets in canonical owner order, then type code.
    pub fn rrsets(&self) -> impl Iterator<Item = &SignedRRset> {
        self.rrsets.values()
    }

    pub fn len(&self) -> usize {
        self.rrsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rrsets.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = ResourceRecord> + '_ {
        self.rrsets.values().flat_map(|s| s.rrset.records().collect::<Vec<_>>())
    }

    /// The apex plus every owner with at least one set, canonically ordered.
    pub fn owner_names(&self) -> BTreeSet<Name> {
        let mut names: BTreeSet<Name> = self.rrsets.keys().map(|(n, _)| n.clone()).collect();
        names.insert(self.apex.clone());
        names
    }

    fn types_at(&self, owner: &Name) -> BTreeSet<RType> {
        self.rrsets
            .range((owner.clone(), RType::A)..=(owner.clone(), RType::Dname))
            .map(|((_, t), _)| *t)
            .collect()
    }

    fn nxt_ttl(&self) -> u32 {
        match self.get(&self.apex, RType::Soa).and_then(|s| s.rrset.rdata().first()) {
            Some(RData::Soa(soa)) => soa.minimum,
            _ => DEFAULT_TTL,
        }
    }

    /// Replaces any NXT sets with a freshly built chain, passing each new set
    /// through `sign`.
    pub fn replace_nxt_chain(&mut self, mut sign: impl FnMut(RRset) -> SignedRRset) {
        self.rrsets.retain(|(_, t), _| *t != RType::Nxt);
        for record in build_nxt_chain(self) {
            let owner = record.owner.clone();
            let set = RRset::new(owner, record.ttl, vec![record.rdata]).expect("single record");
            self.insert(sign(set));
        }
    }
}

/// Sorts names into canonical DNS order.
pub fn canonical_order<I: IntoIterator<Item = Name>>(names: I) -> Vec<Name> {
    let mut v: Vec<Name> = names.into_iter().collect();
    v.sort();
    v.dedup();
    v
}

/// One NXT per owner name, each pointing at its canonical successor; the
/// last wraps round to the first. NXT sets already in the zone are ignored
/// when computing type bitmaps, and NXT itself is always listed.
pub fn build_nxt_chain(zone: &ZoneSnapshot) -> Vec<ResourceRecord> {
    let owners = canonical_order(zone.owner_names());
    let ttl = zone.nxt_ttl();
    owners
        .iter()
        .enumerate()
        .map(|(i, owner)| {
            let next = owners[(i + 1) % owners.len()].clone();
            let mut types = zone.types_at(owner);
            types.insert(RType::Nxt);
            ResourceRecord {
                owner: owner.clone(),
                ttl,
                rdata: RData::Nxt { next, types },
            }
        })
        .collect()
}

/// Whether an NXT from `owner` to `next` proves `name` absent.
pub fn nxt_covers(owner: &Name, next: &Name, name: &Name) -> bool {
    if owner == name {
        return false;
    }
    if owner < next {
        owner < name && name < next
    } else {
        // The wrap-around link covers everything after the last owner and
        // before the first.
        name > owner || name < next
    }
}

// ---------------------------------------------------------------------------
// Serialization

fn render_duration(secs: u32) -> String {
    for (unit, size) in [('w', 604_800), ('d', 86_400), ('h', 3_600), ('m', 60)] {
        if secs != 0 && secs.is_multiple_of(size) {
            return format!("{}{unit}", secs / size);
        }
    }
    secs.to_string()
}

fn render_name(name: &Name, origin: &Name) -> String {
    if name != origin {
        if let Some(rel) = name.strip_suffix(origin) {
            return rel.join(".");
        }
    }
    if name.is_root() {
        ".".into()
    } else {
        name.to_fqdn()
    }
}

fn render_address(addr: Ipv4Addr) -> String {
    let o = addr.octets();
    format!("{:03}.{:03}.{:03}.{:03}", o[0], o[1], o[2], o[3])
}

fn escape_txt(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn push_base64_block(out: &mut String, bytes: &[u8]) {
    let text = B64.encode(bytes);
    if text.is_empty() {
        out.push_str("   -\n");
    }
    for chunk in text.as_bytes().chunks(56) {
        out.push_str("   ");
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
        out.push('\n');
    }
}

fn render_rdata(out: &mut String, rdata: &RData, origin: &Name) {
    match rdata {
        RData::A(addr) => out.push_str(&render_address(*addr)),
        RData::Ns(name) => out.push_str(&render_name(name, origin)),
        RData::Soa(soa) => {
            let _ = write!(
                out,
                "{} {} (\n   {} {} {} {} {}\n   )",
                render_name(&soa.mname, origin),
                render_name(&soa.rname, origin),
                soa.serial,
                render_duration(soa.refresh),
                render_duration(soa.retry),
                render_duration(soa.expire),
                render_duration(soa.minimum),
            );
        }
        RData::Txt(text) => out.push_str(&escape_txt(text)),
        RData::Key(key) => {
            let _ = writeln!(out, "{} {} {} (", key.flags(), key.protocol(), key.algorithm());
            push_base64_block(out, key.material());
            out.push_str("   )");
        }
        RData::Nxt { next, types } => {
            out.push_str(&render_name(next, origin));
            for t in types {
                out.push(' ');
                out.push_str(t.mnemonic());
            }
        }
        RData::Dname(target) => out.push_str(&render_name(target, origin)),
        RData::Transfer(target) => {
            out.push_str(&render_name(target, origin));
            out.push_str(" TRANSFER");
        }
    }
}

fn render_sig(out: &mut String, owner: &str, rtype: RType, sig: &RecordSignature, origin: &Name) {
    let p = &sig.params;
    let _ = writeln!(
        out,
        "{owner} SIG {rtype} (\n   {} {} {} {} {} {}\n   {}",
        p.algorithm,
        p.label_count,
        p.original_ttl,
        p.expiration,
        p.inception,
        p.serial,
        render_name(&p.signer, origin),
    );
    push_base64_block(out, &sig.signature_bytes);
    out.push_str("   )\n");
}

fn render_set(out: &mut String, set: &SignedRRset, origin: &Name) {
    let owner = render_name(set.owner(), origin);
    let ttl = if set.rrset.ttl() == DEFAULT_TTL {
        String::new()
    } else {
        format!(" {}", set.rrset.ttl())
    };
    for rdata in set.rrset.rdata() {
        let _ = write!(out, "{owner}{ttl} IN {} ", set.rtype());
        render_rdata(out, rdata, origin);
        out.push('\n');
    }
    if let Some(sig) = &set.signature {
        render_sig(out, &owner, set.rtype(), sig, origin);
    }
}

/// Renders the zone in its deterministic normal form: the apex SOA first,
/// then every other set in canonical owner order and type code.
pub fn serialize_zone(zone: &ZoneSnapshot) -> String {
    let origin = &zone.apex;
    let mut out = String::new();
    let _ = writeln!(out, "$ORIGIN {}", if origin.is_root() { ".".into() } else { origin.to_fqdn() });
    let _ = writeln!(out, "$TTL {}", render_duration(DEFAULT_TTL));
    let soa_key = (origin.clone(), RType::Soa);
    if let Some(soa) = zone.rrsets.get(&soa_key) {
        render_set(&mut out, soa, origin);
    }
    for (key, set) in &zone.rrsets {
        if *key != soa_key {
            render_set(&mut out, set, origin);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone)]
struct Token {
    text: String,
    quoted: bool,
}

struct Entry {
    line: usize,
    continues_owner: bool,
    tokens: Vec<Token>,
}

fn tokenize(text: &str) -> Result<Vec<Entry>, ZoneError> {
    let mut entries = Vec::new();
    let mut current: Option<Entry> = None;
    let mut depth = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut chars = raw.chars().peekable();
        if current.is_none() {
            current = Some(Entry {
                line,
                continues_owner: raw.starts_with([' ', '\t']),
                tokens: Vec::new(),
            });
        }
        let entry = current.as_mut().expect("just set");
        while let Some(c) = chars.next() {
            match c {
                ';' => break,
                '(' => depth += 1,
                ')' => {
                    depth = depth.checked_sub(1).ok_or_else(|| ZoneError::Syntax {
                        line,
                        detail: "unbalanced ')'".into(),
                    })?;
                }
                '"' => {
                    let mut s = String::new();
                    let mut closed = false;
                    while let Some(c) = chars.next() {
                        match c {
                            '\\' => {
                                if let Some(e) = chars.next() {
                                    s.push(e);
                                }
                            }
                            '"' => {
                                closed = true;
                                break;
                            }
                            other => s.push(other),
                        }
                    }
                    if !closed {
                        return Err(ZoneError::Syntax {
                            line,
                            detail: "unterminated string".into(),
                        });
                    }
                    entry.tokens.push(Token { text: s, quoted: true });
                }
                c if c.is_whitespace() => {}
                c => {
                    let mut s = String::from(c);
                    while let Some(&n) = chars.peek() {
                        if n.is_whitespace() || matches!(n, '(' | ')' | ';' | '"') {
                            break;
                        }
                        s.push(n);
                        chars.next();
                    }
                    entry.tokens.push(Token { text: s, quoted: false });
                }
            }
        }
        if depth == 0 {
            let done = current.take().expect("entry present");
            if !done.tokens.is_empty() {
                entries.push(done);
            }
        }
    }
    if depth != 0 {
        return Err(ZoneError::Syntax {
            line: current.map_or(0, |e| e.line),
            detail: "unclosed '('".into(),
        });
    }
    Ok(entries)
}

/// Parses a TTL or SOA timer: bare seconds, or a sequence such as `1d` or
/// `1h30m` with units s, m, h, d, w.
pub fn parse_duration(text: &str) -> Option<u32> {
    if text.is_empty() {
        return None;
    }
    let mut total: u64 = 0;
    let mut num = String::new();
    let mut saw_unit = false;
    for c in text.chars() {
        if c.is_ascii_digit() {
            num.push(c);
            continue;
        }
        let mult = match c.to_ascii_lowercase() {
            's' => 1,
            'm' => 60,
            'h' => 3_600,
            'd' => 86_400,
            'w' => 604_800,
            _ => return None,
        };
        let n: u64 = num.parse().ok()?;
        total = total.checked_add(n.checked_mul(mult)?)?;
        num.clear();
        saw_unit = true;
    }
    if !num.is_empty() {
        if saw_unit {
            return None;
        }
        total = num.parse().ok()?;
    }
    u32::try_from(total).ok()
}

fn parse_address(text: &str) -> Result<Ipv4Addr, String> {
    let parts: Vec<&str> = text.split('.').collect();
    if parts.len() != 4 {
        return Err(format!("{text:?} is not a dotted quad"));
    }
    let mut octets = [0u8; 4];
    for (o, p) in octets.iter_mut().zip(parts) {
        if p.is_empty() || p.len() > 3 || !p.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad octet {p:?} in {text:?}"));
        }
        let v: u16 = p.parse().map_err(|_| format!("bad octet {p:?}"))?;
        *o = u8::try_from(v).map_err(|_| format!("octet {v} out of range in {text:?}"))?;
    }
    Ok(Ipv4Addr::from(octets))
}

struct Parser {
    origin: Option<Name>,
    default_ttl: u32,
    last_owner: Option<Name>,
}

impl Parser {
    fn name(&self, text: &str, line: usize) -> Result<Name, ZoneError> {
        let err = |detail: String| ZoneError::Syntax { line, detail };
        if text == "@" {
            return self.origin.clone().ok_or_else(|| err("'@' before any origin".into()));
        }
        if text.ends_with('.') {
            return Name::parse(text).map_err(|e| err(e.to_string()));
        }
        let origin = self
            .origin
            .as_ref()
            .ok_or_else(|| err(format!("relative name {text:?} before any origin")))?;
        let rel = Name::parse(text).map_err(|e| err(e.to_string()))?;
        origin.prepend(rel.labels()).map_err(|e| err(e.to_string()))
    }
}

enum Parsed {
    Record(ResourceRecord),
    Sig {
        owner: Name,
        covered: RType,
        sig: RecordSignature,
    },
}

fn parse_entry(p: &mut Parser, entry: &Entry) -> Result<Option<Parsed>, ZoneError> {
    let line = entry.line;
    let syntax = |detail: &str| ZoneError::Syntax {
        line,
        detail: detail.to_string(),
    };
    let toks = &entry.tokens;
    let first = &toks[0].text;
    if first.eq_ignore_ascii_case("$ORIGIN") {
        let name = toks.get(1).ok_or_else(|| syntax("$ORIGIN needs a name"))?;
        let abs = if name.text.ends_with('.') {
            Name::parse(&name.text).map_err(|e| syntax(&e.to_string()))?
        } else {
            p.name(&name.text, line)?
        };
        p.origin = Some(abs);
        return Ok(None);
    }
    if first.eq_ignore_ascii_case("$TTL") {
        p.default_ttl = toks
            .get(1)
            .and_then(|t| parse_duration(&t.text))
            .ok_or_else(|| syntax("bad $TTL"))?;
        return Ok(None);
    }
    if first.starts_with('$') {
        return Err(syntax(&format!("unsupported directive {first}")));
    }

    let mut rest = toks.iter().peekable();
    let owner = if entry.continues_owner {
        p.last_owner
            .clone()
            .ok_or_else(|| syntax("record without owner"))?
    } else {
        let t = rest.next().expect("non-empty entry");
        if t.text.ends_with('.') && p.origin.is_none() {
            p.origin = Some(Name::parse(&t.text).map_err(|e| syntax(&e.to_string()))?);
        }
        p.name(&t.text, line)?
    };
    p.last_owner = Some(owner.clone());

    let mut ttl = None;
    let mut rtype_tok = None;
    for t in rest.by_ref() {
        if t.text.eq_ignore_ascii_case("IN") {
            continue;
        }
        if ttl.is_none() && t.text.starts_with(|c: char| c.is_ascii_digit()) {
            ttl = Some(parse_duration(&t.text).ok_or_else(|| syntax("bad TTL"))?);
            continue;
        }
        rtype_tok = Some(t.text.clone());
        break;
    }
    let rtype_text = rtype_tok.ok_or_else(|| syntax("missing record type"))?;
    let rdata: Vec<&Token> = rest.collect();
    let ttl = ttl.unwrap_or(p.default_ttl);

    if rtype_text.eq_ignore_ascii_case("SIG") {
        let (covered, sig) = parse_sig(p, &rdata, line)?;
        return Ok(Some(Parsed::Sig { owner, covered, sig }));
    }
    let rtype: RType = rtype_text.parse().map_err(|_| ZoneError::UnknownRType {
        line,
        rtype: rtype_text.clone(),
    })?;
    let bad = |detail: String| ZoneError::RdataFormat {
        line,
        rtype: rtype.to_string(),
        detail,
    };
    let texts: Vec<&str> = rdata.iter().map(|t| t.text.as_str()).collect();
    let want = |n: usize| -> Result<(), ZoneError> {
        if texts.len() == n {
            Ok(())
        } else {
            Err(bad(format!("expected {n} fields, found {}", texts.len())))
        }
    };
    let data = match rtype {
        RType::A => {
            want(1)?;
            RData::A(parse_address(texts[0]).map_err(bad)?)
        }
        RType::Ns => {
            want(1)?;
            RData::Ns(p.name(texts[0], line)?)
        }
        RType::Soa => {
            want(7)?;
            let n = |i: usize| -> Result<u32, ZoneError> {
                parse_duration(texts[i]).ok_or_else(|| bad(format!("bad number {:?}", texts[i])))
            };
            RData::Soa(Soa {
                mname: p.name(texts[0], line)?,
                rname: p.name(texts[1], line)?,
                serial: texts[2]
                    .parse()
                    .map_err(|_| bad(format!("bad serial {:?}", texts[2])))?,
                refresh: n(3)?,
                retry: n(4)?,
                expire: n(5)?,
                minimum: n(6)?,
            })
        }
        RType::Txt => {
            if rdata.is_empty() {
                return Err(bad("empty TXT".into()));
            }
            RData::Txt(rdata.iter().map(|t| t.text.as_str()).collect::<String>())
        }
        RType::Key => RData::Key(parse_key(&owner, &texts).map_err(bad)?),
        RType::Nxt => {
            if texts.is_empty() {
                return Err(bad("missing next name".into()));
            }
            let next = p.name(texts[0], line)?;
            let types = texts[1..]
                .iter()
                .filter(|t| !t.eq_ignore_ascii_case("SIG"))
                .map(|t| t.parse::<RType>().map_err(&bad))
                .collect::<Result<BTreeSet<_>, _>>()?;
            RData::Nxt { next, types }
        }
        RType::Dname => match texts.as_slice() {
            [target] => RData::Dname(p.name(target, line)?),
            [target, marker] if marker.eq_ignore_ascii_case("TRANSFER") => {
                RData::Transfer(p.name(target, line)?)
            }
            _ => return Err(bad("expected target [TRANSFER]".into())),
        },
    };
    if rdata.iter().any(|t| t.quoted) && rtype != RType::Txt {
        return Err(bad("unexpected quoted string".into()));
    }
    Ok(Some(Parsed::Record(ResourceRecord {
        owner,
        ttl,
        rdata: data,
    })))
}

fn parse_key(owner: &Name, texts: &[&str]) -> Result<PublicKey, String> {
    let numeric = |t: &str| t.bytes().all(|b| b.is_ascii_digit());
    let (flags, protocol, alg, material) = if texts.len() >= 4 && texts[..3].iter().all(|t| numeric(t)) {
        let flags: u16 = texts[0].parse().map_err(|_| "bad flags".to_string())?;
        let protocol: u8 = texts[1].parse().map_err(|_| "bad protocol".to_string())?;
        let alg: u8 = texts[2].parse().map_err(|_| "bad algorithm".to_string())?;
        (flags, protocol, alg, &texts[3..])
    } else {
        // Abbreviated form: key material only, algorithm taken from the
        // owner's PK label.
        let alg = owner
            .labels()
            .first()
            .and_then(|l| HandleLabel::parse(l).ok())
            .and_then(|l| l.as_pk().map(|pk| pk.algorithm()))
            .ok_or("abbreviated KEY needs a PK-label owner")?;
        (KEY_FLAGS, KEY_PROTOCOL, alg, texts)
    };
    if material.is_empty() {
        return Err("missing key material".into());
    }
    let material = B64
        .decode(material.concat())
        .map_err(|e| format!("bad base64: {e}"))?;
    if material.is_empty() {
        return Err("empty key material".into());
    }
    let mut bytes = flags.to_be_bytes().to_vec();
    bytes.push(protocol);
    bytes.push(alg);
    bytes.extend(material);
    let key = PublicKey::from_rdata(bytes).map_err(|e| e.to_string())?;
    debug_assert_eq!(key.algorithm(), AlgorithmCode(alg));
    Ok(key)
}

fn parse_sig(p: &Parser, toks: &[&Token], line: usize) -> Result<(RType, RecordSignature), ZoneError> {
    let bad = |detail: String| ZoneError::RdataFormat {
        line,
        rtype: "SIG".into(),
        detail,
    };
    let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
    if texts.len() < 8 {
        return Err(bad(format!("expected at least 8 fields, found {}", texts.len())));
    }
    let covered: RType = texts[0].parse().map_err(|_| ZoneError::UnknownRType {
        line,
        rtype: texts[0].to_string(),
    })?;
    let num = |i: usize| -> Result<u64, ZoneError> {
        texts[i]
            .parse()
            .map_err(|_| bad(format!("bad number {:?}", texts[i])))
    };
    let algorithm = AlgorithmCode(u8::try_from(num(1)?).map_err(|_| bad("algorithm".into()))?);
    let label_count = u8::try_from(num(2)?).map_err(|_| bad("label count".into()))?;
    let original_ttl = parse_duration(texts[3]).ok_or_else(|| bad("original ttl".into()))?;
    let expiration = Timestamp::parse(texts[4]).map_err(&bad)?;
    let inception = Timestamp::parse(texts[5]).map_err(&bad)?;
    let (serial, signer_idx) = if texts[6].bytes().all(|b| b.is_ascii_digit()) {
        (num(6)?, 7)
    } else {
        (0, 6)
    };
    let signer = p.name(texts[signer_idx], line)?;
    let sig_text: String = texts[signer_idx + 1..].concat();
    if sig_text.is_empty() {
        return Err(bad("missing signature".into()));
    }
    let signature_bytes = if sig_text == "-" {
        Vec::new()
    } else {
        B64.decode(sig_text.as_bytes())
            .map_err(|e| bad(format!("bad base64: {e}")))?
    };
    Ok((
        covered,
        RecordSignature {
            params: SignatureParams {
                algorithm,
                label_count,
                original_ttl,
                expiration,
                inception,
                serial,
                signer,
            },
            signature_bytes,
        },
    ))
}

/// Parses master-file text into a snapshot. The apex is the owner of the SOA
/// set when there is one, otherwise the first `$ORIGIN` or absolute owner.
///
/// A SIG line attaches to the set with its owner and covered type; failing
/// that, to the most recent set of the covered type (older listings name
/// the signer rather than the owner on SIG lines).
pub fn parse_zone(text: &str) -> Result<ZoneSnapshot, ZoneError> {
    let mut parser = Parser {
        origin: None,
        default_ttl: DEFAULT_TTL,
        last_owner: None,
    };
    let mut first_origin: Option<Name> = None;
    // Insertion-ordered sets: (owner, type) -> (line, ttl, rdata, signature).
    let mut order: Vec<(Name, RType)> = Vec::new();
    type Pending = (usize, u32, Vec<RData>, Option<RecordSignature>);
    let mut sets: BTreeMap<(Name, RType), Pending> = BTreeMap::new();
    let mut last_of_type: BTreeMap<RType, (Name, RType)> = BTreeMap::new();

    for entry in tokenize(text)? {
        let parsed = parse_entry(&mut parser, &entry)?;
        if first_origin.is_none() {
            first_origin = parser.origin.clone();
        }
        match parsed {
            None => {}
            Some(Parsed::Record(rr)) => {
                let key = (rr.owner.clone(), rr.rtype());
                let slot = sets.entry(key.clone()).or_insert_with(|| {
                    order.push(key.clone());
                    (entry.line, rr.ttl, Vec::new(), None)
                });
                if slot.3.is_some() {
                    return Err(ZoneError::Syntax {
                        line: entry.line,
                        detail: format!("record for {} {} after its SIG", key.0, key.1),
                    });
                }
                slot.2.push(rr.rdata);
                last_of_type.insert(key.1, key);
            }
            Some(Parsed::Sig { owner, covered, sig }) => {
                let key = (owner, covered);
                let target = if sets.contains_key(&key) {
                    key
                } else {
                    last_of_type.get(&covered).cloned().ok_or_else(|| ZoneError::Syntax {
                        line: entry.line,
                        detail: format!("SIG {covered} with no preceding {covered} set"),
                    })?
                };
                let slot = sets.get_mut(&target).expect("present");
                if slot.3.is_some() {
                    return Err(ZoneError::Syntax {
                        line: entry.line,
                        detail: format!("second SIG for {} {}", target.0, target.1),
                    });
                }
                slot.3 = Some(sig);
            }
        }
    }

    let soa_owners: Vec<&Name> = sets
        .keys()
        .filter(|(_, t)| *t == RType::Soa)
        .map(|(n, _)| n)
        .collect();
    if soa_owners.len() > 1 {
        return Err(ZoneError::Syntax {
            line: sets[&(soa_owners[1].clone(), RType::Soa)].0,
            detail: "more than one SOA in zone".into(),
        });
    }
    let apex = soa_owners
        .first()
        .map(|n| (*n).clone())
        .or(first_origin)
        .or_else(|| order.first().map(|(n, _)| n.clone()))
        .ok_or_else(|| ZoneError::Syntax {
            line: 0,
            detail: "empty zone without $ORIGIN".into(),
        })?;

    let mut zone = ZoneSnapshot::new(apex);
    for key in order {
        let (line, ttl, rdata, signature) = sets.remove(&key).expect("ordered key present");
        if key.1 == RType::Soa && rdata.len() > 1 {
            return Err(ZoneError::RdataFormat {
                line,
                rtype: "SOA".into(),
                detail: "more than one SOA record".into(),
            });
        }
        let rrset = RRset::new(key.0, ttl, rdata).map_err(|e| ZoneError::Syntax {
            line,
            detail: e.to_string(),
        })?;
        zone.insert(SignedRRset { rrset, signature });
    }
    Ok(zone)
}
