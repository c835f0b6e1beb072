//! Shared fixture: a handle root with three owners, built from fixed keys.
//!
//! - K1 owns h0k3, h0k2.h0k3 (192.253.254.63), h0k3.h0k3 (192.253.254.65),
//!   h0k2, h0k1.h0k2 (cancelled) and h0k1, transferred to h0k427.K3.
//! - K3 owns h0k427 and h0k5.h0k427 (192.253.254.75).
//! - KC owns h0k1 and is compromised.
#![allow(dead_code)]

use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use onhs_core::crypto::{derive_pk_label, AlgorithmCode, KeyPair, SignatureParams, Timestamp};
use onhs_core::handle::{Handle, HandleLabel};
use onhs_core::name::Name;
use onhs_core::record::{RData, RRset, Soa, SignedRRset};
use onhs_core::server::{HandleServer, Payload, Signer, UpdateMessage};
use onhs_core::zone::{parse_zone, serialize_zone, ZoneSnapshot};

pub const ROOT: &str = "handleroot.example.org";
pub const INCEPTION: &str = "20050401223412";
pub const EXPIRATION: &str = "20050415223412";
pub const LIFETIME: i64 = 14 * 86_400;
pub const SUFFIX_LEN: usize = 16;

pub fn now() -> Timestamp {
    Timestamp::parse("20050405000000").unwrap()
}

pub fn inception() -> Timestamp {
    Timestamp::parse(INCEPTION).unwrap()
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn root_name() -> Name {
    Name::parse(ROOT).unwrap()
}

pub fn apex_of(key: &KeyPair) -> Handle {
    Handle::apex_of(derive_pk_label(&key.public, SUFFIX_LEN).unwrap(), ROOT).unwrap()
}

/// `rel` is leaf first, e.g. `"h0k2.h0k3"`, below `apex`.
pub fn under(apex: &Handle, rel: &str) -> Handle {
    let mut h = apex.clone();
    for label in rel.split('.').rev().filter(|l| !l.is_empty()) {
        h = h.child(HandleLabel::parse(label).unwrap()).unwrap();
    }
    h
}

pub fn ip(s: &str) -> Ipv4Addr {
    s.parse().unwrap()
}

pub const KEY_NAMES: [&str; 4] = ["root", "k1", "k3", "kc"];

pub fn key_path(name: &str) -> PathBuf {
    fixtures_dir().join("keys").join(format!("{name}.key"))
}

pub fn load_key(name: &str) -> KeyPair {
    let text = std::fs::read_to_string(key_path(name))
        .unwrap_or_else(|e| panic!("fixture key {name}: {e}; run the ignored regenerate test"));
    KeyPair::from_secret_file(&text).unwrap()
}

pub struct Fixture {
    pub root_key: KeyPair,
    pub k1_key: KeyPair,
    pub k3_key: KeyPair,
    pub kc_key: KeyPair,
    pub k1: Handle,
    pub k3: Handle,
    pub kc: Handle,
}

impl Fixture {
    pub fn load() -> Self {
        let [root_key, k1_key, k3_key, kc_key] = KEY_NAMES.map(load_key);
        Fixture {
            k1: apex_of(&k1_key),
            k3: apex_of(&k3_key),
            kc: apex_of(&kc_key),
            root_key,
            k1_key,
            k3_key,
            kc_key,
        }
    }

    pub fn signer<'a>(&self, key: &'a KeyPair) -> Signer<'a> {
        Signer::new(key, inception(), LIFETIME)
    }

    pub fn leaf(&self) -> Handle {
        under(&self.k1, "h0k2.h0k3")
    }

    pub fn transferred_leaf(&self) -> Handle {
        under(&self.k1, "h0k5.h0k1")
    }

    pub fn messages(&self) -> Vec<UpdateMessage> {
        let (s1, s3, sc) = (self.signer(&self.k1_key), self.signer(&self.k3_key), self.signer(&self.kc_key));
        let assign = |a: &str| Payload::Assign {
            address: ip(a),
            ttl: 86_400,
        };
        let k1 = |rel: &str| under(&self.k1, rel);
        let k3 = |rel: &str| under(&self.k3, rel);
        let kc = |rel: &str| under(&self.kc, rel);
        vec![
            s1.claim(&self.k1).unwrap(),
            s3.claim(&self.k3).unwrap(),
            sc.claim(&self.kc).unwrap(),
            s1.message(&k1("h0k3"), Payload::CreateChild, 1).unwrap(),
            s1.message(&k1("h0k2.h0k3"), Payload::CreateChild, 1).unwrap(),
            s1.message(&k1("h0k2.h0k3"), assign("192.253.254.63"), 1).unwrap(),
            s1.message(&k1("h0k3.h0k3"), Payload::CreateChild, 1).unwrap(),
            s1.message(&k1("h0k3.h0k3"), assign("192.253.254.65"), 1).unwrap(),
            s1.message(&k1("h0k2"), Payload::CreateChild, 1).unwrap(),
            s1.message(&k1("h0k1.h0k2"), Payload::CreateChild, 1).unwrap(),
            s1.message(&k1("h0k1.h0k2"), Payload::Cancel, 1).unwrap(),
            s1.message(&k1("h0k1"), Payload::CreateChild, 1).unwrap(),
            s3.message(&k3("h0k427"), Payload::CreateChild, 1).unwrap(),
            s3.message(&k3("h0k5.h0k427"), Payload::CreateChild, 1).unwrap(),
            s3.message(&k3("h0k5.h0k427"), assign("192.253.254.75"), 1).unwrap(),
            s1.message(&k1("h0k1"), Payload::Transfer { target: k3("h0k427") }, 1).unwrap(),
            sc.message(&kc("h0k1"), Payload::CreateChild, 1).unwrap(),
            sc.message(&kc("h0k1"), assign("192.0.2.9"), 1).unwrap(),
            sc.message(
                &self.kc,
                Payload::Compromise {
                    note: "Compromised 01/04/2003".into(),
                    cancel_signature: onhs_core::server::message::placeholder_signature(),
                },
                1,
            )
            .unwrap(),
        ]
    }

    fn sign(&self, key: &KeyPair, signer: &Name, rrset: RRset) -> SignedRRset {
        let params = SignatureParams::for_rrset(&rrset, key.public.algorithm(), signer.clone(), inception(), LIFETIME, 1);
        SignedRRset::sign(rrset, &key.secret, params).unwrap()
    }

    /// SOA, NS and glue for the root zone.
    pub fn root_aux(&self) -> ZoneSnapshot {
        let root = root_name();
        let rel = |s: &str| Name::parse(&format!("{s}.{ROOT}")).unwrap();
        let set = |owner: Name, rdata: Vec<RData>| RRset::new(owner, 86_400, rdata).unwrap();
        let mut z = ZoneSnapshot::new(root.clone());
        let by_root = |rrset| self.sign(&self.root_key, &root, rrset);
        z.insert(by_root(set(
            root.clone(),
            vec![RData::Soa(Soa {
                mname: rel("handleserver1"),
                rname: rel("handlemaster"),
                serial: 1,
                refresh: 86_400,
                retry: 3_600,
                expire: 604_800,
                minimum: 3_600,
            })],
        )));
        z.insert(by_root(set(
            root.clone(),
            vec![RData::Ns(rel("handleserver1")), RData::Ns(rel("handleserver2"))],
        )));
        z.insert(by_root(set(rel("handleserver1"), vec![RData::A(ip("183.21.254.10"))])));
        z.insert(by_root(set(rel("handleserver2"), vec![RData::A(ip("183.21.254.20"))])));
        let k1 = self.k1.name();
        let k1_sub = |s: &str| k1.prepend(&[s.to_string()]).unwrap();
        z.insert(self.sign(
            &self.k1_key,
            &k1,
            set(k1.clone(), vec![RData::Ns(k1_sub("ns1")), RData::Ns(k1_sub("ns2"))]),
        ));
        z.insert(self.sign(&self.k1_key, &k1, set(k1_sub("ns1"), vec![RData::A(ip("192.253.254.21"))])));
        z.insert(self.sign(&self.k1_key, &k1, set(k1_sub("ns2"), vec![RData::A(ip("192.253.254.22"))])));
        let kc = self.kc.name();
        let kc_ns = kc.prepend(&["ns1".to_string()]).unwrap();
        z.insert(self.sign(&self.kc_key, &kc, set(kc.clone(), vec![RData::Ns(kc_ns.clone())])));
        z.insert(self.sign(&self.kc_key, &kc, set(kc_ns, vec![RData::A(ip("192.0.2.53"))])));
        let k3 = self.k3.name();
        let ext = |i: u8| Name::parse(&format!("exampleserver{i}.example.com")).unwrap();
        z.insert(self.sign(
            &self.k3_key,
            &k3,
            set(k3.clone(), (1..=3).map(|i| RData::Ns(ext(i))).collect()),
        ));
        z
    }

    /// SOA, NS and name-server addresses of K1's own zone.
    pub fn k1_aux(&self) -> ZoneSnapshot {
        let k1 = self.k1.name();
        let sub = |s: &str| k1.prepend(&[s.to_string()]).unwrap();
        let set = |owner: Name, rdata: Vec<RData>| RRset::new(owner, 86_400, rdata).unwrap();
        let mut z = ZoneSnapshot::new(k1.clone());
        let soa = Soa {
            mname: sub("ns1"),
            rname: sub("hm"),
            serial: 1,
            refresh: 3_600,
            retry: 60,
            expire: 86_400,
            minimum: 60,
        };
        for rrset in [
            set(k1.clone(), vec![RData::Soa(soa)]),
            set(k1.clone(), vec![RData::Ns(sub("ns1")), RData::Ns(sub("ns2"))]),
            set(sub("ns1"), vec![RData::A(ip("192.253.254.21"))]),
            set(sub("ns2"), vec![RData::A(ip("192.253.254.22"))]),
        ] {
            z.insert(self.sign(&self.k1_key, &k1, rrset));
        }
        z
    }

    /// Server built by applying the fixture messages.
    pub fn server(&self) -> HandleServer {
        let mut server = HandleServer::new(root_name(), Some(self.root_key.clone()));
        for msg in self.messages() {
            let v = server.apply_update(msg.clone(), now());
            assert!(v.is_accepted(), "fixture message {} {} rejected: {v:?}", msg.action, msg.target);
        }
        server.load_zone(&self.root_aux(), now()).unwrap();
        server.load_zone(&self.k1_aux(), now()).unwrap();
        server
    }

    /// Zone files as written to disk: (file stem, text).
    pub fn zone_texts(&self) -> Vec<(String, String)> {
        let server = self.server();
        let mut out = vec![("root".to_string(), serialize_zone(&server.root_zone(inception())))];
        for (stem, apex) in [("k1", &self.k1), ("k3", &self.k3), ("kc", &self.kc)] {
            out.push((stem.to_string(), serialize_zone(&server.owner_zone(apex, inception()))));
        }
        out
    }

    /// Server built only from the zone files on disk.
    pub fn server_from_zone_files(&self) -> HandleServer {
        let mut server = HandleServer::new(root_name(), Some(self.root_key.clone()));
        for stem in ["root", "k1", "k3", "kc"] {
            let path = fixtures_dir().join("zones").join(format!("{stem}.zone"));
            let text = std::fs::read_to_string(&path).unwrap();
            let zone = parse_zone(&text).unwrap();
            server.load_zone(&zone, now()).unwrap_or_else(|e| panic!("{stem}: {e:?}"));
        }
        server
    }

    /// Populates a server data directory with the fixture root key and
    /// zone files.
    pub fn write_data_dir(&self, dir: &Path) {
        std::fs::create_dir_all(dir.join("zones")).unwrap();
        std::fs::copy(key_path("root"), dir.join("root.key")).unwrap();
        for stem in ["root", "k1", "k3", "kc"] {
            let name = format!("{stem}.zone");
            std::fs::copy(fixtures_dir().join("zones").join(&name), dir.join("zones").join(&name)).unwrap();
        }
    }
}

pub fn generate_missing_keys() {
    std::fs::create_dir_all(fixtures_dir().join("keys")).unwrap();
    for name in KEY_NAMES {
        let path = key_path(name);
        if !path.exists() {
            let kp = KeyPair::generate(AlgorithmCode::RSA_SHA1).unwrap();
            std::fs::write(&path, kp.to_secret_file().unwrap()).unwrap();
        }
    }
}

/// SHA-1 written out from its definition, independent of the library's
/// hashing dependency.
pub fn sha1_oracle(data: &[u8]) -> [u8; 20] {
    let mut h: [u32; 5] = [0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476, 0xC3D2E1F0];
    let mut msg = data.to_vec();
    let bit_len = (data.len() as u64).wrapping_mul(8);
    msg.push(0x80);
    while msg.len() % 64 != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&bit_len.to_be_bytes());
    for block in msg.chunks(64) {
        let mut w = [0u32; 80];
        for (i, word) in block.chunks(4).enumerate() {
            w[i] = u32::from_be_bytes([word[0], word[1], word[2], word[3]]);
        }
        for i in 16..80 {
            w[i] = (w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16]).rotate_left(1);
        }
        let [mut a, mut b, mut c, mut d, mut e] = h;
        for (i, wi) in w.iter().enumerate() {
            let (f, k) = match i {
                0..=19 => ((b & c) | (!b & d), 0x5A827999),
                20..=39 => (b ^ c ^ d, 0x6ED9EBA1),
                40..=59 => ((b & c) | (b & d) | (c & d), 0x8F1BBCDC),
                _ => (b ^ c ^ d, 0xCA62C1D6),
            };
            let t = a.rotate_left(5).wrapping_add(f).wrapping_add(e).wrapping_add(k).wrapping_add(*wi);
            e = d;
            d = c;
            c = b.rotate_left(30);
            b = a;
            a = t;
        }
        for (x, y) in h.iter_mut().zip([a, b, c, d, e]) {
            *x = x.wrapping_add(y);
        }
    }
    let mut out = [0u8; 20];
    for (i, x) in h.iter().enumerate() {
        out[i * 4..i * 4 + 4].copy_from_slice(&x.to_be_bytes());
    }
    out
}

pub fn hex_upper(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect()
}
