mod common;

use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::sync::OnceLock;

use common::*;
use onhs_core::crypto::{AlgorithmCode, KeyPair, SignatureParams};
use onhs_core::handle::{Handle, HandleLabel};
use onhs_core::name::Name;
use onhs_core::record::{RData, RRset, SignedRRset};
use onhs_core::server::{HandleServer, Payload, UpdateMessage};
use onhs_core::zone::{build_nxt_chain, nxt_covers, parse_zone, serialize_zone, ZoneSnapshot};
use proptest::prelude::*;

fn ordinal() -> impl Strategy<Value = String> {
    prop_oneof![Just("0".to_string()), "[1-9][0-9]{0,12}"]
}

fn child_label() -> impl Strategy<Value = HandleLabel> {
    (ordinal(), any::<bool>()).prop_map(|(o, oa)| if oa { HandleLabel::oa(&o) } else { HandleLabel::ia(&o) }.unwrap())
}

fn handle() -> impl Strategy<Value = Handle> {
    (
        1u8..=255,
        "[0-9A-F]{14,40}",
        prop::collection::vec(child_label(), 0..6),
        prop::sample::select(vec!["handleroot.example.org", "h.example", "ROOT.Example.NET"]),
    )
        .prop_map(|(alg, suffix, rest, root)| {
            let mut labels = vec![HandleLabel::pk(alg, &suffix).unwrap()];
            labels.extend(rest);
            Handle::new(labels, root).unwrap()
        })
}

fn name() -> impl Strategy<Value = Name> {
    prop::collection::vec("[a-zA-Z0-9-]{1,6}", 0..5).prop_map(|l| Name::from_labels(l).unwrap())
}

proptest! {
    #[test]
    fn handle_text_round_trips(h in handle()) {
        let root = h.root_suffix().to_string();
        prop_assert_eq!(Handle::parse(&h.to_fqdn(), &root).unwrap(), h.clone());
        let rel = Handle::parse(&format!("{}.{root}", h.relative_text()), &root).unwrap();
        prop_assert_eq!(&rel, &h);
        for label in h.labels() {
            prop_assert_eq!(&HandleLabel::parse(&label.encode()).unwrap(), label);
        }
    }

    #[test]
    fn handle_structure_is_consistent(h in handle(), extra in child_label()) {
        let child = h.child(extra).unwrap();
        prop_assert_eq!(child.parent().unwrap(), h.clone());
        prop_assert!(child.is_descendant_of(&h));
        prop_assert!(h < child);
        prop_assert_eq!(child.apex(), h.apex());
        prop_assert_eq!(child.depth(), h.depth() + 1);
    }

    #[test]
    fn canonical_order_is_a_total_order(a in name(), b in name(), c in name()) {
        prop_assert_eq!(a.cmp(&b), b.cmp(&a).reverse());
        prop_assert_eq!(a.cmp(&b) == std::cmp::Ordering::Equal, a == b);
        if a <= b && b <= c {
            prop_assert!(a <= c);
        }
        if let Some(p) = a.parent() {
            prop_assert!(p < a);
        }
        let upper = Name::parse(&a.to_fqdn().to_uppercase()).unwrap();
        prop_assert_eq!(upper.cmp(&a), std::cmp::Ordering::Equal);
    }
}

fn zone_key() -> &'static KeyPair {
    static KEY: OnceLock<KeyPair> = OnceLock::new();
    KEY.get_or_init(|| KeyPair::generate(AlgorithmCode::ED25519).unwrap())
}

fn apex() -> Name {
    Name::parse("h1g15k0123456789ABCDEF.handleroot.example.org").unwrap()
}

fn sign(set: RRset) -> SignedRRset {
    let key = zone_key();
    let params = SignatureParams::for_rrset(&set, key.public.algorithm(), apex(), inception(), LIFETIME, 3);
    SignedRRset::sign(set, &key.secret, params).unwrap()
}

#[derive(Debug, Clone)]
enum Entry {
    A(Vec<[u8; 4]>),
    Txt(String),
    Ns(String),
}

fn entry() -> impl Strategy<Value = (Vec<String>, Entry)> {
    let owner = prop::collection::vec("h[02]k[1-9][0-9]{0,2}", 0..4);
    let data = prop_oneof![
        prop::collection::btree_set(any::<[u8; 4]>(), 1..4).prop_map(|s| Entry::A(s.into_iter().collect())),
        "[ -~]{0,40}".prop_map(Entry::Txt),
        "[a-z]{1,8}\\.example\\.com".prop_map(Entry::Ns),
    ];
    (owner, data)
}

fn build_zone(entries: &[(Vec<String>, Entry)]) -> ZoneSnapshot {
    let mut zone = ZoneSnapshot::new(apex());
    for (rel, e) in entries {
        let owner = apex().prepend(rel).unwrap();
        let rdata = match e {
            Entry::A(addrs) => addrs.iter().map(|o| RData::A(Ipv4Addr::from(*o))).collect(),
            Entry::Txt(t) => vec![RData::Txt(t.clone())],
            Entry::Ns(n) => vec![RData::Ns(Name::parse(n).unwrap())],
        };
        zone.insert(sign(RRset::new(owner, 3600, rdata).unwrap()));
    }
    zone.replace_nxt_chain(sign);
    zone
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zone_text_round_trips(entries in prop::collection::vec(entry(), 1..12)) {
        let zone = build_zone(&entries);
        let text = serialize_zone(&zone);
        let parsed = parse_zone(&text).unwrap();
        prop_assert_eq!(parsed.len(), zone.len());
        for set in zone.rrsets() {
            prop_assert_eq!(parsed.get(set.owner(), set.rtype()), Some(set));
        }
        prop_assert_eq!(serialize_zone(&parsed), text);
    }

    #[test]
    fn nxt_chain_is_closed_and_exact(
        entries in prop::collection::vec(entry(), 1..12),
        probes in prop::collection::vec(prop::collection::vec("h[02]k[1-9][0-9]{0,2}", 0..4), 1..16),
    ) {
        let zone = build_zone(&entries);
        let chain = build_nxt_chain(&zone);
        let owners: BTreeSet<Name> = zone.owner_names();
        prop_assert_eq!(chain.len(), owners.len());
        let links: Vec<(Name, Name)> = chain
            .iter()
            .map(|r| match &r.rdata {
                RData::Nxt { next, .. } => (r.owner.clone(), next.clone()),
                other => panic!("not an NXT: {other:?}"),
            })
            .collect();
        let targets: BTreeSet<Name> = links.iter().map(|(_, n)| n.clone()).collect();
        prop_assert_eq!(&targets, &owners);
        for probe in probes {
            let name = apex().prepend(&probe).unwrap();
            let covering = links.iter().filter(|(o, n)| nxt_covers(o, n, &name)).count();
            if owners.contains(&name) {
                prop_assert_eq!(covering, 0);
            } else {
                prop_assert_eq!(covering, 1);
            }
        }
    }
}

/// Claims and creations apply first, parents before children; the pool
/// mixes every other kind of update over those handles.
fn update_pool() -> &'static (Vec<UpdateMessage>, Vec<UpdateMessage>) {
    static POOL: OnceLock<(Vec<UpdateMessage>, Vec<UpdateMessage>)> = OnceLock::new();
    POOL.get_or_init(|| {
        let fx = Fixture::load();
        let (s1, s3) = (fx.signer(&fx.k1_key), fx.signer(&fx.k3_key));
        let mut prefix = vec![s1.claim(&fx.k1).unwrap(), s3.claim(&fx.k3).unwrap()];
        prefix.push(s3.message(&under(&fx.k3, "h0k4"), Payload::CreateChild, 1).unwrap());
        let mut pool = Vec::new();
        for (i, rel) in ["h0k1", "h0k2", "h0k1.h0k1", "h2k3"].iter().enumerate() {
            let target = under(&fx.k1, rel);
            prefix.push(s1.message(&target, Payload::CreateChild, 1).unwrap());
            for serial in 1..=3u64 {
                let address = Ipv4Addr::new(10, i as u8, serial as u8, 1);
                pool.push(s1.message(&target, Payload::Assign { address, ttl: 60 }, serial).unwrap());
            }
            pool.push(s1.message(&target, Payload::Delegate { target: under(&fx.k3, "h0k9") }, 2).unwrap());
        }
        pool.push(s1.message(&under(&fx.k1, "h0k2"), Payload::Cancel, 1).unwrap());
        pool.push(s1.message(&under(&fx.k1, "h0k1"), Payload::Transfer { target: under(&fx.k3, "h0k4") }, 1).unwrap());
        // Wrong signer: always rejected, never changes state.
        pool.push(s3.message(&under(&fx.k1, "h0k2"), Payload::Cancel, 9).unwrap());
        (prefix, pool)
    })
}

fn apply(order: impl IntoIterator<Item = usize>) -> HandleServer {
    let (prefix, pool) = update_pool();
    let mut server = HandleServer::new(root_name(), None);
    for m in prefix {
        server.apply_update(m.clone(), now());
    }
    for i in order {
        server.apply_update(pool[i].clone(), now());
    }
    server
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn merge_is_order_independent_and_idempotent(
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..30),
        seed in any::<u64>(),
    ) {
        let n = update_pool().1.len();
        let order: Vec<usize> = picks.iter().map(|p| p.index(n)).collect();
        let once = apply(order.clone()).canonical_state();

        let mut shuffled = order.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(&apply(shuffled).canonical_state(), &once);

        let twice: Vec<usize> = order.iter().chain(order.iter()).copied().collect();
        prop_assert_eq!(&apply(twice).canonical_state(), &once);
    }

    #[test]
    fn irrevocable_status_never_regresses(picks in prop::collection::vec(any::<prop::sample::Index>(), 1..30)) {
        let (prefix, pool) = update_pool();
        let mut server = HandleServer::new(root_name(), None);
        for m in prefix {
            server.apply_update(m.clone(), now());
        }
        let targets: BTreeSet<Handle> = pool.iter().map(|m| m.target.clone()).collect();
        let mut seen = Vec::new();
        for p in picks {
            server.apply_update(pool[p.index(pool.len())].clone(), now());
            for t in &targets {
                let st = server.status(t);
                if st.cancelled || st.transferred_to.is_some() {
                    seen.push((t.clone(), st.cancelled, st.transferred_to.clone()));
                }
            }
            for (t, cancelled, transferred) in &seen {
                let st = server.status(t);
                prop_assert!(!cancelled || st.cancelled);
                prop_assert!(transferred.is_none() || &st.transferred_to == transferred);
            }
        }
    }
}
