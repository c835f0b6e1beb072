mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use onhs_core::client::HandleService;
use onhs_core::net::{Dispatcher, Kind, NetServer, SubscribeRequest, TcpClient};
use onhs_core::resolution::Outcome;
use onhs_core::server::{Payload, Verdict};

fn serve() -> (Fixture, NetServer) {
    let fx = Fixture::load();
    let dispatcher = Dispatcher::with_clock(fx.server(), Arc::new(now));
    let net = NetServer::bind(Arc::new(dispatcher), "127.0.0.1:0").unwrap();
    (fx, net)
}

fn connect(net: &NetServer) -> TcpClient {
    TcpClient::connect(net.local_addr(), Duration::from_secs(5)).unwrap()
}

#[test]
fn audit_follower_sees_history_then_live_events() {
    let (fx, net) = serve();
    let writer = connect(&net);
    let first = fx.signer(&fx.k1_key).message(&under(&fx.k1, "h0k8"), Payload::CreateChild, 1).unwrap();
    assert_eq!(writer.submit(&first).unwrap(), Verdict::Accepted);

    let req = SubscribeRequest {
        handle: fx.k1.clone(),
        endpoint: "test".into(),
        owner_proof: None,
        history: true,
    };
    let mut follower = connect(&net).subscribe(&req).unwrap();
    // The fixture's own updates come first, in arrival order.
    let mut past = Vec::new();
    for _ in 0..follower.history {
        past.push(follower.next_event(Duration::from_secs(5)).unwrap().unwrap());
    }
    assert!(past.windows(2).all(|w| w[0].seq < w[1].seq));
    assert!(past.iter().all(|e| e.message.target.is_descendant_of(&fx.k1)));
    assert_eq!(past.last().unwrap().message, first);

    let forged = fx
        .signer(&fx.k3_key)
        .message(&under(&fx.k1, "h0k8"), Payload::Assign { address: ip("10.0.0.1"), ttl: 60 }, 2)
        .unwrap();
    assert!(!writer.submit(&forged).unwrap().is_accepted());
    let live = follower.next_event(Duration::from_secs(5)).unwrap().unwrap();
    assert_eq!(live.message, forged);
    assert!(!live.verdict.is_accepted());

    // Updates elsewhere are not reported.
    let elsewhere = fx.signer(&fx.k3_key).message(&under(&fx.k3, "h0k8"), Payload::CreateChild, 1).unwrap();
    writer.submit(&elsewhere).unwrap();
    assert!(follower.next_event(Duration::from_millis(300)).unwrap().is_none());
    net.shutdown();
}

#[test]
fn concurrent_clients_get_consistent_answers() {
    let (fx, net) = serve();
    let leaf = fx.leaf();
    let addr = net.local_addr();
    let threads: Vec<_> = (0..8)
        .map(|_| {
            let leaf = leaf.clone();
            std::thread::spawn(move || {
                let client = TcpClient::connect(addr, Duration::from_secs(5)).unwrap();
                (0..25).map(|_| client.resolve(&leaf).unwrap().outcome).collect::<Vec<_>>()
            })
        })
        .collect();
    for t in threads {
        for outcome in t.join().unwrap() {
            assert_eq!(outcome, Outcome::Address(ip("192.253.254.63")));
        }
    }
    net.shutdown();
}

#[test]
fn garbage_gets_an_error_and_the_connection_recovers() {
    let (fx, net) = serve();
    let client = connect(&net);
    let mut junk = 5u32.to_be_bytes().to_vec();
    junk.extend_from_slice(b"{nope");
    client.send_raw(&junk).unwrap();
    let reply = client.read_message().unwrap().unwrap();
    assert_eq!(reply.kind, Kind::Error);
    assert_eq!(reply.body["error"], "malformed-frame");
    assert_eq!(client.resolve(&fx.leaf()).unwrap().outcome, Outcome::Address(ip("192.253.254.63")));

    let big = connect(&net);
    big.send_raw(&u32::MAX.to_be_bytes()).unwrap();
    let reply = big.read_message().unwrap().unwrap();
    assert_eq!(reply.body["error"], "frame-too-large");
    net.shutdown();
}
