use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use onhs_core::crypto::Timestamp;
use onhs_core::server::{HandleServer, ServerConfig};

const AT: &str = "20050405000000";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_onhs"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn write_config(dir: &Path, with_fixture: bool) -> PathBuf {
    let data = dir.join("data");
    std::fs::create_dir_all(data.join("zones")).unwrap();
    if with_fixture {
        std::fs::copy(fixtures().join("keys/root.key"), data.join("root.key")).unwrap();
        for entry in std::fs::read_dir(fixtures().join("zones")).unwrap() {
            let path = entry.unwrap().path();
            std::fs::copy(&path, data.join("zones").join(path.file_name().unwrap())).unwrap();
        }
    }
    let conf = dir.join("onhs.conf");
    std::fs::write(&conf, "root_zone = handleroot.example.org\nlisten = 127.0.0.1:0\ndata_dir = data\n").unwrap();
    conf
}

struct Served {
    child: Child,
    addr: String,
}

impl Served {
    fn start(conf: &Path, at: Option<&str>) -> Served {
        let mut cmd = bin();
        if let Some(t) = at {
            cmd.args(["--at", t]);
        }
        let mut child = cmd
            .args(["serve", "--config"])
            .arg(conf)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").expect("listen line").to_string();
        Served { child, addr }
    }

    fn run(&self, args: &[&str]) -> Output {
        bin().args(["--server", &self.addr]).args(args).output().unwrap()
    }

    /// SIGKILL, no chance to flush or clean up.
    fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn k1_label() -> String {
    let zone = std::fs::read_to_string(fixtures().join("zones/k1.zone")).unwrap();
    let start = zone.find("h1g5k").unwrap();
    zone[start..].chars().take_while(|c| c.is_ascii_alphanumeric()).collect()
}

fn keygen(dir: &Path, name: &str) -> (PathBuf, String) {
    let path = dir.join(name);
    let out = bin().args(["keygen", "--alg", "15", "--out"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let apex = stdout(&out).trim().to_string();
    let label = apex.split('.').next().unwrap().to_string();
    (path, label)
}

#[test]
fn keygen_writes_both_files_and_prints_the_apex() {
    let dir = tempfile::tempdir().unwrap();
    let (path, label) = keygen(dir.path(), "a.key");
    assert!(label.starts_with("h1g15k"));
    assert_eq!(label.len(), "h1g15k".len() + 16);
    assert!(path.exists());
    assert!(dir.path().join("a.key.pub").exists());
}

#[test]
fn resolves_and_verifies_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let served = Served::start(&write_config(dir.path(), true), Some(AT));
    let k1 = k1_label();

    let out = served.run(&["--at", AT, "resolve", &format!("h0k2.h0k3.{k1}"), "--verify"]);
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("address: 192.253.254.63"), "{text}");
    assert!(text.contains("verification: ACCEPT"), "{text}");

    let out = served.run(&["--at", AT, "resolve", &format!("h0k5.h0k1.{k1}"), "--verify"]);
    let text = stdout(&out);
    assert!(text.contains("TRANSFERRED_AND_ADDRESS(192.253.254.75)"), "{text}");
    assert!(text.contains("(transfer)"), "{text}");

    // Fixture signatures have long expired by the real clock.
    let out = served.run(&["resolve", &format!("h0k2.h0k3.{k1}"), "--verify"]);
    assert_eq!(out.status.code(), Some(3), "{}", stdout(&out));
    assert!(stdout(&out).contains("verification: REJECT"));
}

#[test]
fn compromised_fixture_handle_exits_with_status_3() {
    let dir = tempfile::tempdir().unwrap();
    let served = Served::start(&write_config(dir.path(), true), Some(AT));
    let zone = std::fs::read_to_string(fixtures().join("zones/kc.zone")).unwrap();
    let start = zone.find("h1g5k").unwrap();
    let kc: String = zone[start..].chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
    let out = served.run(&["--at", AT, "resolve", &format!("h0k1.{kc}"), "--verify"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("outcome: COMPROMISED"), "{}", stdout(&out));
}

#[test]
fn mutations_follow_serial_order() {
    let dir = tempfile::tempdir().unwrap();
    let served = Served::start(&write_config(dir.path(), false), None);
    let (key, apex) = keygen(dir.path(), "owner.key");
    let key = key.to_str().unwrap();
    let leaf = format!("h0k1.{apex}");

    assert!(served.run(&["--key", key, "claim"]).status.success());
    assert!(served.run(&["--key", key, "--serial", "1", "create", "--parent", &apex, "--ordinal", "1"]).status.success());
    assert!(served.run(&["--key", key, "--serial", "7", "assign", &leaf, "10.1.1.7"]).status.success());
    let stale = served.run(&["--key", key, "--serial", "3", "assign", &leaf, "10.1.1.3"]);
    assert_eq!(stale.status.code(), Some(2));
    assert!(stdout(&stale).contains("stale-serial"));

    let out = served.run(&["resolve", &leaf, "--verify"]);
    assert!(stdout(&out).contains("address: 10.1.1.7"), "{}", stdout(&out));

    let (_, other) = keygen(dir.path(), "other.key");
    let forged = served.run(&["--key", key, "--serial", "9", "assign", &format!("h0k1.{other}"), "10.9.9.9"]);
    assert_eq!(forged.status.code(), Some(2));

    let audit = served.run(&["--key", key, "audit", &apex]);
    let text = stdout(&audit);
    assert_eq!(text.lines().count(), 4, "{text}");
    assert!(text.contains("rejected:stale-serial"));

    assert!(served.run(&["--key", key, "--serial", "8", "cancel", &leaf]).status.success());
    let out = served.run(&["resolve", &leaf]);
    assert!(stdout(&out).contains("outcome: CANCELLED"), "{}", stdout(&out));
}

#[test]
fn bad_input_exits_with_status_1() {
    let out = bin().args(["--server", "127.0.0.1:1", "resolve", "not a handle!"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn state_survives_kill_9() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), false);
    let (key, apex) = keygen(dir.path(), "owner.key");
    let key = key.to_str().unwrap();
    let handles: Vec<String> = (1..=5).map(|i| format!("h0k{i}.{apex}")).collect();

    let served = Served::start(&conf, None);
    assert!(served.run(&["--key", key, "claim"]).status.success());
    for (i, h) in handles.iter().enumerate() {
        let ordinal = (i + 1).to_string();
        assert!(served.run(&["--key", key, "--serial", "1", "create", "--parent", &apex, "--ordinal", &ordinal]).status.success());
        let addr = format!("10.2.0.{}", i + 1);
        assert!(served.run(&["--key", key, "--serial", "2", "assign", h, &addr]).status.success());
    }
    served.run(&["--key", key, "--serial", "3", "transfer", &handles[4], &handles[0]]);
    served.run(&["--key", key, "--serial", "3", "cancel", &handles[3]]);
    let before: Vec<String> = handles.iter().map(|h| stdout(&served.run(&["resolve", h]))).collect();
    served.kill();

    let served = Served::start(&conf, None);
    let after: Vec<String> = handles.iter().map(|h| stdout(&served.run(&["resolve", h]))).collect();
    assert_eq!(before, after);
    assert!(after[4].contains("TRANSFERRED_AND_ADDRESS(10.2.0.1)"), "{}", after[4]);
    assert!(after[3].contains("CANCELLED"), "{}", after[3]);
    served.kill();

    let config = ServerConfig::load(&conf).unwrap();
    let (_, report) = HandleServer::open(&config, Timestamp::now()).unwrap();
    assert_eq!(report.replayed, 1 + 2 * 5 + 2);
    assert_eq!(report.mismatched, 0);
    assert!(!report.truncated_tail);
}

#[test]
fn compromise_accepts_either_date_form() {
    let dir = tempfile::tempdir().unwrap();
    let served = Served::start(&write_config(dir.path(), false), None);
    let (key, apex) = keygen(dir.path(), "owner.key");
    let key = key.to_str().unwrap();
    assert!(served.run(&["--key", key, "claim"]).status.success());
    let bad = served.run(&["--key", key, "compromise", &apex, "--note", "yesterday"]);
    assert_eq!(bad.status.code(), Some(1));
    let ok = served.run(&["--key", key, "--serial", "4", "compromise", &apex, "--note", "01/04/2003"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    let out = served.run(&["resolve", &apex, "--verify"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("outcome: COMPROMISED"), "{}", stdout(&out));
    let dump = bin()
        .args(["zone", "dump", "-", "--config"])
        .arg(dir.path().join("onhs.conf"))
        .output()
        .unwrap();
    assert!(stdout(&dump).contains("Compromised 2003-04-01"), "{}", stdout(&dump));
}
