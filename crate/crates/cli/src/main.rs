use std::io::Write;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use onhs_core::client::{
    cancel_old_key, key_upgrade, resolve_and_verify, ClientError, EvidenceResult, HandleService, UpgradeOptions,
    VerifiedResolution, Verifier,
};
use onhs_core::crypto::{derive_pk_label, public_key_file, sign_rrset, AlgorithmCode, KeyPair, SignatureParams, Timestamp};
use onhs_core::handle::{Handle, HandleLabel};
use onhs_core::net::{Dispatcher, NetServer, SubscribeRequest, TcpClient};
use onhs_core::resolution::Resolution;
use onhs_core::server::message::parse_compromise_text;
use onhs_core::server::{audit_proof_rrset, AuditEvent, HandleServer, Payload, ServerConfig, Signer, UpdateMessage, Verdict};
use onhs_core::zone::{parse_duration, parse_zone, serialize_zone};

/// Like `println!`, but a closed pipe ends the process quietly.
macro_rules! say {
    (no_newline $($arg:tt)*) => {
        exit_on_broken_pipe(write!(std::io::stdout(), $($arg)*))
    };
    ($($arg:tt)*) => {
        exit_on_broken_pipe(writeln!(std::io::stdout(), $($arg)*))
    };
}

fn exit_on_broken_pipe(r: std::io::Result<()>) {
    if let Err(e) = r {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

const DEFAULT_ROOT: &str = "handleroot.example.org";

/// Exit status for a rejected update or a failed verification.
const EXIT_REJECTED: u8 = 2;
const EXIT_UNVERIFIED: u8 = 3;

#[derive(Parser)]
#[command(name = "onhs", version, about = "Open Network Handle System client and server")]
struct Cli {
    /// Handle server address.
    #[arg(long, global = true, default_value = "127.0.0.1:5353")]
    server: String,
    /// Secret key file used to sign updates.
    #[arg(long, global = true)]
    key: Option<PathBuf>,
    /// Handle root zone; handles may be written relative to it.
    #[arg(long, global = true, default_value = DEFAULT_ROOT)]
    root: String,
    /// Update serial. Defaults to the current Unix time so later updates win.
    #[arg(long, global = true)]
    serial: Option<u64>,
    /// Signature lifetime, e.g. 30d.
    #[arg(long, global = true, default_value = "30d")]
    lifetime: String,
    /// Clock used for signing and verification (YYYYMMDDHHMMSS).
    #[arg(long, global = true)]
    at: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair; writes FILE (secret) and FILE.pub.
    Keygen {
        #[arg(long, default_value_t = 5)]
        alg: u8,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        suffix_len: usize,
    },
    /// Claim the public-key handle of --key.
    Claim {
        #[arg(long, default_value_t = 16)]
        suffix_len: usize,
    },
    /// Create a child handle.
    Create {
        #[arg(long)]
        parent: String,
        #[arg(long)]
        ordinal: String,
        /// Owned-authority instead of inherited-authority.
        #[arg(long)]
        oa: bool,
    },
    /// Bind a handle to an address.
    Assign {
        handle: String,
        addr: Ipv4Addr,
        #[arg(long, default_value = "1d")]
        ttl: String,
    },
    /// Temporarily delegate a handle.
    Delegate { handle: String, target: String },
    /// Irrevocably transfer a handle.
    Transfer { handle: String, target: String },
    /// Irrevocably cancel a handle.
    Cancel { handle: String },
    /// Announce that a handle's key is compromised (also cancels it).
    Compromise {
        handle: String,
        /// Date of compromise, YYYY-MM-DD or dd/mm/yyyy.
        #[arg(long)]
        note: String,
    },
    /// Resolve a handle.
    Resolve {
        handle: String,
        /// Check every signature and replay the walk locally.
        #[arg(long)]
        verify: bool,
    },
    /// Show update attempts at or below a handle.
    Audit {
        handle: String,
        /// Keep printing new events until interrupted.
        #[arg(long)]
        follow: bool,
    },
    /// Move a public-key handle's subtree to a new key, then transfer it.
    Upgrade {
        /// Secret key file of the new key.
        #[arg(long)]
        new_key: PathBuf,
        #[arg(long, default_value_t = 16)]
        suffix_len: usize,
        /// Cancel the old apex afterwards.
        #[arg(long)]
        cancel_old: bool,
    },
    /// Run a handle server.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Zone files of a server data directory.
    Zone {
        #[command(subcommand)]
        action: ZoneAction,
    },
}

#[derive(Subcommand)]
enum ZoneAction {
    /// Write the root zone, or one owner's zone, to FILE ("-" for stdout).
    Dump {
        file: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Dump this public-key handle's zone instead of the root zone.
        #[arg(long)]
        apex: Option<String>,
    },
    /// Check a zone file and install it in the data directory.
    Load {
        file: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

struct Ctx {
    server: String,
    key: Option<PathBuf>,
    root: String,
    serial: Option<u64>,
    lifetime: i64,
    now: Timestamp,
}

impl Ctx {
    fn handle(&self, text: &str) -> Result<Handle> {
        parse_handle(text, &self.root)
    }

    fn key(&self) -> Result<KeyPair> {
        let path = self.key.as_ref().ok_or_else(|| anyhow!("--key is required"))?;
        read_key(path)
    }

    fn serial(&self) -> u64 {
        self.serial.unwrap_or_else(|| self.now.unix().max(1) as u64)
    }

    fn connect(&self) -> Result<TcpClient> {
        TcpClient::connect(&self.server, Duration::from_secs(10))
            .with_context(|| format!("cannot reach handle server at {}", self.server))
    }

    fn submit(&self, target: &Handle, payload: Payload, serial: u64) -> Result<ExitCode> {
        let key = self.key()?;
        self.send(Signer::new(&key, self.now, self.lifetime).message(target, payload, serial)?)
    }

    fn send(&self, msg: UpdateMessage) -> Result<ExitCode> {
        let target = &msg.target;
        let verdict = self.connect()?.submit(&msg).map_err(|e| anyhow!("{e}"))?;
        say!("{} {}: {}", msg.action, target.to_fqdn(), verdict.tag());
        Ok(verdict_code(&verdict))
    }
}

fn verdict_code(v: &Verdict) -> ExitCode {
    if v.is_accepted() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_REJECTED)
    }
}

/// Accepts handles with or without the root suffix.
fn parse_handle(text: &str, root: &str) -> Result<Handle> {
    Handle::parse(text, root)
        .or_else(|_| Handle::parse(&format!("{}.{root}", text.trim_end_matches('.')), root))
        .with_context(|| format!("{text:?} is not a handle under {root}"))
}

fn read_key(path: &Path) -> Result<KeyPair> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    KeyPair::from_secret_file(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let now = match &cli.at {
        Some(t) => Timestamp::parse(t).map_err(|e| anyhow!("--at: {e}"))?,
        None => Timestamp::now(),
    };
    let ctx = Ctx {
        server: cli.server,
        key: cli.key,
        root: cli.root,
        serial: cli.serial,
        lifetime: i64::from(parse_duration(&cli.lifetime).ok_or_else(|| anyhow!("--lifetime: bad duration"))?),
        now,
    };
    match cli.command {
        Command::Keygen { alg, out, suffix_len } => keygen(alg, &out, suffix_len, &ctx.root),
        Command::Claim { suffix_len } => {
            let key = ctx.key()?;
            let apex = Handle::apex_of(derive_pk_label(&key.public, suffix_len)?, &ctx.root)?;
            ctx.submit(&apex, Payload::Claim { key: key.public.clone() }, 1)
        }
        Command::Create { parent, ordinal, oa } => {
            let parent = ctx.handle(&parent)?;
            let label = if oa { HandleLabel::oa(&ordinal) } else { HandleLabel::ia(&ordinal) }?;
            ctx.submit(&parent.child(label)?, Payload::CreateChild, ctx.serial())
        }
        Command::Assign { handle, addr, ttl } => {
            let ttl = parse_duration(&ttl).ok_or_else(|| anyhow!("--ttl: bad duration"))?;
            ctx.submit(&ctx.handle(&handle)?, Payload::Assign { address: addr, ttl }, ctx.serial())
        }
        Command::Delegate { handle, target } => {
            let target = ctx.handle(&target)?;
            ctx.submit(&ctx.handle(&handle)?, Payload::Delegate { target }, ctx.serial())
        }
        Command::Transfer { handle, target } => {
            let target = ctx.handle(&target)?;
            ctx.submit(&ctx.handle(&handle)?, Payload::Transfer { target }, ctx.serial())
        }
        Command::Cancel { handle } => ctx.submit(&ctx.handle(&handle)?, Payload::Cancel, ctx.serial()),
        Command::Compromise { handle, note } => {
            let date = parse_compromise_text(&format!("Compromised {}", note.trim()))
                .ok_or_else(|| anyhow!("--note must be a date, YYYY-MM-DD or dd/mm/yyyy"))?;
            let key = ctx.key()?;
            let msg = Signer::new(&key, ctx.now, ctx.lifetime).compromise(&ctx.handle(&handle)?, date, ctx.serial())?;
            ctx.send(msg)
        }
        Command::Resolve { handle, verify } => resolve(&ctx, &ctx.handle(&handle)?, verify),
        Command::Audit { handle, follow } => audit(&ctx, &ctx.handle(&handle)?, follow),
        Command::Upgrade {
            new_key,
            suffix_len,
            cancel_old,
        } => upgrade(&ctx, &new_key, suffix_len, cancel_old),
        Command::Serve { config, listen } => serve(&config, listen, cli.at.is_some().then_some(now)),
        Command::Zone { action } => zone(&ctx, action),
    }
}

fn keygen(alg: u8, out: &Path, suffix_len: usize, root: &str) -> Result<ExitCode> {
    let key = KeyPair::generate(AlgorithmCode(alg))?;
    std::fs::write(out, key.to_secret_file()?).with_context(|| format!("writing {}", out.display()))?;
    let mut public = out.as_os_str().to_owned();
    public.push(".pub");
    std::fs::write(&public, public_key_file(&key.public))?;
    let apex = Handle::apex_of(derive_pk_label(&key.public, suffix_len)?, root)?;
    say!("{}", apex.to_fqdn());
    Ok(ExitCode::SUCCESS)
}

fn print_resolution(res: &Resolution) {
    say!("handle: {}", fqdn(&res.queried));
    say!("outcome: {}", res.outcome);
    if let Some(a) = res.outcome.address() {
        say!("address: {a}");
    }
    for r in &res.rewrites {
        let kind = if r.transfer { "transfer" } else { "delegation" };
        say!("rewrite: {} -> {} ({kind})", fqdn(&r.from), fqdn(&r.to));
    }
}

fn print_verified(vr: &VerifiedResolution) {
    say!("evidence:");
    for v in &vr.verdicts {
        let verdict = match &v.result {
            EvidenceResult::Accept => "ACCEPT".to_string(),
            EvidenceResult::StaleIrrevocable => "STALE".to_string(),
            EvidenceResult::Reject(why) => format!("REJECT {why}"),
        };
        say!("  {verdict:<7} {} {}", v.owner, v.rtype);
    }
    for w in &vr.warnings {
        say!("warning: {w}");
    }
    say!("trust basis: {}", vr.trust_basis.join(", "));
}

fn resolve(ctx: &Ctx, handle: &Handle, verify: bool) -> Result<ExitCode> {
    let client = ctx.connect()?;
    if !verify {
        let res = client.resolve(handle).map_err(|e| anyhow!("{e}"))?;
        print_resolution(&res);
        return Ok(ExitCode::SUCCESS);
    }
    match resolve_and_verify(handle, &[&client], &Verifier::new(ctx.now)) {
        Ok(vr) => {
            print_resolution(&vr.resolution);
            print_verified(&vr);
            say!("verification: ACCEPT");
            Ok(ExitCode::SUCCESS)
        }
        Err(ClientError::Compromised(vr)) => {
            print_resolution(&vr.resolution);
            print_verified(&vr);
            say!("verification: ACCEPT (handle is compromised)");
            Ok(ExitCode::from(EXIT_UNVERIFIED))
        }
        Err(ClientError::VerificationFailed(why)) => {
            say!("verification: REJECT {why}");
            Ok(ExitCode::from(EXIT_UNVERIFIED))
        }
        Err(e) => Err(anyhow!("{e}")),
    }
}

fn print_event(e: &AuditEvent) {
    say!(
        "{} {} {} serial={} {}",
        e.arrival,
        e.message.action,
        e.message.target.to_fqdn(),
        e.message.serial,
        e.verdict.tag()
    );
}

fn audit(ctx: &Ctx, handle: &Handle, follow: bool) -> Result<ExitCode> {
    let endpoint = format!("onhs-cli/{}", std::process::id());
    // With the apex key at hand, prove ownership to bypass the subscriber cap.
    let owner_proof = match &ctx.key {
        Some(path) => {
            let key = read_key(path)?;
            let rrset = audit_proof_rrset(handle, &endpoint);
            let params = SignatureParams::for_rrset(
                &rrset,
                key.public.algorithm(),
                handle.apex().name(),
                ctx.now,
                ctx.lifetime,
                0,
            );
            Some(sign_rrset(&rrset, &key.secret, params)?)
        }
        None => None,
    };
    let req = SubscribeRequest {
        handle: handle.clone(),
        endpoint,
        owner_proof,
        history: true,
    };
    let mut follower = ctx.connect()?.subscribe(&req).map_err(|e| anyhow!("{e}"))?;
    for _ in 0..follower.history {
        match follower.next_event(Duration::from_secs(10)).map_err(|e| anyhow!("{e}"))? {
            Some(e) => print_event(&e),
            None => bail!("server stopped sending history"),
        }
    }
    if follow {
        let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let flag = stop.clone();
        ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst))?;
        while !stop.load(Ordering::SeqCst) {
            if let Some(e) = follower.next_event(Duration::from_millis(200)).map_err(|e| anyhow!("{e}"))? {
                print_event(&e);
                std::io::stdout().flush()?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn upgrade(ctx: &Ctx, new_key: &Path, suffix_len: usize, cancel_old: bool) -> Result<ExitCode> {
    let old = ctx.key()?;
    let new = read_key(new_key)?;
    let old_apex = Handle::apex_of(derive_pk_label(&old.public, suffix_len)?, &ctx.root)?;
    let client = ctx.connect()?;
    let opts = UpgradeOptions {
        new_algorithm: new.public.algorithm(),
        suffix_len,
        now: ctx.now,
        lifetime_secs: ctx.lifetime,
    };
    let report = key_upgrade(&old_apex, &old, Some(new), &opts, &client);
    say!("{report}");
    if !report.transferred {
        return Ok(ExitCode::from(EXIT_REJECTED));
    }
    if cancel_old {
        let r = cancel_old_key(&old_apex, &old, None, ctx.now, ctx.lifetime, &client)?;
        for w in &r.warnings {
            say!("warning: {w}");
        }
        for (action, v) in &r.verdicts {
            say!("{action} {}: {}", old_apex.to_fqdn(), v.tag());
        }
        if !r.all_accepted() {
            return Ok(ExitCode::from(EXIT_REJECTED));
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// A fixed `at` pins the server clock, for serving archived zones.
fn serve(config_path: &Path, listen: Option<String>, at: Option<Timestamp>) -> Result<ExitCode> {
    let mut config = ServerConfig::load(config_path)?;
    if let Some(l) = listen {
        config.listen = l;
    }
    let (server, report) = HandleServer::open(&config, at.unwrap_or_else(Timestamp::now))?;
    eprintln!(
        "replayed {} updates ({} verdict changes{})",
        report.replayed,
        report.mismatched,
        if report.truncated_tail { ", torn tail dropped" } else { "" }
    );
    let dispatcher = match at {
        Some(t) => Dispatcher::with_clock(server, Arc::new(move || t)),
        None => Dispatcher::new(server),
    };
    let net = NetServer::bind(Arc::new(dispatcher), &config.listen)
        .with_context(|| format!("binding {}", config.listen))?;
    let stop = net.stop_flag();
    ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst))?;
    say!("listening on {}", net.local_addr());
    std::io::stdout().flush()?;
    net.run_until_stopped();
    eprintln!("shut down");
    Ok(ExitCode::SUCCESS)
}

fn zone(ctx: &Ctx, action: ZoneAction) -> Result<ExitCode> {
    match action {
        ZoneAction::Dump { file, config, apex } => {
            let config = ServerConfig::load(&config)?;
            let (server, _) = HandleServer::open(&config, ctx.now)?;
            let zone = match apex {
                Some(a) => server.owner_zone(&ctx.handle(&a)?.apex(), ctx.now),
                None => server.root_zone(ctx.now),
            };
            let text = serialize_zone(&zone);
            if file.as_os_str() == "-" {
                say!(no_newline "{text}");
            } else {
                std::fs::write(&file, text).with_context(|| format!("writing {}", file.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        ZoneAction::Load { file, config } => {
            let config = ServerConfig::load(&config)?;
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let parsed = parse_zone(&text).with_context(|| format!("parsing {}", file.display()))?;
            let (mut server, _) = HandleServer::open(&config, ctx.now)?;
            let loaded = server
                .load_zone(&parsed, ctx.now)
                .map_err(|e| anyhow!("{} {}: {}", e.owner, e.rtype, e.detail))?;
            let name = file.file_name().ok_or_else(|| anyhow!("zone file has no name"))?;
            let dest = config.data_dir.join("zones").join(name);
            std::fs::write(&dest, text).with_context(|| format!("writing {}", dest.display()))?;
            say!("{loaded} bindings checked; installed {}", dest.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn fqdn(h: &Handle) -> String {
    h.to_fqdn().trim_end_matches('.').to_string()
}
