//! The long-running node service: a single owner thread consumes inbound
//! frames and timer deadlines, drives the protocol state machine through
//! wall-clock-aligned epochs and serves client requests.
//!
//! Epochs are derived from the clock itself: epoch number = now / period,
//! so loosely synchronized nodes share both the schedule and the message
//! epoch tags without any coordination. Within an epoch the last f+2
//! round slots are the replicate rounds and the signing round; everything
//! before them is the collection window. A frame that arrives after its
//! round's deadline is simply not heard.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use logres_core::crypto::{KeyPair, NodeId, PublicRegistry};
use logres_core::log::{Entry, EntrySet, Log, LogCertificate};
use logres_core::node::{LogSignatureMsg, NodeParams, NodeState, Phase};
use logres_core::replicate::{ReplicateMsg, Role, WitnessedValue};
use logres_core::wire::{self, Frame, FrameType, SUBMIT_OK, SUBMIT_REJECTED};

use crate::config::{Behavior, Deployment};
use crate::transport::{spawn_listener, Inbound, PeerLink};

/// Genesis expiration shared by every node of a deployment; arbitrary but
/// part of the deterministic initial state.
const GENESIS_EXPIRATION_MS: u64 = 1;

pub fn unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .expect("clock after the epoch")
        .as_millis() as u64
}

pub fn sleep_until_ms(deadline: u64) {
    loop {
        let now = unix_ms();
        if now >= deadline {
            return;
        }
        thread::sleep(Duration::from_millis((deadline - now).min(50)));
    }
}

pub struct NodeHandle {
    pub id: NodeId,
    pub addr: String,
    shutdown: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl NodeHandle {
    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        // wake the accept loop so it observes the flag
        let _ = std::net::TcpStream::connect(&self.addr);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

/// Starts listener and service threads for one node and returns
/// immediately.
pub fn run_node(dep: Deployment) -> io::Result<NodeHandle> {
    std::fs::create_dir_all(&dep.data_dir)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let (events_tx, events_rx) = sync_channel::<Inbound>(4096);
    let addr = spawn_listener(dep.self_addr(), events_tx, shutdown.clone())?;
    let id = dep.self_id;
    let flag = shutdown.clone();
    let join = thread::Builder::new()
        .name(format!("logres-node-{}", id.0))
        .spawn(move || Service::new(dep, events_rx, flag).run())?;
    Ok(NodeHandle {
        id,
        addr: addr.to_string(),
        shutdown,
        join: Some(join),
    })
}

/// Runs the node on the calling thread until the process dies.
pub fn run_node_blocking(dep: Deployment) -> io::Result<()> {
    let mut handle = run_node(dep)?;
    if let Some(join) = handle.join.take() {
        let _ = join.join();
    }
    Ok(())
}

struct Service {
    dep: Deployment,
    reg: PublicRegistry,
    kp: KeyPair,
    state: NodeState,
    links: Vec<Option<PeerLink>>,
    events: Receiver<Inbound>,
    shutdown: Arc<AtomicBool>,
    /// Replicate messages buffered per round of the current epoch.
    repl_buf: BTreeMap<u32, Vec<ReplicateMsg>>,
    /// Signing messages of the current epoch.
    sig_buf: Vec<LogSignatureMsg>,
    /// Frames that arrived early for the next epoch.
    ahead: Vec<PendingMsg>,
    /// Client entries received outside the collection window.
    stash: Vec<Entry>,
    drop_count: u64,
}

enum PendingMsg {
    Repl(ReplicateMsg),
    Sig(LogSignatureMsg),
}

impl Service {
    fn new(dep: Deployment, events: Receiver<Inbound>, shutdown: Arc<AtomicBool>) -> Service {
        let reg = dep.registry();
        let kp = dep.keypair();
        let params = NodeParams {
            n: dep.n(),
            f: dep.f,
            max_entry_bytes: dep.max_entry_bytes,
            replication_rounds: dep.f as u32 + 1,
            variant: Default::default(),
        };
        let mut state = NodeState::new(
            dep.self_id,
            params,
            Log::genesis(GENESIS_EXPIRATION_MS),
        );
        load_snapshot(&dep.data_dir, &mut state);

        let delay = Duration::from_millis(dep.link_delay_ms);
        let links = dep
            .nodes
            .iter()
            .map(|n| {
                if n.id == dep.self_id {
                    None
                } else {
                    Some(PeerLink::spawn(n.addr.clone(), delay, shutdown.clone()))
                }
            })
            .collect();

        Service {
            dep,
            reg,
            kp,
            state,
            links,
            events,
            shutdown,
            repl_buf: BTreeMap::new(),
            sig_buf: Vec::new(),
            ahead: Vec::new(),
            stash: Vec::new(),
            drop_count: 0,
        }
    }

    fn stopping(&self) -> bool {
        self.shutdown.load(Ordering::Relaxed)
    }

    fn run(mut self) {
        while !self.stopping() {
            self.run_epoch();
        }
    }

    fn run_epoch(&mut self) {
        let period = self.dep.period_ms;
        let round = self.dep.round_ms;
        let now = unix_ms();
        let epoch_no = now / period;
        let epoch_end = (epoch_no + 1) * period;
        let collection_end = epoch_end - self.dep.round_slots() * round;

        // the epoch tag comes from the clock, so all nodes agree on it
        self.state.epoch = epoch_no;
        self.repl_buf.clear();
        self.sig_buf.clear();
        for pending in std::mem::take(&mut self.ahead) {
            match pending {
                PendingMsg::Repl(m) if m.epoch == epoch_no => {
                    self.repl_buf.entry(m.round).or_default().push(m)
                }
                PendingMsg::Sig(m) if m.epoch == epoch_no => self.sig_buf.push(m),
                _ => self.drop_count += 1,
            }
        }
        for entry in std::mem::take(&mut self.stash) {
            let _ = self.state.collect(entry);
        }

        // collection window; with a lagging start we may already be past
        // it, in which case this epoch runs with whatever is stashed
        self.pump_until(collection_end.min(epoch_end));
        if self.stopping() {
            return;
        }
        if unix_ms() >= epoch_end {
            // woke up too late for the round slots; skip the epoch
            self.state.epoch = epoch_no;
            return;
        }

        self.state.begin_replication();
        let rounds = self.dep.f as u32 + 1;
        for protocol_round in 1..=rounds {
            let mut outgoing = self.state.replication_send(&self.kp);
            if self.dep.behavior == Behavior::Padding {
                self.pad_bundles(&mut outgoing, protocol_round);
            }
            for (recipient, bundle) in outgoing {
                self.send_to(
                    recipient,
                    Frame::new(FrameType::ReplicationBundle, wire::encode_bundle(&bundle)),
                );
            }
            self.pump_until(collection_end + protocol_round as u64 * round);
            if self.stopping() {
                return;
            }
            let inbox = self.repl_buf.remove(&protocol_round).unwrap_or_default();
            let diags = self.state.replication_next(&inbox, &self.reg, &self.kp);
            self.drop_count += diags.len() as u64;
        }

        // signing round: the candidate's timestamp is the epoch boundary,
        // identical on every node
        let sign_msg = self
            .state
            .signing_send(&self.kp, epoch_end, self.dep.period_ms);
        let frame = Frame::new(FrameType::LogSignature, wire::encode_log_sig_msg(&sign_msg));
        for id in 0..self.dep.n() {
            if NodeId(id) != self.dep.self_id {
                self.send_to(NodeId(id), frame.clone());
            }
        }
        let mut publish_latency = None;
        let buffered: Vec<LogSignatureMsg> = std::mem::take(&mut self.sig_buf);
        if let (Some(_cert), _) = self.state.signing_next(&buffered, &self.reg) {
            publish_latency = Some(unix_ms().saturating_sub(collection_end));
            self.persist_certificate();
        }
        // keep collecting signatures until the epoch closes
        loop {
            let now = unix_ms();
            if now >= epoch_end || self.stopping() {
                break;
            }
            self.pump_one(epoch_end);
            if self.state.phase == Phase::Signing {
                let batch: Vec<LogSignatureMsg> = std::mem::take(&mut self.sig_buf);
                if !batch.is_empty() {
                    if let (Some(_cert), _) = self.state.signing_next(&batch, &self.reg) {
                        publish_latency = Some(unix_ms().saturating_sub(collection_end));
                        self.persist_certificate();
                    }
                }
            }
        }
        if self.stopping() {
            return;
        }

        let outcome = self.state.end_epoch();
        self.persist_carryover();
        eprintln!(
            "[logres node {}] epoch {}: published={} carried_entries={} latency_ms={:?} drops={}",
            self.dep.self_id,
            outcome.epoch,
            outcome.published,
            outcome.carried_entries,
            publish_latency,
            self.drop_count,
        );
    }

    fn send_to(&self, recipient: NodeId, frame: Frame) {
        if let Some(Some(link)) = self.links.get(recipient.0 as usize) {
            link.send(frame);
        }
    }

    /// Consumes events until the wall-clock deadline.
    fn pump_until(&mut self, deadline: u64) {
        loop {
            if self.stopping() || unix_ms() >= deadline {
                return;
            }
            self.pump_one(deadline);
        }
    }

    fn pump_one(&mut self, deadline: u64) {
        let now = unix_ms();
        if now >= deadline {
            return;
        }
        let wait = Duration::from_millis((deadline - now).min(100));
        match self.events.recv_timeout(wait) {
            Ok(inbound) => self.handle(inbound),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => {
                self.shutdown.store(true, Ordering::Relaxed);
            }
        }
    }

    fn handle(&mut self, inbound: Inbound) {
        match inbound.frame.ftype {
            FrameType::ClientSubmit => {
                let status = match wire::decode_submit(&inbound.frame.body)
                    .ok()
                    .and_then(|bytes| Entry::new(bytes).ok())
                {
                    Some(entry) if entry.len() <= self.dep.max_entry_bytes => {
                        if self.state.phase == Phase::Collection {
                            let _ = self.state.collect(entry);
                        } else {
                            // carried into the next collection window
                            self.stash.push(entry);
                        }
                        SUBMIT_OK
                    }
                    _ => SUBMIT_REJECTED,
                };
                inbound
                    .replier
                    .send(&Frame::new(FrameType::ClientSubmit, vec![status]));
            }
            FrameType::GetCertificate => {
                let body = wire::encode_certificate_response(self.state.certificate.as_ref());
                inbound
                    .replier
                    .send(&Frame::new(FrameType::CertificateResponse, body));
            }
            FrameType::ReplicationBundle => {
                match wire::decode_bundle(&inbound.frame.body) {
                    Ok(msgs) => {
                        for msg in msgs {
                            if msg.epoch == self.state.epoch {
                                let current = self.state.replication_round().unwrap_or(u32::MAX);
                                if msg.round >= current {
                                    self.repl_buf.entry(msg.round).or_default().push(msg);
                                } else {
                                    self.drop_count += 1; // after its deadline
                                }
                            } else if msg.epoch == self.state.epoch + 1 {
                                self.ahead.push(PendingMsg::Repl(msg));
                            } else {
                                self.drop_count += 1;
                            }
                        }
                    }
                    Err(_) => self.drop_count += 1,
                }
            }
            FrameType::LogSignature => match wire::decode_log_sig_msg(&inbound.frame.body) {
                Ok(msg) => {
                    if msg.epoch == self.state.epoch {
                        self.sig_buf.push(msg);
                    } else if msg.epoch == self.state.epoch + 1 {
                        self.ahead.push(PendingMsg::Sig(msg));
                    } else {
                        self.drop_count += 1;
                    }
                }
                Err(_) => self.drop_count += 1,
            },
            FrameType::CertificateResponse => self.drop_count += 1,
        }
    }

    /// The signature-padding behavior: append, after the genuine
    /// messages, re-broadcasts of everything this node has witnessed plus
    /// its own proposal. Receivers keep the first message per thread, so
    /// the extras cost bandwidth and verification work but change no
    /// decision.
    fn pad_bundles(
        &self,
        outgoing: &mut BTreeMap<NodeId, Vec<ReplicateMsg>>,
        protocol_round: u32,
    ) {
        if protocol_round == 1 {
            return; // round 1 is the genuine proposal
        }
        let mut pad: Vec<ReplicateMsg> = Vec::new();
        for (primary, thread) in &self.state.threads {
            let mut values: Vec<WitnessedValue> = thread.round_votes.clone();
            if thread.role == Role::Primary {
                values.push(WitnessedValue {
                    value: thread.input.clone(),
                    primary: *primary,
                    witnesses: [(
                        self.dep.self_id,
                        logres_core::crypto::sign(
                            &self.kp,
                            &logres_core::crypto::vote_payload(&thread.input, *primary),
                        ),
                    )]
                    .into_iter()
                    .collect(),
                });
            }
            if !values.is_empty() {
                pad.push(ReplicateMsg {
                    sender: self.dep.self_id,
                    epoch: self.state.epoch,
                    round: protocol_round,
                    primary: *primary,
                    values,
                });
            }
        }
        if pad.is_empty() {
            return;
        }
        for id in 0..self.dep.n() {
            let recipient = NodeId(id);
            if recipient == self.dep.self_id {
                continue;
            }
            outgoing.entry(recipient).or_default().extend(pad.clone());
        }
    }

    fn persist_certificate(&self) {
        if let Some(cert) = &self.state.certificate {
            let _ = write_atomic(
                &self.dep.data_dir.join("certificate.bin"),
                &wire::encode_certificate(cert),
            );
        }
    }

    fn persist_carryover(&self) {
        let _ = write_atomic(
            &self.dep.data_dir.join("carryover.bin"),
            &self.state.entries.encode(),
        );
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn load_snapshot(dir: &Path, state: &mut NodeState) {
    if let Ok(bytes) = std::fs::read(dir.join("certificate.bin")) {
        if let Ok(cert) = wire::decode_certificate(&bytes) {
            state.log = cert.log.clone();
            state.certificate = Some(cert);
        }
    }
    if let Ok(bytes) = std::fs::read(dir.join("carryover.bin")) {
        let mut reader = logres_core::codec::Reader::new(&bytes);
        if let Ok(set) = EntrySet::decode(&mut reader) {
            for entry in set.iter() {
                let _ = state.collect(entry.clone());
            }
        }
    }
}

/// Loads the certificate snapshot a node persisted, if any.
pub fn read_certificate_snapshot(dir: &Path) -> Option<LogCertificate> {
    let bytes = std::fs::read(dir.join("certificate.bin")).ok()?;
    wire::decode_certificate(&bytes).ok()
}
