//! The deterministic event loop: one logical clock, one message queue,
//! every node's state owned by the loop.
//!
//! Each tick runs five phases in a fixed order: scripted faults, scripted
//! behaviors, workload submissions, message deliveries (everything due at
//! or before the current tick, in (tick, sequence) order), and round
//! timers. The only randomness is the per-message latency draw from the
//! run's seeded generator, so a `SimRun` value fully determines the event
//! log, byte for byte.
//!
//! ## The voting discipline
//!
//! Validators vote per (height, round) and lock on the block they voted
//! for: within a height they will only re-vote that same block, which is
//! what makes two certified blocks at one height impossible while at most
//! `f` validators misbehave. A lock is released after a full leader
//! rotation (n rounds) without a commit, which restores progress after a
//! partition leaves the two sides locked on different proposals. The
//! release is justified by the same rotation: every validator's slot has
//! come up, so a certificate formed in the locked round would have been
//! re-proposed and committed by now if it existed. This leans on the
//! simulation's synchrony — a formed certificate reaches every connected
//! node well within a rotation — which the latency model guarantees by
//! construction.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canon::CanonEncode;
use crate::consensus::{
    evaluate_proposal, EquivocationProof, ObserveOutcome, QuorumConfig, RejectReason,
    VoteCollector,
};
use crate::crypto::{sha256, Digest, Keypair};
use crate::ledger::{merkle_root, Chain, ChainVerdict, LedgerBlock, SignedTransaction, Vote};
use crate::rec::{
    apply, CertStatus, CertificateType, EnergySource, Participant, ParticipantId,
    ParticipantTable, RegistryState, RetirementReason, Role, TradeTarget, TransactionPayload,
};
use crate::Tick;

use super::config::{Behavior, ConfigError, FaultEvent, FaultKind, NodeConfig, SimRun};
use super::event::{EventKind, EventRecord};
use super::report::{CommitRecord, NodeSummary, SimReport};

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Message {
    SubmitTx(SignedTransaction),
    Proposal { block: LedgerBlock, round: u64 },
    VoteMsg(Vote),
    CommitMsg { block: LedgerBlock },
    Equivocation(EquivocationProof),
    SyncRequest { from: u64 },
    SyncResponse { blocks: Vec<LedgerBlock> },
}

#[derive(Debug, Clone)]
struct Envelope {
    src: ParticipantId,
    dst: ParticipantId,
    msg: Message,
}

// ---------------------------------------------------------------------------
// Per-node state
// ---------------------------------------------------------------------------

/// The block hash a validator committed its vote to for the next height,
/// and the round it did so in.
#[derive(Debug, Clone)]
struct HeightLock {
    hash: Digest,
    round: u64,
}

struct Node {
    cfg: NodeConfig,
    keypair: Keypair,
    chain: Chain,
    registry: RegistryState,
    mempool: Vec<SignedTransaction>,
    mempool_digests: BTreeSet<Digest>,
    collector: VoteCollector,
    /// Current round for the next height.
    round: u64,
    /// Tick at which the current round expires; `None` while idle.
    deadline: Option<Tick>,
    /// The (height, round) this node last proposed in, to propose at most
    /// once per slot.
    last_proposed: Option<(u64, u64)>,
    lock: Option<HeightLock>,
    /// The full block behind `lock`, kept for re-proposal.
    stored_proposal: Option<LedgerBlock>,
    /// One-shot behaviors flip this once they have fired.
    behavior_done: bool,
    /// A forged transaction waiting to be stuffed into this node's next
    /// proposal (ForgeTransaction on a validator).
    forge_pending: Option<SignedTransaction>,
}

impl Node {
    fn new(cfg: NodeConfig) -> Self {
        let keypair = Keypair::derived(cfg.id.as_str());
        Node {
            cfg,
            keypair,
            chain: Chain::with_genesis(),
            registry: RegistryState::new(),
            mempool: Vec::new(),
            mempool_digests: BTreeSet::new(),
            collector: VoteCollector::new(),
            round: 0,
            deadline: None,
            last_proposed: None,
            lock: None,
            stored_proposal: None,
            behavior_done: false,
            forge_pending: None,
        }
    }

    fn next_height(&self) -> u64 {
        self.chain.next_height()
    }

    /// Registry as it would look after the current mempool commits, used
    /// to admit transactions that depend on still-pending ones.
    fn pending_registry(&self, participants: &ParticipantTable, now: Tick) -> RegistryState {
        let mut state = self.registry.clone();
        for tx in &self.mempool {
            if let Ok(next) = apply(&state, &tx.payload, &tx.signer, participants, now) {
                state = next;
            }
        }
        state
    }
}

fn short(d: &Digest) -> String {
    d.to_hex()[..12].to_string()
}

// ---------------------------------------------------------------------------
// The engine
// ---------------------------------------------------------------------------

struct Engine {
    nodes: BTreeMap<ParticipantId, Node>,
    /// All node ids, ascending.
    order: Vec<ParticipantId>,
    /// Validator ids, ascending.
    validators: Vec<ParticipantId>,
    participants: ParticipantTable,
    config: QuorumConfig,
    seed: u64,
    latency_min: Tick,
    latency_max: Tick,
    timeout: Tick,
    tick_limit: Tick,
    rng: ChaCha8Rng,
    seq: u64,
    queue: BTreeMap<(Tick, u64), Envelope>,
    partition: Option<Vec<BTreeSet<ParticipantId>>>,
    faults: std::collections::VecDeque<FaultEvent>,
    workload: std::collections::VecDeque<super::config::Submission>,
    /// (digest, submit tick) per workload transaction, submission order.
    workload_index: Vec<(Digest, Tick)>,
    first_commit: BTreeMap<Digest, Tick>,
    events: Vec<EventRecord>,
    now: Tick,
    conservation_ok: bool,
    guarantees_void: bool,
}

impl Engine {
    fn new(sim: &SimRun) -> Result<Engine, ConfigError> {
        if sim.nodes.is_empty() {
            return Err(ConfigError::NoNodes);
        }
        if sim.latency.min > sim.latency.max {
            return Err(ConfigError::BadLatency {
                min: sim.latency.min,
                max: sim.latency.max,
            });
        }
        if sim.round_timeout == 0 {
            return Err(ConfigError::BadTimeout);
        }

        let mut participants = ParticipantTable::new();
        for cfg in &sim.nodes {
            let participant = Participant::new(
                cfg.id.clone(),
                cfg.role,
                cfg.der_level,
                Keypair::derived(cfg.id.as_str()).public(),
                cfg.is_validator,
            )
            .map_err(|_| ConfigError::BadLevel {
                role: cfg.role,
                level: cfg.der_level,
            })?;
            participants
                .insert(participant)
                .map_err(|_| ConfigError::DuplicateNode(cfg.id.clone()))?;
        }
        if !sim.nodes.iter().any(|n| n.is_validator) {
            return Err(ConfigError::NoValidators);
        }
        let config = QuorumConfig::from_table(&participants, sim.f).map_err(ConfigError::Quorum)?;

        for fault in &sim.faults {
            match &fault.kind {
                FaultKind::Partition(groups) => {
                    for group in groups {
                        for id in group {
                            if !participants.contains(id) {
                                return Err(ConfigError::UnknownNode {
                                    what: "partition",
                                    node: id.clone(),
                                });
                            }
                        }
                    }
                }
                FaultKind::Inject { node, .. } => {
                    if !participants.contains(node) {
                        return Err(ConfigError::UnknownNode {
                            what: "inject",
                            node: node.clone(),
                        });
                    }
                }
                FaultKind::Heal => {}
            }
        }
        for submission in &sim.workload {
            if !participants.contains(&submission.tx.signer) {
                return Err(ConfigError::UnknownNode {
                    what: "workload signer",
                    node: submission.tx.signer.clone(),
                });
            }
            for via in &submission.via {
                match participants.get(via) {
                    None => {
                        return Err(ConfigError::UnknownNode {
                            what: "submission target",
                            node: via.clone(),
                        })
                    }
                    Some(p) if !p.validator => {
                        return Err(ConfigError::UnknownNode {
                            what: "submission target (not a validator)",
                            node: via.clone(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }

        let mut faults = sim.faults.clone();
        faults.sort_by_key(|f| f.tick);
        let mut workload = sim.workload.clone();
        workload.sort_by_key(|s| s.tick);
        let workload_index = workload.iter().map(|s| (s.tx.digest(), s.tick)).collect();

        let nodes: BTreeMap<ParticipantId, Node> = sim
            .nodes
            .iter()
            .map(|cfg| (cfg.id.clone(), Node::new(cfg.clone())))
            .collect();
        let order: Vec<ParticipantId> = nodes.keys().cloned().collect();
        let validators: Vec<ParticipantId> = sim
            .nodes
            .iter()
            .filter(|n| n.is_validator)
            .map(|n| n.id.clone())
            .collect();
        let mut validators = validators;
        validators.sort();

        Ok(Engine {
            nodes,
            order,
            validators,
            participants,
            config,
            seed: sim.seed,
            latency_min: sim.latency.min,
            latency_max: sim.latency.max,
            timeout: sim.round_timeout,
            tick_limit: sim.tick_limit,
            rng: ChaCha8Rng::seed_from_u64(sim.seed),
            seq: 0,
            queue: BTreeMap::new(),
            partition: None,
            faults: faults.into(),
            workload: workload.into(),
            workload_index,
            first_commit: BTreeMap::new(),
            events: Vec::new(),
            now: 0,
            conservation_ok: true,
            guarantees_void: false,
        })
    }

    // -- plumbing ---------------------------------------------------------

    fn log(&mut self, node: &str, kind: EventKind, details: String) {
        self.events.push(EventRecord {
            tick: self.now,
            node: node.to_string(),
            kind,
            details,
        });
    }

    fn connected(&self, a: &ParticipantId, b: &ParticipantId) -> bool {
        let Some(groups) = &self.partition else {
            return true;
        };
        if a == b {
            return true;
        }
        let side = |id: &ParticipantId| groups.iter().position(|g| g.contains(id));
        match (side(a), side(b)) {
            (Some(x), Some(y)) => x == y,
            // A node left out of every group is cut off entirely.
            _ => false,
        }
    }

    /// Queue a message for delivery after a seeded latency draw. Messages
    /// across a partition boundary are lost at the send.
    fn send(&mut self, src: &ParticipantId, dst: &ParticipantId, msg: Message) {
        if !self.connected(src, dst) {
            return;
        }
        let latency = self.rng.gen_range(self.latency_min..=self.latency_max);
        self.seq += 1;
        self.queue.insert(
            (self.now + latency, self.seq),
            Envelope {
                src: src.clone(),
                dst: dst.clone(),
                msg,
            },
        );
    }

    fn send_validators(&mut self, src: &ParticipantId, msg: &Message) {
        for v in self.validators.clone() {
            if v != *src {
                self.send(src, &v, msg.clone());
            }
        }
    }

    fn send_all(&mut self, src: &ParticipantId, msg: &Message) {
        for id in self.order.clone() {
            if id != *src {
                self.send(src, &id, msg.clone());
            }
        }
    }

    fn byzantine_validators(&self) -> usize {
        self.nodes
            .values()
            .filter(|n| n.cfg.is_validator && !n.cfg.behavior.is_honest())
            .count()
    }

    fn check_fault_budget(&mut self) {
        let byzantine = self.byzantine_validators();
        if byzantine > self.config.f() && !self.guarantees_void {
            self.guarantees_void = true;
            self.log(
                "net",
                EventKind::GuaranteesVoid,
                format!("byzantine={} f={}", byzantine, self.config.f()),
            );
        }
    }

    // -- phase 1: faults ----------------------------------------------------

    fn fault_phase(&mut self) {
        while self
            .faults
            .front()
            .map(|f| f.tick <= self.now)
            .unwrap_or(false)
        {
            let fault = self.faults.pop_front().unwrap();
            match fault.kind {
                FaultKind::Partition(groups) => {
                    let rendered = groups
                        .iter()
                        .map(|g| {
                            g.iter().map(|id| id.as_str()).collect::<Vec<_>>().join(",")
                        })
                        .collect::<Vec<_>>()
                        .join("|");
                    self.partition = Some(groups);
                    self.log("net", EventKind::Partition, format!("groups={rendered}"));
                }
                FaultKind::Heal => {
                    self.partition = None;
                    self.log("net", EventKind::Heal, "restored=full".to_string());
                    // Every node checks for missed commits with the
                    // validators — the discrete-event stand-in for the
                    // height gossip a real network runs continuously.
                    for id in self.order.clone() {
                        let from = self.nodes[&id].next_height();
                        for v in self.validators.clone() {
                            if v != id {
                                self.send(&id, &v, Message::SyncRequest { from });
                            }
                        }
                    }
                }
                FaultKind::Inject { node, behavior } => {
                    let label = behavior.label();
                    if let Some(n) = self.nodes.get_mut(&node) {
                        n.cfg.behavior = behavior;
                        n.behavior_done = false;
                    }
                    self.log(node.as_str(), EventKind::Inject, format!("behavior={label}"));
                    self.check_fault_budget();
                }
            }
        }
    }

    // -- phase 2: scripted behaviors ----------------------------------------

    fn behavior_phase(&mut self) {
        for id in self.order.clone() {
            let Some(mut node) = self.nodes.remove(&id) else {
                continue;
            };
            self.run_behavior(&mut node);
            self.nodes.insert(id, node);
        }
    }

    fn run_behavior(&mut self, node: &mut Node) {
        if node.behavior_done {
            return;
        }
        match node.cfg.behavior.clone() {
            Behavior::Honest | Behavior::EquivocateVotes => {
                // Equivocation happens in the voting path.
            }
            Behavior::TamperStoredBlock(height) => {
                if node.chain.len() as u64 > height {
                    node.chain.tamper_block(height, |b| {
                        b.proposed_at = b.proposed_at.wrapping_add(1);
                    });
                    node.behavior_done = true;
                }
            }
            Behavior::ForgeTransaction => {
                // Claim to be some other participant; sign with our key.
                let victim = self
                    .participants
                    .iter()
                    .find(|p| p.role == Role::Generator && p.id != node.cfg.id)
                    .or_else(|| self.participants.iter().find(|p| p.id != node.cfg.id))
                    .map(|p| p.id.clone());
                let Some(victim) = victim else {
                    node.behavior_done = true;
                    return;
                };
                let payload = TransactionPayload::Issue {
                    project_name: "phantom-plant".into(),
                    certificate_type: CertificateType::Voluntary,
                    source: EnergySource::Solar,
                    energy_mwh: 1,
                    issued_at: self.now,
                    nonce: 7777,
                };
                let nonce = node.chain.last_nonce(&victim) + 1;
                let forged =
                    SignedTransaction::sign(payload, victim, nonce, &node.keypair);
                self.send_validators(&node.cfg.id, &Message::SubmitTx(forged.clone()));
                if node.cfg.is_validator {
                    node.forge_pending = Some(forged);
                }
                node.behavior_done = true;
            }
            Behavior::ReplayTransaction => {
                let replayed = node
                    .chain
                    .get(1)
                    .and_then(|b| b.transactions.first())
                    .cloned();
                if let Some(tx) = replayed {
                    self.send_validators(&node.cfg.id, &Message::SubmitTx(tx));
                    node.behavior_done = true;
                }
            }
            Behavior::DoubleSpendAttempt(tid) => {
                let owned = node.registry.certificate(&tid).is_some_and(|c| {
                    c.owner == node.cfg.id && matches!(c.status, CertStatus::Owned)
                });
                if !owned || self.validators.len() < 2 {
                    return;
                }
                // Two conflicting spends under one nonce, handed to two
                // different validators.
                let nonce = node.chain.last_nonce(&node.cfg.id) + 1;
                let retire = SignedTransaction::sign(
                    TransactionPayload::Retire {
                        tracking_id: tid,
                        reason: RetirementReason::StatutoryOrRegulatoryUse,
                    },
                    node.cfg.id.clone(),
                    nonce,
                    &node.keypair,
                );
                let buyer = self
                    .participants
                    .iter()
                    .find(|p| p.id != node.cfg.id)
                    .map(|p| p.id.clone())
                    .expect("at least two participants");
                let trade = SignedTransaction::sign(
                    TransactionPayload::Trade {
                        target: TradeTarget::Certificate(tid),
                        new_owner: buyer,
                    },
                    node.cfg.id.clone(),
                    nonce,
                    &node.keypair,
                );
                let v0 = self.validators[0].clone();
                let v1 = self.validators[1].clone();
                self.send(&node.cfg.id, &v0, Message::SubmitTx(retire));
                self.send(&node.cfg.id, &v1, Message::SubmitTx(trade));
                node.behavior_done = true;
            }
        }
    }

    // -- phase 3: workload submissions ---------------------------------------

    fn submission_phase(&mut self) {
        while self
            .workload
            .front()
            .map(|s| s.tick <= self.now)
            .unwrap_or(false)
        {
            let submission = self.workload.pop_front().unwrap();
            let tx = submission.tx;
            let signer = tx.signer.as_str().to_string();
            self.log(
                &signer,
                EventKind::Submit,
                format!("tx={} kind={}", short(&tx.digest()), tx.payload.kind()),
            );
            let targets = if submission.via.is_empty() {
                self.validators.clone()
            } else {
                submission.via.clone()
            };
            let src = tx.signer.clone();
            for target in targets {
                self.send(&src, &target, Message::SubmitTx(tx.clone()));
            }
        }
    }

    // -- phase 4: deliveries -------------------------------------------------

    fn delivery_phase(&mut self) {
        loop {
            let Some((&key, _)) = self.queue.iter().next() else {
                break;
            };
            if key.0 > self.now {
                break;
            }
            let env = self.queue.remove(&key).unwrap();
            // A partition in force at delivery time also cuts the message.
            if !self.connected(&env.src, &env.dst) {
                continue;
            }
            let Some(mut node) = self.nodes.remove(&env.dst) else {
                continue;
            };
            match env.msg {
                Message::SubmitTx(tx) => self.on_submit(&mut node, tx),
                Message::Proposal { block, round } => {
                    self.on_proposal(&mut node, &env.src, block, round)
                }
                Message::VoteMsg(vote) => self.on_vote(&mut node, vote),
                Message::CommitMsg { block } => self.on_commit_msg(&mut node, &env.src, block),
                Message::Equivocation(proof) => self.on_equivocation(&mut node, proof),
                Message::SyncRequest { from } => self.on_sync_request(&mut node, &env.src, from),
                Message::SyncResponse { blocks } => self.on_sync_response(&mut node, blocks),
            }
            self.nodes.insert(env.dst, node);
        }
    }

    fn on_submit(&mut self, node: &mut Node, tx: SignedTransaction) {
        if !node.cfg.is_validator {
            return;
        }
        let digest = tx.digest();
        if node.mempool_digests.contains(&digest) {
            return; // duplicate broadcast copy
        }
        let id = node.cfg.id.as_str().to_string();
        let kind = tx.payload.kind();
        let Some(signer) = self.participants.get(&tx.signer) else {
            self.log(
                &id,
                EventKind::Reject,
                format!("code=BadSignature tx={} kind={kind}", short(&digest)),
            );
            return;
        };
        if !tx.verify_signature(&signer.public_key) {
            self.log(
                &id,
                EventKind::Reject,
                format!("code=BadSignature tx={} kind={kind}", short(&digest)),
            );
            return;
        }
        if tx.nonce <= node.chain.last_nonce(&tx.signer)
            || node
                .mempool
                .iter()
                .any(|m| m.signer == tx.signer && m.nonce == tx.nonce)
        {
            self.log(
                &id,
                EventKind::Reject,
                format!("code=StaleNonce tx={} kind={kind}", short(&digest)),
            );
            return;
        }
        // Admit against the registry as it will look once the mempool
        // commits, so dependent transactions can queue behind each other.
        let pending = node.pending_registry(&self.participants, self.now);
        if let Err(e) = apply(&pending, &tx.payload, &tx.signer, &self.participants, self.now) {
            self.log(
                &id,
                EventKind::Reject,
                format!(
                    "code={} tx={} kind={}",
                    e.code(),
                    short(&digest),
                    tx.payload.kind()
                ),
            );
            return;
        }
        node.mempool.push(tx);
        node.mempool_digests.insert(digest);
    }

    fn on_proposal(&mut self, node: &mut Node, src: &ParticipantId, block: LedgerBlock, round: u64) {
        if !node.cfg.is_validator {
            return;
        }
        let next = node.next_height();
        if block.height < next {
            return; // stale — already committed this height
        }
        if block.height > next {
            self.send(
                &node.cfg.id.clone(),
                src,
                Message::SyncRequest { from: next },
            );
            return;
        }
        if round < node.round {
            return; // an old round's proposal
        }
        if round > node.round {
            node.round = round;
            node.deadline = Some(self.now + self.timeout);
        }
        // A lock outlived by a full leader rotation is released.
        if let Some(lock) = &node.lock {
            if lock.round + self.config.n() as u64 <= round {
                node.lock = None;
                node.stored_proposal = None;
            }
        }
        let hash = block.hash();
        if let Some(lock) = &node.lock {
            if lock.hash != hash {
                let id = node.cfg.id.as_str().to_string();
                self.log(
                    &id,
                    EventKind::Reject,
                    format!(
                        "code=Locked height={} round={round} proposer={}",
                        block.height, block.proposer
                    ),
                );
                return;
            }
        }
        let verdict = evaluate_proposal(
            &block,
            round,
            &node.chain,
            &node.registry,
            &self.participants,
            &self.config,
            &node.cfg.id,
            &node.keypair,
        );
        let id = node.cfg.id.as_str().to_string();
        match verdict {
            Ok(vote) => {
                node.lock = Some(HeightLock { hash, round });
                node.stored_proposal = Some(block.clone());
                self.log(
                    &id,
                    EventKind::Vote,
                    format!("height={} round={round} hash={}", block.height, short(&hash)),
                );
                self.send(&node.cfg.id.clone(), src, Message::VoteMsg(vote));
                if matches!(node.cfg.behavior, Behavior::EquivocateVotes) {
                    // A second, contradictory vote: same slot, made-up hash.
                    let fake_hash = sha256(hash.as_bytes());
                    let fake = Vote::sign(
                        node.cfg.id.clone(),
                        block.height,
                        round,
                        fake_hash,
                        &node.keypair,
                    );
                    self.send(&node.cfg.id.clone(), src, Message::VoteMsg(fake));
                }
            }
            Err(reason) => {
                let mut details = format!(
                    "code={} height={} round={round} proposer={}",
                    reason.code(),
                    block.height,
                    block.proposer
                );
                if let RejectReason::InvalidTx { index, error } = &reason {
                    details.push_str(&format!(" idx={index} cause={}", error.code()));
                }
                self.log(&id, EventKind::Reject, details);
            }
        }
    }

    fn on_vote(&mut self, node: &mut Node, vote: Vote) {
        if !node.cfg.is_validator {
            return;
        }
        let outcome = node.collector.observe(vote.clone(), &self.config);
        match outcome {
            ObserveOutcome::Equivocation(proof) => {
                let id = node.cfg.id.as_str().to_string();
                self.log(
                    &id,
                    EventKind::EquivocationDetected,
                    format!("voter={}", proof.voter()),
                );
                self.send_all(&node.cfg.id.clone(), &Message::Equivocation(proof));
                // Fall through: earlier votes may still certify.
            }
            ObserveOutcome::Accepted => {}
            _ => return,
        }
        let Some(block) = node.stored_proposal.clone() else {
            return;
        };
        if block.proposer != node.cfg.id || block.height != node.next_height() {
            return;
        }
        let hash = block.hash();
        if vote.height != block.height || vote.block_hash != hash {
            return;
        }
        if let Some(qc) = node
            .collector
            .try_certify(vote.height, vote.round, &hash, &self.config)
        {
            let mut committed = block;
            committed.quorum_cert = Some(qc);
            if self.apply_commit(node, committed.clone()) {
                self.send_all(&node.cfg.id.clone(), &Message::CommitMsg { block: committed });
            }
        }
    }

    fn on_commit_msg(&mut self, node: &mut Node, src: &ParticipantId, block: LedgerBlock) {
        let next = node.next_height();
        if block.height < next {
            return;
        }
        if block.height > next {
            self.send(
                &node.cfg.id.clone(),
                src,
                Message::SyncRequest { from: next },
            );
            return;
        }
        self.apply_commit(node, block);
    }

    fn on_equivocation(&mut self, node: &mut Node, proof: EquivocationProof) {
        let Some(key) = self.config.key_of(proof.voter()) else {
            return;
        };
        if !proof.verify(key) {
            return;
        }
        if node.collector.flag(proof.voter().clone()) {
            let id = node.cfg.id.as_str().to_string();
            self.log(
                &id,
                EventKind::EquivocationDetected,
                format!("voter={}", proof.voter()),
            );
        }
    }

    fn on_sync_request(&mut self, node: &mut Node, src: &ParticipantId, from: u64) {
        if node.next_height() <= from {
            return;
        }
        let blocks: Vec<LedgerBlock> = node
            .chain
            .blocks()
            .skip(from as usize)
            .cloned()
            .collect();
        self.send(&node.cfg.id.clone(), src, Message::SyncResponse { blocks });
    }

    fn on_sync_response(&mut self, node: &mut Node, blocks: Vec<LedgerBlock>) {
        for block in blocks {
            if block.height != node.next_height() {
                continue;
            }
            if !self.apply_commit(node, block) {
                break;
            }
        }
    }

    /// Append a certified block, fold it into the node's registry, check
    /// conservation, clean the mempool, and reset round state. The one
    /// place a chain grows.
    fn apply_commit(&mut self, node: &mut Node, block: LedgerBlock) -> bool {
        let id = node.cfg.id.as_str().to_string();
        match node
            .chain
            .append_block(block.clone(), &self.participants, &self.config)
        {
            Ok(()) => {}
            Err(e) => {
                self.log(
                    &id,
                    EventKind::Reject,
                    format!("code={} height={}", e.code(), block.height),
                );
                return false;
            }
        }
        let mut state = node.registry.clone();
        for tx in &block.transactions {
            match apply(&state, &tx.payload, &tx.signer, &self.participants, block.proposed_at) {
                Ok(next) => state = next,
                // Unreachable while at most f validators are Byzantine: a
                // certificate cannot form over an invalid transaction.
                // Beyond the budget all bets are off; keep folding what
                // still applies and let the audit replay flag the chain.
                Err(_) => {}
            }
        }
        if !state.conservation().holds() {
            self.conservation_ok = false;
        }
        node.registry = state;
        for tx in &block.transactions {
            let digest = tx.digest();
            node.mempool_digests.remove(&digest);
            if self.workload_index.iter().any(|(d, _)| *d == digest) {
                self.first_commit.entry(digest).or_insert(self.now);
            }
        }
        let digests = &node.mempool_digests;
        node.mempool.retain(|tx| digests.contains(&tx.digest()));
        node.round = 0;
        node.lock = None;
        node.stored_proposal = None;
        node.last_proposed = None;
        node.deadline = None;
        self.log(
            &id,
            EventKind::Commit,
            format!(
                "height={} txs={} hash={}",
                block.height,
                block.transactions.len(),
                short(&block.hash())
            ),
        );
        true
    }

    // -- phase 5: round timers ------------------------------------------------

    fn timer_phase(&mut self) {
        for id in self.validators.clone() {
            let Some(mut node) = self.nodes.remove(&id) else {
                continue;
            };
            let busy =
                !node.mempool.is_empty() || node.lock.is_some() || node.forge_pending.is_some();
            match (busy, node.deadline) {
                (false, _) => node.deadline = None,
                (true, None) => node.deadline = Some(self.now + self.timeout),
                _ => {}
            }
            if let Some(deadline) = node.deadline {
                if self.now >= deadline {
                    node.round += 1;
                    node.deadline = Some(self.now + self.timeout);
                    let nid = node.cfg.id.as_str().to_string();
                    self.log(
                        &nid,
                        EventKind::Timeout,
                        format!("height={} round={}", node.next_height(), node.round),
                    );
                    if let Some(lock) = &node.lock {
                        if lock.round + self.config.n() as u64 <= node.round {
                            node.lock = None;
                            node.stored_proposal = None;
                        }
                    }
                }
            }
            self.maybe_propose(&mut node);
            self.nodes.insert(id, node);
        }
    }

    fn maybe_propose(&mut self, node: &mut Node) {
        let height = node.next_height();
        let round = node.round;
        if *self.config.leader_for(height, round) != node.cfg.id {
            return;
        }
        if node.last_proposed == Some((height, round)) {
            return;
        }

        // Locked: only the original proposer re-broadcasts, bytes unchanged,
        // so the hash other locked validators committed to still matches.
        if node.lock.is_some() {
            let Some(block) = node.stored_proposal.clone() else {
                return;
            };
            if block.proposer != node.cfg.id {
                return;
            }
            node.last_proposed = Some((height, round));
            self.announce_proposal(node, &block, round);
            return;
        }

        // Fresh proposal from the mempool: keep what replays cleanly in
        // nonce order, purge what can never commit, defer the rest.
        let mut snapshot = node.registry.clone();
        let mut running: BTreeMap<ParticipantId, u64> = BTreeMap::new();
        let mut kept: Vec<SignedTransaction> = Vec::new();
        let mut purged: BTreeSet<Digest> = BTreeSet::new();
        for tx in &node.mempool {
            let digest = tx.digest();
            let floor = running
                .get(&tx.signer)
                .copied()
                .unwrap_or_else(|| node.chain.last_nonce(&tx.signer));
            if tx.nonce <= node.chain.last_nonce(&tx.signer) {
                purged.insert(digest);
                let id = node.cfg.id.as_str().to_string();
                self.log(
                    &id,
                    EventKind::Reject,
                    format!(
                        "code=StaleNonce tx={} kind={}",
                        short(&digest),
                        tx.payload.kind()
                    ),
                );
                continue;
            }
            if tx.nonce <= floor {
                continue; // deferred behind a pending same-signer nonce
            }
            match apply(&snapshot, &tx.payload, &tx.signer, &self.participants, self.now) {
                Ok(next) => {
                    snapshot = next;
                    running.insert(tx.signer.clone(), tx.nonce);
                    kept.push(tx.clone());
                }
                Err(e) => {
                    purged.insert(digest);
                    let id = node.cfg.id.as_str().to_string();
                    self.log(
                        &id,
                        EventKind::Reject,
                        format!(
                            "code={} tx={} kind={}",
                            e.code(),
                            short(&digest),
                            tx.payload.kind()
                        ),
                    );
                }
            }
        }
        if !purged.is_empty() {
            node.mempool.retain(|tx| !purged.contains(&tx.digest()));
            for d in &purged {
                node.mempool_digests.remove(d);
            }
        }
        let forged = node.forge_pending.take();
        if kept.is_empty() && forged.is_none() {
            return;
        }
        let mut transactions = kept;
        if let Some(tx) = forged {
            transactions.push(tx);
        }
        let block = LedgerBlock {
            height,
            prev_hash: node.chain.digest(),
            tx_root: merkle_root(&transactions),
            transactions,
            proposer: node.cfg.id.clone(),
            proposed_at: self.now,
            quorum_cert: None,
        };
        node.lock = Some(HeightLock {
            hash: block.hash(),
            round,
        });
        node.stored_proposal = Some(block.clone());
        node.last_proposed = Some((height, round));
        self.announce_proposal(node, &block, round);
    }

    /// Log the proposal, count the leader's own vote, broadcast.
    fn announce_proposal(&mut self, node: &mut Node, block: &LedgerBlock, round: u64) {
        let hash = block.hash();
        let id = node.cfg.id.as_str().to_string();
        self.log(
            &id,
            EventKind::Propose,
            format!(
                "height={} round={round} txs={} hash={}",
                block.height,
                block.transactions.len(),
                short(&hash)
            ),
        );
        let own = Vote::sign(
            node.cfg.id.clone(),
            block.height,
            round,
            hash,
            &node.keypair,
        );
        node.collector.observe(own, &self.config);
        self.log(
            &id,
            EventKind::Vote,
            format!("height={} round={round} hash={}", block.height, short(&hash)),
        );
        self.send_validators(
            &node.cfg.id.clone(),
            &Message::Proposal {
                block: block.clone(),
                round,
            },
        );
    }

    // -- main loop -------------------------------------------------------------

    fn quiescent(&self) -> bool {
        self.queue.is_empty()
            && self.workload.is_empty()
            && self.faults.is_empty()
            && self.nodes.values().all(|n| {
                n.mempool.is_empty()
                    && n.deadline.is_none()
                    && n.forge_pending.is_none()
                    && (n.behavior_done
                        || matches!(
                            n.cfg.behavior,
                            Behavior::Honest | Behavior::EquivocateVotes
                        ))
            })
    }

    fn execute(&mut self) {
        self.check_fault_budget();
        loop {
            self.fault_phase();
            self.behavior_phase();
            self.submission_phase();
            self.delivery_phase();
            self.timer_phase();
            if self.now >= self.tick_limit || self.quiescent() {
                break;
            }
            self.now += 1;
        }
    }

    fn finalize(mut self) -> SimReport {
        // End-of-run integrity sweep: every node re-verifies its own store.
        let mut integrity: BTreeMap<ParticipantId, String> = BTreeMap::new();
        for id in self.order.clone() {
            let verdict = self.nodes[&id].chain.verify(&self.participants, &self.config);
            let text = match verdict {
                ChainVerdict::Valid => "valid".to_string(),
                ChainVerdict::InvalidAt { height, reason } => {
                    let name = id.as_str().to_string();
                    self.log(
                        &name,
                        EventKind::TamperDetected,
                        format!("height={height} code={}", reason.code()),
                    );
                    format!("invalid-at:{height}:{}", reason.code())
                }
            };
            integrity.insert(id, text);
        }

        // Honest chains must form one linear history: every honest chain
        // is a prefix of the longest one.
        let honest: Vec<&Node> = self
            .nodes
            .values()
            .filter(|n| n.cfg.behavior.is_honest())
            .collect();
        let honest_agree = match honest
            .iter()
            .max_by_key(|n| n.chain.len())
        {
            None => true,
            Some(longest) => honest.iter().all(|n| {
                let head = n.chain.len().saturating_sub(1) as u64;
                longest
                    .chain
                    .get(head)
                    .map(|b| b.hash() == n.chain.digest())
                    .unwrap_or(false)
            }),
        };

        let mut flagged: BTreeSet<ParticipantId> = BTreeSet::new();
        for node in self.nodes.values() {
            if node.cfg.behavior.is_honest() {
                flagged.extend(node.collector.flagged().iter().cloned());
            }
        }

        let nodes = self
            .nodes
            .iter()
            .map(|(id, n)| {
                (
                    id.clone(),
                    NodeSummary {
                        behavior: n.cfg.behavior.label(),
                        height: n.chain.len().saturating_sub(1) as u64,
                        digest: n.chain.digest().to_hex(),
                        integrity: integrity[id].clone(),
                    },
                )
            })
            .collect();

        let commits = self
            .workload_index
            .iter()
            .map(|(digest, submitted)| CommitRecord {
                tx: digest.to_hex()[..12].to_string(),
                submitted: *submitted,
                committed: self.first_commit.get(digest).copied(),
            })
            .collect();

        let detections = self
            .events
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::EquivocationDetected
                        | EventKind::TamperDetected
                        | EventKind::GuaranteesVoid
                )
            })
            .cloned()
            .collect();

        SimReport {
            seed: self.seed,
            ticks_run: self.now,
            guarantees_void: self.guarantees_void,
            conservation_ok: self.conservation_ok,
            honest_agree,
            nodes,
            commits,
            flagged: flagged.into_iter().collect(),
            detections,
            events: self.events,
        }
    }
}

/// Execute a simulation to its tick limit or quiescence.
pub fn run(sim: &SimRun) -> Result<SimReport, ConfigError> {
    let mut engine = Engine::new(sim)?;
    engine.execute();
    Ok(engine.finalize())
}

/// What one node holds when the run stops: its chain export and its live
/// registry in canonical bytes (hex). The state is the one the node folded
/// incrementally at commit time — comparing it against an offline replay of
/// the chain is how audit equivalence is checked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeArtifacts {
    pub chain: String,
    pub state: String,
}

/// Like [`run`], but also returns each node's end-of-run artifacts, for
/// writing alongside the report.
pub fn run_with_artifacts(
    sim: &SimRun,
) -> Result<(SimReport, BTreeMap<ParticipantId, NodeArtifacts>), ConfigError> {
    let mut engine = Engine::new(sim)?;
    engine.execute();
    let artifacts: BTreeMap<ParticipantId, NodeArtifacts> = engine
        .order
        .iter()
        .map(|id| {
            let node = &engine.nodes[id];
            let out = NodeArtifacts {
                chain: node.chain.export(),
                state: hex::encode(node.registry.canonical_bytes()),
            };
            (id.clone(), out)
        })
        .collect();
    let report = engine.finalize();
    Ok((report, artifacts))
}
