use std::sync::Arc;

use bftfl::aggregation::{Aggregator, EpsilonVector};
use bftfl::codec::{hash_bytes, hash_value};
use bftfl::crypto::{derive_keys, Keyring};
use bftfl::ids::{ProcessId, TaskId};
use bftfl::learning::LocalTrainConfig;
use bftfl::ledger::{genesis_hash, Block, BlockError, LedgerState, TaskParams, Transaction, TxBody, TxRejection};
use bftfl::proofs::{PoAI, Slot, Tag};
use bftfl::protocol::ClientSet;

const TASK: TaskId = TaskId(1);
const F_S: usize = 1;

struct World {
    keys: Keyring,
    state: LedgerState,
}

impl World {
    fn new() -> Self {
        let procs = (0..3)
            .map(ProcessId::server)
            .chain((0..4).map(ProcessId::client))
            .chain([ProcessId::owner()]);
        let (registry, keys) = derive_keys(5, procs);
        Self { keys, state: LedgerState::new(Arc::new(registry), F_S) }
    }

    fn tx(&self, sender: ProcessId, body: TxBody) -> Transaction {
        Transaction::new(&self.keys.signer(sender).unwrap(), body).unwrap()
    }

    fn block(&self, txs: Vec<Transaction>) -> Block {
        Block { height: self.state.height() + 1, prev: self.state.tip(), time: 0, txs }
    }

    fn commit(&mut self, txs: Vec<Transaction>) -> Result<(), BlockError> {
        let b = self.block(txs);
        self.state.apply_block(&b)
    }

    fn poai(&self, slot: Slot, signers: &[u32]) -> PoAI {
        let signatures = signers.iter().map(|&i| self.keys.sign(ProcessId::server(i), &slot.digest()).unwrap()).collect();
        PoAI { slot, signatures }
    }

    fn clients_proof(&self, set: &ClientSet) -> PoAI {
        self.poai(Slot::new(Tag::Clients, hash_value(set).unwrap(), TASK, set.round), &[0, 2])
    }

    fn update_proofs(&self, round: u64, n: usize) -> Vec<PoAI> {
        (0..n)
            .map(|i| self.poai(Slot::new(Tag::Upd, hash_bytes(format!("u{round}-{i}").as_bytes()), TASK, round), &[1, 2]))
            .collect()
    }

    fn new_round(&self, round: u64, cand: Vec<PoAI>) -> Transaction {
        let next = self.state.expected_selection(TASK, round + 1).unwrap();
        let body = TxBody::NewRound { task: TASK, round, cand, clients_proof: self.clients_proof(&next), next_clients: next };
        self.tx(ProcessId::server(0), body)
    }
}

fn params() -> TaskParams {
    TaskParams {
        k: 2,
        min_clients: 3,
        m: 2,
        t_fin: 2,
        eps: EpsilonVector::Uniform(1e-6),
        aggregator: Aggregator::Median,
        train: LocalTrainConfig::default(),
        selection_seed: 9,
        dim: 2,
        stake_threshold: 2,
    }
}

fn join(w: &World, i: u32, stake: u64) -> Transaction {
    w.tx(ProcessId::client(i), TxBody::Join { task: TASK, client: ProcessId::client(i), stake, declared_n: 10 + u64::from(i) })
}

/// Task created, three clients joined, round 1 started.
fn started() -> World {
    let mut w = World::new();
    let new_task = w.tx(ProcessId::owner(), TxBody::NewTask { task: TASK, params: params(), model_hash: hash_bytes(b"w0") });
    w.commit(vec![new_task]).unwrap();
    let joins = (0..3).map(|i| join(&w, i, 2)).collect();
    w.commit(joins).unwrap();
    let clients = w.state.expected_selection(TASK, 1).unwrap();
    let start = TxBody::StartTask { task: TASK, proof: w.clients_proof(&clients), clients };
    let tx = w.tx(ProcessId::server(1), start);
    w.commit(vec![tx]).unwrap();
    w
}

#[test]
fn task_lifecycle_commits() {
    let mut w = started();
    let t = w.state.task(TASK).unwrap();
    assert_eq!(t.clients_for(1).unwrap().members.len(), 2);
    assert_eq!(t.declared_n(ProcessId::client(2)), Some(12));

    for round in 1..=2 {
        let nr = w.new_round(round, w.update_proofs(round, 2));
        w.commit(vec![nr]).unwrap();
    }
    let t = w.state.task(TASK).unwrap();
    assert_eq!(t.last_round(), 2);
    assert!(t.clients_for(3).unwrap().members.is_empty());

    let fin = TxBody::Final {
        task: TASK,
        reward_proof: w.poai(Slot::new(Tag::Reward, hash_bytes(b"r"), TASK, 2), &[0, 1]),
        model_proof: w.poai(Slot::new(Tag::Mod, hash_bytes(b"m"), TASK, 2), &[0, 1]),
    };
    let tx = w.tx(ProcessId::server(2), fin.clone());
    w.commit(vec![tx]).unwrap();
    assert!(w.state.task(TASK).unwrap().fin.is_some());
    let again = w.tx(ProcessId::server(1), fin);
    assert_eq!(w.state.check_tx(&again), Err(TxRejection::AlreadyFinal));
}

#[test]
fn registration_rules() {
    let mut w = World::new();
    assert_eq!(w.state.check_tx(&join(&w, 0, 2)), Err(TxRejection::UnknownTask));
    let by_client = w.tx(ProcessId::client(0), TxBody::NewTask { task: TASK, params: params(), model_hash: hash_bytes(b"w0") });
    assert_eq!(w.state.check_tx(&by_client), Err(TxRejection::WrongSender(ProcessId::client(0))));
    let bad = TaskParams { m: 5, ..params() };
    let invalid = w.tx(ProcessId::owner(), TxBody::NewTask { task: TASK, params: bad, model_hash: hash_bytes(b"w0") });
    assert!(matches!(w.state.check_tx(&invalid), Err(TxRejection::InvalidParams(_))));

    let new_task = w.tx(ProcessId::owner(), TxBody::NewTask { task: TASK, params: params(), model_hash: hash_bytes(b"w0") });
    w.commit(vec![new_task.clone()]).unwrap();
    assert_eq!(w.state.check_tx(&new_task), Err(TxRejection::Duplicate));

    assert_eq!(w.state.check_tx(&join(&w, 0, 1)), Err(TxRejection::StakeTooLow { stake: 1, threshold: 2 }));
    let impostor = w.tx(ProcessId::client(1), TxBody::Join { task: TASK, client: ProcessId::client(0), stake: 2, declared_n: 1 });
    assert!(matches!(w.state.check_tx(&impostor), Err(TxRejection::WrongSender(_))));
    let zero = w.tx(ProcessId::client(0), TxBody::Join { task: TASK, client: ProcessId::client(0), stake: 2, declared_n: 0 });
    assert_eq!(w.state.check_tx(&zero), Err(TxRejection::BadDeclaredCount));
    let first = join(&w, 0, 2);
    w.commit(vec![first]).unwrap();
    assert_eq!(w.state.check_tx(&join(&w, 0, 3)), Err(TxRejection::AlreadyJoined));

    // Two registrants out of three required: no selection yet.
    assert!(w.state.expected_selection(TASK, 1).is_none());
}

#[test]
fn new_round_rules() {
    let mut w = started();
    assert!(matches!(w.state.check_tx(&w.new_round(2, w.update_proofs(2, 2))), Err(TxRejection::WrongRound { .. })));
    assert_eq!(
        w.state.check_tx(&w.new_round(1, w.update_proofs(1, 1))),
        Err(TxRejection::TooFewCandidates { needed: 2, got: 1 })
    );
    let mut dup = w.update_proofs(1, 2);
    dup[1] = dup[0].clone();
    assert!(matches!(w.state.check_tx(&w.new_round(1, dup)), Err(TxRejection::TooFewCandidates { .. })));

    // A certificate one vote short.
    let mut short = w.update_proofs(1, 2);
    short[0].signatures.pop();
    assert_eq!(w.state.check_tx(&w.new_round(1, short)), Err(TxRejection::BadProof("update")));
    // A certificate for another round.
    let stale = w.update_proofs(2, 2);
    assert_eq!(w.state.check_tx(&w.new_round(1, stale)), Err(TxRejection::BadProof("update")));

    // A client set that is not the deterministic draw.
    let mut wrong = w.state.expected_selection(TASK, 2).unwrap();
    wrong.members = vec![ProcessId::client(3), ProcessId::client(0)];
    let body = TxBody::NewRound {
        task: TASK,
        round: 1,
        cand: w.update_proofs(1, 2),
        clients_proof: w.clients_proof(&wrong),
        next_clients: wrong,
    };
    let tx = w.tx(ProcessId::server(0), body);
    assert_eq!(w.state.check_tx(&tx), Err(TxRejection::WrongSelection));

    let client_sent = w.tx(ProcessId::client(0), w.new_round(1, w.update_proofs(1, 2)).body);
    assert!(matches!(w.state.check_tx(&client_sent), Err(TxRejection::WrongSender(_))));

    // Only the first valid NR for a round commits.
    let a = w.new_round(1, w.update_proofs(1, 2));
    let b = w.new_round(1, w.update_proofs(1, 3));
    w.commit(vec![a]).unwrap();
    assert!(matches!(w.state.check_tx(&b), Err(TxRejection::WrongRound { expected: 2, got: 1 })));

    let early = TxBody::Final {
        task: TASK,
        reward_proof: w.poai(Slot::new(Tag::Reward, hash_bytes(b"r"), TASK, 2), &[0, 1]),
        model_proof: w.poai(Slot::new(Tag::Mod, hash_bytes(b"m"), TASK, 2), &[0, 1]),
    };
    let tx = w.tx(ProcessId::server(0), early);
    assert_eq!(w.state.check_tx(&tx), Err(TxRejection::NotFinished));
}

#[test]
fn block_replay_checks_links_and_signatures() {
    let mut w = World::new();
    assert_eq!(w.state.tip(), genesis_hash());
    let new_task = w.tx(ProcessId::owner(), TxBody::NewTask { task: TASK, params: params(), model_hash: hash_bytes(b"w0") });

    let mut skipped = w.block(vec![new_task.clone()]);
    skipped.height += 1;
    assert!(matches!(w.state.apply_block(&skipped), Err(BlockError::Height { .. })));
    let mut unlinked = w.block(vec![new_task.clone()]);
    unlinked.prev = hash_bytes(b"elsewhere");
    assert!(matches!(w.state.apply_block(&unlinked), Err(BlockError::BrokenChain(1))));

    let mut forged = new_task.clone();
    forged.signature.bytes[0] ^= 1;
    let bad = w.block(vec![new_task.clone(), forged]);
    let mut other = World::new();
    assert!(matches!(other.state.apply_block(&bad), Err(BlockError::InvalidTx { index: 1, .. })));

    w.commit(vec![new_task]).unwrap();
    assert_eq!(w.state.height(), 1);
}

#[test]
fn replicas_of_the_chain_agree_on_selection() {
    let w = started();
    let mut replay = World::new();
    let mut blocks = Vec::new();
    // Rebuild the same chain from its blocks in a second state.
    let mut source = World::new();
    let new_task =
        source.tx(ProcessId::owner(), TxBody::NewTask { task: TASK, params: params(), model_hash: hash_bytes(b"w0") });
    blocks.push(source.block(vec![new_task.clone()]));
    source.commit(vec![new_task]).unwrap();
    let joins: Vec<Transaction> = (0..3).map(|i| join(&source, i, 2)).collect();
    blocks.push(source.block(joins.clone()));
    source.commit(joins).unwrap();
    for b in &blocks {
        replay.state.apply_block(b).unwrap();
    }
    assert_eq!(replay.state.tip(), source.state.tip());
    assert_eq!(replay.state.expected_selection(TASK, 1), source.state.expected_selection(TASK, 1));
    assert_eq!(w.state.expected_selection(TASK, 1), source.state.expected_selection(TASK, 1));

    let set = source.state.expected_selection(TASK, 1).unwrap();
    assert_eq!(set.members.len(), 2);
    assert!(set.members.windows(2).all(|p| p[0] < p[1]));
    assert!(set.members.iter().all(|c| c.index < 3));
}
