use std::any::Any;
use std::sync::Arc;

use bftfl::codec::hash_bytes;
use bftfl::crypto::{derive_keys, KeyRegistry, Keyring};
use bftfl::ids::{ProcessId, TaskId};
use bftfl::messages::{Msg, Timer};
use bftfl::proofs::{PoAI, Slot, Tag};
use bftfl::rng::stream;
use bftfl::simnet::{
    counter, ms, Actor, Context, DelayModel, Endpoint, EndpointClass, Latency, LinkOverride, RunOutcome, Simulation,
};
use bftfl::storage::{ReadStart, ReadTarget, ReplicaActor, ReplicaBehavior, StorageError, StorageReader, StoreMsg};

#[derive(Clone, Debug, PartialEq)]
enum Got {
    Values(Vec<Vec<u8>>),
    Refused(StorageError),
    TimedOut,
}

struct Reader {
    storage: StorageReader<&'static str>,
    targets: Vec<ReadTarget>,
    got: Option<Got>,
}

impl Actor<Msg> for Reader {
    fn on_start(&mut self, ctx: &mut Context<'_, Msg>) {
        match self.storage.get_all(ctx, &self.targets, "batch") {
            Ok(ReadStart::Done(_, v)) => self.got = Some(Got::Values(v.iter().map(|v| v.to_vec()).collect())),
            Ok(ReadStart::Pending(_)) => {}
            Err(e) => self.got = Some(Got::Refused(e)),
        }
    }

    fn on_message(&mut self, ctx: &mut Context<'_, Msg>, _from: Endpoint, msg: Msg) {
        match msg {
            Msg::Store(StoreMsg::Reply { key, value }) => {
                for (_, v) in self.storage.on_reply(ctx, key, value) {
                    self.got = Some(Got::Values(v.iter().map(|v| v.to_vec()).collect()));
                }
            }
            Msg::Timer(Timer::ReadDeadline(id)) if self.storage.on_deadline(id).is_some() => {
                self.got = Some(Got::TimedOut);
            }
            _ => {}
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

fn keys() -> (Arc<KeyRegistry>, Keyring) {
    let (r, k) = derive_keys(1, (0..3).map(ProcessId::server));
    (Arc::new(r), k)
}

fn certify(keys: &Keyring, value: &[u8]) -> PoAI {
    let slot = Slot::new(Tag::Mod, hash_bytes(value), TaskId(1), 1);
    let signatures = [0, 2].iter().map(|&i| keys.sign(ProcessId::server(i), &slot.digest()).unwrap()).collect();
    PoAI { slot, signatures }
}

/// Replicas with the given behaviours; the writer's STORE reaches them after
/// `store_at` while the reader queries at time zero.
fn read_with(behaviors: &[ReplicaBehavior], targets: Vec<ReadTarget>, values: &[&[u8]], store_at: f64) -> (Got, u64) {
    let (registry, _) = keys();
    let replicas: Vec<ProcessId> = (0..behaviors.len() as u32).map(ProcessId::replica).collect();
    let mut sim = Simulation::new(DelayModel::fixed(5.0), stream(0, "net", 0));
    for (r, b) in replicas.iter().zip(behaviors) {
        sim.add_actor(*r, Box::new(ReplicaActor::new(*b)));
    }
    let reader = ProcessId::client(0);
    sim.add_actor(reader, Box::new(Reader { storage: StorageReader::new(replicas.clone(), registry, 1, ms(200.0)), targets, got: None }));
    for v in values {
        for r in &replicas {
            let m = Msg::Store(StoreMsg::Store { key: hash_bytes(v), value: Arc::new(v.to_vec()) });
            sim.inject(ms(store_at), ProcessId::server(0).into(), (*r).into(), m);
        }
    }
    assert_eq!(sim.run(ms(10_000.0)), RunOutcome::Quiescent);
    let got = sim.actor::<Reader>(reader).unwrap().got.clone().expect("read finished");
    (got, sim.metrics().counter(counter::STORAGE_REJECTIONS))
}

#[test]
fn early_query_is_answered_once_the_value_lands() {
    let (_, k) = keys();
    let (got, _) = read_with(&[ReplicaBehavior::Correct], vec![ReadTarget::Proof(certify(&k, b"model"))], &[b"model"], 50.0);
    assert_eq!(got, Got::Values(vec![b"model".to_vec()]));
}

#[test]
fn garbage_and_silence_cannot_mislead_or_block_a_read() {
    let (_, k) = keys();
    let behaviors = [ReplicaBehavior::GarbageReplier, ReplicaBehavior::Silent, ReplicaBehavior::Correct];
    let targets = vec![ReadTarget::Proof(certify(&k, b"a")), ReadTarget::Key(hash_bytes(b"b")), ReadTarget::Proof(certify(&k, b"a"))];
    let (got, rejected) = read_with(&behaviors, targets, &[b"a", b"b"], 20.0);
    assert_eq!(got, Got::Values(vec![b"a".to_vec(), b"b".to_vec(), b"a".to_vec()]));
    assert!(rejected >= 2, "garbage replies counted: {rejected}");
}

#[test]
fn only_byzantine_replicas_means_a_deadline_not_a_wrong_value() {
    let (_, k) = keys();
    let behaviors = [ReplicaBehavior::GarbageReplier, ReplicaBehavior::Silent];
    let (got, _) = read_with(&behaviors, vec![ReadTarget::Proof(certify(&k, b"x"))], &[b"x"], 0.0);
    assert_eq!(got, Got::TimedOut);
}

#[test]
fn invalid_certificate_is_refused_before_querying() {
    let (_, k) = keys();
    let mut p = certify(&k, b"x");
    p.signatures.reverse();
    let targets = vec![ReadTarget::Key(hash_bytes(b"x")), ReadTarget::Proof(p)];
    let (got, _) = read_with(&[ReplicaBehavior::Correct], targets, &[b"x"], 0.0);
    assert_eq!(got, Got::Refused(StorageError::Proof(1)));
}

#[test]
fn empty_batch_completes_at_once() {
    let (got, _) = read_with(&[ReplicaBehavior::Correct], vec![], &[], 0.0);
    assert_eq!(got, Got::Values(vec![]));
}

struct Echo;

impl Actor<Msg> for Echo {
    fn on_message(&mut self, ctx: &mut Context<'_, Msg>, from: Endpoint, msg: Msg) {
        ctx.metrics.incr("echo");
        ctx.log(format!("from {from}"));
        if ctx.metrics.counter("echo") == 3 {
            ctx.stop();
        }
        ctx.send(from, msg);
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[test]
fn delays_respect_overrides_and_bandwidth_and_runs_resume() {
    let delay = DelayModel {
        latency: Latency::Uniform { lo_ms: 10.0, hi_ms: 20.0 },
        overrides: vec![LinkOverride { from: Some(EndpointClass::Client), to: None, latency: Latency::Fixed { ms: 1.0 } }],
        bandwidth_bytes_per_sec: Some(1e6),
    };
    let payload = Msg::Store(StoreMsg::Query { key: hash_bytes(b"k") });
    let mut rng = stream(3, "d", 0);
    for _ in 0..100 {
        let t = delay.sample(ProcessId::server(0).into(), ProcessId::server(1).into(), 1000, &mut rng);
        assert!((ms(10.0) + ms(1.0)..=ms(20.0) + ms(1.0)).contains(&t), "{t}");
        let t = delay.sample(ProcessId::client(0).into(), Endpoint::Ledger, 1000, &mut rng);
        assert_eq!(t, ms(1.0) + ms(1.0));
    }

    let a = ProcessId::client(0);
    let b = ProcessId::server(0);
    let mut sim = Simulation::new(delay, stream(3, "net", 0));
    sim.add_actor(a, Box::new(Echo));
    sim.add_actor(b, Box::new(Echo));
    sim.inject(0, b.into(), a.into(), payload);
    assert_eq!(sim.run(ms(10_000.0)), RunOutcome::Stopped);
    let stopped_at = sim.now();
    sim.resume();
    assert_eq!(sim.run(stopped_at + ms(5.0)), RunOutcome::Horizon);
    assert_eq!(sim.log().len(), 4);
    assert!(sim.log().windows(2).all(|w| w[0].time <= w[1].time));
}
