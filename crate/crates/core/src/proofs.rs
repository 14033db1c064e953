//! Proof-of-availability-and-integrity certificates: votes from `f_s+1`
//! distinct servers over one (tag, hash-key, task, round) statement.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{hash_bytes, hash_value, kind, Canonical, DecodeError, Decoder, Encoder, EncodingError, HashKey};
use crate::crypto::{verify, KeyRegistry, Signature, SignerKey};
use crate::ids::{ProcessId, ProcessKind, TaskId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tag {
    Upd,
    Mod,
    Clients,
    Reward,
}

impl Tag {
    fn code(self) -> u8 {
        match self {
            Tag::Upd => 0,
            Tag::Mod => 1,
            Tag::Clients => 2,
            Tag::Reward => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Tag::Upd,
            1 => Tag::Mod,
            2 => Tag::Clients,
            3 => Tag::Reward,
            _ => return None,
        })
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::Upd => "UPD",
            Tag::Mod => "MOD",
            Tag::Clients => "CLIENTS",
            Tag::Reward => "REWARD",
        })
    }
}

/// The statement a vote signs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub tag: Tag,
    pub hash_key: HashKey,
    pub task: TaskId,
    pub round: u64,
}

impl Slot {
    pub fn new(tag: Tag, hash_key: HashKey, task: TaskId, round: u64) -> Self {
        Self { tag, hash_key, task, round }
    }

    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.tag.code());
        enc.hash(&self.hash_key);
        enc.u64(self.task.0);
        enc.u64(self.round);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tag = Tag::from_code(dec.u8()?).ok_or(DecodeError::Invalid("tag"))?;
        Ok(Self { tag, hash_key: dec.hash()?, task: TaskId(dec.u64()?), round: dec.u64()? })
    }

    /// Digest signed by voters: the kind-tagged canonical statement.
    pub fn digest(&self) -> HashKey {
        let mut enc = Encoder::with_capacity(1 + 1 + 32 + 16);
        enc.u8(kind::VOTE_STATEMENT);
        self.encode(&mut enc);
        hash_bytes(&enc.into_bytes())
    }
}

/// One server's signed vote for a slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalProof {
    pub slot: Slot,
    pub signature: Signature,
}

impl LocalProof {
    pub fn sign(signer: &SignerKey, slot: Slot) -> Self {
        Self { slot, signature: signer.sign(&slot.digest()) }
    }

    pub fn signer(&self) -> ProcessId {
        self.signature.signer
    }

    /// Signed by a registered server over exactly this slot.
    pub fn verifies(&self, registry: &KeyRegistry) -> bool {
        self.signer().kind == ProcessKind::Server && verify(registry, &self.signature, &self.slot.digest())
    }
}

/// Signs a vote for `value`. Callers check local validity first; an invalid
/// value gets no vote at all.
pub fn make_local_proof<T: Canonical + ?Sized>(
    signer: &SignerKey,
    tag: Tag,
    value: &T,
    task: TaskId,
    round: u64,
) -> Result<LocalProof, EncodingError> {
    Ok(LocalProof::sign(signer, Slot::new(tag, hash_value(value)?, task, round)))
}

/// A quorum certificate: exactly `f_s+1` votes on one slot, ordered by signer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoAI {
    pub slot: Slot,
    pub signatures: Vec<Signature>,
}

impl PoAI {
    pub fn tag(&self) -> Tag {
        self.slot.tag
    }

    pub fn hash_key(&self) -> HashKey {
        self.slot.hash_key
    }

    pub fn round(&self) -> u64 {
        self.slot.round
    }

    pub fn task(&self) -> TaskId {
        self.slot.task
    }

    pub fn signers(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.signatures.iter().map(|s| s.signer)
    }

    pub fn wire_size(&self) -> u64 {
        58 + 8 + self.signatures.len() as u64 * 70
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) {
        self.slot.encode(enc);
        enc.len(self.signatures.len());
        for s in &self.signatures {
            enc.process(s.signer);
            enc.bytes(&s.bytes);
        }
    }

    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let slot = Slot::decode(dec)?;
        let n = dec.len(69)?;
        let mut signatures = Vec::with_capacity(n);
        for _ in 0..n {
            let signer = dec.process()?;
            let bytes: [u8; 64] =
                dec.bytes()?.try_into().map_err(|_| DecodeError::Invalid("signature length"))?;
            signatures.push(Signature { signer, bytes });
        }
        Ok(Self { slot, signatures })
    }

    /// `TAG hash-key signer,signer,...`
    pub fn render(&self) -> String {
        let signers: Vec<String> = self.signers().map(|s| s.to_string()).collect();
        format!("{} {} {}", self.slot.tag, self.slot.hash_key, signers.join(","))
    }
}

/// True iff `p` carries exactly `f_s+1` valid server votes in strictly
/// ascending signer order.
pub fn verify_poai(p: &PoAI, registry: &KeyRegistry, f_s: usize) -> bool {
    if p.signatures.len() != f_s + 1 {
        return false;
    }
    if !p.signatures.windows(2).all(|w| w[0].signer < w[1].signer) {
        return false;
    }
    let digest = p.slot.digest();
    p.signatures.iter().all(|s| s.signer.kind == ProcessKind::Server && verify(registry, s, &digest))
}

/// What happened to a vote offered to an accumulator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Accumulated {
    /// The vote completed a quorum.
    Certificate(PoAI),
    /// Counted toward a quorum that is not complete yet.
    Pending,
    /// Counted after the slot already produced its certificate.
    Late,
    /// Bad signature, non-server signer, or repeated signer.
    Dropped,
}

#[derive(Default, Debug)]
struct SlotVotes {
    votes: BTreeMap<ProcessId, Signature>,
    emitted: Option<PoAI>,
}

/// Collects verified votes per slot and emits each slot's certificate once.
#[derive(Debug)]
pub struct VoteAccumulator {
    f_s: usize,
    slots: BTreeMap<Slot, SlotVotes>,
    dropped: u64,
}

impl VoteAccumulator {
    pub fn new(f_s: usize) -> Self {
        Self { f_s, slots: BTreeMap::new(), dropped: 0 }
    }

    pub fn offer(&mut self, vote: &LocalProof, registry: &KeyRegistry) -> Accumulated {
        if !vote.verifies(registry) {
            self.dropped += 1;
            return Accumulated::Dropped;
        }
        let entry = self.slots.entry(vote.slot).or_default();
        if entry.votes.contains_key(&vote.signer()) {
            self.dropped += 1;
            return Accumulated::Dropped;
        }
        entry.votes.insert(vote.signer(), vote.signature.clone());
        if entry.emitted.is_some() {
            return Accumulated::Late;
        }
        if entry.votes.len() == self.f_s + 1 {
            let p = PoAI { slot: vote.slot, signatures: entry.votes.values().cloned().collect() };
            entry.emitted = Some(p.clone());
            return Accumulated::Certificate(p);
        }
        Accumulated::Pending
    }

    /// Offers `vote`; returns the certificate if this vote completed it.
    pub fn accumulate(&mut self, vote: &LocalProof, registry: &KeyRegistry) -> Option<PoAI> {
        match self.offer(vote, registry) {
            Accumulated::Certificate(p) => Some(p),
            _ => None,
        }
    }

    pub fn certificate(&self, slot: &Slot) -> Option<&PoAI> {
        self.slots.get(slot).and_then(|s| s.emitted.as_ref())
    }

    pub fn votes(&self, slot: &Slot) -> usize {
        self.slots.get(slot).map_or(0, |s| s.votes.len())
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Forgets every slot of rounds below `round`.
    pub fn prune_before(&mut self, task: TaskId, round: u64) {
        self.slots.retain(|s, _| s.task != task || s.round >= round);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::ParamVector;
    use crate::crypto::{derive_keys, Keyring};

    fn setup(n: u32) -> (KeyRegistry, Keyring) {
        derive_keys(7, (0..n).map(ProcessId::server).chain([ProcessId::client(0)]))
    }

    fn slot(v: f64) -> Slot {
        Slot::new(Tag::Upd, hash_value(&ParamVector(vec![v])).unwrap(), TaskId(1), 1)
    }

    fn vote(ring: &Keyring, who: ProcessId, s: Slot) -> LocalProof {
        LocalProof::sign(&ring.signer(who).unwrap(), s)
    }

    #[test]
    fn two_votes_make_a_certificate_at_fs_one() {
        let (reg, ring) = setup(3);
        let mut acc = VoteAccumulator::new(1);
        assert_eq!(acc.accumulate(&vote(&ring, ProcessId::server(1), slot(1.0)), &reg), None);
        let p = acc.accumulate(&vote(&ring, ProcessId::server(0), slot(1.0)), &reg).unwrap();
        assert_eq!(p.signatures.len(), 2);
        assert_eq!(p.signers().collect::<Vec<_>>(), vec![ProcessId::server(0), ProcessId::server(1)]);
        assert!(verify_poai(&p, &reg, 1));
        assert_eq!(acc.offer(&vote(&ring, ProcessId::server(2), slot(1.0)), &reg), Accumulated::Late);
    }

    #[test]
    fn duplicate_signer_and_split_keys_do_not_certify() {
        let (reg, ring) = setup(3);
        let mut acc = VoteAccumulator::new(1);
        let v = vote(&ring, ProcessId::server(0), slot(1.0));
        assert_eq!(acc.accumulate(&v, &reg), None);
        assert_eq!(acc.accumulate(&v, &reg), None);
        assert_eq!(acc.accumulate(&vote(&ring, ProcessId::server(1), slot(2.0)), &reg), None);
        assert_eq!(acc.dropped(), 1);
    }

    #[test]
    fn forged_votes_are_dropped() {
        let (reg, ring) = setup(3);
        let mut acc = VoteAccumulator::new(1);
        let mut v = vote(&ring, ProcessId::server(0), slot(1.0));
        v.signature.signer = ProcessId::server(1);
        assert_eq!(acc.offer(&v, &reg), Accumulated::Dropped);
        let client = vote(&ring, ProcessId::client(0), slot(1.0));
        assert_eq!(acc.offer(&client, &reg), Accumulated::Dropped);
    }

    #[test]
    fn certificate_checks() {
        let (reg, ring) = setup(5);
        let mut acc = VoteAccumulator::new(2);
        let mut p = None;
        for i in [4, 2, 0] {
            p = acc.accumulate(&vote(&ring, ProcessId::server(i), slot(3.0)), &reg);
        }
        let p = p.unwrap();
        assert!(verify_poai(&p, &reg, 2));
        assert!(!verify_poai(&p, &reg, 1));
        let mut short = p.clone();
        short.signatures.pop();
        assert!(!verify_poai(&short, &reg, 2));
        let mut forged = p.clone();
        forged.signatures[1].bytes[0] ^= 1;
        assert!(!verify_poai(&forged, &reg, 2));
        let mut moved = p.clone();
        moved.slot.round = 2;
        assert!(!verify_poai(&moved, &reg, 2));
        let mut dup = p.clone();
        dup.signatures[1] = dup.signatures[0].clone();
        assert!(!verify_poai(&dup, &reg, 2));
    }

    #[test]
    fn signing_is_deterministic() {
        let (_, ring) = setup(1);
        let s = ring.signer(ProcessId::server(0)).unwrap();
        let a = make_local_proof(&s, Tag::Mod, &ParamVector(vec![1.0]), TaskId(0), 2).unwrap();
        let b = make_local_proof(&s, Tag::Mod, &ParamVector(vec![1.0]), TaskId(0), 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoding_round_trips() {
        let (reg, ring) = setup(3);
        let mut acc = VoteAccumulator::new(1);
        acc.accumulate(&vote(&ring, ProcessId::server(0), slot(1.0)), &reg);
        let p = acc.accumulate(&vote(&ring, ProcessId::server(2), slot(1.0)), &reg).unwrap();
        let mut enc = Encoder::new();
        p.encode(&mut enc);
        let bytes = enc.into_bytes();
        let mut dec = Decoder::new(&bytes);
        assert_eq!(PoAI::decode(&mut dec).unwrap(), p);
        dec.finish().unwrap();
        assert!(p.render().starts_with("UPD "));
    }
}
