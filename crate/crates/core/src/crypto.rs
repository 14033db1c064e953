//! Ed25519 signatures with keypairs derived deterministically from a seed.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signer as _, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::codec::{hash_parts, HashKey};
use crate::ids::ProcessId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("unknown process {0}")]
    UnknownProcess(ProcessId),
}

/// A signature over a 32-byte digest, tagged with the claimed signer.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub signer: ProcessId,
    #[serde(with = "hex_bytes")]
    pub bytes: [u8; 64],
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}, {}..)", self.signer, hex::encode(&self.bytes[..6]))
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 64], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 64];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

fn derive_secret(seed: u64, id: ProcessId) -> [u8; 32] {
    hash_parts(&[b"bftfl/signing-key", &seed.to_le_bytes(), &[id.kind.code()], &id.index.to_le_bytes()]).0
}

/// Public verification keys for every process of a scenario.
#[derive(Clone, Debug, Default)]
pub struct KeyRegistry {
    keys: BTreeMap<ProcessId, VerifyingKey>,
}

/// Private signing keys; each simulated actor receives only its own [`SignerKey`].
#[derive(Clone, Default)]
pub struct Keyring {
    keys: BTreeMap<ProcessId, SigningKey>,
}

impl KeyRegistry {
    pub fn contains(&self, id: ProcessId) -> bool {
        self.keys.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.keys.keys().copied()
    }
}

/// Derives the key registry and keyring for `processes` from `seed`.
/// Duplicate ids collapse to one entry.
pub fn derive_keys(seed: u64, processes: impl IntoIterator<Item = ProcessId>) -> (KeyRegistry, Keyring) {
    let mut registry = KeyRegistry::default();
    let mut ring = Keyring::default();
    for id in processes {
        let sk = SigningKey::from_bytes(&derive_secret(seed, id));
        registry.keys.insert(id, sk.verifying_key());
        ring.keys.insert(id, sk);
    }
    (registry, ring)
}

impl Keyring {
    pub fn signer(&self, id: ProcessId) -> Result<SignerKey, CryptoError> {
        self.keys
            .get(&id)
            .map(|key| SignerKey { id, key: key.clone() })
            .ok_or(CryptoError::UnknownProcess(id))
    }

    pub fn sign(&self, signer: ProcessId, digest: &HashKey) -> Result<Signature, CryptoError> {
        Ok(self.signer(signer)?.sign(digest))
    }
}

/// One process's signing identity.
#[derive(Clone)]
pub struct SignerKey {
    id: ProcessId,
    key: SigningKey,
}

impl SignerKey {
    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn sign(&self, digest: &HashKey) -> Signature {
        Signature { signer: self.id, bytes: self.key.sign(digest.as_bytes()).to_bytes() }
    }
}

impl fmt::Debug for SignerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SignerKey({})", self.id)
    }
}

/// True iff `sig` was produced by its claimed signer over exactly `digest`.
pub fn verify(registry: &KeyRegistry, sig: &Signature, digest: &HashKey) -> bool {
    let Some(vk) = registry.keys.get(&sig.signer) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.bytes);
    vk.verify_strict(digest.as_bytes(), &sig).is_ok()
}
