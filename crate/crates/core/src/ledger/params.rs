use serde::{Deserialize, Serialize};

use crate::aggregation::{Aggregator, EpsilonVector};
use crate::codec::{kind, Canonical, CanonicalDecode, DecodeError, Decoder, Encoder, EncodingError};
use crate::learning::LocalTrainConfig;

fn default_eps() -> EpsilonVector {
    EpsilonVector::Uniform(1e-6)
}

fn default_aggregator() -> Aggregator {
    Aggregator::FedAvg
}

fn default_stake_threshold() -> u64 {
    1
}

/// Task parameters published by the model owner in NEW_TASK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskParams {
    /// Clients selected per round.
    pub k: usize,
    /// Registrations required before the task starts.
    pub min_clients: usize,
    /// Update certificates needed to propose a round's candidate set.
    pub m: usize,
    /// Index of the last round.
    pub t_fin: u64,
    #[serde(default = "default_eps")]
    pub eps: EpsilonVector,
    #[serde(default = "default_aggregator")]
    pub aggregator: Aggregator,
    #[serde(default)]
    pub train: LocalTrainConfig,
    #[serde(default)]
    pub selection_seed: u64,
    pub dim: usize,
    /// Minimum JOIN stake.
    #[serde(default = "default_stake_threshold")]
    pub stake_threshold: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid task parameters: {0}")]
pub struct ParamsError(pub String);

impl TaskParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        let err = |s: &str| Err(ParamsError(s.to_string()));
        if self.dim == 0 {
            return err("dim must be at least 1");
        }
        if self.k == 0 || self.k > self.min_clients {
            return err("need 1 <= k <= min_clients");
        }
        if self.m == 0 || self.m > self.k {
            return err("need 1 <= m <= k");
        }
        if self.t_fin == 0 {
            return err("t_fin must be at least 1");
        }
        if !self.eps.is_valid_for(self.dim) {
            return err("eps must be finite, non-negative, and match dim");
        }
        if let Aggregator::TrimmedMean(b) = self.aggregator {
            if self.m <= 2 * b {
                return err("trimmed mean needs m > 2 * trim");
            }
        }
        if self.train.epochs == 0 || self.train.batch == 0 || !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return err("train needs epochs >= 1, batch >= 1, lr > 0");
        }
        Ok(())
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
        enc.u64(self.k as u64);
        enc.u64(self.min_clients as u64);
        enc.u64(self.m as u64);
        enc.u64(self.t_fin);
        self.eps.encode(enc)?;
        self.aggregator.encode(enc);
        enc.u32(self.train.epochs);
        enc.u32(self.train.batch);
        enc.f64(self.train.lr)?;
        enc.u64(self.selection_seed);
        enc.u64(self.dim as u64);
        enc.u64(self.stake_threshold);
        Ok(())
    }

    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            k: dec.u64()? as usize,
            min_clients: dec.u64()? as usize,
            m: dec.u64()? as usize,
            t_fin: dec.u64()?,
            eps: EpsilonVector::decode(dec)?,
            aggregator: Aggregator::decode(dec)?,
            train: LocalTrainConfig { epochs: dec.u32()?, batch: dec.u32()?, lr: dec.f64()? },
            selection_seed: dec.u64()?,
            dim: dec.u64()? as usize,
            stake_threshold: dec.u64()?,
        })
    }
}

impl Canonical for TaskParams {
    const KIND: u8 = kind::TASK_PARAMS;

    fn encode_body(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
        self.encode(enc)
    }
}

impl CanonicalDecode for TaskParams {
    fn decode_body(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Self::decode(dec)
    }
}
