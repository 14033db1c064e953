//! Aggregation kernels: FedAvg, coordinate-wise median, trimmed mean, and
//! the ε-closeness test servers use to cross-validate each other's models.
//!
//! Every kernel consumes its inputs in the order the caller supplies. The
//! protocol layer relies on this to give each server its own summation order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::codec::{kind, Canonical, CanonicalDecode, DecodeError, Decoder, Encoder, EncodingError};
use crate::ids::ProcessId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregationError {
    #[error("no updates to aggregate")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("trimmed mean needs at least {needed} updates, got {got}")]
    InsufficientUpdates { needed: usize, got: usize },
    #[error("update weight must be at least 1")]
    ZeroWeight,
}

/// Dense model or update vector.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Largest per-coordinate absolute difference.
    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Canonical for ParamVector {
    const KIND: u8 = kind::PARAM_VECTOR;

    fn encode_body(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
        enc.reals(&self.0)
    }

    fn size_hint(&self) -> usize {
        8 * self.0.len() + 8
    }
}

impl CanonicalDecode for ParamVector {
    fn decode_body(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.reals()?))
    }
}

/// A client update with its FedAvg weight (the client's sample count).
#[derive(Clone, Copy, Debug)]
pub struct WeightedUpdate<'a> {
    pub update: &'a ParamVector,
    pub weight: u64,
    pub client: ProcessId,
    pub round: u64,
}

/// Per-coordinate acceptance gap; a scalar broadcasts to every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonVector {
    Uniform(f64),
    PerCoordinate(Vec<f64>),
}

impl EpsilonVector {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            EpsilonVector::Uniform(e) => *e,
            EpsilonVector::PerCoordinate(v) => v[i],
        }
    }

    pub fn is_valid_for(&self, dim: usize) -> bool {
        match self {
            EpsilonVector::Uniform(e) => e.is_finite() && *e >= 0.0,
            EpsilonVector::PerCoordinate(v) => v.len() == dim && v.iter().all(|e| e.is_finite() && *e >= 0.0),
        }
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) -> Result<(), EncodingError> {
        match self {
            EpsilonVector::Uniform(e) => {
                enc.u8(0);
                enc.f64(*e)
            }
            EpsilonVector::PerCoordinate(v) => {
                enc.u8(1);
                enc.reals(v)
            }
        }
    }

    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(EpsilonVector::Uniform(dec.f64()?)),
            1 => Ok(EpsilonVector::PerCoordinate(dec.reals()?)),
            _ => Err(DecodeError::Invalid("epsilon variant")),
        }
    }
}

/// The aggregation rule a task runs each round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[serde(rename = "fedavg")]
    FedAvg,
    Median,
    TrimmedMean(usize),
}

impl Aggregator {
    /// One aggregation step from `model`, consuming `updates` in the given order.
    pub fn step(&self, model: &ParamVector, updates: &[WeightedUpdate<'_>]) -> Result<ParamVector, AggregationError> {
        match *self {
            Aggregator::FedAvg => fedavg_step(model, updates),
            Aggregator::Median => median_step(model, updates),
            Aggregator::TrimmedMean(b) => trimmed_mean_step(model, updates, b),
        }
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) {
        match *self {
            Aggregator::FedAvg => enc.u8(0),
            Aggregator::Median => enc.u8(1),
            Aggregator::TrimmedMean(b) => {
                enc.u8(2);
                enc.u64(b as u64);
            }
        }
    }

    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Aggregator::FedAvg),
            1 => Ok(Aggregator::Median),
            2 => Ok(Aggregator::TrimmedMean(dec.u64()? as usize)),
            _ => Err(DecodeError::Invalid("aggregator variant")),
        }
    }
}

fn check_dims<'a>(dim: usize, vectors: impl IntoIterator<Item = &'a ParamVector>) -> Result<(), AggregationError> {
    for v in vectors {
        if v.dim() != dim {
            return Err(AggregationError::Dimension { expected: dim, found: v.dim() });
        }
    }
    Ok(())
}

/// `model − Σ_k (n_k / n) · g_k` with `n = Σ_k n_k`, summed in list order.
pub fn fedavg_step(model: &ParamVector, updates: &[WeightedUpdate<'_>]) -> Result<ParamVector, AggregationError> {
    if updates.is_empty() {
        return Err(AggregationError::Empty);
    }
    check_dims(model.dim(), updates.iter().map(|u| u.update))?;
    if updates.iter().any(|u| u.weight == 0) {
        return Err(AggregationError::ZeroWeight);
    }
    let total: u64 = updates.iter().map(|u| u.weight).sum();
    let total = total as f64;
    let mut step = vec![0.0; model.dim()];
    for u in updates {
        let coef = u.weight as f64 / total;
        for (s, g) in step.iter_mut().zip(u.update.as_slice()) {
            *s += coef * g;
        }
    }
    Ok(ParamVector(model.0.iter().zip(step).map(|(w, s)| w - s).collect()))
}

fn per_coordinate(
    updates: &[&ParamVector],
    mut reduce: impl FnMut(&mut [f64]) -> f64,
) -> Result<ParamVector, AggregationError> {
    let first = updates.first().ok_or(AggregationError::Empty)?;
    let dim = first.dim();
    check_dims(dim, updates.iter().copied())?;
    let mut column = vec![0.0; updates.len()];
    let out = (0..dim)
        .map(|i| {
            for (slot, u) in column.iter_mut().zip(updates) {
                *slot = u.0[i];
            }
            column.sort_unstable_by(f64::total_cmp);
            reduce(&mut column)
        })
        .collect();
    Ok(ParamVector(out))
}

/// Coordinate-wise median; an even count takes the midpoint of the central pair.
pub fn coordinate_median(updates: &[&ParamVector]) -> Result<ParamVector, AggregationError> {
    per_coordinate(updates, |sorted| {
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        }
    })
}

/// Coordinate-wise mean after dropping the `trim` smallest and `trim` largest values.
pub fn trimmed_mean(updates: &[&ParamVector], trim: usize) -> Result<ParamVector, AggregationError> {
    if updates.len() <= 2 * trim {
        return Err(AggregationError::InsufficientUpdates { needed: 2 * trim + 1, got: updates.len() });
    }
    per_coordinate(updates, |sorted| {
        let kept = &sorted[trim..sorted.len() - trim];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}

fn robust_step(
    model: &ParamVector,
    updates: &[WeightedUpdate<'_>],
    reduce: impl FnOnce(&[&ParamVector]) -> Result<ParamVector, AggregationError>,
) -> Result<ParamVector, AggregationError> {
    let vectors: Vec<&ParamVector> = updates.iter().map(|u| u.update).collect();
    let direction = reduce(&vectors)?;
    if direction.dim() != model.dim() {
        return Err(AggregationError::Dimension { expected: model.dim(), found: direction.dim() });
    }
    Ok(ParamVector(model.0.iter().zip(&direction.0).map(|(w, g)| w - g).collect()))
}

/// `model − median({g_k})`; weights are ignored.
pub fn median_step(model: &ParamVector, updates: &[WeightedUpdate<'_>]) -> Result<ParamVector, AggregationError> {
    robust_step(model, updates, coordinate_median)
}

/// `model − trimmed_mean({g_k}, trim)`; weights are ignored.
pub fn trimmed_mean_step(
    model: &ParamVector,
    updates: &[WeightedUpdate<'_>],
    trim: usize,
) -> Result<ParamVector, AggregationError> {
    robust_step(model, updates, |v| trimmed_mean(v, trim))
}

/// True iff `|a_i − b_i| ≤ eps_i` for every coordinate.
pub fn epsilon_close(a: &ParamVector, b: &ParamVector, eps: &EpsilonVector) -> Result<bool, AggregationError> {
    if a.dim() != b.dim() {
        return Err(AggregationError::Dimension { expected: a.dim(), found: b.dim() });
    }
    if let EpsilonVector::PerCoordinate(e) = eps {
        if e.len() != a.dim() {
            return Err(AggregationError::Dimension { expected: a.dim(), found: e.len() });
        }
    }
    Ok(a.0.iter().zip(&b.0).enumerate().all(|(i, (x, y))| {
        (x - y).abs().partial_cmp(&eps.get(i)).is_some_and(|o| o != Ordering::Greater)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector(v.to_vec())
    }

    fn wu(g: &ParamVector, weight: u64, k: u32) -> WeightedUpdate<'_> {
        WeightedUpdate { update: g, weight, client: ProcessId::client(k), round: 1 }
    }

    fn assert_close(a: &ParamVector, b: &[f64]) {
        assert_eq!(a.dim(), b.len());
        for (x, y) in a.0.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn fedavg_examples() {
        let (g1, g2) = (pv(&[0.2]), pv(&[0.4]));
        assert_close(&fedavg_step(&pv(&[1.0]), &[wu(&g1, 1, 0), wu(&g2, 1, 1)]).unwrap(), &[0.7]);

        let g = pv(&[0.3, -2.0]);
        assert_eq!(fedavg_step(&pv(&[1.0, 1.0]), &[wu(&g, 7, 0)]).unwrap(), pv(&[0.7, 3.0]));

        let (g1, g2) = (pv(&[3.0, -3.0]), pv(&[1.0, 1.0]));
        assert_close(&fedavg_step(&pv(&[0.0, 0.0]), &[wu(&g1, 1, 0), wu(&g2, 3, 1)]).unwrap(), &[-1.5, 0.0]);
    }

    #[test]
    fn fedavg_errors() {
        assert_eq!(fedavg_step(&pv(&[0.0]), &[]), Err(AggregationError::Empty));
        let g = pv(&[1.0, 2.0]);
        assert_eq!(
            fedavg_step(&pv(&[0.0]), &[wu(&g, 1, 0)]),
            Err(AggregationError::Dimension { expected: 1, found: 2 })
        );
        let g = pv(&[1.0]);
        assert_eq!(fedavg_step(&pv(&[0.0]), &[wu(&g, 0, 0)]), Err(AggregationError::ZeroWeight));
    }

    #[test]
    fn median_examples() {
        let (a, b, c) = (pv(&[1.0, 10.0]), pv(&[2.0, 20.0]), pv(&[30.0, 3.0]));
        assert_eq!(coordinate_median(&[&a, &b, &c]).unwrap(), pv(&[2.0, 10.0]));
        let (a, b) = (pv(&[1.0]), pv(&[3.0]));
        assert_eq!(coordinate_median(&[&a, &b]).unwrap(), pv(&[2.0]));
        assert_eq!(coordinate_median(&[]), Err(AggregationError::Empty));
    }

    #[test]
    fn trimmed_mean_examples() {
        let (a, b, c) = (pv(&[1.0]), pv(&[2.0]), pv(&[100.0]));
        assert_eq!(trimmed_mean(&[&a, &b, &c], 1).unwrap(), pv(&[2.0]));
        assert_close(&trimmed_mean(&[&a, &b, &c], 0).unwrap(), &[103.0 / 3.0]);
        let vs: Vec<ParamVector> = [0.0, 0.0, 0.0, 5.0, -5.0].iter().map(|v| pv(&[*v])).collect();
        let refs: Vec<&ParamVector> = vs.iter().collect();
        assert_eq!(trimmed_mean(&refs, 1).unwrap(), pv(&[0.0]));
        assert_eq!(
            trimmed_mean(&[&a, &b], 1),
            Err(AggregationError::InsufficientUpdates { needed: 3, got: 2 })
        );
    }

    #[test]
    fn median_step_examples() {
        let gs: Vec<ParamVector> = [0.1, 0.2, 0.3].iter().map(|v| pv(&[*v])).collect();
        let ups: Vec<_> = gs.iter().enumerate().map(|(k, g)| wu(g, 1 + k as u64, k as u32)).collect();
        assert_close(&median_step(&pv(&[1.0]), &ups).unwrap(), &[0.8]);

        let g = pv(&[0.25, -0.5]);
        let same: Vec<_> = (0..4).map(|k| wu(&g, 1, k)).collect();
        let w = pv(&[1.0, 1.0]);
        assert_eq!(median_step(&w, &same).unwrap(), fedavg_step(&w, &same).unwrap());
    }

    #[test]
    fn median_step_ignores_boosted_attacker() {
        // Brute-force oracle: the median of {0.19, 0.2, 0.21, -1.0} sorted is
        // the mean of 0.19 and 0.2, inside the honest envelope.
        let gs: Vec<ParamVector> = [0.19, 0.2, 0.21, -1.0].iter().map(|v| pv(&[*v])).collect();
        let ups: Vec<_> = gs.iter().enumerate().map(|(k, g)| wu(g, 1, k as u32)).collect();
        let out = median_step(&pv(&[1.0]), &ups).unwrap();
        let delta = 0.02;
        assert!(out.0[0] >= 1.0 - 0.2 - delta && out.0[0] <= 1.0 - 0.1 + delta, "{out:?}");
        assert_close(&out, &[1.0 - 0.195]);
    }

    #[test]
    fn epsilon_examples() {
        let eps = EpsilonVector::Uniform(0.003);
        assert!(epsilon_close(&pv(&[1.000]), &pv(&[1.002]), &eps).unwrap());
        assert!(!epsilon_close(&pv(&[1.000]), &pv(&[1.005]), &eps).unwrap());
        assert!(epsilon_close(&pv(&[4.0, -1.0]), &pv(&[4.0, -1.0]), &EpsilonVector::Uniform(0.0)).unwrap());
        let per = EpsilonVector::PerCoordinate(vec![0.0, 1.0]);
        assert!(epsilon_close(&pv(&[0.0, 0.0]), &pv(&[0.0, 0.9]), &per).unwrap());
        assert!(!epsilon_close(&pv(&[0.0, 0.0]), &pv(&[0.1, 0.0]), &per).unwrap());
        assert!(epsilon_close(&pv(&[0.0]), &pv(&[0.0, 1.0]), &eps).is_err());
    }

    #[test]
    fn aggregator_dispatch() {
        let gs: Vec<ParamVector> = [1.0, 2.0, 9.0].iter().map(|v| pv(&[*v])).collect();
        let ups: Vec<_> = gs.iter().enumerate().map(|(k, g)| wu(g, 1, k as u32)).collect();
        let w = pv(&[0.0]);
        assert_close(&Aggregator::FedAvg.step(&w, &ups).unwrap(), &[-4.0]);
        assert_close(&Aggregator::Median.step(&w, &ups).unwrap(), &[-2.0]);
        assert_close(&Aggregator::TrimmedMean(1).step(&w, &ups).unwrap(), &[-2.0]);
    }

    #[test]
    fn param_vector_encoding() {
        use crate::codec::{canonical_decode, canonical_encode};
        let v = pv(&[1.0]);
        assert_eq!(canonical_encode(&v).unwrap(), canonical_encode(&v).unwrap());
        assert_ne!(canonical_encode(&v).unwrap(), canonical_encode(&pv(&[2.0])).unwrap());
        assert!(canonical_encode(&pv(&[f64::NAN])).is_err());
        let back: ParamVector = canonical_decode(&canonical_encode(&pv(&[-0.5, 3.25])).unwrap()).unwrap();
        assert_eq!(back, pv(&[-0.5, 3.25]));
    }
}
