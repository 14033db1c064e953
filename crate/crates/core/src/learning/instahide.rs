//! Client-side data encoding: each output sample is a random convex mix of
//! `s` local samples followed by a fresh random sign flip per coordinate.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClientDataset, LearningError, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstaHideConfig {
    pub mix: usize,
}

/// The draws used to produce one encoded sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MixRecord {
    /// Source indices; the first is the sample being encoded.
    pub sources: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub signs: Vec<i8>,
}

/// `σ ∘ Σ_j λ_j x_j` with label `Σ_j λ_j y_j`.
pub fn mix_sample(sources: &[&Sample], lambdas: &[f64], signs: &[i8]) -> Sample {
    let d = sources[0].x.len();
    let labels = sources[0].y.len();
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; labels];
    for (s, &l) in sources.iter().zip(lambdas) {
        for (acc, v) in x.iter_mut().zip(&s.x) {
            *acc += l * v;
        }
        for (acc, v) in y.iter_mut().zip(&s.y) {
            *acc += l * v;
        }
    }
    for (v, &sign) in x.iter_mut().zip(signs) {
        *v *= f64::from(sign);
    }
    Sample { x, y }
}

/// Uniform draw on the probability simplex via normalised exponentials.
/// The left-to-right sum of the result is exactly 1.
pub fn draw_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut lambdas: Vec<f64> = raw.iter().map(|e| e / total).collect();
    if let Some((last, rest)) = lambdas.split_last_mut() {
        *last = (1.0 - rest.iter().sum::<f64>()).max(0.0);
    }
    // Nudge the last coefficient by single ulps until the sum is exact.
    for _ in 0..64 {
        let sum: f64 = lambdas.iter().sum();
        if sum == 1.0 {
            break;
        }
        let last = lambdas.last_mut().unwrap();
        *last = if sum > 1.0 { last.next_down() } else { last.next_up() };
    }
    lambdas
}

pub fn instahide_encode_traced<R: Rng>(
    data: &ClientDataset,
    cfg: &InstaHideConfig,
    rng: &mut R,
) -> Result<(ClientDataset, Vec<MixRecord>), LearningError> {
    let n = data.len();
    if cfg.mix == 0 || cfg.mix > n {
        return Err(LearningError::MixCount { mix: cfg.mix, samples: n });
    }
    let mut out = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut sources = vec![i];
        // s−1 distinct partners among the other n−1 samples.
        for j in index::sample(rng, n - 1, cfg.mix - 1) {
            sources.push(if j >= i { j + 1 } else { j });
        }
        let lambdas = draw_simplex(cfg.mix, rng);
        let signs: Vec<i8> = (0..data.samples[i].x.len()).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let refs: Vec<&Sample> = sources.iter().map(|&j| &data.samples[j]).collect();
        out.push(mix_sample(&refs, &lambdas, &signs));
        records.push(MixRecord { sources, lambdas, signs });
    }
    Ok((ClientDataset { samples: out }, records))
}

pub fn instahide_encode<R: Rng>(
    data: &ClientDataset,
    cfg: &InstaHideConfig,
    rng: &mut R,
) -> Result<ClientDataset, LearningError> {
    instahide_encode_traced(data, cfg, rng).map(|(d, _)| d)
}
