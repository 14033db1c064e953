use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::ParamVector;

use super::{ClientDataset, LearningError, SyntheticTask};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub epochs: u32,
    pub batch: u32,
    pub lr: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self { epochs: 1, batch: 16, lr: 0.05 }
    }
}

/// Runs `epochs` of minibatch SGD from `model` and returns the update
/// `model − trained`. Shuffling draws only from `rng`.
pub fn local_update<R: Rng>(
    task: &SyntheticTask,
    data: &ClientDataset,
    model: &ParamVector,
    cfg: &LocalTrainConfig,
    rng: &mut R,
) -> Result<ParamVector, LearningError> {
    if data.is_empty() {
        return Err(LearningError::EmptyDataset);
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(LearningError::InvalidConfig("epochs and batch must be at least 1"));
    }
    if let Some(s) = data.samples.iter().find(|s| s.x.len() != model.dim()) {
        return Err(LearningError::Dimension { expected: model.dim(), found: s.x.len() });
    }
    let mut w = model.0.clone();
    let mut grad = vec![0.0; w.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch as usize) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                task.accumulate_gradient(&w, &data.samples[i], scale, &mut grad);
            }
            for (w, g) in w.iter_mut().zip(&grad) {
                *w -= cfg.lr * g;
            }
        }
    }
    let update: Vec<f64> = model.0.iter().zip(&w).map(|(a, b)| a - b).collect();
    if update.iter().all(|v| v.is_finite()) {
        Ok(ParamVector(update))
    } else {
        Err(LearningError::TrainingDiverged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{FeatureMap, Partition, TaskKind};
    use crate::rng::stream;

    fn setup(dim: usize) -> (SyntheticTask, ClientDataset) {
        let mut rng = stream(9, "sgd", 0);
        let task = SyntheticTask::generate(TaskKind::LinearRegression, FeatureMap::Identity, dim, 0.5, &mut rng);
        let data = task.generate_datasets(1, 40, Partition::Iid, &mut rng).remove(0);
        (task, data)
    }

    #[test]
    fn zero_learning_rate_gives_zero_update() {
        let (task, data) = setup(3);
        let cfg = LocalTrainConfig { epochs: 3, batch: 7, lr: 0.0 };
        let g = local_update(&task, &data, &ParamVector(vec![0.5; 3]), &cfg, &mut stream(1, "x", 0)).unwrap();
        assert_eq!(g, ParamVector::zeros(3));
    }

    #[test]
    fn same_stream_same_update() {
        let (task, data) = setup(4);
        let cfg = LocalTrainConfig { epochs: 2, batch: 5, lr: 0.01 };
        let w = ParamVector::zeros(4);
        let a = local_update(&task, &data, &w, &cfg, &mut stream(1, "x", 0)).unwrap();
        let b = local_update(&task, &data, &w, &cfg, &mut stream(1, "x", 0)).unwrap();
        let c = local_update(&task, &data, &w, &cfg, &mut stream(1, "x", 1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (task, data) = setup(3);
        let cfg = LocalTrainConfig { epochs: 200, batch: 1, lr: 1e6 };
        let err = local_update(&task, &data, &ParamVector::zeros(3), &cfg, &mut stream(1, "x", 0)).unwrap_err();
        assert_eq!(err, LearningError::TrainingDiverged);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (task, data) = setup(3);
        let cfg = LocalTrainConfig::default();
        let mut rng = stream(1, "x", 0);
        assert!(local_update(&task, &ClientDataset::default(), &ParamVector::zeros(3), &cfg, &mut rng).is_err());
        assert!(local_update(&task, &data, &ParamVector::zeros(2), &cfg, &mut rng).is_err());
        let bad = LocalTrainConfig { epochs: 0, ..cfg };
        assert!(local_update(&task, &data, &ParamVector::zeros(3), &bad, &mut rng).is_err());
    }
}
