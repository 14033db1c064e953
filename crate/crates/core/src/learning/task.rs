use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregation::ParamVector;

use super::LearningError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LinearRegression,
    LogisticRegression,
}

/// How the model reads a feature vector. `Abs` makes predictions invariant
/// to per-coordinate sign flips.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    #[default]
    Identity,
    Abs,
}

impl FeatureMap {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            FeatureMap::Identity => v,
            FeatureMap::Abs => v.abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    #[default]
    Iid,
    LabelSkew,
}

/// A labelled sample. Regression labels have one component; classification
/// labels are one-hot (or convex mixes of one-hot) over two classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClientDataset {
    pub samples: Vec<Sample>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub features: FeatureMap,
    pub theta: ParamVector,
    pub noise: f64,
}

const MEAN_ABS_NORMAL: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl SyntheticTask {
    /// Draws true parameters of dimension `dim`. Logistic tasks reserve the
    /// last coordinate as a constant bias feature, calibrated so the classes
    /// are roughly balanced.
    pub fn generate<R: Rng>(kind: TaskKind, features: FeatureMap, dim: usize, noise: f64, rng: &mut R) -> Self {
        assert!(dim >= 1, "task dimension must be at least 1");
        let mut theta: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if kind == TaskKind::LogisticRegression {
            let bias = match features {
                FeatureMap::Identity => 0.0,
                FeatureMap::Abs => -theta[..dim - 1].iter().sum::<f64>() * MEAN_ABS_NORMAL,
            };
            theta[dim - 1] = bias;
        }
        Self { kind, features, theta: ParamVector(theta), noise }
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    fn draw_sample<R: Rng>(&self, rng: &mut R) -> Sample {
        let d = self.dim();
        let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * self.noise;
        match self.kind {
            TaskKind::LinearRegression => {
                let y = self.predict_raw(&self.theta.0, &x) + noise;
                Sample { x, y: vec![y] }
            }
            TaskKind::LogisticRegression => {
                x[d - 1] = 1.0;
                let z = self.predict_raw(&self.theta.0, &x) + noise;
                let c = if z > 0.0 { 1.0 } else { 0.0 };
                Sample { x, y: vec![1.0 - c, c] }
            }
        }
    }

    /// Generates `clients` datasets of `per_client` samples each.
    pub fn generate_datasets<R: Rng>(
        &self,
        clients: usize,
        per_client: usize,
        partition: Partition,
        rng: &mut R,
    ) -> Vec<ClientDataset> {
        let mut pool: Vec<Sample> = (0..clients * per_client).map(|_| self.draw_sample(rng)).collect();
        if partition == Partition::LabelSkew {
            pool.sort_by(|a, b| a.y.last().unwrap().total_cmp(b.y.last().unwrap()));
        }
        let mut out = Vec::with_capacity(clients);
        let mut it = pool.into_iter();
        for _ in 0..clients {
            out.push(ClientDataset { samples: it.by_ref().take(per_client).collect() });
        }
        out
    }

    #[inline]
    fn predict_raw(&self, w: &[f64], x: &[f64]) -> f64 {
        w.iter().zip(x).map(|(w, x)| w * self.features.apply(*x)).sum()
    }

    fn check_dim(&self, w: &ParamVector, s: &Sample) -> Result<(), LearningError> {
        if w.dim() != s.x.len() {
            return Err(LearningError::Dimension { expected: w.dim(), found: s.x.len() });
        }
        let labels = match self.kind {
            TaskKind::LinearRegression => 1,
            TaskKind::LogisticRegression => 2,
        };
        if s.y.len() != labels {
            return Err(LearningError::Dimension { expected: labels, found: s.y.len() });
        }
        Ok(())
    }

    /// Loss of one sample; squared error or binary cross-entropy.
    pub fn sample_loss(&self, w: &ParamVector, s: &Sample) -> Result<f64, LearningError> {
        self.check_dim(w, s)?;
        let z = self.predict_raw(&w.0, &s.x);
        Ok(match self.kind {
            TaskKind::LinearRegression => (z - s.y[0]).powi(2),
            TaskKind::LogisticRegression => softplus(z) - s.y[1] * z,
        })
    }

    /// Adds `scale · ∇loss(w; s)` into `grad`.
    pub(crate) fn accumulate_gradient(&self, w: &[f64], s: &Sample, scale: f64, grad: &mut [f64]) {
        let z = self.predict_raw(w, &s.x);
        let residual = match self.kind {
            TaskKind::LinearRegression => 2.0 * (z - s.y[0]),
            TaskKind::LogisticRegression => sigmoid(z) - s.y[1],
        };
        let c = scale * residual;
        for (g, x) in grad.iter_mut().zip(&s.x) {
            *g += c * self.features.apply(*x);
        }
    }

    /// Mean per-sample loss over one client's data.
    pub fn client_loss(&self, data: &ClientDataset, w: &ParamVector) -> Result<f64, LearningError> {
        if data.is_empty() {
            return Err(LearningError::EmptyDataset);
        }
        let mut total = 0.0;
        for s in &data.samples {
            total += self.sample_loss(w, s)?;
        }
        Ok(total / data.len() as f64)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `Σ_c (n_c / N) · loss_c(w)` over all client datasets.
pub fn global_loss(task: &SyntheticTask, datasets: &[ClientDataset], w: &ParamVector) -> Result<f64, LearningError> {
    let total: usize = datasets.iter().map(ClientDataset::len).sum();
    if datasets.is_empty() || total == 0 {
        return Err(LearningError::EmptyDataset);
    }
    let mut loss = 0.0;
    for data in datasets.iter().filter(|d| !d.is_empty()) {
        loss += data.len() as f64 / total as f64 * task.client_loss(data, w)?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn linear(theta: &[f64]) -> SyntheticTask {
        SyntheticTask {
            kind: TaskKind::LinearRegression,
            features: FeatureMap::Identity,
            theta: ParamVector(theta.to_vec()),
            noise: 0.0,
        }
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let mut rng = stream(1, "t", 0);
        let task = SyntheticTask::generate(TaskKind::LinearRegression, FeatureMap::Identity, 4, 0.0, &mut rng);
        let data = task.generate_datasets(3, 10, Partition::Iid, &mut rng);
        let loss = global_loss(&task, &data, &task.theta).unwrap();
        assert!(loss < 1e-24, "{loss}");
    }

    #[test]
    fn single_sample_squared_error() {
        let task = linear(&[0.0]);
        let data = vec![ClientDataset { samples: vec![Sample { x: vec![1.0], y: vec![0.0] }] }];
        assert_eq!(global_loss(&task, &data, &ParamVector(vec![2.0])).unwrap(), 4.0);
    }

    #[test]
    fn equal_clients_weigh_half_each() {
        let task = linear(&[0.0]);
        let a = ClientDataset { samples: vec![Sample { x: vec![1.0], y: vec![0.0] }; 2] };
        let b = ClientDataset { samples: vec![Sample { x: vec![1.0], y: vec![1.0] }; 2] };
        let w = ParamVector(vec![2.0]);
        let la = task.client_loss(&a, &w).unwrap();
        let lb = task.client_loss(&b, &w).unwrap();
        assert_eq!(global_loss(&task, &[a, b], &w).unwrap(), (la + lb) / 2.0);
    }

    #[test]
    fn logistic_loss_is_non_negative_with_soft_labels() {
        let mut rng = stream(2, "t", 0);
        let task = SyntheticTask::generate(TaskKind::LogisticRegression, FeatureMap::Abs, 5, 0.1, &mut rng);
        let data = task.generate_datasets(2, 50, Partition::Iid, &mut rng);
        for w in [task.theta.clone(), ParamVector::zeros(5)] {
            assert!(global_loss(&task, &data, &w).unwrap() >= 0.0);
        }
        let soft = Sample { x: vec![0.3, -1.0, 0.2, 0.0, 1.0], y: vec![0.4, 0.6] };
        assert!(task.sample_loss(&ParamVector::zeros(5), &soft).unwrap() > 0.0);
    }

    #[test]
    fn logistic_classes_are_roughly_balanced() {
        let mut rng = stream(3, "t", 0);
        for features in [FeatureMap::Identity, FeatureMap::Abs] {
            let task = SyntheticTask::generate(TaskKind::LogisticRegression, features, 8, 0.0, &mut rng);
            let data = task.generate_datasets(1, 2000, Partition::Iid, &mut rng);
            let ones = data[0].samples.iter().filter(|s| s.y[1] == 1.0).count();
            assert!((400..1600).contains(&ones), "{features:?}: {ones}");
        }
    }

    #[test]
    fn label_skew_sorts_shards() {
        let mut rng = stream(4, "t", 0);
        let task = SyntheticTask::generate(TaskKind::LinearRegression, FeatureMap::Identity, 3, 0.1, &mut rng);
        let data = task.generate_datasets(3, 5, Partition::LabelSkew, &mut rng);
        let max0 = data[0].samples.iter().map(|s| s.y[0]).fold(f64::MIN, f64::max);
        let min1 = data[1].samples.iter().map(|s| s.y[0]).fold(f64::MAX, f64::min);
        assert!(max0 <= min1);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let task = linear(&[0.0, 0.0]);
        let data = vec![ClientDataset { samples: vec![Sample { x: vec![1.0], y: vec![0.0] }] }];
        assert!(matches!(
            global_loss(&task, &data, &ParamVector::zeros(2)),
            Err(LearningError::Dimension { .. })
        ));
    }
}
