use bftfl::aggregation::{fedavg_step, median_step, ParamVector, WeightedUpdate};
use bftfl::ids::ProcessId;
use bftfl::learning::{
    apply_attack, global_loss, instahide_encode, local_update, AttackConfig, ClientDataset, FeatureMap, InstaHideConfig,
    LocalTrainConfig, Partition, SyntheticTask, TaskKind,
};
use bftfl::rng::stream;

const LOG_2: f64 = std::f64::consts::LN_2;

fn federated(
    task: &SyntheticTask,
    train_on: &[ClientDataset],
    eval_on: &[ClientDataset],
    cfg: &LocalTrainConfig,
    rounds: usize,
    byzantine: usize,
    robust: bool,
) -> Vec<f64> {
    let mut w = ParamVector::zeros(task.dim());
    let mut rng = stream(1, "fl", 0);
    let mut losses = vec![global_loss(task, eval_on, &w).unwrap()];
    for round in 1..=rounds {
        let updates: Vec<ParamVector> = train_on
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let g = local_update(task, d, &w, cfg, &mut rng).unwrap();
                if i < byzantine {
                    apply_attack(&g, &AttackConfig::SignFlipBoost { lambda_boost: 5.0 })
                } else {
                    g
                }
            })
            .collect();
        let weighted: Vec<WeightedUpdate<'_>> = updates
            .iter()
            .zip(train_on)
            .enumerate()
            .map(|(i, (u, d))| WeightedUpdate {
                update: u,
                weight: d.len() as u64,
                client: ProcessId::client(i as u32),
                round: round as u64,
            })
            .collect();
        w = if robust { median_step(&w, &weighted) } else { fedavg_step(&w, &weighted) }.unwrap();
        losses.push(global_loss(task, eval_on, &w).unwrap());
    }
    losses
}

fn linear_setup(clients: usize) -> (SyntheticTask, Vec<ClientDataset>) {
    let mut rng = stream(4, "lin", 0);
    let task = SyntheticTask::generate(TaskKind::LinearRegression, FeatureMap::Identity, 5, 0.1, &mut rng);
    let data = task.generate_datasets(clients, 30, Partition::Iid, &mut rng);
    (task, data)
}

#[test]
fn full_batch_fedavg_decreases_loss_every_round() {
    let (task, data) = linear_setup(6);
    let cfg = LocalTrainConfig { epochs: 1, batch: 30, lr: 0.05 };
    let losses = federated(&task, &data, &data, &cfg, 40, 0, false);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert!(losses[40] < 0.05 * losses[0]);
}

#[test]
fn boosted_sign_flip_breaks_fedavg_but_not_median() {
    let (task, data) = linear_setup(9);
    let cfg = LocalTrainConfig { epochs: 1, batch: 10, lr: 0.05 };
    let honest = federated(&task, &data, &data, &cfg, 30, 0, false);
    let attacked = federated(&task, &data, &data, &cfg, 30, 3, false);
    let median = federated(&task, &data, &data, &cfg, 30, 3, true);
    assert!(attacked[30] > 10.0 * honest[30]);
    assert!(median[30] < 2.0 * honest[30]);
}

fn logistic(features: FeatureMap, seed: u64) -> (SyntheticTask, Vec<ClientDataset>, Vec<ClientDataset>) {
    let mut rng = stream(seed, "logit", 0);
    let task = SyntheticTask::generate(TaskKind::LogisticRegression, features, 8, 0.3, &mut rng);
    let clean = task.generate_datasets(8, 60, Partition::Iid, &mut rng);
    let encoded = clean.iter().map(|d| instahide_encode(d, &InstaHideConfig { mix: 2 }, &mut rng).unwrap()).collect();
    (task, clean, encoded)
}

#[test]
fn raw_features_cannot_learn_from_encodings() {
    let cfg = LocalTrainConfig { epochs: 2, batch: 10, lr: 0.3 };
    let (task, clean, encoded) = logistic(FeatureMap::Identity, 2);
    let on_clean = federated(&task, &clean, &clean, &cfg, 40, 0, false);
    let on_encoded = federated(&task, &encoded, &clean, &cfg, 40, 0, false);
    assert!(on_clean[40] < 0.5 * LOG_2, "{}", on_clean[40]);
    assert!((on_encoded[40] - LOG_2).abs() < 0.1, "{}", on_encoded[40]);
}

#[test]
fn sign_invariant_features_learn_from_encodings() {
    let cfg = LocalTrainConfig { epochs: 2, batch: 10, lr: 0.3 };
    let (task, clean, encoded) = logistic(FeatureMap::Abs, 3);
    let on_clean = federated(&task, &clean, &clean, &cfg, 40, 0, false);
    let on_encoded = federated(&task, &encoded, &clean, &cfg, 40, 0, false);
    assert!(on_encoded[40] < 0.85 * LOG_2, "{}", on_encoded[40]);
    assert!(on_encoded[40] < 1.5 * on_clean[40], "{} vs {}", on_encoded[40], on_clean[40]);
}

#[test]
fn label_skew_sorts_classes_across_clients() {
    let mut rng = stream(8, "skew", 0);
    let task = SyntheticTask::generate(TaskKind::LogisticRegression, FeatureMap::Abs, 4, 0.0, &mut rng);
    let data = task.generate_datasets(4, 25, Partition::LabelSkew, &mut rng);
    let positive: Vec<f64> = data.iter().map(|d| d.samples.iter().map(|s| s.y[1]).sum::<f64>() / 25.0).collect();
    assert!(positive.windows(2).all(|w| w[0] <= w[1]), "{positive:?}");
    assert_eq!(positive[0], 0.0);
    assert_eq!(positive[3], 1.0);
}
