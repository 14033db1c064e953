use serde::{Deserialize, Serialize};

use crate::aggregation::ParamVector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackConfig {
    #[default]
    None,
    /// Send `−λ_boost · g` instead of `g`; `λ_boost ≥ 1`.
    SignFlipBoost { lambda_boost: f64 },
}

impl AttackConfig {
    pub fn is_valid(&self) -> bool {
        match *self {
            AttackConfig::None => true,
            AttackConfig::SignFlipBoost { lambda_boost } => lambda_boost.is_finite() && lambda_boost >= 1.0,
        }
    }
}

pub fn apply_attack(g: &ParamVector, cfg: &AttackConfig) -> ParamVector {
    match *cfg {
        AttackConfig::None => g.clone(),
        AttackConfig::SignFlipBoost { lambda_boost } => ParamVector(g.0.iter().map(|v| -lambda_boost * v).collect()),
    }
}
