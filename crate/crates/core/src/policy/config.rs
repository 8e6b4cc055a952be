use serde::{Deserialize, Serialize};

use super::{PolicyError, PolicyResult};
use crate::datasets::SupervisionVariant;
use crate::tensornet::{Precision, ROPE_BASE};

pub const POLICY_SCHEMA: &str = "policy_cfg_v1";

fn schema() -> String {
    POLICY_SCHEMA.to_string()
}

/// Model hyperparameters; serialized as a `policy_cfg_v1` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    #[serde(default = "schema")]
    pub schema: String,
    pub d_model: usize,
    pub predictor_blocks: usize,
    pub decoder_blocks: usize,
    pub heads: usize,
    pub horizon: usize,
    pub lambda: f64,
    pub ffn_mult: usize,
    pub variant: SupervisionVariant,
    /// Multiplier on position targets before the trajectory loss.
    pub position_scale: f64,
    pub rope_base: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl PolicyConfig {
    /// Desk-scale defaults.
    pub fn desk(variant: SupervisionVariant) -> Self {
        PolicyConfig {
            schema: schema(),
            d_model: 64,
            predictor_blocks: 2,
            decoder_blocks: 1,
            heads: 4,
            horizon: 8,
            lambda: 0.1,
            ffn_mult: 4,
            variant,
            position_scale: 1.0,
            rope_base: ROPE_BASE,
            seed: 0,
            precision: Precision::F64,
        }
    }

    /// Full-size architecture (D = 896, 4/2 blocks, 8 heads) for reference runs.
    pub fn full(variant: SupervisionVariant) -> Self {
        PolicyConfig { d_model: 896, predictor_blocks: 4, decoder_blocks: 2, heads: 8, ..Self::desk(variant) }
    }

    /// Small enough for exhaustive finite-difference checks.
    pub fn tiny(variant: SupervisionVariant) -> Self {
        PolicyConfig { d_model: 8, predictor_blocks: 1, decoder_blocks: 1, heads: 2, horizon: 3, ffn_mult: 2, ..Self::desk(variant) }
    }

    pub fn validate(&self) -> PolicyResult<()> {
        if self.schema != POLICY_SCHEMA {
            return Err(PolicyError::Config(format!("unknown schema {:?}", self.schema)));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(PolicyError::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if (self.d_model / self.heads) % 2 != 0 {
            return Err(PolicyError::Config("head dimension must be even for rotary embeddings".into()));
        }
        if self.horizon == 0 {
            return Err(PolicyError::Config("horizon must be >= 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(PolicyError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.ffn_mult == 0 || self.decoder_blocks == 0 {
            return Err(PolicyError::Config("ffn_mult and decoder_blocks must be >= 1".into()));
        }
        if self.variant.target != crate::datasets::TrajTarget::NoTraj && self.predictor_blocks == 0 {
            return Err(PolicyError::Config("trajectory variants need at least one predictor block".into()));
        }
        self.variant.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::TrajTarget;
    use crate::geometry::RotationChart;

    #[test]
    fn validation() {
        let v = SupervisionVariant::new(TrajTarget::TrajCameraSE3);
        PolicyConfig::desk(v).validate().unwrap();
        PolicyConfig::full(v).validate().unwrap();
        PolicyConfig::tiny(v).validate().unwrap();
        assert!(PolicyConfig { heads: 5, ..PolicyConfig::desk(v) }.validate().is_err());
        assert!(PolicyConfig { horizon: 0, ..PolicyConfig::desk(v) }.validate().is_err());
        assert!(PolicyConfig { lambda: -1.0, ..PolicyConfig::desk(v) }.validate().is_err());
        let bad = SupervisionVariant { rotation: RotationChart::Euler, ..SupervisionVariant::new(TrajTarget::Traj2D) };
        assert!(PolicyConfig::desk(bad).validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = PolicyConfig::desk(SupervisionVariant::new(TrajTarget::AuxTraj));
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("policy_cfg_v1"));
        assert_eq!(serde_json::from_str::<PolicyConfig>(&s).unwrap(), c);
    }
}
