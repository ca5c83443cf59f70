//! Two-stage training and evaluation: joint field and pose refinement,
//! random view synthesis, pose-regressor training and trajectory metrics.

mod eval;
mod rvs;
mod stage1;
mod stage2;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use eval::{evaluate, evaluate_with, lower_median, rotation_error_deg, umeyama_align, EvalReport, FrameError};
pub use rvs::{perturb_pose, rvs_generate, RvsConfig, SyntheticView};
pub use stage1::{stage1_train, Stage1Config, Stage1Result};
pub use stage2::{
    centroid_pose, regressor_input, stage2_train, RegressorModel, Stage2Config, Stage2Inputs, Stage2Result,
    TrainingFrame,
};

/// Components switched off for an ablation run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Freeze the log-scale block of every pose.
    pub sc: bool,
    /// Feed time code 0 to the field for every frame.
    pub te: bool,
    /// No synthesized views in stage 2.
    pub rvs: bool,
    /// No inter-frame term in stage 2.
    pub if_loss: bool,
}

impl Ablations {
    pub fn set(&mut self, name: &str) -> crate::Result<()> {
        match name {
            "sc" => self.sc = true,
            "te" => self.te = true,
            "rvs" => self.rvs = true,
            "if_loss" => self.if_loss = true,
            other => return crate::error::invalid(format!("unknown ablation '{other}'")),
        }
        Ok(())
    }
}

/// Field backend name and its options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSpec {
    pub backend: String,
    pub options: Value,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec {
            backend: "blob".into(),
            options: serde_json::json!({
                "center_jitter": 0.05,
                "log_amplitude_jitter": 0.1,
                "color_jitter": 0.05,
            }),
        }
    }
}
