//! Combined pipeline configuration, one section per stage.

use serde::{Deserialize, Serialize};

use crate::eval::EvalConfig;
use crate::miner::ScreeningConfig;
use crate::refine::RefineConfig;
use crate::stabilize::StabilizerConfig;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Frame period (s), shared by every stage.
    pub dt: f64,
    pub tracker: TrackerConfig,
    pub refine: RefineConfig,
    pub stabilizer: StabilizerConfig,
    pub miner: ScreeningConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dt: 0.1,
            tracker: TrackerConfig::default(),
            refine: RefineConfig::default(),
            stabilizer: StabilizerConfig::default(),
            miner: ScreeningConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Copies the shared frame period into every stage section.
    pub fn normalized(mut self) -> Self {
        self.stabilizer.dt = self.dt;
        self.miner.dt = self.dt;
        self.eval.dt = self.dt;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err("dt must be > 0".into());
        }
        self.tracker.validate().map_err(|e| e.to_string())?;
        self.refine.validate()?;
        self.stabilizer.validate()?;
        self.miner.validate().map_err(|e| e.to_string())?;
        self.eval.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}
