use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_juicer, ArmConfig, PipelineConfig, RunInputs};
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub f1: f64,
    pub perplexity: Option<f64>,
    pub good_rate: f64,
}

/// One baseline run per sampling rate, each under `out_dir/rate_<r>`.
pub fn sampling_rate_sweep(rates: &[f64], cfg: &PipelineConfig, inputs: &RunInputs, out_dir: &Path) -> Result<Vec<SweepRow>> {
    if let Some(r) = rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(CoreError::InvalidParams(format!("sampling rate {r} outside (0, 1]")));
    }
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let run_cfg = PipelineConfig {
            sample_rate: rate,
            arms: vec![ArmConfig::baseline()],
            corrector_ablations: false,
            ..cfg.clone()
        };
        let report = run_juicer(&run_cfg, inputs, &out_dir.join(format!("rate_{rate}")))?;
        let arm = &report.metrics.arms[0];
        rows.push(SweepRow {
            rate,
            f1: arm.test.f1,
            perplexity: arm.test.perplexity,
            good_rate: arm.test.good_rate,
        });
    }
    Ok(rows)
}
