//! Benchmark fixtures shared by the criterion targets.

use mrac_core::{DisturbanceSchedule, ExperimentConfig, PlantModel};

/// Case-1 preset, optionally shortened to `steps`.
pub fn case1(steps: Option<usize>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("case1").expect("embedded preset");
    if let Some(n) = steps {
        cfg.experiment.steps = n;
    }
    cfg
}

/// The aircraft model and its three-segment schedule.
pub fn aircraft() -> (PlantModel, DisturbanceSchedule) {
    (
        PlantModel::aircraft(),
        DisturbanceSchedule::aircraft_case2(),
    )
}
