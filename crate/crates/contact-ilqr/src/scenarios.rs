//! Scenario configurations.

pub struct ScenarioConfig;
