//! Scenario configuration, the per-drone agent loop, the simulation runner
//! and run reports.

mod agent;
mod config;
mod report;
mod run;

pub use agent::{Agent, IdentEvent, ReacqEvent, ScanOutcome};
pub use config::{
    ConfigError, DroneConfig, ImuSpec, Mode, OutputSpec, Preset, ScenarioConfig, SensorPreset, WorldSpec,
};
pub use report::{
    compute_extrinsic_error, compute_rmse, csv_header, EmptyInput, csv_line, BusSummary, CsvRow, DroneReport, ExtrinsicReport,
    ExtrinsicSample, IdentRecord, ReacqRecord, RunReport, TimingStats, SCHEMA_VERSION,
};
pub use run::{run, RunError, RunOutput};
