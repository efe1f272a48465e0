//! Simulated end-to-end runtime: data loading, the background-load and telemetry
//! model, frame streams, and the per-frame plan → generate → execute → decide loop.

mod config;
mod host;
mod idx;
mod run;
mod sim;
mod stream;

pub use config::{DatasetConfig, PlannerConfig, SardinoConfig};
pub use host::{host_telemetry, measure_ensemble_ms, read_cpu_times, CpuTimes};
pub use idx::{encode_idx, load_idx, parse_idx_images, parse_idx_labels, Dataset};
pub use run::{run_pipeline, split_seed_for, CropOutcome, FrameRecord, LoadLaw, PipelineConfig, RunMetrics};
pub use sim::{
    collect_profile, simulate_telemetry, simulated_latency, split_profile, BackgroundLoadModel, OraclePredictor, ProfileGrid,
    LATENCY_FLOOR_MS,
};
pub use stream::{inject_stream, CountLaw, Crop, CropTag, DetectorLaw, FrameEvent, FramePreset, MixRatios, StreamConfig};
