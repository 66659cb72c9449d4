//! Data pipeline: labels, raw recordings, preprocessing (windowing,
//! decimation, Haar features), CSV ingestion, synthetic generation, and
//! non-IID partitioning.

pub mod dataset;
pub mod decimate;
pub mod dwt;
pub mod features;
pub mod ingest;
pub mod labels;
pub mod recording;
pub mod synth;

pub use dataset::{partition_noniid, LabeledSet, PrivateShard, PublicDataset, UserId};
pub use decimate::{decimate, DEFAULT_TARGET_RATE};
pub use dwt::haar_approx;
pub use features::{feature_len, make_feature_window, FeatureWindow};
pub use ingest::{ingest_csv, CsvSchema, IngestReport, TimeUnit};
pub use labels::{ActivityLabel, LabelId, LabelSet};
pub use recording::{window, RawRecording, Segment, WINDOW_SECONDS};
pub use synth::{synth_generate, SynthParams};
