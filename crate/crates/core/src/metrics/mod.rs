//! Safety metrics computed from prediction logs.

pub mod calibration;
pub mod consistency;
pub mod corruption;
pub mod detection;
pub mod records;
pub mod report;
pub mod synthetic;

pub use calibration::{default_bins, rms_calibration_error};
pub use consistency::{flip_rate, mfr, mt5d, t5d, ConsistencyReport};
pub use corruption::{classification_error, mce, CorruptionReport, Normalizers};
pub use detection::{aupr, auroc, msp_score};
pub use records::{argmax, ingest_predictions, softmax, validate, PredictionRecord, Tags};
pub use report::{evaluate, EvalReport};
pub use synthetic::{gen_synthetic_anomalies, synthetic_anomaly, AnomalyKind};
