//! Detection of exogenous intensity bursts in Hawkes-process event data.

pub mod detector;
pub mod error;
pub mod fit;
pub mod io;
pub mod jumps;
pub mod kernel;
pub mod likelihood;
pub mod mc;
pub mod model;
pub mod optim;
pub mod preid;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use fit::{extend_fit, fit, fit_base, optimize_z, FitConfig, KernelFamily, SearchWindow};
pub use kernel::{ExpMixture, KernelSpec};
pub use model::{BurstTerm, EventSeries, ModelFit};
pub use simulate::{simulate, SimScenario};
pub use detector::{detect, DetectionReport, DetectorConfig};
pub use preid::{CandidateWindow, PreIdConfig};
