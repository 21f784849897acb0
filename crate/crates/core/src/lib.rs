pub mod error;
pub mod operator;
pub mod signal;
pub mod model;
pub mod forward;
pub mod noise;
pub mod invertibility;
pub mod derivative;
pub mod inversion;
pub mod baseline;
pub mod io;
pub mod scenario;

pub use error::{Error, Result};
pub use forward::{simulate, IntegratorConfig, Trajectory};
pub use invertibility::{transform_observables, InvertibilityVerdict, RelativeDegree};
pub use inversion::{invert, InversionConfig, InversionReport};
pub use model::{Coefficient, ProbeModel};
pub use operator::{DensityState, GeneratorTerm, Operator};
pub use signal::{MeasurementRecord, SignalSpec, TimeSeries};
