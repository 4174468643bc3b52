//! Curve fits and recurrence detection on entropy traces.

mod fit;
mod period;
mod sweep;

pub use fit::{
    fit_linear, fit_saturation, plateau_end, r_squared, saturation_jacobian, saturation_model, stationarity, LinearFit,
    SaturationFit, SaturationOptions,
};
pub use period::{detect_period, PeriodDetector, PeriodOutcome, PeriodResult, DEFAULT_EPSILON};
pub use sweep::{sweep, sweep_csv, Family, SweepPoint, SweepRow, SweepSettings, SWEEP_COLUMNS};
