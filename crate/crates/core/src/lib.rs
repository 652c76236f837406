//! Distribution-free threshold calibration for pixel-level binary score maps.
//!
//! * [`crc_binary`] picks a threshold whose expected false-negative rate on
//!   exchangeable test data is at most `alpha`.
//! * [`crc_threeway`] widens it into SAFE / MONITOR / EVACUATE zones that stay
//!   valid under a declared range of prevalence shift.
//! * [`metrics`] and [`bootstrap`] score a threshold on held-out data.
//! * [`synth`] is a bi-normal score generator with closed-form predictions,
//!   used to check the guarantees by simulation.
//!
//! Pixels labelled no-data are ignored everywhere.

pub mod bootstrap;
pub mod cli;
pub mod crc_binary;
pub mod crc_threeway;
pub mod domain;
pub mod error;
pub mod io;
pub mod metrics;
pub mod synth;

pub use crate::domain::{
    CalibrationResult, CostSpec, MetricInterval, MetricsReport, PixelLabel, Prevalence,
    QuantileRule, RiskSpec,
    ScoreMap, ScoreMapSet, ShiftInterval, Zone, ZoneThresholds,
};
pub use crate::error::{Error, ErrorClass, Result};
