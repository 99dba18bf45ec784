//! Planning of intermodal autonomous mobility-on-demand networks under
//! efficiency and commute-sufficiency objectives.
//!
//! Pipeline: [`netmodel`] and [`demand`] describe the instance,
//! [`assembler`] builds the convex program, [`solver`] solves it,
//! [`paths`] decomposes the optimal flows and [`metrics`] scores them.
//! [`scenarios`] ties the steps together and generates synthetic cities.

pub mod assembler;
pub mod demand;
pub mod metrics;
pub mod netmodel;
pub mod oracle;
pub mod paths;
pub mod scenarios;
pub mod solution;
pub mod solver;

/// Format tag written into every JSON artifact.
pub const FORMAT_VERSION: &str = "equiflow/1";

/// Rounds to 12 significant digits so serialized numbers are stable.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}
