//! Exact computations with logarithmic F-bundles over truncated formal power
//! series.

pub mod coeff;
pub mod linalg;
pub mod series;
pub mod algebra;
pub mod connection;
pub mod pde;
pub mod decompose;
pub mod framing;
pub mod pointgauge;
pub mod quantum;
pub mod nacert;
pub mod cli;
