// SPDX-License-Identifier: Apache-2.0

//! Scenario files, the event-driven simulator, its CSV log and run summaries.

pub mod log;
pub mod report;
pub mod scenario;
pub mod sim;
