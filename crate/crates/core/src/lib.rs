// SPDX-License-Identifier: Apache-2.0

//! Deterministic simulator of a mixed-signal ECU instrumented with digital and
//! analog boundary scan: on-line interconnect monitoring, indicator-circuit
//! rotation, analog-bus fault bypass and a test-loop timing model, driven by
//! scenario files with fault injection.

pub mod analog_fabric;
pub mod ecu_model;
pub mod harness;
pub mod idr;
pub mod measurement;
pub mod reconfigure;
pub mod signals;
pub mod tap_engine;
pub mod timing;
pub mod topology_manager;
