//! Oracles shared by the focused test files and the acceptance harness.
#![allow(dead_code)]

pub mod flow;
pub mod grads;
pub mod props;
pub mod schedule;
