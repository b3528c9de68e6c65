//! Analytical roofline simulator for datacenter LLM inference.
//!
//! The crate is organised bottom-up: [`hardware`] describes memory devices and
//! nodes, [`workload`] turns a model and request into bytes and FLOPs,
//! [`interconnect`] prices collectives, [`roofline`] combines them into phase
//! timings, [`sharding`] searches parallelism plans, and [`cost`] turns time
//! and power into dollars and carbon. [`scenario`] ties it together behind a
//! single config format.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod hardware;
pub mod interconnect;
pub mod price_trends;
pub mod roofline;
pub mod scenario;
pub mod sharding;
pub mod units;
pub mod workload;
