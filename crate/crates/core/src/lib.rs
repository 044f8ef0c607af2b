#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adapter;
pub mod aggregation;
pub mod floor;
pub mod geom;
pub mod geoqa;
pub mod grounder;
pub mod losses;
pub mod metrics;
pub mod panorama;
pub mod placement;
pub mod scene;
pub mod spatial;
pub mod synth;
