//! Background subtraction for a single forward-moving camera.
//!
//! Per frame pair: track sparse features with pyramidal Lucas-Kanade,
//! estimate the Focus of Expansion by least-squares line intersection with
//! leave-one-out outlier rejection, simulate the ground-plane flow field seen
//! from that FOE, fit a planar magnitude model `y = β + β1·x1 + β2·x2` to it,
//! and label each real vector as an outlier, static background, or moving.

pub mod camera;
pub mod flow;
pub mod foe;
pub mod regression;
pub mod pipeline;
pub mod synth;
