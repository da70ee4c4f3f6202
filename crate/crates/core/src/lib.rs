//! Event-camera anomaly detection.
//!
//! Event streams are binned into volumes, compressed by a small 1x1
//! encoder-decoder into a single "memory surface" image, and a conditional
//! GAN with two discriminators predicts the next event frame from that
//! surface. Frames whose prediction error is high are flagged as anomalous.

pub mod cli;
pub mod config;
pub mod events;
pub mod gan;
pub mod msnet;
pub mod oracle;
pub mod pipeline;
pub mod repr;
pub mod synth;
pub mod tensor;
