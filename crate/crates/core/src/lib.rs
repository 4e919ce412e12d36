//! Dual-branch segmentation network for infrared small targets.
//!
//! The main branch encodes the raw frame over five scales; a supplementary
//! branch lifts the gradient-magnitude pyramid into feature space and
//! injects it at every scale ([`gsm`]). Local contrast learning ([`lcl`])
//! sharpens each scale before a top-down decoder fuses neighbouring scales
//! with mutual channel and spatial guidance ([`tgfm`]).
//!
//! Everything runs on the CPU with a small reverse-mode autodiff
//! ([`autograd`], [`ops`]) generic over `f32` and `f64`.
//!
//! The examples are the main entry points:
//!
//! | example      | shows                                            |
//! |--------------|--------------------------------------------------|
//! | `gradient`   | gradient magnitude and the pooled pyramid        |
//! | `synth`      | synthetic dataset generation, on-disk layout     |
//! | `variants`   | all 13 ablation variants, parameter counts       |
//! | `overfit`    | fitting a single frame                           |
//! | `toy_train`  | training and per-epoch evaluation                |
//! | `metrics`    | IoU, nIoU, Pd and Fa                             |
//! | `roc`        | threshold sweep, CSV and PNG projections         |
//! | `checkpoint` | saving and reloading weights with architecture   |
//! | `ablation`   | the ablation driver behind `gglnet ablate`       |

pub mod autograd;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gsm;
pub mod lcl;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod plot;
pub mod preprocess;
pub mod tensor;
pub mod tgfm;
pub mod train;
