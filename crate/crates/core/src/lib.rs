//! CSI amplitude recomposition from beamforming feedback matrices and camera images.
//!
//! Pipeline: [`sim`] synthesizes synchronized (CSI, image) pairs, [`bfm`] emulates the
//! feedback matrices by per-subcarrier SVD, [`preprocess`] builds model-ready tensors,
//! [`model`] defines the multimodal and single-modal networks on top of the [`nn`]
//! engine, [`train`] runs the seeded training protocol, [`metrics`] scores runs and
//! [`store`] persists datasets and checkpoints. [`report`] renders the multi-seed
//! comparison table and [`nn::check`] verifies the hand-written gradients.

pub mod bfm;
pub mod cmat;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod sim;
pub mod store;
pub mod train;
