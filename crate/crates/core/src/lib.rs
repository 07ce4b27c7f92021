//! Online unsupervised anomaly detection for nonstationary data streams.
//!
//! The engine combines an ensemble of incrementally trained variational
//! autoencoders (anomaly predictors) with an ensemble of rank-based
//! statistical drift detectors. Instances arrive one by one; each step the
//! engine predicts, tests for distribution change, and periodically
//! fine-tunes its members on a sliding window of recent data. A confirmed
//! drift (detector vote) discards the models and retrains replacements from
//! a warning buffer collected while the drift was building up.
//!
//! Crate layout:
//!
//! - [`nn`]: dense MLP substrate (forward/backward, He init, Adam, losses)
//! - [`vae`]: variational autoencoder built on [`nn`]
//! - [`window`]: fixed-capacity sliding / freeze-on-fill windows
//! - [`drift`]: Mann-Whitney U drift detector over reconstruction losses
//! - [`ensemble`]: the two-level voting engine
//! - [`stream`]: synthetic drifting-stream generators and a CSV loader
//! - [`eval`]: prequential metrics (fading recall/specificity/G-mean, PAUC)
//! - [`config`]: experiment configuration (JSON)
//! - [`runner`]: repetition driver, trace/summary/timing outputs

pub mod config;
pub mod drift;
pub mod ensemble;
pub mod eval;
pub mod nn;
pub mod runner;
pub mod stream;
pub mod vae;
pub mod window;

pub use config::ExperimentConfig;
pub use ensemble::{Engine, StepOutput};
pub use stream::Instance;
