//! RGB-T tracking with dynamic modality-aware filter generation.
//!
//! The crate is organized around the stages of the tracker:
//!
//! * [`backbone`] — shared convolutional encoder for visible and thermal frames.
//! * [`mfgnet`] — per-input prediction of modality-aware kernel banks and the
//!   dynamic (depthwise) convolution + residual fusion that applies them.
//! * [`cbam`] — channel-then-spatial attention refinement of backbone features.
//! * [`datanet`] — direction-aware global attention network: clip encoder,
//!   spatial/temporal recurrent sweeps, decoder to a full-frame attention map,
//!   and global proposal mining for re-detection.
//! * [`tracker`] — tracking-by-detection engine: Gaussian proposal sampling,
//!   RoI-aligned instance features, online classifier, losses, bounding-box
//!   regression, online updates with hard negative mining, and the
//!   local/global search switch.
//! * [`harness`] — synthetic RGB-T sequence generation, sequence I/O in the
//!   common benchmark layout, precision/success evaluation, and experiment
//!   drivers for the CLI.
//!
//! Everything runs on CPU in `f64`. The small reverse-mode autodiff engine
//! lives in [`graph`]; parameters are held in a flat name → tensor
//! [`nn::ParamStore`] which doubles as the checkpoint format.

pub mod backbone;
pub mod cbam;
pub mod config;
pub mod datanet;
pub mod geom;
pub mod graph;
pub mod harness;
pub mod imgutil;
pub mod mfgnet;
pub mod nn;
pub mod tracker;

mod error;

pub use config::Config;
pub use error::Error;
pub use geom::BoundingBox;

pub type Result<T> = std::result::Result<T, Error>;
