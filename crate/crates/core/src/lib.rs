//! Shape-descriptor segmentation engine.
//!
//! The pipeline turns binary annotation masks into per-pixel Fourier
//! descriptor maps, trains a cascaded regression-then-classification
//! encoder-decoder network on images and those maps, and evaluates the
//! resulting segmentations down to nine-sector macular grid statistics.
//!
//! Module map:
//!
//! * [`mask`] - binary masks, connected components, boundary tracing.
//! * [`fourier`] - distance-to-center Fourier descriptors on contours,
//!   with an independent quadrature oracle.
//! * [`maps`] - per-pixel descriptor maps via iterative contour peeling.
//! * [`autodiff`] - a minimal reverse-mode tape with exactly the layer set
//!   the networks need, plus the AdaDelta optimizer and checkpointing.
//! * [`model`] - the cascaded network, joint loss, training loop, and the
//!   descriptor-count sweep experiment.
//! * [`synth`] - synthetic OCT-like image/mask dataset generation.
//! * [`eval`] - thresholding, column postprocessing, pixel metrics, and
//!   grid-based volume/thickness analysis.
//! * [`io`] - PGM, descriptor-map (FDM), and CSV file formats.

pub mod autodiff;
pub mod eval;
pub mod fourier;
pub mod io;
pub mod maps;
pub mod mask;
pub mod model;
pub mod synth;

pub use fourier::{descriptor_set, fourier_coefficients, fourier_coefficients_quadrature};
pub use maps::{generate_descriptor_maps, map_error, DescriptorMap};
pub use mask::{connected_components, trace_contour, BinaryMask, Connectivity, Contour};
