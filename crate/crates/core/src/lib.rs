//! Centerline reconstruction of thin, textureless threads from a calibrated
//! stereo pair and binary segmentations.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`stereo`]: window-SSD disparity search restricted to the left mask,
//!    with a reliability score per pixel.
//! 2. [`keypoints`]: clustering of reliable pixels into keypoints and
//!    ordering them along the thread.
//! 3. [`mvs`]: a degree-4 B-spline fitted to the ordered keypoints whose
//!    depth profile is smoothed by a constrained minimum-variation solve.
//!
//! [`synth`] renders synthetic threads with ground truth and [`metrics`]
//! scores reconstructions against it. [`pipeline`] ties it all together
//! behind a file-based interface.

pub mod bspline;
pub mod edt;
pub mod io;
pub mod keypoints;
pub mod metrics;
pub mod mvs;
pub mod pipeline;
pub mod qp;
pub mod quadrature;
pub mod raster;
pub mod stereo;
pub mod synth;

pub use bspline::{Frame, SplineCurve};
pub use keypoints::{select_keypoints, ClusterParams, KeypointChain};
pub use mvs::{fit_centerline, FitParams};
pub use pipeline::{reconstruct, PipelineConfig, Reconstruction};
pub use raster::{Gray8, Pixel, PixelMask};
pub use stereo::{depth_map, MatchParams, StereoRig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/splines.md")]
    mod splines {}
    #[doc = include_str!("../../../book/src/stereo.md")]
    mod stereo {}
    #[doc = include_str!("../../../book/src/keypoints.md")]
    mod keypoints {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
