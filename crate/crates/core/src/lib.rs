//! Semantic-agnostic composition conditions.
//!
//! An image's composition is modelled as two maps that carry layout but
//! little semantics:
//!
//! * a spatial-structure map ([`structure`]): the Lab-space distance between
//!   a local box mean and a Gaussian blur of the same window, and
//! * a color-distribution map ([`colordist`]): heavy blur followed by SLIC
//!   superpixels painted with their mean color.
//!
//! Both are packaged with masks, re-weighting coefficients and full
//! extraction provenance as a [`condition::ConditionBundle`], the unit that
//! is saved, mixed, masked and compared ([`metrics`]). The [`planner`]
//! picks a composition reference for a text theme from an embedding index
//! with the help of a vision-language model endpoint, and [`batch`] runs
//! extraction over whole corpora.

pub mod batch;
pub mod colordist;
pub mod colorspace;
pub mod condition;
pub mod filtering;
pub mod imageio;
pub mod metrics;
pub mod planner;
pub mod resample;
pub mod structure;

pub use colordist::{ColorDistMap, Segmentation, SlicParams};
pub use colorspace::{LabImage, RgbImage};
pub use condition::{ConditionBundle, ConditionWeights, Mask};
pub use filtering::{GaussianKernel, KernelSchedule};
pub use metrics::DistanceReport;
pub use structure::SaliencyMap;

/// Version string recorded in bundle provenance.
pub const TOOL_VERSION: &str = concat!("compcond ", env!("CARGO_PKG_VERSION"));
