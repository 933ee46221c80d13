//! Training-free keyframe selection.
//!
//! Frames are scored by how far their feature vector lands from a truncated
//! Taylor extrapolation of the preceding frames; the budgeted selection then
//! keeps the most surprising local maxima of that residual series.
//!
//! ```
//! use taylor_keyframes::{residual_series, select, FeatureSequence, SelectionRequest, Strategy, TaylorConfig};
//!
//! let values = [0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 10.0];
//! let seq = FeatureSequence::new(values.len(), 1, values.to_vec()).unwrap();
//! let r = residual_series(&seq, TaylorConfig::new(1).unwrap()).unwrap();
//! let picked = select(&SelectionRequest::new(1, Strategy::SwiftLocalMax), &r, None).unwrap();
//! assert_eq!(picked.indices, vec![3]);
//! ```

pub mod cli;
pub mod error;
pub mod io;
pub mod selection;
pub mod taylor;
pub mod trajectory;

pub use error::{Error, Result};
pub use io::{read_trajectory, write_trajectory, SelectionReport, Trajectory};
pub use selection::{select, SelectionRequest, SelectionResult, Strategy};
pub use taylor::{residual_series, surprise, ResidualSeries, SurpriseParams, TaylorConfig};
pub use trajectory::{
    gen_synthetic, pool_tokens, FeatureSequence, PoolConfig, PoolSpec, RegionSequence, SurpriseEvent, SynthSpec,
    TokenGridSequence,
};
