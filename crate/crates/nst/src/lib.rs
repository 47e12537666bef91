//! Neural style transfer: the pipeline's teacher. A stylized image starts as
//! a clone of the source (content) image and its pixels are optimized to
//! match the source's features and the target's Gram statistics.

pub mod extractor;
pub mod factory;
pub mod loss;
pub mod run;

pub use extractor::{ConvStyleExtractor, StyleExtractor};
pub use factory::{generate_transferred_set, GenerateOutcome};
pub use loss::{content_loss, style_loss, total_loss};
pub use run::{run_nst, run_nst_traced, NstConfig, NstError, NstOutcome, PrecisionMode};

pub type Result<T> = std::result::Result<T, NstError>;
