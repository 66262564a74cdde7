pub mod belief;
pub mod canprop;
pub mod contraction;
pub mod error;
pub mod metric;
pub mod oracle;
pub mod trajectory;
pub mod tst;

pub use canprop::{Cbnn, LearnerConfig, TrialRecord};
pub use error::{Error, Result};
