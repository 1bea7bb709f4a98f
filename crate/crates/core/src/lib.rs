pub mod baseline;
pub mod bounds;
pub mod error;
pub mod estimation;
pub mod lti;
pub mod recovery;

pub use error::{Result, SysIdError};
