pub mod ablation;
pub mod coco;
pub mod encode;
pub mod error;
pub mod eval;
pub mod field;
pub mod kdcf;
pub mod losses;
pub mod pipeline;
pub mod pose;
pub mod rle;
pub mod seg;
pub mod scene;
pub mod skeleton;

pub use error::{KdcError, Result};
