pub mod bench;
pub mod error;
pub mod fem;
pub mod field;
pub mod mesh;
pub mod prox;
pub mod sim;
pub mod tikhonov;
pub mod transfer;
pub mod tv;

pub use error::{Error, Result};
pub use field::SpaceTimeField;
